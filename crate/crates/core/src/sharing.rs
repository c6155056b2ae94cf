//! n-of-n additive secret sharing over `Z_M` and XOR sharing over `Z_2`.

use std::fmt;

use rand::Rng;

use crate::codec::{ByteReader, ByteWriter};
use crate::error::{contract, Error, Result};
use crate::ring::{RingElement, RingModulus};

/// Magic prefix of a serialized share container.
pub const SHARE_MAGIC: [u8; 4] = *b"OBSH";
pub const SHARE_VERSION: u16 = 1;

/// Index of one party among `count` parties.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PartyId {
    index: u8,
    count: u8,
}

impl PartyId {
    pub fn new(index: usize, count: usize) -> Result<Self> {
        if !(2..=255).contains(&count) {
            return Err(contract(format!("party count must be in 2..=255, got {count}")));
        }
        if index >= count {
            return Err(contract(format!("party index {index} out of range for {count} parties")));
        }
        Ok(PartyId {
            index: index as u8,
            count: count as u8,
        })
    }

    #[inline]
    pub fn index(self) -> usize {
        self.index as usize
    }

    /// Total number of parties `n` in the sharing.
    #[inline]
    pub fn count(self) -> usize {
        self.count as usize
    }

    /// Party 0 is the one that adds public constants.
    #[inline]
    pub fn is_leader(self) -> bool {
        self.index == 0
    }

    pub fn all(count: usize) -> Result<Vec<PartyId>> {
        (0..count).map(|i| PartyId::new(i, count)).collect()
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "party {}/{}", self.index, self.count)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SessionId(pub u64);

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

/// One party's share of a ring element.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ArithShare {
    pub element: RingElement,
    pub party: PartyId,
    pub session: SessionId,
}

/// One party's XOR share of a bit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoolShare {
    pub bit: bool,
    pub party: PartyId,
    pub session: SessionId,
}

/// One party's shares of a vector, componentwise.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShareVector {
    modulus: RingModulus,
    party: PartyId,
    session: SessionId,
    values: Vec<u64>,
}

impl ShareVector {
    pub fn new(modulus: RingModulus, party: PartyId, session: SessionId, mut values: Vec<u64>) -> Self {
        for v in &mut values {
            *v = modulus.reduce(*v);
        }
        ShareVector {
            modulus,
            party,
            session,
            values,
        }
    }

    /// Every party holding zero is a valid sharing of the zero vector.
    pub fn zeros(modulus: RingModulus, party: PartyId, session: SessionId, len: usize) -> Self {
        ShareVector {
            modulus,
            party,
            session,
            values: vec![0; len],
        }
    }

    pub fn modulus(&self) -> RingModulus {
        self.modulus
    }

    pub fn party(&self) -> PartyId {
        self.party
    }

    pub fn session(&self) -> SessionId {
        self.session
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[u64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<u64> {
        self.values
    }

    pub fn get(&self, index: usize) -> ArithShare {
        ArithShare {
            element: RingElement::new(self.values[index], self.modulus),
            party: self.party,
            session: self.session,
        }
    }

    pub fn from_share(share: ArithShare) -> Self {
        ShareVector {
            modulus: share.element.modulus(),
            party: share.party,
            session: share.session,
            values: vec![share.element.value()],
        }
    }

    pub(crate) fn write_to(&self, w: &mut ByteWriter) {
        write_header(w, self.modulus, self.party, self.session, &[self.values.len()]);
        w.put_ring_values(self.modulus, &self.values);
    }

    pub(crate) fn read_from(r: &mut ByteReader<'_>) -> Result<Self> {
        let header = read_header(r)?;
        if header.dims.len() != 1 {
            return Err(Error::Format(format!("expected a rank-1 share container, found rank {}", header.dims.len())));
        }
        let values = r.get_ring_values(header.modulus, header.dims[0])?;
        Ok(ShareVector {
            modulus: header.modulus,
            party: header.party,
            session: header.session,
            values,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::with_capacity(24 + self.values.len() * self.modulus.byte_width());
        self.write_to(&mut w);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let v = Self::read_from(&mut r)?;
        r.finish()?;
        Ok(v)
    }
}

/// One party's shares of a row-major matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShareMatrix {
    modulus: RingModulus,
    party: PartyId,
    session: SessionId,
    rows: usize,
    cols: usize,
    values: Vec<u64>,
}

impl ShareMatrix {
    pub fn new(
        modulus: RingModulus,
        party: PartyId,
        session: SessionId,
        rows: usize,
        cols: usize,
        mut values: Vec<u64>,
    ) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                values.len()
            )));
        }
        for v in &mut values {
            *v = modulus.reduce(*v);
        }
        Ok(ShareMatrix {
            modulus,
            party,
            session,
            rows,
            cols,
            values,
        })
    }

    pub fn modulus(&self) -> RingModulus {
        self.modulus
    }

    pub fn party(&self) -> PartyId {
        self.party
    }

    pub fn session(&self) -> SessionId {
        self.session
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[u64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[u64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub(crate) fn write_to(&self, w: &mut ByteWriter) {
        write_header(w, self.modulus, self.party, self.session, &[self.rows, self.cols]);
        w.put_ring_values(self.modulus, &self.values);
    }

    pub(crate) fn read_from(r: &mut ByteReader<'_>) -> Result<Self> {
        let header = read_header(r)?;
        if header.dims.len() != 2 {
            return Err(Error::Format(format!("expected a rank-2 share container, found rank {}", header.dims.len())));
        }
        let (rows, cols) = (header.dims[0], header.dims[1]);
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format("matrix dimensions overflow".into()))?;
        let values = r.get_ring_values(header.modulus, count)?;
        Ok(ShareMatrix {
            modulus: header.modulus,
            party: header.party,
            session: header.session,
            rows,
            cols,
            values,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::with_capacity(28 + self.values.len() * self.modulus.byte_width());
        self.write_to(&mut w);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let m = Self::read_from(&mut r)?;
        r.finish()?;
        Ok(m)
    }
}

struct ShareHeader {
    modulus: RingModulus,
    party: PartyId,
    session: SessionId,
    dims: Vec<usize>,
}

fn write_header(w: &mut ByteWriter, modulus: RingModulus, party: PartyId, session: SessionId, dims: &[usize]) {
    w.put_bytes(&SHARE_MAGIC)
        .put_u16(SHARE_VERSION)
        .put_u8(modulus.bits() as u8)
        .put_u8(party.count() as u8)
        .put_u8(party.index() as u8)
        .put_u8(dims.len() as u8)
        .put_u16(0)
        .put_u64(session.0);
    for &d in dims {
        w.put_u32(d as u32);
    }
}

fn read_header(r: &mut ByteReader<'_>) -> Result<ShareHeader> {
    if r.take(4)? != SHARE_MAGIC {
        return Err(Error::Format("bad share container magic".into()));
    }
    let version = r.get_u16()?;
    if version != SHARE_VERSION {
        return Err(Error::Format(format!("unsupported share container version {version}")));
    }
    let modulus = RingModulus::new(r.get_u8()? as u32).map_err(|e| Error::Format(e.to_string()))?;
    let count = r.get_u8()? as usize;
    let index = r.get_u8()? as usize;
    let rank = r.get_u8()? as usize;
    let _reserved = r.get_u16()?;
    let session = SessionId(r.get_u64()?);
    let party = PartyId::new(index, count).map_err(|e| Error::Format(e.to_string()))?;
    if !(1..=2).contains(&rank) {
        return Err(Error::Format(format!("unsupported share container rank {rank}")));
    }
    let dims = (0..rank).map(|_| r.get_u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    Ok(ShareHeader {
        modulus,
        party,
        session,
        dims,
    })
}

/// Splits each value into `n` additive shares: parties `1..n` draw uniformly,
/// party 0 takes the remainder. Returns one vector per party.
fn split<R: Rng + ?Sized>(modulus: RingModulus, values: &[u64], n: usize, rng: &mut R) -> Vec<Vec<u64>> {
    let mut parts = vec![Vec::with_capacity(values.len()); n];
    for &x in values {
        let mut rest = modulus.reduce(x);
        for part in parts.iter_mut().skip(1) {
            let r = modulus.reduce(rng.random());
            rest = modulus.sub(rest, r);
            part.push(r);
        }
        parts[0].push(rest);
    }
    parts
}

fn check_count(n: usize) -> Result<()> {
    if n < 2 {
        return Err(contract(format!("sharing needs at least 2 parties, got {n}")));
    }
    Ok(())
}

/// Checks that `parties` is exactly `{0, …, n-1}` for the `n` they declare.
fn check_complete(parties: impl Iterator<Item = PartyId> + Clone) -> Result<()> {
    let mut iter = parties.clone();
    let first = iter.next().ok_or_else(|| contract("no shares to reconstruct"))?;
    let n = first.count();
    let mut seen = vec![false; n];
    let mut total = 0;
    for p in parties {
        if p.count() != n {
            return Err(contract("shares disagree on the party count"));
        }
        if std::mem::replace(&mut seen[p.index()], true) {
            return Err(contract(format!("duplicate share from {p}")));
        }
        total += 1;
    }
    if total != n {
        let missing: Vec<usize> = (0..n).filter(|&i| !seen[i]).collect();
        return Err(contract(format!("missing shares from parties {missing:?}")));
    }
    Ok(())
}

fn check_sessions(mut sessions: impl Iterator<Item = SessionId>) -> Result<()> {
    if let Some(first) = sessions.next() {
        if let Some(other) = sessions.find(|s| *s != first) {
            return Err(Error::SessionMismatch {
                expected: first.0,
                found: other.0,
            });
        }
    }
    Ok(())
}

/// Shares `x` among `n` parties.
pub fn share<R: Rng + ?Sized>(x: RingElement, n: usize, session: SessionId, rng: &mut R) -> Result<Vec<ArithShare>> {
    check_count(n)?;
    let modulus = x.modulus();
    let parts = split(modulus, &[x.value()], n, rng);
    PartyId::all(n)?
        .into_iter()
        .zip(parts)
        .map(|(party, part)| {
            Ok(ArithShare {
                element: RingElement::new(part[0], modulus),
                party,
                session,
            })
        })
        .collect()
}

/// Sums all `n` shares.
pub fn reconstruct(shares: &[ArithShare]) -> Result<RingElement> {
    check_complete(shares.iter().map(|s| s.party))?;
    check_sessions(shares.iter().map(|s| s.session))?;
    let modulus = shares[0].element.modulus();
    shares.iter().try_fold(RingElement::zero(modulus), |acc, s| acc.add(s.element))
}

/// XOR-shares a bit among `n` parties.
pub fn share_bool<R: Rng + ?Sized>(bit: bool, n: usize, session: SessionId, rng: &mut R) -> Result<Vec<BoolShare>> {
    check_count(n)?;
    let mut rest = bit;
    let mut others = Vec::with_capacity(n - 1);
    for _ in 1..n {
        let r: bool = rng.random();
        rest ^= r;
        others.push(r);
    }
    let parties = PartyId::all(n)?;
    Ok(std::iter::once(rest)
        .chain(others)
        .zip(parties)
        .map(|(bit, party)| BoolShare { bit, party, session })
        .collect())
}

pub fn reconstruct_bool(shares: &[BoolShare]) -> Result<bool> {
    check_complete(shares.iter().map(|s| s.party))?;
    check_sessions(shares.iter().map(|s| s.session))?;
    Ok(shares.iter().fold(false, |acc, s| acc ^ s.bit))
}

/// Shares a vector componentwise; element `i` of party `p`'s vector is
/// party `p`'s share of `values[i]`.
pub fn share_vector<R: Rng + ?Sized>(
    modulus: RingModulus,
    values: &[u64],
    n: usize,
    session: SessionId,
    rng: &mut R,
) -> Result<Vec<ShareVector>> {
    check_count(n)?;
    if values.is_empty() {
        return Err(Error::Shape("cannot share an empty vector".into()));
    }
    let parts = split(modulus, values, n, rng);
    Ok(PartyId::all(n)?
        .into_iter()
        .zip(parts)
        .map(|(party, values)| ShareVector {
            modulus,
            party,
            session,
            values,
        })
        .collect())
}

pub fn reconstruct_vector(shares: &[ShareVector]) -> Result<Vec<u64>> {
    check_complete(shares.iter().map(|s| s.party))?;
    check_sessions(shares.iter().map(|s| s.session))?;
    let modulus = shares[0].modulus;
    let len = shares[0].len();
    for s in shares {
        modulus.check_same(s.modulus)?;
        if s.len() != len {
            return Err(Error::Shape(format!("share lengths differ: {len} vs {}", s.len())));
        }
    }
    Ok((0..len)
        .map(|i| shares.iter().fold(0u64, |acc, s| modulus.add(acc, s.values[i])))
        .collect())
}

/// Shares a row-major `rows x cols` matrix componentwise.
pub fn share_matrix<R: Rng + ?Sized>(
    modulus: RingModulus,
    rows: usize,
    cols: usize,
    values: &[u64],
    n: usize,
    session: SessionId,
    rng: &mut R,
) -> Result<Vec<ShareMatrix>> {
    check_count(n)?;
    if rows == 0 || cols == 0 {
        return Err(Error::Shape(format!("cannot share an empty {rows}x{cols} matrix")));
    }
    if values.len() != rows * cols {
        return Err(Error::Shape(format!("{} values for a {rows}x{cols} matrix", values.len())));
    }
    let parts = split(modulus, values, n, rng);
    Ok(PartyId::all(n)?
        .into_iter()
        .zip(parts)
        .map(|(party, values)| ShareMatrix {
            modulus,
            party,
            session,
            rows,
            cols,
            values,
        })
        .collect())
}

pub fn reconstruct_matrix(shares: &[ShareMatrix]) -> Result<Vec<u64>> {
    check_complete(shares.iter().map(|s| s.party))?;
    check_sessions(shares.iter().map(|s| s.session))?;
    let first = &shares[0];
    for s in shares {
        first.modulus.check_same(s.modulus)?;
        if (s.rows, s.cols) != (first.rows, first.cols) {
            return Err(Error::Shape("share matrices differ in shape".into()));
        }
    }
    let modulus = first.modulus;
    Ok((0..first.values.len())
        .map(|i| shares.iter().fold(0u64, |acc, s| modulus.add(acc, s.values[i])))
        .collect())
}
