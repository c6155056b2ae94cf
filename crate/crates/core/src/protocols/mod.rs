//! Interactive primitives over additive shares: local linear operations,
//! Beaver multiplication, boolean circuit evaluation, share conversion,
//! comparison and the half-range test.
//!
//! Every operation works on whole vectors so that all multiplications of one
//! step travel in a single message; the scalar forms wrap the vector forms.

mod boolean;

use crate::bits::Bits;
use crate::codec::{ByteReader, ByteWriter};
use crate::dealer::TripleStore;
use crate::error::{Error, Result};
use crate::net::wire::{MessageKind, HEADER_LEN};
use crate::ring::{RingElement, RingModulus};
use crate::sharing::{ArithShare, BoolShare, PartyId, SessionId, ShareVector};

/// Lock-step all-to-all exchange between the computing parties.
pub trait PeerChannel: Send {
    fn party(&self) -> PartyId;

    /// Sends `payload` to every peer and returns every party's payload for this
    /// round, indexed by party (the own slot holds `payload`).
    fn exchange(&mut self, kind: MessageKind, session: SessionId, round: u32, payload: Vec<u8>) -> Result<Vec<Vec<u8>>>;
}

impl<C: PeerChannel + ?Sized> PeerChannel for &mut C {
    fn party(&self) -> PartyId {
        (**self).party()
    }

    fn exchange(&mut self, kind: MessageKind, session: SessionId, round: u32, payload: Vec<u8>) -> Result<Vec<Vec<u8>>> {
        (**self).exchange(kind, session, round, payload)
    }
}

/// Communication counters of one party.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CommStats {
    pub rounds: u64,
    pub messages_sent: u64,
    pub payload_bytes_sent: u64,
    /// Bytes sent including frame headers.
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

impl CommStats {
    pub fn since(&self, earlier: &CommStats) -> CommStats {
        CommStats {
            rounds: self.rounds - earlier.rounds,
            messages_sent: self.messages_sent - earlier.messages_sent,
            payload_bytes_sent: self.payload_bytes_sent - earlier.payload_bytes_sent,
            bytes_sent: self.bytes_sent - earlier.bytes_sent,
            bytes_received: self.bytes_received - earlier.bytes_received,
        }
    }
}

/// State of one party in one session.
pub struct ProtocolContext<C> {
    channel: C,
    triples: TripleStore,
    session: SessionId,
    admitted: Vec<SessionId>,
    stats: CommStats,
}

impl<C: PeerChannel> ProtocolContext<C> {
    pub fn new(channel: C, triples: TripleStore, session: SessionId) -> Result<Self> {
        if channel.party() != triples.party() {
            return Err(Error::Config(format!(
                "channel belongs to party {} but triples to party {}",
                channel.party().index(),
                triples.party().index()
            )));
        }
        Ok(ProtocolContext {
            channel,
            triples,
            session,
            admitted: vec![session],
            stats: CommStats::default(),
        })
    }

    pub fn party(&self) -> PartyId {
        self.triples.party()
    }

    pub fn modulus(&self) -> RingModulus {
        self.triples.modulus()
    }

    pub fn session(&self) -> SessionId {
        self.session
    }

    /// Accepts operands tagged with `session` (for example persistent model shares).
    pub fn admit_session(&mut self, session: SessionId) {
        if !self.admitted.contains(&session) {
            self.admitted.push(session);
        }
    }

    pub fn stats(&self) -> CommStats {
        self.stats
    }

    pub fn triples(&self) -> &TripleStore {
        &self.triples
    }

    pub fn triples_mut(&mut self) -> &mut TripleStore {
        &mut self.triples
    }

    pub fn channel_mut(&mut self) -> &mut C {
        &mut self.channel
    }

    pub fn into_parts(self) -> (C, TripleStore) {
        (self.channel, self.triples)
    }

    fn parties(&self) -> usize {
        self.party().count()
    }

    fn is_leader(&self) -> bool {
        self.party().is_leader()
    }

    fn check(&self, v: &ShareVector) -> Result<()> {
        self.modulus().check_same(v.modulus())?;
        if v.party() != self.party() {
            return Err(Error::Contract(format!(
                "share of party {} used by party {}",
                v.party().index(),
                self.party().index()
            )));
        }
        if !self.admitted.contains(&v.session()) {
            return Err(Error::SessionMismatch {
                expected: self.session.0,
                found: v.session().0,
            });
        }
        Ok(())
    }

    fn check_pair(&self, x: &ShareVector, y: &ShareVector) -> Result<()> {
        self.check(x)?;
        self.check(y)?;
        if x.len() != y.len() {
            return Err(Error::Shape(format!("operands of length {} and {}", x.len(), y.len())));
        }
        Ok(())
    }

    pub(crate) fn output(&self, values: Vec<u64>) -> ShareVector {
        ShareVector::new(self.modulus(), self.party(), self.session, values)
    }

    /// One communication round.
    fn exchange(&mut self, kind: MessageKind, payload: Vec<u8>) -> Result<Vec<Vec<u8>>> {
        let round = u32::try_from(self.stats.rounds).map_err(|_| Error::Contract("round counter overflow".into()))?;
        let peers = (self.parties() - 1) as u64;
        let len = payload.len() as u64;
        let received = self.channel.exchange(kind, self.session, round, payload)?;
        let me = self.party().index();
        self.stats.rounds += 1;
        self.stats.messages_sent += peers;
        self.stats.payload_bytes_sent += peers * len;
        self.stats.bytes_sent += peers * (len + HEADER_LEN as u64);
        self.stats.bytes_received += received
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != me)
            .map(|(_, p)| (p.len() + HEADER_LEN) as u64)
            .sum::<u64>();
        Ok(received)
    }

    /// Publishes this party's shares of `values` and returns the opened values.
    fn open_ring(&mut self, values: &[u64]) -> Result<Vec<u64>> {
        let m = self.modulus();
        let mut w = ByteWriter::with_capacity(values.len() * m.byte_width());
        w.put_ring_values(m, values);
        let all = self.exchange(MessageKind::Opening, w.into_bytes())?;
        let mut sum = vec![0u64; values.len()];
        for payload in &all {
            let mut r = ByteReader::new(payload);
            let theirs = r.get_ring_values(m, values.len())?;
            r.finish()?;
            for (s, v) in sum.iter_mut().zip(theirs) {
                *s = m.add(*s, v);
            }
        }
        Ok(sum)
    }

    /// XOR-opens boolean shares.
    fn open_bits(&mut self, bits: &Bits) -> Result<Bits> {
        let all = self.exchange(MessageKind::BitOpening, bits.to_bytes())?;
        let mut out = Bits::zeros(bits.len());
        for payload in &all {
            out ^= &Bits::from_bytes(payload, bits.len())?;
        }
        Ok(out)
    }

    // ---- local arithmetic ----

    pub fn add_vec(&self, x: &ShareVector, y: &ShareVector) -> Result<ShareVector> {
        self.check_pair(x, y)?;
        let m = self.modulus();
        Ok(self.output(x.values().iter().zip(y.values()).map(|(&a, &b)| m.add(a, b)).collect()))
    }

    pub fn sub_vec(&self, x: &ShareVector, y: &ShareVector) -> Result<ShareVector> {
        self.check_pair(x, y)?;
        let m = self.modulus();
        Ok(self.output(x.values().iter().zip(y.values()).map(|(&a, &b)| m.sub(a, b)).collect()))
    }

    /// Adds public constants; only party 0 changes its shares.
    pub fn add_const_vec(&self, x: &ShareVector, k: &[u64]) -> Result<ShareVector> {
        self.check(x)?;
        if k.len() != x.len() {
            return Err(Error::Shape(format!("{} constants for {} shares", k.len(), x.len())));
        }
        let m = self.modulus();
        if !self.is_leader() {
            return Ok(self.output(x.values().to_vec()));
        }
        Ok(self.output(x.values().iter().zip(k).map(|(&a, &b)| m.add(a, m.reduce(b))).collect()))
    }

    pub fn mul_const_vec(&self, x: &ShareVector, k: u64) -> Result<ShareVector> {
        self.check(x)?;
        let m = self.modulus();
        Ok(self.output(x.values().iter().map(|&a| m.mul(a, k)).collect()))
    }

    // ---- multiplication ----

    /// Beaver multiplication of raw share values, one triple per product, all
    /// openings in one round.
    pub(crate) fn mul_raw(&mut self, x: &[u64], y: &[u64]) -> Result<Vec<u64>> {
        if x.len() != y.len() {
            return Err(Error::Shape(format!("operands of length {} and {}", x.len(), y.len())));
        }
        let k = x.len();
        if k == 0 {
            return Ok(Vec::new());
        }
        let m = self.modulus();
        let t = self.triples.take_arith(k)?;
        let (a, b, c) = (t.a.to_vec(), t.b.to_vec(), t.c.to_vec());
        let mut masked = Vec::with_capacity(2 * k);
        masked.extend(x.iter().zip(&a).map(|(&xi, &ai)| m.sub(xi, ai)));
        masked.extend(y.iter().zip(&b).map(|(&yi, &bi)| m.sub(yi, bi)));
        let opened = self.open_ring(&masked)?;
        let (d, e) = opened.split_at(k);
        let leader = self.is_leader();
        Ok((0..k)
            .map(|i| {
                let mut z = m.add(c[i], m.add(m.mul(d[i], b[i]), m.mul(e[i], a[i])));
                if leader {
                    z = m.add(z, m.mul(d[i], e[i]));
                }
                z
            })
            .collect())
    }

    pub fn mul_vec(&mut self, x: &ShareVector, y: &ShareVector) -> Result<ShareVector> {
        self.check_pair(x, y)?;
        let z = self.mul_raw(x.values(), y.values())?;
        Ok(self.output(z))
    }

    // ---- scalar forms ----

    fn lift(&self, x: &ArithShare) -> Result<ShareVector> {
        let v = ShareVector::from_share(*x);
        self.check(&v)?;
        Ok(v)
    }

    fn lower(&self, v: ShareVector) -> ArithShare {
        v.get(0)
    }

    pub fn add(&self, x: &ArithShare, y: &ArithShare) -> Result<ArithShare> {
        Ok(self.lower(self.add_vec(&self.lift(x)?, &self.lift(y)?)?))
    }

    pub fn add_const(&self, x: &ArithShare, k: RingElement) -> Result<ArithShare> {
        self.modulus().check_same(k.modulus())?;
        Ok(self.lower(self.add_const_vec(&self.lift(x)?, &[k.value()])?))
    }

    pub fn mul(&mut self, x: &ArithShare, y: &ArithShare) -> Result<ArithShare> {
        let (x, y) = (self.lift(x)?, self.lift(y)?);
        let z = self.mul_vec(&x, &y)?;
        Ok(self.lower(z))
    }

    pub fn mul_const(&self, x: &ArithShare, k: RingElement) -> Result<ArithShare> {
        self.modulus().check_same(k.modulus())?;
        Ok(self.lower(self.mul_const_vec(&self.lift(x)?, k.value())?))
    }

    /// Boolean shares of the `m` bits of `x`, least significant first.
    pub fn a2b(&mut self, x: &ArithShare) -> Result<Vec<BoolShare>> {
        let v = self.lift(x)?;
        let wires = self.a2b_vec(&v)?;
        let (party, session) = (self.party(), self.session);
        Ok(wires
            .iter()
            .map(|w| BoolShare {
                bit: w.get(0),
                party,
                session,
            })
            .collect())
    }

    pub fn b2a(&mut self, b: &BoolShare) -> Result<ArithShare> {
        if b.party != self.party() {
            return Err(Error::Contract("boolean share of another party".into()));
        }
        if !self.admitted.contains(&b.session) {
            return Err(Error::SessionMismatch {
                expected: self.session.0,
                found: b.session.0,
            });
        }
        let v = self.b2a_vec(&Bits::from_bools(&[b.bit]))?;
        Ok(self.lower(v))
    }

    /// Share of `[x < y]` on unsigned representatives.
    pub fn cmp(&mut self, x: &ArithShare, y: &ArithShare) -> Result<ArithShare> {
        let (x, y) = (self.lift(x)?, self.lift(y)?);
        let z = self.cmp_vec(&x, &y)?;
        Ok(self.lower(z))
    }

    /// Share of `[x <= ⌊M/2⌋]`.
    pub fn half(&mut self, x: &ArithShare) -> Result<ArithShare> {
        let x = self.lift(x)?;
        let z = self.half_vec(&x)?;
        Ok(self.lower(z))
    }
}
