//! Trusted dealer for correlated randomness: arithmetic Beaver triples over
//! `Z_M` and boolean AND triples over `Z_2`, plus the per-party store that
//! hands them out exactly once.

use rand::Rng;

use crate::bits::Bits;
use crate::bnn::ModelMeta;
use crate::circuit;
use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::ring::RingModulus;
use crate::sharing::PartyId;

const KIND_ARITH: u8 = 0;
const KIND_BOOL: u8 = 1;

/// One party's shares of a run of consecutive arithmetic triples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArithTripleBatch {
    pub party: PartyId,
    pub modulus: RingModulus,
    /// Global index of the first triple, so batches can be aligned across parties.
    pub first_index: u64,
    pub a: Vec<u64>,
    pub b: Vec<u64>,
    pub c: Vec<u64>,
}

impl ArithTripleBatch {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }
}

/// One party's shares of a run of consecutive AND triples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoolTripleBatch {
    pub party: PartyId,
    pub first_index: u64,
    pub a: Bits,
    pub b: Bits,
    pub c: Bits,
}

impl BoolTripleBatch {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }
}

/// Either kind of batch, as carried by a TRIPLE_BATCH message.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TripleBatch {
    Arith(ArithTripleBatch),
    Bool(BoolTripleBatch),
}

impl TripleBatch {
    pub fn party(&self) -> PartyId {
        match self {
            TripleBatch::Arith(b) => b.party,
            TripleBatch::Bool(b) => b.party,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        match self {
            TripleBatch::Arith(batch) => {
                w.put_u8(KIND_ARITH)
                    .put_u8(batch.modulus.bits() as u8)
                    .put_u8(batch.party.count() as u8)
                    .put_u8(batch.party.index() as u8)
                    .put_u64(batch.first_index)
                    .put_u64(batch.len() as u64)
                    .put_ring_values(batch.modulus, &batch.a)
                    .put_ring_values(batch.modulus, &batch.b)
                    .put_ring_values(batch.modulus, &batch.c);
            }
            TripleBatch::Bool(batch) => {
                w.put_u8(KIND_BOOL)
                    .put_u8(1)
                    .put_u8(batch.party.count() as u8)
                    .put_u8(batch.party.index() as u8)
                    .put_u64(batch.first_index)
                    .put_u64(batch.len() as u64)
                    .put_bytes(&batch.a.to_bytes())
                    .put_bytes(&batch.b.to_bytes())
                    .put_bytes(&batch.c.to_bytes());
            }
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let kind = r.get_u8()?;
        let width = r.get_u8()?;
        let count = r.get_u8()? as usize;
        let index = r.get_u8()? as usize;
        let party = PartyId::new(index, count).map_err(|e| Error::Format(e.to_string()))?;
        let first_index = r.get_u64()?;
        let len = usize::try_from(r.get_u64()?).map_err(|_| Error::Format("batch too long".into()))?;
        let batch = match kind {
            KIND_ARITH => {
                let modulus = RingModulus::new(width as u32).map_err(|e| Error::Format(e.to_string()))?;
                TripleBatch::Arith(ArithTripleBatch {
                    party,
                    modulus,
                    first_index,
                    a: r.get_ring_values(modulus, len)?,
                    b: r.get_ring_values(modulus, len)?,
                    c: r.get_ring_values(modulus, len)?,
                })
            }
            KIND_BOOL => {
                let nbytes = len.div_ceil(8);
                TripleBatch::Bool(BoolTripleBatch {
                    party,
                    first_index,
                    a: Bits::from_bytes(r.take(nbytes)?, len)?,
                    b: Bits::from_bytes(r.take(nbytes)?, len)?,
                    c: Bits::from_bytes(r.take(nbytes)?, len)?,
                })
            }
            other => return Err(Error::Format(format!("unknown triple kind {other}"))),
        };
        r.finish()?;
        Ok(batch)
    }
}

fn split_arith<R: Rng + ?Sized>(modulus: RingModulus, value: u64, n: usize, rng: &mut R, out: &mut [Vec<u64>]) {
    let mut rest = value;
    for part in out.iter_mut().skip(1) {
        let r = modulus.reduce(rng.random());
        rest = modulus.sub(rest, r);
        part.push(r);
    }
    out[0].push(rest);
    debug_assert_eq!(out.len(), n);
}

fn arith_batches<R: Rng + ?Sized>(
    count: usize,
    n: usize,
    modulus: RingModulus,
    first_index: u64,
    rng: &mut R,
) -> Result<Vec<ArithTripleBatch>> {
    let parties = PartyId::all(n)?;
    let mut a = vec![Vec::with_capacity(count); n];
    let mut b = vec![Vec::with_capacity(count); n];
    let mut c = vec![Vec::with_capacity(count); n];
    for _ in 0..count {
        let x = modulus.reduce(rng.random());
        let y = modulus.reduce(rng.random());
        split_arith(modulus, x, n, rng, &mut a);
        split_arith(modulus, y, n, rng, &mut b);
        split_arith(modulus, modulus.mul(x, y), n, rng, &mut c);
    }
    Ok(parties
        .into_iter()
        .zip(a.into_iter().zip(b).zip(c))
        .map(|(party, ((a, b), c))| ArithTripleBatch {
            party,
            modulus,
            first_index,
            a,
            b,
            c,
        })
        .collect())
}

fn bool_batches<R: Rng + ?Sized>(count: usize, n: usize, first_index: u64, rng: &mut R) -> Result<Vec<BoolTripleBatch>> {
    let parties = PartyId::all(n)?;
    let x = Bits::random(count, rng);
    let y = Bits::random(count, rng);
    let mut z = x.clone();
    z &= &y;
    let split = |secret: &Bits, rng: &mut R| -> Vec<Bits> {
        let mut rest = secret.clone();
        let mut parts = vec![Bits::default()];
        for _ in 1..n {
            let r = Bits::random(count, rng);
            rest ^= &r;
            parts.push(r);
        }
        parts[0] = rest;
        parts
    };
    let a = split(&x, rng);
    let b = split(&y, rng);
    let c = split(&z, rng);
    Ok(parties
        .into_iter()
        .zip(a.into_iter().zip(b).zip(c))
        .map(|(party, ((a, b), c))| BoolTripleBatch {
            party,
            first_index,
            a,
            b,
            c,
        })
        .collect())
}

/// Issues `count` arithmetic triples to `n` parties; batch `p` goes to party `p`.
pub fn issue_arith_triples<R: Rng + ?Sized>(
    count: usize,
    n: usize,
    modulus: RingModulus,
    rng: &mut R,
) -> Result<Vec<ArithTripleBatch>> {
    arith_batches(count, n, modulus, 0, rng)
}

/// Issues `count` AND triples to `n` parties.
pub fn issue_bool_triples<R: Rng + ?Sized>(count: usize, n: usize, rng: &mut R) -> Result<Vec<BoolTripleBatch>> {
    bool_batches(count, n, 0, rng)
}

/// A sequential triple generator for one session. Successive batches carry
/// consecutive global indices.
#[derive(Debug)]
pub struct Dealer<R> {
    parties: usize,
    modulus: RingModulus,
    rng: R,
    next_arith: u64,
    next_bool: u64,
    corrupt_next: bool,
}

impl<R: Rng> Dealer<R> {
    pub fn new(parties: usize, modulus: RingModulus, rng: R) -> Result<Self> {
        PartyId::new(0, parties)?;
        Ok(Dealer {
            parties,
            modulus,
            rng,
            next_arith: 0,
            next_bool: 0,
            corrupt_next: false,
        })
    }

    pub fn parties(&self) -> usize {
        self.parties
    }

    pub fn modulus(&self) -> RingModulus {
        self.modulus
    }

    /// Fault injection: the next arithmetic batch carries one triple with `c != a*b`.
    pub fn corrupt_next_arith_batch(&mut self) {
        self.corrupt_next = true;
    }

    pub fn issue_arith(&mut self, count: usize) -> Result<Vec<ArithTripleBatch>> {
        let mut batches = arith_batches(count, self.parties, self.modulus, self.next_arith, &mut self.rng)?;
        self.next_arith += count as u64;
        if count > 0 && std::mem::take(&mut self.corrupt_next) {
            let c = &mut batches[0].c[0];
            *c = self.modulus.add(*c, 1);
        }
        Ok(batches)
    }

    pub fn issue_bool(&mut self, count: usize) -> Result<Vec<BoolTripleBatch>> {
        let batches = bool_batches(count, self.parties, self.next_bool, &mut self.rng)?;
        self.next_bool += count as u64;
        Ok(batches)
    }

    /// Issues both kinds for `budget`, returning per-party batch lists.
    pub fn issue_budget(&mut self, budget: &TripleBudget) -> Result<Vec<Vec<TripleBatch>>> {
        let arith = self.issue_arith(budget.arith as usize)?;
        let boolean = self.issue_bool(budget.boolean as usize)?;
        Ok(arith
            .into_iter()
            .zip(boolean)
            .map(|(a, b)| vec![TripleBatch::Arith(a), TripleBatch::Bool(b)])
            .collect())
    }
}

/// Borrowed view of arithmetic triples taken from a store.
#[derive(Debug)]
pub struct ArithTriples<'a> {
    pub a: &'a [u64],
    pub b: &'a [u64],
    pub c: &'a [u64],
}

/// Boolean triples taken from a store.
#[derive(Debug)]
pub struct BoolTriples {
    pub a: Bits,
    pub b: Bits,
    pub c: Bits,
}

/// One party's supply of unconsumed triples. Each triple is handed out at most
/// once; batches must arrive in index order without overlap.
#[derive(Debug)]
pub struct TripleStore {
    party: PartyId,
    modulus: RingModulus,
    arith_a: Vec<u64>,
    arith_b: Vec<u64>,
    arith_c: Vec<u64>,
    arith_cursor: usize,
    arith_next_index: u64,
    arith_consumed: u64,
    bool_a: Bits,
    bool_b: Bits,
    bool_c: Bits,
    bool_cursor: usize,
    bool_next_index: u64,
    bool_consumed: u64,
}

impl TripleStore {
    pub fn new(party: PartyId, modulus: RingModulus) -> Self {
        TripleStore {
            party,
            modulus,
            arith_a: Vec::new(),
            arith_b: Vec::new(),
            arith_c: Vec::new(),
            arith_cursor: 0,
            arith_next_index: 0,
            arith_consumed: 0,
            bool_a: Bits::default(),
            bool_b: Bits::default(),
            bool_c: Bits::default(),
            bool_cursor: 0,
            bool_next_index: 0,
            bool_consumed: 0,
        }
    }

    pub fn party(&self) -> PartyId {
        self.party
    }

    pub fn modulus(&self) -> RingModulus {
        self.modulus
    }

    pub fn arith_available(&self) -> usize {
        self.arith_a.len() - self.arith_cursor
    }

    pub fn bool_available(&self) -> usize {
        self.bool_a.len() - self.bool_cursor
    }

    /// Total triples handed out so far, `(arithmetic, boolean)`.
    pub fn consumed(&self) -> (u64, u64) {
        (self.arith_consumed, self.bool_consumed)
    }

    fn check_index(kind: &'static str, first_index: u64, expected: u64) -> Result<()> {
        match first_index.cmp(&expected) {
            std::cmp::Ordering::Less => Err(Error::TripleReuse {
                kind,
                first_index,
                expected,
            }),
            std::cmp::Ordering::Greater => Err(Error::TripleGap {
                kind,
                first_index,
                expected,
            }),
            std::cmp::Ordering::Equal => Ok(()),
        }
    }

    pub fn load(&mut self, batch: TripleBatch) -> Result<()> {
        match batch {
            TripleBatch::Arith(b) => self.load_arith(b),
            TripleBatch::Bool(b) => self.load_bool(b),
        }
    }

    pub fn load_arith(&mut self, batch: ArithTripleBatch) -> Result<()> {
        if batch.party != self.party {
            return Err(Error::Contract(format!("batch for {} loaded into store of {}", batch.party, self.party)));
        }
        self.modulus.check_same(batch.modulus)?;
        Self::check_index("arithmetic", batch.first_index, self.arith_next_index)?;
        if self.arith_cursor > 0 {
            self.arith_a.drain(..self.arith_cursor);
            self.arith_b.drain(..self.arith_cursor);
            self.arith_c.drain(..self.arith_cursor);
            self.arith_cursor = 0;
        }
        self.arith_next_index += batch.len() as u64;
        self.arith_a.extend(batch.a);
        self.arith_b.extend(batch.b);
        self.arith_c.extend(batch.c);
        Ok(())
    }

    pub fn load_bool(&mut self, batch: BoolTripleBatch) -> Result<()> {
        if batch.party != self.party {
            return Err(Error::Contract(format!("batch for {} loaded into store of {}", batch.party, self.party)));
        }
        Self::check_index("boolean", batch.first_index, self.bool_next_index)?;
        if self.bool_cursor > 0 {
            let keep = self.bool_available();
            self.bool_a = self.bool_a.slice(self.bool_cursor, keep);
            self.bool_b = self.bool_b.slice(self.bool_cursor, keep);
            self.bool_c = self.bool_c.slice(self.bool_cursor, keep);
            self.bool_cursor = 0;
        }
        self.bool_next_index += batch.len() as u64;
        self.bool_a.extend_from(&batch.a);
        self.bool_b.extend_from(&batch.b);
        self.bool_c.extend_from(&batch.c);
        Ok(())
    }

    pub fn take_arith(&mut self, count: usize) -> Result<ArithTriples<'_>> {
        let available = self.arith_available();
        if count > available {
            return Err(Error::TripleExhausted {
                kind: "arithmetic",
                needed: count,
                available,
            });
        }
        let range = self.arith_cursor..self.arith_cursor + count;
        self.arith_cursor += count;
        self.arith_consumed += count as u64;
        Ok(ArithTriples {
            a: &self.arith_a[range.clone()],
            b: &self.arith_b[range.clone()],
            c: &self.arith_c[range],
        })
    }

    pub fn take_bool(&mut self, count: usize) -> Result<BoolTriples> {
        let available = self.bool_available();
        if count > available {
            return Err(Error::TripleExhausted {
                kind: "boolean",
                needed: count,
                available,
            });
        }
        let start = self.bool_cursor;
        self.bool_cursor += count;
        self.bool_consumed += count as u64;
        Ok(BoolTriples {
            a: self.bool_a.slice(start, count),
            b: self.bool_b.slice(start, count),
            c: self.bool_c.slice(start, count),
        })
    }
}

/// Triple consumption of one layer of the secure pipeline.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LayerBudget {
    pub full_connection: u64,
    pub batch_norm: u64,
    /// Arithmetic triples for the boolean-to-arithmetic conversion of the activation.
    pub activation_arith: u64,
    pub activation_bool: u64,
}

/// Exact triple counts for one secure inference.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TripleBudget {
    pub arith: u64,
    pub boolean: u64,
    pub layers: Vec<LayerBudget>,
}

impl TripleBudget {
    /// The budget for `queries` back-to-back inferences.
    pub fn times(&self, queries: u64) -> TripleBudget {
        TripleBudget {
            arith: self.arith * queries,
            boolean: self.boolean * queries,
            layers: self.layers.clone(),
        }
    }
}

/// AND gates of one activation (sign test) on `parties`-way shares in `Z_2^bits`.
pub fn activation_and_gates(bits: u32, parties: usize) -> u64 {
    circuit::half_circuit(bits, parties).and_count() as u64
}

/// Triple counts for one run of the secure pipeline on `parties` servers: one
/// MUL per weight, one per batch-norm node, and per hidden node one sign-test
/// circuit plus `parties - 1` MULs to convert its output bit back.
pub fn budget_for_inference(meta: &ModelMeta, parties: usize) -> TripleBudget {
    let and_gates = activation_and_gates(meta.modulus.bits(), parties);
    let layers: Vec<LayerBudget> = meta
        .sizes
        .windows(2)
        .enumerate()
        .map(|(j, w)| {
            let (d_in, d_out) = (w[0] as u64, w[1] as u64);
            let hidden = j + 1 < meta.layer_count();
            LayerBudget {
                full_connection: d_in * d_out,
                batch_norm: d_out,
                activation_arith: if hidden { d_out * (parties as u64 - 1) } else { 0 },
                activation_bool: if hidden { d_out * and_gates } else { 0 },
            }
        })
        .collect();
    TripleBudget {
        arith: layers
            .iter()
            .map(|l| l.full_connection + l.batch_norm + l.activation_arith)
            .sum(),
        boolean: layers.iter().map(|l| l.activation_bool).sum(),
        layers,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(3)
    }

    fn sum(m: RingModulus, batches: &[ArithTripleBatch], f: impl Fn(&ArithTripleBatch) -> &Vec<u64>, i: usize) -> u64 {
        batches.iter().fold(0, |acc, b| m.add(acc, f(b)[i]))
    }

    #[test]
    fn arith_triples_multiply() {
        let m = RingModulus::M16;
        for n in [2, 3] {
            let batches = issue_arith_triples(10_000, n, m, &mut rng()).unwrap();
            assert_eq!(batches.len(), n);
            for i in 0..10_000 {
                let a = sum(m, &batches, |b| &b.a, i);
                let b = sum(m, &batches, |b| &b.b, i);
                let c = sum(m, &batches, |b| &b.c, i);
                assert_eq!(c, m.mul(a, b));
            }
        }
    }

    #[test]
    fn bool_triples_and() {
        let batches = issue_bool_triples(10_000, 2, &mut rng()).unwrap();
        let mut seen_c = false;
        for i in 0..10_000 {
            let a = batches[0].a.get(i) ^ batches[1].a.get(i);
            let b = batches[0].b.get(i) ^ batches[1].b.get(i);
            let c = batches[0].c.get(i) ^ batches[1].c.get(i);
            assert_eq!(c, a & b);
            if c {
                assert!(a && b);
                seen_c = true;
            }
        }
        assert!(seen_c);
    }

    #[test]
    fn empty_batches() {
        let a = issue_arith_triples(0, 2, RingModulus::M8, &mut rng()).unwrap();
        assert!(a.iter().all(|b| b.is_empty()));
        let b = issue_bool_triples(0, 2, &mut rng()).unwrap();
        assert!(b.iter().all(|b| b.is_empty()));
    }

    #[test]
    fn store_rejects_reuse_gaps_and_exhaustion() {
        let m = RingModulus::M8;
        let mut dealer = Dealer::new(2, m, rng()).unwrap();
        let first = dealer.issue_arith(5).unwrap();
        let second = dealer.issue_arith(5).unwrap();
        let third = dealer.issue_arith(5).unwrap();
        let mut store = TripleStore::new(first[0].party, m);
        store.load_arith(first[0].clone()).unwrap();
        store.take_arith(3).unwrap();
        // Re-delivering a batch would hand out the same triples twice.
        assert!(matches!(store.load_arith(first[0].clone()), Err(Error::TripleReuse { .. })));
        assert!(matches!(store.load_arith(third[0].clone()), Err(Error::TripleGap { .. })));
        assert!(matches!(store.load_arith(second[1].clone()), Err(Error::Contract(_))));
        store.load_arith(second[0].clone()).unwrap();
        assert_eq!(store.arith_available(), 7);
        assert!(matches!(store.take_arith(8), Err(Error::TripleExhausted { .. })));
        let t = store.take_arith(7).unwrap();
        assert_eq!(t.a[2..], second[0].a[..]);
        assert_eq!(store.consumed(), (10, 0));
    }

    #[test]
    fn bool_store_slices_in_order() {
        let mut dealer = Dealer::new(2, RingModulus::M8, rng()).unwrap();
        let first = dealer.issue_bool(70).unwrap();
        let second = dealer.issue_bool(30).unwrap();
        let mut store = TripleStore::new(first[1].party, RingModulus::M8);
        store.load_bool(first[1].clone()).unwrap();
        let head = store.take_bool(65).unwrap();
        assert_eq!(head.a, first[1].a.slice(0, 65));
        store.load_bool(second[1].clone()).unwrap();
        let tail = store.take_bool(35).unwrap();
        let mut expect = first[1].c.slice(65, 5);
        expect.extend_from(&second[1].c);
        assert_eq!(tail.c, expect);
        assert!(store.take_bool(1).is_err());
        assert!(matches!(store.load_bool(second[1].clone()), Err(Error::TripleReuse { .. })));
    }

    #[test]
    fn corrupted_batch_breaks_one_triple() {
        let m = RingModulus::M8;
        let mut dealer = Dealer::new(2, m, rng()).unwrap();
        dealer.corrupt_next_arith_batch();
        let batches = dealer.issue_arith(4).unwrap();
        let bad = (0..4)
            .filter(|&i| sum(m, &batches, |b| &b.c, i) != m.mul(sum(m, &batches, |b| &b.a, i), sum(m, &batches, |b| &b.b, i)))
            .count();
        assert_eq!(bad, 1);
    }

    #[test]
    fn batch_wire_round_trip() {
        let mut dealer = Dealer::new(3, RingModulus::M32, rng()).unwrap();
        let a = TripleBatch::Arith(dealer.issue_arith(9).unwrap().remove(2));
        assert_eq!(TripleBatch::from_bytes(&a.to_bytes()).unwrap(), a);
        let b = TripleBatch::Bool(dealer.issue_bool(13).unwrap().remove(1));
        assert_eq!(TripleBatch::from_bytes(&b.to_bytes()).unwrap(), b);
        let mut bytes = b.to_bytes();
        bytes.push(0);
        assert!(TripleBatch::from_bytes(&bytes).is_err());
    }

    #[test]
    fn budget_examples() {
        let meta = ModelMeta::new(vec![784, 128, 128, 10], 10_000, RingModulus::M32).unwrap();
        let budget = budget_for_inference(&meta, 2);
        assert_eq!(budget.layers[0].full_connection, 784 * 128);
        assert_eq!(budget.layers[0].batch_norm, 128);
        let gates = circuit::half_circuit(32, 2).and_count() as u64;
        assert_eq!(budget.layers[0].activation_bool, 128 * gates);
        assert_eq!(budget.layers[2].activation_bool, 0);
        assert_eq!(
            budget.arith,
            784 * 128 + 128 + 128 + 128 * 128 + 128 + 128 + 128 * 10 + 10
        );
        assert_eq!(budget.boolean, 2 * 128 * gates);
    }
}
