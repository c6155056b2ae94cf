//! In-process execution of all computing parties on threads, with a dealer
//! pre-loading their triple stores. Used for tests, benchmarks and self-tests.

use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::dealer::{Dealer, TripleBudget, TripleStore};
use crate::error::{Error, Result};
use crate::net::{fragmented_mesh, memory_mesh, PeerMesh, Transcript, TranscriptRecorder};
use crate::protocols::{CommStats, ProtocolContext};
use crate::ring::RingModulus;
use crate::sharing::SessionId;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transport {
    /// Messages move between threads without serialization.
    Memory,
    /// Messages are framed and pushed through fragmenting byte pipes.
    Fragmented,
}

#[derive(Clone, Debug)]
pub struct LocalCluster {
    parties: usize,
    modulus: RingModulus,
    session: SessionId,
    seed: u64,
    arith: usize,
    boolean: usize,
    transport: Transport,
    record: Option<bool>,
    timeout: Duration,
    corrupt_triples: bool,
}

/// Per-party results of one local run.
#[derive(Debug)]
pub struct LocalRun<T> {
    pub outputs: Vec<T>,
    pub stats: Vec<CommStats>,
    pub transcripts: Vec<Transcript>,
    /// Unused (arithmetic, boolean) triples per party.
    pub leftover: Vec<(usize, usize)>,
}

impl LocalCluster {
    pub fn new(parties: usize, modulus: RingModulus) -> Self {
        LocalCluster {
            parties,
            modulus,
            session: SessionId(1),
            seed: 0,
            arith: 0,
            boolean: 0,
            transport: Transport::Memory,
            record: None,
            timeout: Duration::from_secs(120),
            corrupt_triples: false,
        }
    }

    pub fn session(mut self, session: SessionId) -> Self {
        self.session = session;
        self
    }

    /// Seed of the dealer's randomness.
    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn triples(mut self, arith: usize, boolean: usize) -> Self {
        self.arith = arith;
        self.boolean = boolean;
        self
    }

    pub fn budget(self, budget: &TripleBudget) -> Self {
        self.triples(budget.arith as usize, budget.boolean as usize)
    }

    pub fn transport(mut self, transport: Transport) -> Self {
        self.transport = transport;
        self
    }

    /// Records each party's transcript, optionally with payloads.
    pub fn record(mut self, keep_payloads: bool) -> Self {
        self.record = Some(keep_payloads);
        self
    }

    pub fn timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Makes the first arithmetic triple inconsistent (fault injection).
    pub fn corrupt_triples(mut self, corrupt: bool) -> Self {
        self.corrupt_triples = corrupt;
        self
    }

    fn stores(&self) -> Result<Vec<TripleStore>> {
        let mut dealer = Dealer::new(self.parties, self.modulus, ChaCha20Rng::seed_from_u64(self.seed))?;
        if self.corrupt_triples {
            dealer.corrupt_next_arith_batch();
        }
        let arith = dealer.issue_arith(self.arith)?;
        let boolean = dealer.issue_bool(self.boolean)?;
        arith
            .into_iter()
            .zip(boolean)
            .map(|(a, b)| {
                let mut store = TripleStore::new(a.party, self.modulus);
                store.load_arith(a)?;
                store.load_bool(b)?;
                Ok(store)
            })
            .collect()
    }

    /// Runs `f` once per party, each on its own thread, and gathers the results.
    pub fn run<T, F>(&self, f: F) -> Result<LocalRun<T>>
    where
        T: Send,
        F: Fn(&mut ProtocolContext<PeerMesh>) -> Result<T> + Sync,
    {
        let stores = self.stores()?;
        let mut meshes = match self.transport {
            Transport::Memory => memory_mesh(self.parties, Some(self.timeout))?,
            Transport::Fragmented => fragmented_mesh(self.parties, self.seed, Some(self.timeout))?,
        };
        let recorders: Vec<TranscriptRecorder> = match self.record {
            Some(keep) => meshes
                .iter_mut()
                .map(|m| {
                    let r = TranscriptRecorder::new(keep);
                    m.record(&r);
                    r
                })
                .collect(),
            None => Vec::new(),
        };
        let session = self.session;
        let f = &f;
        let results: Vec<Result<(T, CommStats, (usize, usize))>> = std::thread::scope(|scope| {
            let handles: Vec<_> = meshes
                .into_iter()
                .zip(stores)
                .map(|(mesh, store)| {
                    scope.spawn(move || {
                        let mut ctx = ProtocolContext::new(mesh, store, session)?;
                        let out = f(&mut ctx);
                        if let Err(e) = &out {
                            ctx.channel_mut().abort(session, &e.to_string());
                        }
                        let left = (ctx.triples().arith_available(), ctx.triples().bool_available());
                        Ok((out?, ctx.stats(), left))
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::Contract("party thread panicked".into()))))
                .collect()
        });

        let mut outputs = Vec::with_capacity(self.parties);
        let mut stats = Vec::with_capacity(self.parties);
        let mut leftover = Vec::with_capacity(self.parties);
        let mut errors = Vec::new();
        for r in results {
            match r {
                Ok((o, s, l)) => {
                    outputs.push(o);
                    stats.push(s);
                    leftover.push(l);
                }
                Err(e) => errors.push(e),
            }
        }
        if !errors.is_empty() {
            let secondary = |e: &Error| matches!(e, Error::PeerAborted(_) | Error::Disconnected(_));
            let pos = errors.iter().position(|e| !secondary(e)).unwrap_or(0);
            return Err(errors.swap_remove(pos));
        }
        Ok(LocalRun {
            outputs,
            stats,
            transcripts: recorders.iter().map(TranscriptRecorder::snapshot).collect(),
            leftover,
        })
    }
}
