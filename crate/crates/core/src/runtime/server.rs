use std::collections::{HashSet, VecDeque};
use std::path::PathBuf;

use crate::dealer::{budget_for_inference, TripleBatch, TripleStore};
use crate::error::{Error, Result};
use crate::net::{Link, MessageKind, PeerMesh, Transcript, TranscriptRecorder, WireMessage};
use crate::protocols::{CommStats, PeerChannel, ProtocolContext};
use crate::secure_bnn::{secure_infer, SharedModel, SharedQuery};
use crate::sharing::{PartyId, SessionId, ShareVector};

use super::config::{Hello, Role, SessionConfig};
use super::transport::{Connector, Listener};

/// Name of the persisted model share inside a server's state directory.
pub const MODEL_SHARE_FILE: &str = "model-share.bin";

/// Round index carried by the per-query synchronisation `HELLO` between servers.
const SYNC_ROUND: u32 = u32::MAX;

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub session: SessionConfig,
    pub index: usize,
    /// Stop after this many `QUERY_SHARE` messages (served or rejected).
    pub max_queries: Option<usize>,
    /// Directory holding the model share across restarts.
    pub state_dir: Option<PathBuf>,
    /// Test hook: drop every connection without notice once this many
    /// protocol rounds have run, as if the process had been killed.
    pub crash_after_rounds: Option<u64>,
    /// Record the traffic with peer servers.
    pub record: bool,
}

impl ServerConfig {
    pub fn new(session: SessionConfig, index: usize) -> Self {
        ServerConfig {
            session,
            index,
            max_queries: None,
            state_dir: None,
            crash_after_rounds: None,
            record: false,
        }
    }
}

/// What happened to one query.
#[derive(Clone, Debug)]
pub struct QueryRecord {
    pub session: SessionId,
    /// Communication of the secure evaluation, or why the query was refused.
    pub outcome: std::result::Result<CommStats, String>,
}

#[derive(Debug, Default)]
pub struct ServerReport {
    pub queries: Vec<QueryRecord>,
    pub model_session: Option<SessionId>,
    pub rejected_connections: usize,
    /// Unused (arithmetic, boolean) triples at shutdown.
    pub leftover: (usize, usize),
    pub transcript: Option<Transcript>,
}

impl ServerReport {
    pub fn served(&self) -> usize {
        self.queries.iter().filter(|q| q.outcome.is_ok()).count()
    }
}

struct FaultChannel<'a> {
    mesh: &'a mut PeerMesh,
    remaining: Option<u64>,
    crashed: bool,
}

impl PeerChannel for FaultChannel<'_> {
    fn party(&self) -> PartyId {
        self.mesh.party()
    }

    fn exchange(&mut self, kind: MessageKind, session: SessionId, round: u32, payload: Vec<u8>) -> Result<Vec<Vec<u8>>> {
        if let Some(left) = &mut self.remaining {
            if *left == 0 {
                self.crashed = true;
                return Err(Error::Disconnected("injected crash".into()));
            }
            *left -= 1;
        }
        self.mesh.exchange(kind, session, round, payload)
    }
}

struct Server<'a> {
    cfg: &'a ServerConfig,
    party: PartyId,
    model: Option<SharedModel>,
    store: TripleStore,
    used_sessions: HashSet<u64>,
    rounds: u64,
    report: ServerReport,
}

fn reject(link: &mut dyn Link, sender: u8, session: SessionId, err: &Error) {
    log::info!("rejecting session {}: {err}", session.0);
    let _ = link.send(WireMessage::error(sender, session, &err.to_string()));
}

impl Server<'_> {
    fn sender(&self) -> u8 {
        self.party.index() as u8
    }

    fn timeout(&self) -> Option<std::time::Duration> {
        Some(self.cfg.session.timeout)
    }

    fn hello(&self) -> Hello {
        let mut h = Hello::from_config(&self.cfg.session);
        h.meta = self.model.as_ref().map(|m| m.meta().clone());
        h
    }

    fn hello_message(&self) -> WireMessage {
        WireMessage::new(MessageKind::Hello, self.sender(), self.cfg.session.session, 0, self.hello().to_bytes())
    }

    fn load_state(&mut self) -> Result<()> {
        let Some(dir) = &self.cfg.state_dir else { return Ok(()) };
        let path = dir.join(MODEL_SHARE_FILE);
        if !path.exists() {
            return Ok(());
        }
        let model = SharedModel::from_bytes(&std::fs::read(&path)?)?;
        self.check_model(&model)?;
        log::info!("server {} restored its model share from {}", self.party.index(), path.display());
        self.report.model_session = Some(model.session());
        self.model = Some(model);
        Ok(())
    }

    fn check_model(&self, model: &SharedModel) -> Result<()> {
        if model.party() != self.party {
            return Err(Error::Contract(format!(
                "model share belongs to {}, this is {}",
                model.party(),
                self.party
            )));
        }
        model.meta().modulus.check_same(self.cfg.session.modulus)
    }

    /// Reads the opening `HELLO` of a fresh connection.
    fn greet(&self, link: &mut dyn Link) -> Result<(Role, Hello)> {
        let msg = link.recv(self.timeout())?.expect_kind(MessageKind::Hello)?;
        let role = Role::from_sender(msg.sender, self.party.count())?;
        let hello = Hello::from_bytes(&msg.payload)?;
        self.hello().check_compatible(&hello)?;
        Ok((role, hello))
    }

    fn connect_mesh(&mut self, listener: &mut dyn Listener, connector: &dyn Connector) -> Result<(PeerMesh, VecDeque<(Box<dyn Link>, Role)>)> {
        let (me, n) = (self.party.index(), self.party.count());
        let mut links: Vec<Option<Box<dyn Link>>> = (0..n).map(|_| None).collect();
        for (j, slot) in links.iter_mut().enumerate().take(me) {
            let mut link = connector.connect(j)?;
            link.send(self.hello_message())?;
            let reply = link.recv(self.timeout())?.expect_kind(MessageKind::Hello)?;
            if reply.sender as usize != j {
                return Err(Error::UnexpectedMessage(format!("expected server {j}, reached sender {}", reply.sender)));
            }
            self.hello().check_compatible(&Hello::from_bytes(&reply.payload)?)?;
            *slot = Some(link);
        }
        let mut pending = VecDeque::new();
        while links.iter().enumerate().any(|(j, l)| j > me && l.is_none()) {
            let mut link = listener
                .accept(self.timeout())?
                .ok_or_else(|| Error::Disconnected("listener closed while waiting for peers".into()))?;
            match self.greet(link.as_mut()) {
                Ok((Role::Server(j), _)) if j > me && links[j].is_none() => {
                    link.send(self.hello_message())?;
                    links[j] = Some(link);
                }
                Ok((Role::Server(j), _)) => {
                    self.report.rejected_connections += 1;
                    reject(link.as_mut(), self.sender(), self.cfg.session.session, &Error::UnexpectedMessage(format!("unexpected connection from server {j}")));
                }
                Ok((role, _)) => pending.push_back((link, role)),
                Err(e) => {
                    self.report.rejected_connections += 1;
                    reject(link.as_mut(), self.sender(), self.cfg.session.session, &e);
                }
            }
        }
        log::info!("server {me} connected to all {} peers", n - 1);
        Ok((PeerMesh::new(self.party, links, self.timeout())?, pending))
    }

    /// Serves one external connection after its `HELLO`. Errors returned from
    /// here are fatal for the server.
    fn handle(&mut self, mesh: &mut PeerMesh, mut link: Box<dyn Link>, role: Role) -> Result<()> {
        link.send(self.hello_message())?;
        let outcome = match role {
            Role::Trainer => self.receive_model(link.as_mut()),
            Role::Dealer => self.receive_triples(link.as_mut()),
            Role::Client => return self.serve_query(mesh, link.as_mut()),
            Role::Server(j) => Err(Error::UnexpectedMessage(format!("unexpected connection from server {j}"))),
        };
        if let Err(e) = outcome {
            self.report.rejected_connections += 1;
            reject(link.as_mut(), self.sender(), self.cfg.session.session, &e);
        }
        Ok(())
    }

    fn receive_model(&mut self, link: &mut dyn Link) -> Result<()> {
        let msg = link.recv(self.timeout())?.expect_kind(MessageKind::ModelShare)?;
        if let Some(existing) = &self.model {
            return Err(Error::Contract(format!(
                "a model is already loaded (session {}); re-upload refused",
                existing.session().0
            )));
        }
        let model = SharedModel::from_bytes(&msg.payload)?;
        self.check_model(&model)?;
        if model.session() != msg.session {
            return Err(Error::SessionMismatch {
                expected: msg.session.0,
                found: model.session().0,
            });
        }
        if let Some(dir) = &self.cfg.state_dir {
            std::fs::create_dir_all(dir)?;
            let tmp = dir.join(format!("{MODEL_SHARE_FILE}.tmp"));
            std::fs::write(&tmp, &msg.payload)?;
            std::fs::rename(&tmp, dir.join(MODEL_SHARE_FILE))?;
        }
        log::info!("server {} stored a model share for {:?}", self.party.index(), model.meta().sizes);
        self.report.model_session = Some(model.session());
        self.model = Some(model);
        link.send(WireMessage::new(MessageKind::Ack, self.sender(), msg.session, 0, Vec::new()))
    }

    fn receive_triples(&mut self, link: &mut dyn Link) -> Result<()> {
        loop {
            let msg = match link.recv(self.timeout()) {
                Err(Error::Disconnected(_)) => return Ok(()),
                other => other?.expect_kind(MessageKind::TripleBatch)?,
            };
            let batch = TripleBatch::from_bytes(&msg.payload)?;
            self.store.load(batch)?;
            link.send(WireMessage::new(MessageKind::Ack, self.sender(), msg.session, msg.round, Vec::new()))?;
        }
    }

    /// Checks a query locally; every server then learns whether all accepted.
    fn check_query(&self, msg: &WireMessage) -> Result<SharedQuery> {
        let model = self.model.as_ref().ok_or_else(|| Error::Contract("no model has been uploaded".into()))?;
        let input = ShareVector::from_bytes(&msg.payload)?;
        if input.party() != self.party {
            return Err(Error::Contract(format!("query share for {} sent to {}", input.party(), self.party)));
        }
        input.modulus().check_same(model.meta().modulus)?;
        if input.session() != msg.session {
            return Err(Error::SessionMismatch {
                expected: msg.session.0,
                found: input.session().0,
            });
        }
        if input.len() != model.meta().input_len() {
            return Err(Error::Shape(format!(
                "model expects {} inputs, query has {}",
                model.meta().input_len(),
                input.len()
            )));
        }
        if self.used_sessions.contains(&msg.session.0) {
            return Err(Error::Contract(format!("session {} was already used", msg.session.0)));
        }
        let budget = budget_for_inference(model.meta(), self.party.count());
        let (arith, boolean) = (self.store.arith_available() as u64, self.store.bool_available() as u64);
        if arith < budget.arith {
            return Err(Error::TripleExhausted {
                kind: "arithmetic",
                needed: budget.arith as usize,
                available: arith as usize,
            });
        }
        if boolean < budget.boolean {
            return Err(Error::TripleExhausted {
                kind: "boolean",
                needed: budget.boolean as usize,
                available: boolean as usize,
            });
        }
        Ok(SharedQuery { input })
    }

    /// Tells every peer whether this server accepts `session` and collects
    /// their verdicts. Leftover verdicts for sessions a peer gave up on are skipped.
    fn sync(&self, mesh: &mut PeerMesh, session: SessionId, verdict: Vec<u8>) -> Result<Vec<Vec<u8>>> {
        let peers: Vec<usize> = mesh.peers().collect();
        for &j in &peers {
            mesh.send_to(j, WireMessage::new(MessageKind::Hello, self.sender(), session, SYNC_ROUND, verdict.clone()))?;
        }
        let mut out = vec![Vec::new(); self.party.count()];
        for &j in &peers {
            let msg = loop {
                let msg = mesh.recv_from(j)?.into_result()?;
                if msg.kind == MessageKind::Hello && msg.round == SYNC_ROUND && msg.session != session {
                    log::info!("server {} skips a stale verdict for session {}", self.party.index(), msg.session.0);
                    continue;
                }
                break msg;
            };
            if msg.kind != MessageKind::Hello || msg.round != SYNC_ROUND || msg.sender as usize != j {
                return Err(Error::Desync(format!(
                    "expected the query verdict of server {j}, got {} round {} from {}",
                    msg.kind, msg.round, msg.sender
                )));
            }
            out[j] = msg.payload;
        }
        out[self.party.index()] = verdict;
        Ok(out)
    }

    fn serve_query(&mut self, mesh: &mut PeerMesh, link: &mut dyn Link) -> Result<()> {
        let msg = match link.recv(self.timeout()).and_then(|m| m.expect_kind(MessageKind::QueryShare)) {
            Ok(m) => m,
            Err(e) => {
                self.report.rejected_connections += 1;
                reject(link, self.sender(), self.cfg.session.session, &e);
                return Ok(());
            }
        };
        let session = msg.session;
        let local = self.check_query(&msg);
        let verdict = vec![u8::from(local.is_ok())];
        self.used_sessions.insert(session.0);
        let replies = match self.sync(mesh, session, verdict) {
            Ok(r) => Ok(r),
            Err(e @ Error::Timeout(_)) => Err(e),
            Err(e) => {
                reject(link, self.sender(), session, &e);
                return Err(e);
            }
        };
        let query = match (local, replies) {
            (Err(e), _) | (_, Err(e)) => Err(e),
            (Ok(q), Ok(replies)) => match replies.iter().position(|r| r.as_slice() != [1]) {
                Some(j) => Err(Error::Contract(format!("server {j} refused session {}", session.0))),
                None => Ok(q),
            },
        };
        let query = match query {
            Ok(q) => q,
            Err(e) => {
                reject(link, self.sender(), session, &e);
                self.report.queries.push(QueryRecord {
                    session,
                    outcome: Err(e.to_string()),
                });
                return Ok(());
            }
        };

        let model = self.model.as_ref().expect("checked above");
        let store = std::mem::replace(&mut self.store, TripleStore::new(self.party, model.meta().modulus));
        let channel = FaultChannel {
            mesh,
            remaining: self.cfg.crash_after_rounds.map(|k| k.saturating_sub(self.rounds)),
            crashed: false,
        };
        let mut ctx = ProtocolContext::new(channel, store, session)?;
        let result = secure_infer(&mut ctx, model, &query);
        let stats = ctx.stats();
        let (channel, store) = ctx.into_parts();
        let crashed = channel.crashed;
        self.store = store;
        self.rounds += stats.rounds;
        match result {
            Ok(out) => {
                link.send(WireMessage::new(
                    MessageKind::OutputShare,
                    self.sender(),
                    session,
                    0,
                    out.output.to_bytes(),
                ))?;
                self.report.queries.push(QueryRecord {
                    session,
                    outcome: Ok(stats),
                });
                Ok(())
            }
            Err(e) if crashed => Err(e),
            Err(e) => {
                mesh.abort(session, &e.to_string());
                reject(link, self.sender(), session, &e);
                self.report.queries.push(QueryRecord {
                    session,
                    outcome: Err(e.to_string()),
                });
                Err(e)
            }
        }
    }
}

/// Runs server `cfg.index`: connects to its peers, then serves connections one
/// at a time until `max_queries` is reached or the listener closes.
///
/// A failure among the servers during a query (desynchronisation, a vanished
/// peer, a timeout) ends the service loop with that error after an `ERROR` is
/// sent to the client and the peers; no output share is released for it.
/// A query that reaches only some of the servers times out at the verdict
/// exchange and is refused without stopping the loop.
pub fn run_server(cfg: &ServerConfig, listener: &mut dyn Listener, connector: &dyn Connector) -> Result<ServerReport> {
    cfg.session.validate()?;
    let party = PartyId::new(cfg.index, cfg.session.parties)?;
    let mut server = Server {
        cfg,
        party,
        model: None,
        store: TripleStore::new(party, cfg.session.modulus),
        used_sessions: HashSet::new(),
        rounds: 0,
        report: ServerReport::default(),
    };
    server.load_state()?;
    let (mut mesh, mut pending) = server.connect_mesh(listener, connector)?;
    let recorder = cfg.record.then(|| {
        let r = TranscriptRecorder::new(true);
        mesh.record(&r);
        r
    });

    loop {
        if cfg.max_queries.is_some_and(|max| server.report.queries.len() >= max) {
            break;
        }
        let (link, role) = match pending.pop_front() {
            Some(p) => p,
            None => {
                let Some(mut link) = listener.accept(None)? else { break };
                match server.greet(link.as_mut()) {
                    Ok((role, _)) => (link, role),
                    Err(e) => {
                        server.report.rejected_connections += 1;
                        reject(link.as_mut(), server.sender(), cfg.session.session, &e);
                        continue;
                    }
                }
            }
        };
        server.handle(&mut mesh, link, role)?;
    }

    let mut report = server.report;
    report.leftover = (server.store.arith_available(), server.store.bool_available());
    report.transcript = recorder.as_ref().map(TranscriptRecorder::snapshot);
    Ok(report)
}
