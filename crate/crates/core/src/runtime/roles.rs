use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::bnn::{ModelMeta, QuantizedBnnModel};
use crate::dealer::{budget_for_inference, Dealer, TripleBudget};
use crate::error::{Error, Result};
use crate::net::{Link, MessageKind, WireMessage};
use crate::secure_bnn::{argmax_client, reconstruct_output, share_model, share_query, SharedOutput};
use crate::sharing::ShareVector;

use super::config::{Hello, Role, SessionConfig};
use super::transport::Connector;

fn rng_for(config: &SessionConfig, role: Role) -> ChaCha20Rng {
    match config.seed {
        Some(seed) => ChaCha20Rng::seed_from_u64(seed ^ (u64::from(role.sender()) << 56)),
        None => ChaCha20Rng::from_os_rng(),
    }
}

fn handshake(config: &SessionConfig, connector: &dyn Connector, role: Role, server: usize) -> Result<(Box<dyn Link>, Hello)> {
    let mut link = connector.connect(server)?;
    let hello = Hello::from_config(config);
    link.send(WireMessage::new(MessageKind::Hello, role.sender(), config.session, 0, hello.to_bytes()))?;
    let reply = link.recv(Some(config.timeout))?.expect_kind(MessageKind::Hello)?;
    if reply.sender as usize != server {
        return Err(Error::UnexpectedMessage(format!(
            "expected server {server}, reached sender {}",
            reply.sender
        )));
    }
    let theirs = Hello::from_bytes(&reply.payload)?;
    hello.check_compatible(&theirs)?;
    Ok((link, theirs))
}

fn handshake_all(config: &SessionConfig, connector: &dyn Connector, role: Role) -> Result<Vec<(Box<dyn Link>, Hello)>> {
    (0..config.parties).map(|i| handshake(config, connector, role, i)).collect()
}

/// The metadata every server reports; they must all hold the same model.
fn common_meta(hellos: &[Hello]) -> Result<ModelMeta> {
    let mut meta: Option<&ModelMeta> = None;
    for (i, h) in hellos.iter().enumerate() {
        let m = h
            .meta
            .as_ref()
            .ok_or_else(|| Error::Config(format!("server {i} holds no model")))?;
        match meta {
            Some(first) if first != m => return Err(Error::Config(format!("server {i} holds a different model"))),
            _ => meta = Some(m),
        }
    }
    meta.cloned().ok_or_else(|| Error::Config("no servers".into()))
}

fn await_ack(link: &mut dyn Link, config: &SessionConfig) -> Result<()> {
    link.recv(Some(config.timeout))?.expect_kind(MessageKind::Ack).map(drop)
}

/// Shares `model` and uploads one share to each server. The overflow check runs
/// before any connection is opened. Returns the metadata digest the servers now hold.
pub fn run_trainer(
    config: &SessionConfig,
    connector: &dyn Connector,
    model: &QuantizedBnnModel,
    input_bound: u64,
) -> Result<[u8; 32]> {
    config.validate()?;
    model.modulus().check_same(config.modulus)?;
    let mut rng = rng_for(config, Role::Trainer);
    let shares = share_model(model, input_bound, config.parties, config.session, &mut rng)?;
    for (i, share) in shares.iter().enumerate() {
        let (mut link, _) = handshake(config, connector, Role::Trainer, i)?;
        link.send(WireMessage::new(
            MessageKind::ModelShare,
            Role::Trainer.sender(),
            config.session,
            0,
            share.to_bytes(),
        ))?;
        await_ack(link.as_mut(), config)?;
        log::info!("uploaded model share to server {i}");
    }
    Ok(model.meta().digest())
}

/// Streams triples for `queries` inferences to every server, one batch pair
/// per query, and returns the total budget issued.
pub fn run_dealer(config: &SessionConfig, connector: &dyn Connector, queries: u64) -> Result<TripleBudget> {
    config.validate()?;
    let mut conns = handshake_all(config, connector, Role::Dealer)?;
    let hellos: Vec<Hello> = conns.iter().map(|(_, h)| h.clone()).collect();
    let meta = common_meta(&hellos)?;
    let per_query = budget_for_inference(&meta, config.parties);
    let mut dealer = Dealer::new(config.parties, config.modulus, rng_for(config, Role::Dealer))?;
    let mut round = 0u32;
    for _ in 0..queries.max(1) {
        let budget = if queries == 0 { per_query.times(0) } else { per_query.clone() };
        for (batches, (link, _)) in dealer.issue_budget(&budget)?.into_iter().zip(conns.iter_mut()) {
            for batch in batches {
                link.send(WireMessage::new(
                    MessageKind::TripleBatch,
                    Role::Dealer.sender(),
                    config.session,
                    round,
                    batch.to_bytes(),
                ))?;
            }
        }
        for (link, _) in conns.iter_mut() {
            await_ack(link.as_mut(), config)?;
            await_ack(link.as_mut(), config)?;
        }
        round = round.wrapping_add(1);
    }
    Ok(per_query.times(queries))
}

/// Outcome of one query as seen by the client.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientResult {
    pub output: Vec<i64>,
    pub class: usize,
    pub meta: ModelMeta,
}

/// Shares `input` among the servers, waits for every output share and
/// reconstructs. Nothing is reconstructed unless all `n` servers answer.
pub fn run_client(config: &SessionConfig, connector: &dyn Connector, input: &[i64]) -> Result<ClientResult> {
    config.validate()?;
    let mut conns = handshake_all(config, connector, Role::Client)?;
    let hellos: Vec<Hello> = conns.iter().map(|(_, h)| h.clone()).collect();
    let meta = common_meta(&hellos)?;
    let mut rng = rng_for(config, Role::Client);
    let shares = share_query(&meta, input, config.parties, config.session, &mut rng)?;
    for ((link, _), share) in conns.iter_mut().zip(&shares) {
        link.send(WireMessage::new(
            MessageKind::QueryShare,
            Role::Client.sender(),
            config.session,
            0,
            share.input.to_bytes(),
        ))?;
    }
    let mut outputs = Vec::with_capacity(config.parties);
    let mut failures = Vec::new();
    for (i, (link, _)) in conns.iter_mut().enumerate() {
        let reply = link
            .recv(Some(config.timeout))
            .and_then(|m| m.expect_kind(MessageKind::OutputShare))
            .and_then(|m| {
                let v = ShareVector::from_bytes(&m.payload)?;
                if v.party().index() != i || v.session() != config.session {
                    return Err(Error::UnexpectedMessage(format!("server {i} returned a foreign output share")));
                }
                Ok(SharedOutput { output: v })
            });
        match reply {
            Ok(o) => outputs.push(o),
            Err(e) => failures.push((i, e)),
        }
    }
    if !failures.is_empty() {
        let detail: Vec<String> = failures.iter().map(|(i, e)| format!("server {i}: {e}")).collect();
        return Err(Error::PeerAborted(format!(
            "{} of {} output shares missing, refusing to reconstruct ({})",
            failures.len(),
            config.parties,
            detail.join("; ")
        )));
    }
    let output = reconstruct_output(&outputs)?;
    let class = argmax_client(&output)?;
    Ok(ClientResult { output, class, meta })
}
