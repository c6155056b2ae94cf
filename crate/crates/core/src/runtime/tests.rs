use std::thread::JoinHandle;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::*;
use crate::bnn::{self, QuantLayer, QuantizedBnParams, QuantizedBnnModel, SignMatrix};
use crate::error::{Error, Result};
use crate::net::{MessageKind, WireMessage};
use crate::ring::RingModulus;
use crate::secure_bnn::{inference_cost, reconstruct_model, SharedModel};
use crate::sharing::SessionId;

fn toy_model(sizes: &[usize], seed: u64) -> QuantizedBnnModel {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let layers = sizes
        .windows(2)
        .map(|w| QuantLayer {
            weights: SignMatrix::from_fn(w[1], w[0], |_, _| rng.random()),
            bn: QuantizedBnParams {
                scale: (0..w[1]).map(|_| rng.random_range(-20..=20)).collect(),
                shift: (0..w[1]).map(|_| rng.random_range(-50..=50)).collect(),
            },
        })
        .collect();
    QuantizedBnnModel::new(layers, 10, RingModulus::M16).unwrap()
}

fn config(parties: usize, timeout: Duration) -> SessionConfig {
    let mut c = SessionConfig::new(SessionId(1), parties, RingModulus::M16);
    c.timeout = timeout;
    c.seed = Some(99);
    c
}

fn spawn_servers<L, C>(listeners: Vec<L>, connector: C, cfgs: Vec<ServerConfig>) -> Vec<JoinHandle<Result<ServerReport>>>
where
    L: Listener + 'static,
    C: Connector + Clone + 'static,
{
    listeners
        .into_iter()
        .zip(cfgs)
        .map(|(mut l, cfg)| {
            let c = connector.clone();
            std::thread::spawn(move || run_server(&cfg, &mut l, &c))
        })
        .collect()
}

fn server_cfgs(session: &SessionConfig, max_queries: usize) -> Vec<ServerConfig> {
    (0..session.parties)
        .map(|i| ServerConfig {
            max_queries: Some(max_queries),
            ..ServerConfig::new(session.clone(), i)
        })
        .collect()
}

fn join(handles: Vec<JoinHandle<Result<ServerReport>>>) -> Vec<Result<ServerReport>> {
    handles.into_iter().map(|h| h.join().expect("server thread")).collect()
}

fn query(session: &SessionConfig, id: u64) -> SessionConfig {
    SessionConfig {
        session: SessionId(id),
        ..session.clone()
    }
}

#[test]
fn hundred_queries_over_loopback() {
    let model = toy_model(&[6, 5, 4, 3], 1);
    let cfg = config(2, Duration::from_secs(20));
    let (net, listeners) = LoopbackNet::new(2);
    let servers = spawn_servers(listeners, net.clone(), server_cfgs(&cfg, 100));
    run_trainer(&cfg, &net, &model, 100).unwrap();
    let budget = run_dealer(&cfg, &net, 100).unwrap();
    assert_eq!(budget, crate::dealer::budget_for_inference(&model.meta(), 2).times(100));
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    for k in 0..100u64 {
        let input: Vec<i64> = (0..6).map(|_| rng.random_range(0..=100)).collect();
        let res = run_client(&query(&cfg, 1000 + k), &net, &input).unwrap();
        let expected = bnn::infer(&model, &input).unwrap();
        assert_eq!(res.output, expected, "query {k}");
        assert_eq!(Some(res.class), bnn::argmax(&expected));
    }
    let cost = inference_cost(&model.meta(), 2);
    for report in join(servers) {
        let report = report.unwrap();
        assert_eq!(report.served(), 100);
        assert_eq!(report.leftover, (0, 0));
        for q in &report.queries {
            let stats = q.outcome.as_ref().unwrap();
            assert_eq!(stats.rounds, cost.rounds);
            assert_eq!(stats.bytes_sent, cost.bytes_sent);
        }
    }
}

#[test]
fn three_servers_over_fragmented_links() {
    let model = toy_model(&[5, 4, 2], 2);
    let cfg = config(3, Duration::from_secs(20));
    let (net, listeners) = LoopbackNet::fragmented(3, 17);
    let servers = spawn_servers(listeners, net.clone(), server_cfgs(&cfg, 3));
    run_trainer(&cfg, &net, &model, 100).unwrap();
    run_dealer(&cfg, &net, 3).unwrap();
    for (k, input) in [[0, 0, 0, 0, 0], [100, 3, 7, 50, 1], [9, 9, 9, 9, 9]].iter().enumerate() {
        let res = run_client(&query(&cfg, 10 + k as u64), &net, input).unwrap();
        assert_eq!(res.output, bnn::infer(&model, input).unwrap());
    }
    assert!(join(servers).into_iter().all(|r| r.unwrap().served() == 3));
}

#[test]
fn model_shares_are_persisted_and_reupload_is_refused() {
    let model = toy_model(&[4, 3, 2], 3);
    let cfg = config(2, Duration::from_secs(20));
    let dirs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    let mut cfgs = server_cfgs(&cfg, 1);
    for (c, d) in cfgs.iter_mut().zip(&dirs) {
        c.state_dir = Some(d.path().to_path_buf());
    }
    let (net, listeners) = LoopbackNet::new(2);
    let servers = spawn_servers(listeners, net.clone(), cfgs.clone());
    run_trainer(&cfg, &net, &model, 100).unwrap();
    let err = run_trainer(&cfg, &net, &model, 100).unwrap_err();
    assert!(matches!(&err, Error::PeerAborted(m) if m.contains("re-upload")), "{err}");
    run_dealer(&cfg, &net, 1).unwrap();
    run_client(&query(&cfg, 2), &net, &[1, 2, 3, 4]).unwrap();
    // The trainer stops at the first refusal, so only server 0 saw the second upload.
    let rejected: Vec<usize> = join(servers).into_iter().map(|r| r.unwrap().rejected_connections).collect();
    assert_eq!(rejected, vec![1, 0]);

    let stored: Vec<Vec<u8>> = dirs
        .iter()
        .map(|d| std::fs::read(d.path().join(MODEL_SHARE_FILE)).unwrap())
        .collect();
    assert_ne!(stored[0], stored[1]);
    let shares: Vec<SharedModel> = stored.iter().map(|b| SharedModel::from_bytes(b).unwrap()).collect();
    assert_eq!(reconstruct_model(&shares).unwrap(), model);

    // A restarted server picks its share up from disk.
    let (net, listeners) = LoopbackNet::new(2);
    let servers = spawn_servers(listeners, net.clone(), cfgs);
    run_dealer(&cfg, &net, 1).unwrap();
    let res = run_client(&query(&cfg, 3), &net, &[5, 0, 5, 0]).unwrap();
    assert_eq!(res.output, bnn::infer(&model, &[5, 0, 5, 0]).unwrap());
    join(servers).into_iter().for_each(|r| assert_eq!(r.unwrap().served(), 1));
}

#[test]
fn trainer_checks_overflow_before_connecting() {
    let model = toy_model(&[4, 3, 2], 3);
    let cfg = config(2, Duration::from_millis(200));
    let (net, listeners) = LoopbackNet::new(2);
    let err = run_trainer(&cfg, &net, &model, 1 << 20).unwrap_err();
    assert!(matches!(err, Error::Overflow(_)), "{err}");
    for mut l in listeners {
        assert!(matches!(l.accept(Some(Duration::from_millis(10))), Err(Error::Timeout(_))));
    }
}

#[test]
fn malformed_query_never_leaves_the_client() {
    let model = toy_model(&[4, 3, 2], 4);
    let cfg = config(2, Duration::from_secs(20));
    let (net, listeners) = LoopbackNet::new(2);
    let servers = spawn_servers(listeners, net.clone(), server_cfgs(&cfg, 1));
    run_trainer(&cfg, &net, &model, 100).unwrap();
    run_dealer(&cfg, &net, 1).unwrap();
    let err = run_client(&query(&cfg, 7), &net, &[1, 2, 3]).unwrap_err();
    assert!(matches!(err, Error::Shape(_)), "{err}");
    run_client(&query(&cfg, 8), &net, &[1, 2, 3, 4]).unwrap();
    for r in join(servers) {
        let r = r.unwrap();
        // The aborted connection never produced a QUERY_SHARE.
        assert_eq!(r.queries.len(), 1);
        assert_eq!(r.queries[0].session, SessionId(8));
    }
}

#[test]
fn zero_budget_aborts_the_first_query_cleanly() {
    let model = toy_model(&[4, 3, 2], 5);
    let cfg = config(2, Duration::from_secs(20));
    let (net, listeners) = LoopbackNet::new(2);
    let servers = spawn_servers(listeners, net.clone(), server_cfgs(&cfg, 1));
    run_trainer(&cfg, &net, &model, 100).unwrap();
    let budget = run_dealer(&cfg, &net, 0).unwrap();
    assert_eq!((budget.arith, budget.boolean), (0, 0));
    let err = run_client(&query(&cfg, 2), &net, &[1, 2, 3, 4]).unwrap_err();
    assert!(matches!(&err, Error::PeerAborted(m) if m.contains("exhausted")), "{err}");
    for r in join(servers) {
        let r = r.unwrap();
        assert_eq!(r.served(), 0);
        assert!(r.queries[0].outcome.as_ref().unwrap_err().contains("exhausted"));
    }
}

#[test]
fn killed_server_aborts_the_session_without_output() {
    let model = toy_model(&[4, 3, 3, 2], 6);
    let cfg = config(2, Duration::from_secs(2));
    let (net, listeners) = LoopbackNet::new(2);
    let mut cfgs = server_cfgs(&cfg, 2);
    cfgs[1].crash_after_rounds = Some(5);
    let servers = spawn_servers(listeners, net.clone(), cfgs);
    run_trainer(&cfg, &net, &model, 100).unwrap();
    run_dealer(&cfg, &net, 2).unwrap();
    let err = run_client(&query(&cfg, 2), &net, &[1, 2, 3, 4]).unwrap_err();
    assert!(matches!(&err, Error::PeerAborted(m) if m.contains("refusing to reconstruct")), "{err}");
    let results = join(servers);
    let survivor = results[0].as_ref().unwrap_err();
    assert!(
        matches!(survivor, Error::Disconnected(_) | Error::Timeout(_) | Error::Desync(_)),
        "{survivor}"
    );
    assert!(matches!(&results[1], Err(Error::Disconnected(m)) if m.contains("injected")));
}

#[test]
fn query_sent_to_one_server_only_is_refused() {
    let model = toy_model(&[4, 3, 2], 7);
    let cfg = config(2, Duration::from_millis(500));
    let (net, listeners) = LoopbackNet::new(2);
    let mut cfgs = server_cfgs(&cfg, 2);
    cfgs[1].max_queries = Some(1);
    let servers = spawn_servers(listeners, net.clone(), cfgs);
    run_trainer(&cfg, &net, &model, 100).unwrap();
    run_dealer(&cfg, &net, 1).unwrap();

    let meta = model.meta();
    let shares = crate::secure_bnn::share_query(&meta, &[1, 2, 3, 4], 2, SessionId(40), &mut ChaCha20Rng::seed_from_u64(1)).unwrap();
    let mut link = net.connect(0).unwrap();
    link.send(WireMessage::new(MessageKind::Hello, Role::Client.sender(), SessionId(40), 0, Hello::from_config(&cfg).to_bytes()))
        .unwrap();
    link.recv(Some(Duration::from_secs(5))).unwrap().expect_kind(MessageKind::Hello).unwrap();
    link.send(WireMessage::new(MessageKind::QueryShare, Role::Client.sender(), SessionId(40), 0, shares[0].input.to_bytes()))
        .unwrap();
    let reply = link.recv(Some(Duration::from_secs(5))).unwrap();
    assert_eq!(reply.kind, MessageKind::Error);
    drop(link);

    let res = run_client(&query(&cfg, 41), &net, &[4, 3, 2, 1]).unwrap();
    assert_eq!(res.output, bnn::infer(&model, &[4, 3, 2, 1]).unwrap());
    let reports: Vec<ServerReport> = join(servers).into_iter().map(|r| r.unwrap()).collect();
    assert_eq!(reports[0].queries.len(), 2);
    assert_eq!(reports[0].served(), 1);
    assert_eq!(reports[1].queries.len(), 1);
    assert_eq!(reports[1].served(), 1);
    assert_eq!(reports[0].leftover, (0, 0));
}

fn random_message(rng: &mut ChaCha20Rng, cfg: &SessionConfig) -> WireMessage {
    let kind = MessageKind::ALL[rng.random_range(0..MessageKind::ALL.len())];
    let sender = [Role::Client, Role::Trainer, Role::Dealer, Role::Server(0), Role::Server(1)][rng.random_range(0..5)].sender();
    let payload: Vec<u8> = match rng.random_range(0..3) {
        0 if kind == MessageKind::Hello => Hello::from_config(cfg).to_bytes(),
        0 => Vec::new(),
        _ => (0..rng.random_range(0..64)).map(|_| rng.random()).collect(),
    };
    WireMessage::new(kind, sender, SessionId(rng.random_range(0..4)), rng.random(), payload)
}

#[test]
fn shuffled_messages_are_rejected_and_service_continues() {
    let model = toy_model(&[4, 3, 2], 8);
    let cfg = config(2, Duration::from_millis(300));
    let (net, listeners) = LoopbackNet::new(2);
    let servers = spawn_servers(listeners, net.clone(), server_cfgs(&cfg, 1));
    run_trainer(&cfg, &net, &model, 100).unwrap();
    run_dealer(&cfg, &net, 1).unwrap();

    let mut rng = ChaCha20Rng::seed_from_u64(2024);
    for _ in 0..60 {
        let target = rng.random_range(0..2);
        let mut link = net.connect(target).unwrap();
        let count = rng.random_range(1..5);
        for _ in 0..count {
            let mut msg = random_message(&mut rng, &cfg);
            if msg.kind == MessageKind::QueryShare {
                // A lone query share would hold the server at the verdict exchange.
                msg.kind = MessageKind::OutputShare;
            }
            if link.send(msg).is_err() {
                break;
            }
        }
        while let Ok(reply) = link.recv(Some(Duration::from_millis(50))) {
            assert!(
                matches!(reply.kind, MessageKind::Hello | MessageKind::Error | MessageKind::Ack),
                "server answered with {}",
                reply.kind
            );
        }
    }
    let input = [7, 1, 0, 3];
    let res = run_client(&query(&cfg, 77), &net, &input).unwrap();
    assert_eq!(res.output, bnn::infer(&model, &input).unwrap());
    for r in join(servers) {
        let r = r.unwrap();
        assert_eq!(r.served(), 1);
        assert!(r.rejected_connections > 0);
    }
}

fn transcript_run<L, C>(listeners: Vec<L>, connector: C) -> Vec<crate::net::Transcript>
where
    L: Listener + 'static,
    C: Connector + Clone + 'static,
{
    let model = toy_model(&[5, 4, 3, 2], 9);
    let cfg = config(2, Duration::from_secs(20));
    let mut cfgs = server_cfgs(&cfg, 2);
    cfgs.iter_mut().for_each(|c| c.record = true);
    let servers = spawn_servers(listeners, connector.clone(), cfgs);
    run_trainer(&cfg, &connector, &model, 100).unwrap();
    run_dealer(&cfg, &connector, 2).unwrap();
    run_client(&query(&cfg, 5), &connector, &[1, 2, 3, 4, 5]).unwrap();
    run_client(&query(&cfg, 6), &connector, &[50, 0, 50, 0, 50]).unwrap();
    join(servers)
        .into_iter()
        .map(|r| r.unwrap().transcript.expect("recording enabled"))
        .collect()
}

#[test]
fn loopback_and_tcp_transcripts_are_identical() {
    let (net, listeners) = LoopbackNet::new(2);
    let loopback = transcript_run(listeners, net);

    let (fnet, flisteners) = LoopbackNet::fragmented(2, 3);
    let fragmented = transcript_run(flisteners, fnet);

    let tcp_listeners: Vec<TcpServerListener> = (0..2).map(|_| TcpServerListener::bind("127.0.0.1:0").unwrap()).collect();
    let addrs = tcp_listeners.iter().map(|l| l.local_addr().unwrap().to_string()).collect();
    let tcp = transcript_run(tcp_listeners, TcpConnector::new(addrs, Duration::from_secs(10)));

    assert!(loopback[0].entries().len() > 10);
    assert_eq!(loopback, fragmented);
    assert_eq!(loopback, tcp);
}

#[test]
fn config_file_round_trip() {
    let text = "# deployment\nsession = 42\nparties = 3\nmodulus_bits = 16\nservers = a:1, b:2 ,c:3\nseed = 5\ntimeout_ms = 1500\n";
    let cfg = SessionConfig::default().apply_kv(text).unwrap();
    assert_eq!(cfg.session, SessionId(42));
    assert_eq!(cfg.parties, 3);
    assert_eq!(cfg.modulus, RingModulus::M16);
    assert_eq!(cfg.servers, vec!["a:1", "b:2", "c:3"]);
    assert_eq!(cfg.timeout, Duration::from_millis(1500));
    assert_eq!(SessionConfig::default().apply_kv(&cfg.to_kv()).unwrap(), cfg);

    let digest = toy_model(&[2, 2], 1).meta().digest();
    let with_digest = SessionConfig::default()
        .apply_kv(&format!("model_digest = {}", hex::encode(digest)))
        .unwrap();
    assert_eq!(with_digest.model_digest, Some(digest));

    for bad in ["parties = 1", "modulus_bits = 12", "colour = blue", "servers = a:1", "just words"] {
        assert!(SessionConfig::default().apply_kv(bad).is_err(), "{bad}");
    }
}

#[test]
fn hello_round_trip_and_compatibility() {
    let cfg = config(2, Duration::from_secs(1));
    let meta = toy_model(&[3, 2], 1).meta();
    let h = Hello {
        meta: Some(meta.clone()),
        ..Hello::from_config(&cfg)
    };
    assert_eq!(Hello::from_bytes(&h.to_bytes()).unwrap(), h);
    let plain = Hello::from_config(&cfg);
    assert!(plain.check_compatible(&h).is_ok());
    let wrong_digest = Hello {
        digest: Some([7; 32]),
        ..plain.clone()
    };
    assert!(wrong_digest.check_compatible(&h).is_err());
    let three = Hello {
        parties: 3,
        ..plain.clone()
    };
    assert!(three.check_compatible(&plain).is_err());
    assert!(Hello::from_bytes(&[2, 16, 0x80]).is_err());
}

#[test]
fn client_refuses_servers_with_different_models() {
    let cfg = config(2, Duration::from_secs(5));
    let (net, listeners) = LoopbackNet::new(2);
    let servers = spawn_servers(listeners, net.clone(), server_cfgs(&cfg, 1));
    // Only server 0 gets a model.
    let model = toy_model(&[3, 2], 1);
    let share = crate::secure_bnn::share_model(&model, 10, 2, SessionId(1), &mut ChaCha20Rng::seed_from_u64(1)).unwrap();
    let mut link = net.connect(0).unwrap();
    link.send(WireMessage::new(MessageKind::Hello, Role::Trainer.sender(), SessionId(1), 0, Hello::from_config(&cfg).to_bytes()))
        .unwrap();
    link.recv(Some(Duration::from_secs(5))).unwrap();
    link.send(WireMessage::new(MessageKind::ModelShare, Role::Trainer.sender(), SessionId(1), 0, share[0].to_bytes()))
        .unwrap();
    link.recv(Some(Duration::from_secs(5))).unwrap().expect_kind(MessageKind::Ack).unwrap();
    drop(link);
    let err = run_client(&query(&cfg, 3), &net, &[1, 2, 3]).unwrap_err();
    assert!(matches!(&err, Error::Config(m) if m.contains("server 1 holds no model")), "{err}");
    // A client whose digest differs from the served model is turned away.
    let mut other = query(&cfg, 4);
    other.model_digest = Some([1; 32]);
    assert!(run_client(&other, &net, &[1, 2, 3]).is_err());
    // A query reaching both servers is refused by both, which ends their loop.
    let mut links: Vec<_> = (0..2).map(|i| net.connect(i).unwrap()).collect();
    for l in links.iter_mut() {
        l.send(WireMessage::new(MessageKind::Hello, Role::Client.sender(), SessionId(5), 0, Hello::from_config(&cfg).to_bytes()))
            .unwrap();
        l.recv(Some(Duration::from_secs(5))).unwrap();
        l.send(WireMessage::new(MessageKind::QueryShare, Role::Client.sender(), SessionId(5), 0, vec![0; 8]))
            .unwrap();
    }
    for l in links.iter_mut() {
        assert_eq!(l.recv(Some(Duration::from_secs(5))).unwrap().kind, MessageKind::Error);
    }
    for r in join(servers) {
        let r = r.unwrap();
        assert_eq!(r.served(), 0);
        assert_eq!(r.queries.len(), 1);
    }
}
