use std::fmt::Write as _;
use std::path::Path;
use std::thread;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use obnn::bnn::{overflow_bound, QuantLayer, QuantizedBnParams, QuantizedBnnModel, SignMatrix, DEFAULT_Q, PIXEL_MAX};
use obnn::dealer::budget_for_inference;
use obnn::local::{LocalCluster, Transport};
use obnn::protocols::CommStats;
use obnn::runtime::{
    run_client, run_dealer, run_server, run_trainer, ServerConfig, SessionConfig, TcpConnector, TcpServerListener,
};
use obnn::secure_bnn::{secure_infer, share_model, share_query};
use obnn::sharing::SessionId;
use obnn::RingModulus;

use crate::files::{check_output_dir, modulus, write_atomic, CmdResult, Failure};
use crate::TransportKind;

const INPUTS: usize = 784;
const CLASSES: usize = 10;

struct Row {
    width: usize,
    mean_ms: f64,
    stddev_ms: f64,
    rounds: u64,
    bytes: u64,
    arith: u64,
    boolean: u64,
}

fn random_model(width: usize, m: RingModulus, rng: &mut ChaCha20Rng) -> Result<QuantizedBnnModel, Failure> {
    let sizes = [INPUTS, width, width, CLASSES];
    let layers = sizes
        .windows(2)
        .map(|w| QuantLayer {
            weights: SignMatrix::from_fn(w[1], w[0], |_, _| rng.random()),
            bn: QuantizedBnParams {
                scale: (0..w[1]).map(|_| rng.random_range(1..=1000)).collect(),
                shift: (0..w[1]).map(|_| rng.random_range(-10_000..=10_000)).collect(),
            },
        })
        .collect();
    let model = QuantizedBnnModel::new(layers, DEFAULT_Q, m)?;
    let needed = overflow_bound(&model, PIXEL_MAX)?;
    if needed.bits() > m.bits() {
        return Err(Failure::usage(format!(
            "width {width} needs m >= {} for the benchmark models",
            needed.bits()
        )));
    }
    Ok(model)
}

fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn local_trials(
    model: &QuantizedBnnModel,
    input: &[i64],
    trials: usize,
    parties: usize,
    transport: Transport,
    rng: &mut ChaCha20Rng,
) -> Result<(Vec<f64>, CommStats), Failure> {
    let shares = share_model(model, PIXEL_MAX, parties, SessionId(0), rng)?;
    let query = share_query(&model.meta(), input, parties, SessionId(1), rng)?;
    let mut times = Vec::with_capacity(trials);
    let mut stats = CommStats::default();
    for t in 0..trials {
        let run = LocalCluster::new(parties, model.modulus())
            .seed(t as u64)
            .budget(&budget_for_inference(&model.meta(), parties))
            .transport(transport)
            .run(|ctx| {
                let p = ctx.party().index();
                let start = Instant::now();
                secure_infer(ctx, &shares[p], &query[p])?;
                Ok(start.elapsed())
            })?;
        times.push(run.outputs.iter().max().expect("parties").as_secs_f64() * 1e3);
        stats = run.stats[0];
    }
    Ok((times, stats))
}

fn tcp_trials(
    model: &QuantizedBnnModel,
    input: &[i64],
    trials: usize,
    parties: usize,
    seed: u64,
) -> Result<(Vec<f64>, CommStats), Failure> {
    let listeners = (0..parties)
        .map(|_| TcpServerListener::bind("127.0.0.1:0"))
        .collect::<obnn::Result<Vec<_>>>()?;
    let servers = listeners
        .iter()
        .map(|l| l.local_addr().map(|a| a.to_string()))
        .collect::<obnn::Result<Vec<_>>>()?;
    let config = SessionConfig {
        servers: servers.clone(),
        seed: Some(seed),
        ..SessionConfig::new(SessionId(1), parties, model.modulus())
    };
    let handles: Vec<_> = listeners
        .into_iter()
        .enumerate()
        .map(|(i, mut listener)| {
            let cfg = ServerConfig {
                max_queries: Some(trials),
                ..ServerConfig::new(config.clone(), i)
            };
            let connector = TcpConnector::new(servers.clone(), config.timeout);
            thread::spawn(move || run_server(&cfg, &mut listener, &connector))
        })
        .collect();
    let connector = TcpConnector::new(servers, config.timeout);
    let mut times = Vec::with_capacity(trials);
    let mut client = || -> Result<(), Failure> {
        run_trainer(&SessionConfig { session: SessionId(0), ..config.clone() }, &connector, model, PIXEL_MAX)?;
        run_dealer(&config, &connector, trials as u64)?;
        for t in 0..trials {
            let query = SessionConfig {
                session: SessionId(1 + t as u64),
                ..config.clone()
            };
            let start = Instant::now();
            run_client(&query, &connector, input)?;
            times.push(start.elapsed().as_secs_f64() * 1e3);
        }
        Ok(())
    };
    let outcome = client();
    let mut stats = None;
    for h in handles {
        let report = h.join().map_err(|_| Failure::failed("server thread panicked"))??;
        if stats.is_none() {
            stats = report.queries.last().and_then(|q| q.outcome.clone().ok());
        }
    }
    outcome?;
    Ok((times, stats.ok_or_else(|| Failure::failed("no query was served"))?))
}

fn gnuplot_script() -> &'static str {
    r#"# gnuplot -persist bench.gp
set datafile separator ','
set key left top
set xlabel 'hidden width d'
set ylabel 'time per inference (ms)'
set y2label 'bytes sent per server'
set y2tics
set logscale x 2
plot 'bench.csv' using 1:6:7 skip 1 with yerrorlines title 'time', \
     'bench.csv' using 1:9 skip 1 axes x1y2 with linespoints title 'bytes'
"#
}

pub fn run(
    widths: &[usize],
    trials: usize,
    parties: usize,
    modulus_bits: u32,
    transport: TransportKind,
    seed: u64,
    out: &Path,
) -> CmdResult {
    check_output_dir(out)?;
    let m = modulus(modulus_bits)?;
    if trials == 0 || widths.is_empty() || widths.contains(&0) {
        return Err(Failure::usage("need at least one trial and positive widths"));
    }
    if parties < 2 {
        return Err(Failure::usage("need at least two parties"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for &width in widths {
        let model = random_model(width, m, &mut rng)?;
        let input: Vec<i64> = (0..INPUTS).map(|_| rng.random_range(0..=PIXEL_MAX as i64)).collect();
        let (times, stats) = match transport {
            TransportKind::Loopback => local_trials(&model, &input, trials, parties, Transport::Memory, &mut rng)?,
            TransportKind::Fragmented => {
                local_trials(&model, &input, trials, parties, Transport::Fragmented, &mut rng)?
            }
            TransportKind::Tcp => tcp_trials(&model, &input, trials, parties, seed)?,
        };
        let (mean_ms, stddev_ms) = mean_std(&times);
        let budget = budget_for_inference(&model.meta(), parties);
        let row = Row {
            width,
            mean_ms,
            stddev_ms,
            rounds: stats.rounds,
            bytes: stats.bytes_sent,
            arith: budget.arith,
            boolean: budget.boolean,
        };
        println!(
            "d={:<5} {:>10.2} ms ± {:<8.2} rounds {:<4} bytes {}",
            row.width, row.mean_ms, row.stddev_ms, row.rounds, row.bytes
        );
        rows.push(row);
    }
    let mut csv = String::from(
        "width,parties,modulus_bits,transport,trials,mean_ms,stddev_ms,rounds,bytes_per_server,arith_triples,bool_triples\n",
    );
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{parties},{modulus_bits},{transport:?},{trials},{:.3},{:.3},{},{},{},{}",
            r.width, r.mean_ms, r.stddev_ms, r.rounds, r.bytes, r.arith, r.boolean
        );
    }
    write_atomic(&out.join("bench.csv"), csv.to_lowercase().as_bytes())?;
    write_atomic(&out.join("bench.gp"), gnuplot_script().as_bytes())?;
    println!("wrote {} and {}", out.join("bench.csv").display(), out.join("bench.gp").display());
    Ok(())
}
