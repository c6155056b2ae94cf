use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use obnn::bnn::{
    self, float_accuracy, load_model, quantize_model, quantized_accuracy, quantized_to_bytes, real_to_bytes,
    train_reference, Dataset, ModelFile, QuantizedBnnModel, Split, TrainConfig,
};
use obnn::runtime::{
    run_client, run_dealer, run_server, run_trainer, ServerConfig, SessionConfig, TcpConnector, TcpServerListener,
};
use obnn::secure_bnn::{self, reconstruct_model, SharedModel};
use obnn::sharing::{reconstruct_vector, SessionId, ShareVector};

use crate::files::{
    check_output, check_output_dir, join, need_servers, read_vector, require_file, require_mnist, session_config,
    write_atomic, CmdResult, Failure,
};
use crate::{InputArgs, SessionArgs};

const MODEL_SHARE_MAGIC: &[u8] = b"OBSM";

fn rng(seed: Option<u64>) -> ChaCha20Rng {
    match seed {
        Some(s) => ChaCha20Rng::seed_from_u64(s),
        None => ChaCha20Rng::from_os_rng(),
    }
}

fn connector(config: &SessionConfig) -> TcpConnector {
    TcpConnector::new(config.servers.clone(), config.timeout)
}

fn load_quantized_model(path: &Path) -> Result<QuantizedBnnModel, Failure> {
    require_file(path)?;
    match load_model(path)? {
        ModelFile::Quantized(m) => Ok(m),
        ModelFile::Real(_) => Err(Failure::usage(format!(
            "{} holds real-valued parameters; run `obnn quantize` first",
            path.display()
        ))),
    }
}

/// The model's own ring unless the session explicitly names one.
fn session_for_model(args: &SessionArgs, model: &QuantizedBnnModel) -> Result<SessionConfig, Failure> {
    let mut config = session_config(args)?;
    if args.modulus_bits.is_none() && args.config.is_none() {
        config.modulus = model.modulus();
    }
    Ok(config)
}

fn pct(x: f64) -> String {
    format!("{:.2}%", x * 100.0)
}

pub fn train(dataset: &Path, sizes: &[usize], epochs: usize, limit: Option<usize>, seed: u64, out: &Path) -> CmdResult {
    require_mnist(dataset, &["train"])?;
    check_output(out, &[])?;
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Failure::usage("--sizes needs at least two positive widths"));
    }
    let mut data = Dataset::load_mnist(dataset, Split::Train)?;
    if let Some(n) = limit {
        data = data.take(n);
    }
    let config = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };
    let model = train_reference(&data, sizes, &config)?;
    println!("train accuracy: {}", pct(float_accuracy(&model, &data)?));
    if require_mnist(dataset, &["t10k"]).is_ok() {
        let test = Dataset::load_mnist(dataset, Split::Test)?;
        println!("test accuracy: {}", pct(float_accuracy(&model, &test)?));
    }
    write_atomic(out, &real_to_bytes(&model))?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn quantize(
    model_path: &Path,
    q: u64,
    modulus_bits: Option<u32>,
    input_bound: u64,
    dataset: Option<&Path>,
    limit: Option<usize>,
    out: &Path,
) -> CmdResult {
    require_file(model_path)?;
    if let Some(dir) = dataset {
        require_mnist(dir, &["t10k"])?;
    }
    check_output(out, &[model_path])?;
    let requested = modulus_bits.map(crate::files::modulus).transpose()?;
    let float = match load_model(model_path)? {
        ModelFile::Real(m) => m,
        ModelFile::Quantized(_) => {
            return Err(Failure::usage(format!("{} is already quantized", model_path.display())))
        }
    };
    let fitted = quantize_model(&float, q, None, input_bound)?;
    let required = fitted.modulus();
    println!(
        "overflow bound: inputs up to {input_bound} with q = {q} need m >= {}",
        required.bits()
    );
    let model = match requested {
        Some(m) if m.bits() < required.bits() => {
            return Err(Failure::failed(format!(
                "overflow: m = {} is too small for this model, it needs m >= {}",
                m.bits(),
                required.bits()
            )))
        }
        Some(m) => fitted.with_modulus(m),
        None => fitted,
    };
    println!("ring: m = {} (safe)", model.modulus().bits());
    if let Some(dir) = dataset {
        let mut test = Dataset::load_mnist(dir, Split::Test)?;
        if let Some(n) = limit {
            test = test.take(n);
        }
        let (fa, qa) = (float_accuracy(&float, &test)?, quantized_accuracy(&model, &test)?);
        println!(
            "float accuracy: {}  integer accuracy: {}  delta: {:.2} points",
            pct(fa),
            pct(qa),
            (fa - qa) * 100.0
        );
    }
    write_atomic(out, &quantized_to_bytes(&model))?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn share_model(model_path: &Path, input_bound: u64, out: Option<&Path>, args: &SessionArgs) -> CmdResult {
    let model = load_quantized_model(model_path)?;
    let config = session_for_model(args, &model)?;
    model.modulus().check_same(config.modulus).map_err(Failure::usage)?;
    let digest = hex::encode(model.meta().digest());
    match out {
        Some(dir) => {
            check_output_dir(dir)?;
            let shares = secure_bnn::share_model(
                &model,
                input_bound,
                config.parties,
                config.session,
                &mut rng(config.seed),
            )?;
            for (i, share) in shares.iter().enumerate() {
                let path = dir.join(format!("model-share-{i}.bin"));
                write_atomic(&path, &share.to_bytes())?;
                println!("wrote {}", path.display());
            }
        }
        None => {
            need_servers(&config)?;
            run_trainer(&config, &connector(&config), &model, input_bound)?;
            println!("uploaded {} model shares", config.parties);
        }
    }
    println!("model digest: {digest}");
    Ok(())
}

fn query_inputs(input: &InputArgs, count: usize) -> Result<Vec<(Vec<i64>, Option<u8>)>, Failure> {
    match (&input.input, &input.dataset) {
        (Some(path), None) => {
            if count != 1 {
                return Err(Failure::usage("--count applies to --dataset queries only"));
            }
            Ok(vec![(read_vector(path)?, None)])
        }
        (None, Some(dir)) => {
            require_mnist(dir, &["t10k"])?;
            let test = Dataset::load_mnist(dir, Split::Test)?;
            let end = input.index + count;
            if end > test.len() {
                return Err(Failure::usage(format!("the test split has only {} images", test.len())));
            }
            Ok((input.index..end).map(|i| (test.input(i), Some(test.label(i)))).collect())
        }
        _ => Err(Failure::usage("give the query with --input or --dataset")),
    }
}

pub fn share_input(model_path: &Path, input: &InputArgs, out: &Path, args: &SessionArgs) -> CmdResult {
    let model = load_quantized_model(model_path)?;
    let (x, _) = query_inputs(input, 1)?.remove(0);
    check_output_dir(out)?;
    let config = session_for_model(args, &model)?;
    let shares = secure_bnn::share_query(&model.meta(), &x, config.parties, config.session, &mut rng(config.seed))?;
    for (i, share) in shares.iter().enumerate() {
        let path = out.join(format!("query-share-{i}.bin"));
        write_atomic(&path, &share.input.to_bytes())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

pub fn serve(
    index: usize,
    listen: &str,
    state_dir: Option<PathBuf>,
    max_queries: Option<usize>,
    args: &SessionArgs,
) -> CmdResult {
    let config = session_config(args)?;
    need_servers(&config)?;
    if index >= config.parties {
        return Err(Failure::usage(format!("--index {index} but only {} servers", config.parties)));
    }
    if let Some(dir) = &state_dir {
        fs::create_dir_all(dir)?;
    }
    let mut listener = TcpServerListener::bind(listen)?;
    log::info!("server {index} listening on {}", listener.local_addr()?);
    let connector = connector(&config);
    let server = ServerConfig {
        max_queries,
        state_dir,
        ..ServerConfig::new(config, index)
    };
    let report = run_server(&server, &mut listener, &connector)?;
    println!(
        "server {index}: served {} of {} queries, refused {} connections",
        report.served(),
        report.queries.len(),
        report.rejected_connections
    );
    Ok(())
}

pub fn deal(queries: u64, args: &SessionArgs) -> CmdResult {
    let config = session_config(args)?;
    need_servers(&config)?;
    let budget = run_dealer(&config, &connector(&config), queries)?;
    println!(
        "dealt {} arithmetic and {} boolean triples to each of {} servers",
        budget.arith, budget.boolean, config.parties
    );
    Ok(())
}

pub fn predict(input: &InputArgs, count: usize, args: &SessionArgs) -> CmdResult {
    let base = session_config(args)?;
    need_servers(&base)?;
    let queries = query_inputs(input, count)?;
    let mut correct = 0usize;
    for (k, (x, label)) in queries.iter().enumerate() {
        let config = SessionConfig {
            session: SessionId(base.session.0 + k as u64),
            seed: base.seed.map(|s| s.wrapping_add(k as u64)),
            ..base.clone()
        };
        let result = run_client(&config, &connector(&config), x)?;
        match label {
            Some(l) => {
                correct += usize::from(result.class == *l as usize);
                println!(
                    "image {}: class {} label {l} output {}",
                    input.index + k,
                    result.class,
                    join(&result.output)
                );
            }
            None => println!("class {} output {}", result.class, join(&result.output)),
        }
    }
    if queries.len() > 1 && queries[0].1.is_some() {
        println!("accuracy: {correct}/{}", queries.len());
    }
    Ok(())
}

pub fn reconstruct(paths: &[PathBuf], out: Option<&Path>) -> CmdResult {
    for p in paths {
        require_file(p)?;
    }
    let inputs: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
    let blobs = paths.iter().map(fs::read).collect::<Result<Vec<_>, _>>()?;
    if blobs.iter().all(|b| b.starts_with(MODEL_SHARE_MAGIC)) {
        let out = out.ok_or_else(|| Failure::usage("model shares need --out"))?;
        check_output(out, &inputs)?;
        let shares = blobs
            .iter()
            .map(|b| SharedModel::from_bytes(b))
            .collect::<Result<Vec<_>, _>>()?;
        let model = reconstruct_model(&shares)?;
        write_atomic(out, &quantized_to_bytes(&model))?;
        println!("wrote {}", out.display());
        return Ok(());
    }
    if out.is_some() {
        return Err(Failure::usage("--out applies to model shares only"));
    }
    let shares = blobs
        .iter()
        .map(|b| ShareVector::from_bytes(b))
        .collect::<Result<Vec<_>, _>>()?;
    let m = shares[0].modulus();
    let values: Vec<i128> = reconstruct_vector(&shares)?.into_iter().map(|v| m.decode(v)).collect();
    println!("values: {}", join(&values));
    if let Some(k) = bnn::argmax(&values) {
        println!("argmax: {k}");
    }
    Ok(())
}
