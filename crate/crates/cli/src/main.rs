use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod bench;
mod commands;
mod files;
mod selftest;

use files::Failure;

/// Oblivious inference of binarized neural networks over additive secret shares.
#[derive(Parser, Debug)]
#[command(name = "obnn", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Session parameters shared by the multi-party commands. A `--config` file is
/// applied first; explicit flags override it.
#[derive(Args, Debug, Clone, Default)]
pub struct SessionArgs {
    /// key=value file (session, parties, modulus_bits, servers, model_digest, seed, timeout_ms).
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Number of computing servers.
    #[arg(long)]
    pub parties: Option<usize>,
    /// Ring width m; one of 8, 16, 32, 64.
    #[arg(long)]
    pub modulus_bits: Option<u32>,
    /// Session identifier. Every query needs a fresh one.
    #[arg(long)]
    pub session: Option<u64>,
    /// Comma-separated server endpoints, ordered by server index.
    #[arg(long, value_name = "HOST:PORT,...", value_delimiter = ',')]
    pub connect: Option<Vec<String>>,
    /// Seeds all sharing randomness (tests and benchmarks only).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Network timeout in milliseconds.
    #[arg(long)]
    pub timeout_ms: Option<u64>,
}

/// Where a query vector comes from.
#[derive(Args, Debug, Clone)]
pub struct InputArgs {
    /// Text file of integers separated by whitespace or commas.
    #[arg(long, value_name = "PATH", conflicts_with = "dataset")]
    pub input: Option<PathBuf>,
    /// MNIST directory; queries are read from the test split.
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<PathBuf>,
    /// First test image to use with `--dataset`.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a real-valued BNN on MNIST and write it in MOB1 format.
    Train {
        /// MNIST directory holding the IDX files.
        #[arg(long, value_name = "DIR")]
        dataset: PathBuf,
        /// Layer widths, input first.
        #[arg(long, value_delimiter = ',', default_value = "784,128,128,10")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        epochs: usize,
        /// Use only the first N training images.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Fold and quantize batch normalization to integers.
    Quantize {
        /// Real-valued model (MOB1).
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        /// Quantization scale.
        #[arg(long, default_value_t = obnn::bnn::DEFAULT_Q)]
        q: u64,
        /// Ring width; defaults to the smallest one that cannot overflow.
        #[arg(long)]
        modulus_bits: Option<u32>,
        /// Largest absolute input value.
        #[arg(long, default_value_t = obnn::bnn::PIXEL_MAX)]
        input_bound: u64,
        /// MNIST directory; reports float vs integer test accuracy.
        #[arg(long, value_name = "DIR")]
        dataset: Option<PathBuf>,
        /// Evaluate on the first N test images only.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Split a quantized model into one share per server, to files or straight to running servers.
    ShareModel {
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        #[arg(long, default_value_t = obnn::bnn::PIXEL_MAX)]
        input_bound: u64,
        /// Output directory for `model-share-<i>.bin`; omit to upload via `--connect`.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[command(flatten)]
        session: SessionArgs,
    },
    /// Split a query into one share per server.
    ShareInput {
        /// Quantized model, used only for its metadata.
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        #[command(flatten)]
        input: InputArgs,
        /// Output directory for `query-share-<i>.bin`.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[command(flatten)]
        session: SessionArgs,
    },
    /// Run computing server `--index`.
    Serve {
        #[arg(long)]
        index: usize,
        /// Address to accept connections on.
        #[arg(long, value_name = "HOST:PORT")]
        listen: String,
        /// Keeps the model share across restarts.
        #[arg(long, value_name = "DIR")]
        state_dir: Option<PathBuf>,
        /// Exit after this many queries.
        #[arg(long)]
        max_queries: Option<usize>,
        #[command(flatten)]
        session: SessionArgs,
    },
    /// Supply multiplication triples for a number of queries.
    Deal {
        #[arg(long, default_value_t = 1)]
        queries: u64,
        #[command(flatten)]
        session: SessionArgs,
    },
    /// Query the servers and print the reconstructed output.
    Predict {
        #[command(flatten)]
        input: InputArgs,
        /// Number of consecutive test images (with `--dataset`); query k uses session + k.
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[command(flatten)]
        session: SessionArgs,
    },
    /// Combine share files: model shares into a model, vector shares into values.
    Reconstruct {
        /// One share file per party.
        #[arg(required = true, value_name = "SHARE")]
        shares: Vec<PathBuf>,
        /// Output path for a reconstructed model.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Time secure inference over a range of hidden widths.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "32,64,128,256")]
        widths: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        trials: usize,
        #[arg(long, default_value_t = 2)]
        parties: usize,
        #[arg(long, default_value_t = 32)]
        modulus_bits: u32,
        #[arg(long, value_enum, default_value_t = TransportKind::Loopback)]
        transport: TransportKind,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output directory for `bench.csv` and `bench.gp`.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Check the protocols exhaustively at m=8 and against plaintext inference.
    Selftest {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransportKind {
    /// In-process channels.
    Loopback,
    /// In-process channels that split every message into random fragments.
    Fragmented,
    /// Real sockets on 127.0.0.1.
    Tcp,
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train {
            dataset,
            sizes,
            epochs,
            limit,
            seed,
            out,
        } => commands::train(&dataset, &sizes, epochs, limit, seed, &out),
        Command::Quantize {
            model,
            q,
            modulus_bits,
            input_bound,
            dataset,
            limit,
            out,
        } => commands::quantize(&model, q, modulus_bits, input_bound, dataset.as_deref(), limit, &out),
        Command::ShareModel {
            model,
            input_bound,
            out,
            session,
        } => commands::share_model(&model, input_bound, out.as_deref(), &session),
        Command::ShareInput {
            model,
            input,
            out,
            session,
        } => commands::share_input(&model, &input, &out, &session),
        Command::Serve {
            index,
            listen,
            state_dir,
            max_queries,
            session,
        } => commands::serve(index, &listen, state_dir, max_queries, &session),
        Command::Deal { queries, session } => commands::deal(queries, &session),
        Command::Predict { input, count, session } => commands::predict(&input, count, &session),
        Command::Reconstruct { shares, out } => commands::reconstruct(&shares, out.as_deref()),
        Command::Bench {
            widths,
            trials,
            parties,
            modulus_bits,
            transport,
            seed,
            out,
        } => bench::run(&widths, trials, parties, modulus_bits, transport, seed, &out),
        Command::Selftest { seed, inject_fault } => selftest::run(seed, inject_fault),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
