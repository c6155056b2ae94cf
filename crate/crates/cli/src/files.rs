use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use obnn::runtime::SessionConfig;
use obnn::sharing::SessionId;
use obnn::RingModulus;

use crate::SessionArgs;

/// Exit status for a missing input or a bad invocation.
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_FAILURE: u8 = 1;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Display) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.to_string(),
        }
    }

    pub fn failed(message: impl Display) -> Self {
        Failure {
            code: EXIT_FAILURE,
            message: message.to_string(),
        }
    }
}

impl From<obnn::Error> for Failure {
    fn from(e: obnn::Error) -> Self {
        Failure::failed(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::failed(format!("{e:#}"))
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::failed(e)
    }
}

pub type CmdResult = Result<(), Failure>;

pub fn require_file(path: &Path) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::usage(format!("input file {} does not exist", path.display())))
    }
}

pub fn require_mnist(dir: &Path, prefixes: &[&str]) -> Result<(), Failure> {
    for p in prefixes {
        for kind in ["images-idx3", "labels-idx1"] {
            require_file(&dir.join(format!("{p}-{kind}-ubyte")))?;
        }
    }
    Ok(())
}

/// Checks that `out` can be written and does not name one of the inputs.
pub fn check_output(out: &Path, inputs: &[&Path]) -> Result<(), Failure> {
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    if !parent.is_dir() {
        return Err(Failure::usage(format!("output directory {} does not exist", parent.display())));
    }
    if out.is_dir() {
        return Err(Failure::usage(format!("output {} is a directory", out.display())));
    }
    let canonical = |p: &Path| fs::canonicalize(p).ok();
    let target = canonical(out);
    if target.is_some() && inputs.iter().any(|i| canonical(i) == target) {
        return Err(Failure::usage(format!("refusing to overwrite input file {}", out.display())));
    }
    Ok(())
}

pub fn check_output_dir(dir: &Path) -> Result<(), Failure> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(Failure::usage(format!("output directory {} does not exist", dir.display())))
    }
}

/// Writes through a temporary sibling so a failed run leaves nothing behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).and_then(|_| fs::rename(&tmp, path)).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Failure::failed(format!("cannot write {}: {e}", path.display()))
    })
}

pub fn read_vector(path: &Path) -> Result<Vec<i64>, Failure> {
    require_file(path)?;
    let text = fs::read_to_string(path)?;
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<i64>()
                .map_err(|e| Failure::usage(format!("{}: bad integer {t:?}: {e}", path.display())))
        })
        .collect()
}

pub fn modulus(bits: u32) -> Result<RingModulus, Failure> {
    RingModulus::new(bits).map_err(Failure::usage)
}

pub fn session_config(args: &SessionArgs) -> Result<SessionConfig, Failure> {
    let mut config = match &args.config {
        Some(path) => {
            require_file(path)?;
            SessionConfig::load(path).map_err(Failure::usage)?
        }
        None => SessionConfig::default(),
    };
    if let Some(n) = args.parties {
        config.parties = n;
    }
    if let Some(bits) = args.modulus_bits {
        config.modulus = modulus(bits)?;
    }
    if let Some(s) = args.session {
        config.session = SessionId(s);
    }
    if let Some(servers) = &args.connect {
        config.servers = servers.clone();
    }
    if let Some(seed) = args.seed {
        config.seed = Some(seed);
    }
    if let Some(ms) = args.timeout_ms {
        config.timeout = Duration::from_millis(ms);
    }
    config.validate().map_err(Failure::usage)?;
    Ok(config)
}

pub fn need_servers(config: &SessionConfig) -> Result<(), Failure> {
    if config.servers.is_empty() {
        return Err(Failure::usage("no server endpoints; pass --connect or set servers in --config"));
    }
    Ok(())
}

pub fn join<T: Display>(values: &[T]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}
