use std::path::Path;
use std::time::Duration;

use crate::bnn::ModelMeta;
use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::net::wire::{SENDER_CLIENT, SENDER_DEALER, SENDER_TRAINER};
use crate::ring::RingModulus;
use crate::sharing::SessionId;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// Sender bytes from `0xf0` up name the non-server roles.
pub const MAX_SERVERS: usize = SENDER_CLIENT as usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Trainer,
    Client,
    Server(usize),
    Dealer,
}

impl Role {
    /// The sender byte used in wire headers.
    pub fn sender(self) -> u8 {
        match self {
            Role::Trainer => SENDER_TRAINER,
            Role::Client => SENDER_CLIENT,
            Role::Dealer => SENDER_DEALER,
            Role::Server(i) => i as u8,
        }
    }

    pub fn from_sender(sender: u8, parties: usize) -> Result<Role> {
        match sender {
            SENDER_TRAINER => Ok(Role::Trainer),
            SENDER_CLIENT => Ok(Role::Client),
            SENDER_DEALER => Ok(Role::Dealer),
            i if (i as usize) < parties => Ok(Role::Server(i as usize)),
            other => Err(Error::UnexpectedMessage(format!("unknown sender {other:#04x}"))),
        }
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Role::Trainer => f.write_str("trainer"),
            Role::Client => f.write_str("client"),
            Role::Dealer => f.write_str("dealer"),
            Role::Server(i) => write!(f, "server {i}"),
        }
    }
}

/// Parameters every role of a deployment must agree on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SessionConfig {
    pub session: SessionId,
    pub parties: usize,
    pub modulus: RingModulus,
    /// Server endpoints, indexed by server.
    pub servers: Vec<String>,
    /// Expected model metadata digest, if known in advance.
    pub model_digest: Option<[u8; 32]>,
    /// Fixes all sharing randomness; for tests and reproducible benchmarks only.
    pub seed: Option<u64>,
    pub timeout: Duration,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            session: SessionId(1),
            parties: 2,
            modulus: RingModulus::M32,
            servers: Vec::new(),
            model_digest: None,
            seed: None,
            timeout: DEFAULT_TIMEOUT,
        }
    }
}

impl SessionConfig {
    pub fn new(session: SessionId, parties: usize, modulus: RingModulus) -> Self {
        SessionConfig {
            session,
            parties,
            modulus,
            ..SessionConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=MAX_SERVERS).contains(&self.parties) {
            return Err(Error::Config(format!(
                "need between 2 and {} servers, got {}",
                MAX_SERVERS,
                self.parties
            )));
        }
        if !self.servers.is_empty() && self.servers.len() != self.parties {
            return Err(Error::Config(format!(
                "{} server endpoints for {} servers",
                self.servers.len(),
                self.parties
            )));
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are skipped.
    ///
    /// Keys: `session`, `parties`, `modulus_bits`, `servers` (comma separated),
    /// `model_digest` (hex), `seed`, `timeout_ms`.
    pub fn apply_kv(mut self, text: &str) -> Result<Self> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| Error::Config(format!("line {}: invalid {what} {value:?}", lineno + 1));
            match key {
                "session" => self.session = SessionId(value.parse().map_err(|_| bad("session"))?),
                "parties" => self.parties = value.parse().map_err(|_| bad("party count"))?,
                "modulus_bits" => {
                    let bits: u32 = value.parse().map_err(|_| bad("modulus width"))?;
                    self.modulus = RingModulus::new(bits)?;
                }
                "servers" => {
                    self.servers = value
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(String::from)
                        .collect()
                }
                "model_digest" => {
                    let mut digest = [0u8; 32];
                    hex::decode_to_slice(value, &mut digest).map_err(|_| bad("digest"))?;
                    self.model_digest = Some(digest);
                }
                "seed" => self.seed = Some(value.parse().map_err(|_| bad("seed"))?),
                "timeout_ms" => self.timeout = Duration::from_millis(value.parse().map_err(|_| bad("timeout"))?),
                other => return Err(Error::Config(format!("line {}: unknown key {other:?}", lineno + 1))),
            }
        }
        self.validate()?;
        Ok(self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        SessionConfig::default().apply_kv(&std::fs::read_to_string(path)?)
    }

    pub fn to_kv(&self) -> String {
        let mut out = format!(
            "session = {}\nparties = {}\nmodulus_bits = {}\ntimeout_ms = {}\n",
            self.session.0,
            self.parties,
            self.modulus.bits(),
            self.timeout.as_millis()
        );
        if !self.servers.is_empty() {
            out.push_str(&format!("servers = {}\n", self.servers.join(",")));
        }
        if let Some(d) = self.model_digest {
            out.push_str(&format!("model_digest = {}\n", hex::encode(d)));
        }
        if let Some(s) = self.seed {
            out.push_str(&format!("seed = {s}\n"));
        }
        out
    }
}

const HELLO_DIGEST: u8 = 1;
const HELLO_META: u8 = 2;

/// Payload of a `HELLO`: the sender's view of the deployment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Hello {
    pub parties: usize,
    pub modulus: RingModulus,
    pub digest: Option<[u8; 32]>,
    /// Sent by servers that hold a model.
    pub meta: Option<ModelMeta>,
}

impl Hello {
    pub fn from_config(config: &SessionConfig) -> Self {
        Hello {
            parties: config.parties,
            modulus: config.modulus,
            digest: config.model_digest,
            meta: None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        let flags = self.digest.map_or(0, |_| HELLO_DIGEST) | self.meta.as_ref().map_or(0, |_| HELLO_META);
        w.put_u8(self.parties as u8).put_u8(self.modulus.bits() as u8).put_u8(flags);
        if let Some(d) = &self.digest {
            w.put_bytes(d);
        }
        if let Some(m) = &self.meta {
            w.put_bytes(&m.to_bytes());
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let parties = r.get_u8()? as usize;
        let modulus = RingModulus::new(r.get_u8()? as u32).map_err(|e| Error::Format(e.to_string()))?;
        let flags = r.get_u8()?;
        if flags & !(HELLO_DIGEST | HELLO_META) != 0 {
            return Err(Error::Format(format!("unknown HELLO flags {flags:#04x}")));
        }
        let digest = if flags & HELLO_DIGEST != 0 {
            Some(r.take(32)?.try_into().expect("32 bytes"))
        } else {
            None
        };
        let meta = if flags & HELLO_META != 0 {
            Some(ModelMeta::from_reader(&mut r)?)
        } else {
            None
        };
        r.finish()?;
        Ok(Hello {
            parties,
            modulus,
            digest,
            meta,
        })
    }

    /// Checks that `other` describes the same deployment.
    pub fn check_compatible(&self, other: &Hello) -> Result<()> {
        if self.parties != other.parties {
            return Err(Error::Config(format!(
                "peer expects {} servers, this side {}",
                other.parties, self.parties
            )));
        }
        self.modulus.check_same(other.modulus)?;
        let digests = [
            self.digest.or(self.meta.as_ref().map(ModelMeta::digest)),
            other.digest.or(other.meta.as_ref().map(ModelMeta::digest)),
        ];
        if let [Some(a), Some(b)] = digests {
            if a != b {
                return Err(Error::Config("model digests differ".into()));
            }
        }
        Ok(())
    }
}
