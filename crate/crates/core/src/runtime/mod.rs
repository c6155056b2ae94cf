//! Session orchestration for the four roles: a trainer that uploads model
//! shares, a dealer that streams triples, `n` servers that evaluate queries in
//! lock-step, and a client that shares its input and reconstructs the output.
//!
//! Every connection to a server opens with a `HELLO` whose sender byte names
//! the connecting role. After that, one of three flows follows:
//!
//! * trainer: one `MODEL_SHARE`, answered with `ACK`;
//! * dealer: any number of `TRIPLE_BATCH`, each answered with `ACK`;
//! * client: one `QUERY_SHARE`, answered with `OUTPUT_SHARE` or `ERROR`.
//!
//! Anything else is answered with `ERROR` and the connection is dropped.

mod config;
mod roles;
mod server;
mod transport;

pub use config::{Hello, Role, SessionConfig, DEFAULT_TIMEOUT, MAX_SERVERS};
pub use roles::{run_client, run_dealer, run_trainer, ClientResult};
pub use server::{run_server, QueryRecord, ServerConfig, ServerReport, MODEL_SHARE_FILE};
pub use transport::{Connector, LoopbackListener, LoopbackNet, Listener, TcpConnector, TcpServerListener};

#[cfg(test)]
mod tests;
