//! Message transport: wire format, links, peer meshes and transcripts.

pub mod link;
pub mod mesh;
pub mod transcript;
pub mod wire;

pub use link::{fragmented_link_pair, memory_link_pair, stream_link, tcp_link, ChannelLink, Link};
pub use mesh::{fragmented_mesh, memory_mesh, mesh_from_pairs, PeerMesh};
pub use transcript::{Direction, Transcript, TranscriptEntry, TranscriptRecorder};
pub use wire::{MessageKind, WireMessage, HEADER_LEN};
