//! Oblivious inference of integer-quantized binarized neural networks over
//! additive secret shares.
//!
//! The plaintext reference lives in [`bnn`]; [`secure_bnn`] evaluates the same
//! computation on shares held by `n` servers, using triples from [`dealer`]
//! and the interactive primitives in [`protocols`]. [`runtime`] wires the
//! trainer, client, server and dealer roles together over [`net`] links.

pub mod bits;
pub mod bnn;
pub mod circuit;
pub mod codec;
pub mod dealer;
pub mod error;
pub mod local;
pub mod net;
pub mod protocols;
pub mod ring;
pub mod runtime;
pub mod secure_bnn;
pub mod sharing;

pub use error::{Error, Result};
pub use ring::{decode, encode, RingElement, RingModulus, SignedInt};
