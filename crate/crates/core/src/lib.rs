//! Secure-key-rate analysis for BB84 with emitters on a truncated photon-number basis.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod channel_model;
pub mod error;
pub mod ingest;
pub mod montecarlo;
pub mod numeric;
pub mod photon_source;
pub mod presets;
pub mod protocols;

pub use error::{QkdError, Result};
