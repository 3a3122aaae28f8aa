//! Distributionally robust training for binary text classification.
//!
//! The crate is organized around five pieces:
//!
//! - [`projections`]: Euclidean projection kernels (scaled simplex, Lp balls,
//!   Dykstra intersections) with brute-force oracles for testing.
//! - [`net`]: a small neural core (linear head, 2-layer bidirectional LSTM,
//!   dropout, representation projection) with hand-written backward passes
//!   verified against finite differences.
//! - [`dro`]: worst-case sample reweighting over an uncertainty set around
//!   the uniform batch weights, and the robust loss it induces.
//! - [`data`]: corpus ingestion, label thresholding, tokenization,
//!   featurization and batching.
//! - [`pipeline`]: training (plain and robust), evaluation, the radius-sweep
//!   experiment harness and report emission.

pub mod error;
pub mod net;
pub mod projections;
pub mod tensor;

pub use error::{Error, Result};
