//! Simulation lab for multi-source vs. single-source conditional maximum
//! likelihood estimation.
//!
//! The crate compares two training strategies for conditional generative
//! models over `K` data sources: *multi-source* training (one model, shared
//! parameters plus a per-source component) and *single-source* training
//! (`K` independent models). It provides:
//!
//! - analytic conditional Gaussian MLE with exact and Monte-Carlo average
//!   total-variation error ([`gaussian`]);
//! - a from-scratch conditional autoregressive model over token sequences,
//!   trained by minibatch gradient descent with hand-derived gradients and
//!   evaluated by exact enumeration of the discrete support ([`arm`]);
//! - closed-form distribution-estimation error bounds and
//!   bracketing/covering-number calculators, all in natural-log domain
//!   ([`bounds`]);
//! - numerical verification of the bracket constructions behind those
//!   bounds ([`bracketing`]);
//! - a config-driven sweep runner with CSV/SVG emission and a self-test
//!   suite ([`experiments`]).
//!
//! Every stochastic operation takes an [`rng::RngStream`], a value type
//! addressed by `(master_seed, path)`; replaying a stream reproduces
//! bit-identical output, which makes whole sweeps deterministic even when
//! cells run in parallel.

pub mod arm;
pub mod bounds;
pub mod bracketing;
pub mod data;
pub mod error;
pub mod experiments;
pub mod gaussian;
pub mod mlp;
pub mod rng;

pub use error::{Error, Result};
pub use rng::RngStream;
