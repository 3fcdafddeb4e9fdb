//! Privacy-preserving language modeling toolkit.
//!
//! Builds identifier blacklists from a multi-patient corpus, derives masked
//! and causal training plans that never put a blacklisted word in the loss,
//! trains a tiny attention language model under each scheme, and audits the
//! result for identifier leakage and membership inference.
//!
//! Runnable walkthroughs live in `examples/`:
//!
//! ```bash
//! cargo run --example blacklist
//! cargo run --example mlm_tradeoff
//! ```

pub mod attacks;
pub mod corpus;
pub mod error;
pub mod evalmetrics;
pub mod experiment;
pub mod identify;
pub mod maskplan;
pub mod pipeline;
pub mod tinylm;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
