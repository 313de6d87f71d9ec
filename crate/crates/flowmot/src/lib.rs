//! flowmot: a desk-scale vision-language-action policy stack.
//!
//! Two transformer pathways (observation and action expert) share one
//! blockwise-causal self-attention; action chunks are generated by flow
//! matching; spatial awareness comes from depth-query distillation against
//! a synthetic teacher. Around the model sit a verified-gradient tensor
//! engine, an episode data pipeline, a deterministic 2-D dual-arm toy
//! environment with scripted experts, an SR/PS evaluation protocol, and a
//! dense-vs-block-structured attention benchmark.
//!
//! Start with the runnable examples (`cargo run --example ...`) or the
//! `flowmot` binary (`collect | train | eval | bench`).

pub mod error;
pub mod bench;
pub mod cli;
pub mod config;
pub mod data;
pub mod depth;
pub mod env;
pub mod eval;
pub mod flow;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
