//! Headless tooling: synthetic recordings, replay and evaluation.

pub mod eval;
pub mod replay;
pub mod synth;
