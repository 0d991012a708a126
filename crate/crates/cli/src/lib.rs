//! Command-line front end: serve, replay, synth, eval and cosmos tools.

pub mod serve;
pub mod wire;
