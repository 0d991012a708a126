//! Movement-driven affect engine: pose post-processing, movement features,
//! emotion recommenders, media control output and session summaries.

pub mod config;
pub mod cosmos;
pub mod features;
pub mod harness;
pub mod model;
pub mod output;
pub mod pipeline;
pub mod recommend;
pub mod session;

pub use config::{load_config, EngineConfig};
pub use session::{Command, Phase, SessionEngine, SessionReport};
