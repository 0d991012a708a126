//! Drives a session engine from a recording and a timed command script.

use std::io::BufRead;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, EngineConfig};
use crate::model::PoseFrame;
use crate::session::{Command, HopOutput, SessionEngine, SessionError, SessionReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pacing {
    /// As fast as possible.
    #[default]
    Fast,
    /// Sleeps so that frames are delivered at their recorded timestamps.
    Realtime,
}

/// A command applied at a stream timestamp. On disk one JSON object per
/// line, e.g. `{"t": 3.0, "cmd": "teach_start", "label": "anger"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedCommand {
    pub t: f64,
    #[serde(flatten)]
    pub command: Command,
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("script line {line}: invalid command")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("script line {line}: time {t} is earlier than the previous command")]
    OutOfOrder { line: usize, t: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn read_script<R: BufRead>(reader: R) -> Result<Vec<ScriptedCommand>, ScriptError> {
    let mut out: Vec<ScriptedCommand> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cmd: ScriptedCommand =
            serde_json::from_str(&line).map_err(|source| ScriptError::Parse {
                line: i + 1,
                source,
            })?;
        if out.last().is_some_and(|prev| cmd.t < prev.t) {
            return Err(ScriptError::OutOfOrder {
                line: i + 1,
                t: cmd.t,
            });
        }
        out.push(cmd);
    }
    Ok(out)
}

/// Script used when none is given: start the session at the first frame.
pub fn default_script(frames: &[PoseFrame]) -> Vec<ScriptedCommand> {
    frames
        .first()
        .map(|f| ScriptedCommand {
            t: f.timestamp,
            command: Command::Start,
        })
        .into_iter()
        .collect()
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("frame at t = {t} rejected")]
    Frame {
        t: f64,
        #[source]
        source: SessionError,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectedCommand {
    pub t: f64,
    pub command: Command,
    pub error: SessionError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub report: SessionReport,
    pub rejected: Vec<RejectedCommand>,
    pub hops: u64,
}

/// Replays `frames` through a fresh engine. Commands due at or before a
/// frame's timestamp are applied before that frame; the rest after the
/// last frame. `on_hop` observes every hop output in order.
pub fn replay(
    frames: &[PoseFrame],
    script: &[ScriptedCommand],
    config: &EngineConfig,
    pacing: Pacing,
    mut on_hop: impl FnMut(&HopOutput),
) -> Result<ReplayOutcome, ReplayError> {
    let mut engine = SessionEngine::new(config.clone())?;
    let mut rejected = Vec::new();
    let mut pending = script.iter().peekable();
    let clock = Instant::now();
    let origin = frames.first().map_or(0.0, |f| f.timestamp);
    let mut hops = 0;

    let mut apply = |engine: &mut SessionEngine, sc: &ScriptedCommand| {
        if let Err(error) = engine.command(sc.command.clone(), sc.t) {
            tracing::warn!(t = sc.t, cmd = sc.command.name(), %error, "command rejected");
            rejected.push(RejectedCommand {
                t: sc.t,
                command: sc.command.clone(),
                error,
            });
        }
    };

    for frame in frames {
        while let Some(sc) = pending.next_if(|sc| sc.t <= frame.timestamp) {
            apply(&mut engine, sc);
        }
        if pacing == Pacing::Realtime {
            let due = Duration::from_secs_f64((frame.timestamp - origin).max(0.0));
            if let Some(wait) = due.checked_sub(clock.elapsed()) {
                std::thread::sleep(wait);
            }
        }
        let outputs = engine
            .push_frame(frame)
            .map_err(|source| ReplayError::Frame {
                t: frame.timestamp,
                source,
            })?;
        for out in outputs {
            hops += 1;
            on_hop(&out);
        }
    }
    for sc in pending {
        apply(&mut engine, sc);
    }
    Ok(ReplayOutcome {
        report: engine.finish(),
        rejected,
        hops,
    })
}
