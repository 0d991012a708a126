//! Scripted teach-then-recognize sessions on synthetic archetypes.

use serde::Serialize;
use thiserror::Error;

use super::replay::{replay, Pacing, ReplayError, ScriptedCommand};
use super::synth::{synth_session, GestureArchetype, SynthError, SynthSegment};
use crate::config::EngineConfig;
use crate::model::{EmotionLabel, FrameSource, FrameValidator, PoseFrame};
use crate::session::{Command, Phase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    /// The four default archetypes, one person.
    Basic,
}

impl std::str::FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "basic" => Ok(Suite::Basic),
            other => Err(format!("unknown suite {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub suite: Suite,
    pub seed: u64,
    pub persons: usize,
    pub preparation_s: f64,
    pub segment_s: f64,
    /// Exploration segment `k` uses seed `seed + explore_seed_offset + k`.
    pub explore_seed_offset: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            suite: Suite::Basic,
            seed: 1,
            persons: 1,
            preparation_s: 3.0,
            segment_s: 20.0,
            explore_seed_offset: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub suite: Suite,
    pub seed: u64,
    pub labels: Vec<EmotionLabel>,
    /// `confusion[truth][predicted]`, counted over exploration windows.
    pub confusion: [[u64; 4]; 4],
    pub per_label_accuracy: [f64; 4],
    pub accuracy: f64,
    pub mean_confidence: f64,
    pub windows: u64,
    /// Exploration windows whose top label was a taught, non-predefined one.
    pub other: u64,
    pub rejected_commands: usize,
}

impl EvalReport {
    pub fn min_label_accuracy(&self) -> f64 {
        self.per_label_accuracy
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

struct Span {
    label: usize,
    start: f64,
    end: f64,
}

/// Runs the suite: preparation, one teaching segment per archetype (seeds
/// `s..s+3`), then one exploration segment per archetype with fresh seeds.
/// Accuracy counts exploration hops whose whole window lies inside a single
/// segment.
pub fn run_eval(config: &EngineConfig, options: &EvalOptions) -> Result<EvalReport, EvalError> {
    let labels = EmotionLabel::PREDEFINED.to_vec();
    let archetypes: Vec<GestureArchetype> = labels
        .iter()
        .map(GestureArchetype::default_for)
        .collect::<Result<_, _>>()?;
    let seg = |k: usize, seed: u64, duration_s: f64| SynthSegment {
        archetype: archetypes[k].clone(),
        duration_s,
        seed,
    };

    let mut segments = vec![seg(
        1,
        options.seed.wrapping_add(100),
        options.preparation_s,
    )];
    let mut script = vec![ScriptedCommand {
        t: 0.0,
        command: Command::Start,
    }];
    let mut t = options.preparation_s;
    for (k, label) in labels.iter().enumerate() {
        segments.push(seg(
            k,
            options.seed.wrapping_add(k as u64),
            options.segment_s,
        ));
        script.push(ScriptedCommand {
            t,
            command: Command::TeachStart {
                label: label.clone(),
            },
        });
        t += options.segment_s;
        script.push(ScriptedCommand {
            t,
            command: Command::TeachEnd,
        });
    }
    script.push(ScriptedCommand {
        t,
        command: Command::Explore,
    });
    let mut spans = Vec::new();
    for k in 0..labels.len() {
        let seed = options
            .seed
            .wrapping_add(options.explore_seed_offset + k as u64);
        segments.push(seg(k, seed, options.segment_s));
        spans.push(Span {
            label: k,
            start: t,
            end: t + options.segment_s,
        });
        t += options.segment_s;
    }
    script.push(ScriptedCommand {
        t,
        command: Command::End,
    });

    let raw = synth_session(&segments, options.persons)?;
    let mut validator = FrameValidator::new(config.max_persons);
    let frames: Vec<PoseFrame> = raw
        .iter()
        .map(|r| validator.validate(r, FrameSource::Synthetic).map(|v| v.0))
        .collect::<Result<_, _>>()
        .expect("generated frames are valid");

    let mut confusion = [[0u64; 4]; 4];
    let (mut other, mut confidence_sum, mut windows) = (0u64, 0.0, 0u64);
    let window_s = config.window_s;
    let outcome = replay(&frames, &script, config, Pacing::Fast, |hop| {
        if hop.phase != Phase::Exploration {
            return;
        }
        let Some(span) = spans
            .iter()
            .find(|s| hop.t - window_s >= s.start - 1e-9 && hop.t < s.end - 1e-9)
        else {
            return;
        };
        for p in &hop.persons {
            let predicted = p.estimate.top();
            windows += 1;
            confidence_sum += p.estimate.confidence;
            match predicted {
                k if k < 4 => confusion[span.label][k] += 1,
                _ => other += 1,
            }
        }
    })?;

    let mut per_label_accuracy = [0.0; 4];
    for (k, row) in confusion.iter().enumerate() {
        let total: u64 = row.iter().sum();
        per_label_accuracy[k] = if total == 0 {
            0.0
        } else {
            row[k] as f64 / total as f64
        };
    }
    let correct: u64 = (0..4).map(|k| confusion[k][k]).sum();
    Ok(EvalReport {
        suite: options.suite,
        seed: options.seed,
        labels,
        confusion,
        per_label_accuracy,
        accuracy: if windows == 0 {
            0.0
        } else {
            correct as f64 / windows as f64
        },
        mean_confidence: if windows == 0 {
            0.0
        } else {
            confidence_sum / windows as f64
        },
        windows,
        other,
        rejected_commands: outcome.rejected.len(),
    })
}
