//! Procedural skeleton animator producing deterministic recordings.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{EmotionLabel, RawFrame, RawPerson, KEYPOINT_COUNT, MAX_PERSONS};

pub const SYNTH_FPS: f64 = 30.0;

/// Torso length of a generated skeleton, in image units.
const BODY_LENGTH: f64 = 0.12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureArchetype {
    pub label: EmotionLabel,
    /// 0 = arms at the sides, 1 = arms stretched horizontally.
    pub arm_spread: f64,
    /// Initial crouch, 0 = upright, 1 = deep crouch.
    pub crouch: f64,
    /// Oscillation amplitude in body lengths.
    pub amplitude: f64,
    /// Oscillation frequency in Hz.
    pub frequency: f64,
    /// 0 = sinusoidal motion, 1 = square motion with random jolts.
    pub jerk: f64,
    /// Crouch increase per second.
    pub drift: f64,
    /// Keypoint position noise, standard deviation in image units.
    pub noise: f64,
    /// Per-keypoint probability of a low-confidence detection.
    pub dropout: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("archetype parameter {field} = {value} is outside {range}")]
    Implausible {
        field: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("no default archetype for label {0:?}")]
    UnknownArchetype(String),
    #[error("between 1 and {MAX_PERSONS} persons are supported, got {0}")]
    Persons(usize),
    #[error("duration must be finite and non-negative")]
    Duration,
}

impl GestureArchetype {
    /// Default parameter set for a predefined emotion.
    pub fn default_for(label: &EmotionLabel) -> Result<Self, SynthError> {
        let base =
            |arm_spread, crouch, amplitude, frequency, jerk, drift, noise| GestureArchetype {
                label: label.clone(),
                arm_spread,
                crouch,
                amplitude,
                frequency,
                jerk,
                drift,
                noise,
                dropout: 0.01,
            };
        match label {
            EmotionLabel::Happiness => Ok(base(0.9, 0.0, 0.8, 2.0, 0.0, 0.0, 0.001)),
            EmotionLabel::Anger => Ok(base(0.45, 0.15, 0.6, 2.5, 0.9, 0.0, 0.0015)),
            EmotionLabel::Sadness => Ok(base(0.05, 0.3, 0.15, 0.3, 0.0, 0.05, 0.001)),
            EmotionLabel::Relaxation => Ok(base(0.55, 0.0, 0.4, 0.4, 0.0, 0.0, 0.001)),
            EmotionLabel::Taught(name) => Err(SynthError::UnknownArchetype(name.clone())),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let checks: [(&'static str, f64, f64, f64, &'static str); 8] = [
            ("arm_spread", self.arm_spread, 0.0, 1.0, "[0, 1]"),
            ("crouch", self.crouch, 0.0, 1.0, "[0, 1]"),
            (
                "amplitude",
                self.amplitude,
                0.0,
                1.5,
                "[0, 1.5] body lengths",
            ),
            ("frequency", self.frequency, 0.0, 5.0, "[0, 5] Hz"),
            ("jerk", self.jerk, 0.0, 1.0, "[0, 1]"),
            ("drift", self.drift, 0.0, 1.0, "[0, 1] per second"),
            ("noise", self.noise, 0.0, 0.05, "[0, 0.05]"),
            ("dropout", self.dropout, 0.0, 0.5, "[0, 0.5]"),
        ];
        for (field, value, lo, hi, range) in checks {
            if !(lo..=hi).contains(&value) {
                return Err(SynthError::Implausible {
                    field,
                    value,
                    range,
                });
            }
        }
        Ok(())
    }
}

/// One stretch of a generated session.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSegment {
    pub archetype: GestureArchetype,
    pub duration_s: f64,
    pub seed: u64,
}

fn waveform(phase: f64, jerk: f64) -> f64 {
    let s = phase.sin();
    (1.0 - jerk) * s + jerk * s.signum()
}

struct Actor {
    x: f64,
    phase: f64,
}

/// Keypoints of one skeleton in image coordinates (y grows downward).
fn pose(
    a: &GestureArchetype,
    x: f64,
    t: f64,
    phase: f64,
    jolt: (f64, f64),
) -> [(f64, f64); KEYPOINT_COUNT] {
    let l = BODY_LENGTH;
    let crouch = (a.crouch + a.drift * t).min(1.0);
    let phi = TAU * a.frequency * t + phase;
    let bounce = 0.5 * a.amplitude * waveform(phi, a.jerk);
    let sway = 0.3 * a.amplitude * waveform(0.5 * phi, a.jerk);

    let ground = 0.62 + 2.2 * l;
    let dx = sway * l + jolt.0;
    let dy = -bounce * l + jolt.1;
    let hip_y = 0.62 + 0.7 * crouch * l + dy;
    let hx = x + dx;
    let shoulder_y = hip_y - l;
    let shoulder_w = (0.35 - 0.1 * crouch) * l;
    let head_drop = 0.5 * crouch * l;

    let mut k = [(0.0, 0.0); KEYPOINT_COUNT];
    k[0] = (hx, shoulder_y - 0.45 * l + head_drop);
    k[1] = (hx - 0.08 * l, shoulder_y - 0.52 * l + head_drop);
    k[2] = (hx + 0.08 * l, shoulder_y - 0.52 * l + head_drop);
    k[3] = (hx - 0.15 * l, shoulder_y - 0.48 * l + head_drop);
    k[4] = (hx + 0.15 * l, shoulder_y - 0.48 * l + head_drop);
    k[5] = (hx - shoulder_w, shoulder_y);
    k[6] = (hx + shoulder_w, shoulder_y);

    // arm angle measured from hanging straight down
    let raise = a.arm_spread * 0.5 * PI + 0.6 * a.amplitude * waveform(phi, a.jerk) * a.arm_spread;
    let raise = raise.clamp(0.0, 0.8 * PI);
    for (side, (elbow, wrist, shoulder)) in [(-1.0, (7, 9, 5)), (1.0, (8, 10, 6))] {
        let s = k[shoulder];
        let e = (
            s.0 + side * 0.55 * l * raise.sin(),
            s.1 + 0.55 * l * raise.cos(),
        );
        let fore = (raise * 1.1).min(PI);
        k[elbow] = e;
        k[wrist] = (
            e.0 + side * 0.5 * l * fore.sin(),
            e.1 + 0.5 * l * fore.cos(),
        );
    }

    let knee_out = (0.22 + 0.3 * crouch) * l;
    for (side, (hip, knee, ankle)) in [(-1.0, (11, 13, 15)), (1.0, (12, 14, 16))] {
        k[hip] = (hx + side * 0.2 * l, hip_y);
        let ankle_y = ground + dy.min(0.0);
        k[ankle] = (hx + side * 0.22 * l, ankle_y);
        k[knee] = (hx + side * knee_out, (hip_y + ankle_y) / 2.0);
    }
    k
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

/// Generates a continuous recording made of consecutive segments, starting
/// at `t = 0` and sampled at [`SYNTH_FPS`]. Each person keeps its id and
/// horizontal slot across segments.
pub fn synth_session(
    segments: &[SynthSegment],
    persons: usize,
) -> Result<Vec<RawFrame>, SynthError> {
    if persons == 0 || persons > MAX_PERSONS {
        return Err(SynthError::Persons(persons));
    }
    let mut frames = Vec::new();
    let mut offset = 0usize;
    for seg in segments {
        seg.archetype.validate()?;
        if !seg.duration_s.is_finite() || seg.duration_s < 0.0 {
            return Err(SynthError::Duration);
        }
        let a = &seg.archetype;
        let mut rng = ChaCha8Rng::seed_from_u64(seg.seed);
        let noise = Normal::new(0.0, a.noise).expect("finite deviation");
        let actors: Vec<Actor> = (0..persons)
            .map(|i| Actor {
                x: (i + 1) as f64 / (persons + 1) as f64,
                phase: rng.gen_range(0.0..TAU),
            })
            .collect();
        let count = (seg.duration_s * SYNTH_FPS).round() as usize;
        for j in 0..count {
            let local_t = j as f64 / SYNTH_FPS;
            let t = round6((offset + j) as f64 / SYNTH_FPS);
            let mut raw = Vec::with_capacity(persons);
            for (id, actor) in actors.iter().enumerate() {
                let jolt = if rng.gen::<f64>() < 0.15 * a.jerk {
                    let m = 0.15 * BODY_LENGTH;
                    (rng.gen_range(-m..m), rng.gen_range(-m..m))
                } else {
                    (0.0, 0.0)
                };
                let kp = pose(a, actor.x, local_t, actor.phase, jolt)
                    .iter()
                    .map(|&(x, y)| {
                        let x = (x + noise.sample(&mut rng)).clamp(0.0, 1.0);
                        let y = (y + noise.sample(&mut rng)).clamp(0.0, 1.0);
                        let c = if rng.gen::<f64>() < a.dropout {
                            0.1
                        } else {
                            rng.gen_range(0.8..0.99)
                        };
                        [round6(x), round6(y), round6(c)]
                    })
                    .collect();
                raw.push(RawPerson { id: id as u32, kp });
            }
            frames.push(RawFrame { t, persons: raw });
        }
        offset += count;
    }
    Ok(frames)
}

/// Single-archetype recording.
pub fn synth(
    archetype: &GestureArchetype,
    persons: usize,
    duration_s: f64,
    seed: u64,
) -> Result<Vec<RawFrame>, SynthError> {
    synth_session(
        &[SynthSegment {
            archetype: archetype.clone(),
            duration_s,
            seed,
        }],
        persons,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn happy() -> GestureArchetype {
        GestureArchetype::default_for(&EmotionLabel::Happiness).unwrap()
    }

    #[test]
    fn defaults_are_plausible() {
        for label in EmotionLabel::PREDEFINED {
            GestureArchetype::default_for(&label)
                .unwrap()
                .validate()
                .unwrap();
        }
        assert!(GestureArchetype::default_for(&EmotionLabel::Taught("x".into())).is_err());
    }

    #[test]
    fn implausible_parameters_rejected() {
        let mut a = happy();
        a.amplitude = 2.0;
        assert!(matches!(
            a.validate(),
            Err(SynthError::Implausible {
                field: "amplitude",
                ..
            })
        ));
        a.amplitude = 1.0;
        a.frequency = 6.0;
        assert!(matches!(
            a.validate(),
            Err(SynthError::Implausible {
                field: "frequency",
                ..
            })
        ));
    }

    #[test]
    fn same_seed_same_stream() {
        let a = synth(&happy(), 2, 2.0, 7).unwrap();
        assert_eq!(a, synth(&happy(), 2, 2.0, 7).unwrap());
        assert_ne!(a, synth(&happy(), 2, 2.0, 8).unwrap());
        assert_eq!(a.len(), 60);
    }

    #[test]
    fn zero_duration_is_empty() {
        assert!(synth(&happy(), 1, 0.0, 1).unwrap().is_empty());
    }

    #[test]
    fn frames_are_valid_records() {
        let frames = synth(
            &GestureArchetype::default_for(&EmotionLabel::Anger).unwrap(),
            3,
            3.0,
            3,
        )
        .unwrap();
        let mut v = crate::model::FrameValidator::default();
        for f in &frames {
            let (_, events) = v.validate(f, crate::model::FrameSource::Synthetic).unwrap();
            assert!(events.is_empty());
        }
    }

    #[test]
    fn segments_continue_the_clock() {
        let seg = |d| SynthSegment {
            archetype: happy(),
            duration_s: d,
            seed: 1,
        };
        let frames = synth_session(&[seg(1.0), seg(1.0)], 1).unwrap();
        assert_eq!(frames.len(), 60);
        assert!(frames.windows(2).all(|w| w[1].t > w[0].t));
        assert!((frames[30].t - 1.0).abs() < 1e-9);
    }
}
