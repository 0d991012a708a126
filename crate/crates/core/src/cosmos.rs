//! Session summary artifacts: emotion episodes, crystal parameters and the
//! compact shareable payload.
//!
//! Payload layout (big-endian), then base64url without padding:
//!
//! ```text
//! u8      version (= 1)
//! [u8;16] session id
//! u16     total duration, deciseconds
//! u16 x4  integrated level per predefined emotion, deciseconds
//! u8      episode count (<= 64)
//! per episode:
//!   u8    label index
//!   u16   onset, deciseconds
//!   u16   duration, deciseconds
//!   u8    mean intensity * 255
//!   u8    (rotation + pi) / 2pi * 255
//! ```
//!
//! Values that do not fit saturate at the field maximum.

use std::f64::consts::PI;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::EmotionLabel;
use crate::recommend::lexicon::quadrant_anchor;
use crate::session::HistoryEntry;

pub const PAYLOAD_VERSION: u8 = 1;
pub const MAX_EPISODES: usize = 64;
const HEADER_LEN: usize = 1 + 16 + 2 + 8 + 1;
const EPISODE_LEN: usize = 7;

pub type SessionId = [u8; 16];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmotionEpisode {
    pub label: EmotionLabel,
    pub label_index: usize,
    /// Seconds from session start.
    pub onset: f64,
    pub duration: f64,
    pub mean_intensity: f64,
    pub mean_valence: f64,
    pub mean_arousal: f64,
    pub mean_confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Crystal {
    pub size: f64,
    pub creation_time: f64,
    /// Radians in `[-pi, pi]`.
    pub rotation: f64,
    pub position: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct MovementTotals {
    pub mean_speed: f64,
    pub mean_qom: f64,
    pub max_rom: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CosmosSummary {
    #[serde(serialize_with = "serialize_id")]
    pub session_id: SessionId,
    pub total_duration: f64,
    /// Time-integrated probability per predefined emotion, in seconds
    /// (happiness, relaxation, anger, sadness).
    pub levels: [f64; 4],
    pub movement: MovementTotals,
    pub episodes: Vec<EmotionEpisode>,
    pub crystals: Vec<Crystal>,
}

fn serialize_id<S: serde::Serializer>(id: &SessionId, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&crate::config::hex_string(id))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeThresholds {
    pub min_confidence: f64,
    pub min_duration_s: f64,
    pub hop_s: f64,
}

#[derive(Default)]
struct Run {
    label: usize,
    first_t: f64,
    last_t: f64,
    hops: usize,
    intensity: f64,
    valence: f64,
    arousal: f64,
    confidence: f64,
}

/// Splits the consensus history into maximal runs of one top label whose
/// hops all meet the confidence threshold, keeping runs at least
/// `min_duration_s` long. A missing hop (gap above 1.5 hops) ends a run.
pub fn segment_episodes(
    history: &[HistoryEntry],
    labels: &[EmotionLabel],
    session_start: f64,
    th: &EpisodeThresholds,
) -> Vec<EmotionEpisode> {
    let mut episodes = Vec::new();
    let mut run: Option<Run> = None;
    let finish = |run: Run, episodes: &mut Vec<EmotionEpisode>| {
        let duration = run.last_t - run.first_t + th.hop_s;
        if duration + 1e-9 >= th.min_duration_s {
            let n = run.hops as f64;
            episodes.push(EmotionEpisode {
                label: labels
                    .get(run.label)
                    .cloned()
                    .unwrap_or_else(|| EmotionLabel::Taught(format!("label_{}", run.label))),
                label_index: run.label,
                onset: run.first_t - session_start,
                duration,
                mean_intensity: run.intensity / n,
                mean_valence: run.valence / n,
                mean_arousal: run.arousal / n,
                mean_confidence: run.confidence / n,
            });
        }
    };

    for entry in history {
        let e = &entry.group;
        let label = e.distribution.argmax();
        let qualifies = e.confidence >= th.min_confidence;
        let continues = run
            .as_ref()
            .is_some_and(|r| qualifies && r.label == label && entry.t - r.last_t <= 1.5 * th.hop_s);
        if !continues {
            if let Some(r) = run.take() {
                finish(r, &mut episodes);
            }
            if qualifies {
                run = Some(Run {
                    label,
                    first_t: entry.t,
                    last_t: entry.t,
                    ..Run::default()
                });
            }
        }
        if let Some(r) = run.as_mut() {
            r.last_t = entry.t;
            r.hops += 1;
            r.intensity += e.intensity;
            r.valence += e.valence;
            r.arousal += e.arousal;
            r.confidence += e.confidence;
        }
    }
    if let Some(r) = run {
        finish(r, &mut episodes);
    }
    episodes
}

/// Keeps at most [`MAX_EPISODES`], dropping the least intense; the
/// survivors stay in time order.
pub fn cap_episodes(mut episodes: Vec<EmotionEpisode>) -> Vec<EmotionEpisode> {
    if episodes.len() <= MAX_EPISODES {
        return episodes;
    }
    let mut order: Vec<usize> = (0..episodes.len()).collect();
    order.sort_by(|&a, &b| {
        episodes[b]
            .mean_intensity
            .total_cmp(&episodes[a].mean_intensity)
            .then(a.cmp(&b))
    });
    let mut keep = vec![false; episodes.len()];
    for &i in order.iter().take(MAX_EPISODES) {
        keep[i] = true;
    }
    let mut i = 0;
    episodes.retain(|_| {
        i += 1;
        keep[i - 1]
    });
    episodes
}

pub fn crystal_size(mean_intensity: f64, duration_s: f64) -> f64 {
    (mean_intensity.max(0.0) * (1.0 + duration_s.max(0.0)).ln()).max(0.0)
}

/// Deterministic position on a jittered golden-angle spiral.
pub fn crystal_position(session_id: &SessionId, index: usize) -> [f64; 3] {
    let mut h = Sha256::new();
    h.update(session_id);
    h.update((index as u32).to_be_bytes());
    let digest = h.finalize();
    let unit = |k: usize| {
        let mut b = [0u8; 8];
        b.copy_from_slice(&digest[k * 8..k * 8 + 8]);
        (u64::from_be_bytes(b) >> 11) as f64 / (1u64 << 53) as f64
    };
    let golden = PI * (3.0 - 5f64.sqrt());
    let angle = index as f64 * golden + (unit(0) - 0.5) * 0.5;
    let radius = 1.0 + 0.6 * (index as f64).sqrt() + 0.2 * unit(1);
    let height = (unit(2) - 0.5) * 2.0;
    [radius * angle.cos(), height, radius * angle.sin()]
}

pub fn crystals_for(session_id: &SessionId, episodes: &[EmotionEpisode]) -> Vec<Crystal> {
    episodes
        .iter()
        .enumerate()
        .map(|(i, e)| Crystal {
            size: crystal_size(e.mean_intensity, e.duration),
            creation_time: e.onset,
            rotation: e.mean_arousal.atan2(e.mean_valence),
            position: crystal_position(session_id, i),
        })
        .collect()
}

/// Index of the predefined emotion sharing the quadrant of `anchor`.
fn predefined_slot(anchor: [f64; 2], predefined: &[[f64; 2]; 4]) -> usize {
    let q = quadrant_anchor(predefined, anchor[0], anchor[1]);
    predefined.iter().position(|a| *a == q).unwrap_or(0)
}

/// Inputs to [`build_summary`], taken from a finished session.
#[derive(Debug, Clone, Copy)]
pub struct SummaryInput<'a> {
    pub session_id: SessionId,
    pub start: f64,
    pub end: f64,
    pub history: &'a [HistoryEntry],
    pub labels: &'a [EmotionLabel],
    /// Anchor per label, aligned with `labels`.
    pub anchors: &'a [[f64; 2]],
    pub predefined_anchors: [[f64; 2]; 4],
    pub thresholds: EpisodeThresholds,
}

pub fn build_summary(input: &SummaryInput<'_>) -> CosmosSummary {
    let hop = input.thresholds.hop_s;
    let slots: Vec<usize> = input
        .anchors
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            if i < 4 {
                i
            } else {
                predefined_slot(a, &input.predefined_anchors)
            }
        })
        .collect();
    let mut levels = [0.0; 4];
    let (mut speed_sum, mut qom_sum, mut max_rom, mut samples) = (0.0, 0.0, 0.0f64, 0usize);
    for entry in input.history {
        for (k, p) in entry.group.distribution.as_slice().iter().enumerate() {
            levels[slots.get(k).copied().unwrap_or(0)] += p * hop;
        }
        for m in &entry.movement {
            speed_sum += m.speed;
            qom_sum += m.qom;
            max_rom = max_rom.max(m.rom);
            samples += 1;
        }
    }
    let movement = if samples == 0 {
        MovementTotals::default()
    } else {
        MovementTotals {
            mean_speed: speed_sum / samples as f64,
            mean_qom: qom_sum / samples as f64,
            max_rom,
        }
    };
    let episodes = cap_episodes(segment_episodes(
        input.history,
        input.labels,
        input.start,
        &input.thresholds,
    ));
    let crystals = crystals_for(&input.session_id, &episodes);
    CosmosSummary {
        session_id: input.session_id,
        total_duration: (input.end - input.start).max(0.0),
        levels,
        movement,
        episodes,
        crystals,
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PayloadError {
    #[error("payload is not valid base64url")]
    BadBase64,
    #[error("unsupported payload version {0}")]
    BadVersion(u8),
    #[error("payload has {got} bytes, expected {expected}")]
    BadLength { expected: usize, got: usize },
}

fn deciseconds(s: f64) -> u16 {
    (s * 10.0).round().clamp(0.0, u16::MAX as f64) as u16
}

fn unit_byte(x: f64) -> u8 {
    (x * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn encode_payload_bytes(summary: &CosmosSummary) -> Vec<u8> {
    let episodes = cap_episodes(summary.episodes.clone());
    let mut out = Vec::with_capacity(HEADER_LEN + EPISODE_LEN * episodes.len());
    out.push(PAYLOAD_VERSION);
    out.extend_from_slice(&summary.session_id);
    out.extend_from_slice(&deciseconds(summary.total_duration).to_be_bytes());
    for level in summary.levels {
        out.extend_from_slice(&deciseconds(level).to_be_bytes());
    }
    out.push(episodes.len() as u8);
    for e in &episodes {
        out.push(e.label_index.min(u8::MAX as usize) as u8);
        out.extend_from_slice(&deciseconds(e.onset).to_be_bytes());
        out.extend_from_slice(&deciseconds(e.duration).to_be_bytes());
        out.push(unit_byte(e.mean_intensity));
        let rotation = e.mean_arousal.atan2(e.mean_valence);
        out.push(unit_byte((rotation + PI) / (2.0 * PI)));
    }
    out
}

pub fn encode_payload(summary: &CosmosSummary) -> String {
    URL_SAFE_NO_PAD.encode(encode_payload_bytes(summary))
}

/// Shareable URL of the form `<base>/c#<payload>`.
pub fn cosmos_url(base: &str, payload: &str) -> String {
    format!("{}/c#{payload}", base.trim_end_matches('/'))
}

fn label_for_index(index: usize) -> EmotionLabel {
    EmotionLabel::PREDEFINED
        .get(index)
        .cloned()
        .unwrap_or_else(|| EmotionLabel::Taught(format!("label_{index}")))
}

/// Decodes a payload (or a full cosmos URL). Times are restored at 0.1 s
/// resolution and intensities at 1/255. Episode valence/arousal are restored
/// as the unit direction of the stored rotation; crystal positions are
/// regenerated from the session id.
pub fn decode_payload(text: &str) -> Result<CosmosSummary, PayloadError> {
    let payload = text.rsplit_once('#').map_or(text, |(_, p)| p).trim();
    let bytes = URL_SAFE_NO_PAD
        .decode(payload)
        .map_err(|_| PayloadError::BadBase64)?;
    if bytes.is_empty() {
        return Err(PayloadError::BadLength {
            expected: HEADER_LEN,
            got: 0,
        });
    }
    if bytes[0] != PAYLOAD_VERSION {
        return Err(PayloadError::BadVersion(bytes[0]));
    }
    if bytes.len() < HEADER_LEN {
        return Err(PayloadError::BadLength {
            expected: HEADER_LEN,
            got: bytes.len(),
        });
    }
    let count = bytes[HEADER_LEN - 1] as usize;
    let expected = HEADER_LEN + count * EPISODE_LEN;
    if bytes.len() != expected {
        return Err(PayloadError::BadLength {
            expected,
            got: bytes.len(),
        });
    }
    let u16_at = |i: usize| u16::from_be_bytes([bytes[i], bytes[i + 1]]) as f64 / 10.0;
    let mut session_id = [0u8; 16];
    session_id.copy_from_slice(&bytes[1..17]);
    let total_duration = u16_at(17);
    let levels = [u16_at(19), u16_at(21), u16_at(23), u16_at(25)];

    let episodes: Vec<EmotionEpisode> = (0..count)
        .map(|k| {
            let b = HEADER_LEN + k * EPISODE_LEN;
            let rotation = bytes[b + 6] as f64 / 255.0 * 2.0 * PI - PI;
            let label_index = bytes[b] as usize;
            EmotionEpisode {
                label: label_for_index(label_index),
                label_index,
                onset: u16_at(b + 1),
                duration: u16_at(b + 3),
                mean_intensity: bytes[b + 5] as f64 / 255.0,
                mean_valence: rotation.cos(),
                mean_arousal: rotation.sin(),
                mean_confidence: 0.0,
            }
        })
        .collect();
    let crystals = crystals_for(&session_id, &episodes);
    Ok(CosmosSummary {
        session_id,
        total_duration,
        levels,
        movement: MovementTotals::default(),
        episodes,
        crystals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recommend::{Distribution, EmotionEstimate, Subject};

    fn entry(t: f64, d: Distribution, intensity: f64) -> HistoryEntry {
        let confidence = d.confidence();
        HistoryEntry {
            hop: (t * 10.0).round() as u64,
            t,
            group: EmotionEstimate {
                subject: Subject::Group,
                timestamp: t,
                distribution: d,
                valence: 0.5,
                arousal: 0.5,
                intensity,
                confidence,
            },
            persons: vec![],
            movement: vec![],
        }
    }

    fn th() -> EpisodeThresholds {
        EpisodeThresholds {
            min_confidence: 0.4,
            min_duration_s: 2.0,
            hop_s: 0.1,
        }
    }

    fn labels() -> Vec<EmotionLabel> {
        EmotionLabel::PREDEFINED.to_vec()
    }

    #[test]
    fn constant_run_is_one_episode() {
        let h: Vec<_> = (0..100)
            .map(|i| entry(i as f64 * 0.1, Distribution::one_hot(4, 0), 0.5))
            .collect();
        let eps = segment_episodes(&h, &labels(), 0.0, &th());
        assert_eq!(eps.len(), 1);
        assert_eq!(eps[0].label, EmotionLabel::Happiness);
        assert_eq!(eps[0].onset, 0.0);
        assert!((eps[0].duration - 10.0).abs() < 1e-9);
    }

    #[test]
    fn alternating_and_empty_histories() {
        let h: Vec<_> = (0..100)
            .map(|i| entry(i as f64 * 0.1, Distribution::one_hot(4, i % 2), 0.5))
            .collect();
        assert!(segment_episodes(&h, &labels(), 0.0, &th()).is_empty());
        assert!(segment_episodes(&[], &labels(), 0.0, &th()).is_empty());
    }

    #[test]
    fn trailing_weak_hops_do_not_change_episodes() {
        let mut h: Vec<_> = (0..50)
            .map(|i| entry(i as f64 * 0.1, Distribution::one_hot(4, 2), 0.5))
            .collect();
        let before = segment_episodes(&h, &labels(), 0.0, &th());
        for i in 50..80 {
            h.push(entry(i as f64 * 0.1, Distribution::uniform(4), 0.5));
        }
        assert_eq!(segment_episodes(&h, &labels(), 0.0, &th()), before);
    }

    #[test]
    fn uniform_session_integrates_evenly() {
        let h: Vec<_> = (0..1000)
            .map(|i| entry(i as f64 * 0.1, Distribution::uniform(4), 0.2))
            .collect();
        let labels = labels();
        let anchors = crate::config::AnchorConfig::default().as_array();
        let s = build_summary(&SummaryInput {
            session_id: [7; 16],
            start: 0.0,
            end: 100.0,
            history: &h,
            labels: &labels,
            anchors: &anchors,
            predefined_anchors: anchors,
            thresholds: th(),
        });
        for l in s.levels {
            assert!((l - 25.0).abs() < 1e-9);
        }
        assert!(s.levels.iter().sum::<f64>() <= s.total_duration + 1e-9);
        assert!(s.episodes.is_empty());
    }

    #[test]
    fn crystal_size_formula() {
        // 0.5 * ln(1 + (e - 1)) = 0.5
        assert!((crystal_size(0.5, std::f64::consts::E - 1.0) - 0.5).abs() < 1e-12);
        assert_eq!(crystal_size(0.0, 100.0), 0.0);
        assert!(crystal_size(0.6, 3.0) > crystal_size(0.5, 3.0));
        assert!(crystal_size(0.5, 4.0) > crystal_size(0.5, 3.0));
    }

    #[test]
    fn positions_are_deterministic() {
        let a = crystal_position(&[3; 16], 5);
        assert_eq!(a, crystal_position(&[3; 16], 5));
        assert_ne!(a, crystal_position(&[4; 16], 5));
        assert_ne!(a, crystal_position(&[3; 16], 6));
    }

    fn episode(i: usize, intensity: f64) -> EmotionEpisode {
        EmotionEpisode {
            label: EmotionLabel::Anger,
            label_index: 2,
            onset: i as f64 * 3.0,
            duration: 2.5,
            mean_intensity: intensity,
            mean_valence: -0.5,
            mean_arousal: 0.5,
            mean_confidence: 0.8,
        }
    }

    fn summary(episodes: Vec<EmotionEpisode>) -> CosmosSummary {
        let crystals = crystals_for(&[9; 16], &episodes);
        CosmosSummary {
            session_id: [9; 16],
            total_duration: 321.0,
            levels: [10.0, 20.0, 30.0, 40.0],
            movement: MovementTotals::default(),
            episodes,
            crystals,
        }
    }

    #[test]
    fn header_only_payload() {
        let bytes = encode_payload_bytes(&summary(vec![]));
        assert_eq!(bytes.len(), 28);
        let decoded = decode_payload(&encode_payload(&summary(vec![]))).unwrap();
        assert_eq!(decoded.levels, [10.0, 20.0, 30.0, 40.0]);
        assert_eq!(decoded.total_duration, 321.0);
    }

    #[test]
    fn episode_cap_keeps_most_intense() {
        let eps: Vec<_> = (0..70)
            .map(|i| episode(i, (i % 10) as f64 / 10.0 + 0.01))
            .collect();
        let bytes = encode_payload_bytes(&summary(eps.clone()));
        assert_eq!(bytes[27], 64);
        let kept = cap_episodes(eps);
        assert_eq!(kept.len(), 64);
        // seven episodes share the lowest intensity; six go, the earliest stays
        let low: Vec<_> = kept.iter().filter(|e| e.mean_intensity < 0.02).collect();
        assert_eq!(low.len(), 1);
        assert_eq!(low[0].onset, 0.0);
        assert!(kept.windows(2).all(|w| w[0].onset < w[1].onset));
    }

    #[test]
    fn decode_errors() {
        let mut bytes = encode_payload_bytes(&summary(vec![episode(0, 0.5)]));
        assert_eq!(
            decode_payload(&URL_SAFE_NO_PAD.encode(&bytes[..bytes.len() - 2])),
            Err(PayloadError::BadLength {
                expected: 35,
                got: 33
            })
        );
        bytes[0] = 2;
        assert_eq!(
            decode_payload(&URL_SAFE_NO_PAD.encode(&bytes)),
            Err(PayloadError::BadVersion(2))
        );
        assert_eq!(decode_payload("***"), Err(PayloadError::BadBase64));
    }

    #[test]
    fn url_form_is_accepted() {
        let payload = encode_payload(&summary(vec![episode(1, 0.25)]));
        let url = cosmos_url("https://example.org/", &payload);
        assert!(url.starts_with("https://example.org/c#"));
        assert_eq!(
            decode_payload(&url).unwrap(),
            decode_payload(&payload).unwrap()
        );
    }
}
