//! Session lifecycle: the phase machine and per-hop orchestration.
//!
//! The engine is the single owner of all mutable state. Frames and commands
//! are applied strictly in the order they are delivered; every decision is
//! keyed on frame timestamps, never on wall-clock time.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{hex_string, ConfigError, EngineConfig};
use crate::cosmos::{
    build_summary, cosmos_url, encode_payload, CosmosSummary, EpisodeThresholds, SessionId,
    SummaryInput,
};
use crate::features::{
    extract_features, extract_group, normalize, FeatureParams, FeatureVector, GroupFeatures,
    NormalizedFeatures,
};
use crate::model::{
    EmotionLabel, FrameError, FrameEvent, FrameSource, FrameValidator, PoseFrame, RawFrame,
};
use crate::output::{
    build_packets, map_visuals, AudioMapping, AudioParams, OscPacket, PersonSignal, VisualParams,
};
use crate::pipeline::{CleanFrame, KeypointStatus, PipelineEvent, PosePipeline};
use crate::recommend::{
    aggregate, circumplex_map, group_distribution, rec1_behavioral, rec2_contextual,
    EmotionEstimate, EmotionLexicon, HalfLives, RecommenderParams, Subject, TeachError,
    TemporalState,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Preparation,
    Teaching,
    Exploration,
    Cosmos,
}

impl Phase {
    pub fn is_active(self) -> bool {
        matches!(
            self,
            Phase::Preparation | Phase::Teaching | Phase::Exploration
        )
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::Idle => "idle",
            Phase::Preparation => "preparation",
            Phase::Teaching => "teaching",
            Phase::Exploration => "exploration",
            Phase::Cosmos => "cosmos",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum Command {
    Start,
    TeachStart {
        label: EmotionLabel,
    },
    TeachEnd,
    Explore,
    Feedback {
        #[serde(default)]
        person: Option<usize>,
        agree: bool,
    },
    End,
    /// Leaves the Cosmos phase.
    Reset,
    /// Returns to Idle from any phase, discarding the session.
    Abort,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Start => "start",
            Command::TeachStart { .. } => "teach_start",
            Command::TeachEnd => "teach_end",
            Command::Explore => "explore",
            Command::Feedback { .. } => "feedback",
            Command::End => "end",
            Command::Reset => "reset",
            Command::Abort => "abort",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("cannot {command} during {phase}")]
    IllegalTransition { phase: Phase, command: &'static str },
    #[error("feedback is only accepted during exploration, not {0}")]
    WrongPhase(Phase),
    #[error(transparent)]
    Teach(#[from] TeachError),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionCause {
    Command,
    Timeout,
}

/// Session-level events, kept in the report.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    PhaseChanged {
        t: f64,
        from: Phase,
        to: Phase,
        cause: TransitionCause,
    },
    TeachStarted {
        t: f64,
        label: EmotionLabel,
    },
    TeachCommitted {
        t: f64,
        label: EmotionLabel,
        windows: usize,
    },
    TeachRejected {
        t: f64,
        label: EmotionLabel,
        usable_s: f64,
        required_s: f64,
    },
    TrendShift {
        t: f64,
        divergence: f64,
    },
    Adapted {
        t: f64,
        label: EmotionLabel,
        applied: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeedbackEntry {
    pub t: f64,
    pub person: Option<usize>,
    pub agree: bool,
}

/// Normalized movement metrics of one person at one hop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MovementSample {
    pub person: usize,
    pub speed: f64,
    pub qom: f64,
    pub rom: f64,
}

/// Final estimates of one hop.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryEntry {
    pub hop: u64,
    pub t: f64,
    /// Consensus over everyone present.
    pub group: EmotionEstimate,
    pub persons: Vec<EmotionEstimate>,
    pub movement: Vec<MovementSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PersonState {
    pub id: usize,
    pub centroid: (f64, f64),
    /// `[x, y, status]` per keypoint; status 0 valid, 1 interpolated, 2 stale.
    pub kp: Vec<[f64; 3]>,
    pub raw_features: FeatureVector,
    pub features: NormalizedFeatures,
    pub estimate: EmotionEstimate,
    pub visuals: VisualParams,
}

/// Everything produced by one hop.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HopOutput {
    pub hop: u64,
    pub t: f64,
    pub phase: Phase,
    pub labels: Vec<EmotionLabel>,
    pub persons: Vec<PersonState>,
    pub group: Option<EmotionEstimate>,
    pub group_features: Option<GroupFeatures>,
    pub audio: AudioParams,
    #[serde(skip)]
    pub packets: Vec<OscPacket>,
    pub events: Vec<SessionEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CosmosArtifact {
    pub summary: CosmosSummary,
    pub payload: String,
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionReport {
    pub session_id: Option<String>,
    pub config_digest: String,
    pub phase: Phase,
    pub started_at: Option<f64>,
    pub ended_at: Option<f64>,
    pub labels: Vec<EmotionLabel>,
    pub lexicon: EmotionLexicon,
    pub history: Vec<HistoryEntry>,
    pub feedback: Vec<FeedbackEntry>,
    pub events: Vec<SessionEvent>,
    pub cosmos: Option<CosmosArtifact>,
}

impl SessionReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone)]
struct OpenSegment {
    label: EmotionLabel,
    start: f64,
    snapshot: EmotionLexicon,
    windows: usize,
}

/// Session id: the first 16 bytes of SHA-256 over the start timestamp and
/// the configuration digest.
pub fn session_id_for(start: f64, config_digest: &str) -> SessionId {
    let mut h = Sha256::new();
    h.update(start.to_be_bytes());
    h.update(config_digest.as_bytes());
    let digest = h.finalize();
    let mut id = [0u8; 16];
    id.copy_from_slice(&digest[..16]);
    id
}

pub struct SessionEngine {
    config: EngineConfig,
    digest: String,
    features: FeatureParams,
    recommender: RecommenderParams,
    audio_map: AudioMapping,
    validator: FrameValidator,
    pipeline: PosePipeline,
    window: VecDeque<CleanFrame>,
    last_t: Option<f64>,
    next_hop_t: Option<f64>,
    hop: u64,

    phase: Phase,
    phase_entered_at: f64,
    session_id: Option<SessionId>,
    started_at: Option<f64>,
    ended_at: Option<f64>,
    lexicon: EmotionLexicon,
    temporal: TemporalState,
    segment: Option<OpenSegment>,
    history: Vec<HistoryEntry>,
    feedback: Vec<FeedbackEntry>,
    pending_feedback: Option<bool>,
    recent: VecDeque<NormalizedFeatures>,
    events: Vec<SessionEvent>,
    audio: AudioParams,
    cosmos: Option<CosmosArtifact>,
}

impl SessionEngine {
    pub fn new(config: EngineConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let audio_map = AudioMapping::from(&config);
        Ok(Self {
            digest: config.digest(),
            features: FeatureParams::from(&config),
            recommender: RecommenderParams::from(&config),
            audio: audio_map.initial(),
            audio_map,
            validator: FrameValidator::new(config.max_persons),
            pipeline: PosePipeline::new(&config),
            window: VecDeque::new(),
            last_t: None,
            next_hop_t: None,
            hop: 0,
            phase: Phase::Idle,
            phase_entered_at: 0.0,
            session_id: None,
            started_at: None,
            ended_at: None,
            lexicon: EmotionLexicon::new(config.anchors.as_array()),
            temporal: Self::fresh_temporal(&config),
            segment: None,
            history: Vec::new(),
            feedback: Vec::new(),
            pending_feedback: None,
            recent: VecDeque::new(),
            events: Vec::new(),
            cosmos: None,
            config,
        })
    }

    fn fresh_temporal(config: &EngineConfig) -> TemporalState {
        TemporalState::new(
            HalfLives {
                fast_s: config.ema_half_life_fast_s,
                main_s: config.ema_half_life_main_s,
                slow_s: config.ema_half_life_slow_s,
            },
            config.trend_threshold,
        )
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn hop(&self) -> u64 {
        self.hop
    }

    /// Timestamp of the latest frame, the engine's notion of "now".
    pub fn now(&self) -> Option<f64> {
        self.last_t
    }

    pub fn lexicon(&self) -> &EmotionLexicon {
        &self.lexicon
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    pub fn feedback_log(&self) -> &[FeedbackEntry] {
        &self.feedback
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn session_id(&self) -> Option<SessionId> {
        self.session_id
    }

    pub fn cosmos(&self) -> Option<&CosmosArtifact> {
        self.cosmos.as_ref()
    }

    pub fn current_teach_label(&self) -> Option<&EmotionLabel> {
        self.segment.as_ref().map(|s| &s.label)
    }

    /// Validates and ingests a raw frame record.
    pub fn push_raw(
        &mut self,
        raw: &RawFrame,
        source: FrameSource,
    ) -> Result<(Vec<FrameEvent>, Vec<HopOutput>), SessionError> {
        let (frame, events) = self.validator.validate(raw, source)?;
        Ok((events, self.push_frame(&frame)?))
    }

    /// Ingests a validated frame: applies phase timeouts, runs the pose
    /// pipeline and any hop that has come due.
    pub fn push_frame(&mut self, frame: &PoseFrame) -> Result<Vec<HopOutput>, SessionError> {
        let t = frame.timestamp;
        if let Some(previous) = self.last_t {
            if t <= previous {
                return Err(FrameError::NonMonotonicTimestamp { t, previous }.into());
            }
        }
        self.last_t = Some(t);
        let mut timeout_events = self.apply_timeouts(t);

        let (clean, pipeline_events) = self.pipeline.process(frame);
        for e in &pipeline_events {
            if let PipelineEvent::TrackOpened { .. } | PipelineEvent::TrackRetired { .. } = e {
                tracing::debug!(?e, "track change");
            }
        }
        self.window.push_back(clean);
        while self
            .window
            .front()
            .is_some_and(|f| f.timestamp <= t - self.config.window_s)
        {
            self.window.pop_front();
        }

        let next = *self.next_hop_t.get_or_insert(t + self.config.window_s);
        let mut outputs = Vec::new();
        if t + 1e-9 >= next {
            let mut next = next;
            while next <= t + 1e-9 {
                next += self.config.hop_s;
            }
            self.next_hop_t = Some(next);
            if self.phase.is_active() {
                let mut out = self.process_hop(t);
                timeout_events.append(&mut out.events);
                out.events = std::mem::take(&mut timeout_events);
                outputs.push(out);
            }
        }
        Ok(outputs)
    }

    fn apply_timeouts(&mut self, t: f64) -> Vec<SessionEvent> {
        let mut events = Vec::new();
        loop {
            let limit = match self.phase {
                Phase::Preparation => self.config.preparation_s,
                Phase::Teaching => self.config.teaching_s,
                Phase::Exploration => self.config.exploration_s,
                _ => break,
            };
            let deadline = self.phase_entered_at + limit;
            if t < deadline {
                break;
            }
            let to = match self.phase {
                Phase::Preparation => Phase::Teaching,
                Phase::Teaching => {
                    events.extend(self.close_segment(deadline).1);
                    Phase::Exploration
                }
                _ => Phase::Cosmos,
            };
            events.extend(self.enter(to, deadline, TransitionCause::Timeout));
        }
        events
    }

    fn enter(&mut self, to: Phase, t: f64, cause: TransitionCause) -> Vec<SessionEvent> {
        let from = self.phase;
        self.phase = to;
        self.phase_entered_at = t;
        match to {
            Phase::Preparation => {
                self.session_id = Some(session_id_for(t, &self.digest));
                self.started_at = Some(t);
                self.ended_at = None;
                self.lexicon = EmotionLexicon::new(self.config.anchors.as_array());
                self.temporal = Self::fresh_temporal(&self.config);
                self.history.clear();
                self.feedback.clear();
                self.events.clear();
                self.pending_feedback = None;
                self.recent.clear();
                self.segment = None;
                self.cosmos = None;
                self.audio = self.audio_map.initial();
            }
            Phase::Cosmos => {
                self.ended_at = Some(t);
                self.cosmos = Some(self.build_cosmos(t));
            }
            Phase::Idle => {
                self.segment = None;
            }
            _ => {}
        }
        tracing::info!(%from, %to, t, "phase change");
        let event = SessionEvent::PhaseChanged { t, from, to, cause };
        self.events.push(event.clone());
        vec![event]
    }

    fn build_cosmos(&self, end: f64) -> CosmosArtifact {
        let labels = self.lexicon.labels();
        let anchors = self.lexicon.anchors();
        let summary = build_summary(&SummaryInput {
            session_id: self.session_id.unwrap_or_default(),
            start: self.started_at.unwrap_or(end),
            end,
            history: &self.history,
            labels: &labels,
            anchors: &anchors,
            predefined_anchors: self.config.anchors.as_array(),
            thresholds: EpisodeThresholds {
                min_confidence: self.config.episode_min_confidence,
                min_duration_s: self.config.episode_min_duration_s,
                hop_s: self.config.hop_s,
            },
        });
        let payload = encode_payload(&summary);
        let url = cosmos_url(&self.config.cosmos_base_url, &payload);
        CosmosArtifact {
            summary,
            payload,
            url,
        }
    }

    /// Ends the open teaching segment at `t`, rolling the lexicon back if
    /// the segment was too short.
    fn close_segment(&mut self, t: f64) -> (Option<TeachError>, Vec<SessionEvent>) {
        let Some(seg) = self.segment.take() else {
            return (None, Vec::new());
        };
        let usable_s = t - seg.start - self.config.teach_lead_in_s;
        let required_s = self.config.teach_min_segment_s;
        let (err, event) = if usable_s < required_s {
            self.lexicon = seg.snapshot;
            let event = SessionEvent::TeachRejected {
                t,
                label: seg.label,
                usable_s,
                required_s,
            };
            (
                Some(TeachError::SegmentTooShort {
                    usable_s,
                    required_s,
                }),
                event,
            )
        } else {
            let event = SessionEvent::TeachCommitted {
                t,
                label: seg.label,
                windows: seg.windows,
            };
            (None, event)
        };
        self.events.push(event.clone());
        (err, vec![event])
    }

    fn illegal(&self, command: &Command) -> SessionError {
        SessionError::IllegalTransition {
            phase: self.phase,
            command: command.name(),
        }
    }

    /// Applies a command at time `t` (normally the latest frame timestamp).
    pub fn command(&mut self, cmd: Command, t: f64) -> Result<Vec<SessionEvent>, SessionError> {
        let mut events = self.apply_timeouts(t);
        match (&cmd, self.phase) {
            (Command::Start, Phase::Idle) => {
                events.extend(self.enter(Phase::Preparation, t, TransitionCause::Command))
            }
            (Command::TeachStart { label }, Phase::Preparation | Phase::Teaching) => {
                if self.phase == Phase::Preparation {
                    events.extend(self.enter(Phase::Teaching, t, TransitionCause::Command));
                }
                let (err, closed) = self.close_segment(t);
                events.extend(closed);
                if let Some(err) = err {
                    tracing::warn!(%err, "previous teaching segment discarded");
                }
                self.segment = Some(OpenSegment {
                    label: label.clone(),
                    start: t,
                    snapshot: self.lexicon.clone(),
                    windows: 0,
                });
                let event = SessionEvent::TeachStarted {
                    t,
                    label: label.clone(),
                };
                self.events.push(event.clone());
                events.push(event);
            }
            (Command::TeachEnd, Phase::Teaching) => {
                if self.segment.is_none() {
                    return Err(self.illegal(&cmd));
                }
                let (err, closed) = self.close_segment(t);
                if let Some(err) = err {
                    return Err(err.into());
                }
                events.extend(closed);
            }
            (Command::Explore, Phase::Teaching) => {
                events.extend(self.close_segment(t).1);
                events.extend(self.enter(Phase::Exploration, t, TransitionCause::Command));
            }
            (Command::Feedback { person, agree }, Phase::Exploration) => {
                self.feedback.push(FeedbackEntry {
                    t,
                    person: *person,
                    agree: *agree,
                });
                self.pending_feedback = Some(*agree);
            }
            (Command::Feedback { .. }, phase) => return Err(SessionError::WrongPhase(phase)),
            (Command::End, Phase::Exploration) => {
                events.extend(self.enter(Phase::Cosmos, t, TransitionCause::Command))
            }
            (Command::Reset, Phase::Cosmos) | (Command::Abort, _) => {
                events.extend(self.enter(Phase::Idle, t, TransitionCause::Command))
            }
            _ => return Err(self.illegal(&cmd)),
        }
        Ok(events)
    }

    fn process_hop(&mut self, t: f64) -> HopOutput {
        self.hop += 1;
        let window: &[CleanFrame] = self.window.make_contiguous();
        let current = window.last().expect("hop follows a frame");
        let labels = self.lexicon.labels();
        let anchors = self.lexicon.anchors();

        let mut people = Vec::new();
        for track in &current.tracks {
            let Ok(raw) = extract_features(window, track.track_id, &self.features) else {
                continue;
            };
            let Some(centroid) = track.centroid() else {
                continue;
            };
            let kp = track
                .keypoints
                .iter()
                .map(|k| {
                    let status = match k.status {
                        KeypointStatus::Valid => 0.0,
                        KeypointStatus::Interpolated => 1.0,
                        KeypointStatus::Stale => 2.0,
                    };
                    [k.x, k.y, status]
                })
                .collect();
            people.push((
                track.track_id,
                centroid,
                kp,
                raw,
                normalize(&raw, &self.config.feature_ranges),
            ));
        }

        let mut events = Vec::new();
        if people.is_empty() {
            return HopOutput {
                hop: self.hop,
                t,
                phase: self.phase,
                labels,
                persons: Vec::new(),
                group: None,
                group_features: None,
                audio: self.audio,
                packets: build_packets(&[], None, &self.audio),
                events,
            };
        }

        let ids: Vec<usize> = people.iter().map(|p| p.0).collect();
        let group_features = extract_group(window, &ids, &self.features);
        let rec1: Vec<EmotionEstimate> = people
            .iter()
            .map(|p| {
                rec1_behavioral(
                    &p.4,
                    &self.lexicon,
                    &self.recommender,
                    Subject::Person(p.0),
                    t,
                )
            })
            .collect();
        let rec2 = rec2_contextual(&rec1, &group_features, &anchors);
        self.temporal.extend_labels(labels.len());
        let prior = self.temporal.prior().cloned();
        let finals: Vec<EmotionEstimate> = rec1
            .iter()
            .zip(&rec2)
            .map(|(r1, r2)| {
                aggregate(
                    r1,
                    r2,
                    prior.as_ref(),
                    self.config.recommender_weights,
                    &anchors,
                )
                .expect("recommenders share the session label set")
            })
            .collect();

        let distribution = group_distribution(&finals);
        let (valence, arousal) = distribution.weighted_point(&anchors);
        let group = EmotionEstimate {
            subject: Subject::Group,
            timestamp: t,
            confidence: distribution.confidence(),
            intensity: finals.iter().map(|e| e.intensity).sum::<f64>() / finals.len() as f64,
            distribution,
            valence,
            arousal,
        };
        let mean_features =
            NormalizedFeatures::mean(people.iter().map(|p| &p.4)).expect("non-empty");

        if let Some(shift) = self.temporal.update(&group.distribution, t) {
            let event = SessionEvent::TrendShift {
                t,
                divergence: shift.divergence,
            };
            self.events.push(event.clone());
            events.push(event);
            if self.phase == Phase::Exploration {
                events.extend(self.adapt_on_shift(t, group.top()));
            }
        }

        if self.phase == Phase::Teaching {
            if let Some(seg) = self.segment.as_mut() {
                if t >= seg.start + self.config.teach_lead_in_s {
                    for p in &people {
                        let point = circumplex_map(&p.4);
                        self.lexicon
                            .observe(&seg.label, &p.4, (point.valence, point.arousal));
                        seg.windows += 1;
                    }
                }
            }
        }

        self.recent.push_back(mean_features);
        while self.recent.len() > self.config.adaptation_recent_hops.max(1) {
            self.recent.pop_front();
        }

        self.audio = self
            .audio_map
            .map(group.valence, &mean_features, Some(&self.audio));

        let persons: Vec<PersonState> = people
            .into_iter()
            .zip(&finals)
            .map(|((id, centroid, kp, raw, nf), est)| PersonState {
                id,
                centroid,
                kp,
                raw_features: raw,
                features: nf,
                visuals: map_visuals(est, &nf),
                estimate: est.clone(),
            })
            .collect();
        let label_names: Vec<&str> = persons
            .iter()
            .map(|p| labels[p.estimate.top()].as_str())
            .collect();
        let signals: Vec<PersonSignal<'_>> = persons
            .iter()
            .zip(&label_names)
            .map(|(p, name)| PersonSignal {
                id: p.id,
                centroid: p.centroid,
                estimate: &p.estimate,
                top_label: name,
                visuals: p.visuals,
            })
            .collect();
        let packets = build_packets(&signals, Some(&group), &self.audio);

        self.history.push(HistoryEntry {
            hop: self.hop,
            t,
            group: group.clone(),
            persons: finals,
            movement: persons
                .iter()
                .map(|p| MovementSample {
                    person: p.id,
                    speed: p.features.speed(),
                    qom: p.features.qom(),
                    rom: p.features.rom(),
                })
                .collect(),
        });

        HopOutput {
            hop: self.hop,
            t,
            phase: self.phase,
            labels,
            persons,
            group: Some(group),
            group_features: Some(group_features),
            audio: self.audio,
            packets,
            events,
        }
    }

    /// Feedback-gated prototype adaptation after a trend shift. A pending
    /// disagreement suppresses exactly one adaptation.
    fn adapt_on_shift(&mut self, t: f64, top: usize) -> Vec<SessionEvent> {
        let label = self.lexicon.labels()[top].clone();
        let allowed = self.pending_feedback.take().unwrap_or(true);
        let applied = allowed
            && NormalizedFeatures::mean(self.recent.iter()).is_some_and(|recent| {
                self.lexicon
                    .adapt(top, &recent, self.config.adaptation_rate)
            });
        let event = SessionEvent::Adapted { t, label, applied };
        self.events.push(event.clone());
        vec![event]
    }

    /// Closes the stream: an open exploration ends in Cosmos.
    pub fn finish(&mut self) -> SessionReport {
        if self.phase == Phase::Exploration {
            let t = self.last_t.unwrap_or(self.phase_entered_at);
            self.enter(Phase::Cosmos, t, TransitionCause::Command);
        }
        self.report()
    }

    pub fn report(&self) -> SessionReport {
        SessionReport {
            session_id: self.session_id.map(|id| hex_string(&id)),
            config_digest: self.digest.clone(),
            phase: self.phase,
            started_at: self.started_at,
            ended_at: self.ended_at,
            labels: self.lexicon.labels(),
            lexicon: self.lexicon.clone(),
            history: self.history.clone(),
            feedback: self.feedback.clone(),
            events: self.events.clone(),
            cosmos: self.cosmos.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Keypoint, Person, KEYPOINT_COUNT};
    use proptest::prelude::*;

    fn engine() -> SessionEngine {
        SessionEngine::new(EngineConfig::default()).unwrap()
    }

    fn still_person(id: u32) -> Person {
        // upright skeleton around x = 0.3 + 0.3 * id
        let cx = 0.3 + 0.3 * id as f64;
        let mut keypoints = [Keypoint::new(cx, 0.5, 0.9); KEYPOINT_COUNT];
        let offsets: [(f64, f64); KEYPOINT_COUNT] = [
            (0.0, -0.3),
            (-0.01, -0.31),
            (0.01, -0.31),
            (-0.02, -0.3),
            (0.02, -0.3),
            (-0.06, -0.2),
            (0.06, -0.2),
            (-0.08, -0.1),
            (0.08, -0.1),
            (-0.09, 0.0),
            (0.09, 0.0),
            (-0.04, 0.0),
            (0.04, 0.0),
            (-0.04, 0.12),
            (0.04, 0.12),
            (-0.04, 0.24),
            (0.04, 0.24),
        ];
        for (k, (dx, dy)) in keypoints.iter_mut().zip(offsets) {
            *k = Keypoint::new(cx + dx, 0.5 + dy, 0.9);
        }
        Person { id, keypoints }
    }

    fn frame(t: f64, persons: Vec<Person>) -> PoseFrame {
        PoseFrame {
            timestamp: t,
            persons,
            source: FrameSource::Synthetic,
        }
    }

    fn run_still(engine: &mut SessionEngine, from: usize, to: usize) -> Vec<HopOutput> {
        (from..to)
            .flat_map(|i| {
                engine
                    .push_frame(&frame(i as f64 / 30.0, vec![still_person(0)]))
                    .unwrap()
            })
            .collect()
    }

    #[test]
    fn start_enters_preparation_and_illegal_edges_fail() {
        let mut e = engine();
        assert_eq!(
            e.command(Command::End, 0.0),
            Err(SessionError::IllegalTransition {
                phase: Phase::Idle,
                command: "end"
            })
        );
        e.command(Command::Start, 0.0).unwrap();
        assert_eq!(e.phase(), Phase::Preparation);
        assert!(e.session_id().is_some());
        assert!(matches!(
            e.command(Command::Start, 0.0),
            Err(SessionError::IllegalTransition { .. })
        ));
    }

    #[test]
    fn feedback_outside_exploration_is_wrong_phase() {
        let mut e = engine();
        e.command(Command::Start, 0.0).unwrap();
        e.command(
            Command::TeachStart {
                label: EmotionLabel::Anger,
            },
            0.0,
        )
        .unwrap();
        assert_eq!(
            e.command(
                Command::Feedback {
                    person: None,
                    agree: true
                },
                1.0
            ),
            Err(SessionError::WrongPhase(Phase::Teaching))
        );
        e.command(Command::Explore, 1.0).unwrap();
        e.command(
            Command::Feedback {
                person: Some(0),
                agree: true,
            },
            2.0,
        )
        .unwrap();
        assert_eq!(e.feedback_log().len(), 1);
    }

    #[test]
    fn timeouts_walk_the_chain() {
        let config = EngineConfig {
            preparation_s: 1.0,
            teaching_s: 1.0,
            exploration_s: 1.0,
            ..EngineConfig::default()
        };
        let mut e = SessionEngine::new(config).unwrap();
        e.command(Command::Start, 0.0).unwrap();
        e.push_frame(&frame(0.5, vec![])).unwrap();
        assert_eq!(e.phase(), Phase::Preparation);
        e.push_frame(&frame(1.0, vec![])).unwrap();
        assert_eq!(e.phase(), Phase::Teaching);
        // a single late frame can cross several deadlines
        e.push_frame(&frame(5.0, vec![])).unwrap();
        assert_eq!(e.phase(), Phase::Cosmos);
        let changes: Vec<_> = e
            .events()
            .iter()
            .filter_map(|ev| match ev {
                SessionEvent::PhaseChanged { t, to, .. } => Some((*t, *to)),
                _ => None,
            })
            .collect();
        assert_eq!(
            changes,
            vec![
                (0.0, Phase::Preparation),
                (1.0, Phase::Teaching),
                (2.0, Phase::Exploration),
                (3.0, Phase::Cosmos)
            ]
        );
        assert!(e.cosmos().is_some());
    }

    #[test]
    fn still_skeleton_in_preparation_reads_low_arousal() {
        let mut e = engine();
        e.command(Command::Start, 0.0).unwrap();
        let hops = run_still(&mut e, 0, 120);
        let last = hops.last().unwrap();
        let est = &last.persons[0].estimate;
        // circumplex of the still skeleton: arousal -1, valence from expansion and zero jerk
        assert!(est.intensity.abs() < 1e-9);
        let top = last.labels[est.top()].clone();
        assert!(
            top == EmotionLabel::Sadness || top == EmotionLabel::Relaxation,
            "{top:?}"
        );
    }

    #[test]
    fn hops_fire_every_tenth_of_a_second_after_one_window() {
        let mut e = engine();
        e.command(Command::Start, 0.0).unwrap();
        let hops = run_still(&mut e, 0, 90);
        // frames 0..3 s, first hop at t = 1 s
        assert!((hops[0].t - 1.0).abs() < 1e-9);
        assert_eq!(hops.len(), 20);
        assert!(hops.windows(2).all(|w| w[1].hop == w[0].hop + 1));
    }

    #[test]
    fn teaching_grows_lexicon_one_window_per_hop() {
        let mut e = engine();
        e.command(Command::Start, 0.0).unwrap();
        run_still(&mut e, 0, 60);
        e.command(
            Command::TeachStart {
                label: EmotionLabel::Sadness,
            },
            2.0,
        )
        .unwrap();
        let hops = run_still(&mut e, 60, 240);
        let idx = e.lexicon().index_of(&EmotionLabel::Sadness).unwrap();
        let counted = hops.iter().filter(|h| h.t >= 3.0).count() as u64;
        assert_eq!(e.lexicon().entries()[idx].n(), counted);
        e.command(Command::TeachEnd, 8.0).unwrap();
        assert_eq!(e.lexicon().entries()[idx].n(), counted);
    }

    #[test]
    fn short_segment_is_rolled_back() {
        let mut e = engine();
        e.command(Command::Start, 0.0).unwrap();
        run_still(&mut e, 0, 60);
        e.command(
            Command::TeachStart {
                label: EmotionLabel::Anger,
            },
            2.0,
        )
        .unwrap();
        run_still(&mut e, 60, 150);
        let err = e.command(Command::TeachEnd, 5.0).unwrap_err();
        assert!(matches!(
            err,
            SessionError::Teach(TeachError::SegmentTooShort { .. })
        ));
        assert_eq!(e.lexicon().total_samples(), 0);
    }

    #[test]
    fn empty_frames_produce_no_history() {
        let mut e = engine();
        e.command(Command::Start, 0.0).unwrap();
        let hops: Vec<_> = (0..60)
            .flat_map(|i| e.push_frame(&frame(i as f64 / 30.0, vec![])).unwrap())
            .collect();
        assert!(!hops.is_empty());
        assert!(hops
            .iter()
            .all(|h| h.group.is_none() && h.packets.len() == 4));
        assert!(e.history().is_empty());
    }

    #[test]
    fn disagreement_suppresses_one_adaptation() {
        let mut e = engine();
        e.command(Command::Start, 0.0).unwrap();
        e.command(
            Command::TeachStart {
                label: EmotionLabel::Sadness,
            },
            0.0,
        )
        .unwrap();
        run_still(&mut e, 0, 300);
        e.command(Command::Explore, 10.0).unwrap();
        e.command(
            Command::Feedback {
                person: None,
                agree: false,
            },
            10.0,
        )
        .unwrap();
        let before = e.lexicon().clone();
        let events = e.adapt_on_shift(10.0, 3);
        assert_eq!(
            events,
            vec![SessionEvent::Adapted {
                t: 10.0,
                label: EmotionLabel::Sadness,
                applied: false
            }]
        );
        assert_eq!(e.lexicon(), &before);
        // the disagreement was consumed; the next shift adapts
        run_still(&mut e, 300, 330);
        let events = e.adapt_on_shift(11.0, 3);
        assert!(matches!(
            events[0],
            SessionEvent::Adapted { applied: true, .. }
        ));
    }

    #[test]
    fn non_monotonic_frames_are_rejected() {
        let mut e = engine();
        e.push_frame(&frame(1.0, vec![])).unwrap();
        assert!(matches!(
            e.push_frame(&frame(1.0, vec![])),
            Err(SessionError::Frame(
                FrameError::NonMonotonicTimestamp { .. }
            ))
        ));
    }

    #[test]
    fn session_id_depends_on_start_and_config() {
        let d = EngineConfig::default().digest();
        assert_eq!(session_id_for(1.0, &d), session_id_for(1.0, &d));
        assert_ne!(session_id_for(1.0, &d), session_id_for(2.0, &d));
        assert_ne!(session_id_for(1.0, &d), session_id_for(1.0, "other"));
    }

    fn all_commands() -> Vec<Command> {
        vec![
            Command::Start,
            Command::TeachStart {
                label: EmotionLabel::Happiness,
            },
            Command::TeachEnd,
            Command::Explore,
            Command::Feedback {
                person: None,
                agree: true,
            },
            Command::End,
            Command::Reset,
            Command::Abort,
        ]
    }

    fn expected_next(phase: Phase, cmd: &Command, segment_open: bool) -> Option<Phase> {
        use Phase::*;
        match (cmd, phase) {
            (Command::Abort, _) => Some(Idle),
            (Command::Start, Idle) => Some(Preparation),
            (Command::TeachStart { .. }, Preparation | Teaching) => Some(Teaching),
            (Command::TeachEnd, Teaching) if segment_open => Some(Teaching),
            (Command::Explore, Teaching) => Some(Exploration),
            (Command::Feedback { .. }, Exploration) => Some(Exploration),
            (Command::End, Exploration) => Some(Cosmos),
            (Command::Reset, Cosmos) => Some(Idle),
            _ => None,
        }
    }

    proptest! {
        #[test]
        fn phase_graph_matches_chain(seq in prop::collection::vec(0usize..8, 1..40)) {
            let config = EngineConfig {
                preparation_s: 1e6,
                teaching_s: 1e6,
                exploration_s: 1e6,
                ..EngineConfig::default()
            };
            let mut e = SessionEngine::new(config).unwrap();
            let commands = all_commands();
            for (i, k) in seq.into_iter().enumerate() {
                // teaching segments here are long enough to be accepted
                let t = i as f64 * 10.0;
                let cmd = commands[k].clone();
                let expected = expected_next(e.phase(), &cmd, e.current_teach_label().is_some());
                let result = e.command(cmd, t);
                match expected {
                    Some(p) => {
                        prop_assert!(result.is_ok());
                        prop_assert_eq!(e.phase(), p);
                    }
                    None => prop_assert!(result.is_err()),
                }
            }
        }
    }
}
