//! Pose post-processing: confidence gating, identity tracking, causal gap
//! filling, exponential smoothing and body-scale calibration.

use std::collections::VecDeque;

use serde::Serialize;

use crate::config::EngineConfig;
use crate::model::{KeypointName, Person, PoseFrame, KEYPOINT_COUNT};

/// Lower bound on the body-scale estimate, in image units.
pub const MIN_BODY_SCALE: f64 = 0.01;

/// Marks keypoints whose confidence is below `theta` as invalid.
pub fn gate_confidence(frame: &PoseFrame, theta: f64) -> PoseFrame {
    let mut out = frame.clone();
    for person in &mut out.persons {
        for kp in &mut person.keypoints {
            if kp.confidence < theta {
                kp.valid = false;
            }
        }
    }
    out
}

/// One exponential smoothing step: `alpha * x + (1 - alpha) * previous`,
/// seeded with the first sample.
pub fn smooth_step(previous: Option<f64>, x: f64, alpha: f64) -> f64 {
    match previous {
        None => x,
        Some(prev) => alpha * x + (1.0 - alpha) * prev,
    }
}

/// Applies [`smooth_step`] over a whole series.
pub fn smooth_series(xs: &[f64], alpha: f64) -> Vec<f64> {
    let mut state = None;
    xs.iter()
        .map(|&x| {
            let y = smooth_step(state, x, alpha);
            state = Some(y);
            y
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KeypointStatus {
    /// Updated from a detection this frame.
    Valid,
    /// Held from the last valid value; the gap is within tolerance.
    Interpolated,
    /// Missing for longer than the gap tolerance (or never seen); excluded
    /// from features.
    Stale,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CleanKeypoint {
    pub x: f64,
    pub y: f64,
    pub status: KeypointStatus,
}

impl CleanKeypoint {
    pub fn usable(&self) -> bool {
        self.status != KeypointStatus::Stale
    }
}

/// Smoothing plus hold-last gap filling for a single keypoint.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeypointFilter {
    value: Option<(f64, f64)>,
    misses: u32,
}

impl KeypointFilter {
    /// Advances the filter by one frame. `observation` is `None` when the
    /// keypoint is missing or gated out.
    pub fn update(
        &mut self,
        observation: Option<(f64, f64)>,
        alpha: f64,
        max_gap: u32,
    ) -> CleanKeypoint {
        match observation {
            Some((x, y)) => {
                let prev = self.value;
                let sx = smooth_step(prev.map(|p| p.0), x, alpha);
                let sy = smooth_step(prev.map(|p| p.1), y, alpha);
                self.value = Some((sx, sy));
                self.misses = 0;
                CleanKeypoint {
                    x: sx,
                    y: sy,
                    status: KeypointStatus::Valid,
                }
            }
            None => {
                self.misses = self.misses.saturating_add(1);
                match self.value {
                    Some((x, y)) => CleanKeypoint {
                        x,
                        y,
                        status: if self.misses <= max_gap {
                            KeypointStatus::Interpolated
                        } else {
                            KeypointStatus::Stale
                        },
                    },
                    None => CleanKeypoint {
                        x: 0.0,
                        y: 0.0,
                        status: KeypointStatus::Stale,
                    },
                }
            }
        }
    }
}

/// Running median of torso length over a trailing time window.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyScaleEstimator {
    window_s: f64,
    samples: VecDeque<(f64, f64)>,
    current: Option<f64>,
}

impl BodyScaleEstimator {
    pub fn new(window_s: f64) -> Self {
        Self {
            window_s,
            samples: VecDeque::new(),
            current: None,
        }
    }

    /// Adds a torso-length measurement taken at `t` (if any) and returns the
    /// current estimate, `None` while uncalibrated.
    pub fn update(&mut self, t: f64, torso: Option<f64>) -> Option<f64> {
        if let Some(len) = torso.filter(|l| l.is_finite()) {
            self.samples.push_back((t, len));
        }
        while let Some(&(ts, _)) = self.samples.front() {
            if ts < t - self.window_s {
                self.samples.pop_front();
            } else {
                break;
            }
        }
        if !self.samples.is_empty() {
            let mut lens: Vec<f64> = self.samples.iter().map(|s| s.1).collect();
            self.current = Some(median(&mut lens).max(MIN_BODY_SCALE));
        }
        self.current
    }

    pub fn current(&self) -> Option<f64> {
        self.current
    }
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn midpoint(a: &CleanKeypoint, b: &CleanKeypoint) -> (f64, f64) {
    ((a.x + b.x) / 2.0, (a.y + b.y) / 2.0)
}

/// Torso length (mid-shoulders to mid-hips) when all four points were
/// detected this frame.
pub fn torso_length(kps: &[CleanKeypoint; KEYPOINT_COUNT]) -> Option<f64> {
    use KeypointName::*;
    let pick = |n: KeypointName| kps[n.index()];
    let parts = [
        pick(LeftShoulder),
        pick(RightShoulder),
        pick(LeftHip),
        pick(RightHip),
    ];
    if parts.iter().any(|k| k.status != KeypointStatus::Valid) {
        return None;
    }
    let s = midpoint(&parts[0], &parts[1]);
    let h = midpoint(&parts[2], &parts[3]);
    Some(((s.0 - h.0).powi(2) + (s.1 - h.1).powi(2)).sqrt())
}

/// Mean position of the usable keypoints.
pub fn centroid_of(kps: &[CleanKeypoint]) -> Option<(f64, f64)> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for k in kps.iter().filter(|k| k.usable()) {
        sx += k.x;
        sy += k.y;
        n += 1;
    }
    (n > 0).then(|| (sx / n as f64, sy / n as f64))
}

fn detection_centroid(person: &Person) -> Option<(f64, f64)> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for k in person.keypoints.iter().filter(|k| k.valid) {
        sx += k.x;
        sy += k.y;
        n += 1;
    }
    (n > 0).then(|| (sx / n as f64, sy / n as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersonTrack {
    pub track_id: usize,
    pub last_centroid: (f64, f64),
    pub staleness: u32,
    filters: Vec<KeypointFilter>,
    scale: BodyScaleEstimator,
}

impl PersonTrack {
    fn new(track_id: usize, centroid: (f64, f64), calibration_window_s: f64) -> Self {
        Self {
            track_id,
            last_centroid: centroid,
            staleness: 0,
            filters: vec![KeypointFilter::default(); KEYPOINT_COUNT],
            scale: BodyScaleEstimator::new(calibration_window_s),
        }
    }

    pub fn body_scale(&self) -> Option<f64> {
        self.scale.current()
    }
}

/// Result of matching one frame's detections against the live tracks.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Assignment {
    /// `(detection index, track id)` pairs, including newly opened tracks.
    pub matched: Vec<(usize, usize)>,
    /// Track ids opened by this frame.
    pub opened: Vec<usize>,
    /// Detections that found neither a track nor a free slot.
    pub dropped: Vec<usize>,
    /// Live tracks without a detection this frame.
    pub unmatched_tracks: Vec<usize>,
}

/// Greedy nearest-centroid matching gated at `gate` image units. Pairs are
/// taken in order of increasing distance; leftover detections open the
/// lowest free track slots.
pub fn assign_tracks(
    detections: &[Option<(f64, f64)>],
    tracks: &[Option<PersonTrack>],
    gate: f64,
) -> Assignment {
    let mut pairs = Vec::new();
    for (d, det) in detections.iter().enumerate() {
        let Some(dc) = det else { continue };
        for track in tracks.iter().flatten() {
            let (tx, ty) = track.last_centroid;
            let dist = ((dc.0 - tx).powi(2) + (dc.1 - ty).powi(2)).sqrt();
            if dist <= gate {
                pairs.push((dist, d, track.track_id));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut out = Assignment::default();
    let mut det_used = vec![false; detections.len()];
    let mut track_used = vec![false; tracks.len()];
    for (_, d, t) in pairs {
        if !det_used[d] && !track_used[t] {
            det_used[d] = true;
            track_used[t] = true;
            out.matched.push((d, t));
        }
    }
    for (d, det) in detections.iter().enumerate() {
        if det_used[d] || det.is_none() {
            continue;
        }
        match (0..tracks.len()).find(|&t| tracks[t].is_none() && !track_used[t]) {
            Some(t) => {
                track_used[t] = true;
                out.matched.push((d, t));
                out.opened.push(t);
            }
            None => out.dropped.push(d),
        }
    }
    out.matched.sort_unstable();
    out.unmatched_tracks = tracks
        .iter()
        .flatten()
        .map(|t| t.track_id)
        .filter(|&id| !track_used[id])
        .collect();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CleanTrack {
    pub track_id: usize,
    /// Whether a detection was assigned to this track in this frame.
    pub detected: bool,
    pub keypoints: [CleanKeypoint; KEYPOINT_COUNT],
    pub body_scale: Option<f64>,
}

impl CleanTrack {
    pub fn centroid(&self) -> Option<(f64, f64)> {
        centroid_of(&self.keypoints)
    }

    pub fn usable_count(&self) -> usize {
        self.keypoints.iter().filter(|k| k.usable()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CleanFrame {
    pub timestamp: f64,
    pub tracks: Vec<CleanTrack>,
}

impl CleanFrame {
    pub fn track(&self, id: usize) -> Option<&CleanTrack> {
        self.tracks.iter().find(|t| t.track_id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum PipelineEvent {
    TrackOpened {
        t: f64,
        track: usize,
    },
    TrackRetired {
        t: f64,
        track: usize,
    },
    DetectionDropped {
        t: f64,
        person: u32,
    },
    KeypointStale {
        t: f64,
        track: usize,
        keypoint: usize,
    },
    Calibrated {
        t: f64,
        track: usize,
        body_scale: f64,
    },
}

/// Stateful, single-writer post-processing stage.
#[derive(Debug, Clone)]
pub struct PosePipeline {
    theta: f64,
    alpha: f64,
    max_gap: u32,
    gate: f64,
    calibration_window_s: f64,
    tracks: Vec<Option<PersonTrack>>,
}

impl PosePipeline {
    pub fn new(config: &EngineConfig) -> Self {
        Self {
            theta: config.confidence_threshold,
            alpha: config.smoothing_alpha,
            max_gap: config.max_gap_frames,
            gate: config.track_gate,
            calibration_window_s: config.calibration_window_s,
            tracks: vec![None; config.max_persons],
        }
    }

    pub fn tracks(&self) -> impl Iterator<Item = &PersonTrack> {
        self.tracks.iter().flatten()
    }

    pub fn process(&mut self, frame: &PoseFrame) -> (CleanFrame, Vec<PipelineEvent>) {
        let t = frame.timestamp;
        let gated = gate_confidence(frame, self.theta);
        let detections: Vec<Option<(f64, f64)>> =
            gated.persons.iter().map(detection_centroid).collect();
        let assignment = assign_tracks(&detections, &self.tracks, self.gate);
        let mut events = Vec::new();

        for &d in &assignment.dropped {
            events.push(PipelineEvent::DetectionDropped {
                t,
                person: gated.persons[d].id,
            });
        }
        for &(d, id) in &assignment.matched {
            if let (true, Some(centroid)) = (assignment.opened.contains(&id), detections[d]) {
                self.tracks[id] = Some(PersonTrack::new(id, centroid, self.calibration_window_s));
                events.push(PipelineEvent::TrackOpened { t, track: id });
            }
        }

        let mut clean = Vec::new();
        for id in 0..self.tracks.len() {
            let Some(track) = self.tracks[id].as_mut() else {
                continue;
            };
            let detection = assignment.matched.iter().find(|m| m.1 == id).map(|m| m.0);
            let person = detection.map(|d| &gated.persons[d]);
            match detection.and_then(|d| detections[d]) {
                Some(c) => {
                    track.staleness = 0;
                    track.last_centroid = c;
                }
                None => track.staleness += 1,
            }
            if track.staleness > self.max_gap {
                events.push(PipelineEvent::TrackRetired { t, track: id });
                self.tracks[id] = None;
                continue;
            }

            let mut kps = [CleanKeypoint {
                x: 0.0,
                y: 0.0,
                status: KeypointStatus::Stale,
            }; KEYPOINT_COUNT];
            for (i, filter) in track.filters.iter_mut().enumerate() {
                let obs = person.and_then(|p| {
                    let k = p.keypoints[i];
                    k.valid.then_some((k.x, k.y))
                });
                let was_stale = filter.misses > self.max_gap;
                kps[i] = filter.update(obs, self.alpha, self.max_gap);
                if kps[i].status == KeypointStatus::Stale && !was_stale && filter.value.is_some() {
                    events.push(PipelineEvent::KeypointStale {
                        t,
                        track: id,
                        keypoint: i,
                    });
                }
            }
            let was_calibrated = track.scale.current().is_some();
            let body_scale = track.scale.update(t, torso_length(&kps));
            if let (false, Some(s)) = (was_calibrated, body_scale) {
                events.push(PipelineEvent::Calibrated {
                    t,
                    track: id,
                    body_scale: s,
                });
            }
            clean.push(CleanTrack {
                track_id: id,
                detected: person.is_some(),
                keypoints: kps,
                body_scale,
            });
        }
        for e in &events {
            tracing::debug!(?e, "pipeline");
        }
        (
            CleanFrame {
                timestamp: t,
                tracks: clean,
            },
            events,
        )
    }
}
