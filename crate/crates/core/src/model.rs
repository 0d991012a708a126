//! Domain types shared across the engine: keypoints, pose frames, emotion
//! labels and the line-delimited recording format.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of keypoints per person (COCO layout).
pub const KEYPOINT_COUNT: usize = 17;

/// Default number of simultaneously tracked persons.
pub const MAX_PERSONS: usize = 3;

/// Coordinates outside [0,1] by at most this much are clamped instead of rejected.
pub const CLAMP_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(usize)]
pub enum KeypointName {
    Nose = 0,
    LeftEye,
    RightEye,
    LeftEar,
    RightEar,
    LeftShoulder,
    RightShoulder,
    LeftElbow,
    RightElbow,
    LeftWrist,
    RightWrist,
    LeftHip,
    RightHip,
    LeftKnee,
    RightKnee,
    LeftAnkle,
    RightAnkle,
}

impl KeypointName {
    pub const ALL: [KeypointName; KEYPOINT_COUNT] = [
        KeypointName::Nose,
        KeypointName::LeftEye,
        KeypointName::RightEye,
        KeypointName::LeftEar,
        KeypointName::RightEar,
        KeypointName::LeftShoulder,
        KeypointName::RightShoulder,
        KeypointName::LeftElbow,
        KeypointName::RightElbow,
        KeypointName::LeftWrist,
        KeypointName::RightWrist,
        KeypointName::LeftHip,
        KeypointName::RightHip,
        KeypointName::LeftKnee,
        KeypointName::RightKnee,
        KeypointName::LeftAnkle,
        KeypointName::RightAnkle,
    ];

    /// Extremities used for the expansion feature.
    pub const EXTREMITIES: [KeypointName; 4] = [
        KeypointName::LeftWrist,
        KeypointName::RightWrist,
        KeypointName::LeftAnkle,
        KeypointName::RightAnkle,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
    pub valid: bool,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, confidence: f64) -> Self {
        Self {
            x,
            y,
            confidence,
            valid: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FrameSource {
    #[default]
    Recording,
    Synthetic,
    Live,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Person {
    pub id: u32,
    pub keypoints: [Keypoint; KEYPOINT_COUNT],
}

impl Person {
    pub fn keypoint(&self, name: KeypointName) -> &Keypoint {
        &self.keypoints[name.index()]
    }
}

/// A validated, timestamped set of detected persons.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseFrame {
    pub timestamp: f64,
    pub persons: Vec<Person>,
    pub source: FrameSource,
}

/// One line of a session recording, exactly as it appears on disk.
///
/// Field order is significant: `t` then `persons`, and `id` then `kp`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawFrame {
    pub t: f64,
    pub persons: Vec<RawPerson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPerson {
    pub id: u32,
    pub kp: Vec<[f64; 3]>,
}

impl From<&PoseFrame> for RawFrame {
    fn from(frame: &PoseFrame) -> Self {
        RawFrame {
            t: frame.timestamp,
            persons: frame
                .persons
                .iter()
                .map(|p| RawPerson {
                    id: p.id,
                    kp: p
                        .keypoints
                        .iter()
                        .map(|k| [k.x, k.y, k.confidence])
                        .collect(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrameError {
    #[error("timestamp {t} does not follow previous timestamp {previous}")]
    NonMonotonicTimestamp { t: f64, previous: f64 },
    #[error("person {person} has {count} keypoints, expected {KEYPOINT_COUNT}")]
    WrongKeypointCount { person: u32, count: usize },
    #[error("person {person} keypoint {index}: coordinate {value} out of range")]
    CoordinateOutOfRange {
        person: u32,
        index: usize,
        value: f64,
    },
    #[error("person {person} keypoint {index}: confidence {value} out of range")]
    InvalidConfidence {
        person: u32,
        index: usize,
        value: f64,
    },
    #[error("timestamp is not finite")]
    NonFiniteTimestamp,
    #[error("person id {0} appears more than once")]
    DuplicatePerson(u32),
}

/// Non-fatal observations made while validating a frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum FrameEvent {
    CoordinateClamped { t: f64, person: u32, index: usize },
    PersonsDropped { t: f64, ids: Vec<u32> },
}

/// Stateful validator enforcing timestamp monotonicity across a stream.
#[derive(Debug, Clone)]
pub struct FrameValidator {
    capacity: usize,
    last_timestamp: Option<f64>,
}

impl Default for FrameValidator {
    fn default() -> Self {
        Self::new(MAX_PERSONS)
    }
}

impl FrameValidator {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            last_timestamp: None,
        }
    }

    pub fn last_timestamp(&self) -> Option<f64> {
        self.last_timestamp
    }

    /// Validates a raw record. On success the frame satisfies every
    /// `PoseFrame` invariant; on error the validator state is unchanged.
    pub fn validate(
        &mut self,
        raw: &RawFrame,
        source: FrameSource,
    ) -> Result<(PoseFrame, Vec<FrameEvent>), FrameError> {
        let t = raw.t;
        if !t.is_finite() {
            return Err(FrameError::NonFiniteTimestamp);
        }
        if let Some(previous) = self.last_timestamp {
            if t <= previous {
                return Err(FrameError::NonMonotonicTimestamp { t, previous });
            }
        }

        let mut events = Vec::new();
        let mut persons = Vec::with_capacity(raw.persons.len());
        for rp in &raw.persons {
            if persons.iter().any(|p: &Person| p.id == rp.id) {
                return Err(FrameError::DuplicatePerson(rp.id));
            }
            if rp.kp.len() != KEYPOINT_COUNT {
                return Err(FrameError::WrongKeypointCount {
                    person: rp.id,
                    count: rp.kp.len(),
                });
            }
            let mut keypoints = [Keypoint::new(0.0, 0.0, 0.0); KEYPOINT_COUNT];
            let mut clamped = false;
            for (index, &[x, y, c]) in rp.kp.iter().enumerate() {
                let x = check_coordinate(rp.id, index, x, &mut clamped)?;
                let y = check_coordinate(rp.id, index, y, &mut clamped)?;
                if !(0.0..=1.0).contains(&c) {
                    return Err(FrameError::InvalidConfidence {
                        person: rp.id,
                        index,
                        value: c,
                    });
                }
                keypoints[index] = Keypoint::new(x, y, c);
                if clamped {
                    events.push(FrameEvent::CoordinateClamped {
                        t,
                        person: rp.id,
                        index,
                    });
                    clamped = false;
                }
            }
            persons.push(Person {
                id: rp.id,
                keypoints,
            });
        }

        persons.sort_by_key(|p| p.id);
        if persons.len() > self.capacity {
            let dropped: Vec<u32> = persons.drain(self.capacity..).map(|p| p.id).collect();
            tracing::debug!(t, ?dropped, "persons beyond capacity dropped");
            events.push(FrameEvent::PersonsDropped { t, ids: dropped });
        }

        self.last_timestamp = Some(t);
        Ok((
            PoseFrame {
                timestamp: t,
                persons,
                source,
            },
            events,
        ))
    }
}

fn check_coordinate(
    person: u32,
    index: usize,
    value: f64,
    clamped: &mut bool,
) -> Result<f64, FrameError> {
    if !value.is_finite() || !(-CLAMP_TOLERANCE..=1.0 + CLAMP_TOLERANCE).contains(&value) {
        return Err(FrameError::CoordinateOutOfRange {
            person,
            index,
            value,
        });
    }
    if !(0.0..=1.0).contains(&value) {
        *clamped = true;
    }
    Ok(value.clamp(0.0, 1.0))
}

/// Emotion label: the four predefined emotions plus labels taught during a session.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EmotionLabel {
    Happiness,
    Relaxation,
    Anger,
    Sadness,
    Taught(String),
}

pub const MAX_LABEL_LEN: usize = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LabelError {
    #[error("label is empty")]
    Empty,
    #[error("label {0:?} exceeds {MAX_LABEL_LEN} characters")]
    TooLong(String),
}

impl EmotionLabel {
    pub const PREDEFINED: [EmotionLabel; 4] = [
        EmotionLabel::Happiness,
        EmotionLabel::Relaxation,
        EmotionLabel::Anger,
        EmotionLabel::Sadness,
    ];

    pub fn as_str(&self) -> &str {
        match self {
            EmotionLabel::Happiness => "happiness",
            EmotionLabel::Relaxation => "relaxation",
            EmotionLabel::Anger => "anger",
            EmotionLabel::Sadness => "sadness",
            EmotionLabel::Taught(name) => name,
        }
    }

    pub fn is_predefined(&self) -> bool {
        !matches!(self, EmotionLabel::Taught(_))
    }

    /// Index within [`EmotionLabel::PREDEFINED`], if predefined.
    pub fn predefined_index(&self) -> Option<usize> {
        Self::PREDEFINED.iter().position(|l| l == self)
    }
}

impl FromStr for EmotionLabel {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        if trimmed.is_empty() {
            return Err(LabelError::Empty);
        }
        if trimmed.chars().count() > MAX_LABEL_LEN {
            return Err(LabelError::TooLong(trimmed.to_string()));
        }
        Ok(match trimmed.to_ascii_lowercase().as_str() {
            // "joy" and "happiness" name the same predefined emotion.
            "happiness" | "joy" => EmotionLabel::Happiness,
            "relaxation" => EmotionLabel::Relaxation,
            "anger" => EmotionLabel::Anger,
            "sadness" => EmotionLabel::Sadness,
            _ => EmotionLabel::Taught(trimmed.to_string()),
        })
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for EmotionLabel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for EmotionLabel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error)]
pub enum RecordingError {
    #[error("line {line}: invalid JSON")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: invalid frame")]
    Invalid {
        line: usize,
        #[source]
        source: FrameError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RecordingError {
    /// 1-based line number of the offending record, if any.
    pub fn line(&self) -> Option<usize> {
        match self {
            RecordingError::Parse { line, .. } | RecordingError::Invalid { line, .. } => {
                Some(*line)
            }
            RecordingError::Io(_) => None,
        }
    }
}

/// Parses a recording into raw records. Blank lines are skipped.
pub fn read_recording<R: BufRead>(reader: R) -> Result<Vec<RawFrame>, RecordingError> {
    let mut frames = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let frame = serde_json::from_str(&line).map_err(|source| RecordingError::Parse {
            line: i + 1,
            source,
        })?;
        frames.push(frame);
    }
    Ok(frames)
}

/// Parses and validates a recording, failing on the first invalid line.
pub fn load_recording<R: BufRead>(
    reader: R,
    source: FrameSource,
) -> Result<Vec<PoseFrame>, RecordingError> {
    let mut validator = FrameValidator::default();
    let mut frames = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawFrame =
            serde_json::from_str(&line).map_err(|source| RecordingError::Parse {
                line: i + 1,
                source,
            })?;
        let (frame, _) =
            validator
                .validate(&raw, source)
                .map_err(|source| RecordingError::Invalid {
                    line: i + 1,
                    source,
                })?;
        frames.push(frame);
    }
    Ok(frames)
}

pub fn write_recording<W: Write>(mut writer: W, frames: &[RawFrame]) -> std::io::Result<()> {
    for frame in frames {
        serde_json::to_writer(&mut writer, frame)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}
