//! Windowed movement descriptors per person and for the group.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{EngineConfig, FeatureRanges};
use crate::model::{KeypointName, KEYPOINT_COUNT};
use crate::pipeline::{centroid_of, CleanFrame, CleanKeypoint};

pub const FEATURE_COUNT: usize = 8;

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "speed",
    "energy",
    "amplitude",
    "expansion",
    "jerk",
    "frequency",
    "qom",
    "rom",
];

/// Minimum number of usable frames needed for a third difference.
const MIN_VALID_FRAMES: usize = 4;

/// Raw per-person movement features over one window. Spatial quantities are
/// expressed in body lengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct FeatureVector {
    pub speed: f64,
    pub energy: f64,
    pub amplitude: f64,
    pub expansion: f64,
    pub jerk: f64,
    pub frequency: f64,
    pub qom: f64,
    pub rom: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [
            self.speed,
            self.energy,
            self.amplitude,
            self.expansion,
            self.jerk,
            self.frequency,
            self.qom,
            self.rom,
        ]
    }

    pub fn from_array(a: [f64; FEATURE_COUNT]) -> Self {
        Self {
            speed: a[0],
            energy: a[1],
            amplitude: a[2],
            expansion: a[3],
            jerk: a[4],
            frequency: a[5],
            qom: a[6],
            rom: a[7],
        }
    }
}

/// A feature vector mapped onto `[0,1]^8` by the configured reference ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct NormalizedFeatures(pub [f64; FEATURE_COUNT]);

impl NormalizedFeatures {
    pub fn speed(&self) -> f64 {
        self.0[0]
    }
    pub fn energy(&self) -> f64 {
        self.0[1]
    }
    pub fn amplitude(&self) -> f64 {
        self.0[2]
    }
    pub fn expansion(&self) -> f64 {
        self.0[3]
    }
    pub fn jerk(&self) -> f64 {
        self.0[4]
    }
    pub fn frequency(&self) -> f64 {
        self.0[5]
    }
    pub fn qom(&self) -> f64 {
        self.0[6]
    }
    pub fn rom(&self) -> f64 {
        self.0[7]
    }

    /// Component-wise mean; `None` for an empty input.
    pub fn mean<'a, I: IntoIterator<Item = &'a NormalizedFeatures>>(
        items: I,
    ) -> Option<NormalizedFeatures> {
        let mut acc = [0.0; FEATURE_COUNT];
        let mut n = 0usize;
        for f in items {
            for (a, x) in acc.iter_mut().zip(f.0) {
                *a += x;
            }
            n += 1;
        }
        (n > 0).then(|| NormalizedFeatures(acc.map(|a| a / n as f64)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupFeatures {
    pub count: usize,
    pub proximity: f64,
    pub synchrony: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("track {track}: {valid} of {total} frames usable")]
    InsufficientWindow {
        track: usize,
        valid: usize,
        total: usize,
    },
}

/// Parameters of the feature extractor, taken from [`EngineConfig`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureParams {
    pub window_s: f64,
    pub qom_threshold: f64,
    pub frequency_deadband: f64,
    pub proximity_scale: f64,
}

impl From<&EngineConfig> for FeatureParams {
    fn from(c: &EngineConfig) -> Self {
        Self {
            window_s: c.window_s,
            qom_threshold: c.qom_threshold,
            frequency_deadband: c.frequency_deadband,
            proximity_scale: c.proximity_scale,
        }
    }
}

struct Sample<'a> {
    t: f64,
    keypoints: &'a [CleanKeypoint; KEYPOINT_COUNT],
    centroid: (f64, f64),
    scale: f64,
}

fn usable_samples(window: &[CleanFrame], track: usize) -> Vec<Sample<'_>> {
    window
        .iter()
        .filter_map(|frame| {
            let tr = frame.track(track)?;
            let scale = tr.body_scale?;
            if tr.usable_count() * 2 < KEYPOINT_COUNT {
                return None;
            }
            Some(Sample {
                t: frame.timestamp,
                keypoints: &tr.keypoints,
                centroid: tr.centroid()?,
                scale,
            })
        })
        .collect()
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

fn bbox_diagonal(kps: &[CleanKeypoint]) -> Option<f64> {
    let mut it = kps.iter().filter(|k| k.usable());
    let first = it.next()?;
    let (mut x0, mut x1, mut y0, mut y1) = (first.x, first.x, first.y, first.y);
    for k in it {
        x0 = x0.min(k.x);
        x1 = x1.max(k.x);
        y0 = y0.min(k.y);
        y1 = y1.max(k.y);
    }
    Some(((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt())
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Counts sign reversals of `series` with a symmetric deadband: the signal
/// must pass beyond `+deadband` or `-deadband` to register a new sign.
pub fn count_crossings(series: &[f64], deadband: f64) -> usize {
    let mut state = 0i8;
    let mut crossings = 0;
    for &v in series {
        let sign = if v > deadband {
            1
        } else if v < -deadband {
            -1
        } else {
            continue;
        };
        if state != 0 && sign != state {
            crossings += 1;
        }
        state = sign;
    }
    crossings
}

/// Computes the movement features of one track over a window of clean frames.
pub fn extract_features(
    window: &[CleanFrame],
    track: usize,
    params: &FeatureParams,
) -> Result<FeatureVector, FeatureError> {
    let samples = usable_samples(window, track);
    let total = window.len();
    if samples.len() < MIN_VALID_FRAMES || samples.len() * 2 < total {
        return Err(FeatureError::InsufficientWindow {
            track,
            valid: samples.len(),
            total,
        });
    }
    // Normalize by the most recent calibration so that the whole window shares one scale.
    let s = samples.last().expect("non-empty").scale;

    let mut speeds = Vec::with_capacity(samples.len());
    let mut vertical = Vec::with_capacity(samples.len());
    let mut energies = Vec::with_capacity(samples.len());
    let mut qoms = Vec::with_capacity(samples.len());
    for pair in samples.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let dt = b.t - a.t;
        speeds.push(dist(a.centroid, b.centroid) / dt / s);
        vertical.push((b.centroid.1 - a.centroid.1) / dt / s);
        let (mut e, mut moving, mut n) = (0.0, 0usize, 0usize);
        for (ka, kb) in a.keypoints.iter().zip(b.keypoints.iter()) {
            if !(ka.usable() && kb.usable()) {
                continue;
            }
            let d = dist((ka.x, ka.y), (kb.x, kb.y));
            e += (d / dt / s).powi(2);
            if d > params.qom_threshold * s {
                moving += 1;
            }
            n += 1;
        }
        if n > 0 {
            energies.push(e / n as f64);
            qoms.push(moving as f64 / n as f64);
        }
    }

    let diagonals: Vec<f64> = samples
        .iter()
        .filter_map(|x| bbox_diagonal(x.keypoints))
        .collect();
    let amplitude = mean(diagonals.iter().map(|d| d / s));
    let rom = match (
        diagonals.iter().copied().reduce(f64::max),
        diagonals.iter().copied().reduce(f64::min),
    ) {
        (Some(hi), Some(lo)) => (hi - lo) / s,
        _ => 0.0,
    };

    let expansion = mean(samples.iter().filter_map(|x| {
        let d: Vec<f64> = KeypointName::EXTREMITIES
            .iter()
            .map(|n| x.keypoints[n.index()])
            .filter(|k| k.usable())
            .map(|k| dist((k.x, k.y), x.centroid) / s)
            .collect();
        (!d.is_empty()).then(|| mean(d))
    }));

    let n = samples.len();
    let dt_mean = (samples[n - 1].t - samples[0].t) / (n - 1) as f64;
    let jerk = mean(samples.windows(4).map(|w| {
        let jx = w[3].centroid.0 - 3.0 * w[2].centroid.0 + 3.0 * w[1].centroid.0 - w[0].centroid.0;
        let jy = w[3].centroid.1 - 3.0 * w[2].centroid.1 + 3.0 * w[1].centroid.1 - w[0].centroid.1;
        (jx * jx + jy * jy).sqrt() / dt_mean.powi(3) / s
    }));

    let frequency =
        count_crossings(&vertical, params.frequency_deadband) as f64 / (2.0 * params.window_s);

    Ok(FeatureVector {
        speed: mean(speeds),
        energy: mean(energies),
        amplitude,
        expansion,
        jerk,
        frequency,
        qom: mean(qoms),
        rom,
    })
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    if n < 3 {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa <= f64::EPSILON * n as f64 || sbb <= f64::EPSILON * n as f64 {
        return 0.0;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// Group context for the given active tracks over a window.
pub fn extract_group(
    window: &[CleanFrame],
    active: &[usize],
    params: &FeatureParams,
) -> GroupFeatures {
    let count = active.len();
    if count < 2 {
        return GroupFeatures {
            count,
            proximity: 0.0,
            synchrony: 1.0,
        };
    }

    let mean_centroids: Vec<Option<(f64, f64)>> = active
        .iter()
        .map(|&id| {
            let cs: Vec<(f64, f64)> = window
                .iter()
                .filter_map(|f| f.track(id).and_then(|t| centroid_of(&t.keypoints)))
                .collect();
            (!cs.is_empty()).then(|| (mean(cs.iter().map(|c| c.0)), mean(cs.iter().map(|c| c.1))))
        })
        .collect();

    // Per-frame centroid speed, indexed by frame position within the window.
    let speed_series: Vec<Vec<Option<f64>>> = active
        .iter()
        .map(|&id| {
            let mut out = vec![None; window.len()];
            for i in 1..window.len() {
                let prev = window[i - 1].track(id);
                let cur = window[i].track(id);
                if let (Some(p), Some(c)) = (prev, cur) {
                    if let (Some(pc), Some(cc), Some(s)) =
                        (p.centroid(), c.centroid(), c.body_scale)
                    {
                        let dt = window[i].timestamp - window[i - 1].timestamp;
                        out[i] = Some(dist(pc, cc) / dt / s);
                    }
                }
            }
            out
        })
        .collect();

    let mut distances = Vec::new();
    let mut correlations = Vec::new();
    for i in 0..count {
        for j in i + 1..count {
            if let (Some(a), Some(b)) = (mean_centroids[i], mean_centroids[j]) {
                distances.push(dist(a, b));
            }
            let (xs, ys): (Vec<f64>, Vec<f64>) = speed_series[i]
                .iter()
                .zip(&speed_series[j])
                .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
                .unzip();
            correlations.push(pearson(&xs, &ys));
        }
    }
    let proximity = if distances.is_empty() {
        0.0
    } else {
        1.0 - (mean(distances) / params.proximity_scale).clamp(0.0, 1.0)
    };
    GroupFeatures {
        count,
        proximity,
        synchrony: mean(correlations).clamp(-1.0, 1.0),
    }
}

/// Per-feature affine map onto `[0,1]`, clamped.
pub fn normalize(features: &FeatureVector, ranges: &FeatureRanges) -> NormalizedFeatures {
    let raw = features.to_array();
    let mut out = [0.0; FEATURE_COUNT];
    for ((o, x), [lo, hi]) in out.iter_mut().zip(raw).zip(ranges.as_array()) {
        *o = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
    }
    NormalizedFeatures(out)
}
