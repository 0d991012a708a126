//! The per-session emotional lexicon: one feature prototype per label,
//! learned from demonstrations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{NormalizedFeatures, FEATURE_COUNT};
use crate::model::EmotionLabel;

/// Running mean and variance (Welford) over feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunningStats {
    pub n: u64,
    pub mean: [f64; FEATURE_COUNT],
    m2: [f64; FEATURE_COUNT],
}

impl RunningStats {
    pub fn push(&mut self, x: &[f64; FEATURE_COUNT]) {
        self.n += 1;
        let n = self.n as f64;
        for ((xi, mean), m2) in x.iter().zip(&mut self.mean).zip(&mut self.m2) {
            let delta = xi - *mean;
            *mean += delta / n;
            *m2 += delta * (xi - *mean);
        }
    }

    /// Population standard deviation per feature.
    pub fn std_dev(&self) -> [f64; FEATURE_COUNT] {
        if self.n == 0 {
            return [0.0; FEATURE_COUNT];
        }
        self.m2.map(|m| (m / self.n as f64).max(0.0).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub label: EmotionLabel,
    pub stats: RunningStats,
    /// Sum of circumplex positions observed while teaching, for anchor placement.
    va_sum: [f64; 2],
    /// Valence/arousal anchor used when mapping a distribution back onto the plane.
    pub anchor: [f64; 2],
}

impl LexiconEntry {
    pub fn n(&self) -> u64 {
        self.stats.n
    }

    pub fn mean(&self) -> &[f64; FEATURE_COUNT] {
        &self.stats.mean
    }

    /// Per-feature spread floored at `sigma_floor`.
    pub fn spread(&self, sigma_floor: f64) -> [f64; FEATURE_COUNT] {
        self.stats.std_dev().map(|s| s.max(sigma_floor))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TeachError {
    #[error("segment lasts {usable_s:.2} s after the lead-in, needs {required_s:.2} s")]
    SegmentTooShort { usable_s: f64, required_s: f64 },
}

/// A demonstration: timestamped windows between a start and end time.
#[derive(Debug, Clone, PartialEq)]
pub struct TeachSegment {
    pub start: f64,
    pub end: f64,
    /// `(timestamp, features, (valence, arousal))`
    pub windows: Vec<(f64, NormalizedFeatures, (f64, f64))>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionLexicon {
    entries: Vec<LexiconEntry>,
    predefined_anchors: [[f64; 2]; 4],
}

impl EmotionLexicon {
    /// Empty lexicon holding the four predefined labels.
    pub fn new(predefined_anchors: [[f64; 2]; 4]) -> Self {
        let entries = EmotionLabel::PREDEFINED
            .iter()
            .zip(predefined_anchors)
            .map(|(label, anchor)| LexiconEntry {
                label: label.clone(),
                stats: RunningStats::default(),
                va_sum: [0.0; 2],
                anchor,
            })
            .collect();
        Self {
            entries,
            predefined_anchors,
        }
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> Vec<EmotionLabel> {
        self.entries.iter().map(|e| e.label.clone()).collect()
    }

    pub fn index_of(&self, label: &EmotionLabel) -> Option<usize> {
        self.entries.iter().position(|e| &e.label == label)
    }

    /// Adds a taught label if absent and returns its index.
    pub fn ensure_label(&mut self, label: &EmotionLabel) -> usize {
        if let Some(i) = self.index_of(label) {
            return i;
        }
        self.entries.push(LexiconEntry {
            label: label.clone(),
            stats: RunningStats::default(),
            va_sum: [0.0; 2],
            // placeholder until the first observation fixes the quadrant
            anchor: [0.0, 0.0],
        });
        self.entries.len() - 1
    }

    pub fn anchors(&self) -> Vec<[f64; 2]> {
        self.entries.iter().map(|e| e.anchor).collect()
    }

    pub fn total_samples(&self) -> u64 {
        self.entries.iter().map(|e| e.n()).sum()
    }

    /// Accumulates one window into the label's prototype.
    pub fn observe(&mut self, label: &EmotionLabel, features: &NormalizedFeatures, va: (f64, f64)) {
        let idx = self.ensure_label(label);
        let quadrant_anchors = self.predefined_anchors;
        let entry = &mut self.entries[idx];
        entry.stats.push(&features.0);
        entry.va_sum[0] += va.0;
        entry.va_sum[1] += va.1;
        if !label.is_predefined() {
            let n = entry.stats.n as f64;
            entry.anchor =
                quadrant_anchor(&quadrant_anchors, entry.va_sum[0] / n, entry.va_sum[1] / n);
        }
    }

    /// Teaches a label from a whole segment. The first `lead_in_s` seconds
    /// are discarded; the remainder must last at least `min_segment_s`.
    pub fn teach(
        &mut self,
        label: &EmotionLabel,
        segment: &TeachSegment,
        lead_in_s: f64,
        min_segment_s: f64,
    ) -> Result<usize, TeachError> {
        let usable_s = segment.end - segment.start - lead_in_s;
        if usable_s < min_segment_s {
            return Err(TeachError::SegmentTooShort {
                usable_s,
                required_s: min_segment_s,
            });
        }
        let cutoff = segment.start + lead_in_s;
        let mut taught = 0;
        for (t, features, va) in &segment.windows {
            if *t >= cutoff && *t <= segment.end {
                self.observe(label, features, *va);
                taught += 1;
            }
        }
        Ok(taught)
    }

    /// Moves a label's prototype mean toward `recent` by `rate`. Labels
    /// without samples are left untouched.
    pub fn adapt(&mut self, index: usize, recent: &NormalizedFeatures, rate: f64) -> bool {
        let Some(entry) = self.entries.get_mut(index) else {
            return false;
        };
        if entry.stats.n == 0 || rate == 0.0 {
            return false;
        }
        for (m, r) in entry.stats.mean.iter_mut().zip(recent.0) {
            *m = (1.0 - rate) * *m + rate * r;
        }
        true
    }
}

/// Anchor of the predefined label whose quadrant contains `(v, a)`.
pub fn quadrant_anchor(anchors: &[[f64; 2]; 4], v: f64, a: f64) -> [f64; 2] {
    // predefined order: happiness, relaxation, anger, sadness
    match (v >= 0.0, a >= 0.0) {
        (true, true) => anchors[0],
        (true, false) => anchors[1],
        (false, true) => anchors[2],
        (false, false) => anchors[3],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::AnchorConfig;

    fn lex() -> EmotionLexicon {
        EmotionLexicon::new(AnchorConfig::default().as_array())
    }

    fn segment(start: f64, end: f64, f: impl Fn(usize) -> [f64; 8]) -> TeachSegment {
        let n = ((end - start) / 0.1).round() as usize;
        TeachSegment {
            start,
            end,
            windows: (0..=n)
                .map(|i| (start + i as f64 * 0.1, NormalizedFeatures(f(i)), (0.5, 0.5)))
                .collect(),
        }
    }

    #[test]
    fn constant_segment_gives_floored_spread() {
        let mut l = lex();
        let x = [0.3, 0.1, 0.9, 0.5, 0.2, 0.7, 0.4, 0.6];
        l.teach(&EmotionLabel::Anger, &segment(0.0, 5.0, |_| x), 1.0, 3.0)
            .unwrap();
        let e = &l.entries()[l.index_of(&EmotionLabel::Anger).unwrap()];
        for (m, xi) in e.mean().iter().zip(x) {
            assert!((m - xi).abs() < 1e-12);
        }
        assert_eq!(e.spread(0.05), [0.05; 8]);
    }

    #[test]
    fn disjoint_segments_pool_to_batch_mean() {
        let mut l = lex();
        let label = EmotionLabel::Taught("awe".into());
        let f1 = |i: usize| [i as f64 * 0.01; 8];
        let f2 = |i: usize| [0.9 - i as f64 * 0.003; 8];
        let s1 = segment(0.0, 4.5, f1);
        let s2 = segment(10.0, 16.0, f2);
        l.teach(&label, &s1, 1.0, 3.0).unwrap();
        l.teach(&label, &s2, 1.0, 3.0).unwrap();

        // batch oracle over the concatenated post-lead-in windows
        let kept: Vec<f64> = s1
            .windows
            .iter()
            .filter(|w| w.0 >= 1.0)
            .chain(s2.windows.iter().filter(|w| w.0 >= 11.0))
            .map(|w| w.1 .0[0])
            .collect();
        let batch = kept.iter().sum::<f64>() / kept.len() as f64;
        let e = &l.entries()[l.index_of(&label).unwrap()];
        assert_eq!(e.n(), kept.len() as u64);
        assert!((e.mean()[0] - batch).abs() < 1e-12);
        // taught at (0.5, 0.5): happiness quadrant
        assert_eq!(e.anchor, [0.7, 0.7]);
    }

    #[test]
    fn short_segment_is_rejected_without_change() {
        let mut l = lex();
        let before = l.clone();
        let err = l
            .teach(
                &EmotionLabel::Sadness,
                &segment(0.0, 2.0, |_| [0.1; 8]),
                1.0,
                3.0,
            )
            .unwrap_err();
        assert!(matches!(err, TeachError::SegmentTooShort { .. }));
        assert_eq!(l, before);
    }

    #[test]
    fn adaptation_step() {
        let mut l = lex();
        l.observe(
            &EmotionLabel::Happiness,
            &NormalizedFeatures([0.5; 8]),
            (0.1, 0.1),
        );
        let before = l.clone();
        assert!(!l.adapt(0, &NormalizedFeatures([1.0; 8]), 0.0));
        assert_eq!(l, before);
        assert!(l.adapt(0, &NormalizedFeatures([1.0; 8]), 0.05));
        for m in l.entries()[0].mean() {
            assert!((m - 0.525).abs() < 1e-12);
        }
        // unlearned labels have no prototype to move
        assert!(!l.adapt(1, &NormalizedFeatures([1.0; 8]), 0.05));
    }
}
