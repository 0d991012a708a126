//! Emotion recommenders and their consensus.
//!
//! * behavioral: circumplex baseline blended with the taught lexicon
//! * contextual: pulls individual estimates toward the group mean by cohesion
//! * longitudinal: multi-scale averages of the consensus (see [`temporal`])
//!
//! Every recommender emits a [`Distribution`] over the session label set and
//! [`aggregate`] takes their weighted convex combination.

mod distribution;
pub mod lexicon;
pub mod temporal;

use serde::Serialize;
use thiserror::Error;

pub use distribution::Distribution;
pub use lexicon::{EmotionLexicon, TeachError, TeachSegment};
pub use temporal::{HalfLives, TemporalState, TrendShift};

use crate::config::EngineConfig;
use crate::features::{GroupFeatures, NormalizedFeatures};
use crate::model::EmotionLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "id")]
pub enum Subject {
    Person(usize),
    Group,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmotionEstimate {
    pub subject: Subject,
    pub timestamp: f64,
    pub distribution: Distribution,
    pub valence: f64,
    pub arousal: f64,
    pub intensity: f64,
    pub confidence: f64,
}

impl EmotionEstimate {
    pub fn top(&self) -> usize {
        self.distribution.argmax()
    }
}

/// Position on the valence/arousal plane plus the energy composite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CircumplexPoint {
    pub valence: f64,
    pub arousal: f64,
    pub energy: f64,
}

/// Maps normalized movement features onto the valence/arousal plane.
///
/// Energy blends speed, quantity of motion and frequency; arousal is energy
/// rescaled to `[-1,1]`. Valence rewards expansive, smooth movement.
pub fn circumplex_map(f: &NormalizedFeatures) -> CircumplexPoint {
    let energy = 0.5 * f.speed() + 0.3 * f.qom() + 0.2 * f.frequency();
    let arousal = (2.0 * energy - 1.0).clamp(-1.0, 1.0);
    let valence = (2.0 * (0.6 * f.expansion() + 0.4 * (1.0 - f.jerk())) - 1.0).clamp(-1.0, 1.0);
    CircumplexPoint {
        valence,
        arousal,
        energy: energy.clamp(0.0, 1.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecommenderParams {
    pub anchors: [[f64; 2]; 4],
    pub circumplex_sigma: f64,
    pub sigma_floor: f64,
    pub blend_full_windows: u32,
}

impl From<&EngineConfig> for RecommenderParams {
    fn from(c: &EngineConfig) -> Self {
        Self {
            anchors: c.anchors.as_array(),
            circumplex_sigma: c.circumplex_sigma,
            sigma_floor: c.sigma_floor,
            blend_full_windows: c.blend_full_windows,
        }
    }
}

/// Kernel distribution over the predefined anchors, padded with zeros for
/// taught labels.
pub fn baseline_distribution(
    point: (f64, f64),
    params: &RecommenderParams,
    labels: usize,
) -> Distribution {
    let two_sigma_sq = 2.0 * params.circumplex_sigma.powi(2);
    let mut logs: Vec<Option<f64>> = params
        .anchors
        .iter()
        .map(|[av, aa]| Some(-((point.0 - av).powi(2) + (point.1 - aa).powi(2)) / two_sigma_sq))
        .collect();
    logs.resize(labels.max(4), None);
    Distribution::from_log_weights(&logs)
}

/// Prototype likelihood distribution over labels with at least one sample.
pub fn learned_distribution(
    f: &NormalizedFeatures,
    lexicon: &EmotionLexicon,
    sigma_floor: f64,
) -> Option<Distribution> {
    let logs: Vec<Option<f64>> = lexicon
        .entries()
        .iter()
        .map(|e| {
            (e.n() > 0).then(|| {
                let spread = e.spread(sigma_floor);
                -e.mean()
                    .iter()
                    .zip(spread)
                    .zip(f.0)
                    .map(|((mu, s), x)| {
                        (x - mu).powi(2) / (2.0 * (s * s + sigma_floor * sigma_floor))
                    })
                    .sum::<f64>()
            })
        })
        .collect();
    logs.iter()
        .any(Option::is_some)
        .then(|| Distribution::from_log_weights(&logs))
}

/// Behavioral recommender for one person's window.
pub fn rec1_behavioral(
    features: &NormalizedFeatures,
    lexicon: &EmotionLexicon,
    params: &RecommenderParams,
    subject: Subject,
    timestamp: f64,
) -> EmotionEstimate {
    let point = circumplex_map(features);
    let k = lexicon.len();
    let base = baseline_distribution((point.valence, point.arousal), params, k);
    let beta = (lexicon.total_samples() as f64 / params.blend_full_windows as f64).min(1.0);
    let distribution = match learned_distribution(features, lexicon, params.sigma_floor) {
        Some(learned) if beta > 0.0 => Distribution::from_weights(
            learned
                .as_slice()
                .iter()
                .zip(base.as_slice())
                .map(|(l, b)| beta * l + (1.0 - beta) * b)
                .collect(),
        ),
        _ => base,
    };
    let confidence = distribution.confidence();
    EmotionEstimate {
        subject,
        timestamp,
        distribution,
        valence: point.valence,
        arousal: point.arousal,
        intensity: point.energy,
        confidence,
    }
}

/// Group cohesion in `[0,1]` from proximity and positive synchrony.
pub fn cohesion(group: &GroupFeatures) -> f64 {
    (0.5 * group.proximity + 0.5 * group.synchrony.max(0.0)).clamp(0.0, 1.0)
}

/// Contextual recommender: blends each person's distribution toward the
/// group mean in proportion to cohesion.
pub fn rec2_contextual(
    estimates: &[EmotionEstimate],
    group: &GroupFeatures,
    anchors: &[[f64; 2]],
) -> Vec<EmotionEstimate> {
    let c = cohesion(group);
    if estimates.len() < 2 || c == 0.0 {
        return estimates.to_vec();
    }
    let g = group_distribution(estimates);
    estimates
        .iter()
        .map(|e| {
            let distribution = Distribution::from_weights(
                e.distribution
                    .as_slice()
                    .iter()
                    .zip(g.as_slice())
                    .map(|(p, q)| (1.0 - c) * p + c * q)
                    .collect(),
            );
            let (valence, arousal) = distribution.weighted_point(anchors);
            EmotionEstimate {
                subject: e.subject,
                timestamp: e.timestamp,
                confidence: distribution.confidence(),
                intensity: e.intensity,
                distribution,
                valence,
                arousal,
            }
        })
        .collect()
}

/// Mean of the individual distributions.
pub fn group_distribution(estimates: &[EmotionEstimate]) -> Distribution {
    let k = estimates
        .iter()
        .map(|e| e.distribution.len())
        .max()
        .unwrap_or(0);
    let mut acc = vec![0.0; k];
    for e in estimates {
        for (a, p) in acc.iter_mut().zip(e.distribution.as_slice()) {
            *a += p;
        }
    }
    Distribution::from_weights(acc)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AggregateError {
    #[error("recommender {index} covers {got} labels, expected {expected}")]
    LabelSetMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("recommender weights must be non-negative with a positive sum")]
    InvalidWeights,
}

/// Weighted convex combination of recommender distributions.
pub fn combine(inputs: &[(f64, &Distribution)]) -> Result<Distribution, AggregateError> {
    let expected = inputs.first().map_or(0, |(_, d)| d.len());
    for (index, (w, d)) in inputs.iter().enumerate() {
        if d.len() != expected {
            return Err(AggregateError::LabelSetMismatch {
                index,
                expected,
                got: d.len(),
            });
        }
        if !w.is_finite() || *w < 0.0 {
            return Err(AggregateError::InvalidWeights);
        }
    }
    let total: f64 = inputs.iter().map(|(w, _)| w).sum();
    if total <= 0.0 {
        return Err(AggregateError::InvalidWeights);
    }
    let mut acc = vec![0.0; expected];
    for (w, d) in inputs {
        for (a, p) in acc.iter_mut().zip(d.as_slice()) {
            *a += w * p;
        }
    }
    acc.iter_mut().for_each(|a| *a /= total);
    Ok(Distribution::from_weights(acc))
}

/// Final consensus estimate. The longitudinal prior is optional (absent on
/// the first hop of a session), in which case its weight is dropped.
pub fn aggregate(
    rec1: &EmotionEstimate,
    rec2: &EmotionEstimate,
    rec3: Option<&Distribution>,
    weights: [f64; 3],
    anchors: &[[f64; 2]],
) -> Result<EmotionEstimate, AggregateError> {
    let mut inputs = vec![
        (weights[0], &rec1.distribution),
        (weights[1], &rec2.distribution),
    ];
    if let Some(prior) = rec3 {
        inputs.push((weights[2], prior));
    }
    let distribution = match combine(&inputs) {
        // the prior alone carried all the weight and is missing: fall back to the live inputs
        Err(AggregateError::InvalidWeights) if rec3.is_none() && weights[0] + weights[1] == 0.0 => {
            combine(&[(1.0, &rec1.distribution), (1.0, &rec2.distribution)])?
        }
        other => other?,
    };
    let (valence, arousal) = distribution.weighted_point(anchors);
    Ok(EmotionEstimate {
        subject: rec1.subject,
        timestamp: rec1.timestamp,
        confidence: distribution.confidence(),
        intensity: rec1.intensity,
        distribution,
        valence,
        arousal,
    })
}

/// Inputs visible to an additional modality recommender.
#[derive(Debug, Clone, Copy)]
pub struct RecommenderInput<'a> {
    pub subject: Subject,
    pub timestamp: f64,
    pub features: &'a NormalizedFeatures,
    pub labels: &'a [EmotionLabel],
}

/// Extension point for further modalities (face, voice, physiology). An
/// implementation returns a distribution over `input.labels`, or `None`
/// when it has no opinion for this subject and hop.
pub trait Recommender: Send {
    fn name(&self) -> &str;
    fn recommend(&self, input: &RecommenderInput<'_>) -> Option<Distribution>;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::AnchorConfig;
    use proptest::prelude::*;

    fn params() -> RecommenderParams {
        RecommenderParams::from(&EngineConfig::default())
    }

    fn lex() -> EmotionLexicon {
        EmotionLexicon::new(AnchorConfig::default().as_array())
    }

    fn estimate(d: Vec<f64>) -> EmotionEstimate {
        let distribution = Distribution::from_weights(d);
        EmotionEstimate {
            subject: Subject::Person(0),
            timestamp: 0.0,
            confidence: distribution.confidence(),
            distribution,
            valence: 0.0,
            arousal: 0.0,
            intensity: 0.3,
        }
    }

    #[test]
    fn circumplex_formula_cases() {
        let p = circumplex_map(&NormalizedFeatures([0.0; 8]));
        assert_eq!(p.arousal, -1.0);
        assert!((p.valence - (2.0 * 0.4 - 1.0)).abs() < 1e-12);

        let mut f = [0.0; 8];
        f[0] = 1.0; // speed
        f[6] = 1.0; // qom
        f[5] = 1.0; // frequency
        assert!((circumplex_map(&NormalizedFeatures(f)).arousal - 1.0).abs() < 1e-12);

        let mut f = [0.0; 8];
        f[3] = 1.0; // expansion
        assert_eq!(circumplex_map(&NormalizedFeatures(f)).valence, 1.0);
    }

    /// Features whose circumplex position is `(v, a)`: a = 2(0.5 s + 0.3 q + 0.2 f) - 1
    /// with s = q = f, and v = 2(0.6 x + 0.4) - 1 with zero jerk.
    fn features_at(v: f64, a: f64) -> NormalizedFeatures {
        let e = (a + 1.0) / 2.0;
        let x = ((v + 1.0) / 2.0 - 0.4) / 0.6;
        NormalizedFeatures([e, 0.0, 0.0, x, 0.0, e, e, 0.0])
    }

    #[test]
    fn baseline_at_anchor_and_origin() {
        let f = features_at(0.7, 0.7);
        let p = circumplex_map(&f);
        assert!((p.valence - 0.7).abs() < 1e-12 && (p.arousal - 0.7).abs() < 1e-12);
        let e = rec1_behavioral(&f, &lex(), &params(), Subject::Person(0), 0.0);
        assert_eq!(e.top(), 0);

        let e = rec1_behavioral(
            &features_at(0.0, 0.0),
            &lex(),
            &params(),
            Subject::Person(0),
            0.0,
        );
        for p in e.distribution.as_slice() {
            assert!((p - 0.25).abs() < 1e-12);
        }
        assert!(e.confidence.abs() < 1e-12);
    }

    #[test]
    fn taught_prototype_wins_at_its_mean() {
        let mut l = lex();
        let label = EmotionLabel::Taught("wonder".into());
        let x = NormalizedFeatures([0.2, 0.9, 0.4, 0.3, 0.8, 0.1, 0.5, 0.6]);
        for _ in 0..100 {
            l.observe(&label, &x, (0.0, 0.0));
        }
        let e = rec1_behavioral(&x, &l, &params(), Subject::Person(0), 0.0);
        assert_eq!(e.top(), l.index_of(&label).unwrap());
        assert_eq!(e.distribution.len(), 5);
        assert!(e.distribution.is_valid(1e-9));
    }

    #[test]
    fn contextual_identity_cases() {
        let a = estimate(vec![0.7, 0.1, 0.1, 0.1]);
        let b = estimate(vec![0.1, 0.1, 0.1, 0.7]);
        let anchors = AnchorConfig::default().as_array();
        let single = GroupFeatures {
            count: 1,
            proximity: 1.0,
            synchrony: 1.0,
        };
        assert_eq!(
            rec2_contextual(std::slice::from_ref(&a), &single, &anchors),
            vec![a.clone()]
        );
        let apart = GroupFeatures {
            count: 2,
            proximity: 0.0,
            synchrony: -0.5,
        };
        assert_eq!(
            rec2_contextual(&[a.clone(), b.clone()], &apart, &anchors),
            vec![a, b]
        );
    }

    #[test]
    fn full_cohesion_collapses_to_mean() {
        let anchors = AnchorConfig::default().as_array();
        let together = GroupFeatures {
            count: 2,
            proximity: 1.0,
            synchrony: 1.0,
        };
        let out = rec2_contextual(
            &[
                estimate(vec![1.0, 0.0, 0.0, 0.0]),
                estimate(vec![0.0, 1.0, 0.0, 0.0]),
            ],
            &together,
            &anchors,
        );
        for e in out {
            assert_eq!(e.distribution.as_slice(), &[0.5, 0.5, 0.0, 0.0]);
            // mean of happiness (0.7, 0.7) and relaxation (0.7, -0.7)
            assert!((e.valence - 0.7).abs() < 1e-12 && e.arousal.abs() < 1e-12);
        }
    }

    #[test]
    fn aggregation_cases() {
        let anchors = AnchorConfig::default().as_array();
        let p = estimate(vec![0.1, 0.2, 0.3, 0.4]);
        let out = aggregate(&p, &p, Some(&p.distribution), [0.4, 0.3, 0.3], &anchors).unwrap();
        for (a, b) in out
            .distribution
            .as_slice()
            .iter()
            .zip(p.distribution.as_slice())
        {
            assert!((a - b).abs() < 1e-12);
        }

        let p1 = estimate(vec![1.0, 0.0, 0.0, 0.0]);
        let p2 = estimate(vec![0.0, 1.0, 0.0, 0.0]);
        let out = aggregate(&p1, &p2, Some(&p2.distribution), [1.0, 0.0, 0.0], &anchors).unwrap();
        assert_eq!(out.distribution, p1.distribution);

        let out = aggregate(&p1, &p2, Some(&p2.distribution), [0.4, 0.3, 0.3], &anchors).unwrap();
        let d = out.distribution.as_slice();
        assert!((d[0] - 0.4).abs() < 1e-12 && (d[1] - 0.6).abs() < 1e-12);
        let h = -(0.4f64 * 0.4f64.ln() + 0.6 * 0.6f64.ln());
        assert!((out.confidence - (1.0 - h / 4f64.ln())).abs() < 1e-12);
        assert!((out.confidence - 0.514).abs() < 1e-3);
        assert_eq!(out.intensity, p1.intensity);
    }

    #[test]
    fn aggregation_rejects_mismatched_labels() {
        let anchors = AnchorConfig::default().as_array();
        let p = estimate(vec![0.25; 4]);
        let q = Distribution::uniform(5);
        assert!(matches!(
            aggregate(&p, &p, Some(&q), [0.4, 0.3, 0.3], &anchors),
            Err(AggregateError::LabelSetMismatch { index: 2, .. })
        ));
    }

    #[test]
    fn missing_prior_drops_its_weight() {
        let anchors = AnchorConfig::default().as_array();
        let p1 = estimate(vec![1.0, 0.0, 0.0, 0.0]);
        let p2 = estimate(vec![0.0, 1.0, 0.0, 0.0]);
        let out = aggregate(&p1, &p2, None, [0.4, 0.3, 0.3], &anchors).unwrap();
        let d = out.distribution.as_slice();
        assert!((d[0] - 4.0 / 7.0).abs() < 1e-12);
        let out = aggregate(&p1, &p2, None, [0.0, 0.0, 1.0], &anchors).unwrap();
        assert_eq!(out.distribution.as_slice(), &[0.5, 0.5, 0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn argmax_invariant_to_kernel_width(v in -1.0f64..1.0, a in -1.0f64..1.0, k in 0.1f64..5.0) {
            let p = params();
            let wider = RecommenderParams { circumplex_sigma: p.circumplex_sigma * k, ..p };
            let d1 = baseline_distribution((v, a), &p, 4);
            let d2 = baseline_distribution((v, a), &wider, 4);
            // ranking by distance is preserved, up to exact ties
            let dist = |i: usize| (v - p.anchors[i][0]).powi(2) + (a - p.anchors[i][1]).powi(2);
            let nearest = (0..4).min_by(|&i, &j| dist(i).total_cmp(&dist(j))).unwrap();
            prop_assert!((dist(d1.argmax()) - dist(nearest)).abs() < 1e-12);
            prop_assert!((dist(d2.argmax()) - dist(nearest)).abs() < 1e-12);
        }

        #[test]
        fn aggregation_is_componentwise_bounded(
            a in proptest::collection::vec(0.0f64..1.0, 4),
            b in proptest::collection::vec(0.0f64..1.0, 4),
            c in proptest::collection::vec(0.0f64..1.0, 4),
            w in proptest::collection::vec(0.0f64..1.0, 3),
        ) {
            prop_assume!(w.iter().sum::<f64>() > 1e-6);
            let anchors = AnchorConfig::default().as_array();
            let (ea, eb) = (estimate(a), estimate(b));
            let dc = Distribution::from_weights(c);
            let out = aggregate(&ea, &eb, Some(&dc), [w[0], w[1], w[2]], &anchors).unwrap();
            prop_assert!(out.distribution.is_valid(1e-9));
            for i in 0..4 {
                let xs = [ea.distribution.as_slice()[i], eb.distribution.as_slice()[i], dc.as_slice()[i]];
                let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let p = out.distribution.as_slice()[i];
                prop_assert!(p >= lo - 1e-12 && p <= hi + 1e-12);
            }
        }
    }
}
