use serde::{Deserialize, Serialize};

/// Probability vector aligned with a session's label set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    /// Normalizes non-negative weights. A zero or non-finite total yields the
    /// uniform distribution.
    pub fn from_weights(mut weights: Vec<f64>) -> Self {
        for w in &mut weights {
            if !w.is_finite() || *w < 0.0 {
                *w = 0.0;
            }
        }
        let total: f64 = weights.iter().sum();
        if total > 0.0 && total.is_finite() {
            weights.iter_mut().for_each(|w| *w /= total);
            Self(weights)
        } else {
            Self::uniform(weights.len())
        }
    }

    /// Normalized `exp(log_weights)`, computed stably. `None` entries get zero mass.
    pub fn from_log_weights(log_weights: &[Option<f64>]) -> Self {
        let max = log_weights
            .iter()
            .flatten()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Self::uniform(log_weights.len());
        }
        Self::from_weights(
            log_weights
                .iter()
                .map(|l| l.map_or(0.0, |l| (l - max).exp()))
                .collect(),
        )
    }

    pub fn uniform(len: usize) -> Self {
        Self(vec![1.0 / len as f64; len])
    }

    pub fn one_hot(len: usize, index: usize) -> Self {
        let mut v = vec![0.0; len];
        v[index] = 1.0;
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Pads with zero-probability entries up to `len` labels.
    pub fn extended(&self, len: usize) -> Self {
        let mut v = self.0.clone();
        v.resize(len.max(v.len()), 0.0);
        Self(v)
    }

    /// Index of the largest probability; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self
            .0
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>()
    }

    /// `1 - H(p) / ln(K)`, clamped to `[0,1]`.
    pub fn confidence(&self) -> f64 {
        if self.0.len() < 2 {
            return 1.0;
        }
        (1.0 - self.entropy() / (self.0.len() as f64).ln()).clamp(0.0, 1.0)
    }

    /// Jensen-Shannon divergence in nats (bounded by ln 2).
    pub fn js_divergence(&self, other: &Distribution) -> f64 {
        let kl = |p: &[f64], m: &[f64]| -> f64 {
            p.iter()
                .zip(m)
                .filter(|(pi, _)| **pi > 0.0)
                .map(|(pi, mi)| pi * (pi / mi).ln())
                .sum()
        };
        let m: Vec<f64> = self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        (0.5 * kl(&self.0, &m) + 0.5 * kl(&other.0, &m)).max(0.0)
    }

    /// Probability-weighted mean of per-label anchor points.
    pub fn weighted_point(&self, anchors: &[[f64; 2]]) -> (f64, f64) {
        let (mut v, mut a) = (0.0, 0.0);
        for (p, [av, aa]) in self.0.iter().zip(anchors) {
            v += p * av;
            a += p * aa;
        }
        (v.clamp(-1.0, 1.0), a.clamp(-1.0, 1.0))
    }

    /// Checks non-negativity and unit sum within `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        self.0.iter().all(|p| p.is_finite() && *p >= 0.0)
            && (self.0.iter().sum::<f64>() - 1.0).abs() <= tol
    }
}

impl From<Distribution> for Vec<f64> {
    fn from(d: Distribution) -> Self {
        d.0
    }
}
