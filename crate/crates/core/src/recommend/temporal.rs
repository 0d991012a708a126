//! Longitudinal recommender: exponential averages of the consensus
//! distribution at three time scales, plus trend-shift detection.

use serde::Serialize;

use super::Distribution;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrendShift {
    pub t: f64,
    pub divergence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfLives {
    pub fast_s: f64,
    pub main_s: f64,
    pub slow_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct Averages {
    fast: Distribution,
    main: Distribution,
    slow: Distribution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalState {
    half_lives: HalfLives,
    threshold: f64,
    averages: Option<Averages>,
    last_t: Option<f64>,
    above: bool,
}

/// Per-step decay `2^(-dt / half_life)`.
pub fn decay_factor(dt: f64, half_life: f64) -> f64 {
    (-dt / half_life).exp2()
}

fn blend(ema: &Distribution, x: &Distribution, decay: f64) -> Distribution {
    let v = ema
        .as_slice()
        .iter()
        .zip(x.as_slice())
        .map(|(e, p)| decay * e + (1.0 - decay) * p)
        .collect();
    Distribution::from_weights(v)
}

impl TemporalState {
    pub fn new(half_lives: HalfLives, threshold: f64) -> Self {
        Self {
            half_lives,
            threshold,
            averages: None,
            last_t: None,
            above: false,
        }
    }

    /// REC3's recommendation: the main-scale average, once initialized.
    pub fn prior(&self) -> Option<&Distribution> {
        self.averages.as_ref().map(|a| &a.main)
    }

    pub fn fast(&self) -> Option<&Distribution> {
        self.averages.as_ref().map(|a| &a.fast)
    }

    pub fn slow(&self) -> Option<&Distribution> {
        self.averages.as_ref().map(|a| &a.slow)
    }

    /// Pads the averages when new labels join the label set.
    pub fn extend_labels(&mut self, len: usize) {
        if let Some(a) = self.averages.as_mut() {
            a.fast = a.fast.extended(len);
            a.main = a.main.extended(len);
            a.slow = a.slow.extended(len);
        }
    }

    /// Folds in the consensus distribution observed at `t`. Returns a trend
    /// event when the fast/slow divergence first rises above the threshold.
    pub fn update(&mut self, p: &Distribution, t: f64) -> Option<TrendShift> {
        let Some(avg) = self.averages.as_mut() else {
            self.averages = Some(Averages {
                fast: p.clone(),
                main: p.clone(),
                slow: p.clone(),
            });
            self.last_t = Some(t);
            return None;
        };
        let dt = self.last_t.map_or(0.0, |last| (t - last).max(0.0));
        self.last_t = Some(t);
        let h = self.half_lives;
        avg.fast = blend(&avg.fast, p, decay_factor(dt, h.fast_s));
        avg.main = blend(&avg.main, p, decay_factor(dt, h.main_s));
        avg.slow = blend(&avg.slow, p, decay_factor(dt, h.slow_s));

        let divergence = avg.fast.js_divergence(&avg.slow);
        let above = divergence > self.threshold;
        let rising = above && !self.above;
        self.above = above;
        rising.then_some(TrendShift { t, divergence })
    }
}
