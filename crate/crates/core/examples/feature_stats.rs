//! Prints per-archetype statistics of raw and normalized movement features.
//!
//! `cargo run --release -p affect-core --example feature_stats [seconds]`

use affect_core::config::EngineConfig;
use affect_core::features::FEATURE_NAMES;
use affect_core::harness::replay::{default_script, replay, Pacing};
use affect_core::harness::synth::{synth, GestureArchetype};
use affect_core::model::{EmotionLabel, FrameSource, FrameValidator};

fn main() {
    let seconds: f64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(30.0);
    let config = EngineConfig::default();
    for label in EmotionLabel::PREDEFINED {
        let archetype = GestureArchetype::default_for(&label).unwrap();
        let mut validator = FrameValidator::default();
        let frames: Vec<_> = synth(&archetype, 1, seconds, 1)
            .unwrap()
            .iter()
            .map(|r| validator.validate(r, FrameSource::Synthetic).unwrap().0)
            .collect();
        let mut raw: Vec<[f64; 8]> = Vec::new();
        let mut va = Vec::new();
        replay(
            &frames,
            &default_script(&frames),
            &config,
            Pacing::Fast,
            |hop| {
                for p in &hop.persons {
                    raw.push(p.raw_features.to_array());
                    va.push((p.estimate.valence, p.estimate.arousal));
                }
            },
        )
        .unwrap();
        println!("{label} ({} windows)", raw.len());
        for (i, name) in FEATURE_NAMES.iter().enumerate() {
            let mut col: Vec<f64> = raw.iter().map(|r| r[i]).collect();
            col.sort_by(f64::total_cmp);
            let q = |p: f64| col[((col.len() - 1) as f64 * p) as usize];
            println!(
                "  {name:>10}  p05 {:>10.3}  p50 {:>10.3}  p95 {:>10.3}",
                q(0.05),
                q(0.5),
                q(0.95)
            );
        }
        let n = va.len() as f64;
        let quad = |f: &dyn Fn(&(f64, f64)) -> bool| va.iter().filter(|x| f(x)).count() as f64 / n;
        println!(
            "  v>0 {:.2}  a>0 {:.2}  v>0&a>0 {:.2}  a<0 {:.2}",
            quad(&|x| x.0 > 0.0),
            quad(&|x| x.1 > 0.0),
            quad(&|x| x.0 > 0.0 && x.1 > 0.0),
            quad(&|x| x.1 < 0.0)
        );
    }
}
