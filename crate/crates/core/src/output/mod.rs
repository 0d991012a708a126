//! Audio/visual control mappings and their OSC publication.

pub mod osc;
mod sender;

use serde::Serialize;

pub use osc::{decode_osc, encode_osc, OscArg, OscError, OscPacket};
pub use sender::{send_packets, OscSender, SendReport, SocketError};

use crate::config::EngineConfig;
use crate::features::NormalizedFeatures;
use crate::recommend::EmotionEstimate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Major,
    Minor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AudioParams {
    pub tempo: f64,
    pub mode: Mode,
    pub complexity: f64,
    pub dynamics: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AudioMapping {
    pub tempo_min: f64,
    pub tempo_max: f64,
    pub mode_deadband: f64,
    pub dynamics_gamma: f64,
}

impl From<&EngineConfig> for AudioMapping {
    fn from(c: &EngineConfig) -> Self {
        Self {
            tempo_min: c.tempo_min,
            tempo_max: c.tempo_max,
            mode_deadband: c.mode_deadband,
            dynamics_gamma: c.dynamics_gamma,
        }
    }
}

impl AudioMapping {
    /// Parameters emitted before any movement has been observed.
    pub fn initial(&self) -> AudioParams {
        AudioParams {
            tempo: self.tempo_min,
            mode: Mode::Major,
            complexity: 0.0,
            dynamics: 0.0,
        }
    }

    /// Maps the group valence and mean normalized movement onto the global
    /// audio parameters. Mode only changes once valence leaves the deadband.
    pub fn map(
        &self,
        valence: f64,
        features: &NormalizedFeatures,
        previous: Option<&AudioParams>,
    ) -> AudioParams {
        let speed = features.speed().clamp(0.0, 1.0);
        let mode = if valence > self.mode_deadband {
            Mode::Major
        } else if valence < -self.mode_deadband {
            Mode::Minor
        } else {
            previous.map_or(Mode::Major, |p| p.mode)
        };
        AudioParams {
            tempo: self.tempo_min + (self.tempo_max - self.tempo_min) * speed,
            mode,
            complexity: features.qom().clamp(0.0, 1.0),
            dynamics: features
                .energy()
                .clamp(0.0, 1.0)
                .powf(self.dynamics_gamma)
                .clamp(0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VisualParams {
    /// Degrees in `[0, 360)`.
    pub hue: f64,
    pub saturation: f64,
    pub complexity: f64,
    pub fluidity: f64,
}

pub fn map_visuals(estimate: &EmotionEstimate, features: &NormalizedFeatures) -> VisualParams {
    let hue = estimate
        .arousal
        .atan2(estimate.valence)
        .to_degrees()
        .rem_euclid(360.0);
    VisualParams {
        // rem_euclid can round up to exactly 360 for tiny negative angles
        hue: if hue >= 360.0 { 0.0 } else { hue },
        saturation: estimate.intensity.clamp(0.0, 1.0),
        complexity: features.speed().clamp(0.0, 1.0),
        fluidity: (1.0 - features.jerk()).clamp(0.0, 1.0),
    }
}

/// Everything published for one person at one hop.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonSignal<'a> {
    pub id: usize,
    pub centroid: (f64, f64),
    pub estimate: &'a EmotionEstimate,
    pub top_label: &'a str,
    pub visuals: VisualParams,
}

/// Builds the per-hop packet set:
///
/// ```text
/// /cv/pose/<id>                   f x, f y
/// /cv/emotion/<id>                f valence, f arousal, f intensity, s label
/// /cv/group/emotion               f p_0 .. p_k   (session label order)
/// /cv/audio/tempo                 f bpm
/// /cv/audio/mode                  i 1 = major, 0 = minor
/// /cv/audio/complexity            f
/// /cv/audio/dynamics              f
/// /cv/visual/<id>/hue             f degrees
/// /cv/visual/<id>/saturation      f
/// /cv/visual/<id>/complexity      f
/// /cv/visual/<id>/fluidity        f
/// ```
///
/// The group message is only sent when at least one person is present.
pub fn build_packets(
    persons: &[PersonSignal<'_>],
    group: Option<&EmotionEstimate>,
    audio: &AudioParams,
) -> Vec<OscPacket> {
    let f = |x: f64| OscArg::Float(x as f32);
    let mut out = Vec::with_capacity(persons.len() * 6 + 5);
    for p in persons {
        out.push(OscPacket::new(
            format!("/cv/pose/{}", p.id),
            vec![f(p.centroid.0), f(p.centroid.1)],
        ));
        out.push(OscPacket::new(
            format!("/cv/emotion/{}", p.id),
            vec![
                f(p.estimate.valence),
                f(p.estimate.arousal),
                f(p.estimate.intensity),
                OscArg::String(p.top_label.to_string()),
            ],
        ));
    }
    if let (false, Some(g)) = (persons.is_empty(), group) {
        out.push(OscPacket::new(
            "/cv/group/emotion",
            g.distribution.as_slice().iter().map(|&p| f(p)).collect(),
        ));
    }
    out.push(OscPacket::new("/cv/audio/tempo", vec![f(audio.tempo)]));
    out.push(OscPacket::new(
        "/cv/audio/mode",
        vec![OscArg::Int(i32::from(audio.mode == Mode::Major))],
    ));
    out.push(OscPacket::new(
        "/cv/audio/complexity",
        vec![f(audio.complexity)],
    ));
    out.push(OscPacket::new(
        "/cv/audio/dynamics",
        vec![f(audio.dynamics)],
    ));
    for p in persons {
        let v = p.visuals;
        for (name, value) in [
            ("hue", v.hue),
            ("saturation", v.saturation),
            ("complexity", v.complexity),
            ("fluidity", v.fluidity),
        ] {
            out.push(OscPacket::new(
                format!("/cv/visual/{}/{name}", p.id),
                vec![f(value)],
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recommend::{Distribution, Subject};

    fn mapping() -> AudioMapping {
        AudioMapping::from(&EngineConfig::default())
    }

    fn with(speed: f64, energy: f64, qom: f64) -> NormalizedFeatures {
        NormalizedFeatures([speed, energy, 0.0, 0.0, 0.0, 0.0, qom, 0.0])
    }

    fn estimate(v: f64, a: f64, intensity: f64) -> EmotionEstimate {
        EmotionEstimate {
            subject: Subject::Person(0),
            timestamp: 0.0,
            distribution: Distribution::uniform(4),
            valence: v,
            arousal: a,
            intensity,
            confidence: 0.0,
        }
    }

    #[test]
    fn tempo_endpoints_and_complexity() {
        let m = mapping();
        assert_eq!(m.map(0.0, &with(0.0, 0.0, 0.0), None).tempo, 60.0);
        assert_eq!(m.map(0.0, &with(1.0, 0.0, 0.0), None).tempo, 140.0);
        assert_eq!(m.map(0.0, &with(0.0, 0.0, 0.3), None).complexity, 0.3);
    }

    #[test]
    fn mode_hysteresis() {
        let m = mapping();
        let f = with(0.5, 0.5, 0.5);
        let a = m.map(0.2, &f, None);
        assert_eq!(a.mode, Mode::Major);
        let b = m.map(-0.05, &f, Some(&a));
        assert_eq!(b.mode, Mode::Major);
        let c = m.map(-0.2, &f, Some(&b));
        assert_eq!(c.mode, Mode::Minor);
        // oscillating inside the deadband never flips
        let mut prev = c;
        for i in 0..100 {
            let v = if i % 2 == 0 { 0.09 } else { -0.09 };
            prev = m.map(v, &f, Some(&prev));
            assert_eq!(prev.mode, Mode::Minor);
        }
    }

    #[test]
    fn audio_mapping_is_monotone() {
        let m = mapping();
        let mut last = m.map(0.0, &with(0.0, 0.0, 0.0), None);
        for i in 1..=100 {
            let x = i as f64 / 100.0;
            let next = m.map(0.0, &with(x, x, 0.0), None);
            assert!(next.tempo >= last.tempo && next.dynamics >= last.dynamics);
            last = next;
        }
    }

    #[test]
    fn hue_convention() {
        let f = NormalizedFeatures::default();
        assert_eq!(map_visuals(&estimate(1.0, 0.0, 0.5), &f).hue, 0.0);
        assert!((map_visuals(&estimate(0.0, 1.0, 0.5), &f).hue - 90.0).abs() < 1e-12);
        assert!((map_visuals(&estimate(0.0, -1.0, 0.5), &f).hue - 270.0).abs() < 1e-12);
        assert_eq!(map_visuals(&estimate(0.3, 0.3, 0.0), &f).saturation, 0.0);
    }

    #[test]
    fn packet_counts_follow_schema() {
        let audio = mapping().initial();
        let e = estimate(0.1, 0.2, 0.3);
        let person = PersonSignal {
            id: 0,
            centroid: (0.5, 0.5),
            estimate: &e,
            top_label: "happiness",
            visuals: map_visuals(&e, &NormalizedFeatures::default()),
        };
        let packets = build_packets(std::slice::from_ref(&person), Some(&e), &audio);
        assert_eq!(packets.len(), 11);
        let packets = build_packets(&[], None, &audio);
        assert_eq!(packets.len(), 4);
        assert!(packets.iter().all(|p| p.address.starts_with("/cv/audio/")));
        for p in build_packets(
            &[person.clone(), PersonSignal { id: 2, ..person }],
            Some(&e),
            &audio,
        ) {
            assert_eq!(encode_osc(&p).unwrap().len() % 4, 0);
        }
    }
}
