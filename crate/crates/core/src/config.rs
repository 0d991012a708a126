//! Engine configuration: defaults, JSON file layer, override layer and
//! invariant checks.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::features::FEATURE_NAMES;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "AFFECT_CONFIG";

/// Reference `[min, max]` range per movement feature, used to map raw
/// features onto `[0,1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureRanges {
    pub speed: [f64; 2],
    pub energy: [f64; 2],
    pub amplitude: [f64; 2],
    pub expansion: [f64; 2],
    pub jerk: [f64; 2],
    pub frequency: [f64; 2],
    pub qom: [f64; 2],
    pub rom: [f64; 2],
}

impl Default for FeatureRanges {
    fn default() -> Self {
        Self {
            speed: [0.0, 4.0],
            energy: [0.0, 30.0],
            amplitude: [2.0, 5.0],
            expansion: [1.0, 2.2],
            jerk: [0.0, 6000.0],
            frequency: [0.0, 3.0],
            qom: [0.0, 1.0],
            rom: [0.0, 0.6],
        }
    }
}

impl FeatureRanges {
    pub fn as_array(&self) -> [[f64; 2]; 8] {
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
}

/// Valence/arousal anchors of the predefined emotions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorConfig {
    pub happiness: [f64; 2],
    pub relaxation: [f64; 2],
    pub anger: [f64; 2],
    pub sadness: [f64; 2],
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            happiness: [0.7, 0.7],
            relaxation: [0.7, -0.7],
            anger: [-0.7, 0.7],
            sadness: [-0.7, -0.7],
        }
    }
}

impl AnchorConfig {
    /// Anchors in predefined-label order (happiness, relaxation, anger, sadness).
    pub fn as_array(&self) -> [[f64; 2]; 4] {
        [self.happiness, self.relaxation, self.anger, self.sadness]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub confidence_threshold: f64,
    pub smoothing_alpha: f64,
    pub max_gap_frames: u32,
    pub max_persons: usize,
    pub track_gate: f64,
    pub calibration_window_s: f64,
    pub window_s: f64,
    pub hop_s: f64,
    pub qom_threshold: f64,
    pub frequency_deadband: f64,
    pub proximity_scale: f64,
    pub feature_ranges: FeatureRanges,
    pub recommender_weights: [f64; 3],
    pub anchors: AnchorConfig,
    pub circumplex_sigma: f64,
    pub sigma_floor: f64,
    pub blend_full_windows: u32,
    pub ema_half_life_fast_s: f64,
    pub ema_half_life_main_s: f64,
    pub ema_half_life_slow_s: f64,
    pub trend_threshold: f64,
    pub adaptation_rate: f64,
    pub adaptation_recent_hops: usize,
    pub tempo_min: f64,
    pub tempo_max: f64,
    pub mode_deadband: f64,
    pub dynamics_gamma: f64,
    pub episode_min_confidence: f64,
    pub episode_min_duration_s: f64,
    pub teach_lead_in_s: f64,
    pub teach_min_segment_s: f64,
    pub preparation_s: f64,
    pub teaching_s: f64,
    pub exploration_s: f64,
    pub osc_dest: String,
    pub ws_port: u16,
    pub cosmos_base_url: String,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: 0.3,
            smoothing_alpha: 0.6,
            max_gap_frames: 10,
            max_persons: crate::model::MAX_PERSONS,
            track_gate: 0.25,
            calibration_window_s: 2.0,
            window_s: 1.0,
            hop_s: 0.1,
            qom_threshold: 0.02,
            frequency_deadband: 0.1,
            proximity_scale: 0.5,
            feature_ranges: FeatureRanges::default(),
            recommender_weights: [0.4, 0.3, 0.3],
            anchors: AnchorConfig::default(),
            circumplex_sigma: 0.6,
            sigma_floor: 0.05,
            blend_full_windows: 100,
            ema_half_life_fast_s: 1.0,
            ema_half_life_main_s: 5.0,
            ema_half_life_slow_s: 10.0,
            trend_threshold: 0.15,
            adaptation_rate: 0.05,
            adaptation_recent_hops: 10,
            tempo_min: 60.0,
            tempo_max: 140.0,
            mode_deadband: 0.1,
            dynamics_gamma: 0.7,
            episode_min_confidence: 0.4,
            episode_min_duration_s: 2.0,
            teach_lead_in_s: 1.0,
            teach_min_segment_s: 3.0,
            preparation_s: 60.0,
            teaching_s: 300.0,
            exploration_s: 300.0,
            osc_dest: "127.0.0.1:9000".to_string(),
            ws_port: 8765,
            cosmos_base_url: "http://localhost:8080".to_string(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid value for {field}: {reason}")]
    InvariantViolation { field: String, reason: String },
}

fn violation(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvariantViolation {
        field: field.to_string(),
        reason: reason.into(),
    }
}

impl EngineConfig {
    /// Checks every configuration invariant, naming the first offending field.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("smoothing_alpha", self.smoothing_alpha),
            ("track_gate", self.track_gate),
            ("calibration_window_s", self.calibration_window_s),
            ("window_s", self.window_s),
            ("hop_s", self.hop_s),
            ("qom_threshold", self.qom_threshold),
            ("proximity_scale", self.proximity_scale),
            ("circumplex_sigma", self.circumplex_sigma),
            ("sigma_floor", self.sigma_floor),
            ("ema_half_life_fast_s", self.ema_half_life_fast_s),
            ("ema_half_life_main_s", self.ema_half_life_main_s),
            ("ema_half_life_slow_s", self.ema_half_life_slow_s),
            ("trend_threshold", self.trend_threshold),
            ("tempo_min", self.tempo_min),
            ("tempo_max", self.tempo_max),
            ("mode_deadband", self.mode_deadband),
            ("dynamics_gamma", self.dynamics_gamma),
            ("episode_min_confidence", self.episode_min_confidence),
            ("episode_min_duration_s", self.episode_min_duration_s),
            ("teach_min_segment_s", self.teach_min_segment_s),
            ("preparation_s", self.preparation_s),
            ("teaching_s", self.teaching_s),
            ("exploration_s", self.exploration_s),
        ];
        for (field, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(violation(field, format!("must be positive, got {value}")));
            }
        }
        let non_negative = [
            ("frequency_deadband", self.frequency_deadband),
            ("adaptation_rate", self.adaptation_rate),
            ("teach_lead_in_s", self.teach_lead_in_s),
        ];
        for (field, value) in non_negative {
            if !(value.is_finite() && value >= 0.0) {
                return Err(violation(
                    field,
                    format!("must be non-negative, got {value}"),
                ));
            }
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(violation("confidence_threshold", "must lie in [0,1]"));
        }
        if self.smoothing_alpha > 1.0 {
            return Err(violation("smoothing_alpha", "must lie in (0,1]"));
        }
        if self.adaptation_rate > 1.0 {
            return Err(violation("adaptation_rate", "must lie in [0,1]"));
        }
        if self.episode_min_confidence > 1.0 {
            return Err(violation("episode_min_confidence", "must lie in (0,1]"));
        }
        if self.max_persons == 0 {
            return Err(violation("max_persons", "must be at least 1"));
        }
        if self.max_gap_frames == 0 {
            return Err(violation("max_gap_frames", "must be at least 1"));
        }
        if self.blend_full_windows == 0 {
            return Err(violation("blend_full_windows", "must be at least 1"));
        }
        if self.adaptation_recent_hops == 0 {
            return Err(violation("adaptation_recent_hops", "must be at least 1"));
        }
        if self.window_s <= self.hop_s {
            return Err(violation("window_s", "must exceed hop_s"));
        }
        if self.tempo_min >= self.tempo_max {
            return Err(violation("tempo_min", "must be below tempo_max"));
        }
        let w = self.recommender_weights;
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
            return Err(violation(
                "recommender_weights",
                "must be non-negative with a positive sum",
            ));
        }
        for (name, [lo, hi]) in FEATURE_NAMES.iter().zip(self.feature_ranges.as_array()) {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(violation(
                    &format!("feature_ranges.{name}"),
                    format!("min {lo} must be below max {hi}"),
                ));
            }
        }
        for (name, [v, a]) in ["happiness", "relaxation", "anger", "sadness"]
            .iter()
            .zip(self.anchors.as_array())
        {
            if !((-1.0..=1.0).contains(&v) && (-1.0..=1.0).contains(&a)) {
                return Err(violation(
                    &format!("anchors.{name}"),
                    "must lie in [-1,1]^2",
                ));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex_string(&Sha256::digest(canonical))
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Resolves the config path from an explicit argument or `AFFECT_CONFIG`.
pub fn resolve_config_path(explicit: Option<&Path>) -> Option<PathBuf> {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from))
}

/// Builds a configuration from defaults, an optional JSON file and a set of
/// overrides keyed by dotted field path (`feature_ranges.speed`).
pub fn load_config(
    path: Option<&Path>,
    overrides: &BTreeMap<String, Value>,
) -> Result<EngineConfig, ConfigError> {
    let mut merged = serde_json::to_value(EngineConfig::default()).expect("defaults serialize");
    if let Some(path) = path {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let file: Value =
            serde_json::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if !file.is_object() {
            return Err(ConfigError::Parse(
                "config file must hold a JSON object".into(),
            ));
        }
        merge(&mut merged, file);
    }
    for (key, value) in overrides {
        set_path(&mut merged, key, value.clone())?;
    }
    let config: EngineConfig =
        serde_json::from_value(merged).map_err(|e| ConfigError::Parse(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

/// Parses `key=value` override strings. Values are read as JSON when
/// possible and as plain strings otherwise.
pub fn parse_overrides<I, S>(items: I) -> Result<BTreeMap<String, Value>, ConfigError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut out = BTreeMap::new();
    for item in items {
        let item = item.as_ref();
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| ConfigError::Parse(format!("override {item:?} is not key=value")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        out.insert(key.trim().to_string(), value);
    }
    Ok(out)
}

fn merge(base: &mut Value, layer: Value) {
    match (base, layer) {
        (Value::Object(base), Value::Object(layer)) => {
            for (k, v) in layer {
                match base.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        base.insert(k, v);
                    }
                }
            }
        }
        (base, layer) => *base = layer,
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), ConfigError> {
    let mut slot = root;
    for part in key.split('.') {
        slot = slot
            .as_object_mut()
            .and_then(|o| o.get_mut(part))
            .ok_or_else(|| ConfigError::Parse(format!("unknown config field {key:?}")))?;
    }
    merge(slot, value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn defaults_without_file_or_overrides() {
        let config = load_config(None, &BTreeMap::new()).unwrap();
        assert_eq!(config, EngineConfig::default());
        assert_eq!(config.recommender_weights, [0.4, 0.3, 0.3]);
        assert_eq!(config.confidence_threshold, 0.3);
    }

    #[test]
    fn file_values_are_reflected() {
        let file = write_tmp(r#"{"tempo_min": 70, "tempo_max": 130}"#);
        let config = load_config(Some(file.path()), &BTreeMap::new()).unwrap();
        assert_eq!((config.tempo_min, config.tempo_max), (70.0, 130.0));
    }

    #[test]
    fn window_not_exceeding_hop_is_rejected() {
        let file = write_tmp(r#"{"window_s": 0.05, "hop_s": 0.1}"#);
        match load_config(Some(file.path()), &BTreeMap::new()) {
            Err(ConfigError::InvariantViolation { field, .. }) => assert_eq!(field, "window_s"),
            other => panic!("expected invariant violation, got {other:?}"),
        }
    }

    #[test]
    fn overrides_beat_file_values() {
        let file = write_tmp(r#"{"tempo_min": 70, "feature_ranges": {"speed": [0.0, 2.0]}}"#);
        let overrides = parse_overrides(["tempo_min=80", "feature_ranges.jerk=[0, 10]"]).unwrap();
        let config = load_config(Some(file.path()), &overrides).unwrap();
        assert_eq!(config.tempo_min, 80.0);
        assert_eq!(config.feature_ranges.speed, [0.0, 2.0]);
        assert_eq!(config.feature_ranges.jerk, [0.0, 10.0]);
        // untouched nested fields keep their defaults
        assert_eq!(config.feature_ranges.qom, FeatureRanges::default().qom);
    }

    #[test]
    fn unknown_fields_and_bad_json_are_parse_errors() {
        let file = write_tmp(r#"{"tempo_minimum": 70}"#);
        assert!(matches!(
            load_config(Some(file.path()), &BTreeMap::new()),
            Err(ConfigError::Parse(_))
        ));
        let file = write_tmp("{not json");
        assert!(matches!(
            load_config(Some(file.path()), &BTreeMap::new()),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            load_config(None, &parse_overrides(["nope=1"]).unwrap()),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn invariant_violations_name_the_field() {
        let cases = [
            ("recommender_weights=[0,0,0]", "recommender_weights"),
            ("tempo_min=200", "tempo_min"),
            ("feature_ranges.speed=[1,1]", "feature_ranges.speed"),
            ("smoothing_alpha=0", "smoothing_alpha"),
        ];
        for (ov, expected) in cases {
            match load_config(None, &parse_overrides([ov]).unwrap()) {
                Err(ConfigError::InvariantViolation { field, .. }) => assert_eq!(field, expected),
                other => panic!("{ov}: expected violation, got {other:?}"),
            }
        }
    }

    #[test]
    fn resolution_is_deterministic() {
        let file = write_tmp(r#"{"hop_s": 0.2, "window_s": 2.0}"#);
        let a = parse_overrides(["tempo_max=150", "mode_deadband=0.2"]).unwrap();
        let b = parse_overrides(["mode_deadband=0.2", "tempo_max=150"]).unwrap();
        let ca = load_config(Some(file.path()), &a).unwrap();
        let cb = load_config(Some(file.path()), &b).unwrap();
        assert_eq!(ca, cb);
        assert_eq!(ca.digest(), cb.digest());
    }

    #[test]
    fn interactive_phase_defaults_fall_in_five_to_seven_minutes() {
        let c = EngineConfig::default();
        for d in [c.teaching_s, c.exploration_s] {
            assert!((300.0..=420.0).contains(&d));
        }
    }
}
