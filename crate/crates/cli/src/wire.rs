//! JSON messages sent to WebSocket clients.

use affect_core::features::FEATURE_NAMES;
use affect_core::model::EmotionLabel;
use affect_core::recommend::EmotionEstimate;
use affect_core::session::{HopOutput, SessionEngine};
use serde_json::{json, Map, Value};

fn emotion(e: &EmotionEstimate, labels: &[EmotionLabel]) -> Value {
    json!({
        "dist": e.distribution.as_slice(),
        "v": e.valence,
        "a": e.arousal,
        "intensity": e.intensity,
        "confidence": e.confidence,
        "label": labels.get(e.top()).map(EmotionLabel::as_str),
    })
}

/// `{"type":"state", "hop", "phase", "persons":[{id, kp, features, emotion}], "audio", ...}`
pub fn state_message(hop: &HopOutput, engine: &SessionEngine) -> Value {
    let persons: Vec<Value> = hop
        .persons
        .iter()
        .map(|p| {
            let features: Map<String, Value> = FEATURE_NAMES
                .iter()
                .zip(p.features.0)
                .map(|(name, v)| (name.to_string(), json!(v)))
                .collect();
            json!({
                "id": p.id,
                "kp": p.kp,
                "features": features,
                "emotion": emotion(&p.estimate, &hop.labels),
                "visual": p.visuals,
            })
        })
        .collect();
    json!({
        "type": "state",
        "hop": hop.hop,
        "t": hop.t,
        "phase": engine.phase(),
        "teach_label": engine.current_teach_label(),
        "labels": hop.labels,
        "persons": persons,
        "group": hop.group.as_ref().map(|g| emotion(g, &hop.labels)),
        "audio": hop.audio,
        "events": hop.events,
    })
}

/// State message before any hop has run.
pub fn idle_state(engine: &SessionEngine) -> Value {
    json!({
        "type": "state",
        "hop": engine.hop(),
        "t": engine.now(),
        "phase": engine.phase(),
        "teach_label": engine.current_teach_label(),
        "labels": engine.lexicon().labels(),
        "persons": [],
        "group": null,
        "audio": null,
        "events": [],
    })
}

/// Updates the session fields of the last state after a command.
pub fn refresh_state(state: &mut Value, engine: &SessionEngine) {
    state["phase"] = json!(engine.phase());
    state["teach_label"] = json!(engine.current_teach_label());
    state["labels"] = json!(engine.lexicon().labels());
    state["events"] = json!([]);
}
