//! Config loading with `key=value` overrides.
//!
//! Overrides use dotted paths into the JSON document
//! (`strategy.mu=0.05`, `strategy.rounds=10`, `target_a=Al-Al`); the value
//! is parsed as JSON when possible and falls back to a string. Unknown
//! paths are rejected, and the resulting document must still deserialize
//! against the config schema.

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use std::path::Path;

pub fn apply_override(doc: &mut Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .with_context(|| format!("override {spec:?} is not key=value"))?;
    let value: Value = serde_json::from_str(raw).unwrap_or(Value::String(raw.to_string()));
    let mut cursor = doc;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        match cursor {
            Value::Object(map) => {
                if last {
                    if !map.contains_key(*seg) {
                        bail!("override path {path:?} names unknown field {seg:?}");
                    }
                    map.insert(seg.to_string(), value);
                    return Ok(());
                }
                cursor = map
                    .get_mut(*seg)
                    .with_context(|| format!("override path {path:?}: no field {seg:?}"))?;
            }
            _ => bail!("override path {path:?}: {seg:?} is not an object"),
        }
    }
    Ok(())
}

/// Load a JSON config, apply overrides, and deserialize (strictly: the
/// schema validates the result).
pub fn load_with_overrides<T: DeserializeOwned + Serialize>(
    path: &Path,
    overrides: &[String],
) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    let mut doc: Value =
        serde_json::from_str(&text).with_context(|| format!("bad JSON in {}", path.display()))?;
    // Fill defaults first so overrides can name defaulted fields.
    let typed: T = serde_json::from_value(doc.clone())
        .with_context(|| format!("config {} does not match the schema", path.display()))?;
    if overrides.is_empty() {
        return Ok(typed);
    }
    doc = serde_json::to_value(&typed).context("re-serializing effective config")?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    serde_json::from_value(doc).context("config invalid after overrides")
}

#[cfg(test)]
mod tests {
    use super::*;
    use fedtp_core::harness::{ExperimentConfig, Method};

    #[test]
    fn override_roundtrips_through_effective_config() {
        let cfg = ExperimentConfig::default_m_s(Method::FtlTp);
        let mut doc = serde_json::to_value(&cfg).unwrap();
        apply_override(&mut doc, "strategy.mu=0.25").unwrap();
        apply_override(&mut doc, "target_a=Cu-Cu").unwrap();
        let back: ExperimentConfig = serde_json::from_value(doc.clone()).unwrap();
        assert_eq!(back.strategy.mu, 0.25);
        assert_eq!(back.target_a, "Cu-Cu");
        let again = serde_json::to_value(&back).unwrap();
        assert_eq!(again["strategy"]["mu"], doc["strategy"]["mu"]);
    }

    #[test]
    fn unknown_override_key_is_rejected() {
        let cfg = ExperimentConfig::default_m_s(Method::FtlTp);
        let mut doc = serde_json::to_value(&cfg).unwrap();
        assert!(apply_override(&mut doc, "strategy.nope=1").is_err());
        assert!(apply_override(&mut doc, "no-equals-sign").is_err());
    }
}
