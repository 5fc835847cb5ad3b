//! Flat key-value run configuration with strict schema validation.
//!
//! Precedence: CLI flag > config file > default. Unknown keys are rejected
//! by name. The same key set appears in run manifests, so a previous run's
//! manifest can be fed back through `--config` to reproduce it.

use std::collections::BTreeMap;
use std::path::Path;

use pdalign_core::trainer::TrainConfig;
use serde_json::Value;

use crate::CliError;

/// Every accepted configuration key.
pub const CONFIG_KEYS: &[&str] = &[
    "gamma",
    "eta",
    "alpha",
    "beta",
    "delta",
    "zeta",
    "omega",
    "learning_rate",
    "epochs",
    "batch_size",
    "seed",
    "enc_hidden",
    "latent_dim",
    "clf_hidden",
    "dropout",
    "source_only",
    "warmup_epochs",
    "pretrain_epochs",
    "disable_comp",
    "disable_intra_inter",
    "disable_rpts",
];

/// Parse a config file: either flat `key = value` lines (`#` comments), or a
/// JSON run manifest whose `config` object holds the same keys.
pub fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    if text.trim_start().starts_with('{') {
        return manifest_config(&text, path);
    }
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!(
                "{}:{}: expected 'key = value', got '{line}'",
                path.display(),
                idx + 1
            ))
        })?;
        let key = key.trim().to_string();
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(CliError::Usage(format!(
                "{}:{}: unknown config key '{key}'",
                path.display(),
                idx + 1
            )));
        }
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(CliError::Usage(format!(
                "{}:{}: duplicate config key '{key}'",
                path.display(),
                idx + 1
            )));
        }
    }
    Ok(map)
}

fn manifest_config(text: &str, path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| CliError::Usage(format!("{}: invalid JSON manifest: {e}", path.display())))?;
    let config = value
        .get("config")
        .and_then(Value::as_object)
        .ok_or_else(|| {
            CliError::Usage(format!(
                "{}: manifest has no 'config' object",
                path.display()
            ))
        })?;
    let mut map = BTreeMap::new();
    for (key, v) in config {
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(CliError::Usage(format!(
                "{}: unknown config key '{key}' in manifest",
                path.display()
            )));
        }
        let rendered = match v {
            Value::String(s) => s.clone(),
            Value::Bool(b) => b.to_string(),
            Value::Number(n) => n.to_string(),
            other => {
                return Err(CliError::Usage(format!(
                    "{}: config key '{key}' has unsupported value {other}",
                    path.display()
                )))
            }
        };
        map.insert(key.clone(), rendered);
    }
    Ok(map)
}

/// Apply a key-value map onto a [`TrainConfig`], validating each value.
pub fn apply_to_train_config(
    config: &mut TrainConfig,
    map: &BTreeMap<String, String>,
) -> Result<(), CliError> {
    for (key, raw) in map {
        set_key(config, key, raw)?;
    }
    Ok(())
}

fn set_key(config: &mut TrainConfig, key: &str, raw: &str) -> Result<(), CliError> {
    let bad =
        |kind: &str| CliError::Usage(format!("config key '{key}': expected {kind}, got '{raw}'"));
    let as_f64 = || raw.parse::<f64>().map_err(|_| bad("a number"));
    let as_usize = || {
        raw.parse::<usize>()
            .map_err(|_| bad("a nonnegative integer"))
    };
    let as_u64 = || raw.parse::<u64>().map_err(|_| bad("a nonnegative integer"));
    let as_bool = || raw.parse::<bool>().map_err(|_| bad("true or false"));
    match key {
        "gamma" => config.weights.gamma = as_f64()?,
        "eta" => config.weights.eta = as_f64()?,
        "alpha" => config.weights.alpha = as_f64()?,
        "beta" => config.weights.beta = as_f64()?,
        "delta" => config.weights.delta = as_f64()?,
        "zeta" => config.weights.zeta = as_f64()?,
        "omega" => config.weights.omega = as_f64()?,
        "learning_rate" => config.learning_rate = as_f64()?,
        "epochs" => config.epochs = as_usize()?,
        "batch_size" => config.batch_size = as_usize()?,
        "seed" => config.seed = as_u64()?,
        "enc_hidden" => config.enc_hidden = as_usize()?,
        "latent_dim" => config.d_z = as_usize()?,
        "clf_hidden" => config.clf_hidden = as_usize()?,
        "dropout" => config.dropout_p = as_f64()?,
        "source_only" => config.source_only = as_bool()?,
        "warmup_epochs" => config.warmup_epochs = as_usize()?,
        "pretrain_epochs" => config.source_pretrain_epochs = as_usize()?,
        "disable_comp" => config.ablation.disable_comp = as_bool()?,
        "disable_intra_inter" => config.ablation.disable_intra_inter = as_bool()?,
        "disable_rpts" => config.ablation.disable_rpts = as_bool()?,
        other => {
            return Err(CliError::Usage(format!("unknown config key '{other}'")));
        }
    }
    Ok(())
}

/// Render the fully resolved config as ordered JSON key-values for the
/// manifest; all defaults materialized.
pub fn resolved_config_json(config: &TrainConfig) -> Vec<(String, Value)> {
    let num = |v: f64| Value::from(v);
    vec![
        ("gamma".into(), num(config.weights.gamma)),
        ("eta".into(), num(config.weights.eta)),
        ("alpha".into(), num(config.weights.alpha)),
        ("beta".into(), num(config.weights.beta)),
        ("delta".into(), num(config.weights.delta)),
        ("zeta".into(), num(config.weights.zeta)),
        ("omega".into(), num(config.weights.omega)),
        ("learning_rate".into(), num(config.learning_rate)),
        ("epochs".into(), Value::from(config.epochs as u64)),
        ("batch_size".into(), Value::from(config.batch_size as u64)),
        ("seed".into(), Value::from(config.seed)),
        ("enc_hidden".into(), Value::from(config.enc_hidden as u64)),
        ("latent_dim".into(), Value::from(config.d_z as u64)),
        ("clf_hidden".into(), Value::from(config.clf_hidden as u64)),
        ("dropout".into(), num(config.dropout_p)),
        ("source_only".into(), Value::from(config.source_only)),
        (
            "warmup_epochs".into(),
            Value::from(config.warmup_epochs as u64),
        ),
        (
            "pretrain_epochs".into(),
            Value::from(config.source_pretrain_epochs as u64),
        ),
        (
            "disable_comp".into(),
            Value::from(config.ablation.disable_comp),
        ),
        (
            "disable_intra_inter".into(),
            Value::from(config.ablation.disable_intra_inter),
        ),
        (
            "disable_rpts".into(),
            Value::from(config.ablation.disable_rpts),
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_flat_key_values() {
        let f = write_tmp("# comment\nepochs = 10\ngamma = 0.5\nsource_only = true\n");
        let map = parse_config_file(f.path()).unwrap();
        assert_eq!(map["epochs"], "10");
        let mut cfg = TrainConfig::default();
        apply_to_train_config(&mut cfg, &map).unwrap();
        assert_eq!(cfg.epochs, 10);
        assert_eq!(cfg.weights.gamma, 0.5);
        assert!(cfg.source_only);
    }

    #[test]
    fn rejects_unknown_key_by_name() {
        let f = write_tmp("epoch = 10\n");
        let err = parse_config_file(f.path()).unwrap_err();
        assert!(err.to_string().contains("'epoch'"), "{err}");
    }

    #[test]
    fn rejects_bad_value_and_duplicate() {
        let f = write_tmp("epochs = ten\n");
        let map = parse_config_file(f.path()).unwrap();
        let mut cfg = TrainConfig::default();
        assert!(apply_to_train_config(&mut cfg, &map).is_err());

        let f = write_tmp("epochs = 1\nepochs = 2\n");
        assert!(parse_config_file(f.path()).is_err());
    }

    #[test]
    fn reads_config_from_manifest_json() {
        let f = write_tmp(r#"{"tool_version":"0.1.0","config":{"epochs":7,"gamma":0.25}}"#);
        let map = parse_config_file(f.path()).unwrap();
        let mut cfg = TrainConfig::default();
        apply_to_train_config(&mut cfg, &map).unwrap();
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.weights.gamma, 0.25);
    }

    #[test]
    fn resolved_json_round_trips_through_manifest_path() {
        let mut cfg = TrainConfig::default();
        cfg.weights.gamma = 0.123_456_789_012_345_68;
        cfg.epochs = 42;
        let entries = resolved_config_json(&cfg);
        let obj: serde_json::Map<String, Value> = entries.into_iter().collect();
        let manifest = serde_json::json!({ "config": obj });
        let f = write_tmp(&serde_json::to_string(&manifest).unwrap());
        let map = parse_config_file(f.path()).unwrap();
        let mut rebuilt = TrainConfig::default();
        apply_to_train_config(&mut rebuilt, &map).unwrap();
        assert_eq!(rebuilt, cfg);
    }
}
