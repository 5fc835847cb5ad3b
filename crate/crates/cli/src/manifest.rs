//! Run manifests: every output directory carries the resolved config, the
//! command, a content hash of the input data, the tool version, and the
//! seed, so any result can be reproduced from its manifest alone.

use std::path::Path;

use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// SHA-256 of the input file bytes, hex encoded.
pub fn fingerprint_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Usage(format!("cannot read data {}: {e}", path.display())))?;
    Ok(fingerprint_bytes(&bytes))
}

pub fn fingerprint_bytes(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Serialize the manifest with a stable key order.
pub fn manifest_json(
    command: &str,
    seed: u64,
    data_fingerprint: Option<&str>,
    config: &[(String, Value)],
    extra: &[(String, Value)],
) -> String {
    let mut root = serde_json::Map::new();
    root.insert("tool_version".into(), Value::from(TOOL_VERSION));
    root.insert("command".into(), Value::from(command));
    root.insert("seed".into(), Value::from(seed));
    root.insert(
        "data_fingerprint".into(),
        match data_fingerprint {
            Some(f) => Value::from(f),
            None => Value::Null,
        },
    );
    let config_obj: serde_json::Map<String, Value> = config.iter().cloned().collect();
    root.insert("config".into(), Value::Object(config_obj));
    for (k, v) in extra {
        root.insert(k.clone(), v.clone());
    }
    let mut text = serde_json::to_string_pretty(&Value::Object(root)).expect("valid json");
    text.push('\n');
    text
}
