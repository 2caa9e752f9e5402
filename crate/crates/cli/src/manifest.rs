//! Run manifests: what was run, with which inputs, producing which files.

use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileDigest {
    pub fn of(path: &Path, content: &[u8]) -> Self {
        FileDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(content),
            bytes: content.len() as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Digest of the effective configuration; independent of key order.
    pub config_hash: String,
    pub master_seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub duration_secs: f64,
    pub exit_code: i32,
    pub details: Value,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Recursively sorts object keys.
pub fn canonical(v: Value) -> Value {
    match v {
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Object(entries.into_iter().map(|(k, v)| (k, canonical(v))).collect())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(canonical).collect()),
        other => other,
    }
}

/// SHA-256 of the compact canonical JSON form of `cfg`.
pub fn config_hash<T: Serialize>(cfg: &T) -> CliResult<String> {
    let v = serde_json::to_value(cfg).map_err(|e| CliError::config(format!("unserializable config: {e}")))?;
    let text = serde_json::to_string(&canonical(v)).expect("JSON values always serialize");
    Ok(sha256_hex(text.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn canonical_form_ignores_key_order() {
        let a = json!({"b": 1, "a": {"y": [1, {"q": 2, "p": 3}], "x": null}});
        let b = json!({"a": {"x": null, "y": [1, {"p": 3, "q": 2}]}, "b": 1});
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        assert_ne!(config_hash(&a).unwrap(), config_hash(&json!({"b": 2})).unwrap());
    }

    proptest::proptest! {
        #[test]
        fn insertion_order_does_not_change_the_hash(
            entries in proptest::collection::btree_map("[a-z]{1,6}", -1000i64..1000, 1..12)
        ) {
            let forward: serde_json::Map<String, Value> =
                entries.iter().map(|(k, v)| (k.clone(), json!({ "v": v, "k": k }))).collect();
            let backward: serde_json::Map<String, Value> =
                entries.iter().rev().map(|(k, v)| (k.clone(), json!({ "k": k, "v": v }))).collect();
            proptest::prop_assert_eq!(
                config_hash(&Value::Object(forward)).unwrap(),
                config_hash(&Value::Object(backward)).unwrap()
            );
        }
    }

    #[test]
    fn digest_of_known_bytes() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
