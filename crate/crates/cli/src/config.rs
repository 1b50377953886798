//! JSON config files that mirror the command-line flags.

use std::fmt;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

/// Bad invocation: missing or conflicting flags, malformed config files.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Overlays the flags that were given on top of the config file's values.
///
/// Both sides are the same struct; unknown keys in the file are rejected by
/// the struct's `deny_unknown_fields`.
pub fn layered<T: Serialize + DeserializeOwned>(flags: &T, config: Option<&Path>) -> anyhow::Result<T> {
    let Some(path) = config else {
        return Ok(serde_json::from_value(serde_json::to_value(flags)?)?);
    };
    let text =
        std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut merged: Value =
        serde_json::from_str(&text).map_err(|e| usage(format!("config {} is not valid JSON: {e}", path.display())))?;
    let Value::Object(base) = &mut merged else {
        return Err(usage(format!("config {} must hold a JSON object", path.display())));
    };
    if let Value::Object(given) = serde_json::to_value(flags)? {
        for (k, v) in given {
            if !v.is_null() {
                base.insert(k, v);
            }
        }
    }
    serde_json::from_value(merged).map_err(|e| usage(format!("config {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Demo {
        n: Option<usize>,
        seed: Option<u64>,
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"n": 10, "seed": 3}"#).unwrap();
        let got = layered(&Demo { n: None, seed: Some(9) }, Some(&path)).unwrap();
        assert_eq!(
            got,
            Demo {
                n: Some(10),
                seed: Some(9)
            }
        );
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"n": 10, "bogus": 1}"#).unwrap();
        let err = layered(&Demo::default(), Some(&path)).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
    }
}
