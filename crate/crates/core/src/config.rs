//! Line-oriented `key=value` configuration files.

use std::collections::BTreeMap;

use crate::error::{PasteError, Result};

/// Parses `key = value` lines. Blank lines and lines starting with `#` are
/// skipped; a repeated key is an error.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| PasteError::Parse {
            line: i + 1,
            message: format!("expected key=value, found '{line}'"),
        })?;
        let key = key.trim().replace('-', "_");
        if key.is_empty() {
            return Err(PasteError::Parse {
                line: i + 1,
                message: "empty key".into(),
            });
        }
        if out.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(PasteError::Parse {
                line: i + 1,
                message: format!("duplicate key '{key}'"),
            });
        }
    }
    Ok(out)
}
