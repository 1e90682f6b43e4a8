//! Config layering: struct defaults, then a JSON file, then flags.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use xmodal::{Error, Result};

/// Reads `path` over the defaults of `C`. Fields missing from the file keep
/// their defaults; unknown fields are rejected.
pub fn load_config<C>(path: Option<&Path>) -> Result<C>
where
    C: DeserializeOwned + Serialize + Default,
{
    let Some(path) = path else {
        return Ok(C::default());
    };
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: format!("{}: {e}", path.display()),
    })?;
    let serde_json::Value::Object(given) = &value else {
        return Err(Error::ConfigInvalid(format!("{}: expected a JSON object", path.display())));
    };
    let defaults = serde_json::to_value(C::default()).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
    if let serde_json::Value::Object(known) = &defaults {
        if let Some(extra) = given.keys().find(|k| !known.contains_key(*k)) {
            return Err(Error::ConfigInvalid(format!("{}: unknown field {extra:?}", path.display())));
        }
    }
    serde_json::from_value(value).map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))
}

/// Overwrites `slot` when the flag was given.
pub fn set<V>(slot: &mut V, flag: Option<V>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

/// Parses a flag value through the type's serde names, so that flags accept
/// exactly the spellings config files use.
pub fn serde_name<V: DeserializeOwned>(s: &str) -> std::result::Result<V, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}
