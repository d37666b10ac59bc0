use std::fs;
use std::path::Path;

use anyhow::Result;
use serde::de::DeserializeOwned;
use serde_json::Value;

use crate::failure::{config, require_file};
use crate::output::sha256_hex;

pub struct Loaded<T> {
    pub config: T,
    pub sha256: String,
    pub seed: u64,
}

/// Reads a JSON config. A `--seed` flag overrides the document's top-level
/// `seed` when the schema has one; the hash covers the document after the
/// override so two runs agree on it exactly when they agree on inputs.
pub fn load<T: DeserializeOwned>(path: &Path, seed_flag: Option<u64>, has_seed: bool) -> Result<Loaded<T>> {
    require_file(path)?;
    let text = fs::read_to_string(path)?;
    let mut value: Value =
        serde_json::from_str(&text).map_err(|e| config(format!("{}: not valid JSON: {e}", path.display())))?;
    let Value::Object(map) = &mut value else {
        return Err(config(format!("{}: expected a JSON object", path.display())));
    };
    if let (Some(s), true) = (seed_flag, has_seed) {
        map.insert("seed".into(), Value::from(s));
    }
    let seed = match map.get("seed") {
        Some(v) => v.as_u64().ok_or_else(|| config("seed: expected an unsigned integer"))?,
        None => seed_flag.unwrap_or(0),
    };
    let sha256 = sha256_hex(&serde_json::to_vec(&value)?);
    let config_value = serde_path_to_error::deserialize(&value).map_err(|e| {
        let field = e.path().to_string();
        config(format!("invalid config at `{field}`: {}", e.into_inner()))
    })?;
    Ok(Loaded {
        config: config_value,
        sha256,
        seed,
    })
}
