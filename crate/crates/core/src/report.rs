//! Shared output conventions: real numbers in CSV carry 17 significant
//! digits, and every report embeds its provenance.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

/// `v` in scientific notation with 17 significant digits, which round-trips
/// every finite `f64`. Non-finite values are written as `NaN`, `inf`, `-inf`.
pub fn real(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub input: Option<String>,
    pub input_sha256: Option<String>,
    pub seed: u64,
    pub library_version: String,
    /// Effective settings of the run, as key/value pairs.
    pub config: serde_json::Value,
}

impl Provenance {
    pub fn new(input: Option<&Path>, seed: u64, config: serde_json::Value) -> Result<Self> {
        let input_sha256 = input.map(sha256_file).transpose()?;
        Ok(Self {
            input: input.map(|p| p.display().to_string()),
            input_sha256,
            seed,
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
        })
    }
}
