//! Run manifest and seed splitting.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 over the bytes of every input file, in `inputs` order.
    pub config_sha256: String,
    pub inputs: Vec<InputDigest>,
    pub seed: u64,
    pub seeds: BTreeMap<String, u64>,
    pub settings: serde_json::Value,
    pub versions: BTreeMap<String, String>,
    pub wall_time_s: f64,
    pub outputs: Vec<String>,
    pub converged: bool,
    pub exit_code: u8,
    pub diagnostics: serde_json::Value,
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest of each file plus the combined digest.
pub fn digest_inputs(paths: &[&Path]) -> std::io::Result<(String, Vec<InputDigest>)> {
    let mut all = Sha256::new();
    let mut each = Vec::new();
    for p in paths {
        let bytes = std::fs::read(p)?;
        all.update(&bytes);
        each.push(InputDigest {
            path: p.display().to_string(),
            sha256: hex(&Sha256::digest(&bytes)),
        });
    }
    Ok((hex(&all.finalize()), each))
}

/// Subsystem seed: first eight bytes (little endian) of SHA-256 over the
/// global seed's little-endian bytes followed by the label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

pub fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("sgame-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("sgame-core".to_string(), sgame_core::VERSION.to_string()),
    ])
}
