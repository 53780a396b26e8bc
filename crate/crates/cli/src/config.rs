use std::path::Path;

use netren::experiment::ExperimentConfig;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Configs shipped with the binary, addressable by name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("benchmark-4-vehicles", include_str!("../../../configs/benchmark-4-vehicles.toml")),
    ("two-node", include_str!("../../../configs/two-node.toml")),
    ("single-node", include_str!("../../../configs/single-node.toml")),
];

pub fn parse(text: &str) -> Result<ExperimentConfig, CliError> {
    Ok(toml::from_str(text)?)
}

/// Reads `spec` as a file path, falling back to a bundled config name.
pub fn load(spec: &str) -> Result<ExperimentConfig, CliError> {
    let path = Path::new(spec);
    if path.exists() {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        return parse(&text);
    }
    match BUNDLED.iter().find(|(name, _)| *name == spec) {
        Some((_, text)) => parse(text),
        None => Err(CliError::Usage(format!(
            "config '{spec}' is neither a file nor a bundled config ({})",
            BUNDLED.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", ")
        ))),
    }
}

pub fn to_toml(cfg: &ExperimentConfig) -> Result<String, CliError> {
    toml::to_string_pretty(cfg).map_err(|e| CliError::Usage(format!("cannot serialize config: {e}")))
}

/// Digest identifying a training run. Epoch count and per-epoch certification
/// are excluded so a resumed run may extend or audit the original one.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    if let Some(t) = c.training.as_mut() {
        t.epochs = 0;
        t.debug_certify = false;
    }
    c.output_dir = None;
    let json = serde_json::to_string(&c).expect("config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}
