//! Resolved run configuration: built-in defaults, then an optional JSON file,
//! then dotted `--set` overrides, then the seed.

use std::fs;
use std::path::Path;

use porc_core::harness::RunConfig;
use porc_core::slide::{Magnification, TissueParams};
use porc_core::ssl::SslHyper;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const SEED_ENV: &str = "PORC_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    pub tile_size: u32,
    pub magnification: Magnification,
    pub patch_side: u32,
    pub cap: usize,
    pub tissue: TissueParams,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            tile_size: 256,
            magnification: Magnification::X20,
            patch_side: 256,
            cap: 500,
            tissue: TissueParams::default(),
        }
    }
}

/// `seed` drives every seeded stage; `ssl.seed` is overwritten with it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    pub seed: u64,
    pub ingest: IngestConfig,
    pub ssl: SslHyper,
    pub run: RunConfig,
}

/// Copies `patch` into `base`, refusing keys `base` does not have. Objects
/// merge recursively; anything else replaces wholesale.
fn merge(base: &mut Value, patch: Value, path: &str) -> Result<(), CliError> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let key = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                let slot = b.get_mut(&k).ok_or_else(|| CliError::Usage(format!("unknown config key {key}")))?;
                merge(slot, v, &key)?;
            }
            Ok(())
        }
        (b, p) => {
            *b = p;
            Ok(())
        }
    }
}

/// `a.b.c=value`; the value is read as JSON when it parses, else as a string.
fn parse_override(s: &str) -> Result<(Vec<&str>, Value), CliError> {
    let (key, raw) = s.split_once('=').ok_or_else(|| CliError::Usage(format!("override {s:?} is not key=value")))?;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("malformed override key {key:?}")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((parts, value))
}

fn apply_override(base: &mut Value, s: &str) -> Result<(), CliError> {
    let (parts, value) = parse_override(s)?;
    let mut patch = value;
    for p in parts.iter().rev() {
        patch = Value::Object([(p.to_string(), patch)].into_iter().collect());
    }
    merge(base, patch, "")
}

pub fn seed_from_env() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s.trim().parse().map(Some).map_err(|_| CliError::Usage(format!("{SEED_ENV}={s:?} is not a u64"))),
        Err(_) => Ok(None),
    }
}

impl CliConfig {
    /// Seed precedence: `seed` argument, then `env_seed`, then the config.
    pub fn resolve(
        file: Option<&Path>,
        overrides: &[String],
        seed: Option<u64>,
        env_seed: Option<u64>,
    ) -> Result<Self, CliError> {
        let mut value = serde_json::to_value(CliConfig::default()).expect("default config serializes");
        if let Some(path) = file {
            let text =
                fs::read_to_string(path).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
            let patch: Value =
                serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
            merge(&mut value, patch, "")?;
        }
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut cfg: CliConfig = serde_json::from_value(value).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        if let Some(s) = seed.or(env_seed) {
            cfg.seed = s;
        }
        cfg.ssl.seed = cfg.seed;
        cfg.ssl.validate().map_err(|e| CliError::Usage(format!("config: {e}")))?;
        Ok(cfg)
    }

    /// Hex SHA-256 of the canonical (sorted-key) JSON form.
    pub fn hash(&self) -> String {
        let bytes =
            serde_json::to_vec(&serde_json::to_value(self).expect("config serializes")).expect("value serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(overrides: &[&str]) -> Result<CliConfig, CliError> {
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        CliConfig::resolve(None, &o, None, None)
    }

    #[test]
    fn dotted_overrides_reach_nested_fields() {
        let c = resolve(&["ssl.lr_peak=0.001", "ingest.magnification=10x", "run.abmil.epochs=3"]).unwrap();
        assert_eq!(c.ssl.lr_peak, 0.001);
        assert_eq!(c.ingest.magnification, Magnification::X10);
        assert_eq!(c.run.abmil.epochs, 3);
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        for bad in ["ssl.lr_peek=1", "nope=1", "run.abmil.epochs.x=1", "ssl..lr_peak=1", "seed"] {
            assert!(matches!(resolve(&[bad]), Err(CliError::Usage(_))), "{bad}");
        }
        assert!(matches!(resolve(&["ssl.batch_size=\"many\""]), Err(CliError::Usage(_))));
    }

    #[test]
    fn seed_precedence_and_hash() {
        let base = resolve(&["seed=3"]).unwrap();
        assert_eq!((base.seed, base.ssl.seed), (3, 3));
        let env = CliConfig::resolve(None, &["seed=3".into()], None, Some(9)).unwrap();
        assert_eq!(env.seed, 9);
        let flag = CliConfig::resolve(None, &[], Some(4), Some(9)).unwrap();
        assert_eq!(flag.seed, 4);
        assert_eq!(base.hash(), resolve(&["seed=3"]).unwrap().hash());
        assert_ne!(base.hash(), flag.hash());
        assert_eq!(base.hash().len(), 64);
    }

    #[test]
    fn config_file_may_be_partial() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"ssl": {"epochs": 2}, "run": {"top_genes": 7}}"#).unwrap();
        let c = CliConfig::resolve(Some(&p), &[], None, None).unwrap();
        assert_eq!((c.ssl.epochs, c.run.top_genes, c.ssl.steps_per_epoch), (2, 7, SslHyper::default().steps_per_epoch));
        fs::write(&p, r#"{"ssl": {"epochz": 2}}"#).unwrap();
        assert!(CliConfig::resolve(Some(&p), &[], None, None).is_err());
    }
}
