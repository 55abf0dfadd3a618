//! Pipeline configuration: one TOML tree with a section per stage.
//!
//! Values come from the built-in defaults, then an optional config file,
//! then `--set section.key=value` overrides, then dedicated flags. The
//! merged result is validated as a whole before any stage runs.

use std::fmt;
use std::path::{Path, PathBuf};

use auxspec::attract_repel::ArConfig;
use auxspec::auxgan::{AdversarialConfig, AuxGanConfig};
use auxspec::demo::DemoConfig;
use auxspec::eval::DEFAULT_CANDIDATES;
use auxspec::postspec::PostSpecConfig;
use auxspec::xling::AlignConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A problem with the configuration; reported with exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    pub out_dir: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub specialized: Option<PathBuf>,
    pub attract: Option<PathBuf>,
    pub repel: Option<PathBuf>,
    pub generator: Option<PathBuf>,
    pub map: Option<PathBuf>,
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    /// Read at most this many vectors from each embedding file.
    pub vocab_limit: Option<usize>,
    pub strip_language_prefix: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_candidates: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_candidates: DEFAULT_CANDIDATES,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub io: IoConfig,
    pub attract_repel: ArConfig,
    pub postspec: PostSpecConfig,
    pub adversarial: AdversarialConfig,
    pub align: AlignConfig,
    pub eval: EvalConfig,
    pub demo: DemoConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 1,
            io: IoConfig::default(),
            attract_repel: ArConfig::default(),
            postspec: PostSpecConfig::default(),
            adversarial: AdversarialConfig::default(),
            align: AlignConfig::default(),
            eval: EvalConfig::default(),
            demo: DemoConfig::default(),
        }
    }
}

fn section(name: &str, result: auxspec::Result<()>) -> Result<(), ConfigError> {
    result.map_err(|e| ConfigError(format!("[{name}] {e}")))
}

impl PipelineConfig {
    pub fn auxgan(&self) -> AuxGanConfig {
        AuxGanConfig {
            base: self.postspec.clone(),
            adversarial: self.adversarial.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        section("attract_repel", self.attract_repel.validate())?;
        section("postspec", self.postspec.validate())?;
        section("adversarial", self.auxgan().validate())?;
        section("align", self.align.validate())?;
        section("demo", self.demo.validate())?;
        if self.eval.n_candidates == 0 {
            return Err(ConfigError(
                "[eval] invalid value for `n_candidates`: must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Defaults merged with an optional file and `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut tree = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ConfigError(format!("{}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| ConfigError(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for item in overrides {
            apply_override(&mut tree, item)?;
        }
        toml::Value::Table(tree)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError(format!("config: {}", e.message())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("pipeline config is always serializable")
    }

    /// SHA-256 of the effective config text, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}

/// Apply `a.b.c=value`, where `value` is a TOML literal or a bare string.
fn apply_override(tree: &mut toml::Table, item: &str) -> Result<(), ConfigError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| ConfigError(format!("override {item:?} is not key=value")))?;
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError(format!("override key {key:?} is malformed")));
    }
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut node = tree;
    for p in parents {
        let entry = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError(format!("override {key:?}: `{p}` is not a section")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = PipelineConfig::default();
        let back: PipelineConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        cfg.validate().unwrap();
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = PipelineConfig::load(
            None,
            &[
                "seed=7".into(),
                "postspec.generator.hidden_size=64".into(),
                "io.embeddings=vectors.txt".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.postspec.generator.hidden_size, 64);
        assert_eq!(cfg.io.embeddings, Some(PathBuf::from("vectors.txt")));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let err = PipelineConfig::load(None, &["postspec.marign=1.0".into()]).unwrap_err();
        assert!(err.0.contains("marign"), "{err}");
        assert!(PipelineConfig::load(None, &["novalue".into()]).is_err());

        let cfg = PipelineConfig::load(None, &["attract_repel.delta_attract=-1".into()]).unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.0.contains("delta_attract"), "{err}");
    }

    #[test]
    fn hash_tracks_content() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
    }
}
