//! Run configuration: one TOML or JSON file describes a whole pipeline.
//!
//! Relative paths resolve against the config file's directory, so a task
//! directory is self-contained and can move. The [`RunConfig::fingerprint`]
//! hashes every knob that affects computed values (seed, backend, model
//! and propagation settings, evaluation flags, input paths). It excludes
//! the method and all output locations: one config produces one
//! fingerprint no matter which methods run or where results land, so
//! reports from a single run share a prefix.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::Method;
use crate::corpus::DEFAULT_UNLABELED_CAP;
use crate::eval::BackendKind;
use crate::lm::LmConfig;
use crate::propagate::LpParams;
use crate::{Error, Result};

/// Input and output file locations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub inventory: Option<PathBuf>,
    pub labeled: Option<PathBuf>,
    pub unlabeled: Option<PathBuf>,
    pub lm_text: Option<PathBuf>,
    pub word_vectors: Option<PathBuf>,
    /// Prefix for language model artifacts.
    pub model: Option<PathBuf>,
    /// Prefix for the sense vector store.
    pub senses: Option<PathBuf>,
    /// Gold evaluation instances.
    pub eval: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

/// Evaluation behavior flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalFlags {
    /// Score only lemmas with more than one sense.
    pub polysemous_only: bool,
    /// L2-normalize context vectors before averaging into sense vectors.
    pub normalize_sense_vectors: bool,
    /// Per-lemma cap on unlabeled sentences.
    pub unlabeled_cap: usize,
    /// Bag-of-vectors window radius; absent means the whole sentence.
    pub bow_window: Option<usize>,
}

impl Default for EvalFlags {
    fn default() -> Self {
        EvalFlags {
            polysemous_only: false,
            normalize_sense_vectors: true,
            unlabeled_cap: DEFAULT_UNLABELED_CAP,
            bow_window: None,
        }
    }
}

/// Full pipeline configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub backend: BackendKind,
    pub method: Method,
    pub paths: PathsConfig,
    pub lm: LmConfig,
    pub lp: LpParams,
    pub eval: EvalFlags,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            backend: BackendKind::Bow,
            method: Method::Nn,
            paths: PathsConfig::default(),
            lm: LmConfig::default(),
            lp: LpParams::default(),
            eval: EvalFlags::default(),
        }
    }
}

/// Which pipeline step a config is validated for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    TrainLm,
    BuildSenses,
    Classify,
    Evaluate,
    SweepDensity,
}

/// Everything the fingerprint covers, in fixed field order.
#[derive(Serialize)]
struct FingerprintView<'a> {
    seed: u64,
    backend: BackendKind,
    lm: &'a LmConfig,
    lp: &'a LpParams,
    eval: &'a EvalFlags,
    inventory: &'a Option<PathBuf>,
    labeled: &'a Option<PathBuf>,
    unlabeled: &'a Option<PathBuf>,
    lm_text: &'a Option<PathBuf>,
    word_vectors: &'a Option<PathBuf>,
    model: &'a Option<PathBuf>,
    senses: &'a Option<PathBuf>,
    eval_path: &'a Option<PathBuf>,
}

impl RunConfig {
    /// Loads a config from `.toml` or `.json` and resolves relative paths
    /// against the file's directory. The fingerprint is computed on the
    /// paths as written, before resolution, so it does not depend on where
    /// the process runs from.
    pub fn load(path: &Path) -> Result<(RunConfig, String)> {
        Self::load_with(path, |_| {})
    }

    /// Like [`RunConfig::load`] but applies `overrides` (typically command
    /// line flags) before validation, fingerprinting, and path resolution,
    /// so overridden knobs change the fingerprint exactly as if they were
    /// written in the file.
    pub fn load_with<F>(path: &Path, overrides: F) -> Result<(RunConfig, String)>
    where
        F: FnOnce(&mut RunConfig),
    {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        let mut config: RunConfig = match ext {
            "toml" => toml::from_str(&body).map_err(|e| Error::parse(path, 0, e.to_string()))?,
            "json" => {
                serde_json::from_str(&body).map_err(|e| Error::parse(path, 0, e.to_string()))?
            }
            other => {
                return Err(Error::InvalidInput(format!(
                    "config `{}` has unsupported extension `{other}` (expected toml or json)",
                    path.display()
                )))
            }
        };
        overrides(&mut config);
        config.lm.validate()?;
        config.lp.validate()?;
        let fingerprint = config.fingerprint();
        if let Some(dir) = path.parent() {
            config.resolve_paths(dir);
        }
        Ok((config, fingerprint))
    }

    fn resolve_paths(&mut self, dir: &Path) {
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = dir.join(&path);
                }
            }
        };
        resolve(&mut self.paths.inventory);
        resolve(&mut self.paths.labeled);
        resolve(&mut self.paths.unlabeled);
        resolve(&mut self.paths.lm_text);
        resolve(&mut self.paths.word_vectors);
        resolve(&mut self.paths.model);
        resolve(&mut self.paths.senses);
        resolve(&mut self.paths.eval);
        resolve(&mut self.paths.output_dir);
    }

    /// SHA-256 over the canonical JSON of all computation-affecting knobs.
    pub fn fingerprint(&self) -> String {
        let view = FingerprintView {
            seed: self.seed,
            backend: self.backend,
            lm: &self.lm,
            lp: &self.lp,
            eval: &self.eval,
            inventory: &self.paths.inventory,
            labeled: &self.paths.labeled,
            unlabeled: &self.paths.unlabeled,
            lm_text: &self.paths.lm_text,
            word_vectors: &self.paths.word_vectors,
            model: &self.paths.model,
            senses: &self.paths.senses,
            eval_path: &self.paths.eval,
        };
        let json = serde_json::to_string(&view).expect("fingerprint view serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        crate::lm::hex_string(&hasher.finalize())
    }

    /// Checks that every path the command reads is configured and exists.
    pub fn validate_for(&self, command: Command) -> Result<()> {
        match command {
            Command::TrainLm => {
                self.require_file("lm_text", &self.paths.lm_text)?;
                self.require_set("model", &self.paths.model)?;
            }
            Command::BuildSenses => {
                self.require_file("inventory", &self.paths.inventory)?;
                self.require_file("labeled", &self.paths.labeled)?;
                self.require_backend()?;
                self.require_set("senses", &self.paths.senses)?;
            }
            Command::Classify => {
                self.require_file("inventory", &self.paths.inventory)?;
                match self.method {
                    Method::Mfs => {}
                    Method::Nn => {
                        self.require_file_with_suffix(
                            "senses",
                            &self.paths.senses,
                            ".manifest.json",
                        )?;
                    }
                    Method::Lp => {
                        self.require_file("labeled", &self.paths.labeled)?;
                        self.require_file("unlabeled", &self.paths.unlabeled)?;
                        self.require_backend()?;
                    }
                }
            }
            Command::Evaluate | Command::SweepDensity => {
                self.require_file("inventory", &self.paths.inventory)?;
                self.require_file("labeled", &self.paths.labeled)?;
                self.require_file("eval", &self.paths.eval)?;
                self.require_backend()?;
                let needs_pool = command == Command::SweepDensity || self.method == Method::Lp;
                if needs_pool {
                    self.require_file("unlabeled", &self.paths.unlabeled)?;
                }
            }
        }
        Ok(())
    }

    fn require_set(&self, name: &str, path: &Option<PathBuf>) -> Result<()> {
        if path.is_none() {
            return Err(Error::InvalidInput(format!(
                "config is missing required path `{name}`"
            )));
        }
        Ok(())
    }

    fn require_file(&self, name: &str, path: &Option<PathBuf>) -> Result<()> {
        self.require_set(name, path)?;
        let path = path.as_ref().expect("checked above");
        if !path.is_file() {
            return Err(Error::InvalidInput(format!(
                "config path `{name}` does not exist: {}",
                path.display()
            )));
        }
        Ok(())
    }

    fn require_file_with_suffix(
        &self,
        name: &str,
        prefix: &Option<PathBuf>,
        suffix: &str,
    ) -> Result<()> {
        self.require_set(name, prefix)?;
        let prefix = prefix.as_ref().expect("checked above");
        let mut os = prefix.as_os_str().to_os_string();
        os.push(suffix);
        let full = PathBuf::from(os);
        if !full.is_file() {
            return Err(Error::InvalidInput(format!(
                "config path `{name}` is missing artifact {}",
                full.display()
            )));
        }
        Ok(())
    }

    /// Backend-specific artifacts: the vector table for bow, the trained
    /// model for lm.
    fn require_backend(&self) -> Result<()> {
        match self.backend {
            BackendKind::Bow => self.require_file("word_vectors", &self.paths.word_vectors),
            BackendKind::Lm => self.require_file_with_suffix(
                "model",
                &self.paths.model,
                ".manifest.json",
            ),
        }
    }

    /// Writes the config as TOML.
    pub fn save_toml(&self, path: &Path) -> Result<()> {
        let body =
            toml::to_string_pretty(self).map_err(|e| Error::parse(path, 0, e.to_string()))?;
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }
}

/// First eight hex characters, used in report file names.
pub fn short_fingerprint(fingerprint: &str) -> &str {
    &fingerprint[..fingerprint.len().min(8)]
}
