//! Data directory layout and persisted state.
//!
//! ```text
//! <data_dir>/
//!   state.json          participants, authorities, records, rules, ledger chain
//!   insurer.pub.json    Paillier public key envelope
//!   insurer.key.json    Paillier private key envelope
//!   store/blocks/       content-addressed DAG nodes
//!   store/tokens/       one-time tokens (<id>.open / <id>.redeemed)
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use ehrchain::dagstore::{DagError, DagStore, FsBackend};
use ehrchain::ledger::{LedgerConfig, LedgerError};
use ehrchain::paillier::{PaillierError, PaillierPrivateKey, PaillierPublicKey};
use ehrchain::policy::{PolicyError, RuleSet};
use ehrchain::workflow::{EhrSystem, Snapshot, WorkflowError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DATA_DIR_ENV: &str = "EHR_DATA_DIR";
pub const CONFIG_ENV: &str = "EHR_CONFIG";
pub const DEFAULT_CONFIG_FILE: &str = "ehr.toml";
pub const DEFAULT_DATA_DIR: &str = "ehr-data";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("data directory {0} is not initialised; run `ehr setup` first")]
    NotInitialised(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("config: {0}")]
    Config(String),
    #[error("corrupt state file: {0}")]
    State(#[from] serde_json::Error),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error(transparent)]
    Dag(#[from] DagError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Paillier(#[from] PaillierError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("{0}")]
    Other(String),
}

pub fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn default_paillier_bits() -> usize {
    1024
}

/// Contents of `ehr.toml`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default = "default_paillier_bits")]
    pub paillier_bits: usize,
    /// ACL rules loaded at setup.
    #[serde(default)]
    pub rules_file: Option<PathBuf>,
    #[serde(default)]
    pub ledger: LedgerConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config { data_dir: None, paillier_bits: default_paillier_bits(), rules_file: None, ledger: LedgerConfig::default() }
    }
}

impl Config {
    /// Reads the config file, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg: Config = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.ledger.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.data_dir = cfg.data_dir.map(|d| base.join(d));
        cfg.rules_file = cfg.rules_file.map(|r| base.join(r));
        Ok(cfg)
    }
}

/// Resolves config and data directory. Data directory precedence: command
/// line, `EHR_DATA_DIR`, config file, `./ehr-data`.
pub fn resolve(config_flag: Option<PathBuf>, data_dir_flag: Option<PathBuf>) -> Result<(Config, PathBuf), CliError> {
    let config_path = config_flag
        .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from))
        .or_else(|| Some(PathBuf::from(DEFAULT_CONFIG_FILE)).filter(|p| p.exists()));
    let cfg = match &config_path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let data_dir = data_dir_flag
        .or_else(|| std::env::var_os(DATA_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .or_else(|| cfg.data_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR));
    Ok((cfg, data_dir))
}

pub struct Workspace {
    pub dir: PathBuf,
}

impl Workspace {
    pub fn new(dir: PathBuf) -> Self {
        Workspace { dir }
    }

    fn state_path(&self) -> PathBuf {
        self.dir.join("state.json")
    }

    pub fn store_dir(&self) -> PathBuf {
        self.dir.join("store")
    }

    pub fn is_initialised(&self) -> bool {
        self.state_path().exists()
    }

    pub fn store(&self) -> Result<DagStore<FsBackend>, CliError> {
        Ok(DagStore::on_disk(self.store_dir())?)
    }

    pub fn create(&self, cfg: &Config, rules: RuleSet) -> Result<EhrSystem<FsBackend>, CliError> {
        fs::create_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        Ok(EhrSystem::new(self.store()?, cfg.ledger.clone(), rules)?)
    }

    pub fn load(&self) -> Result<EhrSystem<FsBackend>, CliError> {
        if !self.is_initialised() {
            return Err(CliError::NotInitialised(self.dir.clone()));
        }
        let path = self.state_path();
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let snap: Snapshot = serde_json::from_str(&text)?;
        Ok(EhrSystem::restore(snap, self.store()?)?)
    }

    /// Writes the state through a temporary file and rename.
    pub fn save(&self, sys: &EhrSystem<FsBackend>) -> Result<(), CliError> {
        let path = self.state_path();
        let tmp = path.with_extension("json.tmp");
        let text = serde_json::to_string_pretty(&sys.snapshot())?;
        fs::write(&tmp, text).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    pub fn write_insurer_keys(&self, pk: &PaillierPublicKey, sk: &PaillierPrivateKey) -> Result<(), CliError> {
        for (name, body) in [("insurer.pub.json", pk.to_envelope_json()), ("insurer.key.json", sk.to_envelope_json())] {
            let p = self.dir.join(name);
            fs::write(&p, body).map_err(io_err(&p))?;
        }
        Ok(())
    }

    pub fn insurer_public(&self) -> Result<PaillierPublicKey, CliError> {
        let p = self.dir.join("insurer.pub.json");
        Ok(PaillierPublicKey::from_envelope_json(&fs::read_to_string(&p).map_err(io_err(&p))?)?)
    }

    pub fn insurer_private(&self) -> Result<PaillierPrivateKey, CliError> {
        let p = self.dir.join("insurer.key.json");
        Ok(PaillierPrivateKey::from_envelope_json(&fs::read_to_string(&p).map_err(io_err(&p))?)?)
    }
}
