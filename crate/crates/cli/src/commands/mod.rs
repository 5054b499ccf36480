pub mod eseem;
pub mod fit;
pub mod presets;
pub mod sensitivity;
pub mod simulate;
pub mod spectrum;

use std::path::PathBuf;

use crate::config::{LoadedConfig, Strictness};
use crate::output::{OutputSet, Provenance};

/// Everything a command needs from the command line and the config file.
pub struct Context {
    pub cfg: LoadedConfig,
    pub strictness: Strictness,
    pub seed: u64,
}

impl Context {
    pub fn provenance(&self, command: &'static str) -> Provenance {
        Provenance::new(command, self.cfg.sha256.clone(), self.seed)
    }

    /// A path from the command line wins over the config; config paths are relative to
    /// the config file.
    pub fn path(&self, flag: Option<&PathBuf>, from_config: Option<&PathBuf>) -> Option<PathBuf> {
        flag.cloned().or_else(|| from_config.map(|p| self.cfg.resolve(p)))
    }
}

/// Files to write plus text for stdout.
#[derive(Default)]
pub struct CommandOutput {
    pub files: OutputSet,
    pub stdout: Option<String>,
}
