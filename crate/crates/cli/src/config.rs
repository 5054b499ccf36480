//! Project configuration and strict/lenient JSON loading.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use odmr_core::echo::{EnvelopeOptions, FftOptions, PeakOptions, TimeAxis};
use odmr_core::fit::LmOptions;
use odmr_core::kinetics::presets::KineticsDoc;
use odmr_core::pulse::SequenceTiming;
use odmr_core::spin::{LineShape, SpinSystemDoc};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strictness {
    Strict,
    Lenient,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectConfig {
    pub spin_system: Option<SpinSystemDoc>,
    pub kinetics: Option<KineticsDoc>,
    pub spectrum: SpectrumSection,
    pub plan: PlanSection,
    pub fit: FitSection,
    pub eseem: EseemSection,
    pub paths: PathsSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectrumSection {
    pub line_shape: LineShape,
    pub fwhm_mhz: f64,
    /// Defaults to the line span padded by ten linewidths.
    pub f_min_mhz: Option<f64>,
    pub f_max_mhz: Option<f64>,
    /// Defaults to eight points per linewidth.
    pub n_points: Option<usize>,
    pub transition_weights: Option<[f64; 3]>,
    /// Lines weaker than this fraction of the strongest are dropped. Kept tiny so the
    /// listed intensities still sum to 3.
    pub prune_relative: f64,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        Self {
            line_shape: LineShape::Gaussian,
            fwhm_mhz: 2.0,
            f_min_mhz: None,
            f_max_mhz: None,
            n_points: None,
            transition_weights: None,
            prune_relative: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridSpec {
    pub start_s: f64,
    pub stop_s: f64,
    pub per_decade: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanSection {
    pub delay_grid: Option<GridSpec>,
    pub delays_s: Option<Vec<f64>>,
    pub readout_delay_s: Option<f64>,
    pub timing: Option<SequenceTiming>,
    pub pump_scale: f64,
    /// Absolute Gaussian noise added to the normalized signals.
    pub noise_sigma: f64,
}

impl Default for PlanSection {
    fn default() -> Self {
        Self {
            delay_grid: None,
            delays_s: None,
            readout_delay_s: None,
            timing: None,
            pump_scale: 1.0,
            noise_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FitSection {
    /// Starting guess; the `kinetics` section is used when absent.
    pub initial: Option<KineticsDoc>,
    pub initial_pump_scale: f64,
    pub n_starts: usize,
    pub start_spread: f64,
    pub fit_amplitudes: bool,
    pub lm: LmOptions,
    /// `all`, `A`, `B` or a comma-separated list of curve labels.
    pub curves_subset: Option<String>,
}

impl Default for FitSection {
    fn default() -> Self {
        let d = odmr_core::fit::FitOptions::default();
        Self {
            initial: None,
            initial_pump_scale: 1.0,
            n_starts: d.n_starts,
            start_spread: d.start_spread,
            fit_amplitudes: d.fit_amplitudes,
            lm: d.lm,
            curves_subset: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EseemSection {
    pub envelope: EnvelopeOptions,
    pub fft: FftOptions,
    pub peaks: PeakOptions,
    /// Quadrupole principal values for the predicted lines; falls back to the first
    /// nucleus of `spin_system`.
    #[serde(rename = "Q_MHz")]
    pub q_mhz: Option<[f64; 3]>,
    /// Used only when the trace has no sidecar.
    pub time_axis: Option<TimeAxis>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsSection {
    pub out: Option<PathBuf>,
    pub curves: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub baseline: Option<PathBuf>,
    pub candidate: Option<PathBuf>,
}

/// Parses JSON, collecting keys the schema does not know. Strict mode rejects them.
pub fn parse_json<T: DeserializeOwned>(text: &str, what: &str, strictness: Strictness) -> CliResult<T> {
    let mut unknown = Vec::new();
    let mut de = serde_json::Deserializer::from_str(text);
    let value: T = serde_ignored::deserialize(&mut de, |path| {
        // drop the `?` segments serde_ignored inserts for Option layers
        let p = path.to_string();
        unknown.push(p.split('.').filter(|s| *s != "?").collect::<Vec<_>>().join("."));
    })
        .map_err(|e| CliError::config(format!("{what}: {e}")))?;
    de.end().map_err(|e| CliError::config(format!("{what}: {e}")))?;
    if !unknown.is_empty() {
        let list = unknown.join(", ");
        match strictness {
            Strictness::Strict => {
                return Err(CliError::config(format!("{what}: unknown keys: {list}")));
            }
            Strictness::Lenient => log::warn!("{what}: ignoring unknown keys: {list}"),
        }
    }
    Ok(value)
}

pub fn read_file(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

pub fn read_json<T: DeserializeOwned>(path: &Path, strictness: Strictness) -> CliResult<(T, Vec<u8>)> {
    let bytes = read_file(path)?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|_| CliError::config(format!("{}: not UTF-8", path.display())))?;
    let v = parse_json(text, &path.display().to_string(), strictness)?;
    Ok((v, bytes))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub struct LoadedConfig {
    pub config: ProjectConfig,
    /// Directory relative paths in the config are resolved against.
    pub base_dir: PathBuf,
    pub sha256: Option<String>,
}

impl LoadedConfig {
    pub fn load(path: Option<&Path>, strictness: Strictness) -> CliResult<Self> {
        match path {
            None => Ok(Self {
                config: ProjectConfig::default(),
                base_dir: PathBuf::from("."),
                sha256: None,
            }),
            Some(p) => {
                let (config, bytes) = read_json::<ProjectConfig>(p, strictness)?;
                Ok(Self {
                    config,
                    base_dir: p.parent().map(Path::to_path_buf).unwrap_or_default(),
                    sha256: Some(sha256_hex(&bytes)),
                })
            }
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn spin_system(&self) -> CliResult<&SpinSystemDoc> {
        self.config
            .spin_system
            .as_ref()
            .ok_or_else(|| CliError::config("config: missing required section 'spin_system'"))
    }

    pub fn kinetics(&self) -> CliResult<&KineticsDoc> {
        self.config
            .kinetics
            .as_ref()
            .ok_or_else(|| CliError::config("config: missing required section 'kinetics'"))
    }
}
