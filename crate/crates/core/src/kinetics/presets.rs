//! Built-in parameter sets and the JSON form of kinetic and optical parameters.
//!
//! Only the DAP `k_x = 24.9e4 s⁻¹` anchor and the branching ratios are measured values.
//! Everything else is reconstructed from reported ratios (DAP `k_x/k_z = 12`, Pc
//! `k_x/k_z = 5`, DAP `k_x` about 10x and `k_y`, `k_z` about 4x the Pc values) or is a
//! placeholder to be replaced by user-supplied fits. The pump rate is an arbitrary
//! effective excitation rate.

use serde::{Deserialize, Serialize};

use super::{KineticParams, OpticalParams, S1Mode, DEFAULT_ISC_YIELD};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub kinetic: KineticParams,
    pub optical: OpticalParams,
    pub note: &'static str,
}

pub const PRESET_NAMES: [&str; 2] = ["Pc-fig4c", "DAP-fig4c"];

const PUMP_PER_S: f64 = 1.0e6;

pub fn preset(name: &str) -> Result<Preset> {
    let optical = OpticalParams::reduced(PUMP_PER_S, DEFAULT_ISC_YIELD)?;
    match name {
        "Pc-fig4c" => Ok(Preset {
            name: "Pc-fig4c",
            kinetic: KineticParams::new(
                [2.49e4, 1.2e4, 0.498e4],
                [1.0e4, 0.8e4, 0.9e4],
                [0.76, 0.16, 0.08],
            )?,
            optical,
            note: "reconstructed from reported ratios; k_y and w_ij are placeholders",
        }),
        "DAP-fig4c" => Ok(Preset {
            name: "DAP-fig4c",
            kinetic: KineticParams::new(
                [24.9e4, 4.8e4, 2.075e4],
                [1.4e4, 1.1e4, 1.2e4],
                [0.60, 0.21, 0.19],
            )?,
            optical,
            note: "k_x measured; k_z from k_x/k_z = 12; k_y and w_ij are placeholders",
        }),
        other => Err(Error::invalid(format!(
            "unknown preset '{other}' (known: {})",
            PRESET_NAMES.join(", ")
        ))),
    }
}

/// JSON form of kinetic plus optical parameters, either explicit or by preset name.
///
/// ```json
/// {"k_per_s": [kx, ky, kz], "w_per_s": [wxy, wxz, wyz], "P": [Px, Py, Pz],
///  "pump_per_s": 1e6, "isc_yield": 0.65, "mode": "reduced"}
/// ```
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct KineticsDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_per_s: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_per_s: Option<[f64; 3]>,
    #[serde(rename = "P", default, skip_serializing_if = "Option::is_none")]
    pub p: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pump_per_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub isc_yield: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s1_decay_per_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<S1Mode>,
}

impl KineticsDoc {
    /// Resolves to parameters. Explicit documents must give every rate, branching ratio
    /// and the pump rate; a preset may have individual fields overridden.
    pub fn resolve(&self) -> Result<(KineticParams, OpticalParams)> {
        let base = self.preset.as_deref().map(preset).transpose()?;
        let missing = |field: &str| Error::invalid(format!("kinetics: missing required field '{field}'"));
        let k = match (self.k_per_s, &base) {
            (Some(k), _) => k,
            (None, Some(b)) => b.kinetic.k(),
            (None, None) => return Err(missing("k_per_s")),
        };
        let w = match (self.w_per_s, &base) {
            (Some(w), _) => w,
            (None, Some(b)) => b.kinetic.w(),
            (None, None) => return Err(missing("w_per_s")),
        };
        let p = match (self.p, &base) {
            (Some(p), _) => p,
            (None, Some(b)) => b.kinetic.p(),
            (None, None) => return Err(missing("P")),
        };
        let pump = match (self.pump_per_s, &base) {
            (Some(x), _) => x,
            (None, Some(b)) => b.optical.pump_rate(),
            (None, None) => return Err(missing("pump_per_s")),
        };
        let isc = self.isc_yield.unwrap_or(DEFAULT_ISC_YIELD);
        let mode = self.mode.unwrap_or_default();
        let kinetic = KineticParams::new(k, w, p)?;
        let optical = OpticalParams::new(pump, isc, self.s1_decay_per_s, mode)?;
        Ok((kinetic, optical))
    }

    pub fn from_params(kp: &KineticParams, op: &OpticalParams) -> Self {
        Self {
            preset: None,
            k_per_s: Some(kp.k()),
            w_per_s: Some(kp.w()),
            p: Some(kp.p()),
            pump_per_s: Some(op.pump_rate()),
            isc_yield: Some(op.isc_yield()),
            s1_decay_per_s: (op.mode() == S1Mode::ExplicitS1).then(|| op.s1_decay_rate()),
            mode: Some(op.mode()),
        }
    }
}
