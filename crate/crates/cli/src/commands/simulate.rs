use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use odmr_core::fit::{synthesize, FitContext, FitParameterSet, MeasurementCurve};
use odmr_core::kinetics::presets::KineticsDoc;
use odmr_core::kinetics::{KineticParams, OpticalParams};
use odmr_core::pulse::{
    default_delay_grid, generate_plan, log_delay_grid, MeasurementSpec, SequenceKind, SequenceTiming,
    DEFAULT_READOUT_DELAY_S,
};
use odmr_core::Transition;

use super::{CommandOutput, Context};
use crate::error::{CliError, CliResult};
use crate::output::csv_bytes;
use crate::svg::{Plot, Style};

/// Per-curve metadata next to each CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveSidecar {
    pub label: String,
    pub init_id: u8,
    pub sequence_kind: SequenceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_pulse_transition: Option<Transition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readout_delay_s: Option<f64>,
}

impl CurveSidecar {
    pub fn from_spec(spec: &MeasurementSpec) -> Self {
        Self {
            label: spec.label(),
            init_id: spec.init_id,
            sequence_kind: spec.sequence_kind,
            b_pulse_transition: spec.b_pulse_transition,
            readout_delay_s: spec.readout_delay_s,
        }
    }

    pub fn to_spec(&self, delays: Vec<f64>) -> MeasurementSpec {
        MeasurementSpec {
            init_id: self.init_id,
            sequence_kind: self.sequence_kind,
            b_pulse_transition: self.b_pulse_transition,
            delay_grid_s: delays,
            readout_delay_s: self.readout_delay_s,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveEntry {
    pub label: String,
    pub csv: String,
    pub sidecar: String,
}

/// Parameters the data were generated with. A fit never reads this block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub kinetics: KineticsDoc,
    pub pump_scale: f64,
    pub noise_sigma: f64,
    pub readout_delay_s: f64,
    pub delay_grid_s: Vec<f64>,
}

/// Index of a curve directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
    /// Laser and readout timing of the measurement.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<SequenceTiming>,
    pub curves: Vec<CurveEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationRecord>,
}

pub fn resolve_delays(ctx: &Context, kp: &KineticParams) -> CliResult<Vec<f64>> {
    let plan = &ctx.cfg.config.plan;
    match (&plan.delays_s, &plan.delay_grid) {
        (Some(_), Some(_)) => Err(CliError::config("plan: give either delays_s or delay_grid, not both")),
        (Some(d), None) => {
            if d.is_empty() || d.windows(2).any(|w| !(w[1] > w[0])) || d.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(CliError::config("plan.delays_s must be non-empty, finite, >= 0 and increasing"));
            }
            Ok(d.clone())
        }
        (None, Some(g)) => Ok(log_delay_grid(g.start_s, g.stop_s, g.per_decade)?),
        (None, None) => Ok(default_delay_grid(kp)?),
    }
}

pub fn resolve_timing(ctx: &Context, op: &OpticalParams) -> CliResult<SequenceTiming> {
    let t = match ctx.cfg.config.plan.timing {
        Some(t) => t,
        None => SequenceTiming::default_for(op)?,
    };
    if !(t.pump_duration_s >= 0.0 && t.readout_window_s > 0.0) || !t.pump_duration_s.is_finite() || !t.readout_window_s.is_finite() {
        return Err(CliError::config("plan.timing: pump_duration_s must be >= 0 and readout_window_s > 0"));
    }
    Ok(t)
}

pub fn run(ctx: &Context) -> CliResult<CommandOutput> {
    let kdoc = ctx.cfg.kinetics()?;
    let (kp, op) = kdoc.resolve()?;
    let plan = &ctx.cfg.config.plan;
    if !(plan.noise_sigma >= 0.0) || !plan.noise_sigma.is_finite() {
        return Err(CliError::config("plan.noise_sigma must be >= 0"));
    }
    if !(plan.pump_scale > 0.0) || !plan.pump_scale.is_finite() {
        return Err(CliError::config("plan.pump_scale must be positive"));
    }
    let delays = resolve_delays(ctx, &kp)?;
    let readout_delay = plan.readout_delay_s.unwrap_or(DEFAULT_READOUT_DELAY_S);
    let timing = resolve_timing(ctx, &op)?;
    let specs = generate_plan(&delays, readout_delay)?;

    let params = FitParameterSet {
        kinetic: kp,
        pump_scale: plan.pump_scale,
        per_curve_amplitude: None,
    };
    let fctx = FitContext { optical: op, timing };
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let curves = synthesize(&params, &specs, &fctx, plan.noise_sigma, &mut rng)?;

    let mut prov = ctx.provenance("simulate");
    prov.preset(kdoc.preset.as_deref());
    prov.option("timing", &timing)?;
    prov.option("readout_delay_s", &readout_delay)?;
    prov.option("pump_scale", &plan.pump_scale)?;
    prov.option("noise_sigma", &plan.noise_sigma)?;
    prov.option("n_delays", &delays.len())?;

    let mut out = CommandOutput::default();
    let mut entries = Vec::with_capacity(curves.len());
    for c in &curves {
        let label = c.label();
        let csv = format!("curves/{label}.csv");
        let sidecar = format!("curves/{label}.json");
        out.files.add(&csv, curve_csv(c)?);
        out.files.add_json(&sidecar, &CurveSidecar::from_spec(c.spec()))?;
        entries.push(CurveEntry { label, csv, sidecar });
    }
    let doc = PlanDoc {
        provenance: Some(serde_json::to_value(&prov)?),
        timing: Some(timing),
        curves: entries,
        simulation: Some(SimulationRecord {
            kinetics: KineticsDoc::from_params(&kp, &op),
            pump_scale: plan.pump_scale,
            noise_sigma: plan.noise_sigma,
            readout_delay_s: readout_delay,
            delay_grid_s: delays,
        }),
    };
    out.files.add_json("plan.json", &doc)?;

    let mut plot = Plot::new("Sequence A recovery", "delay (s)", "normalized PL").log_x();
    for c in curves.iter().filter(|c| c.spec().sequence_kind == SequenceKind::A) {
        plot.add(&c.label(), c.delays(), c.signal(), Style::Line);
    }
    out.files.add("curves_A.svg", plot.render().into_bytes());
    let mut plot = Plot::new("Sequence B", "delay (s)", "normalized PL").log_x();
    for c in curves.iter().filter(|c| c.spec().sequence_kind == SequenceKind::B) {
        plot.add(&c.label(), c.delays(), c.signal(), Style::Line);
    }
    out.files.add("curves_B.svg", plot.render().into_bytes());
    Ok(out)
}

fn curve_csv(c: &MeasurementCurve) -> CliResult<Vec<u8>> {
    match c.sigma() {
        Some(s) => csv_bytes(&["delay_s", "signal", "sigma"], &[c.delays(), c.signal(), s]),
        None => csv_bytes(&["delay_s", "signal"], &[c.delays(), c.signal()]),
    }
}
