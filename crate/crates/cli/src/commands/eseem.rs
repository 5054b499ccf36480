use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use odmr_core::echo::{analyze, quadrupole_lines, EchoTrace, EseemOptions, EseemResult, PredictedLine, TimeAxis};
use odmr_core::spin::DiagonalTensor;

use super::{CommandOutput, Context};
use crate::config::{read_file, read_json};
use crate::error::{CliError, CliResult};
use crate::output::{csv_bytes, parse_csv, Provenance};
use crate::svg::{Plot, Style};

/// Sidecar next to a trace CSV, e.g. `echo.csv` + `echo.json`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TraceSidecar {
    pub time_axis: TimeAxis,
}

#[derive(Serialize)]
struct EseemDoc<'a> {
    provenance: Provenance,
    time_axis: TimeAxis,
    predicted_lines: &'a [PredictedLine],
    #[serde(flatten)]
    result: &'a EseemResult,
}

pub fn run(ctx: &Context, trace_flag: Option<&PathBuf>) -> CliResult<CommandOutput> {
    let cfg = &ctx.cfg.config;
    let path = ctx
        .path(trace_flag, cfg.paths.trace.as_ref())
        .ok_or_else(|| CliError::config("no echo trace: pass --trace or set paths.trace"))?;
    let bytes = read_file(&path)?;
    let what = path.display().to_string();
    let table = parse_csv(&bytes, &what)?;
    let times_us = table.require("time_us", &what)?;
    let amplitude = table.require("amplitude", &what)?.to_vec();

    let side_path = path.with_extension("json");
    let axis = if side_path.is_file() {
        read_json::<TraceSidecar>(&side_path, ctx.strictness)?.0.time_axis
    } else {
        cfg.eseem.time_axis.ok_or_else(|| {
            CliError::config(format!(
                "{}: the time axis must be declared in {} or eseem.time_axis (\"tau\" or \"total_time\")",
                what,
                side_path.display()
            ))
        })?
    };
    let times_s: Vec<f64> = times_us.iter().map(|t| t * 1e-6).collect();
    let trace = EchoTrace::from_axis(times_s, amplitude, axis)?;

    let q = match (cfg.eseem.q_mhz, &cfg.spin_system) {
        (Some(q), _) => Some(q),
        (None, Some(s)) => s.nuclei.first().map(|n| n.q_mhz),
        (None, None) => None,
    };
    let predicted = match q {
        Some(q) => quadrupole_lines(&DiagonalTensor::from_array(q)),
        None => {
            log::warn!("no quadrupole tensor configured; peaks are left unassigned");
            Vec::new()
        }
    };
    let opts = EseemOptions {
        envelope: cfg.eseem.envelope,
        fft: cfg.eseem.fft,
        peaks: cfg.eseem.peaks,
    };
    let result = analyze(&trace, &predicted, &opts)?;

    let mut prov = ctx.provenance("eseem");
    prov.input(&path, &bytes);
    prov.option("eseem", &opts)?;

    let tau_us: Vec<f64> = trace.tau().iter().map(|t| t * 1e6).collect();
    let env: Vec<f64> = trace.tau().iter().map(|&t| result.envelope.eval(t)).collect();
    let f_mhz: Vec<f64> = result.frequencies.iter().map(|f| f * 1e-6).collect();

    let mut out = CommandOutput::default();
    out.files.add(
        "eseem_trace.csv",
        csv_bytes(
            &["tau_us", "amplitude", "envelope", "residual"],
            &[&tau_us, trace.amplitude(), &env, &result.residual],
        )?,
    );
    out.files.add(
        "eseem_spectrum.csv",
        csv_bytes(&["frequency_MHz", "magnitude"], &[&f_mhz, &result.spectrum])?,
    );
    out.files.add_json(
        "eseem.json",
        &EseemDoc {
            provenance: prov,
            time_axis: axis,
            predicted_lines: &predicted,
            result: &result,
        },
    )?;

    let mut plot = Plot::new(
        &format!("Hahn echo, T2 = {:.3} us", result.t2 * 1e6),
        "tau (us)",
        "echo amplitude",
    );
    plot.add("data", &tau_us, trace.amplitude(), Style::Points);
    plot.add("envelope", &tau_us, &env, Style::Line);
    out.files.add("eseem_trace.svg", plot.render().into_bytes());

    let mut plot = Plot::new("Modulation spectrum", "frequency (MHz)", "magnitude");
    plot.add("FFT", &f_mhz, &result.spectrum, Style::Line);
    let pf: Vec<f64> = result.peaks.iter().map(|p| p.frequency_hz * 1e-6).collect();
    let pm: Vec<f64> = result.peaks.iter().map(|p| p.magnitude).collect();
    plot.add("peaks", &pf, &pm, Style::Sticks);
    out.files.add("eseem_spectrum.svg", plot.render().into_bytes());
    Ok(out)
}
