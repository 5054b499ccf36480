use serde::Serialize;

use odmr_core::spin::{
    broaden_spectrum, multiplet_centroid, stick_spectrum, zero_field_transitions_analytic, LineOptions,
    SpectrumConfig, SpinSystem, SpinSystemDoc,
};

use super::{CommandOutput, Context};
use crate::error::{CliError, CliResult};
use crate::output::{csv_bytes, Provenance};
use crate::svg::{Plot, Style};

const MAX_POINTS: usize = 200_001;

#[derive(Serialize)]
struct Line {
    #[serde(rename = "frequency_MHz")]
    frequency_mhz: f64,
    intensity: f64,
    lower_index: usize,
    upper_index: usize,
    transition: Option<&'static str>,
}

#[derive(Serialize)]
struct Multiplet {
    transition: &'static str,
    #[serde(rename = "nucleus_free_MHz")]
    nucleus_free_mhz: f64,
    #[serde(rename = "centroid_MHz")]
    centroid_mhz: Option<f64>,
}

#[derive(Serialize)]
struct LinesDoc<'a> {
    provenance: Provenance,
    spin_system: &'a SpinSystemDoc,
    total_intensity: f64,
    multiplets: Vec<Multiplet>,
    warnings: Vec<String>,
    lines: Vec<Line>,
}

/// Fills in the grid when the config leaves it open: ten linewidths of padding and
/// eight points per linewidth.
fn resolve_grid(ctx: &Context, lines: &[f64]) -> CliResult<SpectrumConfig> {
    let s = &ctx.cfg.config.spectrum;
    if !(s.fwhm_mhz > 0.0) || !s.fwhm_mhz.is_finite() {
        return Err(CliError::config(format!("spectrum.fwhm_mhz must be positive, got {}", s.fwhm_mhz)));
    }
    let lo = lines.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = lines.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let f_min = s.f_min_mhz.unwrap_or((lo - 10.0 * s.fwhm_mhz).max(0.0));
    let f_max = s.f_max_mhz.unwrap_or(hi + 10.0 * s.fwhm_mhz);
    let n_points = match s.n_points {
        Some(n) => n,
        None => {
            let n = ((f_max - f_min) / (s.fwhm_mhz / 8.0)).ceil() as usize + 1;
            if n > MAX_POINTS {
                log::warn!("spectrum grid capped at {MAX_POINTS} points");
            }
            n.min(MAX_POINTS)
        }
    };
    let cfg = SpectrumConfig {
        line_shape: s.line_shape,
        fwhm_mhz: s.fwhm_mhz,
        f_min_mhz: f_min,
        f_max_mhz: f_max,
        n_points,
        transition_weights: s.transition_weights,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(ctx: &Context) -> CliResult<CommandOutput> {
    let doc = ctx.cfg.spin_system()?;
    let system = SpinSystem::try_from(doc)?;
    let mut warnings = Vec::new();
    for (i, n) in system.nuclei().iter().enumerate() {
        if let Some(w) = n.quadrupole.quadrupole_trace_warning() {
            log::warn!("nucleus {i}: {w}");
            warnings.push(format!("nucleus {i}: {w}"));
        }
    }
    let line_opts = LineOptions {
        prune_relative: ctx.cfg.config.spectrum.prune_relative,
        ..LineOptions::default()
    };
    let lines = stick_spectrum(&system, &line_opts)?;
    if lines.is_empty() {
        return Err(CliError::Numerical("no transitions survived pruning".into()));
    }
    let freqs: Vec<f64> = lines.iter().map(|l| l.frequency).collect();
    let grid = resolve_grid(ctx, &freqs)?;
    let spectrum = broaden_spectrum(&lines, &grid)?;
    if spectrum.amplitude.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Numerical("non-finite spectrum amplitude".into()));
    }

    // centroid window: half the smallest spacing of the nucleus-free lines
    let bare = zero_field_transitions_analytic(system.zfs());
    let bare_f: Vec<f64> = bare.iter().map(|l| l.frequency).collect();
    let mut min_sep = f64::INFINITY;
    for i in 0..3 {
        for j in i + 1..3 {
            min_sep = min_sep.min((bare_f[i] - bare_f[j]).abs());
        }
    }
    let half_width = if min_sep.is_finite() && min_sep > 0.0 { 0.5 * min_sep } else { 1.0 };
    let multiplets = bare
        .iter()
        .map(|l| Multiplet {
            transition: l.pair.map_or("?", |p| p.label()),
            nucleus_free_mhz: l.frequency,
            centroid_mhz: multiplet_centroid(&lines, l.frequency, half_width),
        })
        .collect();

    let mut prov = ctx.provenance("spectrum");
    prov.option("spectrum", &grid)?;
    prov.option("line_options", &line_opts)?;
    let doc_out = LinesDoc {
        provenance: prov,
        spin_system: doc,
        total_intensity: lines.iter().map(|l| l.intensity).sum(),
        multiplets,
        warnings,
        lines: lines
            .iter()
            .map(|l| Line {
                frequency_mhz: l.frequency,
                intensity: l.intensity,
                lower_index: l.lower_index,
                upper_index: l.upper_index,
                transition: l.pair.map(|p| p.label()),
            })
            .collect(),
    };

    let mut out = CommandOutput::default();
    out.files.add(
        "spectrum.csv",
        csv_bytes(&["frequency_MHz", "amplitude"], &[&spectrum.frequency_mhz, &spectrum.amplitude])?,
    );
    out.files.add_json("lines.json", &doc_out)?;

    let peak = spectrum.amplitude.iter().cloned().fold(0.0, f64::max);
    let imax = lines.iter().map(|l| l.intensity).fold(0.0, f64::max);
    let sticks: Vec<f64> = lines.iter().map(|l| l.intensity / imax * peak).collect();
    let mut plot = Plot::new("Zero-field ODMR spectrum", "frequency (MHz)", "amplitude");
    plot.add("broadened", &spectrum.frequency_mhz, &spectrum.amplitude, Style::Line);
    plot.add("sticks (scaled)", &freqs, &sticks, Style::Sticks);
    out.files.add("spectrum.svg", plot.render().into_bytes());
    Ok(out)
}
