use std::path::{Path, PathBuf};

use serde::Serialize;

use odmr_core::fit::{self, model_curves, FitContext, FitOptions, FitParameterSet, FitResult, MeasurementCurve};
use odmr_core::kinetics::presets::KineticsDoc;
use odmr_core::pulse::{SequenceKind, SequenceTiming};

use super::simulate::{CurveEntry, CurveSidecar, PlanDoc};
use super::{CommandOutput, Context};
use crate::config::{read_file, read_json};
use crate::error::{CliError, CliResult};
use crate::output::{csv_bytes, parse_csv, Provenance};
use crate::svg::{Plot, Style};

#[derive(Serialize)]
struct FitDoc<'a> {
    provenance: Provenance,
    curves_used: Vec<String>,
    n_points: usize,
    initial: KineticsDoc,
    best_fit_kinetics: KineticsDoc,
    #[serde(flatten)]
    result: &'a FitResult,
}

/// Which curves to fit: `all`, `A`, `B` or a comma-separated list of labels.
fn select<'a>(entries: &'a [CurveEntry], subset: &str) -> CliResult<Vec<&'a CurveEntry>> {
    let chosen: Vec<&CurveEntry> = match subset.trim() {
        "" | "all" => entries.iter().collect(),
        "A" => entries.iter().filter(|e| e.label.starts_with("A-")).collect(),
        "B" => entries.iter().filter(|e| e.label.starts_with("B-")).collect(),
        list => {
            let mut v = Vec::new();
            for name in list.split(',').map(str::trim) {
                match entries.iter().find(|e| e.label == name) {
                    Some(e) => v.push(e),
                    None => return Err(CliError::config(format!("curve '{name}' is not listed in plan.json"))),
                }
            }
            v
        }
    };
    if chosen.is_empty() {
        return Err(CliError::config(format!("curve subset '{subset}' selects no curves")));
    }
    Ok(chosen)
}

fn load_curves(ctx: &Context, dir: &Path, entries: &[&CurveEntry], prov: &mut Provenance) -> CliResult<Vec<MeasurementCurve>> {
    let missing: Vec<String> = entries
        .iter()
        .flat_map(|e| [&e.csv, &e.sidecar])
        .filter(|f| !dir.join(f).is_file())
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(CliError::config(format!(
            "{}: missing curve files: {}",
            dir.display(),
            missing.join(", ")
        )));
    }
    let mut curves = Vec::with_capacity(entries.len());
    for e in entries {
        let csv_path = dir.join(&e.csv);
        let bytes = read_file(&csv_path)?;
        prov.input(&csv_path, &bytes);
        let what = csv_path.display().to_string();
        let table = parse_csv(&bytes, &what)?;
        let delays = table.require("delay_s", &what)?.to_vec();
        let signal = table.require("signal", &what)?.to_vec();
        let sigma = table.column("sigma").map(<[f64]>::to_vec);
        let (side, _) = read_json::<CurveSidecar>(&dir.join(&e.sidecar), ctx.strictness)?;
        let spec = side.to_spec(delays.clone());
        if spec.label() != e.label || side.label != e.label {
            return Err(CliError::config(format!(
                "{}: describes {} but plan.json lists it as {}",
                e.sidecar,
                spec.label(),
                e.label
            )));
        }
        curves.push(MeasurementCurve::new(spec, delays, signal, sigma)?);
    }
    Ok(curves)
}

pub fn run(ctx: &Context, curves_flag: Option<&PathBuf>, subset_flag: Option<&str>) -> CliResult<CommandOutput> {
    let cfg = &ctx.cfg.config;
    let dir = ctx
        .path(curves_flag, cfg.paths.curves.as_ref())
        .ok_or_else(|| CliError::config("no curve directory: pass --curves or set paths.curves"))?;
    let plan_path = dir.join("plan.json");
    if !plan_path.is_file() {
        return Err(CliError::config(format!("{}: missing curve index plan.json", dir.display())));
    }
    let (plan, plan_bytes) = read_json::<PlanDoc>(&plan_path, ctx.strictness)?;
    let subset = subset_flag
        .map(str::to_string)
        .or_else(|| cfg.fit.curves_subset.clone())
        .unwrap_or_else(|| "all".into());
    let entries = select(&plan.curves, &subset)?;

    let kdoc = ctx.cfg.kinetics()?;
    let (config_kp, optical) = kdoc.resolve()?;
    let initial_kp = match &cfg.fit.initial {
        Some(doc) => doc.resolve()?.0,
        None => config_kp,
    };
    let timing: SequenceTiming = match plan.timing.or(cfg.plan.timing) {
        Some(t) => t,
        None => SequenceTiming::default_for(&optical)?,
    };
    let opts = FitOptions {
        lm: cfg.fit.lm,
        n_starts: cfg.fit.n_starts,
        start_spread: cfg.fit.start_spread,
        seed: ctx.seed,
        fit_amplitudes: cfg.fit.fit_amplitudes,
    };
    if opts.n_starts == 0 || !(opts.start_spread >= 1.0) {
        return Err(CliError::config("fit: n_starts must be >= 1 and start_spread >= 1"));
    }
    if !(cfg.fit.initial_pump_scale > 0.0) || !cfg.fit.initial_pump_scale.is_finite() {
        return Err(CliError::config("fit.initial_pump_scale must be positive"));
    }

    let mut prov = ctx.provenance("fit");
    prov.preset(kdoc.preset.as_deref());
    prov.preset(cfg.fit.initial.as_ref().and_then(|d| d.preset.as_deref()));
    prov.input(&plan_path, &plan_bytes);
    let data = load_curves(ctx, &dir, &entries, &mut prov)?;

    let mut initial = FitParameterSet::new(initial_kp);
    initial.pump_scale = cfg.fit.initial_pump_scale;
    let fctx = FitContext { optical, timing };
    prov.option("fit", &opts)?;
    prov.option("timing", &timing)?;
    prov.option("curves_subset", &subset)?;

    let result = fit::fit(&data, &initial, &fctx, &opts)?;
    if !result.converged {
        log::warn!("fit stopped without converging ({:?})", result.stop_reason);
    }
    if result.rank_deficient {
        log::warn!("covariance is rank deficient; some parameters are not identifiable from these curves");
    }
    let models = model_curves(&result.best_fit, &data, &fctx)?;

    let mut out = CommandOutput::default();
    for (c, m) in data.iter().zip(&models) {
        let resid: Vec<f64> = c.signal().iter().zip(m).map(|(d, m)| d - m).collect();
        out.files.add(
            format!("residuals/{}.csv", c.label()),
            csv_bytes(&["delay_s", "data", "model", "residual"], &[c.delays(), c.signal(), m, &resid])?,
        );
    }
    let doc = FitDoc {
        provenance: prov,
        curves_used: data.iter().map(MeasurementCurve::label).collect(),
        n_points: data.iter().map(MeasurementCurve::len).sum(),
        initial: KineticsDoc::from_params(&initial.kinetic, &optical),
        best_fit_kinetics: KineticsDoc::from_params(&result.best_fit.kinetic, &optical),
        result: &result,
    };
    out.files.add_json("fit_result.json", &doc)?;

    let mut plot = Plot::new("Global fit", "delay (s)", "normalized PL").log_x();
    let shown: Vec<usize> = {
        let a: Vec<usize> = (0..data.len())
            .filter(|&i| data[i].spec().sequence_kind == SequenceKind::A)
            .collect();
        if a.is_empty() {
            (0..data.len().min(6)).collect()
        } else {
            a
        }
    };
    for &i in &shown {
        plot.add(&data[i].label(), data[i].delays(), data[i].signal(), Style::Points);
    }
    for &i in &shown {
        plot.add(&format!("{} fit", data[i].label()), data[i].delays(), &models[i], Style::Line);
    }
    out.files.add("fit.svg", plot.render().into_bytes());
    Ok(out)
}
