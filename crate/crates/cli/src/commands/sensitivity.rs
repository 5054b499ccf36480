use std::fmt::Write;
use std::path::PathBuf;

use serde::Serialize;

use odmr_core::sensitivity::{compare, SensitivityComparison, SensitivityInputs};

use super::{CommandOutput, Context};
use crate::config::read_json;
use crate::error::{CliError, CliResult};
use crate::output::Provenance;

#[derive(Serialize)]
struct SensitivityDoc<'a> {
    provenance: Provenance,
    baseline_inputs: &'a SensitivityInputs,
    candidate_inputs: &'a SensitivityInputs,
    #[serde(flatten)]
    comparison: &'a SensitivityComparison,
}

fn report(cmp: &SensitivityComparison) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "eta_candidate / eta_baseline = {:.6}", cmp.ratio);
    if cmp.ratio < 1.0 {
        let _ = writeln!(s, "candidate is {:.4}x more sensitive", 1.0 / cmp.ratio);
    } else {
        let _ = writeln!(s, "candidate is {:.4}x less sensitive", cmp.ratio);
    }
    let _ = writeln!(s, "{:<12} {:>14} {:>14} {:>10}", "parameter", "baseline", "candidate", "factor");
    for c in &cmp.contributions {
        let _ = writeln!(
            s,
            "{:<12} {:>14.6e} {:>14.6e} {:>10.6}",
            c.parameter, c.baseline, c.candidate, c.factor
        );
    }
    if cmp.overhead_degenerate {
        let _ = writeln!(s, "note: both overheads are zero; the overhead factor is taken as 1");
    }
    s
}

pub fn run(ctx: &Context, baseline: Option<&PathBuf>, candidate: Option<&PathBuf>) -> CliResult<CommandOutput> {
    let paths = &ctx.cfg.config.paths;
    let a_path = ctx
        .path(baseline, paths.baseline.as_ref())
        .ok_or_else(|| CliError::config("no baseline inputs: pass BASELINE or set paths.baseline"))?;
    let b_path = ctx
        .path(candidate, paths.candidate.as_ref())
        .ok_or_else(|| CliError::config("no candidate inputs: pass CANDIDATE or set paths.candidate"))?;
    let (a, a_bytes) = read_json::<SensitivityInputs>(&a_path, ctx.strictness)?;
    let (b, b_bytes) = read_json::<SensitivityInputs>(&b_path, ctx.strictness)?;
    if a.coherence != b.coherence {
        log::warn!("comparing an AC (echo T2) figure with a DC (T2*) figure");
    }
    let cmp = compare(&a, &b)?;

    let mut prov = ctx.provenance("sensitivity");
    prov.input(&a_path, &a_bytes);
    prov.input(&b_path, &b_bytes);
    let mut out = CommandOutput::default();
    out.files.add_json(
        "sensitivity.json",
        &SensitivityDoc {
            provenance: prov,
            baseline_inputs: &a,
            candidate_inputs: &b,
            comparison: &cmp,
        },
    )?;
    out.stdout = Some(report(&cmp));
    Ok(out)
}
