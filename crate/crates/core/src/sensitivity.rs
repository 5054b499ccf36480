//! Relative sensing sensitivity, `η ∝ √t_overhead / (C·√(n_avg·c_s)·T₂^χ)`.
//!
//! Only ratios are meaningful: there is no proportionality constant, and smaller values
//! mean better sensitivity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether `t2_chi` is a Hahn-echo T₂ (AC sensing) or a free-induction T₂* (DC sensing).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoherenceKind {
    #[default]
    Ac,
    Dc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityInputs {
    pub contrast: f64,
    /// Detected photons per spin per readout.
    pub n_avg: f64,
    /// Spin density, m⁻³.
    pub c_s: f64,
    pub t_overhead: f64,
    pub t2_chi: f64,
    #[serde(default)]
    pub coherence: CoherenceKind,
}

impl SensitivityInputs {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &str, v: f64, cond: &str| {
            Err(Error::invalid(format!("{name} must be {cond}, got {v}")))
        };
        if !(self.contrast > 0.0 && self.contrast <= 1.0) {
            return bad("contrast", self.contrast, "in (0, 1]");
        }
        if !(self.n_avg > 0.0) || !self.n_avg.is_finite() {
            return bad("n_avg", self.n_avg, "positive");
        }
        if !(self.c_s > 0.0) || !self.c_s.is_finite() {
            return bad("c_s", self.c_s, "positive");
        }
        if !(self.t_overhead >= 0.0) || !self.t_overhead.is_finite() {
            return bad("t_overhead", self.t_overhead, "non-negative");
        }
        if !(self.t2_chi > 0.0) || !self.t2_chi.is_finite() {
            return bad("t2_chi", self.t2_chi, "positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityFigure {
    pub value: f64,
    /// Set when `t_overhead = 0`: the scaling law degenerates to zero in that limit.
    pub overhead_free: bool,
}

pub fn relative_sensitivity(inp: &SensitivityInputs) -> Result<SensitivityFigure> {
    inp.validate()?;
    let value = inp.t_overhead.sqrt() / (inp.contrast * (inp.n_avg * inp.c_s).sqrt() * inp.t2_chi);
    Ok(SensitivityFigure {
        value,
        overhead_free: inp.t_overhead == 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub parameter: String,
    pub baseline: f64,
    pub candidate: f64,
    /// Factor this parameter alone contributes to `candidate / baseline`.
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityComparison {
    pub baseline: SensitivityFigure,
    pub candidate: SensitivityFigure,
    /// `η_candidate / η_baseline`; below one means the candidate is more sensitive.
    pub ratio: f64,
    pub contributions: Vec<Contribution>,
    /// Both overheads are zero; the overhead factor is taken as one.
    pub overhead_degenerate: bool,
}

/// Ratio of two figures as the product of per-parameter factors, so the ratio stays
/// defined when both overheads vanish.
pub fn compare(baseline: &SensitivityInputs, candidate: &SensitivityInputs) -> Result<SensitivityComparison> {
    let fa = relative_sensitivity(baseline)?;
    let fb = relative_sensitivity(candidate)?;
    let (a, b) = (baseline, candidate);
    let both_zero = a.t_overhead == 0.0 && b.t_overhead == 0.0;
    let overhead = if both_zero {
        1.0
    } else {
        (b.t_overhead / a.t_overhead).sqrt()
    };
    let entry = |name: &str, va: f64, vb: f64, factor: f64| Contribution {
        parameter: name.to_string(),
        baseline: va,
        candidate: vb,
        factor,
    };
    let contributions = vec![
        entry("contrast", a.contrast, b.contrast, a.contrast / b.contrast),
        entry("n_avg", a.n_avg, b.n_avg, (a.n_avg / b.n_avg).sqrt()),
        entry("c_s", a.c_s, b.c_s, (a.c_s / b.c_s).sqrt()),
        entry("t_overhead", a.t_overhead, b.t_overhead, overhead),
        entry("t2_chi", a.t2_chi, b.t2_chi, a.t2_chi / b.t2_chi),
    ];
    let ratio = contributions.iter().map(|c| c.factor).product();
    Ok(SensitivityComparison {
        baseline: fa,
        candidate: fb,
        ratio,
        contributions,
        overhead_degenerate: both_zero,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn base() -> SensitivityInputs {
        SensitivityInputs {
            contrast: 0.18,
            n_avg: 0.02,
            c_s: 1e24,
            t_overhead: 10e-6,
            t2_chi: 1.71e-6,
            coherence: CoherenceKind::Ac,
        }
    }

    fn eta(i: &SensitivityInputs) -> f64 {
        relative_sensitivity(i).unwrap().value
    }

    #[test]
    fn doubling_contrast_halves_figure() {
        let b = SensitivityInputs { contrast: 0.36, ..base() };
        assert!((eta(&b) / eta(&base()) - 0.5).abs() < 1e-12);
        assert!((compare(&base(), &b).unwrap().ratio - 0.5).abs() < 1e-12);
    }

    #[test]
    fn quadrupling_photons_halves_figure() {
        let b = SensitivityInputs { n_avg: 0.08, ..base() };
        assert!((eta(&b) / eta(&base()) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn pc_to_dap_contrast() {
        let b = SensitivityInputs { contrast: 0.40, ..base() };
        let cmp = compare(&base(), &b).unwrap();
        assert!((1.0 / cmp.ratio - 0.40 / 0.18).abs() < 1e-12);
        assert!((1.0 / cmp.ratio - 2.22).abs() < 0.005);
        assert!((cmp.ratio - eta(&b) / eta(&base())).abs() < 1e-12);
    }

    #[test]
    fn zero_overhead_is_flagged() {
        let z = SensitivityInputs { t_overhead: 0.0, ..base() };
        let f = relative_sensitivity(&z).unwrap();
        assert_eq!(f.value, 0.0);
        assert!(f.overhead_free);
        let z2 = SensitivityInputs { contrast: 0.36, ..z };
        let cmp = compare(&z, &z2).unwrap();
        assert!(cmp.overhead_degenerate);
        assert!((cmp.ratio - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_invalid_inputs() {
        for bad in [
            SensitivityInputs { contrast: 0.0, ..base() },
            SensitivityInputs { contrast: 1.2, ..base() },
            SensitivityInputs { n_avg: -1.0, ..base() },
            SensitivityInputs { c_s: 0.0, ..base() },
            SensitivityInputs { t_overhead: -1e-6, ..base() },
            SensitivityInputs { t2_chi: f64::NAN, ..base() },
        ] {
            assert!(relative_sensitivity(&bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn json_round_trip() {
        let s = serde_json::to_string(&base()).unwrap();
        let back: SensitivityInputs = serde_json::from_str(&s).unwrap();
        assert_eq!(back, base());
        let dc: SensitivityInputs = serde_json::from_str(
            r#"{"contrast":0.4,"n_avg":1,"c_s":1e24,"t_overhead":1e-6,"t2_chi":1e-7,"coherence":"dc"}"#,
        )
        .unwrap();
        assert_eq!(dc.coherence, CoherenceKind::Dc);
    }

    fn inputs() -> impl Strategy<Value = SensitivityInputs> {
        (0.01f64..1.0, 1e-3f64..10.0, 1e20f64..1e26, 1e-7f64..1e-3, 1e-7f64..1e-4).prop_map(
            |(contrast, n_avg, c_s, t_overhead, t2_chi)| SensitivityInputs {
                contrast,
                n_avg,
                c_s,
                t_overhead,
                t2_chi,
                coherence: CoherenceKind::Ac,
            },
        )
    }

    proptest! {
        #[test]
        fn spin_density_homogeneity(i in inputs(), alpha in 0.01f64..100.0) {
            let j = SensitivityInputs { c_s: i.c_s * alpha, ..i };
            prop_assert!((eta(&j) / eta(&i) - alpha.powf(-0.5)).abs() < 1e-12);
        }

        #[test]
        fn monotone_in_every_parameter(i in inputs(), up in 1.001f64..10.0) {
            let e = eta(&i);
            let with = |f: &dyn Fn(&mut SensitivityInputs)| {
                let mut j = i;
                f(&mut j);
                eta(&j)
            };
            if i.contrast * up <= 1.0 {
                prop_assert!(with(&|j| j.contrast *= up) < e);
            }
            prop_assert!(with(&|j| j.n_avg *= up) < e);
            prop_assert!(with(&|j| j.c_s *= up) < e);
            prop_assert!(with(&|j| j.t2_chi *= up) < e);
            prop_assert!(with(&|j| j.t_overhead *= up) > e);
        }

        #[test]
        fn ratio_is_unit_independent(a in inputs(), b in inputs(), ts in 1e-3f64..1e3, ds in 1e-6f64..1e6) {
            // rescale the time unit and the density unit for both inputs
            let conv = |x: &SensitivityInputs| SensitivityInputs {
                t_overhead: x.t_overhead * ts,
                t2_chi: x.t2_chi * ts,
                c_s: x.c_s * ds,
                ..*x
            };
            let r1 = compare(&a, &b).unwrap().ratio;
            let r2 = compare(&conv(&a), &conv(&b)).unwrap().ratio;
            prop_assert!((r2 / r1 - 1.0).abs() < 1e-12);
            prop_assert!((r1 / (eta(&b) / eta(&a)) - 1.0).abs() < 1e-12);
        }
    }
}
