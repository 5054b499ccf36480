//! Global fit of the triplet kinetic parameters to a set of relaxation curves.
//!
//! The optimizer works in unconstrained coordinates: logarithms of the six rates,
//! two softmax logits for the branching fractions (with `P_z` as reference), the
//! logarithm of the shared pump scale and, optionally, logarithms of per-curve
//! amplitudes. Covariances are estimated in those coordinates and mapped to physical
//! parameters with the delta method.

pub mod covariance;
pub mod lm;

pub use covariance::{covariance_from_jacobian, CovarianceEstimate};
pub use lm::{minimize, LeastSquaresProblem, LmOptions, LmReport, StopReason};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinetics::{KineticParams, OpticalParams, PARAM_NAMES};
use crate::pulse::{MeasurementSpec, SequenceTiming, Simulator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementCurve {
    spec: MeasurementSpec,
    delays_s: Vec<f64>,
    signal: Vec<f64>,
    sigma: Option<Vec<f64>>,
}

impl MeasurementCurve {
    /// The measurement's delay grid is replaced by `delays_s`.
    pub fn new(
        mut spec: MeasurementSpec,
        delays_s: Vec<f64>,
        signal: Vec<f64>,
        sigma: Option<Vec<f64>>,
    ) -> Result<Self> {
        let label = spec.label();
        if delays_s.len() != signal.len() {
            return Err(Error::InvalidData(format!(
                "{label}: {} delays but {} signal values",
                delays_s.len(),
                signal.len()
            )));
        }
        if delays_s.is_empty() {
            return Err(Error::InvalidData(format!("{label}: empty curve")));
        }
        if delays_s.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidData(format!("{label}: delays must be strictly increasing")));
        }
        if delays_s.iter().chain(&signal).any(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("{label}: non-finite values")));
        }
        if let Some(s) = &sigma {
            if s.len() != signal.len() {
                return Err(Error::InvalidData(format!("{label}: sigma length mismatch")));
            }
            if s.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(Error::InvalidData(format!("{label}: sigma must be positive")));
            }
        }
        spec.delay_grid_s = delays_s.clone();
        spec.validate()?;
        Ok(Self {
            spec,
            delays_s,
            signal,
            sigma,
        })
    }

    pub fn spec(&self) -> &MeasurementSpec {
        &self.spec
    }

    pub fn delays(&self) -> &[f64] {
        &self.delays_s
    }

    pub fn signal(&self) -> &[f64] {
        &self.signal
    }

    pub fn sigma(&self) -> Option<&[f64]> {
        self.sigma.as_deref()
    }

    pub fn len(&self) -> usize {
        self.signal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signal.is_empty()
    }

    pub fn label(&self) -> String {
        self.spec.label()
    }
}

/// Fixed experimental context shared by all curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitContext {
    pub optical: OpticalParams,
    pub timing: SequenceTiming,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitParameterSet {
    pub kinetic: KineticParams,
    pub pump_scale: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_curve_amplitude: Option<Vec<f64>>,
}

impl FitParameterSet {
    pub fn new(kinetic: KineticParams) -> Self {
        Self {
            kinetic,
            pump_scale: 1.0,
            per_curve_amplitude: None,
        }
    }

    fn amplitude(&self, curve: usize) -> f64 {
        self.per_curve_amplitude
            .as_ref()
            .map_or(1.0, |a| a[curve])
    }
}

/// Maps between physical parameters and the optimizer's unconstrained coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Parameterization {
    pub n_curves: usize,
    pub fit_amplitudes: bool,
}

const N_CORE: usize = 9;

impl Parameterization {
    pub fn n_free(&self) -> usize {
        N_CORE + if self.fit_amplitudes { self.n_curves } else { 0 }
    }

    pub fn internal_names(&self) -> Vec<String> {
        let mut names: Vec<String> = ["ln_k_x", "ln_k_y", "ln_k_z", "ln_w_xy", "ln_w_xz", "ln_w_yz", "u_x", "u_y", "ln_pump_scale"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        if self.fit_amplitudes {
            names.extend((0..self.n_curves).map(|c| format!("ln_amplitude_{c}")));
        }
        names
    }

    pub fn physical_names(&self) -> Vec<String> {
        let mut names: Vec<String> = PARAM_NAMES.iter().map(|s| s.to_string()).collect();
        names.push("pump_scale".into());
        if self.fit_amplitudes {
            names.extend((0..self.n_curves).map(|c| format!("amplitude_{c}")));
        }
        names
    }

    pub fn to_internal(&self, p: &FitParameterSet) -> Result<DVector<f64>> {
        let kp = &p.kinetic;
        let rates = kp.k().into_iter().chain(kp.w());
        if rates.clone().any(|r| !(r > 0.0)) {
            return Err(Error::Fit("all rates must be strictly positive to be fitted".into()));
        }
        let pr = kp.p();
        if pr.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Fit("branching fractions must be strictly positive to be fitted".into()));
        }
        if !(p.pump_scale > 0.0) {
            return Err(Error::Fit("pump scale must be positive".into()));
        }
        let mut x: Vec<f64> = rates.map(f64::ln).collect();
        x.push((pr[0] / pr[2]).ln());
        x.push((pr[1] / pr[2]).ln());
        x.push(p.pump_scale.ln());
        if self.fit_amplitudes {
            for c in 0..self.n_curves {
                let a = p.amplitude(c);
                if !(a > 0.0) {
                    return Err(Error::Fit("curve amplitudes must be positive".into()));
                }
                x.push(a.ln());
            }
        }
        Ok(DVector::from_vec(x))
    }

    pub fn from_internal(&self, x: &DVector<f64>) -> Result<FitParameterSet> {
        let e = |i: usize| x[i].exp();
        let (ux, uy) = (x[6], x[7]);
        let m = ux.max(uy).max(0.0);
        let ex = [(ux - m).exp(), (uy - m).exp(), (-m).exp()];
        let kinetic = KineticParams::new([e(0), e(1), e(2)], [e(3), e(4), e(5)], ex)?;
        let amps = self
            .fit_amplitudes
            .then(|| (0..self.n_curves).map(|c| e(N_CORE + c)).collect());
        Ok(FitParameterSet {
            kinetic,
            pump_scale: e(8),
            per_curve_amplitude: amps,
        })
    }

    pub fn physical_vector(&self, p: &FitParameterSet) -> Vec<f64> {
        let mut v = p.kinetic.to_array().to_vec();
        v.push(p.pump_scale);
        if self.fit_amplitudes {
            v.extend((0..self.n_curves).map(|c| p.amplitude(c)));
        }
        v
    }

    /// d(physical) / d(internal) at `p`.
    pub fn transform_jacobian(&self, p: &FitParameterSet) -> DMatrix<f64> {
        let phys = self.physical_vector(p);
        let n_int = self.n_free();
        let n_phys = phys.len();
        let mut g = DMatrix::<f64>::zeros(n_phys, n_int);
        for i in 0..6 {
            g[(i, i)] = phys[i];
        }
        let pr = p.kinetic.p();
        for (i, &pi) in pr.iter().enumerate() {
            for j in 0..2 {
                let delta = if i == j { 1.0 } else { 0.0 };
                g[(6 + i, 6 + j)] = pi * (delta - pr[j]);
            }
        }
        g[(9, 8)] = p.pump_scale;
        if self.fit_amplitudes {
            for c in 0..self.n_curves {
                g[(10 + c, N_CORE + c)] = phys[10 + c];
            }
        }
        g
    }
}

/// Model signal of every curve for the given parameters.
pub fn model_curves(params: &FitParameterSet, data: &[MeasurementCurve], ctx: &FitContext) -> Result<Vec<Vec<f64>>> {
    if data.is_empty() {
        return Err(Error::InvalidData("no measurement curves".into()));
    }
    let sim = Simulator::with_pump_scale(&params.kinetic, &ctx.optical, &ctx.timing, params.pump_scale)?;
    let specs: Vec<MeasurementSpec> = data.iter().map(|c| c.spec.clone()).collect();
    let curves = sim.simulate_curves(&specs)?;
    Ok(curves
        .into_iter()
        .enumerate()
        .map(|(c, sc)| {
            let a = params.amplitude(c);
            sc.signal.into_iter().map(|v| a * v).collect()
        })
        .collect())
}

/// Concatenated `(model - data) / sigma` over all curves (sigma = 1 when absent).
pub fn residuals(params: &FitParameterSet, data: &[MeasurementCurve], ctx: &FitContext) -> Result<DVector<f64>> {
    let models = model_curves(params, data, ctx)?;
    let total: usize = data.iter().map(|c| c.len()).sum();
    let mut out = Vec::with_capacity(total);
    for (curve, model) in data.iter().zip(&models) {
        for (i, (m, y)) in model.iter().zip(&curve.signal).enumerate() {
            let s = curve.sigma.as_ref().map_or(1.0, |s| s[i]);
            out.push((m - y) / s);
        }
    }
    Ok(DVector::from_vec(out))
}

struct GlobalProblem<'a> {
    data: &'a [MeasurementCurve],
    ctx: &'a FitContext,
    layout: Parameterization,
}

impl LeastSquaresProblem for GlobalProblem<'_> {
    fn n_params(&self) -> usize {
        self.layout.n_free()
    }

    fn residuals(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        residuals(&self.layout.from_internal(x)?, self.data, self.ctx)
    }

    fn jacobian(&self, x: &DVector<f64>, step: f64) -> Result<DMatrix<f64>> {
        let j = lm::central_difference_jacobian(|p| self.residuals(p), x, step)?;
        check_jacobian(&j, self.data, &self.layout)?;
        Ok(j)
    }
}

fn check_jacobian(j: &DMatrix<f64>, data: &[MeasurementCurve], layout: &Parameterization) -> Result<()> {
    let names = layout.internal_names();
    for c in 0..j.ncols() {
        if let Some(row) = j.column(c).iter().position(|v| !v.is_finite()) {
            let mut offset = 0;
            let curve = data
                .iter()
                .find(|d| {
                    offset += d.len();
                    row < offset
                })
                .map_or_else(|| "?".to_string(), |d| d.label());
            return Err(Error::Fit(format!(
                "non-finite Jacobian entry for parameter {} in curve {curve}",
                names[c]
            )));
        }
    }
    Ok(())
}

/// Central-difference Jacobian of [`residuals`] in the internal coordinates.
pub fn jacobian_fd(
    params: &FitParameterSet,
    data: &[MeasurementCurve],
    ctx: &FitContext,
    rel_step: f64,
) -> Result<DMatrix<f64>> {
    if !(rel_step > 0.0 && rel_step <= 0.1) {
        return Err(Error::invalid(format!("rel_step must lie in (0, 0.1], got {rel_step}")));
    }
    let layout = Parameterization {
        n_curves: data.len(),
        fit_amplitudes: params.per_curve_amplitude.is_some(),
    };
    let problem = GlobalProblem { data, ctx, layout };
    problem.jacobian(&layout.to_internal(params)?, rel_step)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub lm: LmOptions,
    /// Number of starting points; the first is the supplied initial guess.
    pub n_starts: usize,
    /// Additional starts multiply each rate and the pump scale by a log-uniform factor
    /// in `[1/spread, spread]`.
    pub start_spread: f64,
    pub seed: u64,
    pub fit_amplitudes: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            lm: LmOptions::default(),
            n_starts: 8,
            start_spread: 3.0,
            seed: 0,
            fit_amplitudes: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParameterEstimate {
    pub name: String,
    pub value: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StartOutcome {
    pub chi2: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub best_fit: FitParameterSet,
    /// Covariance over the free (internal) parameters.
    pub covariance: DMatrix<f64>,
    pub internal_names: Vec<String>,
    /// Delta-method covariance of the physical parameters.
    pub physical_covariance: DMatrix<f64>,
    pub uncertainties: Vec<ParameterEstimate>,
    pub chi2: f64,
    pub dof: i64,
    pub per_curve_residuals: Vec<Vec<f64>>,
    pub converged: bool,
    pub n_iterations: usize,
    pub stop_reason: StopReason,
    pub condition_number: f64,
    pub rank_deficient: bool,
    pub starts: Vec<StartOutcome>,
    /// Other starts that reached the best chi2 to within 1e-9 relative.
    pub ties: usize,
}

impl FitResult {
    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.uncertainties.iter().find(|u| u.name == name).map(|u| u.std_error)
    }
}

fn start_points(initial: &DVector<f64>, opts: &FitOptions, layout: &Parameterization) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let spread = opts.start_spread.max(1.0).ln();
    let mut starts = vec![initial.clone()];
    for _ in 1..opts.n_starts.max(1) {
        let mut x = initial.clone();
        for i in 0..layout.n_free() {
            let jitter = match i {
                6 | 7 => rng.gen_range(-0.5..=0.5),
                _ => rng.gen_range(-spread..=spread),
            };
            x[i] += jitter;
        }
        starts.push(x);
    }
    starts
}

pub fn fit(data: &[MeasurementCurve], initial: &FitParameterSet, ctx: &FitContext, opts: &FitOptions) -> Result<FitResult> {
    if data.is_empty() {
        return Err(Error::InvalidData("no measurement curves".into()));
    }
    let layout = Parameterization {
        n_curves: data.len(),
        fit_amplitudes: opts.fit_amplitudes,
    };
    let n_points: usize = data.iter().map(|c| c.len()).sum();
    let dof = n_points as i64 - layout.n_free() as i64;
    if dof <= 0 {
        return Err(Error::Fit(format!(
            "{n_points} points cannot constrain {} parameters",
            layout.n_free()
        )));
    }
    let mut init = initial.clone();
    if opts.fit_amplitudes && init.per_curve_amplitude.is_none() {
        init.per_curve_amplitude = Some(vec![1.0; data.len()]);
    }
    let x0 = layout.to_internal(&init)?;
    let problem = GlobalProblem { data, ctx, layout };
    let r0 = problem.residuals(&x0)?;
    if r0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit("model is not finite at the initial point".into()));
    }

    let starts = start_points(&x0, opts, &layout);
    let reports: Vec<Result<LmReport>> = starts
        .par_iter()
        .map(|x| minimize(&problem, x, &opts.lm))
        .collect();
    // the supplied start must succeed; perturbed ones may wander into bad regions
    let mut outcomes = Vec::new();
    let mut best: Option<LmReport> = None;
    for (i, rep) in reports.into_iter().enumerate() {
        match rep {
            Ok(rep) => {
                outcomes.push(StartOutcome {
                    chi2: rep.cost,
                    converged: rep.converged,
                    iterations: rep.iterations,
                });
                if best.as_ref().map_or(true, |b| rep.cost < b.cost) {
                    best = Some(rep);
                }
            }
            Err(e) if i == 0 => return Err(e),
            Err(e) => {
                log::warn!("fit start {i} failed: {e}");
                outcomes.push(StartOutcome {
                    chi2: f64::INFINITY,
                    converged: false,
                    iterations: 0,
                });
            }
        }
    }
    let best = best.expect("first start succeeded");
    let ties = outcomes
        .iter()
        .filter(|o| (o.chi2 - best.cost).abs() <= 1e-9 * best.cost.max(f64::MIN_POSITIVE))
        .count()
        .saturating_sub(1);

    let params = layout.from_internal(&best.x)?;
    let cov = covariance_from_jacobian(&best.jacobian, best.cost, dof)?;
    let g = layout.transform_jacobian(&params);
    let phys_cov = &g * &cov.covariance * g.transpose();
    let phys = layout.physical_vector(&params);
    let uncertainties = layout
        .physical_names()
        .into_iter()
        .zip(phys)
        .enumerate()
        .map(|(i, (name, value))| ParameterEstimate {
            name,
            value,
            std_error: phys_cov[(i, i)].max(0.0).sqrt(),
        })
        .collect();

    let mut per_curve = Vec::with_capacity(data.len());
    let mut offset = 0;
    for c in data {
        per_curve.push(best.residuals.rows(offset, c.len()).iter().copied().collect());
        offset += c.len();
    }

    Ok(FitResult {
        best_fit: params,
        covariance: cov.covariance,
        internal_names: layout.internal_names(),
        physical_covariance: phys_cov,
        uncertainties,
        chi2: best.cost,
        dof,
        per_curve_residuals: per_curve,
        converged: best.converged,
        n_iterations: best.iterations,
        stop_reason: best.reason,
        condition_number: cov.condition_number,
        rank_deficient: cov.rank_deficient,
        starts: outcomes,
        ties,
    })
}

/// Simulated measurement curves with optional Gaussian noise of standard deviation
/// `noise_sigma` (absolute, in normalized signal units). The noise level is recorded
/// as each point's sigma when positive.
pub fn synthesize<R: Rng>(
    params: &FitParameterSet,
    specs: &[MeasurementSpec],
    ctx: &FitContext,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<Vec<MeasurementCurve>> {
    let sim = Simulator::with_pump_scale(&params.kinetic, &ctx.optical, &ctx.timing, params.pump_scale)?;
    let curves = sim.simulate_curves(specs)?;
    let normal = Normal::new(0.0, noise_sigma.max(0.0))
        .map_err(|e| Error::invalid(format!("noise level: {e}")))?;
    curves
        .into_iter()
        .enumerate()
        .map(|(c, sc)| {
            let a = params.amplitude(c);
            let signal = sc
                .signal
                .iter()
                .map(|&v| a * v + if noise_sigma > 0.0 { normal.sample(rng) } else { 0.0 })
                .collect::<Vec<_>>();
            let sigma = (noise_sigma > 0.0).then(|| vec![noise_sigma; signal.len()]);
            MeasurementCurve::new(sc.spec, sc.delays_s, signal, sigma)
        })
        .collect()
}
