//! Hahn-echo envelope fitting and ESEEM analysis.
//!
//! The echo amplitude is modeled as `A·exp(-(2τ/T₂)^n) + c`, with τ the π/2-π spacing
//! (total free evolution 2τ) and n = 1 unless a stretched fit is requested. The fitted
//! envelope is subtracted and the residual modulation Fourier-transformed against τ, so
//! spectral frequencies are cycles per unit of pulse spacing.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::covariance::covariance_from_jacobian;
use crate::fit::lm::{minimize, LeastSquaresProblem, LmOptions, StopReason};

pub const MIN_TRACE_POINTS: usize = 8;

/// What the time column of a trace measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeAxis {
    /// Pulse spacing τ.
    #[default]
    Tau,
    /// Total free evolution 2τ.
    TotalTime,
}

impl TimeAxis {
    pub fn to_tau(self, t: f64) -> f64 {
        match self {
            TimeAxis::Tau => t,
            TimeAxis::TotalTime => 0.5 * t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EchoTrace {
    tau: Vec<f64>,
    amplitude: Vec<f64>,
}

impl EchoTrace {
    pub fn new(tau: Vec<f64>, amplitude: Vec<f64>) -> Result<Self> {
        if tau.len() != amplitude.len() {
            return Err(Error::DimensionMismatch {
                expected: tau.len(),
                got: amplitude.len(),
            });
        }
        if tau.len() < MIN_TRACE_POINTS {
            return Err(Error::InvalidData(format!(
                "echo trace needs at least {MIN_TRACE_POINTS} points, got {}",
                tau.len()
            )));
        }
        if tau.iter().chain(&amplitude).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("echo trace".into()));
        }
        if tau.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidData("pulse spacing must be strictly increasing".into()));
        }
        if tau[0] < 0.0 {
            return Err(Error::InvalidData("pulse spacing must be non-negative".into()));
        }
        Ok(Self { tau, amplitude })
    }

    /// Build from times on either axis convention; times are converted to τ.
    pub fn from_axis(times: Vec<f64>, amplitude: Vec<f64>, axis: TimeAxis) -> Result<Self> {
        let tau = times.into_iter().map(|t| axis.to_tau(t)).collect();
        Self::new(tau, amplitude)
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn amplitude(&self) -> &[f64] {
        &self.amplitude
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvelopeOptions {
    /// Fit the stretch exponent n instead of fixing n = 1.
    pub stretched: bool,
    pub lm: LmOptions,
}

impl Default for EnvelopeOptions {
    fn default() -> Self {
        Self {
            stretched: false,
            lm: LmOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeFit {
    pub t2: f64,
    pub amplitude: f64,
    pub offset: f64,
    pub stretch: f64,
    pub t2_uncertainty: f64,
    pub amplitude_uncertainty: f64,
    pub offset_uncertainty: f64,
    /// Only present for stretched fits.
    pub stretch_uncertainty: Option<f64>,
    pub chi2: f64,
    pub iterations: usize,
}

impl EnvelopeFit {
    pub fn eval(&self, tau: f64) -> f64 {
        envelope(tau, self.amplitude, self.offset, self.t2, self.stretch)
    }
}

fn envelope(tau: f64, a: f64, c: f64, t2: f64, n: f64) -> f64 {
    a * (-(2.0 * tau / t2).powf(n)).exp() + c
}

/// Internal coordinates: [A/s, c/s, ln T₂, (ln n)] with `s` the amplitude range of the
/// trace, so every coordinate is of order one.
struct EnvelopeProblem<'a> {
    trace: &'a EchoTrace,
    scale: f64,
    stretched: bool,
}

impl EnvelopeProblem<'_> {
    fn unpack(&self, x: &DVector<f64>) -> (f64, f64, f64, f64) {
        let n = if self.stretched { x[3].exp() } else { 1.0 };
        (x[0] * self.scale, x[1] * self.scale, x[2].exp(), n)
    }
}

impl LeastSquaresProblem for EnvelopeProblem<'_> {
    fn n_params(&self) -> usize {
        if self.stretched {
            4
        } else {
            3
        }
    }

    fn residuals(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let (a, c, t2, n) = self.unpack(x);
        Ok(DVector::from_iterator(
            self.trace.len(),
            self.trace
                .tau
                .iter()
                .zip(&self.trace.amplitude)
                .map(|(&t, &y)| (envelope(t, a, c, t2, n) - y) / self.scale),
        ))
    }
}

/// Best (A, c) for a fixed T₂ by linear least squares, with its cost.
fn linear_amplitudes(trace: &EchoTrace, t2: f64) -> Option<(f64, f64, f64)> {
    let (mut s1, mut se, mut see, mut sy, mut sey) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&t, &y) in trace.tau.iter().zip(&trace.amplitude) {
        let e = (-2.0 * t / t2).exp();
        s1 += 1.0;
        se += e;
        see += e * e;
        sy += y;
        sey += e * y;
    }
    let det = see * s1 - se * se;
    if det.abs() <= 1e-14 * see * s1 {
        return None;
    }
    let a = (sey * s1 - se * sy) / det;
    let c = (see * sy - se * sey) / det;
    let cost = trace
        .tau
        .iter()
        .zip(&trace.amplitude)
        .map(|(&t, &y)| (a * (-2.0 * t / t2).exp() + c - y).powi(2))
        .sum();
    Some((a, c, cost))
}

/// Least-squares fit of the echo envelope.
///
/// The start comes from a log-spaced scan over T₂ with A and c solved linearly, which
/// makes the fit insensitive to the amplitude sign and units of the trace.
pub fn fit_envelope(trace: &EchoTrace, opts: &EnvelopeOptions) -> Result<EnvelopeFit> {
    let (lo, hi) = trace
        .amplitude
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let scale = hi - lo;
    if !(scale > 1e-12 * hi.abs().max(lo.abs())) || scale == 0.0 {
        return Err(Error::Fit("echo trace is constant; T2 is unbounded".into()));
    }

    let tau = &trace.tau;
    let dt_min = tau.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let span = tau[tau.len() - 1] - tau[0];
    let (t_lo, t_hi) = (dt_min.max(1e-15), 100.0 * span);
    let n_scan = 200;
    let mut start: Option<(f64, f64, f64, f64)> = None;
    for i in 0..n_scan {
        let t2 = t_lo * (t_hi / t_lo).powf(i as f64 / (n_scan - 1) as f64);
        if let Some((a, c, cost)) = linear_amplitudes(trace, t2) {
            if start.map_or(true, |s| cost < s.3) {
                start = Some((a, c, t2, cost));
            }
        }
    }
    let (a0, c0, t20, _) = start.ok_or_else(|| Error::Fit("no usable envelope start".into()))?;

    let problem = EnvelopeProblem {
        trace,
        scale,
        stretched: opts.stretched,
    };
    let mut x0 = vec![a0 / scale, c0 / scale, t20.ln()];
    if opts.stretched {
        x0.push(0.0);
    }
    let rep = minimize(&problem, &DVector::from_vec(x0), &opts.lm)?;
    if rep.reason == StopReason::MaxIterations {
        return Err(Error::Fit(format!(
            "envelope fit did not converge in {} iterations",
            rep.iterations
        )));
    }
    let (a, c, t2, n) = problem.unpack(&rep.x);
    if !(t2 > 0.0 && t2 < 1.0) {
        return Err(Error::Fit(format!("fitted T2 = {t2:e} s is outside (0, 1 s)")));
    }

    let chi2 = rep.cost * scale * scale;
    let p = problem.n_params();
    let dof = trace.len() as i64 - p as i64;
    let (mut sa, mut sc, mut st, mut sn) = (f64::NAN, f64::NAN, f64::NAN, None);
    if dof > 0 {
        let cov = covariance_from_jacobian(&rep.jacobian, rep.cost, dof)?;
        let se = cov.standard_errors();
        sa = se[0] * scale;
        sc = se[1] * scale;
        st = se[2] * t2;
        if opts.stretched {
            sn = Some(se[3] * n);
        }
    }
    Ok(EnvelopeFit {
        t2,
        amplitude: a,
        offset: c,
        stretch: n,
        t2_uncertainty: st,
        amplitude_uncertainty: sa,
        offset_uncertainty: sc,
        stretch_uncertainty: sn,
        chi2,
        iterations: rep.iterations,
    })
}

pub fn extract_modulation(trace: &EchoTrace, env: &EnvelopeFit) -> Vec<f64> {
    trace
        .tau
        .iter()
        .zip(&trace.amplitude)
        .map(|(&t, &y)| y - env.eval(t))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    None,
    #[default]
    Hann,
}

impl Window {
    pub fn weights(self, n: usize) -> Vec<f64> {
        match self {
            Window::None => vec![1.0; n],
            // symmetric Hann
            Window::Hann if n > 1 => (0..n)
                .map(|i| {
                    let x = std::f64::consts::PI * i as f64 / (n - 1) as f64;
                    x.sin().powi(2)
                })
                .collect(),
            Window::Hann => vec![1.0; n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FftOptions {
    pub window: Window,
    pub zero_pad_factor: usize,
}

impl Default for FftOptions {
    fn default() -> Self {
        Self {
            window: Window::Hann,
            zero_pad_factor: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationSpectrum {
    pub frequencies_hz: Vec<f64>,
    /// One-sided magnitude scaled so a cosine of amplitude `a` peaks near `a`.
    pub magnitudes: Vec<f64>,
}

impl ModulationSpectrum {
    pub fn bin_width(&self) -> f64 {
        if self.frequencies_hz.len() > 1 {
            self.frequencies_hz[1] - self.frequencies_hz[0]
        } else {
            f64::NAN
        }
    }
}

/// Relative spacing jitter tolerated before a grid counts as non-uniform.
const UNIFORM_TOL: f64 = 1e-6;

pub fn fft_spectrum(residual: &[f64], tau: &[f64], opts: &FftOptions) -> Result<ModulationSpectrum> {
    if residual.len() != tau.len() {
        return Err(Error::DimensionMismatch {
            expected: tau.len(),
            got: residual.len(),
        });
    }
    let n = tau.len();
    if n < 4 {
        return Err(Error::InvalidData(format!("spectrum needs at least 4 points, got {n}")));
    }
    if ![1, 2, 4, 8].contains(&opts.zero_pad_factor) {
        return Err(Error::invalid(format!(
            "zero-pad factor must be 1, 2, 4 or 8, got {}",
            opts.zero_pad_factor
        )));
    }
    let dt = (tau[n - 1] - tau[0]) / (n - 1) as f64;
    if !(dt > 0.0) {
        return Err(Error::InvalidData("pulse spacing grid is not increasing".into()));
    }
    if tau
        .windows(2)
        .any(|w| ((w[1] - w[0]) - dt).abs() > UNIFORM_TOL * dt)
    {
        return Err(Error::InvalidData(
            "pulse spacing grid is not uniform; resample onto a uniform grid first".into(),
        ));
    }

    let w = opts.window.weights(n);
    let wsum: f64 = w.iter().sum();
    let m = n * opts.zero_pad_factor;
    let mut buf: Vec<Complex<f64>> = residual
        .iter()
        .zip(&w)
        .map(|(&r, &wi)| Complex::new(r * wi, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(m)
        .collect();
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);

    let half = m / 2;
    let frequencies_hz = (0..=half).map(|k| k as f64 / (m as f64 * dt)).collect();
    let magnitudes = buf[..=half]
        .iter()
        .enumerate()
        .map(|(k, z)| {
            let one_sided = if k == 0 || (m % 2 == 0 && k == half) { 1.0 } else { 2.0 };
            one_sided * z.norm() / wsum
        })
        .collect();
    Ok(ModulationSpectrum {
        frequencies_hz,
        magnitudes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedLine {
    pub label: String,
    pub frequency_hz: f64,
}

/// Predicted ESEEM lines from the quadrupole frequencies of a nucleus (MHz in, Hz out).
pub fn quadrupole_lines(q_mhz: &crate::spin::DiagonalTensor) -> Vec<PredictedLine> {
    let f = crate::spin::quadrupole_frequencies(q_mhz);
    ["Qxx-Qyy", "Qyy-Qzz", "Qxx-Qzz"]
        .iter()
        .zip(f)
        .map(|(l, v)| PredictedLine {
            label: l.to_string(),
            frequency_hz: v * 1e6,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PeakOptions {
    pub tolerance_hz: f64,
    /// Noise floor is median + `floor_mads`·MAD of the magnitudes.
    pub floor_mads: f64,
    /// Peaks must also reach this fraction of the largest magnitude.
    pub min_relative: f64,
}

impl Default for PeakOptions {
    fn default() -> Self {
        Self {
            tolerance_hz: 0.3e6,
            floor_mads: 5.0,
            min_relative: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub frequency_hz: f64,
    pub magnitude: f64,
    pub assignment: Option<String>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Interior local maxima above the noise floor, each assigned to the nearest predicted
/// line within tolerance; sorted by magnitude, largest first.
pub fn detect_and_assign_peaks(
    spectrum: &ModulationSpectrum,
    predicted: &[PredictedLine],
    opts: &PeakOptions,
) -> Result<Vec<Peak>> {
    if !(opts.tolerance_hz > 0.0) {
        return Err(Error::invalid("peak tolerance must be positive"));
    }
    let mag = &spectrum.magnitudes;
    if mag.len() < 3 {
        return Ok(Vec::new());
    }
    let mut sorted = mag.clone();
    let med = median(&mut sorted);
    let mut dev: Vec<f64> = mag.iter().map(|v| (v - med).abs()).collect();
    let mad = median(&mut dev);
    let max = mag.iter().cloned().fold(0.0, f64::max);
    let floor = (med + opts.floor_mads * mad).max(opts.min_relative * max);

    let mut peaks: Vec<Peak> = (1..mag.len() - 1)
        .filter(|&k| mag[k] > mag[k - 1] && mag[k] >= mag[k + 1] && mag[k] > floor)
        .map(|k| {
            let f = spectrum.frequencies_hz[k];
            let assignment = predicted
                .iter()
                .map(|p| (p, (p.frequency_hz - f).abs()))
                .filter(|(_, d)| *d <= opts.tolerance_hz)
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(p, _)| p.label.clone());
            Peak {
                frequency_hz: f,
                magnitude: mag[k],
                assignment,
            }
        })
        .collect();
    peaks.sort_by(|a, b| b.magnitude.total_cmp(&a.magnitude));
    Ok(peaks)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EseemOptions {
    pub envelope: EnvelopeOptions,
    pub fft: FftOptions,
    pub peaks: PeakOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EseemResult {
    pub t2: f64,
    pub t2_uncertainty: f64,
    pub envelope: EnvelopeFit,
    pub residual: Vec<f64>,
    pub frequencies: Vec<f64>,
    pub spectrum: Vec<f64>,
    pub peaks: Vec<Peak>,
}

pub fn analyze(trace: &EchoTrace, predicted: &[PredictedLine], opts: &EseemOptions) -> Result<EseemResult> {
    let env = fit_envelope(trace, &opts.envelope)?;
    let residual = extract_modulation(trace, &env);
    let spec = fft_spectrum(&residual, trace.tau(), &opts.fft)?;
    let peaks = detect_and_assign_peaks(&spec, predicted, &opts.peaks)?;
    Ok(EseemResult {
        t2: env.t2,
        t2_uncertainty: env.t2_uncertainty,
        envelope: env,
        residual,
        frequencies: spec.frequencies_hz,
        spectrum: spec.magnitudes,
        peaks,
    })
}

/// A modulation tone with frequency in Hz (per unit τ) and phase. `depth` follows the
/// ESEEM convention: the echo dips from 1 to `1 - depth`, i.e. depth is peak-to-peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    pub frequency_hz: f64,
    pub depth: f64,
    pub phase: f64,
}

/// Synthetic echo `A·exp(-2τ/T₂)·Π(1 - dᵢ/2·(1 - cos(2πfᵢτ + φᵢ))) + c` plus Gaussian noise.
pub fn synthesize_trace<R: Rng + ?Sized>(
    tau: &[f64],
    t2: f64,
    amplitude: f64,
    offset: f64,
    tones: &[Tone],
    noise_sigma: f64,
    rng: &mut R,
) -> Result<EchoTrace> {
    if !(t2 > 0.0) {
        return Err(Error::invalid("T2 must be positive"));
    }
    let noise = if noise_sigma > 0.0 {
        Some(Normal::new(0.0, noise_sigma).map_err(|e| Error::invalid(e.to_string()))?)
    } else {
        None
    };
    let y = tau
        .iter()
        .map(|&t| {
            let m: f64 = tones
                .iter()
                .map(|tn| {
                    let c = (2.0 * std::f64::consts::PI * tn.frequency_hz * t + tn.phase).cos();
                    1.0 - 0.5 * tn.depth * (1.0 - c)
                })
                .product();
            let v = amplitude * (-2.0 * t / t2).exp() * m + offset;
            v + noise.as_ref().map_or(0.0, |d| d.sample(rng))
        })
        .collect();
    EchoTrace::new(tau.to_vec(), y)
}

pub fn uniform_grid(start: f64, step: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| start + step * i as f64).collect()
}
