//! Zero-field spin Hamiltonian of an S = 1 triplet coupled to up to two I = 1 nuclei,
//! and the cw-ODMR stick and broadened spectra derived from it.
//!
//! All operators are written in the Cartesian basis `|x>, |y>, |z>` of the zero-field
//! eigenstates, where `<a|S_k|b> = -i eps(k, a, b)`. In that basis the zero-field
//! splitting term is diagonal with entries `D/3 - E`, `D/3 + E` and `-2D/3`, and with
//! tensors diagonal in the same frame the whole Hamiltonian is real symmetric. Nuclear
//! spins use the same Cartesian construction. Product states are ordered
//! electron ⊗ nucleus 1 ⊗ nucleus 2.

use nalgebra::{Complex, DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sublevel::{Sublevel, Transition};

pub type C64 = Complex<f64>;
pub type HermitianMatrix = DMatrix<C64>;

/// Zero-field splitting parameters in MHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZfsParams {
    d: f64,
    e: f64,
}

impl ZfsParams {
    /// `E` is signed; transition labels follow the signed convention.
    pub fn new(d: f64, e: f64) -> Result<Self> {
        if !d.is_finite() || !e.is_finite() {
            return Err(Error::NonFinite("zero-field splitting".into()));
        }
        if d < 0.0 {
            return Err(Error::invalid(format!("D must be non-negative, got {d}")));
        }
        if e.abs() > d / 3.0 * (1.0 + 1e-12) {
            return Err(Error::invalid(format!(
                "|E| must not exceed D/3 (D = {d}, E = {e})"
            )));
        }
        Ok(Self { d, e })
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn e(&self) -> f64 {
        self.e
    }

    /// Energies of `|Tx>`, `|Ty>`, `|Tz>` in MHz.
    pub fn sublevel_energies(&self) -> [f64; 3] {
        [
            self.d / 3.0 - self.e,
            self.d / 3.0 + self.e,
            -2.0 * self.d / 3.0,
        ]
    }
}

/// Principal values of a tensor diagonal in the zero-field frame, in MHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagonalTensor {
    pub xx: f64,
    pub yy: f64,
    pub zz: f64,
}

impl DiagonalTensor {
    pub fn new(xx: f64, yy: f64, zz: f64) -> Self {
        Self { xx, yy, zz }
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn components(&self) -> [f64; 3] {
        [self.xx, self.yy, self.zz]
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy + self.zz
    }

    pub fn is_finite(&self) -> bool {
        self.components().iter().all(|c| c.is_finite())
    }

    /// A quadrupole tensor should be traceless; returns a message when the trace exceeds
    /// a tenth of the largest component.
    pub fn quadrupole_trace_warning(&self) -> Option<String> {
        let max = self.components().iter().fold(0.0_f64, |m, c| m.max(c.abs()));
        let tr = self.trace();
        (tr.abs() > 0.1 * max).then(|| {
            format!("quadrupole tensor trace {tr:.4} MHz is large relative to its components")
        })
    }
}

/// An I = 1 nucleus with hyperfine and quadrupole tensors in the zero-field frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NucleusSpec {
    pub hyperfine: DiagonalTensor,
    pub quadrupole: DiagonalTensor,
}

impl NucleusSpec {
    pub fn new(hyperfine: DiagonalTensor, quadrupole: DiagonalTensor) -> Result<Self> {
        if !hyperfine.is_finite() {
            return Err(Error::NonFinite("hyperfine tensor".into()));
        }
        if !quadrupole.is_finite() {
            return Err(Error::NonFinite("quadrupole tensor".into()));
        }
        if let Some(msg) = quadrupole.quadrupole_trace_warning() {
            log::warn!("{msg}");
        }
        Ok(Self {
            hyperfine,
            quadrupole,
        })
    }

    /// Nuclear spin quantum number; only I = 1 is supported.
    pub fn spin(&self) -> u32 {
        1
    }
}

pub const MAX_NUCLEI: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpinSystem {
    zfs: ZfsParams,
    nuclei: Vec<NucleusSpec>,
}

impl SpinSystem {
    pub fn new(zfs: ZfsParams, nuclei: Vec<NucleusSpec>) -> Result<Self> {
        if nuclei.len() > MAX_NUCLEI {
            return Err(Error::invalid(format!(
                "at most {MAX_NUCLEI} nuclei are supported, got {}",
                nuclei.len()
            )));
        }
        Ok(Self { zfs, nuclei })
    }

    pub fn zfs(&self) -> &ZfsParams {
        &self.zfs
    }

    pub fn nuclei(&self) -> &[NucleusSpec] {
        &self.nuclei
    }

    pub fn nuclear_dim(&self) -> usize {
        3usize.pow(self.nuclei.len() as u32)
    }

    pub fn dim(&self) -> usize {
        3 * self.nuclear_dim()
    }
}

/// JSON form: `{"D_MHz": .., "E_MHz": .., "nuclei": [{"A_MHz": [..], "Q_MHz": [..]}]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpinSystemDoc {
    #[serde(rename = "D_MHz")]
    pub d_mhz: f64,
    #[serde(rename = "E_MHz")]
    pub e_mhz: f64,
    #[serde(default)]
    pub nuclei: Vec<NucleusDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NucleusDoc {
    #[serde(rename = "A_MHz")]
    pub a_mhz: [f64; 3],
    #[serde(rename = "Q_MHz")]
    pub q_mhz: [f64; 3],
}

impl TryFrom<&SpinSystemDoc> for SpinSystem {
    type Error = Error;

    fn try_from(doc: &SpinSystemDoc) -> Result<Self> {
        let zfs = ZfsParams::new(doc.d_mhz, doc.e_mhz)?;
        let nuclei = doc
            .nuclei
            .iter()
            .map(|n| {
                NucleusSpec::new(
                    DiagonalTensor::from_array(n.a_mhz),
                    DiagonalTensor::from_array(n.q_mhz),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        SpinSystem::new(zfs, nuclei)
    }
}

impl From<&SpinSystem> for SpinSystemDoc {
    fn from(s: &SpinSystem) -> Self {
        Self {
            d_mhz: s.zfs.d,
            e_mhz: s.zfs.e,
            nuclei: s
                .nuclei
                .iter()
                .map(|n| NucleusDoc {
                    a_mhz: n.hyperfine.components(),
                    q_mhz: n.quadrupole.components(),
                })
                .collect(),
        }
    }
}

/// Cartesian spin-1 operators `(S_k)_{ab} = -i eps(k, a, b)` for k = x, y, z.
pub fn spin1_operators() -> [DMatrix<C64>; 3] {
    let mut ops = [
        DMatrix::zeros(3, 3),
        DMatrix::zeros(3, 3),
        DMatrix::zeros(3, 3),
    ];
    for (k, op) in ops.iter_mut().enumerate() {
        for a in 0..3 {
            for b in 0..3 {
                let eps = levi_civita(k, a, b);
                if eps != 0.0 {
                    op[(a, b)] = C64::new(0.0, -eps);
                }
            }
        }
    }
    ops
}

fn levi_civita(i: usize, j: usize, k: usize) -> f64 {
    match (i, j, k) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

/// Embeds single-particle operators into the product space. `factors[p]` is the operator
/// acting on particle `p` (electron first), `None` meaning identity.
fn embed(factors: &[Option<&DMatrix<C64>>]) -> DMatrix<C64> {
    let id3 = DMatrix::<C64>::identity(3, 3);
    factors
        .iter()
        .map(|f| f.unwrap_or(&id3))
        .fold(DMatrix::<C64>::identity(1, 1), |acc, m| acc.kronecker(m))
}

/// Electron spin operators embedded in the full product space.
pub fn electron_operators(n_nuclei: usize) -> [DMatrix<C64>; 3] {
    let s = spin1_operators();
    let mut factors: Vec<Option<&DMatrix<C64>>> = vec![None; 1 + n_nuclei];
    let mut out = Vec::with_capacity(3);
    for sk in &s {
        factors[0] = Some(sk);
        out.push(embed(&factors));
    }
    out.try_into().expect("three components")
}

pub fn build_hamiltonian(system: &SpinSystem) -> HermitianMatrix {
    let n = system.nuclei.len();
    let s = spin1_operators();
    let sq: Vec<DMatrix<C64>> = s.iter().map(|m| m * m).collect();
    let dim = system.dim();
    let mut h = DMatrix::<C64>::zeros(dim, dim);

    // D(Sz^2 - 2/3) + E(Sx^2 - Sy^2)
    let zfs = &system.zfs;
    let id3 = DMatrix::<C64>::identity(3, 3);
    let h_zfs = (&sq[2] - &id3 * C64::from(2.0 / 3.0)) * C64::from(zfs.d)
        + (&sq[0] - &sq[1]) * C64::from(zfs.e);
    let mut factors: Vec<Option<&DMatrix<C64>>> = vec![None; 1 + n];
    factors[0] = Some(&h_zfs);
    h += embed(&factors);

    for (p, nucleus) in system.nuclei.iter().enumerate() {
        let a = nucleus.hyperfine.components();
        let q = nucleus.quadrupole.components();
        for k in 0..3 {
            if a[k] != 0.0 {
                let mut f: Vec<Option<&DMatrix<C64>>> = vec![None; 1 + n];
                f[0] = Some(&s[k]);
                f[1 + p] = Some(&s[k]);
                h += embed(&f) * C64::from(a[k]);
            }
            if q[k] != 0.0 {
                let mut f: Vec<Option<&DMatrix<C64>>> = vec![None; 1 + n];
                f[1 + p] = Some(&sq[k]);
                h += embed(&f) * C64::from(q[k]);
            }
        }
    }
    h
}

/// Eigen-decomposition of a Hermitian matrix: ascending energies and the unitary
/// whose columns are the corresponding eigenvectors.
#[derive(Debug, Clone)]
pub struct EigenSolution {
    pub energies: Vec<f64>,
    pub states: DMatrix<C64>,
}

impl EigenSolution {
    pub fn dim(&self) -> usize {
        self.energies.len()
    }
}

pub fn diagonalize(h: &HermitianMatrix) -> Result<EigenSolution> {
    if !h.is_square() {
        return Err(Error::DimensionMismatch {
            expected: h.nrows(),
            got: h.ncols(),
        });
    }
    if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite("Hamiltonian".into()));
    }
    let norm = h.norm();
    let asym = (h - h.adjoint()).norm();
    let tol = 1e-9 * norm;
    if asym > tol {
        return Err(Error::NotHermitian {
            asymmetry: asym,
            tolerance: tol,
        });
    }
    let dim = h.nrows();

    // Real symmetric input keeps real eigenvectors, which makes every
    // <i|S_k|i> vanish and intensities basis independent within degenerate blocks.
    let (values, vectors): (Vec<f64>, DMatrix<C64>) = if h.iter().all(|z| z.im == 0.0) {
        let re = DMatrix::<f64>::from_fn(dim, dim, |i, j| 0.5 * (h[(i, j)].re + h[(j, i)].re));
        let eig = SymmetricEigen::new(re);
        (
            eig.eigenvalues.iter().copied().collect(),
            eig.eigenvectors.map(C64::from),
        )
    } else {
        let herm = (h + h.adjoint()) * C64::from(0.5);
        let eig = SymmetricEigen::new(herm);
        (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
    };

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let energies = order.iter().map(|&i| values[i]).collect();
    let states = DMatrix::from_fn(dim, dim, |r, c| vectors[(r, order[c])]);
    Ok(EigenSolution { energies, states })
}

/// One line of a stick spectrum.
///
/// For lines from [`transition_lines`], `lower_index`/`upper_index` are the first
/// eigenstate indices of the (possibly degenerate) energy levels involved. For the
/// analytic zero-field lines they are sublevel indices (x = 0, y = 1, z = 2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionLine {
    pub frequency: f64,
    pub intensity: f64,
    pub lower_index: usize,
    pub upper_index: usize,
    /// Dominant electron-sublevel character of the two levels, when they differ.
    pub pair: Option<Transition>,
}

pub fn zero_field_transitions_analytic(zfs: &ZfsParams) -> [TransitionLine; 3] {
    let energies = zfs.sublevel_energies();
    let freqs = [2.0 * zfs.e.abs(), zfs.d - zfs.e, zfs.d + zfs.e];
    let mut out = [TransitionLine {
        frequency: 0.0,
        intensity: 1.0,
        lower_index: 0,
        upper_index: 0,
        pair: None,
    }; 3];
    for (line, t) in out.iter_mut().zip(Transition::ALL) {
        let (a, b) = t.sublevels();
        let (lo, hi) = if energies[a.index()] <= energies[b.index()] {
            (a, b)
        } else {
            (b, a)
        };
        line.frequency = freqs[t.index()];
        line.lower_index = lo.index();
        line.upper_index = hi.index();
        line.pair = Some(t);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineOptions {
    /// Lines weaker than this fraction of the strongest line are dropped.
    pub prune_relative: f64,
    /// Eigenvalues closer than this (MHz) are treated as one degenerate level.
    pub degeneracy_tol: f64,
}

impl Default for LineOptions {
    fn default() -> Self {
        Self {
            prune_relative: 1e-6,
            degeneracy_tol: 1e-7,
        }
    }
}

/// Stick spectrum for an unpolarized microwave drive.
///
/// The intensity between levels `i` and `j` is `sum_k |<j|S_k|i>|^2` averaged over the
/// (unpolarized) nuclear states, so the total intensity is 3 whatever the number of
/// nuclei. Degenerate eigenvalues are grouped into levels and intensities summed over
/// the group, which keeps every line independent of the eigenbasis chosen inside a
/// degenerate block.
pub fn transition_lines(
    sol: &EigenSolution,
    system: &SpinSystem,
    opts: &LineOptions,
) -> Result<Vec<TransitionLine>> {
    let dim = system.dim();
    if sol.dim() != dim || sol.states.nrows() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: sol.dim(),
        });
    }
    let levels = group_levels(&sol.energies, opts.degeneracy_tol);
    let character = electron_character(sol, system);

    let ops = electron_operators(system.nuclei.len());
    let v = &sol.states;
    let vh = v.adjoint();
    let norm = 1.0 / system.nuclear_dim() as f64;
    // |<j|S_k|i>|^2 summed over k, in the eigenbasis
    let mut strength = DMatrix::<f64>::zeros(dim, dim);
    for op in &ops {
        let m = &vh * op * v;
        strength.zip_apply(&m, |s, z| *s += z.norm_sqr() * norm);
    }

    let mut lines = Vec::new();
    for (a, la) in levels.iter().enumerate() {
        for lb in levels.iter().skip(a) {
            let same = std::ptr::eq(la, lb);
            let mut intensity = 0.0;
            for &i in la {
                for &j in lb {
                    if i != j {
                        intensity += strength[(j, i)];
                    }
                }
            }
            if same {
                intensity *= 0.5;
            }
            if intensity <= 0.0 {
                continue;
            }
            let lo = la[0];
            let hi = lb[0];
            let freq = (mean_energy(&sol.energies, lb) - mean_energy(&sol.energies, la)).abs();
            let pair = Transition::between(character[lo], character[hi]);
            lines.push(TransitionLine {
                frequency: if same { 0.0 } else { freq },
                intensity,
                lower_index: lo,
                upper_index: hi,
                pair,
            });
        }
    }
    let max = lines.iter().fold(0.0_f64, |m, l| m.max(l.intensity));
    lines.retain(|l| l.intensity >= opts.prune_relative * max);
    lines.sort_by(|a, b| a.frequency.total_cmp(&b.frequency));
    Ok(lines)
}

fn group_levels(energies: &[f64], tol: f64) -> Vec<Vec<usize>> {
    let mut levels: Vec<Vec<usize>> = Vec::new();
    for (i, &e) in energies.iter().enumerate() {
        match levels.last_mut() {
            Some(last) if (e - energies[*last.last().unwrap()]).abs() <= tol => last.push(i),
            _ => levels.push(vec![i]),
        }
    }
    levels
}

fn mean_energy(energies: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| energies[i]).sum::<f64>() / idx.len() as f64
}

/// Dominant electron sublevel of each eigenstate (largest reduced population).
fn electron_character(sol: &EigenSolution, system: &SpinSystem) -> Vec<Sublevel> {
    let nd = system.nuclear_dim();
    (0..sol.dim())
        .map(|c| {
            let mut pops = [0.0; 3];
            for (a, p) in pops.iter_mut().enumerate() {
                *p = (0..nd).map(|nu| sol.states[(a * nd + nu, c)].norm_sqr()).sum();
            }
            let best = (0..3).max_by(|&a, &b| pops[a].total_cmp(&pops[b])).unwrap();
            Sublevel::from_index(best).unwrap()
        })
        .collect()
}

/// Intensity-weighted mean frequency of the lines within `half_width` of `center`.
pub fn multiplet_centroid(lines: &[TransitionLine], center: f64, half_width: f64) -> Option<f64> {
    let (w, m) = lines
        .iter()
        .filter(|l| (l.frequency - center).abs() <= half_width)
        .fold((0.0, 0.0), |(w, m), l| (w + l.intensity, m + l.intensity * l.frequency));
    (w > 0.0).then(|| m / w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LineShape {
    Gaussian,
    Lorentzian,
}

impl LineShape {
    /// Unit-area profile evaluated at detuning `x` (MHz).
    pub fn eval(self, x: f64, fwhm: f64) -> f64 {
        match self {
            LineShape::Gaussian => {
                let sigma = fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
                (-0.5 * (x / sigma).powi(2)).exp()
                    / (sigma * (2.0 * std::f64::consts::PI).sqrt())
            }
            LineShape::Lorentzian => {
                let g = 0.5 * fwhm;
                g / (std::f64::consts::PI * (x * x + g * g))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumConfig {
    pub line_shape: LineShape,
    pub fwhm_mhz: f64,
    pub f_min_mhz: f64,
    pub f_max_mhz: f64,
    pub n_points: usize,
    /// Signed weights for the xy, xz and yz transitions. Lines without a clear
    /// sublevel assignment keep weight 1.
    #[serde(default)]
    pub transition_weights: Option<[f64; 3]>,
}

impl SpectrumConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fwhm_mhz > 0.0) {
            return Err(Error::invalid("fwhm must be positive"));
        }
        if !(self.f_min_mhz < self.f_max_mhz) {
            return Err(Error::invalid("f_min must be below f_max"));
        }
        if self.n_points < 2 {
            return Err(Error::invalid("spectrum grid needs at least 2 points"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        let step = (self.f_max_mhz - self.f_min_mhz) / (self.n_points - 1) as f64;
        (0..self.n_points)
            .map(|i| self.f_min_mhz + step * i as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Spectrum {
    pub frequency_mhz: Vec<f64>,
    pub amplitude: Vec<f64>,
}

pub fn broaden_spectrum(lines: &[TransitionLine], cfg: &SpectrumConfig) -> Result<Spectrum> {
    cfg.validate()?;
    let grid = cfg.grid();
    let weight = |l: &TransitionLine| match (cfg.transition_weights, l.pair) {
        (Some(w), Some(p)) => w[p.index()],
        _ => 1.0,
    };
    let amplitude = grid
        .iter()
        .map(|&f| {
            lines
                .iter()
                .map(|l| weight(l) * l.intensity * cfg.line_shape.eval(f - l.frequency, cfg.fwhm_mhz))
                .sum()
        })
        .collect();
    Ok(Spectrum {
        frequency_mhz: grid,
        amplitude,
    })
}

/// The three I = 1 nuclear quadrupole transition frequencies
/// `{|Qxx - Qyy|, |Qyy - Qzz|, |Qxx - Qzz|}`.
pub fn quadrupole_frequencies(q: &DiagonalTensor) -> [f64; 3] {
    [
        (q.xx - q.yy).abs(),
        (q.yy - q.zz).abs(),
        (q.xx - q.zz).abs(),
    ]
}

/// Full pipeline: Hamiltonian, diagonalization and stick spectrum.
pub fn stick_spectrum(system: &SpinSystem, opts: &LineOptions) -> Result<Vec<TransitionLine>> {
    let h = build_hamiltonian(system);
    let sol = diagonalize(&h)?;
    transition_lines(&sol, system, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dap_nucleus() -> NucleusSpec {
        NucleusSpec::new(
            DiagonalTensor::new(-0.79, -0.99, 23.0),
            DiagonalTensor::new(0.99, -2.2, 1.2),
        )
        .unwrap()
    }

    fn dap(n: usize) -> SpinSystem {
        SpinSystem::new(ZfsParams::new(1390.5, -84.9).unwrap(), vec![dap_nucleus(); n]).unwrap()
    }

    #[test]
    fn zfs_only_hamiltonian_is_diagonal() {
        let h = build_hamiltonian(&dap(0));
        let expected = [548.4, 378.6, -927.0];
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { expected[i] } else { 0.0 };
                assert_abs_diff_eq!(h[(i, j)].re, want, epsilon = 1e-9);
                assert_eq!(h[(i, j)].im, 0.0);
            }
        }
    }

    #[test]
    fn zero_zfs_gives_zero_matrix() {
        let sys = SpinSystem::new(ZfsParams::new(0.0, 0.0).unwrap(), vec![]).unwrap();
        assert!(build_hamiltonian(&sys).iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn spin_operators_obey_commutation() {
        let s = spin1_operators();
        let i = C64::new(0.0, 1.0);
        for (a, b, c) in [(0, 1, 2), (1, 2, 0), (2, 0, 1)] {
            let comm = &s[a] * &s[b] - &s[b] * &s[a];
            assert!((comm - &s[c] * i).norm() < 1e-14);
        }
        let s2: DMatrix<C64> = s.iter().map(|m| m * m).fold(DMatrix::zeros(3, 3), |acc, m| acc + m);
        assert!((s2 - DMatrix::<C64>::identity(3, 3) * C64::from(2.0)).norm() < 1e-14);
    }

    #[test]
    fn dap_trace_matches_tensor_product_sum() {
        // tr(H) = sum over nuclei of tr(Q_n . I^2) * (remaining dimension);
        // tr(I_k^2) = 2 for I = 1 and the other two factors contribute 3 * 3.
        let sys = dap(2);
        let h = build_hamiltonian(&sys);
        assert_eq!(h.nrows(), 27);
        let q = dap_nucleus().quadrupole.trace();
        let expected = 2.0 * (2.0 * q * 9.0);
        assert_abs_diff_eq!(h.trace().re, expected, epsilon = 1e-10);
        assert_eq!((&h - h.adjoint()).norm(), 0.0);
    }

    #[test]
    fn analytic_transitions() {
        let l = zero_field_transitions_analytic(&ZfsParams::new(1390.5, -84.9).unwrap());
        assert_abs_diff_eq!(l[0].frequency, 169.8, epsilon = 1e-9);
        assert_abs_diff_eq!(l[1].frequency, 1475.4, epsilon = 1e-9);
        assert_abs_diff_eq!(l[2].frequency, 1305.6, epsilon = 1e-9);
        assert_eq!(l[1].pair, Some(Transition::XZ));

        let l = zero_field_transitions_analytic(&ZfsParams::new(1000.0, 0.0).unwrap());
        assert_eq!([l[0].frequency, l[1].frequency, l[2].frequency], [0.0, 1000.0, 1000.0]);
        let l = zero_field_transitions_analytic(&ZfsParams::new(3.0, 1.0).unwrap());
        assert_eq!([l[0].frequency, l[1].frequency, l[2].frequency], [2.0, 2.0, 4.0]);
    }

    #[test]
    fn zfs_validation() {
        assert!(ZfsParams::new(-1.0, 0.0).is_err());
        assert!(ZfsParams::new(300.0, 101.0).is_err());
        assert!(ZfsParams::new(f64::NAN, 0.0).is_err());
        assert!(ZfsParams::new(300.0, -100.0).is_ok());
    }

    #[test]
    fn rejects_non_finite_tensor() {
        let bad = DiagonalTensor::new(f64::INFINITY, 0.0, 0.0);
        assert!(NucleusSpec::new(bad, DiagonalTensor::new(0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn too_many_nuclei_rejected() {
        let zfs = ZfsParams::new(1000.0, 10.0).unwrap();
        assert!(SpinSystem::new(zfs, vec![dap_nucleus(); 3]).is_err());
    }

    #[test]
    fn diagonalize_zfs_matches_analytic() {
        let sol = diagonalize(&build_hamiltonian(&dap(0))).unwrap();
        let mut want = ZfsParams::new(1390.5, -84.9).unwrap().sublevel_energies();
        want.sort_by(f64::total_cmp);
        for (e, w) in sol.energies.iter().zip(want) {
            assert_abs_diff_eq!(*e, w, epsilon = 1e-9);
        }
    }

    #[test]
    fn diagonalize_identity() {
        let sol = diagonalize(&DMatrix::<C64>::identity(4, 4)).unwrap();
        assert!(sol.energies.iter().all(|&e| (e - 1.0).abs() < 1e-14));
    }

    #[test]
    fn diagonalize_rejects_non_hermitian() {
        let mut m = DMatrix::<C64>::identity(3, 3);
        m[(0, 1)] = C64::new(0.5, 0.0);
        assert!(matches!(diagonalize(&m), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn diagonalize_complex_hermitian() {
        let mut m = DMatrix::<C64>::zeros(2, 2);
        m[(0, 1)] = C64::new(0.0, -1.0);
        m[(1, 0)] = C64::new(0.0, 1.0);
        let sol = diagonalize(&m).unwrap();
        assert_abs_diff_eq!(sol.energies[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.energies[1], 1.0, epsilon = 1e-12);
        let recon = &sol.states
            * DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                2,
                sol.energies.iter().map(|&e| C64::from(e)),
            ))
            * sol.states.adjoint();
        assert!((recon - m).norm() < 1e-12);
    }

    #[test]
    fn dap_eigen_invariants() {
        let h = build_hamiltonian(&dap(2));
        let sol = diagonalize(&h).unwrap();
        assert!(sol.energies.windows(2).all(|w| w[0] <= w[1]));
        let sum: f64 = sol.energies.iter().sum();
        assert!((sum - h.trace().re).abs() <= 1e-8 * h.norm());
        let u = &sol.states;
        let id = DMatrix::<C64>::identity(27, 27);
        assert!((u.adjoint() * u - id).norm() < 1e-10);
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            27,
            sol.energies.iter().map(|&e| C64::from(e)),
        ));
        assert!((u * d * u.adjoint() - &h).norm() <= 1e-9 * h.norm());
    }

    #[test]
    fn bare_triplet_has_three_unit_lines() {
        let sys = dap(0);
        let lines = stick_spectrum(&sys, &LineOptions::default()).unwrap();
        assert_eq!(lines.len(), 3);
        for l in &lines {
            assert_abs_diff_eq!(l.intensity, 1.0, epsilon = 1e-12);
        }
        let pairs: Vec<_> = lines.iter().map(|l| l.pair.unwrap()).collect();
        assert_eq!(pairs, vec![Transition::XY, Transition::YZ, Transition::XZ]);
    }

    #[test]
    fn degenerate_xy_line_at_zero_frequency() {
        let sys = SpinSystem::new(ZfsParams::new(1000.0, 0.0).unwrap(), vec![]).unwrap();
        let lines = stick_spectrum(&sys, &LineOptions::default()).unwrap();
        let zero: Vec<_> = lines.iter().filter(|l| l.frequency == 0.0).collect();
        assert_eq!(zero.len(), 1);
        assert_abs_diff_eq!(zero[0].intensity, 1.0, epsilon = 1e-12);
        // the two 1000 MHz transitions share a degenerate upper level: one merged line
        let total: f64 = lines.iter().map(|l| l.intensity).sum();
        assert_abs_diff_eq!(total, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn intensity_sum_rule_with_nuclei() {
        for n in 0..=2 {
            let lines = stick_spectrum(
                &dap(n),
                &LineOptions {
                    prune_relative: 0.0,
                    ..Default::default()
                },
            )
            .unwrap();
            let total: f64 = lines.iter().map(|l| l.intensity).sum();
            assert!((total - 3.0).abs() <= 3.0 * 1e-8, "n = {n}: total {total}");
        }
    }

    #[test]
    fn quadrupole_frequency_examples() {
        let f = quadrupole_frequencies(&DiagonalTensor::new(0.99, -2.2, 1.2));
        assert_abs_diff_eq!(f[0], 3.19, epsilon = 1e-12);
        assert_abs_diff_eq!(f[1], 3.4, epsilon = 1e-12);
        assert_abs_diff_eq!(f[2], 0.21, epsilon = 1e-12);
        assert_eq!(quadrupole_frequencies(&DiagonalTensor::new(0.0, 0.0, 0.0)), [0.0; 3]);
        assert_eq!(quadrupole_frequencies(&DiagonalTensor::new(1.0, 1.0, -2.0)), [0.0, 3.0, 3.0]);
    }

    #[test]
    fn quadrupole_trace_warning_threshold() {
        assert!(DiagonalTensor::new(0.99, -2.2, 1.2).quadrupole_trace_warning().is_none());
        assert!(DiagonalTensor::new(1.0, 1.0, 1.0).quadrupole_trace_warning().is_some());
    }

    #[test]
    fn gaussian_fwhm() {
        let line = TransitionLine {
            frequency: 1475.4,
            intensity: 1.0,
            lower_index: 0,
            upper_index: 1,
            pair: Some(Transition::XZ),
        };
        let cfg = SpectrumConfig {
            line_shape: LineShape::Gaussian,
            fwhm_mhz: 10.0,
            f_min_mhz: 1440.0,
            f_max_mhz: 1510.0,
            n_points: 7001,
            transition_weights: None,
        };
        let s = broaden_spectrum(&[line], &cfg).unwrap();
        let (imax, &peak) = s
            .amplitude
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        assert_abs_diff_eq!(s.frequency_mhz[imax], 1475.4, epsilon = 0.01);
        let above: Vec<f64> = s
            .frequency_mhz
            .iter()
            .zip(&s.amplitude)
            .filter(|(_, &a)| a >= peak / 2.0)
            .map(|(&f, _)| f)
            .collect();
        let width = above.last().unwrap() - above.first().unwrap();
        assert!((width - 10.0).abs() <= 0.1, "width {width}");
    }

    #[test]
    fn lineshapes_have_unit_area() {
        for shape in [LineShape::Gaussian, LineShape::Lorentzian] {
            let dx = 0.01;
            let area: f64 = (-200_000..=200_000)
                .map(|i| shape.eval(i as f64 * dx, 2.0) * dx)
                .sum();
            assert!((area - 1.0).abs() < 2e-3, "{shape:?}: {area}");
        }
    }

    #[test]
    fn empty_lines_give_zero_spectrum() {
        let cfg = SpectrumConfig {
            line_shape: LineShape::Lorentzian,
            fwhm_mhz: 1.0,
            f_min_mhz: 0.0,
            f_max_mhz: 10.0,
            n_points: 11,
            transition_weights: None,
        };
        let s = broaden_spectrum(&[], &cfg).unwrap();
        assert!(s.amplitude.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn signed_weights_flip_lines() {
        let lines = stick_spectrum(&dap(0), &LineOptions::default()).unwrap();
        let cfg = SpectrumConfig {
            line_shape: LineShape::Gaussian,
            fwhm_mhz: 5.0,
            f_min_mhz: 100.0,
            f_max_mhz: 1600.0,
            n_points: 1501,
            transition_weights: Some([-1.0, -1.0, 0.3]),
        };
        let s = broaden_spectrum(&lines, &cfg).unwrap();
        let at = |f: f64| {
            let i = s.frequency_mhz.iter().position(|&g| (g - f).abs() < 0.5).unwrap();
            s.amplitude[i]
        };
        assert!(at(1475.0) < 0.0);
        assert!(at(170.0) < 0.0);
        assert!(at(1306.0) > 0.0);
    }

    #[test]
    fn invalid_spectrum_config() {
        let mut cfg = SpectrumConfig {
            line_shape: LineShape::Gaussian,
            fwhm_mhz: 0.0,
            f_min_mhz: 0.0,
            f_max_mhz: 1.0,
            n_points: 10,
            transition_weights: None,
        };
        assert!(cfg.validate().is_err());
        cfg.fwhm_mhz = 1.0;
        cfg.n_points = 1;
        assert!(cfg.validate().is_err());
        cfg.n_points = 2;
        cfg.f_max_mhz = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn spin_system_json_round_trip() {
        let text = r#"{"D_MHz": 1390.5, "E_MHz": -84.9,
            "nuclei": [{"A_MHz": [-0.79, -0.99, 23], "Q_MHz": [0.99, -2.2, 1.2]}]}"#;
        let doc: SpinSystemDoc = serde_json::from_str(text).unwrap();
        let sys = SpinSystem::try_from(&doc).unwrap();
        assert_eq!(sys.dim(), 9);
        let back = SpinSystemDoc::from(&sys);
        assert_eq!(back.nuclei[0].a_mhz, [-0.79, -0.99, 23.0]);
        assert!(serde_json::from_str::<SpinSystemDoc>(r#"{"D_MHz":1}"#).is_err());
    }
}
