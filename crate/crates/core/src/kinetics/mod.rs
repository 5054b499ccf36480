//! Classical population kinetics of the optical cycle
//! `S0 -> S1 -> {Tx, Ty, Tz} -> S0` with spin-lattice relaxation between sublevels.
//!
//! Populations evolve under `dn/dt = R n`, where `R[to, from]` holds first-order rate
//! constants and each diagonal entry is minus its column's outflow, so columns sum to
//! zero. Propagation is exact: `n(t) = exp(R t) n(0)`.

mod expm;
pub mod presets;

pub use expm::expm;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sublevel::{Sublevel, Transition};

/// Triplet depopulation rates `k`, spin-lattice rates `w` (xy, xz, yz), all in s⁻¹,
/// and ISC branching fractions `P` normalized to sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KineticParams {
    k: [f64; 3],
    w: [f64; 3],
    p: [f64; 3],
}

impl KineticParams {
    /// `p` may be given as unnormalized ratios.
    pub fn new(k: [f64; 3], w: [f64; 3], p: [f64; 3]) -> Result<Self> {
        let all = k.iter().chain(&w).chain(&p);
        if all.clone().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("kinetic parameters".into()));
        }
        if k.iter().chain(&w).any(|&x| x < 0.0) {
            return Err(Error::invalid("rates must be non-negative"));
        }
        if p.iter().any(|&x| x < 0.0) {
            return Err(Error::invalid("branching fractions must be non-negative"));
        }
        let total: f64 = p.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid("branching fractions sum to zero"));
        }
        Ok(Self {
            k,
            w,
            p: p.map(|x| x / total),
        })
    }

    pub fn k(&self) -> [f64; 3] {
        self.k
    }

    pub fn w(&self) -> [f64; 3] {
        self.w
    }

    pub fn p(&self) -> [f64; 3] {
        self.p
    }

    pub fn k_of(&self, s: Sublevel) -> f64 {
        self.k[s.index()]
    }

    pub fn w_of(&self, t: Transition) -> f64 {
        self.w[t.index()]
    }

    pub fn p_of(&self, s: Sublevel) -> f64 {
        self.p[s.index()]
    }

    /// The nine parameters in the order kx, ky, kz, wxy, wxz, wyz, Px, Py, Pz.
    pub fn to_array(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        out[..3].copy_from_slice(&self.k);
        out[3..6].copy_from_slice(&self.w);
        out[6..].copy_from_slice(&self.p);
        out
    }

    pub fn from_array(v: [f64; 9]) -> Result<Self> {
        Self::new([v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]])
    }

    /// All rates multiplied by `c` (e.g. to change the time unit).
    pub fn scale_rates(&self, c: f64) -> Result<Self> {
        Self::new(self.k.map(|x| x * c), self.w.map(|x| x * c), self.p)
    }
}

pub const PARAM_NAMES: [&str; 9] = ["k_x", "k_y", "k_z", "w_xy", "w_xz", "w_yz", "P_x", "P_y", "P_z"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum S1Mode {
    /// S1 eliminated adiabatically: the pump feeds the triplet sublevels directly.
    #[default]
    Reduced,
    ExplicitS1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OpticalParams {
    pump_rate: f64,
    isc_yield: f64,
    s1_decay_rate: f64,
    mode: S1Mode,
}

pub const DEFAULT_ISC_YIELD: f64 = 0.65;

impl OpticalParams {
    pub fn reduced(pump_rate: f64, isc_yield: f64) -> Result<Self> {
        Self::new(pump_rate, isc_yield, None, S1Mode::Reduced)
    }

    pub fn explicit_s1(pump_rate: f64, isc_yield: f64, s1_decay_rate: f64) -> Result<Self> {
        Self::new(pump_rate, isc_yield, Some(s1_decay_rate), S1Mode::ExplicitS1)
    }

    pub fn new(
        pump_rate: f64,
        isc_yield: f64,
        s1_decay_rate: Option<f64>,
        mode: S1Mode,
    ) -> Result<Self> {
        if !pump_rate.is_finite() || pump_rate < 0.0 {
            return Err(Error::invalid(format!("pump rate must be >= 0, got {pump_rate}")));
        }
        if !(0.0..=1.0).contains(&isc_yield) {
            return Err(Error::invalid(format!("ISC yield must lie in [0, 1], got {isc_yield}")));
        }
        let s1 = match (mode, s1_decay_rate) {
            (S1Mode::ExplicitS1, Some(r)) if r.is_finite() && r > 0.0 => r,
            (S1Mode::ExplicitS1, _) => {
                return Err(Error::invalid("explicit S1 mode needs a positive S1 decay rate"))
            }
            (S1Mode::Reduced, r) => r.unwrap_or(0.0),
        };
        Ok(Self {
            pump_rate,
            isc_yield,
            s1_decay_rate: s1,
            mode,
        })
    }

    pub fn pump_rate(&self) -> f64 {
        self.pump_rate
    }

    pub fn isc_yield(&self) -> f64 {
        self.isc_yield
    }

    pub fn s1_decay_rate(&self) -> f64 {
        self.s1_decay_rate
    }

    pub fn mode(&self) -> S1Mode {
        self.mode
    }

    pub fn with_pump_rate(&self, pump_rate: f64) -> Result<Self> {
        Self::new(pump_rate, self.isc_yield, Some(self.s1_decay_rate), self.mode)
    }
}

pub const S0: usize = 0;
pub const S1: usize = 1;

pub fn triplet_index(s: Sublevel) -> usize {
    2 + s.index()
}

/// Populations of S0, S1, Tx, Ty, Tz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateVector(pub [f64; 5]);

impl StateVector {
    pub fn ground() -> Self {
        Self([1.0, 0.0, 0.0, 0.0, 0.0])
    }

    pub fn from_triplet(t: [f64; 3]) -> Self {
        let s0 = 1.0 - t.iter().sum::<f64>();
        Self([s0, 0.0, t[0], t[1], t[2]])
    }

    pub fn ground_population(&self) -> f64 {
        self.0[S0]
    }

    pub fn triplet(&self, s: Sublevel) -> f64 {
        self.0[triplet_index(s)]
    }

    pub fn triplets(&self) -> [f64; 3] {
        [self.0[2], self.0[3], self.0[4]]
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, &x) in self.0.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::NonFinite(format!("population {i}")));
            }
            if x < -NEGATIVE_TOL {
                return Err(Error::NegativePopulation { index: i, value: x });
            }
        }
        let total = self.total();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("populations sum to {total}, not 1")));
        }
        Ok(())
    }
}

const NEGATIVE_TOL: f64 = 1e-12;

fn to_mode_vector(mode: S1Mode, s: &StateVector) -> DVector<f64> {
    let idx = mode_indices(mode);
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| s.0[i]))
}

fn from_mode_vector(mode: S1Mode, v: &DVector<f64>) -> StateVector {
    let mut out = [0.0; 5];
    for (&i, &x) in mode_indices(mode).iter().zip(v.iter()) {
        out[i] = x;
    }
    StateVector(out)
}

/// Generator of the population dynamics for one laser setting.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix {
    matrix: DMatrix<f64>,
    mode: S1Mode,
    pump_rate: f64,
}

/// Rows of the 5-element state that each mode keeps.
fn mode_indices(mode: S1Mode) -> &'static [usize] {
    match mode {
        S1Mode::Reduced => &[0, 2, 3, 4],
        S1Mode::ExplicitS1 => &[0, 1, 2, 3, 4],
    }
}

impl RateMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn mode(&self) -> S1Mode {
        self.mode
    }

    /// Effective excitation rate; zero when the laser is off.
    pub fn pump_rate(&self) -> f64 {
        self.pump_rate
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn to_mode_vector(&self, s: &StateVector) -> DVector<f64> {
        to_mode_vector(self.mode, s)
    }

    pub fn from_mode_vector(&self, v: &DVector<f64>) -> StateVector {
        from_mode_vector(self.mode, v)
    }

    /// Row of the mode vector holding `full_index` of the 5-element state.
    fn row_of(&self, full_index: usize) -> usize {
        mode_indices(self.mode)
            .iter()
            .position(|&i| i == full_index)
            .expect("population present in this mode")
    }

    pub fn propagator(&self, t: f64) -> Result<Propagator> {
        if !(t >= 0.0) {
            return Err(Error::invalid(format!("evolution time must be >= 0, got {t}")));
        }
        Ok(Propagator {
            matrix: expm(&(&self.matrix * t))?,
            mode: self.mode,
        })
    }

    /// Linear functional `f` with `f . n(0) = ∫_0^window pump * n_S0(t) dt` under this
    /// generator. Computed from the exponential of the generator augmented by an
    /// accumulator row.
    pub fn readout_functional(&self, window: f64) -> Result<ReadoutFunctional> {
        if !(window > 0.0) {
            return Err(Error::invalid(format!("readout window must be > 0, got {window}")));
        }
        let n = self.dim();
        let mut aug = DMatrix::<f64>::zeros(n + 1, n + 1);
        aug.view_mut((0, 0), (n, n)).copy_from(&self.matrix);
        aug[(n, self.row_of(S0))] = self.pump_rate;
        let e = expm(&(aug * window))?;
        Ok(ReadoutFunctional {
            weights: DVector::from_iterator(n, (0..n).map(|j| e[(n, j)])),
            mode: self.mode,
        })
    }
}

/// `exp(R t)` for a fixed generator and duration.
#[derive(Debug, Clone)]
pub struct Propagator {
    matrix: DMatrix<f64>,
    mode: S1Mode,
}

impl Propagator {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn apply(&self, s: &StateVector) -> Result<StateVector> {
        let v = to_mode_vector(self.mode, s);
        let out = from_mode_vector(self.mode, &(&self.matrix * v));
        clamp_populations(out)
    }
}

fn clamp_populations(mut s: StateVector) -> Result<StateVector> {
    for (i, x) in s.0.iter_mut().enumerate() {
        if !x.is_finite() {
            return Err(Error::NonFinite(format!("population {i}")));
        }
        if *x < -NEGATIVE_TOL {
            return Err(Error::NegativePopulation { index: i, value: *x });
        }
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    Ok(s)
}

#[derive(Debug, Clone)]
pub struct ReadoutFunctional {
    weights: DVector<f64>,
    mode: S1Mode,
}

impl ReadoutFunctional {
    pub fn apply(&self, s: &StateVector) -> f64 {
        mode_indices(self.mode)
            .iter()
            .zip(self.weights.iter())
            .map(|(&i, w)| w * s.0[i])
            .sum()
    }
}

pub fn rate_matrix(kp: &KineticParams, op: &OpticalParams, laser_on: bool) -> RateMatrix {
    let mode = op.mode;
    let idx = mode_indices(mode);
    let n = idx.len();
    let row = |full: usize| idx.iter().position(|&i| i == full).unwrap();
    let mut m = DMatrix::<f64>::zeros(n, n);
    let mut add = |from: usize, to: usize, rate: f64| {
        if rate != 0.0 {
            let (f, t) = (row(from), row(to));
            m[(t, f)] += rate;
            m[(f, f)] -= rate;
        }
    };

    let pump = if laser_on { op.pump_rate } else { 0.0 };
    match mode {
        S1Mode::Reduced => {
            // (1 - yield) of the excitations return straight to S0 and cancel out
            for s in Sublevel::ALL {
                add(S0, triplet_index(s), pump * op.isc_yield * kp.p_of(s));
            }
        }
        S1Mode::ExplicitS1 => {
            add(S0, S1, pump);
            add(S1, S0, (1.0 - op.isc_yield) * op.s1_decay_rate);
            for s in Sublevel::ALL {
                add(S1, triplet_index(s), op.isc_yield * kp.p_of(s) * op.s1_decay_rate);
            }
        }
    }
    for s in Sublevel::ALL {
        add(triplet_index(s), S0, kp.k_of(s));
    }
    for t in Transition::ALL {
        let (a, b) = t.sublevels();
        add(triplet_index(a), triplet_index(b), kp.w_of(t));
        add(triplet_index(b), triplet_index(a), kp.w_of(t));
    }
    RateMatrix {
        matrix: m,
        mode,
        pump_rate: pump,
    }
}

pub fn evolve(state: &StateVector, r: &RateMatrix, t: f64) -> Result<StateVector> {
    r.propagator(t)?.apply(state)
}

/// Stationary populations of `r`. Fails when the stationary subspace is not
/// one-dimensional.
pub fn steady_state(r: &RateMatrix) -> Result<StateVector> {
    let n = r.dim();
    let svd = r.matrix.clone().svd(false, true);
    let vt = svd
        .v_t
        .as_ref()
        .ok_or_else(|| Error::Numerical("SVD failed".into()))?;
    let sv = &svd.singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return Err(Error::DisconnectedKinetics(n));
    }
    let tol = 1e-10 * smax;
    let null: Vec<usize> = (0..sv.len()).filter(|&i| sv[i] <= tol).collect();
    if null.len() != 1 {
        return Err(Error::DisconnectedKinetics(null.len()));
    }
    let v = vt.row(null[0]).transpose();
    let sum: f64 = v.iter().sum();
    if sum == 0.0 {
        return Err(Error::Numerical("kernel vector sums to zero".into()));
    }
    clamp_populations(r.from_mode_vector(&(v / sum)))
}

/// Ideal population exchange between the two sublevels of `transition`; `efficiency`
/// is the transferred fraction (1 for a perfect π pulse).
pub fn apply_pi_pulse(state: &StateVector, transition: Transition, efficiency: f64) -> StateVector {
    let (a, b) = transition.sublevels();
    let (ia, ib) = (triplet_index(a), triplet_index(b));
    let mut out = *state;
    let (na, nb) = (state.0[ia], state.0[ib]);
    out.0[ia] = (1.0 - efficiency) * na + efficiency * nb;
    out.0[ib] = (1.0 - efficiency) * nb + efficiency * na;
    out
}

/// Integrated fluorescence proxy of a readout pulse of length `window` starting from
/// `state`: `∫ pump * n_S0(t) dt` under the laser-on generator `r_on`.
pub fn pl_signal(state: &StateVector, r_on: &RateMatrix, window: f64) -> Result<f64> {
    Ok(r_on.readout_functional(window)?.apply(state))
}
