//! Pulse programs for the pulsed-ODMR relaxation experiments.
//!
//! Every experiment starts from the ground state with a laser pulse that populates the
//! triplet, followed by one of six microwave initialization prefixes that permute the
//! sublevel populations. Sequence A then waits a variable delay and reads out the
//! ground-state recovery. Sequence B additionally applies a probe π pulse after the
//! delay and reads out after a fixed wait.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinetics::{
    apply_pi_pulse, evolve, pl_signal, rate_matrix, KineticParams, OpticalParams, Propagator,
    ReadoutFunctional, StateVector,
};
use crate::sublevel::Transition;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PulseElement {
    Laser { duration_s: f64 },
    Microwave { transition: Transition, efficiency: f64 },
    Delay { duration_s: f64 },
    Readout { window_s: f64 },
}

impl PulseElement {
    pub fn pi(transition: Transition) -> Self {
        PulseElement::Microwave {
            transition,
            efficiency: 1.0,
        }
    }

    fn is_microwave(&self) -> bool {
        matches!(self, PulseElement::Microwave { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SequenceKind {
    A,
    B,
    /// Hand-built program; normalized like Sequence A.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SequenceDoc")]
pub struct Sequence {
    label: String,
    kind: SequenceKind,
    elements: Vec<PulseElement>,
}

#[derive(Deserialize)]
struct SequenceDoc {
    label: String,
    kind: SequenceKind,
    elements: Vec<PulseElement>,
}

impl TryFrom<SequenceDoc> for Sequence {
    type Error = Error;

    fn try_from(d: SequenceDoc) -> Result<Self> {
        Sequence::new(d.label, d.kind, d.elements)
    }
}

impl Sequence {
    pub fn new(label: impl Into<String>, kind: SequenceKind, elements: Vec<PulseElement>) -> Result<Self> {
        let readouts = elements
            .iter()
            .filter(|e| matches!(e, PulseElement::Readout { .. }))
            .count();
        if readouts != 1 {
            return Err(Error::InvalidSequence(format!(
                "expected exactly one readout, found {readouts}"
            )));
        }
        if !matches!(elements.last(), Some(PulseElement::Readout { .. })) {
            return Err(Error::InvalidSequence("sequence must end with a readout".into()));
        }
        let mut lit = false;
        for e in &elements {
            match *e {
                PulseElement::Laser { duration_s: d } | PulseElement::Delay { duration_s: d } => {
                    if !(d >= 0.0) || !d.is_finite() {
                        return Err(Error::InvalidSequence(format!("invalid duration {d}")));
                    }
                    lit |= matches!(e, PulseElement::Laser { .. });
                }
                PulseElement::Readout { window_s } => {
                    if !(window_s > 0.0) || !window_s.is_finite() {
                        return Err(Error::InvalidSequence(format!(
                            "readout window must be positive, got {window_s}"
                        )));
                    }
                }
                PulseElement::Microwave { efficiency, .. } => {
                    if !(0.0..=1.0).contains(&efficiency) {
                        return Err(Error::InvalidSequence(format!(
                            "pulse efficiency {efficiency} outside [0, 1]"
                        )));
                    }
                    if !lit {
                        return Err(Error::InvalidSequence(
                            "a laser pulse must precede any microwave pulse".into(),
                        ));
                    }
                }
            }
        }
        Ok(Self {
            label: label.into(),
            kind,
            elements,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn kind(&self) -> SequenceKind {
        self.kind
    }

    pub fn elements(&self) -> &[PulseElement] {
        &self.elements
    }

    fn readout_window(&self) -> f64 {
        match self.elements.last() {
            Some(PulseElement::Readout { window_s }) => *window_s,
            _ => unreachable!("validated on construction"),
        }
    }

    /// The same program with every microwave pulse removed.
    pub fn without_microwaves(&self) -> Sequence {
        Sequence {
            label: format!("{}-no-mw", self.label),
            kind: self.kind,
            elements: self
                .elements
                .iter()
                .filter(|e| !e.is_microwave())
                .copied()
                .collect(),
        }
    }

    /// The same program without its last microwave pulse (the Sequence B probe).
    pub fn without_probe(&self) -> Sequence {
        let mut elements = self.elements.clone();
        if let Some(i) = elements.iter().rposition(|e| e.is_microwave()) {
            elements.remove(i);
        }
        Sequence {
            label: format!("{}-no-probe", self.label),
            kind: self.kind,
            elements,
        }
    }
}

/// Laser and readout timing shared by all sequences of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceTiming {
    pub pump_duration_s: f64,
    pub readout_window_s: f64,
}

pub const DEFAULT_READOUT_WINDOW_S: f64 = 1e-6;
pub const DEFAULT_READOUT_DELAY_S: f64 = 5e-6;
/// Ground-state fraction moved by the default pump pulse.
pub const DEFAULT_PUMP_TRANSFER: f64 = 0.3;

impl SequenceTiming {
    /// Pump duration moving roughly 30% of the ground population (ignoring triplet decay
    /// during the pulse) and a 1 µs readout. Both are arbitrary choices.
    pub fn default_for(op: &OpticalParams) -> Result<Self> {
        let loss_rate = op.pump_rate() * op.isc_yield();
        if !(loss_rate > 0.0) {
            return Err(Error::invalid("pump rate and ISC yield must be positive"));
        }
        Ok(Self {
            pump_duration_s: -(1.0 - DEFAULT_PUMP_TRANSFER).ln() / loss_rate,
            readout_window_s: DEFAULT_READOUT_WINDOW_S,
        })
    }
}

/// π-pulse prefix for initialization `id` (1-6): the identity, a single swap on each
/// transition, and the two three-cycles.
pub fn build_init_sequence(id: u8) -> Result<Vec<PulseElement>> {
    let pulses: &[Transition] = match id {
        1 => &[],
        2 => &[Transition::XY],
        3 => &[Transition::XZ],
        4 => &[Transition::YZ],
        5 => &[Transition::XY, Transition::YZ],
        6 => &[Transition::YZ, Transition::XY],
        _ => return Err(Error::invalid(format!("initialization id must be 1-6, got {id}"))),
    };
    Ok(pulses.iter().map(|&t| PulseElement::pi(t)).collect())
}

fn init_transitions(id: u8) -> Result<Vec<Transition>> {
    Ok(build_init_sequence(id)?
        .into_iter()
        .filter_map(|e| match e {
            PulseElement::Microwave { transition, .. } => Some(transition),
            _ => None,
        })
        .collect())
}

pub fn build_sequence_a(init_id: u8, delay_s: f64, timing: &SequenceTiming) -> Result<Sequence> {
    let mut elements = vec![PulseElement::Laser {
        duration_s: timing.pump_duration_s,
    }];
    elements.extend(build_init_sequence(init_id)?);
    elements.push(PulseElement::Delay { duration_s: delay_s });
    elements.push(PulseElement::Readout {
        window_s: timing.readout_window_s,
    });
    Sequence::new(format!("A-init{init_id}"), SequenceKind::A, elements)
}

pub fn build_sequence_b(
    init_id: u8,
    delay_s: f64,
    probe: Transition,
    readout_delay_s: f64,
    timing: &SequenceTiming,
) -> Result<Sequence> {
    let mut elements = vec![PulseElement::Laser {
        duration_s: timing.pump_duration_s,
    }];
    elements.extend(build_init_sequence(init_id)?);
    elements.push(PulseElement::Delay { duration_s: delay_s });
    elements.push(PulseElement::pi(probe));
    elements.push(PulseElement::Delay {
        duration_s: readout_delay_s,
    });
    elements.push(PulseElement::Readout {
        window_s: timing.readout_window_s,
    });
    Sequence::new(
        format!("B-init{init_id}-{}", probe.label()),
        SequenceKind::B,
        elements,
    )
}

/// Integrated readout PL of a sequence started from the ground state, with the laser
/// pulse durations multiplied by `pump_scale`.
pub fn run_sequence(seq: &Sequence, kp: &KineticParams, op: &OpticalParams, pump_scale: f64) -> Result<f64> {
    let r_on = rate_matrix(kp, op, true);
    let r_off = rate_matrix(kp, op, false);
    let mut state = StateVector::ground();
    for e in seq.elements() {
        match *e {
            PulseElement::Laser { duration_s } => {
                state = evolve(&state, &r_on, duration_s * pump_scale)?;
            }
            PulseElement::Microwave {
                transition,
                efficiency,
            } => state = apply_pi_pulse(&state, transition, efficiency),
            PulseElement::Delay { duration_s } => state = evolve(&state, &r_off, duration_s)?,
            PulseElement::Readout { window_s } => return pl_signal(&state, &r_on, window_s),
        }
    }
    unreachable!("validated sequences end with a readout")
}

/// PL of the unperturbed ground state for the same readout.
fn ground_reference(seq: &Sequence, kp: &KineticParams, op: &OpticalParams) -> Result<f64> {
    let r_on = rate_matrix(kp, op, true);
    pl_signal(&StateVector::ground(), &r_on, seq.readout_window())
}

/// Readout PL divided by the sequence's reference: the unperturbed ground state for
/// Sequence A (and custom programs), the same program without the probe pulse for
/// Sequence B.
pub fn simulate_sequence(seq: &Sequence, kp: &KineticParams, op: &OpticalParams) -> Result<f64> {
    simulate_sequence_scaled(seq, kp, op, 1.0)
}

pub fn simulate_sequence_scaled(
    seq: &Sequence,
    kp: &KineticParams,
    op: &OpticalParams,
    pump_scale: f64,
) -> Result<f64> {
    let signal = run_sequence(seq, kp, op, pump_scale)?;
    let reference = match seq.kind() {
        SequenceKind::A | SequenceKind::Custom => ground_reference(seq, kp, op)?,
        SequenceKind::B => run_sequence(&seq.without_probe(), kp, op, pump_scale)?,
    };
    if !(reference > 0.0) {
        return Err(Error::Numerical(format!(
            "reference PL of {} is not positive",
            seq.label()
        )));
    }
    Ok(signal / reference)
}

/// ODMR contrast `(PL_on - PL_off) / PL_off` of two programs differing only in their
/// microwave pulses.
pub fn contrast(seq_on: &Sequence, seq_off: &Sequence, kp: &KineticParams, op: &OpticalParams) -> Result<f64> {
    if seq_on.without_microwaves().elements != seq_off.without_microwaves().elements {
        return Err(Error::InvalidSequence(
            "contrast sequences must differ only in microwave pulses".into(),
        ));
    }
    let on = run_sequence(seq_on, kp, op, 1.0)?;
    let off = run_sequence(seq_off, kp, op, 1.0)?;
    if off == 0.0 {
        return Err(Error::Numerical("reference PL is zero".into()));
    }
    Ok((on - off) / off)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSpec {
    pub init_id: u8,
    pub sequence_kind: SequenceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_pulse_transition: Option<Transition>,
    pub delay_grid_s: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readout_delay_s: Option<f64>,
}

impl MeasurementSpec {
    pub fn sequence_a(init_id: u8, delays: Vec<f64>) -> Self {
        Self {
            init_id,
            sequence_kind: SequenceKind::A,
            b_pulse_transition: None,
            delay_grid_s: delays,
            readout_delay_s: None,
        }
    }

    pub fn sequence_b(init_id: u8, probe: Transition, delays: Vec<f64>, readout_delay: f64) -> Self {
        Self {
            init_id,
            sequence_kind: SequenceKind::B,
            b_pulse_transition: Some(probe),
            delay_grid_s: delays,
            readout_delay_s: Some(readout_delay),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=6).contains(&self.init_id) {
            return Err(Error::invalid(format!("init_id {} outside 1-6", self.init_id)));
        }
        match self.sequence_kind {
            SequenceKind::A => {}
            SequenceKind::B => {
                if self.b_pulse_transition.is_none() {
                    return Err(Error::invalid("Sequence B needs a probe transition"));
                }
                match self.readout_delay_s {
                    Some(d) if d >= 0.0 && d.is_finite() => {}
                    _ => return Err(Error::invalid("Sequence B needs a readout delay >= 0")),
                }
            }
            SequenceKind::Custom => {
                return Err(Error::invalid("measurements use Sequence A or B"));
            }
        }
        if self.delay_grid_s.iter().any(|&d| !(d >= 0.0) || !d.is_finite()) {
            return Err(Error::invalid("delays must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        match (self.sequence_kind, self.b_pulse_transition) {
            (SequenceKind::B, Some(t)) => format!("B-init{}-{}", self.init_id, t.label()),
            _ => format!("A-init{}", self.init_id),
        }
    }

    /// Distinct microwave transitions used by the initialization and probe pulses.
    pub fn transitions_used(&self) -> Result<Vec<Transition>> {
        let mut t = init_transitions(self.init_id)?;
        t.extend(self.b_pulse_transition);
        t.sort();
        t.dedup();
        Ok(t)
    }

    pub fn sequence(&self, delay_s: f64, timing: &SequenceTiming) -> Result<Sequence> {
        match (self.sequence_kind, self.b_pulse_transition) {
            (SequenceKind::B, Some(probe)) => build_sequence_b(
                self.init_id,
                delay_s,
                probe,
                self.readout_delay_s.unwrap_or(0.0),
                timing,
            ),
            _ => build_sequence_a(self.init_id, delay_s, timing),
        }
    }
}

/// All 24 combinations of six initializations with Sequence A and with Sequence B on each
/// of the three probe transitions.
pub fn all_measurements(delays: &[f64], readout_delay: f64) -> Vec<MeasurementSpec> {
    let mut out: Vec<MeasurementSpec> = (1..=6)
        .map(|id| MeasurementSpec::sequence_a(id, delays.to_vec()))
        .collect();
    for id in 1..=6 {
        for t in Transition::ALL {
            out.push(MeasurementSpec::sequence_b(id, t, delays.to_vec(), readout_delay));
        }
    }
    out
}

/// The 22-measurement plan: all combinations except those needing all three microwave
/// frequencies across initialization and probe.
pub fn generate_plan(delays: &[f64], readout_delay: f64) -> Result<Vec<MeasurementSpec>> {
    if delays.is_empty() {
        return Err(Error::invalid("delay grid is empty"));
    }
    let mut plan = Vec::with_capacity(22);
    for m in all_measurements(delays, readout_delay) {
        m.validate()?;
        if m.transitions_used()?.len() < 3 {
            plan.push(m);
        }
    }
    Ok(plan)
}

/// Logarithmic grid with `per_decade` points per decade from `start` to `stop` inclusive.
pub fn log_delay_grid(start: f64, stop: f64, per_decade: usize) -> Result<Vec<f64>> {
    if !(start > 0.0 && stop > start) || per_decade == 0 {
        return Err(Error::invalid("log grid needs 0 < start < stop and points per decade > 0"));
    }
    let decades = (stop / start).log10();
    let n = (decades * per_decade as f64).ceil() as usize + 1;
    Ok((0..n)
        .map(|i| start * 10f64.powf(decades * i as f64 / (n - 1) as f64))
        .collect())
}

/// 30 points per decade from 100 ns to ten times the longest sublevel lifetime.
pub fn default_delay_grid(kp: &KineticParams) -> Result<Vec<f64>> {
    let kmin = kp.k().iter().cloned().fold(f64::INFINITY, f64::min);
    if !(kmin > 0.0) {
        return Err(Error::invalid("default grid needs all k_i > 0"));
    }
    log_delay_grid(1e-7, 10.0 / kmin, 30)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedCurve {
    pub delays_s: Vec<f64>,
    pub signal: Vec<f64>,
    pub spec: MeasurementSpec,
}

/// Simulates whole measurement curves, sharing propagators between curves and delays.
pub struct Simulator {
    kp: KineticParams,
    op: OpticalParams,
    timing: SequenceTiming,
    pump_scale: f64,
    after_laser: StateVector,
    readout: ReadoutFunctional,
    ground_pl: f64,
    r_off: crate::kinetics::RateMatrix,
}

impl Simulator {
    pub fn new(kp: &KineticParams, op: &OpticalParams, timing: &SequenceTiming) -> Result<Self> {
        Self::with_pump_scale(kp, op, timing, 1.0)
    }

    pub fn with_pump_scale(
        kp: &KineticParams,
        op: &OpticalParams,
        timing: &SequenceTiming,
        pump_scale: f64,
    ) -> Result<Self> {
        if !(pump_scale > 0.0) || !pump_scale.is_finite() {
            return Err(Error::invalid(format!("pump scale must be positive, got {pump_scale}")));
        }
        let r_on = rate_matrix(kp, op, true);
        let r_off = rate_matrix(kp, op, false);
        let after_laser = evolve(
            &StateVector::ground(),
            &r_on,
            timing.pump_duration_s * pump_scale,
        )?;
        let readout = r_on.readout_functional(timing.readout_window_s)?;
        let ground_pl = readout.apply(&StateVector::ground());
        Ok(Self {
            kp: *kp,
            op: *op,
            timing: *timing,
            pump_scale,
            after_laser,
            readout,
            ground_pl,
            r_off,
        })
    }

    pub fn kinetic(&self) -> &KineticParams {
        &self.kp
    }

    pub fn optical(&self) -> &OpticalParams {
        &self.op
    }

    pub fn timing(&self) -> &SequenceTiming {
        &self.timing
    }

    pub fn pump_scale(&self) -> f64 {
        self.pump_scale
    }

    fn initialized(&self, init_id: u8) -> Result<StateVector> {
        let mut s = self.after_laser;
        for t in init_transitions(init_id)? {
            s = apply_pi_pulse(&s, t, 1.0);
        }
        Ok(s)
    }

    fn propagators(&self, times: impl Iterator<Item = f64>) -> Result<BTreeMap<u64, Propagator>> {
        let mut unique: Vec<f64> = times.collect();
        unique.sort_by(f64::total_cmp);
        unique.dedup();
        unique
            .par_iter()
            .map(|&t| Ok((t.to_bits(), self.r_off.propagator(t)?)))
            .collect()
    }

    pub fn simulate_curve(&self, spec: &MeasurementSpec) -> Result<SimulatedCurve> {
        let mut out = self.simulate_curves(std::slice::from_ref(spec))?;
        Ok(out.remove(0))
    }

    pub fn simulate_curves(&self, specs: &[MeasurementSpec]) -> Result<Vec<SimulatedCurve>> {
        for s in specs {
            s.validate()?;
        }
        let times = specs.iter().flat_map(|s| {
            s.delay_grid_s
                .iter()
                .copied()
                .chain(s.readout_delay_s)
        });
        let props = self.propagators(times)?;
        let prop = |t: f64| &props[&t.to_bits()];

        specs
            .par_iter()
            .map(|spec| {
                self.curve_with(spec, &prop).map_err(|e| Error::Curve {
                    curve: spec.label(),
                    source: Box::new(e),
                })
            })
            .collect()
    }

    fn curve_with<'a>(
        &self,
        spec: &MeasurementSpec,
        prop: &impl Fn(f64) -> &'a Propagator,
    ) -> Result<SimulatedCurve> {
        let init = self.initialized(spec.init_id)?;
        let mut signal = Vec::with_capacity(spec.delay_grid_s.len());
        for &d in &spec.delay_grid_s {
            let s = prop(d).apply(&init)?;
            let value = match (spec.sequence_kind, spec.b_pulse_transition, spec.readout_delay_s) {
                (SequenceKind::B, Some(probe), Some(rd)) => {
                    let wait = prop(rd);
                    let on = wait.apply(&apply_pi_pulse(&s, probe, 1.0))?;
                    let off = wait.apply(&s)?;
                    self.readout.apply(&on) / self.readout.apply(&off)
                }
                _ => self.readout.apply(&s) / self.ground_pl,
            };
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("signal at delay {d}")));
            }
            signal.push(value);
        }
        Ok(SimulatedCurve {
            delays_s: spec.delay_grid_s.clone(),
            signal,
            spec: spec.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetics::presets::preset;
    use approx::assert_abs_diff_eq;
    use std::collections::HashSet;

    fn dap() -> (KineticParams, OpticalParams, SequenceTiming) {
        let p = preset("DAP-fig4c").unwrap();
        let t = SequenceTiming::default_for(&p.optical).unwrap();
        (p.kinetic, p.optical, t)
    }

    fn permute(init: u8, pops: [f64; 3]) -> [f64; 3] {
        let mut s = StateVector::from_triplet(pops);
        for e in build_init_sequence(init).unwrap() {
            if let PulseElement::Microwave { transition, .. } = e {
                s = apply_pi_pulse(&s, transition, 1.0);
            }
        }
        s.triplets()
    }

    #[test]
    fn init_sequences_examples() {
        assert_eq!(permute(1, [0.60, 0.21, 0.19]), [0.60, 0.21, 0.19]);
        assert_eq!(permute(2, [0.60, 0.21, 0.19]), [0.21, 0.60, 0.19]);
        assert!(build_init_sequence(0).is_err());
        assert!(build_init_sequence(7).is_err());
    }

    #[test]
    fn init_sequences_realize_s3() {
        // brute-force enumeration of the six permutations of three distinct values
        let v = [1.0, 2.0, 3.0];
        let mut all = HashSet::new();
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    if a != b && b != c && a != c {
                        all.insert([v[a] as u8, v[b] as u8, v[c] as u8]);
                    }
                }
            }
        }
        let got: HashSet<[u8; 3]> = (1..=6).map(|i| permute(i, v).map(|x| x as u8)).collect();
        assert_eq!(got.len(), 6);
        assert_eq!(got, all);
    }

    #[test]
    fn sequence_validation() {
        let ro = PulseElement::Readout { window_s: 1e-6 };
        assert!(Sequence::new("x", SequenceKind::Custom, vec![]).is_err());
        assert!(Sequence::new("x", SequenceKind::Custom, vec![ro, PulseElement::Delay { duration_s: 1.0 }]).is_err());
        assert!(Sequence::new("x", SequenceKind::Custom, vec![ro, ro]).is_err());
        assert!(Sequence::new("x", SequenceKind::Custom, vec![PulseElement::pi(Transition::XY), ro]).is_err());
        assert!(Sequence::new("x", SequenceKind::Custom, vec![PulseElement::Delay { duration_s: -1.0 }, ro]).is_err());
        assert!(Sequence::new("x", SequenceKind::Custom, vec![PulseElement::Readout { window_s: 0.0 }]).is_err());
        assert!(Sequence::new("x", SequenceKind::Custom, vec![ro]).is_ok());
    }

    #[test]
    fn bare_readout_signal_is_one() {
        let (k, o, _) = dap();
        let seq = Sequence::new("ro", SequenceKind::Custom, vec![PulseElement::Readout { window_s: 1e-6 }]).unwrap();
        assert_abs_diff_eq!(simulate_sequence(&seq, &k, &o).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn sequence_a_limits() {
        let (k, o, mut t) = dap();
        // long delay: full recovery
        for id in 1..=6 {
            let seq = build_sequence_a(id, 2e-3, &t).unwrap();
            assert_abs_diff_eq!(simulate_sequence(&seq, &k, &o).unwrap(), 1.0, epsilon = 1e-6);
        }
        // zero delay with a vanishing window: 1 - triplet population
        t.readout_window_s = 1e-12;
        let seq = build_sequence_a(1, 0.0, &t).unwrap();
        let after = evolve(&StateVector::ground(), &rate_matrix(&k, &o, true), t.pump_duration_s).unwrap();
        let triplet: f64 = after.triplets().iter().sum();
        assert_abs_diff_eq!(simulate_sequence(&seq, &k, &o).unwrap(), 1.0 - triplet, epsilon = 1e-6);
        assert!((triplet - 0.3).abs() < 0.05, "triplet yield {triplet}");
    }

    #[test]
    fn sequence_a_matches_manual_composition() {
        let (k, o, t) = dap();
        let d = 7e-6;
        let seq = build_sequence_a(5, d, &t).unwrap();
        let r_on = rate_matrix(&k, &o, true);
        let r_off = rate_matrix(&k, &o, false);
        let mut s = evolve(&StateVector::ground(), &r_on, t.pump_duration_s).unwrap();
        s = apply_pi_pulse(&s, Transition::XY, 1.0);
        s = apply_pi_pulse(&s, Transition::YZ, 1.0);
        s = evolve(&s, &r_off, d).unwrap();
        let want = pl_signal(&s, &r_on, t.readout_window_s).unwrap()
            / pl_signal(&StateVector::ground(), &r_on, t.readout_window_s).unwrap();
        assert_abs_diff_eq!(simulate_sequence(&seq, &k, &o).unwrap(), want, epsilon = 1e-12);
    }

    #[test]
    fn probe_between_equal_populations_is_noop() {
        let (k, o, t) = dap();
        let kp = KineticParams::new([k.k()[0], k.k()[0], k.k()[2]], [1e4, 2e4, 2e4], [0.4, 0.4, 0.2]).unwrap();
        let seq = build_sequence_b(1, 0.0, Transition::XY, 2e-6, &t).unwrap();
        assert_abs_diff_eq!(simulate_sequence(&seq, &kp, &o).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn xz_probe_changes_recovery_like_direct_kinetics() {
        let (k, o, t) = dap();
        let seq = build_sequence_b(1, 0.0, Transition::XZ, 2e-6, &t).unwrap();
        let sig = simulate_sequence(&seq, &k, &o).unwrap();
        // direct oracle: moving the bright Tx population into dark Tz slows recovery
        let r_on = rate_matrix(&k, &o, true);
        let r_off = rate_matrix(&k, &o, false);
        let s = evolve(&StateVector::ground(), &r_on, t.pump_duration_s).unwrap();
        let on = evolve(&apply_pi_pulse(&s, Transition::XZ, 1.0), &r_off, 2e-6).unwrap();
        let off = evolve(&s, &r_off, 2e-6).unwrap();
        let expected_sign = (on.ground_population() - off.ground_population()).signum();
        assert_eq!((sig - 1.0).signum(), expected_sign);
        assert!(sig < 1.0);
    }

    #[test]
    fn zero_readout_delay_matches_sequence_a_raw() {
        let (k, o, mut t) = dap();
        t.readout_window_s = 1e-12;
        for probe in Transition::ALL {
            let b = build_sequence_b(3, 5e-6, probe, 0.0, &t).unwrap();
            let a = build_sequence_a(3, 5e-6, &t).unwrap();
            let rb = run_sequence(&b, &k, &o, 1.0).unwrap();
            let ra = run_sequence(&a, &k, &o, 1.0).unwrap();
            assert!((rb - ra).abs() <= 1e-6 * ra);
        }
    }

    #[test]
    fn plan_has_22_measurements() {
        let plan = generate_plan(&[1e-6, 2e-6], 2e-6).unwrap();
        assert_eq!(plan.len(), 22);
        assert_eq!(plan.iter().filter(|m| m.sequence_kind == SequenceKind::A).count(), 6);
        let keys: HashSet<_> = plan
            .iter()
            .map(|m| (m.init_id, m.sequence_kind, m.b_pulse_transition))
            .collect();
        assert_eq!(keys.len(), 22);
        let all = all_measurements(&[1e-6], 2e-6);
        assert_eq!(all.len(), 24);
        let excluded: Vec<_> = all
            .iter()
            .filter(|m| m.transitions_used().unwrap().len() == 3)
            .map(|m| m.label())
            .collect();
        assert_eq!(excluded, vec!["B-init5-xz", "B-init6-xz"]);
        assert!(generate_plan(&[], 1e-6).is_err());
    }

    #[test]
    fn simulator_matches_sequence_interpreter() {
        let (k, o, t) = dap();
        let delays = vec![0.0, 1e-7, 3e-6, 2e-5, 1e-4];
        let plan = generate_plan(&delays, 2e-6).unwrap();
        let sim = Simulator::new(&k, &o, &t).unwrap();
        let curves = sim.simulate_curves(&plan).unwrap();
        for c in &curves {
            for (&d, &v) in c.delays_s.iter().zip(&c.signal) {
                let seq = c.spec.sequence(d, &t).unwrap();
                let want = simulate_sequence(&seq, &k, &o).unwrap();
                assert!((v - want).abs() < 1e-10, "{} at {d}: {v} vs {want}", c.spec.label());
            }
        }
    }

    #[test]
    fn pump_scale_stretches_laser() {
        let (k, o, t) = dap();
        let spec = MeasurementSpec::sequence_a(2, vec![3e-6]);
        let sim = Simulator::with_pump_scale(&k, &o, &t, 1.7).unwrap();
        let v = sim.simulate_curve(&spec).unwrap().signal[0];
        let seq = spec.sequence(3e-6, &t).unwrap();
        let want = simulate_sequence_scaled(&seq, &k, &o, 1.7).unwrap();
        assert_abs_diff_eq!(v, want, epsilon = 1e-12);
        let mut t2 = t;
        t2.pump_duration_s *= 1.7;
        let want2 = simulate_sequence(&spec.sequence(3e-6, &t2).unwrap(), &k, &o).unwrap();
        assert_abs_diff_eq!(v, want2, epsilon = 1e-12);
    }

    #[test]
    fn sequence_a_signals_within_unit_interval() {
        let (k, o, t) = dap();
        let grid = default_delay_grid(&k).unwrap();
        let plan = generate_plan(&grid, 2e-6).unwrap();
        let curves = Simulator::new(&k, &o, &t).unwrap().simulate_curves(&plan).unwrap();
        for c in curves.iter().filter(|c| c.spec.sequence_kind == SequenceKind::A) {
            assert!(c.signal.iter().all(|&s| s > 0.0 && s <= 1.0 + 1e-12));
            assert!((c.signal.last().unwrap() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn tx_rich_initializations_recover_fastest() {
        let (k, o, t) = dap();
        let sim = Simulator::new(&k, &o, &t).unwrap();
        let d = 5e-6;
        let value = |id| sim.simulate_curve(&MeasurementSpec::sequence_a(id, vec![d])).unwrap().signal[0];
        // Tx gets Px in inits 1 and 4, Py in 2 and 6, Pz in 3 and 5 (cycles checked above)
        let tx_share = |id: u8| permute(id, k.p())[0];
        let mut ids: Vec<u8> = (1..=6).collect();
        ids.sort_by(|&a, &b| tx_share(b).total_cmp(&tx_share(a)));
        // the two Px-in-Tx initializations recover more than the two Pz-in-Tx ones
        let best = value(ids[0]).min(value(ids[1]));
        let worst = value(ids[4]).max(value(ids[5]));
        assert!(best > worst, "{best} vs {worst}");
    }

    #[test]
    fn contrast_examples() {
        let (k, o, t) = dap();
        let off = build_sequence_a(1, 2e-6, &t).unwrap();
        assert_eq!(contrast(&off, &off, &k, &o).unwrap(), 0.0);
        let on = build_sequence_b(1, 0.0, Transition::XZ, 2e-6, &t).unwrap();
        let off = on.without_probe();
        let c = contrast(&on, &off, &k, &o).unwrap();
        assert!(c < 0.0);
        // undo the probe with a second π pulse on the same pair: sign flips back to zero
        // and a pre-swap of the probed pair reverses the sign
        let mut swapped = on.elements().to_vec();
        swapped.insert(1, PulseElement::pi(Transition::XZ));
        let on_sw = Sequence::new("sw", SequenceKind::B, swapped).unwrap();
        let off_sw = on_sw.without_probe();
        let c_sw = contrast(&on_sw, &off_sw, &k, &o).unwrap();
        assert!(c_sw > 0.0, "{c_sw}");
        let mismatched = build_sequence_a(1, 3e-6, &t).unwrap();
        assert!(contrast(&on, &mismatched, &k, &o).is_err());
    }

    #[test]
    fn equal_decay_rates_remove_contrast() {
        let (k, o, t) = dap();
        let kp = KineticParams::new([5e4; 3], k.w(), k.p()).unwrap();
        for probe in Transition::ALL {
            for rd in [0.0, 1e-6, 1e-5] {
                let on = build_sequence_b(2, 1e-6, probe, rd, &t).unwrap();
                let c = contrast(&on, &on.without_probe(), &kp, &o).unwrap();
                assert!(c.abs() < 1e-9, "{c}");
            }
        }
    }

    #[test]
    fn log_grid() {
        let g = log_delay_grid(1e-7, 1e-4, 30).unwrap();
        assert_eq!(g.len(), 91);
        assert_abs_diff_eq!(g[0], 1e-7, epsilon = 1e-20);
        assert_abs_diff_eq!(*g.last().unwrap(), 1e-4, epsilon = 1e-15);
        assert!(log_delay_grid(0.0, 1.0, 3).is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let m = MeasurementSpec::sequence_b(4, Transition::XZ, vec![1e-6], 2e-6);
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.contains("\"xz\""));
        assert_eq!(serde_json::from_str::<MeasurementSpec>(&s).unwrap(), m);
        let seq = m.sequence(1e-6, &SequenceTiming { pump_duration_s: 1e-6, readout_window_s: 1e-6 }).unwrap();
        let js = serde_json::to_string(&seq).unwrap();
        assert_eq!(serde_json::from_str::<Sequence>(&js).unwrap(), seq);
    }
}
