//! Simulation and inference for zero-field, room-temperature optically detected
//! magnetic resonance (ODMR) of photoexcited molecular triplets.
//!
//! * [`spin`]: zero-field spin Hamiltonian with I = 1 nuclei and cw-ODMR spectra.
//! * [`kinetics`]: population kinetics of the optical cycle and exact propagation.
//! * [`pulse`]: pulse programs for the relaxation experiments and the measurement plan.
//! * [`fit`]: global Levenberg-Marquardt fit of the triplet kinetic parameters.
//! * [`echo`]: Hahn-echo envelope fitting and ESEEM spectral analysis.
//! * [`sensitivity`]: relative sensing-sensitivity figure of merit.

pub mod echo;
pub mod error;
pub mod fit;
pub mod kinetics;
pub mod pulse;
pub mod sensitivity;
pub mod spin;
pub mod sublevel;

pub use error::{Error, Result};
pub use sublevel::{Sublevel, Transition};
