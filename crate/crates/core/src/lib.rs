//! Saturated absorption spectroscopy on the rubidium D2 line, coupled to a
//! closed-loop model of a DBR laser held on a sub-Doppler feature by a PID
//! servo.
//!
//! The crate is organised bottom-up:
//!
//! - [`atomic_data`]: line table loading, crossover derivation, feature lookup
//! - [`lineshape`]: Lorentzian / Doppler Gaussian profiles and widths
//! - [`spectrum`]: sweep synthesis, depth markers, line fitting, error signals
//! - [`plant`]: discrete-time DBR laser model
//! - [`servo`]: PID law, lock state machine, closed-loop runner
//! - [`harness`]: scenario configs, experiments, scope ingest, reports, plots

// NaN-rejecting checks are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod atomic_data;
pub mod harness;
pub mod lineshape;
pub mod plant;
pub mod servo;
pub mod spectrum;

pub use atomic_data::{FeatureId, Isotope, IsotopeKind, LineTable, TransitionLine};
pub use spectrum::SweepTrace;
