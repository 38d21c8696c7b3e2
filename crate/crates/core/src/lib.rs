//! Numerical toolkit for output-stability analysis of disturbed nonlinear
//! systems `x' = f(x, d)` with an error output `y = h(x)` and a measurement
//! output `w = g(x)`.
//!
//! The crate provides four layers:
//!
//! * [`gains`] — class-K / class-K∞ scalar gains and class-KL envelopes as
//!   evaluable, invertible, composable objects, plus the explicit gain
//!   constructions used by the stability arguments (max-composition, the
//!   MES→SIT gain, KL factorization, settle times).
//! * [`system`] / [`catalog`] — disturbed system descriptions with compact
//!   disturbance sets, region predicates, and a small catalog of reference
//!   systems used throughout the test suites.
//! * [`trajectory`] — fixed-step RK4 ensemble simulation under sampled
//!   disturbance signals, running sup norms, hitting times, nearby-trajectory
//!   tracking certificates, and empirical reachability tables.
//! * [`checks`] / [`lyapunov`] — checkers for the five output-stability
//!   properties (MES, RES, SIT, RMEB, REB), two-regime splitting, empirical
//!   KL-envelope fitting, small-gain hypothesis verification, and the
//!   trajectory-supremum value function with its sandwich and decrease
//!   certificates, backed by scalar comparison ODEs.
//!
//! Everything is deterministic given explicit seeds; all core types are
//! immutable after construction and safe to share across threads.

pub mod catalog;
pub mod checks;
pub mod error;
pub mod gains;
pub mod grid;
pub mod lyapunov;
pub mod seeds;
pub mod signal;
pub mod system;
pub mod trajectory;

pub use checks::{PropertyReport, Verdict, Violation};
pub use error::{Error, Result};
pub use gains::{KlEnvelope, ScalarGain};
pub use grid::StateGrid;
pub use lyapunov::{ComparisonSolution, LyapunovTable};
pub use signal::DisturbanceSignal;
pub use system::{DisturbanceSet, DisturbanceStrategy, DisturbedSystem, RegionPredicate};
pub use trajectory::{Ensemble, HitTime, SimParams, Trajectory};

/// Absolute tie tolerance for strict inequalities evaluated on sampled data.
///
/// Grid sampling cannot witness strictness exactly; values within this band
/// of the boundary count as ties (inside a closed region, not a violation).
pub const TIE_TOL: f64 = 1e-12;
