//! Trajectory-supremum value functions on state grids, their sandwich and
//! decrease certificates, checks for user-supplied candidates in integral and
//! smooth-gradient form, and the scalar comparison ODE machinery.
//!
//! For a region `D` with complement `E`, the value function is
//!
//! ```text
//! V(xi) = sup over trajectories from xi, sup over t in [0, theta]
//!         of alpha_tilde(|y(t)|) * e^t
//! ```
//!
//! truncated at the per-point horizon and at the hitting time `theta` of `D`;
//! `V = 0` on `D`. The table is an under-approximation of the true supremum
//! (finite trajectory sample, finite horizon), so all decrease checks carry a
//! multiplicative tolerance.

use crate::error::{Error, Result};
use crate::gains::{KlEnvelope, ScalarGain};
use crate::grid::StateGrid;
use crate::seeds::{derive_seed, derive_seed2};
use crate::system::{DisturbanceStrategy, DisturbedSystem, RegionPredicate};
use crate::trajectory::{hitting_time, integrate, Ensemble};
use crate::TIE_TOL;
use rayon::prelude::*;
use serde::Serialize;

/// Construction parameters of a value-function table.
#[derive(Debug, Clone, Serialize)]
pub struct ValueFnParams {
    pub alpha_tilde: ScalarGain,
    /// Trajectories sampled per grid point.
    pub budget: usize,
    /// Unconditional horizon cap (mandatory: the `e^t` weight overflows).
    pub horizon_cap: f64,
    pub dt: f64,
    pub hold: f64,
    pub strategy: DisturbanceStrategy,
    pub seed: u64,
    pub blowup_bound: f64,
    /// Decay envelope used to truncate per-point horizons via settle times.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_tilde: Option<KlEnvelope>,
}

impl ValueFnParams {
    pub fn new(alpha_tilde: ScalarGain, horizon_cap: f64, seed: u64) -> Self {
        Self {
            alpha_tilde,
            budget: 1,
            horizon_cap,
            dt: 1e-3,
            hold: 0.1,
            strategy: DisturbanceStrategy::Zero,
            seed,
            blowup_bound: 1e8,
            beta_tilde: None,
        }
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_strategy(mut self, strategy: DisturbanceStrategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn with_hold(mut self, hold: f64) -> Self {
        self.hold = hold;
        self
    }

    pub fn with_beta_tilde(mut self, beta: KlEnvelope) -> Self {
        self.beta_tilde = Some(beta);
        self
    }

    fn validate(&self) -> Result<()> {
        self.alpha_tilde.validate()?;
        if !self.alpha_tilde.is_unbounded() {
            return Err(Error::InvalidGain(
                "the value-function weight gain must be class K-infinity".into(),
            ));
        }
        if self.budget == 0 {
            return Err(Error::InvalidConfig("budget must be >= 1".into()));
        }
        if !(self.horizon_cap > 0.0 && self.horizon_cap <= 700.0) {
            return Err(Error::InvalidConfig(format!(
                "horizon_cap must lie in (0, 700] (e^t overflows past that), got {}",
                self.horizon_cap
            )));
        }
        if self.dt <= 0.0 || self.hold <= 0.0 {
            return Err(Error::InvalidConfig(
                "dt and hold must be positive".into(),
            ));
        }
        if let Some(beta) = &self.beta_tilde {
            beta.validate()?;
        }
        Ok(())
    }
}

/// Per-point certificate metadata.
#[derive(Debug, Clone, Serialize)]
pub struct PointMeta {
    pub in_region: bool,
    /// Horizon actually used for the supremum at this point.
    pub horizon_used: f64,
    pub budget_used: usize,
    /// The error output vanishes while the magnitude does not: no finite
    /// settle-time truncation exists, so the point is capped and flagged.
    pub unbounded_horizon: bool,
}

/// State-grid values of the trajectory-supremum value function.
#[derive(Debug, Clone, Serialize)]
pub struct LyapunovTable {
    pub grid: StateGrid,
    pub values: Vec<f64>,
    pub meta: Vec<PointMeta>,
    pub params: ValueFnParams,
    pub region: String,
}

impl LyapunovTable {
    pub fn value(&self, point_index: usize) -> f64 {
        self.values[point_index]
    }

    /// Multilinear interpolation at `x`; the enclosing cell must lie in the
    /// grid hull and must not touch the region (the jump of the value
    /// function to 0 inside such cells is not representable at grid
    /// resolution).
    pub fn interpolate(
        &self,
        x: &[f64],
        sys: &DisturbedSystem,
        region: &RegionPredicate,
    ) -> Result<InterpolatedValue> {
        let Some(cell) = self.grid.locate_cell(x) else {
            return Ok(InterpolatedValue::OutsideHull);
        };
        for corner in self.grid.cell_corners(&cell) {
            if self.meta[corner].in_region {
                return Ok(InterpolatedValue::UnresolvedCell);
            }
        }
        if region.contains(sys, &self.grid.cell_center(&cell))? {
            return Ok(InterpolatedValue::UnresolvedCell);
        }
        let v = self
            .grid
            .interpolate(&self.values, x)
            .expect("cell located above");
        Ok(InterpolatedValue::Value(v))
    }

    /// Writes the table as CSV: grid coordinates, value, horizon used,
    /// in-region flag.
    pub fn write_csv(&self, out: &mut impl std::io::Write) -> Result<()> {
        for d in 1..=self.grid.dim() {
            write!(out, "xi_{d},")?;
        }
        writeln!(out, "value,horizon_used,in_region")?;
        for (i, point) in self.grid.points().enumerate() {
            for c in &point {
                write!(out, "{c},")?;
            }
            writeln!(
                out,
                "{},{},{}",
                self.values[i], self.meta[i].horizon_used, self.meta[i].in_region
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InterpolatedValue {
    Value(f64),
    OutsideHull,
    UnresolvedCell,
}

/// Builds the value-function table: for each grid point outside the region,
/// the max over `budget` sampled trajectories and over grid times up to the
/// hitting time and the per-point horizon of `alpha_tilde(|y(t)|) e^t`.
///
/// The per-point horizon is `min{horizon_cap, T}` where `T` is the settle
/// time of `beta_tilde` at `(2 |xi|_omega, alpha_tilde(|h(xi)| / 2))` when an
/// envelope is supplied. The table under-approximates the true supremum.
pub fn build_value_function(
    sys: &DisturbedSystem,
    region: &RegionPredicate,
    grid: &StateGrid,
    params: &ValueFnParams,
) -> Result<LyapunovTable> {
    params.validate()?;
    if grid.dim() != sys.dim() {
        return Err(Error::DimensionMismatch {
            expected: sys.dim(),
            got: grid.dim(),
        });
    }

    let entries: Vec<(f64, PointMeta)> = (0..grid.len())
        .into_par_iter()
        .map(|idx| value_at_point(sys, region, &grid.point(idx), idx, params))
        .collect::<Result<Vec<_>>>()?;

    let (values, meta) = entries.into_iter().unzip();
    Ok(LyapunovTable {
        grid: grid.clone(),
        values,
        meta,
        params: params.clone(),
        region: region.describe(),
    })
}

fn value_at_point(
    sys: &DisturbedSystem,
    region: &RegionPredicate,
    xi: &[f64],
    point_index: usize,
    params: &ValueFnParams,
) -> Result<(f64, PointMeta)> {
    if region.contains(sys, xi)? {
        return Ok((
            0.0,
            PointMeta {
                in_region: true,
                horizon_used: 0.0,
                budget_used: 0,
                unbounded_horizon: false,
            },
        ));
    }

    let omega = sys.omega(xi);
    let err0 = sys.error_norm(xi);
    let mut unbounded_horizon = false;
    let mut horizon = params.horizon_cap;
    if omega == 0.0 {
        horizon = 0.0;
    } else if err0 == 0.0 {
        unbounded_horizon = true;
    } else if let Some(beta) = &params.beta_tilde {
        let target = params.alpha_tilde.evaluate(err0 / 2.0)?;
        match beta.settle_time(2.0 * omega, target) {
            Ok(t) => horizon = horizon.min(t),
            Err(Error::NoDecayWithinHorizon { .. }) => unbounded_horizon = true,
            Err(e) => return Err(e),
        }
    }

    let mut best = params.alpha_tilde.evaluate(err0)?; // t = 0 term, e^0 = 1
    for sample in 0..params.budget {
        let seed = derive_seed2(params.seed, point_index as u64, sample as u64);
        let signal =
            sys.sample_disturbance_signal(horizon.max(params.dt), params.hold, params.strategy, seed)?;
        let traj = integrate(sys, xi, &signal, horizon, params.dt, params.blowup_bound)?;
        let theta = hitting_time(&traj, region, sys)?.or_horizon(f64::INFINITY);
        for k in 0..traj.len() {
            let t = traj.time(k);
            if t > theta + TIE_TOL {
                break;
            }
            let term = params.alpha_tilde.evaluate(traj.error_norm(k))? * t.exp();
            if !term.is_finite() {
                return Err(Error::Overflow("value-function weight"));
            }
            best = best.max(term);
        }
    }

    Ok((
        best,
        PointMeta {
            in_region: false,
            horizon_used: horizon,
            budget_used: params.budget,
            unbounded_horizon,
        },
    ))
}

/// A per-grid-point bound failure.
#[derive(Debug, Clone, Serialize)]
pub struct GridViolation {
    pub point_index: usize,
    pub point: Vec<f64>,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
}

/// Result of the sandwich check
/// `alpha_tilde(|h(xi)|) <= V(xi) <= beta_tilde(|xi|_omega, 0)`.
#[derive(Debug, Clone, Serialize)]
pub struct SandwichReport {
    pub checked: usize,
    pub lower_violations: Vec<GridViolation>,
    pub upper_violations: Vec<GridViolation>,
}

impl SandwichReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.lower_violations.is_empty() && self.upper_violations.is_empty()
    }
}

/// Verifies both sandwich inequalities at every grid point outside the
/// region. The upper bound carries the multiplicative slack; the lower bound
/// holds by construction and is checked at tie tolerance.
pub fn sandwich_check(
    table: &LyapunovTable,
    sys: &DisturbedSystem,
    beta_tilde: &KlEnvelope,
    slack: f64,
) -> Result<SandwichReport> {
    beta_tilde.validate()?;
    let mut report = SandwichReport {
        checked: 0,
        lower_violations: Vec::new(),
        upper_violations: Vec::new(),
    };
    for (i, point) in table.grid.points().enumerate() {
        if table.meta[i].in_region {
            continue;
        }
        report.checked += 1;
        let v = table.values[i];
        let lower = table.params.alpha_tilde.evaluate(sys.error_norm(&point))?;
        if lower > v + TIE_TOL {
            report.lower_violations.push(GridViolation {
                point_index: i,
                point: point.clone(),
                lhs: lower,
                rhs: v,
                margin: lower - v,
            });
        }
        let upper = beta_tilde.evaluate(sys.omega(&point), 0.0)?;
        if v > slack * upper + TIE_TOL {
            report.upper_violations.push(GridViolation {
                point_index: i,
                point,
                lhs: v,
                rhs: upper,
                margin: v - slack * upper,
            });
        }
    }
    Ok(report)
}

/// Options for the exponential decrease check.
#[derive(Debug, Clone)]
pub struct DecreaseProbeOpts {
    /// Number of probe trajectories (started from grid points outside the
    /// region, spread deterministically).
    pub probes: usize,
    pub seed: u64,
    pub slack: f64,
    /// Probe horizon (clamped to the table's horizon cap).
    pub horizon: f64,
}

/// Result of the exponential decrease check along probe trajectories.
#[derive(Debug, Clone, Serialize)]
pub struct ExpDecreaseReport {
    pub probes_run: usize,
    pub checked: usize,
    /// Failures of `V(x(t)) <= V(x(0)) e^{-t}` (interpolated, with slack).
    pub violations: Vec<GridViolation>,
    /// Failures of the integral form
    /// `V(x(0)) e^{-t} + integral of V(x(s)) <= V(x(0))`.
    pub integral_violations: Vec<GridViolation>,
    /// Probe times skipped because the state left the grid hull.
    pub skipped_out_of_hull: usize,
    /// Probe times skipped because the enclosing cell touches the region.
    pub skipped_unresolved_cell: usize,
}

impl ExpDecreaseReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.violations.is_empty() && self.integral_violations.is_empty()
    }
}

/// Samples trajectories from grid points and checks the exponential decrease
/// of the interpolated table along them, in both pointwise and integral form.
/// A probe stops at the first time it enters the region, leaves the grid
/// hull, or enters a cell touching the region.
pub fn exp_decrease_check(
    table: &LyapunovTable,
    sys: &DisturbedSystem,
    region: &RegionPredicate,
    opts: &DecreaseProbeOpts,
) -> Result<ExpDecreaseReport> {
    let mut report = ExpDecreaseReport {
        probes_run: 0,
        checked: 0,
        violations: Vec::new(),
        integral_violations: Vec::new(),
        skipped_out_of_hull: 0,
        skipped_unresolved_cell: 0,
    };
    let candidates: Vec<usize> = (0..table.grid.len())
        .filter(|&i| !table.meta[i].in_region)
        .collect();
    if candidates.is_empty() || opts.probes == 0 {
        return Ok(report);
    }
    let step = (candidates.len() / opts.probes.min(candidates.len())).max(1);
    let dt = table.params.dt;
    let horizon = opts.horizon.min(table.params.horizon_cap);

    for &idx in candidates.iter().step_by(step).take(opts.probes) {
        report.probes_run += 1;
        let xi = table.grid.point(idx);
        let v0 = table.values[idx];
        let seed = derive_seed(opts.seed, idx as u64);
        let signal = sys.sample_disturbance_signal(
            horizon.max(dt),
            table.params.hold,
            table.params.strategy,
            seed,
        )?;
        let traj = integrate(sys, &xi, &signal, horizon, dt, table.params.blowup_bound)?;

        let mut integral = 0.0_f64;
        let mut prev_v = v0;
        for k in 0..traj.len() {
            let x = traj.state(k);
            if k > 0 && region.contains(sys, x)? {
                break;
            }
            let v = match table.interpolate(x, sys, region)? {
                InterpolatedValue::Value(v) => v,
                InterpolatedValue::OutsideHull => {
                    report.skipped_out_of_hull += 1;
                    break;
                }
                InterpolatedValue::UnresolvedCell => {
                    report.skipped_unresolved_cell += 1;
                    break;
                }
            };
            let t = traj.time(k);
            if k > 0 {
                integral += 0.5 * dt * (prev_v + v);
            }
            prev_v = v;
            report.checked += 1;

            let decay = v0 * (-t).exp();
            if v > opts.slack * decay + TIE_TOL {
                report.violations.push(GridViolation {
                    point_index: idx,
                    point: x.to_vec(),
                    lhs: v,
                    rhs: decay,
                    margin: v - opts.slack * decay,
                });
            }
            let lhs = decay + integral;
            if lhs > opts.slack * v0 + TIE_TOL {
                report.integral_violations.push(GridViolation {
                    point_index: idx,
                    point: x.to_vec(),
                    lhs,
                    rhs: v0,
                    margin: lhs - opts.slack * v0,
                });
            }
        }
    }
    Ok(report)
}

/// Result of a candidate decrease check along ensemble segments.
#[derive(Debug, Clone, Serialize)]
pub struct CandidateDecreaseReport {
    pub checked: usize,
    pub segments: usize,
    pub violations: Vec<GridViolation>,
    pub skipped_in_region: usize,
}

impl CandidateDecreaseReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.violations.is_empty()
    }
}

/// Integral-form decrease check for an arbitrary candidate `V`: on every
/// maximal in-complement segment of every trajectory,
/// `V(x(t)) - V(x(t0)) <= -(1 - tol) * integral of alpha3(V(x(s)))`
/// by trapezoid quadrature, with `tol = slack - 1`.
pub fn integral_decrease_check(
    candidate: &(dyn Fn(&[f64]) -> f64 + Sync),
    alpha3: &ScalarGain,
    region: &RegionPredicate,
    ensemble: &Ensemble,
    slack: f64,
) -> Result<CandidateDecreaseReport> {
    alpha3.validate()?;
    let tol = (slack - 1.0).max(0.0);
    let sys = &ensemble.system;
    let mut report = CandidateDecreaseReport {
        checked: 0,
        segments: 0,
        violations: Vec::new(),
        skipped_in_region: 0,
    };
    for traj in &ensemble.trajectories {
        let dt = traj.dt();
        let mut k = 0;
        while k < traj.len() {
            if region.contains(sys, traj.state(k))? {
                report.skipped_in_region += 1;
                k += 1;
                continue;
            }
            // Maximal segment inside the complement.
            let start = k;
            let mut values = Vec::new();
            while k < traj.len() && !region.contains(sys, traj.state(k))? {
                values.push(candidate(traj.state(k)));
                k += 1;
            }
            report.segments += 1;
            let v_start = values[0];
            let mut integral = 0.0_f64;
            let mut prev_a = alpha3.evaluate(v_start.max(0.0))?;
            for (off, &v) in values.iter().enumerate() {
                if off > 0 {
                    let a = alpha3.evaluate(v.max(0.0))?;
                    integral += 0.5 * dt * (prev_a + a);
                    prev_a = a;
                }
                report.checked += 1;
                let lhs = v - v_start;
                let rhs = -(1.0 - tol) * integral;
                if lhs > rhs + TIE_TOL {
                    report.violations.push(GridViolation {
                        point_index: start + off,
                        point: traj.state(start + off).to_vec(),
                        lhs,
                        rhs,
                        margin: lhs - rhs,
                    });
                }
            }
        }
    }
    Ok(report)
}

/// Smooth-gradient decrease check: at each probe point outside the region,
/// the central-difference gradient of the candidate must satisfy
/// `grad V . f(xi, d) <= -(1 - tol) * alpha3(V(xi))` for every sampled
/// disturbance.
#[allow(clippy::too_many_arguments)]
pub fn gradient_decrease_check(
    candidate: &(dyn Fn(&[f64]) -> f64 + Sync),
    sys: &DisturbedSystem,
    region: &RegionPredicate,
    alpha3: &ScalarGain,
    probes: &[Vec<f64>],
    fd_step: f64,
    disturbance_samples: usize,
    seed: u64,
    slack: f64,
) -> Result<CandidateDecreaseReport> {
    alpha3.validate()?;
    if fd_step <= 0.0 {
        return Err(Error::InvalidConfig("fd_step must be positive".into()));
    }
    let tol = (slack - 1.0).max(0.0);
    let mut report = CandidateDecreaseReport {
        checked: 0,
        segments: 0,
        violations: Vec::new(),
        skipped_in_region: 0,
    };
    for (i, xi) in probes.iter().enumerate() {
        if region.contains(sys, xi)? {
            report.skipped_in_region += 1;
            continue;
        }
        let mut grad = vec![0.0; xi.len()];
        let mut probe = xi.clone();
        for d in 0..xi.len() {
            probe[d] = xi[d] + fd_step;
            let hi = candidate(&probe);
            probe[d] = xi[d] - fd_step;
            let lo = candidate(&probe);
            probe[d] = xi[d];
            grad[d] = (hi - lo) / (2.0 * fd_step);
        }
        let bound = -(1.0 - tol) * alpha3.evaluate(candidate(xi).max(0.0))?;
        for d in sample_disturbances(sys, disturbance_samples, derive_seed(seed, i as u64))? {
            let f = sys.evaluate_field(xi, &d)?;
            let dot: f64 = grad.iter().zip(&f).map(|(g, v)| g * v).sum();
            report.checked += 1;
            if dot > bound + TIE_TOL {
                report.violations.push(GridViolation {
                    point_index: i,
                    point: xi.clone(),
                    lhs: dot,
                    rhs: bound,
                    margin: dot - bound,
                });
            }
        }
    }
    Ok(report)
}

/// Representative disturbance values: the set's distinguished points plus
/// seeded vertex and uniform draws.
fn sample_disturbances(
    sys: &DisturbedSystem,
    samples: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let horizon = samples.max(1) as f64;
    // Reuse the signal sampler: one hold interval per draw.
    let mut out = Vec::new();
    for (i, strategy) in [
        DisturbanceStrategy::Zero,
        DisturbanceStrategy::Vertices,
        DisturbanceStrategy::Uniform,
    ]
    .iter()
    .enumerate()
    {
        let signal = match sys.sample_disturbance_signal(horizon, 1.0, *strategy, derive_seed(seed, i as u64)) {
            Ok(s) => s,
            Err(Error::DisturbanceOutsideSet { .. }) => continue, // zero not in set
            Err(e) => return Err(e),
        };
        for v in signal.values().iter().take(samples.max(1)) {
            if !out.contains(v) {
                out.push(v.clone());
            }
        }
    }
    Ok(out)
}

/// Solution of the scalar comparison ODE `w' = -alpha(w)` (optionally
/// `w' = -alpha(w) + 1/n`), clamped at zero.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonSolution {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// `n` of the perturbed equation, when set.
    pub perturbation: Option<u64>,
}

impl ComparisonSolution {
    pub fn value_at(&self, t: f64) -> f64 {
        let dt = if self.times.len() > 1 {
            self.times[1] - self.times[0]
        } else {
            return self.values[0];
        };
        let k = ((t / dt).floor() as usize).min(self.values.len() - 1);
        if k + 1 >= self.values.len() {
            return self.values[k];
        }
        let w = (t - self.times[k]) / dt;
        self.values[k] * (1.0 - w) + self.values[k + 1] * w
    }
}

/// RK4 solution of the comparison ODE from `v0`, on a uniform grid.
pub fn solve_comparison_ode(
    alpha: &ScalarGain,
    v0: f64,
    horizon: f64,
    dt: f64,
    perturbation: Option<u64>,
) -> Result<ComparisonSolution> {
    alpha.validate()?;
    if v0 < 0.0 {
        return Err(Error::NegativeArgument(v0));
    }
    if dt <= 0.0 || horizon < 0.0 {
        return Err(Error::InvalidConfig(
            "comparison ODE needs dt > 0 and horizon >= 0".into(),
        ));
    }
    let forcing = match perturbation {
        Some(0) => {
            return Err(Error::InvalidConfig(
                "perturbation index must be >= 1".into(),
            ))
        }
        Some(n) => 1.0 / n as f64,
        None => 0.0,
    };
    let steps = (horizon / dt).round() as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut values = Vec::with_capacity(steps + 1);
    let mut w = v0;
    times.push(0.0);
    values.push(w);
    let rhs = |w: f64| -> Result<f64> { Ok(-alpha.evaluate(w.max(0.0))? + forcing) };
    for k in 0..steps {
        let k1 = rhs(w)?;
        let k2 = rhs(w + 0.5 * dt * k1)?;
        let k3 = rhs(w + 0.5 * dt * k2)?;
        let k4 = rhs(w + dt * k3)?;
        w += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if perturbation.is_none() {
            w = w.max(0.0);
        }
        times.push((k + 1) as f64 * dt);
        values.push(w);
    }
    Ok(ComparisonSolution {
        times,
        values,
        perturbation,
    })
}

/// Result of a comparison domination check.
#[derive(Debug, Clone, Serialize)]
pub struct DominationReport {
    pub checked: usize,
    pub violations: Vec<GridViolation>,
    /// Max of `v(t) / w(t)` over the grid (where `w > 0`).
    pub max_ratio: f64,
    /// Worst per-step excess observed while verifying the integral decrease
    /// precondition (within tolerance by construction).
    pub precondition_max_excess: f64,
}

impl DominationReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.violations.is_empty()
    }
}

/// Checks that a sampled nonnegative sequence `v` on a uniform grid is
/// dominated by the comparison solution from `v[0]`.
///
/// The integral decrease precondition
/// `v(t2) <= v(t1) - integral of alpha(v)` is verified first by trapezoid
/// quadrature (equivalently: `v(t) + integral` is nonincreasing step by
/// step, within `quad_tol` per step, default `(1 + v0 + alpha(v0)) dt^3`).
/// Inputs failing it are refused, not reported as counterexamples.
pub fn comparison_domination_check(
    v: &[f64],
    alpha: &ScalarGain,
    dt: f64,
    slack: f64,
    quad_tol: Option<f64>,
) -> Result<DominationReport> {
    alpha.validate()?;
    if v.len() < 2 {
        return Err(Error::EmptyInput("sampled sequence"));
    }
    if dt <= 0.0 {
        return Err(Error::InvalidConfig("dt must be positive".into()));
    }
    if v.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::InvalidConfig(
            "sampled sequence must be finite and nonnegative".into(),
        ));
    }
    let v0 = v[0];
    let quad_tol = quad_tol.unwrap_or((1.0 + v0 + alpha.evaluate(v0)?) * dt.powi(3));

    // Precondition: m_k = v_k + cumulative trapezoid of alpha(v) must be
    // nonincreasing within quad_tol per step.
    let mut excess_max = f64::NEG_INFINITY;
    let mut prev_a = alpha.evaluate(v[0])?;
    for k in 1..v.len() {
        let a = alpha.evaluate(v[k])?;
        let dm = v[k] - v[k - 1] + 0.5 * dt * (prev_a + a);
        prev_a = a;
        excess_max = excess_max.max(dm);
        if dm > quad_tol {
            return Err(Error::PreconditionFailed {
                time: k as f64 * dt,
                detail: format!(
                    "integral decrease inequality violated by {dm:.3e} (tolerance {quad_tol:.3e})"
                ),
            });
        }
    }

    let horizon = (v.len() - 1) as f64 * dt;
    let w = solve_comparison_ode(alpha, v0, horizon, dt, None)?;
    let mut report = DominationReport {
        checked: 0,
        violations: Vec::new(),
        max_ratio: 0.0,
        precondition_max_excess: excess_max,
    };
    for (k, (&vk, &wk)) in v.iter().zip(&w.values).enumerate() {
        report.checked += 1;
        if wk > 0.0 {
            report.max_ratio = report.max_ratio.max(vk / wk);
        }
        if vk > slack * wk + TIE_TOL {
            report.violations.push(GridViolation {
                point_index: k,
                point: vec![k as f64 * dt],
                lhs: vk,
                rhs: wk,
                margin: vk - slack * wk,
            });
        }
    }
    Ok(report)
}

/// The comparison flow map as a tabulated KL envelope: entry `(s, t)` is the
/// comparison solution from `v0 = s` evaluated at `t`.
pub fn comparison_flow_envelope(
    alpha: &ScalarGain,
    s_grid: &[f64],
    horizon: f64,
    dt: f64,
) -> Result<KlEnvelope> {
    if s_grid.len() < 2 || s_grid[0] != 0.0 {
        return Err(Error::InvalidConfig(
            "flow envelope needs an s-grid starting at 0".into(),
        ));
    }
    let steps = (horizon / dt).round().max(1.0) as usize;
    let n_t = (steps + 1).min(129);
    let t_indices: Vec<usize> = (0..n_t).map(|j| j * steps / (n_t - 1)).collect();
    let t_grid: Vec<f64> = t_indices.iter().map(|&k| k as f64 * dt).collect();
    let mut values = Vec::with_capacity(s_grid.len());
    for &s in s_grid {
        let sol = solve_comparison_ode(alpha, s, horizon, dt, None)?;
        values.push(t_indices.iter().map(|&k| sol.values[k]).collect());
    }
    let envelope = KlEnvelope::KlTable {
        s_grid: s_grid.to_vec(),
        t_grid,
        values,
    };
    envelope.validate()?;
    Ok(envelope)
}
