//! Fixed-step RK4 trajectory integration, ensembles, hitting times,
//! nearby-trajectory tracking, and empirical reachability tables.
//!
//! Trajectories live on a uniform time grid with step `dt`; the disturbance
//! is held constant within each step. Uniform grids make sup norms, hitting
//! times, and quadrature exact over the stored data. Maximal solutions are
//! truncated at the configured horizon; forward completeness is monitored via
//! a blow-up guard, not assumed.

use crate::error::{Error, Result};
use crate::seeds::derive_seed;
use crate::signal::DisturbanceSignal;
use crate::system::{norm, DisturbanceStrategy, DisturbedSystem, RegionPredicate};
use crate::TIE_TOL;
use rayon::prelude::*;
use serde::Serialize;
use std::io::Write;

/// Simulation parameters shared by every trajectory of an ensemble.
#[derive(Debug, Clone, Serialize)]
pub struct SimParams {
    pub dt: f64,
    pub horizon: f64,
    /// Hold interval of sampled disturbance signals.
    pub hold: f64,
    pub strategy: DisturbanceStrategy,
    pub seed: u64,
    /// `|x|` beyond which integration stops and the trajectory is flagged
    /// (possible loss of forward completeness).
    pub blowup_bound: f64,
}

impl SimParams {
    pub fn new(seed: u64, horizon: f64) -> Self {
        Self {
            dt: 1e-3,
            horizon,
            hold: 0.1,
            strategy: DisturbanceStrategy::Zero,
            seed,
            blowup_bound: 1e8,
        }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_hold(mut self, hold: f64) -> Self {
        self.hold = hold;
        self
    }

    pub fn with_strategy(mut self, strategy: DisturbanceStrategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn with_blowup_bound(mut self, bound: f64) -> Self {
        self.blowup_bound = bound;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.dt <= 0.0 || self.horizon < 0.0 || self.hold <= 0.0 || self.blowup_bound <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "simulation needs dt > 0, horizon >= 0, hold > 0, blowup_bound > 0; got \
                 dt = {}, horizon = {}, hold = {}, blowup_bound = {}",
                self.dt, self.horizon, self.hold, self.blowup_bound
            )));
        }
        Ok(())
    }
}

/// A stored trajectory on a uniform time grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    dt: f64,
    dim: usize,
    p_y: usize,
    p_w: usize,
    seed: u64,
    signal: DisturbanceSignal,
    states: Vec<f64>,
    ys: Vec<f64>,
    ws: Vec<f64>,
    omegas: Vec<f64>,
    norm_y: Vec<f64>,
    norm_w: Vec<f64>,
    sup_y: Vec<f64>,
    sup_w: Vec<f64>,
    truncated: bool,
}

impl Trajectory {
    /// Number of stored grid points (steps + 1 when not truncated).
    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn initial_state(&self) -> &[f64] {
        self.state(0)
    }

    pub fn error_output(&self, k: usize) -> &[f64] {
        &self.ys[k * self.p_y..(k + 1) * self.p_y]
    }

    pub fn measurement_output(&self, k: usize) -> &[f64] {
        &self.ws[k * self.p_w..(k + 1) * self.p_w]
    }

    /// `|x(t_k)|_omega`.
    pub fn omega(&self, k: usize) -> f64 {
        self.omegas[k]
    }

    pub fn initial_omega(&self) -> f64 {
        self.omegas[0]
    }

    /// `|y(t_k)|`.
    pub fn error_norm(&self, k: usize) -> f64 {
        self.norm_y[k]
    }

    /// `|w(t_k)|`.
    pub fn measurement_norm(&self, k: usize) -> f64 {
        self.norm_w[k]
    }

    /// Running sup of `|y|` over `[0, t_k]`.
    pub fn sup_error(&self, k: usize) -> f64 {
        self.sup_y[k]
    }

    /// Running sup of `|w|` over `[0, t_k]`.
    pub fn sup_measurement(&self, k: usize) -> f64 {
        self.sup_w[k]
    }

    /// Running sup of `|w|` over `[t_split, t_k]` for `k >= split`.
    pub fn sup_measurement_from(&self, split: usize) -> Vec<f64> {
        running_sup(&self.norm_w[split..])
    }

    /// Running sup of `|y|` over `[t_split, t_k]` for `k >= split`.
    pub fn sup_error_from(&self, split: usize) -> Vec<f64> {
        running_sup(&self.norm_y[split..])
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn signal(&self) -> &DisturbanceSignal {
        &self.signal
    }

    /// Whether the blow-up guard tripped before the horizon.
    pub fn truncated(&self) -> bool {
        self.truncated
    }

    /// State linearly interpolated between grid points.
    pub fn state_at(&self, t: f64) -> Vec<f64> {
        let k = ((t / self.dt).floor() as usize).min(self.len() - 1);
        if k + 1 >= self.len() {
            return self.state(k).to_vec();
        }
        let w = (t - self.time(k)) / self.dt;
        self.state(k)
            .iter()
            .zip(self.state(k + 1))
            .map(|(a, b)| a + (b - a) * w)
            .collect()
    }

    /// Writes the trajectory as CSV: `t, x_1..x_n, y_1..y_p, w_1..w_q, omega`.
    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        write!(out, "t")?;
        for i in 1..=self.dim {
            write!(out, ",x_{i}")?;
        }
        for i in 1..=self.p_y {
            write!(out, ",y_{i}")?;
        }
        for i in 1..=self.p_w {
            write!(out, ",w_{i}")?;
        }
        writeln!(out, ",omega")?;
        for k in 0..self.len() {
            write!(out, "{}", self.time(k))?;
            for v in self.state(k) {
                write!(out, ",{v}")?;
            }
            for v in self.error_output(k) {
                write!(out, ",{v}")?;
            }
            for v in self.measurement_output(k) {
                write!(out, ",{v}")?;
            }
            writeln!(out, ",{}", self.omega(k))?;
        }
        Ok(())
    }
}

fn running_sup(values: &[f64]) -> Vec<f64> {
    let mut acc = f64::NEG_INFINITY;
    values
        .iter()
        .map(|&v| {
            acc = acc.max(v);
            acc
        })
        .collect()
}

/// Classical RK4 with the disturbance held constant within each step.
pub fn integrate(
    sys: &DisturbedSystem,
    x0: &[f64],
    signal: &DisturbanceSignal,
    horizon: f64,
    dt: f64,
    blowup_bound: f64,
) -> Result<Trajectory> {
    integrate_seeded(sys, x0, signal, horizon, dt, blowup_bound, 0)
}

fn integrate_seeded(
    sys: &DisturbedSystem,
    x0: &[f64],
    signal: &DisturbanceSignal,
    horizon: f64,
    dt: f64,
    blowup_bound: f64,
    seed: u64,
) -> Result<Trajectory> {
    if dt <= 0.0 || horizon < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "integration needs dt > 0 and horizon >= 0, got dt = {dt}, horizon = {horizon}"
        )));
    }
    if x0.len() != sys.dim() {
        return Err(Error::DimensionMismatch {
            expected: sys.dim(),
            got: x0.len(),
        });
    }
    let dim = sys.dim();
    let p_y = sys.p_y();
    let p_w = sys.p_w();
    let steps = (horizon / dt).round() as usize;

    let mut traj = Trajectory {
        dt,
        dim,
        p_y,
        p_w,
        seed,
        signal: signal.clone(),
        states: Vec::with_capacity((steps + 1) * dim),
        ys: Vec::with_capacity((steps + 1) * p_y),
        ws: Vec::with_capacity((steps + 1) * p_w),
        omegas: Vec::with_capacity(steps + 1),
        norm_y: Vec::with_capacity(steps + 1),
        norm_w: Vec::with_capacity(steps + 1),
        sup_y: Vec::with_capacity(steps + 1),
        sup_w: Vec::with_capacity(steps + 1),
        truncated: false,
    };

    let mut x = x0.to_vec();
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut stage = vec![0.0; dim];
    let mut y = vec![0.0; p_y];
    let mut w = vec![0.0; p_w];

    let record = |traj: &mut Trajectory, x: &[f64], y: &mut [f64], w: &mut [f64]| {
        sys.h_into(x, y);
        sys.g_into(x, w);
        traj.states.extend_from_slice(x);
        traj.ys.extend_from_slice(y);
        traj.ws.extend_from_slice(w);
        traj.omegas.push(sys.omega(x));
        let ny = norm(y);
        let nw = norm(w);
        traj.norm_y.push(ny);
        traj.norm_w.push(nw);
        let prev_sy = traj.sup_y.last().copied().unwrap_or(f64::NEG_INFINITY);
        let prev_sw = traj.sup_w.last().copied().unwrap_or(f64::NEG_INFINITY);
        traj.sup_y.push(prev_sy.max(ny));
        traj.sup_w.push(prev_sw.max(nw));
    };

    record(&mut traj, &x, &mut y, &mut w);

    for step in 0..steps {
        let t = step as f64 * dt;
        let d = signal.value_at(t);

        sys.field_into(&x, d, &mut k1);
        for i in 0..dim {
            stage[i] = x[i] + 0.5 * dt * k1[i];
        }
        sys.field_into(&stage, d, &mut k2);
        for i in 0..dim {
            stage[i] = x[i] + 0.5 * dt * k2[i];
        }
        sys.field_into(&stage, d, &mut k3);
        for i in 0..dim {
            stage[i] = x[i] + dt * k3[i];
        }
        sys.field_into(&stage, d, &mut k4);
        for i in 0..dim {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }

        if norm(&x) > blowup_bound || x.iter().any(|v| !v.is_finite()) {
            traj.truncated = true;
            break;
        }
        record(&mut traj, &x, &mut y, &mut w);
    }
    Ok(traj)
}

/// Per-trajectory entry of the ensemble manifest.
#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryMeta {
    pub index: usize,
    pub seed: u64,
    pub initial_state: Vec<f64>,
    pub truncated: bool,
}

/// A finite sample of the solution set from a list of initial states.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub system: DisturbedSystem,
    pub params: SimParams,
    pub trajectories: Vec<Trajectory>,
}

impl Ensemble {
    /// Simulates one trajectory per initial state, in parallel, with one
    /// derived seed per trajectory; deterministic for a fixed master seed.
    pub fn simulate(
        sys: &DisturbedSystem,
        initial_states: &[Vec<f64>],
        params: &SimParams,
    ) -> Result<Ensemble> {
        params.validate()?;
        let trajectories = initial_states
            .par_iter()
            .enumerate()
            .map(|(i, x0)| {
                let seed = derive_seed(params.seed, i as u64);
                let signal =
                    sys.sample_disturbance_signal(params.horizon, params.hold, params.strategy, seed)?;
                integrate_seeded(
                    sys,
                    x0,
                    &signal,
                    params.horizon,
                    params.dt,
                    params.blowup_bound,
                    seed,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Ensemble {
            system: sys.clone(),
            params: params.clone(),
            trajectories,
        })
    }

    pub fn manifest(&self) -> Vec<TrajectoryMeta> {
        self.trajectories
            .iter()
            .enumerate()
            .map(|(index, t)| TrajectoryMeta {
                index,
                seed: t.seed(),
                initial_state: t.initial_state().to_vec(),
                truncated: t.truncated(),
            })
            .collect()
    }
}

/// First hitting time of a region, refined below grid resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HitTime {
    At(f64),
    /// No stored state lies in the region; read as "theta >= horizon".
    NotWithinHorizon,
}

impl HitTime {
    pub fn is_hit(&self) -> bool {
        matches!(self, HitTime::At(_))
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            HitTime::At(t) => Some(*t),
            HitTime::NotWithinHorizon => None,
        }
    }

    /// The hitting time, with the stored horizon standing in for "never".
    pub fn or_horizon(&self, horizon: f64) -> f64 {
        self.value().unwrap_or(horizon)
    }
}

impl std::fmt::Display for HitTime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HitTime::At(t) => write!(f, "{t}"),
            HitTime::NotWithinHorizon => write!(f, ">= horizon"),
        }
    }
}

/// `theta = inf{t >= 0 : x(t) in D}` on the stored grid, refined by bisection
/// on linearly interpolated states between the bracketing grid points.
pub fn hitting_time(
    traj: &Trajectory,
    region: &RegionPredicate,
    sys: &DisturbedSystem,
) -> Result<HitTime> {
    let mut hit_idx = None;
    for k in 0..traj.len() {
        if region.contains(sys, traj.state(k))? {
            hit_idx = Some(k);
            break;
        }
    }
    let Some(k) = hit_idx else {
        return Ok(HitTime::NotWithinHorizon);
    };
    if k == 0 {
        return Ok(HitTime::At(0.0));
    }
    // Bisect between the last outside point and the first inside point.
    let tol = traj.dt() * 1e-3;
    let mut lo = traj.time(k - 1);
    let mut hi = traj.time(k);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if region.contains(sys, &traj.state_at(mid))? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(HitTime::At(hi))
}

/// Result of searching for a nearby-trajectory tracking certificate.
#[derive(Debug, Clone, Serialize)]
pub struct TrackingReport {
    /// Whether some sampled signal satisfied the exponential tracking bound
    /// at every grid time. A miss is a sampling failure, not a disproof.
    pub certificate_found: bool,
    /// Index of the best candidate (0 = replay of the reference signal).
    pub best_candidate: usize,
    /// Max over grid times of `gap / bound` for the best candidate.
    pub max_normalized_gap: f64,
    pub lipschitz_used: f64,
    #[serde(skip)]
    pub best_signal: DisturbanceSignal,
}

/// Searches sampled disturbance signals from `p` for a trajectory `z_p` with
/// `|x(t) - z_p(t)| <= |x(0) - p| e^{L t}` at every grid time. The reference
/// trajectory's own signal is always candidate 0; the rest are drawn with
/// derived seeds.
pub fn track_nearby(
    sys: &DisturbedSystem,
    traj: &Trajectory,
    p: &[f64],
    samples: usize,
    seed: u64,
    lipschitz: Option<f64>,
) -> Result<TrackingReport> {
    if p.len() != sys.dim() {
        return Err(Error::DimensionMismatch {
            expected: sys.dim(),
            got: p.len(),
        });
    }
    let lipschitz_used = match lipschitz.or(sys.lipschitz_hint()) {
        Some(l) => l,
        None => {
            // Estimate over a box covering the reference trajectory and p,
            // inflated by the initial gap (the tracking tube).
            let dim = sys.dim();
            let mut lo = p.to_vec();
            let mut hi = p.to_vec();
            for k in 0..traj.len() {
                for (i, &v) in traj.state(k).iter().enumerate() {
                    lo[i] = lo[i].min(v);
                    hi[i] = hi[i].max(v);
                }
            }
            let gap0 = traj
                .initial_state()
                .iter()
                .zip(p)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            for i in 0..dim {
                lo[i] -= gap0;
                hi[i] += gap0;
            }
            sys.estimate_lipschitz(&lo, &hi, 200, derive_seed(seed, 0x11b))?
        }
    };

    let gap0 = traj
        .initial_state()
        .iter()
        .zip(p)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let horizon = traj.time(traj.len() - 1);
    let hold = traj
        .signal()
        .breakpoints()
        .windows(2)
        .map(|w| w[1] - w[0])
        .next()
        .unwrap_or(horizon.max(traj.dt()));

    let mut best_candidate = 0;
    let mut best_gap = f64::INFINITY;
    let mut best_signal = traj.signal().clone();
    for c in 0..samples.max(1) {
        let candidate = if c == 0 {
            traj.signal().clone()
        } else {
            sys.sample_disturbance_signal(
                horizon,
                hold,
                DisturbanceStrategy::Uniform,
                derive_seed(seed, c as u64),
            )?
        };
        let z = integrate(sys, p, &candidate, horizon, traj.dt(), f64::INFINITY)?;
        let mut worst: f64 = 0.0;
        for k in 0..traj.len().min(z.len()) {
            let gap = traj
                .state(k)
                .iter()
                .zip(z.state(k))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let bound = gap0 * (lipschitz_used * traj.time(k)).exp();
            let ratio = if bound > 0.0 {
                gap / bound
            } else if gap <= TIE_TOL {
                0.0
            } else {
                f64::INFINITY
            };
            worst = worst.max(ratio);
        }
        if worst < best_gap {
            best_gap = worst;
            best_candidate = c;
            best_signal = candidate;
        }
        if best_gap <= 1.0 + 1e-9 {
            break;
        }
    }
    Ok(TrackingReport {
        certificate_found: best_gap <= 1.0 + 1e-9,
        best_candidate,
        max_normalized_gap: best_gap,
        lipschitz_used,
        best_signal,
    })
}

/// Initial states on the cartesian product of uniform per-axis grids.
pub fn box_grid_states(lower: &[f64], upper: &[f64], counts: &[usize]) -> Result<Vec<Vec<f64>>> {
    if lower.len() != upper.len() || lower.len() != counts.len() || lower.is_empty() {
        return Err(Error::InvalidConfig(
            "box grid needs matching nonempty lower/upper/counts".into(),
        ));
    }
    if counts.contains(&0) {
        return Err(Error::InvalidConfig("box grid counts must be >= 1".into()));
    }
    let axes: Vec<Vec<f64>> = lower
        .iter()
        .zip(upper)
        .zip(counts)
        .map(|((&lo, &hi), &n)| {
            if n == 1 {
                vec![0.5 * (lo + hi)]
            } else {
                (0..n)
                    .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                    .collect()
            }
        })
        .collect();
    let total: usize = counts.iter().product();
    let mut out = Vec::with_capacity(total);
    for mut idx in 0..total {
        let mut point = vec![0.0; axes.len()];
        for d in (0..axes.len()).rev() {
            point[d] = axes[d][idx % axes[d].len()];
            idx /= axes[d].len();
        }
        out.push(point);
    }
    Ok(out)
}

/// Seeded initial states with uniformly drawn magnitude in `[r_min, r_max]`
/// and uniformly drawn direction.
pub fn annulus_states(
    dim: usize,
    r_min: f64,
    r_max: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    use rand::Rng;
    use rand::SeedableRng;
    if dim == 0 || !(0.0 <= r_min && r_min <= r_max) {
        return Err(Error::InvalidConfig(
            "annulus sampling needs dim >= 1 and 0 <= r_min <= r_max".into(),
        ));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let r = r_min + (r_max - r_min) * rng.random::<f64>();
        // Gaussian direction via Box-Muller, normalized.
        let mut dir = vec![0.0_f64; dim];
        loop {
            for c in dir.iter_mut() {
                let u1: f64 = rng.random::<f64>().max(1e-300);
                let u2: f64 = rng.random();
                *c = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            }
            let n = norm(&dir);
            if n > 1e-12 {
                for c in dir.iter_mut() {
                    *c /= n;
                }
                break;
            }
        }
        out.push(dir.into_iter().map(|c| c * r).collect());
    }
    Ok(out)
}

/// Empirical reachability table: `value[i][j]` is the max of `|x(s)|_omega`
/// over `s <= t_j` over all trajectories with `|x(0)|_omega <= r_i`.
/// Nondecreasing in both arguments by construction.
#[derive(Debug, Clone, Serialize)]
pub struct ReachTable {
    pub r_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl ReachTable {
    /// Conservative lookup: rounds both arguments up to the next grid node.
    /// `None` when `r` exceeds every initial magnitude in the ensemble.
    pub fn bound(&self, r: f64, t: f64) -> Option<f64> {
        let i = self.r_grid.partition_point(|&g| g < r - TIE_TOL);
        if i >= self.r_grid.len() {
            return None;
        }
        let j = self
            .t_grid
            .partition_point(|&g| g < t - TIE_TOL)
            .min(self.t_grid.len() - 1);
        Some(self.values[i][j])
    }
}

/// Builds the reachability table of an ensemble on the grid of initial
/// magnitudes and (subsampled) stored times.
pub fn empirical_reach_bound(ensemble: &Ensemble) -> Result<ReachTable> {
    if ensemble.trajectories.is_empty() {
        return Err(Error::EmptyInput("ensemble"));
    }
    let max_len = ensemble
        .trajectories
        .iter()
        .map(Trajectory::len)
        .max()
        .expect("nonempty");
    let n_t = max_len.min(129);
    let t_indices: Vec<usize> = (0..n_t)
        .map(|j| j * (max_len - 1) / (n_t - 1).max(1))
        .collect();
    let dt = ensemble.params.dt;
    let t_grid: Vec<f64> = t_indices.iter().map(|&k| k as f64 * dt).collect();

    let mut order: Vec<usize> = (0..ensemble.trajectories.len()).collect();
    order.sort_by(|&a, &b| {
        ensemble.trajectories[a]
            .initial_omega()
            .total_cmp(&ensemble.trajectories[b].initial_omega())
    });

    let mut r_grid = Vec::with_capacity(order.len());
    let mut values: Vec<Vec<f64>> = Vec::with_capacity(order.len());
    let mut prefix = vec![0.0_f64; n_t];
    for &idx in &order {
        let traj = &ensemble.trajectories[idx];
        let sup_omega = running_sup(
            &(0..traj.len()).map(|k| traj.omega(k)).collect::<Vec<_>>(),
        );
        for (col, &k) in t_indices.iter().enumerate() {
            let k_eff = k.min(traj.len() - 1);
            prefix[col] = prefix[col].max(sup_omega[k_eff]);
        }
        let r = traj.initial_omega();
        if r_grid.last().is_some_and(|&last: &f64| (last - r).abs() <= TIE_TOL) {
            *values.last_mut().expect("rows follow r_grid") = prefix.clone();
        } else {
            r_grid.push(r);
            values.push(prefix.clone());
        }
    }
    Ok(ReachTable {
        r_grid,
        t_grid,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::gains::ScalarGain;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn spiral_closed_form(xi: (f64, f64), t: f64) -> (f64, f64) {
        let (a, b) = xi;
        let e = t.exp();
        (
            e * (a * t.cos() + b * t.sin()),
            e * (-a * t.sin() + b * t.cos()),
        )
    }

    fn zero_signal() -> DisturbanceSignal {
        DisturbanceSignal::constant(Vec::new())
    }

    #[test]
    fn spiral_matches_closed_form() {
        let sys = catalog::example_5_5();
        let traj = integrate(&sys, &[1.0, 0.0], &zero_signal(), 2.0 * PI, 1e-3, 1e8).unwrap();
        let mut max_err: f64 = 0.0;
        for k in 0..traj.len() {
            let (x1, x2) = spiral_closed_form((1.0, 0.0), traj.time(k));
            max_err = max_err
                .max((traj.state(k)[0] - x1).abs())
                .max((traj.state(k)[1] - x2).abs());
        }
        assert!(max_err <= 1e-6, "max abs error {max_err}");
    }

    #[test]
    fn contraction_matches_exponential() {
        let sys = catalog::scalar_contraction();
        let traj = integrate(&sys, &[1.0], &zero_signal(), 5.0, 1e-3, 1e8).unwrap();
        for k in (0..traj.len()).step_by(500) {
            assert!((traj.state(k)[0] - (-traj.time(k)).exp()).abs() <= 1e-9);
        }
    }

    #[test]
    fn zero_field_keeps_state_constant() {
        let sys = catalog::linear_system(vec![vec![0.0]], None, None, None, None, None).unwrap();
        let traj = integrate(&sys, &[3.0], &zero_signal(), 1.0, 0.01, 1e8).unwrap();
        for k in 0..traj.len() {
            assert_eq!(traj.state(k)[0], 3.0);
        }
    }

    #[test]
    fn rk4_order_check() {
        // Halving dt should shrink the terminal error by about 2^4. The
        // horizon must divide both steps so the endpoints coincide.
        let sys = catalog::example_5_5();
        let horizon = 3.2;
        let exact = spiral_closed_form((1.0, 0.0), horizon);
        let err = |dt: f64| {
            let traj = integrate(&sys, &[1.0, 0.0], &zero_signal(), horizon, dt, 1e8).unwrap();
            let last = traj.state(traj.len() - 1);
            ((last[0] - exact.0).powi(2) + (last[1] - exact.1).powi(2)).sqrt()
        };
        let ratio = err(0.02) / err(0.01);
        assert!(
            (11.2..=20.8).contains(&ratio),
            "observed order ratio {ratio}"
        );
    }

    #[test]
    fn spiral_norm_grows_exponentially() {
        let sys = catalog::example_5_5();
        let traj = integrate(&sys, &[1.0, 0.5], &zero_signal(), 2.0 * PI, 1e-3, 1e8).unwrap();
        let n0 = traj.omega(0);
        for k in (0..traj.len()).step_by(700) {
            let expected = n0 * traj.time(k).exp();
            assert_relative_eq!(traj.omega(k), expected, max_relative = 1e-5);
        }
    }

    #[test]
    fn blowup_guard_truncates() {
        let sys = catalog::example_5_5();
        let traj = integrate(&sys, &[1.0, 0.0], &zero_signal(), 30.0, 1e-2, 1e3).unwrap();
        assert!(traj.truncated());
        assert!(traj.len() < 3001);
        assert!(norm(traj.state(traj.len() - 1)) <= 1e3);
    }

    #[test]
    fn running_sup_matches_bruteforce() {
        let sys = catalog::example_5_5();
        let traj = integrate(&sys, &[0.3, -1.2], &zero_signal(), 3.0, 1e-2, 1e8).unwrap();
        for k in (0..traj.len()).step_by(17) {
            let brute_y = (0..=k).map(|i| traj.error_norm(i)).fold(0.0, f64::max);
            let brute_w = (0..=k)
                .map(|i| traj.measurement_norm(i))
                .fold(0.0, f64::max);
            assert_eq!(traj.sup_error(k), brute_y);
            assert_eq!(traj.sup_measurement(k), brute_w);
            // Nondecreasing in the upper index.
            if k > 0 {
                assert!(traj.sup_error(k) >= traj.sup_error(k - 1));
            }
        }
        let split = traj.len() / 3;
        let suffix = traj.sup_measurement_from(split);
        for (off, &v) in suffix.iter().enumerate().step_by(13) {
            let brute = (split..=split + off)
                .map(|i| traj.measurement_norm(i))
                .fold(0.0, f64::max);
            assert_eq!(v, brute);
        }
    }

    #[test]
    fn hitting_time_immediate_and_never() {
        let sys = catalog::example_5_5();
        let traj = integrate(&sys, &[0.5, 0.0], &zero_signal(), 1.0, 1e-2, 1e8).unwrap();
        // (0.5, 0) is already inside {|x1| <= 1}.
        let region = RegionPredicate::gain_form(ScalarGain::identity());
        assert_eq!(hitting_time(&traj, &region, &sys).unwrap(), HitTime::At(0.0));
        assert_eq!(
            hitting_time(&traj, &RegionPredicate::empty(), &sys).unwrap(),
            HitTime::NotWithinHorizon
        );
    }

    #[test]
    fn hitting_time_matches_root_of_closed_form() {
        // From (2, 0): first time 2 e^t cos t = 1, bisected on the closed form.
        let sys = catalog::example_5_5();
        let traj = integrate(&sys, &[2.0, 0.0], &zero_signal(), 2.0, 1e-3, 1e8).unwrap();
        let region = RegionPredicate::gain_form(ScalarGain::identity());
        let theta = hitting_time(&traj, &region, &sys)
            .unwrap()
            .value()
            .expect("hits");

        let f = |t: f64| 2.0 * t.exp() * t.cos() - 1.0;
        let (mut lo, mut hi) = (1.0, PI / 2.0);
        while hi - lo > 1e-12 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let oracle = 0.5 * (lo + hi);
        assert!((oracle - 1.455).abs() < 1e-2, "oracle sanity: {oracle}");
        assert!(
            (theta - oracle).abs() <= 1e-3,
            "theta = {theta}, oracle = {oracle}"
        );
    }

    #[test]
    fn hitting_time_monotone_under_region_shrinkage() {
        let sys = catalog::example_5_5();
        let traj = integrate(&sys, &[2.0, 0.0], &zero_signal(), 2.0, 1e-3, 1e8).unwrap();
        // rho smaller => region smaller => theta larger.
        let mut last = 0.0;
        for slope in [2.0, 1.0, 0.5, 0.25] {
            let region = RegionPredicate::gain_form(ScalarGain::linear(slope));
            let theta = hitting_time(&traj, &region, &sys)
                .unwrap()
                .or_horizon(2.0);
            assert!(theta + 1e-12 >= last, "slope {slope}");
            last = theta;
        }
    }

    #[test]
    fn hitting_time_lower_semicontinuity_probe() {
        // Initial states approaching xi with a fixed signal: the limit
        // inferior of theta must not undershoot theta(xi).
        let sys = catalog::scalar_contraction();
        let region = RegionPredicate::ball(vec![0.0], 0.5);
        let theta_at = |x0: f64| {
            let traj = integrate(&sys, &[x0], &zero_signal(), 3.0, 1e-3, 1e8).unwrap();
            hitting_time(&traj, &region, &sys)
                .unwrap()
                .or_horizon(3.0)
        };
        let base = theta_at(2.0);
        let approach: Vec<f64> = (1..=6).map(|k| theta_at(2.0 + 1.0 / k as f64)).collect();
        let tail_min = approach[3..].iter().copied().fold(f64::INFINITY, f64::min);
        assert!(tail_min >= base - 1e-3, "tail {tail_min} vs base {base}");

        // Same probe on the spiral with a gain-form region.
        let sys = catalog::example_5_5();
        let region = RegionPredicate::gain_form(ScalarGain::identity());
        let theta_spiral = |xi: [f64; 2]| {
            let traj = integrate(&sys, &xi, &zero_signal(), 2.0, 1e-3, 1e8).unwrap();
            hitting_time(&traj, &region, &sys)
                .unwrap()
                .or_horizon(2.0)
        };
        // The crossing time moves by about -eps/2 along this perturbation
        // direction, so the tail of a convergent sequence must sit within
        // tolerance of the base value.
        let base = theta_spiral([2.0, 0.0]);
        let tail_min = (100..=140)
            .step_by(10)
            .map(|k| theta_spiral([2.0 + 1.0 / k as f64, -1.0 / k as f64]))
            .fold(f64::INFINITY, f64::min);
        assert!(tail_min >= base - 1e-2, "tail {tail_min} vs base {base}");
    }

    #[test]
    fn ensemble_is_deterministic_and_parallel_safe() {
        let sys = catalog::disturbed_contraction(1.0);
        let states: Vec<Vec<f64>> = (0..24).map(|i| vec![i as f64 * 0.1 - 1.0]).collect();
        let params = SimParams::new(77, 2.0)
            .with_dt(1e-2)
            .with_strategy(DisturbanceStrategy::Uniform);
        let a = Ensemble::simulate(&sys, &states, &params).unwrap();
        let b = Ensemble::simulate(&sys, &states, &params).unwrap();
        for (ta, tb) in a.trajectories.iter().zip(&b.trajectories) {
            assert_eq!(ta.states, tb.states);
            assert_eq!(ta.seed(), tb.seed());
        }
        let manifest = a.manifest();
        assert_eq!(manifest.len(), 24);
        assert!(manifest.iter().all(|m| !m.truncated));
    }

    #[test]
    fn track_nearby_replay_from_same_point_is_exact() {
        let sys = catalog::disturbed_contraction(1.0);
        let signal = sys
            .sample_disturbance_signal(3.0, 0.25, DisturbanceStrategy::Uniform, 5)
            .unwrap();
        let traj = integrate(&sys, &[1.0], &signal, 3.0, 1e-3, 1e8).unwrap();
        let report = track_nearby(&sys, &traj, &[1.0], 4, 9, Some(1.0)).unwrap();
        assert!(report.certificate_found);
        assert_eq!(report.best_candidate, 0);
        assert_eq!(report.max_normalized_gap, 0.0);
    }

    #[test]
    fn track_nearby_contraction_bound() {
        // Without disturbance the gap decays while the bound grows, so the
        // certificate is found immediately.
        let sys = catalog::scalar_contraction();
        let traj = integrate(&sys, &[1.0], &zero_signal(), 4.0, 1e-3, 1e8).unwrap();
        let report = track_nearby(&sys, &traj, &[2.0], 1, 3, None).unwrap();
        assert!(report.certificate_found);
        assert!(report.max_normalized_gap <= 1.0);
        assert!(report.lipschitz_used <= 1.0 + 1e-6);
    }

    #[test]
    fn track_nearby_replay_gap_is_linear_decay() {
        let sys = catalog::disturbed_contraction(1.0);
        let signal = sys
            .sample_disturbance_signal(4.0, 0.5, DisturbanceStrategy::Uniform, 21)
            .unwrap();
        let x0 = 1.5;
        let p = -0.5;
        let traj = integrate(&sys, &[x0], &signal, 4.0, 1e-3, 1e8).unwrap();
        let z = integrate(&sys, &[p], &signal, 4.0, 1e-3, 1e8).unwrap();
        for k in (0..traj.len()).step_by(333) {
            let gap = (traj.state(k)[0] - z.state(k)[0]).abs();
            let expected = (x0 - p).abs() * (-traj.time(k)).exp();
            assert!((gap - expected).abs() <= 1e-6, "k = {k}");
        }
    }

    #[test]
    fn reach_bound_contraction_is_initial_norm() {
        let sys = catalog::scalar_contraction();
        let states: Vec<Vec<f64>> = (1..=10).map(|i| vec![i as f64 * 0.3]).collect();
        let params = SimParams::new(3, 2.0).with_dt(1e-2);
        let ens = Ensemble::simulate(&sys, &states, &params).unwrap();
        let table = empirical_reach_bound(&ens).unwrap();
        for (i, &r) in table.r_grid.iter().enumerate() {
            for j in 0..table.t_grid.len() {
                assert_relative_eq!(table.values[i][j], r, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn reach_bound_spiral_grows_exponentially() {
        let sys = catalog::example_5_5();
        let states = vec![vec![0.5, 0.0], vec![1.0, 0.0], vec![0.0, 2.0]];
        let params = SimParams::new(3, 1.5).with_dt(1e-3);
        let ens = Ensemble::simulate(&sys, &states, &params).unwrap();
        let table = empirical_reach_bound(&ens).unwrap();
        for (i, &r) in table.r_grid.iter().enumerate() {
            for (j, &t) in table.t_grid.iter().enumerate() {
                assert_relative_eq!(table.values[i][j], r * t.exp(), max_relative = 1e-4);
            }
        }
        // Nondecreasing in both arguments.
        for i in 1..table.r_grid.len() {
            for j in 1..table.t_grid.len() {
                assert!(table.values[i][j] >= table.values[i - 1][j]);
                assert!(table.values[i][j] >= table.values[i][j - 1]);
            }
        }
    }

    #[test]
    fn reach_bound_single_zero_trajectory() {
        let sys = catalog::scalar_contraction();
        let params = SimParams::new(3, 1.0).with_dt(1e-2);
        let ens = Ensemble::simulate(&sys, &[vec![0.0]], &params).unwrap();
        let table = empirical_reach_bound(&ens).unwrap();
        assert!(table
            .values
            .iter()
            .all(|row| row.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn csv_export_schema() {
        let sys = catalog::example_5_5();
        let traj = integrate(&sys, &[1.0, 0.0], &zero_signal(), 0.01, 1e-2, 1e8).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,x_1,x_2,y_1,w_1,omega");
        assert_eq!(lines.next().unwrap(), "0,1,0,1,1,1");
        assert_eq!(lines.clone().count(), 1);
    }
}
