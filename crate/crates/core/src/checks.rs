//! Checkers for the five output-stability properties (MES, RES, SIT, RMEB,
//! REB) on trajectory ensembles, the two-regime splitting argument, empirical
//! KL-envelope fitting, and the small-gain hypothesis check.
//!
//! Checkers falsify or accumulate evidence on finite ensembles; they never
//! prove a property. Strict inequalities on sampled data are evaluated with
//! the absolute tie tolerance [`crate::TIE_TOL`], and every bound carries a
//! multiplicative `slack` (default 1.02) to absorb integration error; use
//! slack 1.0 for analytic-form runs.

use crate::error::{Error, Result};
use crate::gains::{compose_max, compose_mes_gain, KlEnvelope, ScalarGain};
use crate::system::RegionPredicate;
use crate::trajectory::{empirical_reach_bound, Ensemble, Trajectory};
use crate::TIE_TOL;
use serde::{Deserialize, Serialize};

/// Default multiplicative slack on checked bounds.
pub const DEFAULT_SLACK: f64 = 1.02;

/// At most this many violation records are stored per report; the total
/// count keeps accumulating past the cap.
const MAX_STORED_VIOLATIONS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Violated,
    /// No nonvacuous check occurred (no trajectory bound the hypothesis).
    Vacuous,
}

/// One bound failure: `lhs > slack * rhs` beyond the tie tolerance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Violation {
    pub trajectory: usize,
    pub time: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs - slack * rhs` (positive).
    pub margin: f64,
}

/// Outcome of a property check on an ensemble.
#[derive(Debug, Clone, Serialize)]
pub struct PropertyReport {
    pub property: String,
    pub verdict: Verdict,
    /// Number of bound evaluations.
    pub checked: usize,
    /// Trajectories whose binding window is nonempty.
    pub binding_trajectories: usize,
    /// Dominance excursions that do not start at t = 0 (reported only;
    /// they do not bind the envelope).
    pub info_excursions: usize,
    pub total_violations: usize,
    pub violations: Vec<Violation>,
    /// Max over all checks of `lhs - slack * rhs`.
    pub worst_margin: Option<f64>,
    pub slack: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fitted_envelope: Option<FittedEnvelope>,
}

impl PropertyReport {
    fn new(property: &str, slack: f64) -> Self {
        Self {
            property: property.into(),
            verdict: Verdict::Vacuous,
            checked: 0,
            binding_trajectories: 0,
            info_excursions: 0,
            total_violations: 0,
            violations: Vec::new(),
            worst_margin: None,
            slack,
            fitted_envelope: None,
        }
    }

    fn record(&mut self, traj: usize, time: f64, lhs: f64, rhs: f64) {
        self.checked += 1;
        let margin = lhs - self.slack * rhs;
        self.worst_margin = Some(self.worst_margin.map_or(margin, |m| m.max(margin)));
        if lhs > self.slack * rhs + TIE_TOL {
            self.total_violations += 1;
            if self.violations.len() < MAX_STORED_VIOLATIONS {
                self.violations.push(Violation {
                    trajectory: traj,
                    time,
                    lhs,
                    rhs,
                    margin,
                });
            }
        }
    }

    fn finalize(mut self) -> Self {
        self.verdict = if self.checked == 0 {
            Verdict::Vacuous
        } else if self.total_violations == 0 {
            Verdict::Pass
        } else {
            Verdict::Violated
        };
        self
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

fn validate_slack(slack: f64) -> Result<f64> {
    if !(slack.is_finite() && slack >= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "slack must be a finite multiplier >= 1, got {slack}"
        )));
    }
    Ok(slack)
}

/// `|y(t)| <= max{beta(|x(0)|_omega, t), gamma(sup |w| over [0, t])}` at every
/// stored time of every trajectory.
pub fn check_mes(
    ensemble: &Ensemble,
    beta: &KlEnvelope,
    gamma: &ScalarGain,
    slack: f64,
) -> Result<PropertyReport> {
    validate_slack(slack)?;
    beta.validate()?;
    gamma.validate()?;
    let mut report = PropertyReport::new("mes", slack);
    for (id, traj) in ensemble.trajectories.iter().enumerate() {
        if traj.is_empty() {
            continue;
        }
        report.binding_trajectories += 1;
        let omega0 = traj.initial_omega();
        for k in 0..traj.len() {
            let rhs = beta
                .evaluate(omega0, traj.time(k))?
                .max(gamma.evaluate(traj.sup_measurement(k))?);
            report.record(id, traj.time(k), traj.error_norm(k), rhs);
        }
    }
    Ok(report.finalize())
}

/// A maximal interval on which `|y(t)| > rho(|w(t)|)` strictly.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DominanceInterval {
    pub start: f64,
    pub end: f64,
    /// The stored data ends while the inequality still holds.
    pub reaches_horizon: bool,
}

/// Maximal intervals where the error strictly dominates the gain of the
/// measurement, with endpoints refined by bisection on linearly interpolated
/// output norms. Intervals are disjoint and ordered.
pub fn sit_intervals(traj: &Trajectory, rho: &ScalarGain) -> Result<Vec<DominanceInterval>> {
    rho.validate()?;
    let strict = strict_dominance(traj, rho)?;
    let mut intervals = Vec::new();
    let mut k = 0;
    while k < strict.len() {
        if !strict[k] {
            k += 1;
            continue;
        }
        let run_start = k;
        while k < strict.len() && strict[k] {
            k += 1;
        }
        let run_end = k - 1; // inclusive
        let start = if run_start == 0 {
            0.0
        } else {
            refine_crossing(traj, rho, run_start - 1, run_start)?
        };
        let (end, reaches_horizon) = if run_end + 1 == strict.len() {
            (traj.time(run_end), true)
        } else {
            (refine_crossing(traj, rho, run_end + 1, run_end)?, false)
        };
        intervals.push(DominanceInterval {
            start,
            end,
            reaches_horizon,
        });
    }
    Ok(intervals)
}

fn strict_dominance(traj: &Trajectory, rho: &ScalarGain) -> Result<Vec<bool>> {
    (0..traj.len())
        .map(|k| Ok(traj.error_norm(k) > rho.evaluate(traj.measurement_norm(k))? + TIE_TOL))
        .collect()
}

/// Bisects between a non-strict grid index and a strict one for the point
/// where `|y| - rho(|w|)` crosses the tie band, on linearly interpolated
/// output norms. Tolerance: `dt * 1e-3`.
fn refine_crossing(
    traj: &Trajectory,
    rho: &ScalarGain,
    k_outside: usize,
    k_inside: usize,
) -> Result<f64> {
    let phi = |t: f64| -> Result<bool> {
        let (k0, k1, w) = lerp_indices(traj, t);
        let ny = traj.error_norm(k0) * (1.0 - w) + traj.error_norm(k1) * w;
        let nw = traj.measurement_norm(k0) * (1.0 - w) + traj.measurement_norm(k1) * w;
        Ok(ny > rho.evaluate(nw)? + TIE_TOL)
    };
    let tol = traj.dt() * 1e-3;
    let mut out = traj.time(k_outside);
    let mut ins = traj.time(k_inside);
    while (out - ins).abs() > tol {
        let mid = 0.5 * (out + ins);
        if phi(mid)? {
            ins = mid;
        } else {
            out = mid;
        }
    }
    Ok(0.5 * (out + ins))
}

fn lerp_indices(traj: &Trajectory, t: f64) -> (usize, usize, f64) {
    let k = ((t / traj.dt()).floor() as usize).min(traj.len() - 1);
    if k + 1 >= traj.len() {
        return (k, k, 0.0);
    }
    (k, k + 1, (t - traj.time(k)) / traj.dt())
}

/// SIT: on every trajectory whose strict-dominance window starts at t = 0,
/// `|y(t)| <= beta(|x(0)|_omega, t)` throughout that window. Later excursions
/// are reported informationally and do not bind.
pub fn check_sit(
    ensemble: &Ensemble,
    beta: &KlEnvelope,
    rho: &ScalarGain,
    slack: f64,
) -> Result<PropertyReport> {
    validate_slack(slack)?;
    beta.validate()?;
    rho.validate()?;
    let mut report = PropertyReport::new("sit", slack);
    for (id, traj) in ensemble.trajectories.iter().enumerate() {
        if traj.is_empty() {
            continue;
        }
        let strict = strict_dominance(traj, rho)?;
        count_excursions(&strict, &mut report);
        if !strict[0] {
            continue;
        }
        report.binding_trajectories += 1;
        let omega0 = traj.initial_omega();
        for (k, _) in strict.iter().enumerate().take_while(|(_, &s)| s) {
            let rhs = beta.evaluate(omega0, traj.time(k))?;
            report.record(id, traj.time(k), traj.error_norm(k), rhs);
        }
    }
    Ok(report.finalize())
}

fn count_excursions(strict: &[bool], report: &mut PropertyReport) {
    let mut prev = true; // a run starting at index 0 is binding, not an excursion
    for (k, &s) in strict.iter().enumerate() {
        if s && !prev && k > 0 {
            report.info_excursions += 1;
        }
        prev = s;
    }
}

/// RES with respect to a closed region: on every trajectory that starts
/// outside the region, `|y(t)| <= beta(|x(0)|_omega, t)` until the first
/// entry time.
pub fn check_res(
    ensemble: &Ensemble,
    beta: &KlEnvelope,
    region: &RegionPredicate,
    slack: f64,
) -> Result<PropertyReport> {
    validate_slack(slack)?;
    beta.validate()?;
    let sys = &ensemble.system;
    let mut report = PropertyReport::new("res", slack);
    for (id, traj) in ensemble.trajectories.iter().enumerate() {
        if traj.is_empty() {
            continue;
        }
        let outside: Vec<bool> = (0..traj.len())
            .map(|k| region.contains(sys, traj.state(k)).map(|c| !c))
            .collect::<Result<_>>()?;
        count_excursions(&outside, &mut report);
        if !outside[0] {
            continue;
        }
        report.binding_trajectories += 1;
        let omega0 = traj.initial_omega();
        for (k, _) in outside.iter().enumerate().take_while(|(_, &o)| o) {
            let rhs = beta.evaluate(omega0, traj.time(k))?;
            report.record(id, traj.time(k), traj.error_norm(k), rhs);
        }
    }
    Ok(report.finalize())
}

/// RMEB: on each strict-dominance window from t = 0 (gain `rho1`),
/// `|y(t)| <= max{sigma1(|h(x(0))|), sigma2(sup |w| over [0, t])}`.
pub fn check_rmeb(
    ensemble: &Ensemble,
    rho1: &ScalarGain,
    sigma1: &ScalarGain,
    sigma2: &ScalarGain,
    slack: f64,
) -> Result<PropertyReport> {
    validate_slack(slack)?;
    for g in [rho1, sigma1, sigma2] {
        g.validate()?;
    }
    let mut report = PropertyReport::new("rmeb", slack);
    for (id, traj) in ensemble.trajectories.iter().enumerate() {
        if traj.is_empty() {
            continue;
        }
        let strict = strict_dominance(traj, rho1)?;
        count_excursions(&strict, &mut report);
        if !strict[0] {
            continue;
        }
        report.binding_trajectories += 1;
        let s1 = sigma1.evaluate(traj.error_norm(0))?;
        for (k, _) in strict.iter().enumerate().take_while(|(_, &s)| s) {
            let rhs = s1.max(sigma2.evaluate(traj.sup_measurement(k))?);
            report.record(id, traj.time(k), traj.error_norm(k), rhs);
        }
    }
    Ok(report.finalize())
}

/// REB: on each strict-dominance window from t = 0 (gain `rho2`),
/// `|y(t)| <= sigma(|h(x(0))|)`.
pub fn check_reb(
    ensemble: &Ensemble,
    rho2: &ScalarGain,
    sigma: &ScalarGain,
    slack: f64,
) -> Result<PropertyReport> {
    validate_slack(slack)?;
    rho2.validate()?;
    sigma.validate()?;
    let mut report = PropertyReport::new("reb", slack);
    for (id, traj) in ensemble.trajectories.iter().enumerate() {
        if traj.is_empty() {
            continue;
        }
        let strict = strict_dominance(traj, rho2)?;
        count_excursions(&strict, &mut report);
        if !strict[0] {
            continue;
        }
        report.binding_trajectories += 1;
        let rhs = sigma.evaluate(traj.error_norm(0))?;
        for (k, _) in strict.iter().enumerate().take_while(|(_, &s)| s) {
            report.record(id, traj.time(k), traj.error_norm(k), rhs);
        }
    }
    Ok(report.finalize())
}

/// The REB gains derived from RMEB gains: `rho2 = max{rho1, sigma2}`,
/// `sigma = sigma1`. A system passing RMEB with the inputs passes REB with
/// the outputs.
pub fn reb_gains_from_rmeb(
    rho1: &ScalarGain,
    sigma1: &ScalarGain,
    sigma2: &ScalarGain,
) -> Result<(ScalarGain, ScalarGain)> {
    let rho2 = compose_max(vec![rho1.clone(), sigma2.clone()])?;
    Ok((rho2, sigma1.clone()))
}

/// Report of the two-regime decomposition: a decaying bound up to the first
/// time the error drops to `rho(|w|)`, and a measurement-gain bound after.
#[derive(Debug, Clone, Serialize)]
pub struct TwoRegimeReport {
    /// First time `|y(t)| <= rho(|w(t)|)`; `None` if the error dominates
    /// throughout the stored horizon (only regime one applies).
    pub t1: Option<f64>,
    /// Bound evaluations and violations on `[0, t1)` against the KL envelope.
    pub regime_one_checked: usize,
    pub regime_one_violations: Vec<Violation>,
    /// Bound evaluations and violations on `[t1, horizon]` against
    /// `gamma(sup |w| over [t1, t])`.
    pub regime_two_checked: usize,
    pub regime_two_violations: Vec<Violation>,
    /// Grid times falling under each case of the split: inside regime one,
    /// at-or-below the crossing gain, or above it after t1.
    pub case_counts: [usize; 3],
    pub verdict: Verdict,
}

impl TwoRegimeReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

/// Splits a trajectory at `t1 = inf{t : |y(t)| <= rho(|w(t)|)}` with
/// `rho = max{rho_tilde, rho1}` and checks the decaying bound `beta` before
/// `t1` and the assembled gain
/// `gamma = max{rho1, rho_tilde, sigma1 . rho1, sigma1 . rho_tilde, sigma2}`
/// on the running measurement sup after `t1`.
pub fn two_regime_check(
    traj: &Trajectory,
    rho1: &ScalarGain,
    sigma1: &ScalarGain,
    sigma2: &ScalarGain,
    rho_tilde: &ScalarGain,
    beta: &KlEnvelope,
    slack: f64,
) -> Result<TwoRegimeReport> {
    validate_slack(slack)?;
    beta.validate()?;
    let rho = compose_max(vec![rho_tilde.clone(), rho1.clone()])?;
    let gamma = compose_mes_gain(rho1, sigma1, sigma2, rho_tilde)?;

    let strict = strict_dominance(traj, &rho)?;
    let k1 = strict.iter().position(|&s| !s);
    let t1 = match k1 {
        None => None,
        Some(0) => Some(0.0),
        Some(k) => Some(refine_crossing(traj, &rho, k, k - 1)?),
    };

    let mut report = TwoRegimeReport {
        t1,
        regime_one_checked: 0,
        regime_one_violations: Vec::new(),
        regime_two_checked: 0,
        regime_two_violations: Vec::new(),
        case_counts: [0; 3],
        verdict: Verdict::Vacuous,
    };

    let omega0 = traj.initial_omega();
    let regime_one_end = k1.unwrap_or(traj.len());
    for k in 0..regime_one_end {
        report.case_counts[0] += 1;
        report.regime_one_checked += 1;
        let lhs = traj.error_norm(k);
        let rhs = beta.evaluate(omega0, traj.time(k))?;
        if lhs > slack * rhs + TIE_TOL {
            report.regime_one_violations.push(Violation {
                trajectory: 0,
                time: traj.time(k),
                lhs,
                rhs,
                margin: lhs - slack * rhs,
            });
        }
    }

    if let Some(k1) = k1 {
        let suffix_sup = traj.sup_measurement_from(k1);
        for k in k1..traj.len() {
            let case = if strict[k] { 2 } else { 1 };
            report.case_counts[case] += 1;
            report.regime_two_checked += 1;
            let lhs = traj.error_norm(k);
            let rhs = gamma.evaluate(suffix_sup[k - k1])?;
            if lhs > slack * rhs + TIE_TOL {
                report.regime_two_violations.push(Violation {
                    trajectory: 0,
                    time: traj.time(k),
                    lhs,
                    rhs,
                    margin: lhs - slack * rhs,
                });
            }
        }
    }

    report.verdict = if report.regime_one_checked + report.regime_two_checked == 0 {
        Verdict::Vacuous
    } else if report.regime_one_violations.is_empty() && report.regime_two_violations.is_empty() {
        Verdict::Pass
    } else {
        Verdict::Violated
    };
    Ok(report)
}

/// An empirically fitted KL envelope with its diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct FittedEnvelope {
    pub envelope: KlEnvelope,
    /// The last time column exceeds half the first: the data shows no decay
    /// over the fitted horizon.
    pub no_decay: bool,
    /// Minimum fitted value away from s = 0 (0 for degenerate data).
    pub positivity_floor: f64,
}

/// Fits a tabulated envelope to ensemble data: the raw table
/// `max{|y(t_j)| : |x(0)|_omega <= s_i}`, then the minimal monotone
/// regularization that dominates it (nondecreasing in s, nonincreasing in t).
pub fn fit_kl_envelope(
    ensemble: &Ensemble,
    s_grid: &[f64],
    t_grid: &[f64],
) -> Result<FittedEnvelope> {
    if ensemble.trajectories.is_empty() {
        return Err(Error::EmptyInput("ensemble"));
    }
    if s_grid.len() < 2 || t_grid.len() < 2 {
        return Err(Error::InvalidConfig(
            "envelope fitting needs at least 2x2 grids".into(),
        ));
    }

    let mut order: Vec<usize> = (0..ensemble.trajectories.len()).collect();
    order.sort_by(|&a, &b| {
        ensemble.trajectories[a]
            .initial_omega()
            .total_cmp(&ensemble.trajectories[b].initial_omega())
    });

    // Raw table: prefix max over trajectories sorted by initial magnitude.
    let mut raw = vec![vec![0.0_f64; t_grid.len()]; s_grid.len()];
    let mut current = vec![0.0_f64; t_grid.len()];
    let mut pos = 0;
    for (i, &s) in s_grid.iter().enumerate() {
        while pos < order.len()
            && ensemble.trajectories[order[pos]].initial_omega() <= s + TIE_TOL
        {
            let traj = &ensemble.trajectories[order[pos]];
            let t_last = traj.time(traj.len() - 1);
            for (j, &t) in t_grid.iter().enumerate() {
                if t > t_last + TIE_TOL {
                    continue; // truncated trajectory: no data beyond its end
                }
                let (k0, k1, w) = lerp_indices(traj, t);
                let ny = traj.error_norm(k0) * (1.0 - w) + traj.error_norm(k1) * w;
                current[j] = current[j].max(ny);
            }
            pos += 1;
        }
        raw[i].copy_from_slice(&current);
    }

    if s_grid[0] == 0.0 && raw[0].iter().any(|&v| v > 0.0) {
        return Err(Error::InvalidGain(
            "data admits no KL envelope: nonzero error from zero-magnitude initial state".into(),
        ));
    }

    // Minimal dominating monotone envelope: suffix max along t, then prefix
    // max along s.
    let mut values = raw.clone();
    for row in &mut values {
        for j in (0..row.len().saturating_sub(1)).rev() {
            row[j] = row[j].max(row[j + 1]);
        }
    }
    for i in 1..values.len() {
        let (head, tail) = values.split_at_mut(i);
        let prev = &head[i - 1];
        for (v, &p) in tail[0].iter_mut().zip(prev) {
            *v = v.max(p);
        }
    }

    let first_col_max = values.iter().map(|r| r[0]).fold(0.0, f64::max);
    let last_col_max = values
        .iter()
        .map(|r| r[t_grid.len() - 1])
        .fold(0.0, f64::max);
    let no_decay = last_col_max > 0.5 * first_col_max + TIE_TOL;
    let positivity_floor = values
        .iter()
        .skip(1)
        .flat_map(|r| r.iter().copied())
        .fold(f64::INFINITY, f64::min)
        .min(first_col_max);

    let envelope = KlEnvelope::KlTable {
        s_grid: s_grid.to_vec(),
        t_grid: t_grid.to_vec(),
        values,
    };
    envelope.validate()?;
    Ok(FittedEnvelope {
        envelope,
        no_decay,
        positivity_floor,
    })
}

/// Dominance of the raw data is a construction property; exposed for tests.
pub fn envelope_dominates_ensemble(
    fitted: &FittedEnvelope,
    ensemble: &Ensemble,
    t_grid: &[f64],
) -> Result<bool> {
    for traj in &ensemble.trajectories {
        let t_last = traj.time(traj.len() - 1);
        for &t in t_grid {
            if t > t_last + TIE_TOL {
                continue;
            }
            let (k0, k1, w) = lerp_indices(traj, t);
            let ny = traj.error_norm(k0) * (1.0 - w) + traj.error_norm(k1) * w;
            if ny > fitted.envelope.evaluate(traj.initial_omega(), t)? + 1e-9 {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Sub-report for one hypothesis of the small-gain check.
#[derive(Debug, Clone, Serialize)]
pub struct HypothesisCheck {
    pub checked: usize,
    pub total_violations: usize,
    pub violations: Vec<Violation>,
    /// Pairs whose reachability query fell outside the empirical table
    /// (informational; the table only covers observed initial magnitudes).
    pub uncovered: usize,
}

impl HypothesisCheck {
    fn new() -> Self {
        Self {
            checked: 0,
            total_violations: 0,
            violations: Vec::new(),
            uncovered: 0,
        }
    }

    fn record(&mut self, traj: usize, time: f64, lhs: f64, rhs: f64, slack: f64) {
        self.checked += 1;
        if lhs > slack * rhs + TIE_TOL {
            self.total_violations += 1;
            if self.violations.len() < MAX_STORED_VIOLATIONS {
                self.violations.push(Violation {
                    trajectory: traj,
                    time,
                    lhs,
                    rhs,
                    margin: lhs - slack * rhs,
                });
            }
        }
    }

    pub fn clean(&self) -> bool {
        self.total_violations == 0 && self.checked > 0
    }
}

/// Outcome of the small-gain check.
#[derive(Debug, Clone, Serialize)]
pub struct SmallGainReport {
    /// Output-feedback hypothesis over shifted windows:
    /// `|y(t)| <= max{beta(|x(t0)|_omega, t - t0), gamma(sup |y| over [t0, t])}`.
    pub hypothesis_output: HypothesisCheck,
    /// Reachability hypothesis over shifted windows, against the empirical
    /// reach table.
    pub hypothesis_reach: HypothesisCheck,
    /// Fitted on success of both hypotheses.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub envelope: Option<FittedEnvelope>,
    /// Verification of the fitted envelope over shifted windows.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub envelope_check: Option<HypothesisCheck>,
    pub verdict: Verdict,
}

impl SmallGainReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

/// Checks the small-gain hypotheses over strided window pairs `(t0, t)` and,
/// when both hold, fits an empirical KL envelope and verifies it dominates
/// the error over shifted windows.
///
/// Precondition: `gamma(r) < r` for all probed `r > 0` on the data range;
/// violating it is a contract error, not a falsification.
pub fn small_gain_check(
    ensemble: &Ensemble,
    beta: &KlEnvelope,
    gamma: &ScalarGain,
    slack: f64,
    stride: Option<usize>,
) -> Result<SmallGainReport> {
    validate_slack(slack)?;
    beta.validate()?;
    gamma.validate()?;
    if ensemble.trajectories.is_empty() {
        return Err(Error::EmptyInput("ensemble"));
    }

    // Contraction precheck on the data range of |y|.
    let r_max = ensemble
        .trajectories
        .iter()
        .filter(|t| !t.is_empty())
        .map(|t| t.sup_error(t.len() - 1))
        .fold(0.0, f64::max);
    if r_max > 0.0 {
        for i in 1..=64 {
            let r = r_max * i as f64 / 64.0;
            let value = gamma.evaluate(r)?;
            if value >= r {
                return Err(Error::NotContraction { r, value });
            }
        }
    }

    let max_len = ensemble
        .trajectories
        .iter()
        .map(Trajectory::len)
        .max()
        .expect("nonempty");
    let stride = stride.unwrap_or_else(|| (max_len / 128).max(1));

    let mut hyp_out = HypothesisCheck::new();
    for (id, traj) in ensemble.trajectories.iter().enumerate() {
        for k0 in (0..traj.len()).step_by(stride) {
            let suffix_sup_y = traj.sup_error_from(k0);
            let omega_t0 = traj.omega(k0);
            for k in (k0..traj.len()).step_by(stride) {
                let rhs = beta
                    .evaluate(omega_t0, traj.time(k) - traj.time(k0))?
                    .max(gamma.evaluate(suffix_sup_y[k - k0])?);
                hyp_out.record(id, traj.time(k), traj.error_norm(k), rhs, slack);
            }
        }
    }

    let reach = empirical_reach_bound(ensemble)?;
    let mut hyp_reach = HypothesisCheck::new();
    for (id, traj) in ensemble.trajectories.iter().enumerate() {
        for k0 in (0..traj.len()).step_by(stride) {
            let r = traj.omega(k0);
            let mut sup_omega = 0.0_f64;
            let mut k = k0;
            for kk in k0..traj.len() {
                sup_omega = sup_omega.max(traj.omega(kk));
                if kk == k {
                    match reach.bound(r, traj.time(kk) - traj.time(k0)) {
                        Some(bound) => {
                            hyp_reach.record(id, traj.time(kk), sup_omega, bound, slack)
                        }
                        None => hyp_reach.uncovered += 1,
                    }
                    k += stride;
                }
            }
        }
    }

    let mut report = SmallGainReport {
        hypothesis_output: hyp_out,
        hypothesis_reach: hyp_reach,
        envelope: None,
        envelope_check: None,
        verdict: Verdict::Vacuous,
    };

    if report.hypothesis_output.clean() && report.hypothesis_reach.total_violations == 0 {
        let (s_grid, t_grid) = auto_fit_grids(ensemble);
        let fitted = fit_kl_envelope(ensemble, &s_grid, &t_grid)?;
        let mut tilde = HypothesisCheck::new();
        for (id, traj) in ensemble.trajectories.iter().enumerate() {
            for k0 in (0..traj.len()).step_by(stride) {
                let omega_t0 = traj.omega(k0);
                for k in (k0..traj.len()).step_by(stride) {
                    match fitted
                        .envelope
                        .evaluate(omega_t0, traj.time(k) - traj.time(k0))
                    {
                        Ok(rhs) => tilde.record(id, traj.time(k), traj.error_norm(k), rhs, slack),
                        Err(Error::DomainExceeded { .. }) => tilde.uncovered += 1,
                        Err(e) => return Err(e),
                    }
                }
            }
        }
        report.envelope = Some(fitted);
        report.envelope_check = Some(tilde);
    }

    report.verdict = if report.hypothesis_output.checked == 0 {
        Verdict::Vacuous
    } else if report.hypothesis_output.total_violations == 0
        && report.hypothesis_reach.total_violations == 0
        && report
            .envelope_check
            .as_ref()
            .is_none_or(|c| c.total_violations == 0)
    {
        Verdict::Pass
    } else {
        Verdict::Violated
    };
    Ok(report)
}

/// s-grid from observed initial magnitudes (plus 0 and the global state
/// magnitude), t-grid uniform over the stored horizon.
fn auto_fit_grids(ensemble: &Ensemble) -> (Vec<f64>, Vec<f64>) {
    let mut s_grid: Vec<f64> = vec![0.0];
    let mut magnitudes: Vec<f64> = ensemble
        .trajectories
        .iter()
        .map(Trajectory::initial_omega)
        .collect();
    let global_max = ensemble
        .trajectories
        .iter()
        .flat_map(|t| (0..t.len()).map(|k| t.omega(k)))
        .fold(0.0, f64::max);
    magnitudes.push(global_max);
    magnitudes.sort_by(f64::total_cmp);
    for m in magnitudes {
        if m > s_grid.last().copied().unwrap_or(0.0) + TIE_TOL {
            s_grid.push(m);
        }
    }
    if s_grid.len() < 2 {
        s_grid.push(1.0);
    }

    let max_len = ensemble
        .trajectories
        .iter()
        .map(Trajectory::len)
        .max()
        .unwrap_or(2);
    let horizon = (max_len - 1) as f64 * ensemble.params.dt;
    let n_t = max_len.clamp(2, 65);
    let t_grid: Vec<f64> = (0..n_t)
        .map(|j| horizon * j as f64 / (n_t - 1) as f64)
        .collect();
    (s_grid, t_grid)
}

/// The serializable form of a property hypothesis, as it appears in config
/// files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "property", rename_all = "snake_case")]
pub enum PropertyHypothesis {
    Mes {
        beta: KlEnvelope,
        gamma: ScalarGain,
    },
    Sit {
        beta: KlEnvelope,
        rho: ScalarGain,
    },
    Res {
        beta: KlEnvelope,
        region: crate::system::RegionSpec,
    },
    Rmeb {
        rho1: ScalarGain,
        sigma1: ScalarGain,
        sigma2: ScalarGain,
    },
    Reb {
        rho2: ScalarGain,
        sigma: ScalarGain,
    },
    SmallGain {
        beta: KlEnvelope,
        gamma: ScalarGain,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stride: Option<usize>,
    },
}

/// A hypothesis plus its evaluation slack.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityHypothesis {
    #[serde(flatten)]
    pub property: PropertyHypothesis,
    #[serde(default = "default_slack")]
    pub slack: f64,
    /// Also fit an empirical envelope to the ensemble and attach it to the
    /// report (small-gain runs fit one on success regardless).
    #[serde(default)]
    pub fit_envelope: bool,
}

fn default_slack() -> f64 {
    DEFAULT_SLACK
}

/// Outcome of running one hypothesis: either a plain property report or a
/// small-gain report.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HypothesisOutcome {
    Property(PropertyReport),
    SmallGain(SmallGainReport),
}

impl HypothesisOutcome {
    pub fn verdict(&self) -> Verdict {
        match self {
            HypothesisOutcome::Property(r) => r.verdict,
            HypothesisOutcome::SmallGain(r) => r.verdict,
        }
    }
}

impl StabilityHypothesis {
    pub fn run(&self, ensemble: &Ensemble) -> Result<HypothesisOutcome> {
        let slack = self.slack;
        let mut report = match &self.property {
            PropertyHypothesis::Mes { beta, gamma } => check_mes(ensemble, beta, gamma, slack)?,
            PropertyHypothesis::Sit { beta, rho } => check_sit(ensemble, beta, rho, slack)?,
            PropertyHypothesis::Res { beta, region } => {
                let region = region.resolve()?;
                check_res(ensemble, beta, &region, slack)?
            }
            PropertyHypothesis::Rmeb {
                rho1,
                sigma1,
                sigma2,
            } => check_rmeb(ensemble, rho1, sigma1, sigma2, slack)?,
            PropertyHypothesis::Reb { rho2, sigma } => check_reb(ensemble, rho2, sigma, slack)?,
            PropertyHypothesis::SmallGain {
                beta,
                gamma,
                stride,
            } => {
                return Ok(HypothesisOutcome::SmallGain(small_gain_check(
                    ensemble, beta, gamma, slack, *stride,
                )?))
            }
        };
        if self.fit_envelope {
            let (s_grid, t_grid) = auto_fit_grids(ensemble);
            report.fitted_envelope = Some(fit_kl_envelope(ensemble, &s_grid, &t_grid)?);
        }
        Ok(HypothesisOutcome::Property(report))
    }
}
