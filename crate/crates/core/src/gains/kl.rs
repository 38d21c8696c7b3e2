//! Class-KL envelopes `beta(s, t)`: class K in `s` for fixed `t`,
//! nonincreasing to zero in `t` for fixed `s`.

use crate::error::{Error, Result};
use crate::gains::ScalarGain;
use serde::{Deserialize, Serialize};

/// A class-KL envelope.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KlEnvelope {
    /// `beta(s, t) = phi(s) * exp(a - b t)` with `phi` class K and `b > 0`.
    ExpKl {
        phi: ScalarGain,
        #[serde(default)]
        a: f64,
        b: f64,
    },
    /// Values on an `(s, t)` grid, bilinearly interpolated; nondecreasing in
    /// `s`, nonincreasing in `t`. Beyond the last `t` node (the declared
    /// decay horizon) the last column is extended scaled toward zero by
    /// `exp(-(t - horizon))`, which keeps the KL limit checkable. Beyond the
    /// last `s` node evaluation is an error.
    KlTable {
        s_grid: Vec<f64>,
        t_grid: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
}

impl KlEnvelope {
    /// `beta(s, t) = phi(s) e^{a - b t}`.
    pub fn exponential(phi: ScalarGain, a: f64, b: f64) -> Self {
        KlEnvelope::ExpKl { phi, a, b }
    }

    /// The envelope `s * e^{-t}`.
    pub fn unit_exponential() -> Self {
        KlEnvelope::exponential(ScalarGain::identity(), 0.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            KlEnvelope::ExpKl { phi, a, b } => {
                phi.validate()?;
                if !a.is_finite() || !b.is_finite() || *b <= 0.0 {
                    return Err(Error::InvalidGain(format!(
                        "exponential KL envelope needs finite a and b > 0, got a = {a}, b = {b}"
                    )));
                }
            }
            KlEnvelope::KlTable {
                s_grid,
                t_grid,
                values,
            } => {
                if s_grid.len() < 2 || t_grid.len() < 2 {
                    return Err(Error::InvalidGain(
                        "KL table needs at least a 2x2 grid".into(),
                    ));
                }
                if s_grid[0] != 0.0 || t_grid[0] != 0.0 {
                    return Err(Error::InvalidGain(
                        "KL table grids must start at 0".into(),
                    ));
                }
                if values.len() != s_grid.len() {
                    return Err(Error::DimensionMismatch {
                        expected: s_grid.len(),
                        got: values.len(),
                    });
                }
                for grid in [s_grid, t_grid] {
                    if grid.windows(2).any(|w| w[1] <= w[0]) {
                        return Err(Error::InvalidGain(
                            "KL table grids must strictly increase".into(),
                        ));
                    }
                }
                for row in values {
                    if row.len() != t_grid.len() {
                        return Err(Error::DimensionMismatch {
                            expected: t_grid.len(),
                            got: row.len(),
                        });
                    }
                    if row.windows(2).any(|w| w[1] > w[0] + 1e-12) {
                        return Err(Error::InvalidGain(
                            "KL table rows must be nonincreasing in t".into(),
                        ));
                    }
                }
                if values[0].iter().any(|&v| v != 0.0) {
                    return Err(Error::InvalidGain(
                        "KL table must vanish at s = 0".into(),
                    ));
                }
                for rows in values.windows(2) {
                    if rows[1]
                        .iter()
                        .zip(&rows[0])
                        .any(|(above, below)| above + 1e-12 < *below)
                    {
                        return Err(Error::InvalidGain(
                            "KL table columns must be nondecreasing in s".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Declared decay horizon (tabulated case only).
    pub fn horizon(&self) -> Option<f64> {
        match self {
            KlEnvelope::ExpKl { .. } => None,
            KlEnvelope::KlTable { t_grid, .. } => t_grid.last().copied(),
        }
    }

    pub fn evaluate(&self, s: f64, t: f64) -> Result<f64> {
        if s < 0.0 || !s.is_finite() {
            return Err(Error::NegativeArgument(s));
        }
        if t < 0.0 || !t.is_finite() {
            return Err(Error::NegativeArgument(t));
        }
        match self {
            KlEnvelope::ExpKl { phi, a, b } => Ok(phi.evaluate(s)? * (a - b * t).exp()),
            KlEnvelope::KlTable {
                s_grid,
                t_grid,
                values,
            } => {
                let s_max = *s_grid.last().expect("validated table");
                if s > s_max {
                    return Err(Error::DomainExceeded {
                        what: "KL table (s axis)".into(),
                        arg: s,
                        cap: s_max,
                    });
                }
                let t_max = *t_grid.last().expect("validated table");
                let (t_eff, taper) = if t > t_max {
                    (t_max, (-(t - t_max)).exp())
                } else {
                    (t, 1.0)
                };
                Ok(bilinear(s_grid, t_grid, values, s, t_eff) * taper)
            }
        }
    }

    /// Settle time `T_r(eps) = inf{t >= 0 : beta(r, t) <= eps}`, clamped to 0
    /// when `beta(r, 0) <= eps`, found by bisection on the monotone tail.
    ///
    /// For tabulated envelopes the crossing must occur within the declared
    /// horizon; the taper past it is a declaration, not data.
    pub fn settle_time(&self, r: f64, epsilon: f64) -> Result<f64> {
        if r <= 0.0 || epsilon <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "settle_time needs r > 0 and epsilon > 0, got r = {r}, epsilon = {epsilon}"
            )));
        }
        if self.evaluate(r, 0.0)? <= epsilon {
            return Ok(0.0);
        }
        let mut hi = match self {
            KlEnvelope::ExpKl { .. } => {
                let mut hi = 1.0_f64;
                let mut iter = 0;
                while self.evaluate(r, hi)? > epsilon {
                    hi *= 2.0;
                    iter += 1;
                    if iter > 200 {
                        return Err(Error::NoDecayWithinHorizon {
                            epsilon,
                            horizon: hi,
                        });
                    }
                }
                hi
            }
            KlEnvelope::KlTable { t_grid, .. } => {
                let horizon = *t_grid.last().expect("validated table");
                if self.evaluate(r, horizon)? > epsilon {
                    return Err(Error::NoDecayWithinHorizon { epsilon, horizon });
                }
                horizon
            }
        };
        let mut lo = 0.0_f64;
        while hi - lo > 1e-9 {
            let mid = 0.5 * (lo + hi);
            if self.evaluate(r, mid)? > epsilon {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// The envelope scaled pointwise by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> KlEnvelope {
        match self {
            KlEnvelope::ExpKl { phi, a, b } => KlEnvelope::ExpKl {
                phi: ScalarGain::Compose {
                    outer: Box::new(ScalarGain::linear(factor)),
                    inner: Box::new(phi.clone()),
                },
                a: *a,
                b: *b,
            },
            KlEnvelope::KlTable {
                s_grid,
                t_grid,
                values,
            } => KlEnvelope::KlTable {
                s_grid: s_grid.clone(),
                t_grid: t_grid.clone(),
                values: values
                    .iter()
                    .map(|row| row.iter().map(|v| v * factor).collect())
                    .collect(),
            },
        }
    }
}

fn bilinear(s_grid: &[f64], t_grid: &[f64], values: &[Vec<f64>], s: f64, t: f64) -> f64 {
    let (i0, i1, ws) = bracket(s_grid, s);
    let (j0, j1, wt) = bracket(t_grid, t);
    let v00 = values[i0][j0];
    let v01 = values[i0][j1];
    let v10 = values[i1][j0];
    let v11 = values[i1][j1];
    let v0 = v00 + (v01 - v00) * wt;
    let v1 = v10 + (v11 - v10) * wt;
    v0 + (v1 - v0) * ws
}

/// Bracketing indices and interpolation weight; callers guarantee
/// `grid[0] <= x <= grid[last]`.
fn bracket(grid: &[f64], x: f64) -> (usize, usize, f64) {
    let idx = grid.partition_point(|&g| g <= x);
    if idx == 0 {
        return (0, 0, 0.0);
    }
    if idx == grid.len() {
        let last = grid.len() - 1;
        return (last, last, 0.0);
    }
    let (lo, hi) = (idx - 1, idx);
    let w = (x - grid[lo]) / (grid[hi] - grid[lo]);
    (lo, hi, w)
}

/// Result of a pointwise factorization check.
#[derive(Debug, Clone, Serialize)]
pub struct FactorizationReport {
    /// Grid points violating the bound, as `(s, t, lhs, rhs)`.
    pub violations: Vec<(f64, f64, f64, f64)>,
    pub checked: usize,
}

impl FactorizationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.checked > 0
    }
}

/// Factorizes an exponential-family KL envelope `beta(s, t) = phi(s) e^{a - b t}`
/// into `alpha1, alpha2` (both class K∞) with
/// `alpha1(beta(s, t)) <= alpha2(s) e^{-lambda t}`:
/// take `p = ceil(lambda / b)`, `alpha1(r) = r^p`, `alpha2(s) = phi(s)^p e^{a p}`.
///
/// Other representations are not supported; verify a hand-supplied triple
/// with [`verify_factorization`] instead.
pub fn kl_factorize(beta: &KlEnvelope, lambda: f64) -> Result<(ScalarGain, ScalarGain)> {
    if lambda <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "factorization rate lambda must be positive, got {lambda}"
        )));
    }
    beta.validate()?;
    match beta {
        KlEnvelope::ExpKl { phi, a, b } => {
            let p = (lambda / b).ceil().max(1.0);
            let alpha1 = ScalarGain::power(1.0, p);
            let alpha2 = ScalarGain::Compose {
                outer: Box::new(ScalarGain::power((a * p).exp(), p)),
                inner: Box::new(phi.clone()),
            };
            Ok((alpha1, alpha2))
        }
        KlEnvelope::KlTable { .. } => Err(Error::Unsupported(
            "KL factorization is implemented for the exponential family only; \
             use verify_factorization with a hand-supplied pair"
                .into(),
        )),
    }
}

/// Checks `alpha1(beta(s, t)) <= alpha2(s) e^{-lambda t}` at every grid point,
/// with relative tolerance 1e-9 so that exact-equality factorizations pass in
/// floating point. An empty violation list means pass.
pub fn verify_factorization(
    beta: &KlEnvelope,
    alpha1: &ScalarGain,
    alpha2: &ScalarGain,
    lambda: f64,
    s_grid: &[f64],
    t_grid: &[f64],
) -> Result<FactorizationReport> {
    let mut violations = Vec::new();
    let mut checked = 0;
    for &s in s_grid {
        for &t in t_grid {
            let lhs = alpha1.evaluate(beta.evaluate(s, t)?)?;
            let rhs = alpha2.evaluate(s)? * (-lambda * t).exp();
            checked += 1;
            if lhs > rhs * (1.0 + 1e-9) + 1e-12 {
                violations.push((s, t, lhs, rhs));
            }
        }
    }
    Ok(FactorizationReport { violations, checked })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    }

    #[test]
    fn exponential_evaluates() {
        let beta = KlEnvelope::unit_exponential();
        assert_relative_eq!(beta.evaluate(2.0, 1.0).unwrap(), 2.0 * (-1.0f64).exp());
        assert_eq!(beta.evaluate(0.0, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn settle_time_matches_log_ratio() {
        let beta = KlEnvelope::unit_exponential();
        assert_eq!(beta.settle_time(1.0, 1.0).unwrap(), 0.0);
        let e2 = std::f64::consts::E.powi(2);
        assert_relative_eq!(
            beta.settle_time(e2, 1.0).unwrap(),
            2.0,
            epsilon = 1e-7
        );
        assert!(beta.settle_time(0.0, 1.0).is_err());
    }

    #[test]
    fn settle_time_monotone_in_r() {
        let beta = KlEnvelope::unit_exponential();
        let eps = 0.5;
        let mut last = 0.0;
        for r in [0.6, 1.0, 2.0, 5.0, 20.0] {
            let t = beta.settle_time(r, eps).unwrap();
            assert!(t + 1e-9 >= last, "T_r must be nondecreasing in r");
            last = t;
        }
    }

    #[test]
    fn table_envelope_evaluates_and_tapers() {
        let beta = KlEnvelope::KlTable {
            s_grid: vec![0.0, 1.0, 2.0],
            t_grid: vec![0.0, 1.0],
            values: vec![vec![0.0, 0.0], vec![1.0, 0.5], vec![2.0, 1.0]],
        };
        beta.validate().unwrap();
        assert_eq!(beta.evaluate(1.0, 0.0).unwrap(), 1.0);
        assert_eq!(beta.evaluate(1.5, 0.5).unwrap(), 1.125);
        // Past the declared horizon the last column decays exponentially.
        let past = beta.evaluate(2.0, 2.0).unwrap();
        assert_relative_eq!(past, (-1.0f64).exp(), max_relative = 1e-12);
        assert!(beta.evaluate(3.0, 0.0).is_err());
        // Settle time refuses targets the table never reaches.
        assert!(matches!(
            beta.settle_time(2.0, 0.5),
            Err(Error::NoDecayWithinHorizon { .. })
        ));
        assert_relative_eq!(beta.settle_time(2.0, 1.5).unwrap(), 0.5, epsilon = 1e-8);
    }

    #[test]
    fn factorize_unit_exponential() {
        let beta = KlEnvelope::unit_exponential();
        let (a1, a2) = kl_factorize(&beta, 1.0).unwrap();
        // p = 1: both identity.
        assert_eq!(a1.evaluate(3.0).unwrap(), 3.0);
        assert_eq!(a2.evaluate(3.0).unwrap(), 3.0);
        let report =
            verify_factorization(&beta, &a1, &a2, 1.0, &grid(0.0, 5.0, 11), &grid(0.0, 5.0, 11))
                .unwrap();
        assert!(report.passed());
    }

    #[test]
    fn factorize_shifted_exponential() {
        // beta = s e^{2 pi - t}, lambda = 2 -> alpha1 = r^2, alpha2 = s^2 e^{4 pi}.
        let beta = KlEnvelope::exponential(ScalarGain::identity(), 2.0 * PI, 1.0);
        let (a1, a2) = kl_factorize(&beta, 2.0).unwrap();
        assert_relative_eq!(a1.evaluate(3.0).unwrap(), 9.0);
        assert_relative_eq!(
            a2.evaluate(2.0).unwrap(),
            4.0 * (4.0 * PI).exp(),
            max_relative = 1e-12
        );
        let report =
            verify_factorization(&beta, &a1, &a2, 2.0, &grid(0.0, 4.0, 9), &grid(0.0, 8.0, 9))
                .unwrap();
        assert!(report.passed(), "violations: {:?}", report.violations);
    }

    #[test]
    fn factorize_fast_decay_needs_no_power() {
        // beta = s e^{-3t}, lambda = 2: e^{-3t} <= e^{-2t} already.
        let beta = KlEnvelope::exponential(ScalarGain::identity(), 0.0, 3.0);
        let (a1, a2) = kl_factorize(&beta, 2.0).unwrap();
        assert_eq!(a1.evaluate(1.5).unwrap(), 1.5);
        assert_eq!(a2.evaluate(1.5).unwrap(), 1.5);
        let report =
            verify_factorization(&beta, &a1, &a2, 2.0, &grid(0.0, 5.0, 7), &grid(0.0, 5.0, 7))
                .unwrap();
        assert!(report.passed());
    }

    #[test]
    fn verify_detects_rate_mismatch() {
        // Identity pair fails for lambda = 2 on s e^{-t}: e^{-t} > e^{-2t} for t > 0.
        let beta = KlEnvelope::unit_exponential();
        let id = ScalarGain::identity();
        let report =
            verify_factorization(&beta, &id, &id, 2.0, &[1.0], &grid(0.0, 3.0, 7)).unwrap();
        assert!(!report.passed());
        assert!(report.violations.iter().all(|&(_, t, _, _)| t > 0.0));
    }

    #[test]
    fn factorize_rejects_tables() {
        let beta = KlEnvelope::KlTable {
            s_grid: vec![0.0, 1.0],
            t_grid: vec![0.0, 1.0],
            values: vec![vec![0.0, 0.0], vec![1.0, 0.5]],
        };
        assert!(matches!(
            kl_factorize(&beta, 1.0),
            Err(Error::Unsupported(_))
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn factorization_passes_on_fresh_grid(
                a in -2.0..3.0f64,
                b in 0.2..3.0f64,
                lambda in 0.2..4.0f64,
                phi_slope in 0.2..3.0f64,
                seed_lo in 0.1..2.0f64,
            ) {
                let beta = KlEnvelope::exponential(ScalarGain::linear(phi_slope), a, b);
                let (a1, a2) = kl_factorize(&beta, lambda).unwrap();
                let s_grid: Vec<f64> = (0..8).map(|i| seed_lo * i as f64).collect();
                let t_grid: Vec<f64> = (0..8).map(|i| 0.7 * i as f64).collect();
                let report =
                    verify_factorization(&beta, &a1, &a2, lambda, &s_grid, &t_grid).unwrap();
                prop_assert!(report.passed(), "violations: {:?}", report.violations);
            }

            #[test]
            fn settle_time_monotone(
                r1 in 0.1..5.0f64,
                dr in 0.0..5.0f64,
                eps1 in 0.01..1.0f64,
                de in 0.0..1.0f64,
                b in 0.3..3.0f64,
            ) {
                let beta = KlEnvelope::exponential(ScalarGain::identity(), 0.5, b);
                let t_small_r = beta.settle_time(r1, eps1).unwrap();
                let t_big_r = beta.settle_time(r1 + dr, eps1).unwrap();
                prop_assert!(t_big_r + 1e-7 >= t_small_r);
                let t_big_eps = beta.settle_time(r1, eps1 + de).unwrap();
                prop_assert!(t_big_eps <= t_small_r + 1e-7);
            }
        }
    }
}
