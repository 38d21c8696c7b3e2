//! Class-K and class-K∞ scalar gains and class-KL envelopes.
//!
//! A [`ScalarGain`] is a continuous, strictly increasing function with value
//! zero at zero, represented either parametrically (linear or power family),
//! as a tabulated breakpoint grid with linear interpolation, or as a
//! composition (`sum`, `max`, functional composition) of such gains. All
//! gains are evaluable, invertible on their range, and composable.
//!
//! Tabulated gains are defined only up to their last breakpoint; evaluation
//! beyond the cap is an error rather than extrapolation, so that monotone
//! certificates stay checkable.

mod kl;

pub use kl::{kl_factorize, verify_factorization, FactorizationReport, KlEnvelope};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// A class-K scalar gain.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ScalarGain {
    /// `r -> slope * r` with `slope > 0`.
    Linear { slope: f64 },
    /// `r -> coeff * r^exponent` with `coeff > 0`, `exponent > 0`.
    Power { coeff: f64, exponent: f64 },
    /// Strictly increasing breakpoints `(r, value)` starting at `(0, 0)`,
    /// linearly interpolated. `unbounded_tail` declares (without changing
    /// evaluation) that the gain is to be read as class-K∞.
    Table {
        points: Vec<(f64, f64)>,
        #[serde(default)]
        unbounded_tail: bool,
    },
    /// Pointwise sum of class-K gains (again class K).
    Sum { parts: Vec<ScalarGain> },
    /// Pointwise maximum of class-K gains (again class K).
    Max { parts: Vec<ScalarGain> },
    /// `r -> outer(inner(r))`.
    Compose {
        outer: Box<ScalarGain>,
        inner: Box<ScalarGain>,
    },
}

impl ScalarGain {
    /// The identity gain `r -> r`.
    pub fn identity() -> Self {
        ScalarGain::Linear { slope: 1.0 }
    }

    pub fn linear(slope: f64) -> Self {
        ScalarGain::Linear { slope }
    }

    pub fn power(coeff: f64, exponent: f64) -> Self {
        ScalarGain::Power { coeff, exponent }
    }

    pub fn table(points: Vec<(f64, f64)>) -> Self {
        ScalarGain::Table {
            points,
            unbounded_tail: false,
        }
    }

    /// Loads a tabulated gain from two-column CSV text (`r,value` per line).
    /// A non-numeric first line is treated as a header and skipped.
    pub fn table_from_csv(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut cols = line.split(',');
            let parse = |s: Option<&str>| -> Option<f64> { s.and_then(|v| v.trim().parse().ok()) };
            match (parse(cols.next()), parse(cols.next())) {
                (Some(r), Some(v)) => points.push((r, v)),
                _ if i == 0 => continue, // header line
                _ => {
                    return Err(Error::CsvParse {
                        line: i + 1,
                        detail: format!("expected two numeric columns, got {line:?}"),
                    })
                }
            }
        }
        let gain = ScalarGain::table(points);
        gain.validate()?;
        Ok(gain)
    }

    /// Checks the class-K invariants of the representation.
    pub fn validate(&self) -> Result<()> {
        match self {
            ScalarGain::Linear { slope } => {
                if !slope.is_finite() || *slope <= 0.0 {
                    return Err(Error::InvalidGain(format!(
                        "linear gain needs slope > 0, got {slope}"
                    )));
                }
            }
            ScalarGain::Power { coeff, exponent } => {
                if !coeff.is_finite() || *coeff <= 0.0 || !exponent.is_finite() || *exponent <= 0.0
                {
                    return Err(Error::InvalidGain(format!(
                        "power gain needs coeff > 0 and exponent > 0, got {coeff}, {exponent}"
                    )));
                }
            }
            ScalarGain::Table { points, .. } => {
                if points.len() < 2 {
                    return Err(Error::InvalidGain(
                        "tabulated gain needs at least two breakpoints".into(),
                    ));
                }
                if points[0] != (0.0, 0.0) {
                    return Err(Error::InvalidGain(format!(
                        "tabulated gain must start at (0, 0), got {:?}",
                        points[0]
                    )));
                }
                for pair in points.windows(2) {
                    let (r0, v0) = pair[0];
                    let (r1, v1) = pair[1];
                    if !(r1 > r0 && v1 > v0) || !r1.is_finite() || !v1.is_finite() {
                        return Err(Error::InvalidGain(format!(
                            "breakpoints must strictly increase in both coordinates: \
                             ({r0}, {v0}) then ({r1}, {v1})"
                        )));
                    }
                }
            }
            ScalarGain::Sum { parts } | ScalarGain::Max { parts } => {
                if parts.is_empty() {
                    return Err(Error::EmptyInput("gain composition parts"));
                }
                for p in parts {
                    p.validate()?;
                }
            }
            ScalarGain::Compose { outer, inner } => {
                outer.validate()?;
                inner.validate()?;
            }
        }
        Ok(())
    }

    /// Largest argument for which evaluation is defined (∞ for parametric
    /// families). Best effort for compositions; [`ScalarGain::evaluate`]
    /// remains the authoritative gate.
    pub fn domain_cap(&self) -> f64 {
        match self {
            ScalarGain::Linear { .. } | ScalarGain::Power { .. } => f64::INFINITY,
            ScalarGain::Table { points, .. } => points.last().map_or(0.0, |p| p.0),
            ScalarGain::Sum { parts } | ScalarGain::Max { parts } => parts
                .iter()
                .map(|p| p.domain_cap())
                .fold(f64::INFINITY, f64::min),
            ScalarGain::Compose { outer, inner } => {
                let ic = inner.domain_cap();
                let oc = outer.domain_cap();
                if oc.is_infinite() {
                    ic
                } else {
                    // Largest r <= ic with inner(r) <= oc.
                    match inner.inverse(oc) {
                        Ok(r) => r.min(ic),
                        Err(_) => ic,
                    }
                }
            }
        }
    }

    /// Whether the gain is class K∞ (unbounded). For tables this reflects the
    /// declared tail rule, not the stored data.
    pub fn is_unbounded(&self) -> bool {
        match self {
            ScalarGain::Linear { .. } | ScalarGain::Power { .. } => true,
            ScalarGain::Table { unbounded_tail, .. } => *unbounded_tail,
            ScalarGain::Sum { parts } | ScalarGain::Max { parts } => {
                parts.iter().any(|p| p.is_unbounded())
            }
            ScalarGain::Compose { outer, inner } => outer.is_unbounded() && inner.is_unbounded(),
        }
    }

    /// Evaluates the gain at `r >= 0`.
    pub fn evaluate(&self, r: f64) -> Result<f64> {
        if r < 0.0 || !r.is_finite() {
            return Err(Error::NegativeArgument(r));
        }
        match self {
            ScalarGain::Linear { slope } => Ok(slope * r),
            ScalarGain::Power { coeff, exponent } => {
                // Integer exponents take the exact powi route so that e.g.
                // (2r)^2 agrees bitwise with 4*r*r.
                if exponent.fract() == 0.0 && (1.0..=64.0).contains(exponent) {
                    Ok(coeff * r.powi(*exponent as i32))
                } else {
                    Ok(coeff * r.powf(*exponent))
                }
            }
            ScalarGain::Table { points, .. } => {
                let last = points.last().expect("validated table");
                if r > last.0 {
                    return Err(Error::DomainExceeded {
                        what: "tabulated gain".into(),
                        arg: r,
                        cap: last.0,
                    });
                }
                let idx = points.partition_point(|p| p.0 <= r);
                if idx == 0 {
                    return Ok(points[0].1);
                }
                if idx == points.len() {
                    return Ok(last.1);
                }
                let (r0, v0) = points[idx - 1];
                let (r1, v1) = points[idx];
                Ok(v0 + (v1 - v0) * (r - r0) / (r1 - r0))
            }
            ScalarGain::Sum { parts } => {
                let mut acc = 0.0;
                for p in parts {
                    acc += p.evaluate(r)?;
                }
                Ok(acc)
            }
            ScalarGain::Max { parts } => {
                let mut acc = f64::NEG_INFINITY;
                for p in parts {
                    acc = acc.max(p.evaluate(r)?);
                }
                Ok(acc)
            }
            ScalarGain::Compose { outer, inner } => outer.evaluate(inner.evaluate(r)?),
        }
    }

    /// Inverts the gain at `v` in its range, so that
    /// `evaluate(inverse(v)) == v` within interpolation tolerance.
    pub fn inverse(&self, v: f64) -> Result<f64> {
        if v < 0.0 || !v.is_finite() {
            return Err(Error::NegativeArgument(v));
        }
        if v == 0.0 {
            return Ok(0.0);
        }
        match self {
            ScalarGain::Linear { slope } => Ok(v / slope),
            ScalarGain::Power { coeff, exponent } => Ok((v / coeff).powf(1.0 / exponent)),
            ScalarGain::Table { points, .. } => {
                let last = points.last().expect("validated table");
                if v > last.1 {
                    return Err(Error::OutOfRange {
                        what: "tabulated gain".into(),
                        value: v,
                    });
                }
                let idx = points.partition_point(|p| p.1 <= v);
                if idx == 0 {
                    return Ok(points[0].0);
                }
                if idx == points.len() {
                    return Ok(last.0);
                }
                let (r0, v0) = points[idx - 1];
                let (r1, v1) = points[idx];
                Ok(r0 + (r1 - r0) * (v - v0) / (v1 - v0))
            }
            _ => self.inverse_by_bisection(v),
        }
    }

    /// Monotone bisection for representations without a closed-form inverse.
    fn inverse_by_bisection(&self, v: f64) -> Result<f64> {
        let cap = self.domain_cap();
        // Bracket the root.
        let mut hi = if cap.is_finite() { cap } else { 1.0 };
        if cap.is_infinite() {
            let mut iter = 0;
            while self.evaluate(hi)? < v {
                hi *= 2.0;
                iter += 1;
                if iter > 2000 {
                    return Err(Error::OutOfRange {
                        what: "gain (bracketing failed)".into(),
                        value: v,
                    });
                }
            }
        } else if self.evaluate(hi)? < v {
            return Err(Error::OutOfRange {
                what: "gain over its domain".into(),
                value: v,
            });
        }
        let mut lo = 0.0_f64;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.evaluate(mid)? < v {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-14 * hi.max(1.0) {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Pointwise maximum of class-K gains; again class K.
pub fn compose_max(parts: Vec<ScalarGain>) -> Result<ScalarGain> {
    if parts.is_empty() {
        return Err(Error::EmptyInput("compose_max parts"));
    }
    for p in &parts {
        p.validate()?;
    }
    if parts.len() == 1 {
        return Ok(parts.into_iter().next().expect("nonempty"));
    }
    Ok(ScalarGain::Max { parts })
}

/// The MES gain assembled from RMEB gains `rho1`, `sigma1`, `sigma2` and the
/// SIT gain `rho_tilde`:
///
/// `gamma(r) = max{rho1(r), rho_tilde(r), sigma1(rho1(r)), sigma1(rho_tilde(r)), sigma2(r)}`.
pub fn compose_mes_gain(
    rho1: &ScalarGain,
    sigma1: &ScalarGain,
    sigma2: &ScalarGain,
    rho_tilde: &ScalarGain,
) -> Result<ScalarGain> {
    for g in [rho1, sigma1, sigma2, rho_tilde] {
        g.validate()?;
    }
    let comp = |outer: &ScalarGain, inner: &ScalarGain| ScalarGain::Compose {
        outer: Box::new(outer.clone()),
        inner: Box::new(inner.clone()),
    };
    Ok(ScalarGain::Max {
        parts: vec![
            rho1.clone(),
            rho_tilde.clone(),
            comp(sigma1, rho1),
            comp(sigma1, rho_tilde),
            sigma2.clone(),
        ],
    })
}

/// Builds a class-K∞ gain `rho` with `gamma(r) < rho(r)` for all `r > 0`
/// (equivalently `gamma(rho^{-1}(s)) < s`), as `rho(r) = gamma(r) + r`.
/// The identity summand keeps `rho` unbounded whether or not `gamma` is.
pub fn build_sit_gain_from_mes(gamma: &ScalarGain) -> Result<ScalarGain> {
    gamma.validate()?;
    Ok(ScalarGain::Sum {
        parts: vec![gamma.clone(), ScalarGain::identity()],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn evaluate_identity_and_linear() {
        assert_eq!(ScalarGain::identity().evaluate(3.0).unwrap(), 3.0);
        assert_eq!(ScalarGain::linear(2.0).evaluate(1.5).unwrap(), 3.0);
        assert_eq!(ScalarGain::linear(2.0).evaluate(0.0).unwrap(), 0.0);
    }

    #[test]
    fn evaluate_table_interpolates() {
        let g = ScalarGain::table(vec![(0.0, 0.0), (1.0, 1.0), (2.0, 4.0)]);
        g.validate().unwrap();
        assert_eq!(g.evaluate(1.5).unwrap(), 2.5);
        assert_eq!(g.evaluate(0.0).unwrap(), 0.0);
        assert_eq!(g.evaluate(2.0).unwrap(), 4.0);
        assert!(matches!(
            g.evaluate(2.5),
            Err(Error::DomainExceeded { .. })
        ));
    }

    #[test]
    fn table_validation_rejects_non_monotone() {
        assert!(ScalarGain::table(vec![(0.0, 0.0), (1.0, 2.0), (2.0, 1.0)])
            .validate()
            .is_err());
        assert!(ScalarGain::table(vec![(0.5, 0.0), (1.0, 1.0)])
            .validate()
            .is_err());
        assert!(ScalarGain::table(vec![(0.0, 0.0)]).validate().is_err());
    }

    #[test]
    fn inverse_closed_forms() {
        assert_eq!(ScalarGain::linear(2.0).inverse(4.0).unwrap(), 2.0);
        assert_eq!(ScalarGain::identity().inverse(0.0).unwrap(), 0.0);
        assert_relative_eq!(
            ScalarGain::power(1.0, 2.0).inverse(9.0).unwrap(),
            3.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn inverse_table_and_roundtrip() {
        let g = ScalarGain::table(vec![(0.0, 0.0), (1.0, 1.0), (2.0, 4.0)]);
        assert_eq!(g.inverse(2.5).unwrap(), 1.5);
        assert!(matches!(g.inverse(5.0), Err(Error::OutOfRange { .. })));
        for v in [0.0, 0.3, 1.0, 2.2, 4.0] {
            let r = g.inverse(v).unwrap();
            assert_relative_eq!(g.evaluate(r).unwrap(), v, max_relative = 1e-10);
        }
    }

    #[test]
    fn inverse_bisection_on_sum() {
        // rho(r) = r^2 + r, invert at 6 -> r = 2.
        let rho = ScalarGain::Sum {
            parts: vec![ScalarGain::power(1.0, 2.0), ScalarGain::identity()],
        };
        assert_relative_eq!(rho.inverse(6.0).unwrap(), 2.0, max_relative = 1e-10);
    }

    #[test]
    fn compose_max_is_pointwise_max() {
        let g = compose_max(vec![ScalarGain::linear(3.0), ScalarGain::power(4.0, 2.0)]).unwrap();
        assert_eq!(g.evaluate(0.5).unwrap(), 1.5);
        assert_eq!(g.evaluate(2.0).unwrap(), 16.0);
        // Crossover at r = 3/4.
        assert_eq!(g.evaluate(0.75).unwrap(), 2.25);

        let single = compose_max(vec![ScalarGain::identity()]).unwrap();
        assert_eq!(single.evaluate(3.0).unwrap(), 3.0);
        let two = compose_max(vec![ScalarGain::linear(2.0), ScalarGain::linear(3.0)]).unwrap();
        assert_eq!(two.evaluate(1.0).unwrap(), 3.0);

        assert!(compose_max(vec![]).is_err());
    }

    #[test]
    fn mes_gain_enumerates_five_branches() {
        // rho1 = 2r, rho_tilde = r, sigma1 = r^2, sigma2 = 3r
        // -> gamma(r) = max{2r, r, 4r^2, r^2, 3r} = max{3r, 4r^2}.
        let gamma = compose_mes_gain(
            &ScalarGain::linear(2.0),
            &ScalarGain::power(1.0, 2.0),
            &ScalarGain::linear(3.0),
            &ScalarGain::identity(),
        )
        .unwrap();
        for i in 0..100 {
            let r = i as f64 * 0.05;
            let expected = (3.0 * r).max(4.0 * (r * r));
            assert_eq!(gamma.evaluate(r).unwrap(), expected, "r = {r}");
        }
    }

    #[test]
    fn mes_gain_with_identity_sigma1_collapses() {
        // sigma1 = id makes sigma1 . rho coincide with rho, so
        // gamma = max{rho1, rho_tilde, sigma2}.
        let gamma = compose_mes_gain(
            &ScalarGain::linear(2.0),
            &ScalarGain::identity(),
            &ScalarGain::linear(3.0),
            &ScalarGain::identity(),
        )
        .unwrap();
        for i in 0..50 {
            let r = i as f64 * 0.1;
            assert_eq!(gamma.evaluate(r).unwrap(), 3.0 * r);
        }
    }

    #[test]
    fn sit_gain_dominates_mes_gain() {
        // gamma = id -> rho = 2r, gamma(rho^{-1}(s)) = s/2.
        let rho = build_sit_gain_from_mes(&ScalarGain::identity()).unwrap();
        assert_eq!(rho.evaluate(1.0).unwrap(), 2.0);
        for s in [0.1, 1.0, 7.5] {
            let pre = rho.inverse(s).unwrap();
            assert_relative_eq!(pre, s / 2.0, max_relative = 1e-10);
            assert!(pre < s);
        }

        // gamma = r/2 -> rho = 3r/2, gamma(rho^{-1}(s)) = s/3.
        let rho = build_sit_gain_from_mes(&ScalarGain::linear(0.5)).unwrap();
        let pre = rho.inverse(3.0).unwrap();
        assert_relative_eq!(0.5 * pre, 1.0, max_relative = 1e-10);

        // gamma = r^2 (bounded domain irrelevant): rho = r^2 + r is K-infinity
        // through the linear term.
        let rho = build_sit_gain_from_mes(&ScalarGain::power(1.0, 2.0)).unwrap();
        assert!(rho.is_unbounded());
        assert_eq!(rho.evaluate(1.0).unwrap(), 2.0);
    }

    #[test]
    fn csv_table_parses_with_header() {
        let g = ScalarGain::table_from_csv("r,value\n0,0\n1,1\n2,4\n").unwrap();
        assert_eq!(g.evaluate(1.5).unwrap(), 2.5);
        assert!(ScalarGain::table_from_csv("0,0\n1,oops\n").is_err());
    }

    #[test]
    fn unbounded_flags() {
        assert!(ScalarGain::linear(1.0).is_unbounded());
        assert!(!ScalarGain::table(vec![(0.0, 0.0), (1.0, 1.0)]).is_unbounded());
        let declared = ScalarGain::Table {
            points: vec![(0.0, 0.0), (1.0, 1.0)],
            unbounded_tail: true,
        };
        assert!(declared.is_unbounded());
    }

    #[test]
    fn serde_family_tags() {
        let g: ScalarGain = serde_json::from_str(r#"{"family":"linear","slope":2.0}"#).unwrap();
        assert_eq!(g.evaluate(1.0).unwrap(), 2.0);
        let g: ScalarGain =
            serde_json::from_str(r#"{"family":"table","points":[[0,0],[1,1],[2,4]]}"#).unwrap();
        assert_eq!(g.evaluate(1.5).unwrap(), 2.5);
        assert!(serde_json::from_str::<ScalarGain>(r#"{"family":"quadratic"}"#).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_table() -> impl Strategy<Value = ScalarGain> {
            proptest::collection::vec((1e-3..1.0f64, 1e-3..1.0f64), 1..12).prop_map(|incs| {
                let mut points = vec![(0.0, 0.0)];
                let (mut r, mut v) = (0.0, 0.0);
                for (dr, dv) in incs {
                    r += dr;
                    v += dv;
                    points.push((r, v));
                }
                ScalarGain::table(points)
            })
        }

        proptest! {
            #[test]
            fn table_inverse_roundtrip(g in arb_table(), frac in 0.0..1.0f64) {
                let cap = g.domain_cap();
                let r = frac * cap;
                let v = g.evaluate(r).unwrap();
                let back = g.inverse(v).unwrap();
                prop_assert!((g.evaluate(back).unwrap() - v).abs() <= 1e-9 * v.max(1.0));
                prop_assert!((back - r).abs() <= 1e-9 * cap.max(1.0));
            }

            #[test]
            fn max_matches_bruteforce(
                slopes in proptest::collection::vec(0.1..5.0f64, 1..5),
                r in 0.0..20.0f64,
            ) {
                let parts: Vec<_> = slopes.iter().map(|&s| ScalarGain::linear(s)).collect();
                let g = compose_max(parts.clone()).unwrap();
                let brute = parts
                    .iter()
                    .map(|p| p.evaluate(r).unwrap())
                    .fold(f64::NEG_INFINITY, f64::max);
                prop_assert_eq!(g.evaluate(r).unwrap(), brute);
            }

            #[test]
            fn sit_gain_strictly_dominates(
                slope in 0.05..4.0f64,
                exp in 0.5..3.0f64,
                r in 1e-6..50.0f64,
            ) {
                for gamma in [ScalarGain::linear(slope), ScalarGain::power(slope, exp)] {
                    let rho = build_sit_gain_from_mes(&gamma).unwrap();
                    prop_assert!(gamma.evaluate(r).unwrap() < rho.evaluate(r).unwrap());
                }
            }
        }
    }
}
