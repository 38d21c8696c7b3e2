//! Disturbed systems `x' = f(x, d)` with an error output `y = h(x)`, a
//! measurement output `w = g(x)`, and a magnitude measure `omega`.
//!
//! The disturbance realizes a differential inclusion: at each instant `d`
//! ranges over a nonempty compact set, so trajectories are produced by
//! sampling measurable (here: piecewise-constant) disturbance selections.

use crate::error::{Error, Result};
use crate::gains::ScalarGain;
use crate::seeds::derive_seed;
use crate::signal::DisturbanceSignal;
use crate::TIE_TOL;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

pub type FieldFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type OutputFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type MagnitudeFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type ContainsFn = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;

/// A nonempty bounded set of disturbance values.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceSet {
    /// A single value; `Singleton(vec![])` models an undisturbed system.
    Singleton(Vec<f64>),
    /// An axis-aligned box.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// A finite point set.
    Points(Vec<Vec<f64>>),
}

impl DisturbanceSet {
    /// The singleton `{0}` in `dim` coordinates.
    pub fn zero(dim: usize) -> Self {
        DisturbanceSet::Singleton(vec![0.0; dim])
    }

    /// No disturbance channel at all.
    pub fn none() -> Self {
        DisturbanceSet::Singleton(Vec::new())
    }

    pub fn symmetric_box(radius: f64, dim: usize) -> Self {
        DisturbanceSet::Box {
            lower: vec![-radius; dim],
            upper: vec![radius; dim],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DisturbanceSet::Singleton(v) => v.len(),
            DisturbanceSet::Box { lower, .. } => lower.len(),
            DisturbanceSet::Points(pts) => pts.first().map_or(0, Vec::len),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DisturbanceSet::Singleton(v) => {
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidConfig("disturbance value must be finite".into()));
                }
            }
            DisturbanceSet::Box { lower, upper } => {
                if lower.len() != upper.len() {
                    return Err(Error::DimensionMismatch {
                        expected: lower.len(),
                        got: upper.len(),
                    });
                }
                if lower.is_empty() {
                    return Err(Error::EmptyInput("disturbance box"));
                }
                for (l, u) in lower.iter().zip(upper) {
                    if !(l.is_finite() && u.is_finite() && l <= u) {
                        return Err(Error::InvalidConfig(format!(
                            "disturbance box needs finite lower <= upper, got [{l}, {u}]"
                        )));
                    }
                }
            }
            DisturbanceSet::Points(pts) => {
                if pts.is_empty() {
                    return Err(Error::EmptyInput("disturbance point set"));
                }
                let dim = pts[0].len();
                for p in pts {
                    if p.len() != dim {
                        return Err(Error::DimensionMismatch {
                            expected: dim,
                            got: p.len(),
                        });
                    }
                    if p.iter().any(|x| !x.is_finite()) {
                        return Err(Error::InvalidConfig(
                            "disturbance points must be finite".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, d: &[f64]) -> bool {
        if d.len() != self.dim() {
            return false;
        }
        match self {
            DisturbanceSet::Singleton(v) => {
                v.iter().zip(d).all(|(a, b)| (a - b).abs() <= TIE_TOL)
            }
            DisturbanceSet::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .zip(d)
                .all(|((l, u), x)| *x >= l - TIE_TOL && *x <= u + TIE_TOL),
            DisturbanceSet::Points(pts) => pts
                .iter()
                .any(|p| p.iter().zip(d).all(|(a, b)| (a - b).abs() <= TIE_TOL)),
        }
    }
}

/// How disturbance values are drawn when sampling signals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceStrategy {
    /// The zero vector (must belong to the set).
    Zero,
    /// Extreme points: box vertices, or members of a finite set.
    Vertices,
    /// Uniform over the box, or uniform over a finite set.
    Uniform,
}

impl DisturbanceStrategy {
    fn sample(self, set: &DisturbanceSet, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let value = match (self, set) {
            (_, DisturbanceSet::Singleton(v)) => v.clone(),
            (DisturbanceStrategy::Zero, _) => vec![0.0; set.dim()],
            (DisturbanceStrategy::Vertices, DisturbanceSet::Box { lower, upper }) => lower
                .iter()
                .zip(upper)
                .map(|(&l, &u)| if rng.random::<bool>() { u } else { l })
                .collect(),
            (DisturbanceStrategy::Uniform, DisturbanceSet::Box { lower, upper }) => lower
                .iter()
                .zip(upper)
                .map(|(&l, &u)| l + (u - l) * rng.random::<f64>())
                .collect(),
            (_, DisturbanceSet::Points(pts)) => {
                pts[rng.random_range(0..pts.len())].clone()
            }
        };
        if !set.contains(&value) {
            return Err(Error::DisturbanceOutsideSet { value });
        }
        Ok(value)
    }
}

/// A disturbed system with two output channels.
#[derive(Clone)]
pub struct DisturbedSystem {
    name: String,
    dim: usize,
    p_y: usize,
    p_w: usize,
    field: FieldFn,
    disturbance_set: DisturbanceSet,
    h: OutputFn,
    g: OutputFn,
    omega: MagnitudeFn,
    lipschitz_hint: Option<f64>,
}

impl fmt::Debug for DisturbedSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DisturbedSystem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("p_y", &self.p_y)
            .field("p_w", &self.p_w)
            .field("disturbance_set", &self.disturbance_set)
            .field("lipschitz_hint", &self.lipschitz_hint)
            .finish()
    }
}

impl DisturbedSystem {
    /// The magnitude measure defaults to the Euclidean norm.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        field: FieldFn,
        disturbance_set: DisturbanceSet,
        h: OutputFn,
        p_y: usize,
        g: OutputFn,
        p_w: usize,
    ) -> Self {
        debug_assert!(disturbance_set.validate().is_ok());
        Self {
            name: name.into(),
            dim,
            p_y,
            p_w,
            field,
            disturbance_set,
            h,
            g,
            omega: euclidean_magnitude(),
            lipschitz_hint: None,
        }
    }

    pub fn with_omega(mut self, omega: MagnitudeFn) -> Self {
        self.omega = omega;
        self
    }

    pub fn with_lipschitz_hint(mut self, hint: f64) -> Self {
        self.lipschitz_hint = Some(hint);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn p_y(&self) -> usize {
        self.p_y
    }

    pub fn p_w(&self) -> usize {
        self.p_w
    }

    pub fn disturbance_set(&self) -> &DisturbanceSet {
        &self.disturbance_set
    }

    pub fn lipschitz_hint(&self) -> Option<f64> {
        self.lipschitz_hint
    }

    /// Evaluates the field `f(x, d)` with dimension and membership checks.
    pub fn evaluate_field(&self, x: &[f64], d: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        if d.len() != self.disturbance_set.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.disturbance_set.dim(),
                got: d.len(),
            });
        }
        if !self.disturbance_set.contains(d) {
            return Err(Error::DisturbanceOutsideSet { value: d.to_vec() });
        }
        let mut out = vec![0.0; self.dim];
        (self.field)(x, d, &mut out);
        Ok(out)
    }

    /// Unchecked field evaluation into a buffer (integrator hot path).
    pub(crate) fn field_into(&self, x: &[f64], d: &[f64], out: &mut [f64]) {
        (self.field)(x, d, out);
    }

    pub fn error_output(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.p_y];
        (self.h)(x, &mut out);
        out
    }

    pub fn measurement_output(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.p_w];
        (self.g)(x, &mut out);
        out
    }

    pub(crate) fn h_into(&self, x: &[f64], out: &mut [f64]) {
        (self.h)(x, out);
    }

    pub(crate) fn g_into(&self, x: &[f64], out: &mut [f64]) {
        (self.g)(x, out);
    }

    /// `|h(x)|` (Euclidean norm of the error output).
    pub fn error_norm(&self, x: &[f64]) -> f64 {
        norm(&self.error_output(x))
    }

    /// `|g(x)|`.
    pub fn measurement_norm(&self, x: &[f64]) -> f64 {
        norm(&self.measurement_output(x))
    }

    /// The magnitude measure `|x|_omega`.
    pub fn omega(&self, x: &[f64]) -> f64 {
        (self.omega)(x)
    }

    /// Draws a piecewise-constant disturbance signal on `[0, horizon]` with
    /// the given hold interval; deterministic for a fixed seed.
    pub fn sample_disturbance_signal(
        &self,
        horizon: f64,
        hold: f64,
        strategy: DisturbanceStrategy,
        seed: u64,
    ) -> Result<DisturbanceSignal> {
        if hold <= 0.0 || horizon < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "signal sampling needs hold > 0 and horizon >= 0, got hold = {hold}, \
                 horizon = {horizon}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let intervals = (horizon / hold).ceil().max(1.0) as usize;
        let mut breakpoints = Vec::with_capacity(intervals);
        let mut values = Vec::with_capacity(intervals);
        for k in 0..intervals {
            breakpoints.push(k as f64 * hold);
            values.push(strategy.sample(&self.disturbance_set, &mut rng)?);
        }
        Ok(DisturbanceSignal::new(breakpoints, values))
    }

    /// Sampled lower estimate of the Lipschitz constant of `f(., d)` on a box:
    /// the max of `|f(eta, d) - f(zeta, d)| / |eta - zeta|` over random pairs
    /// and disturbances.
    pub fn estimate_lipschitz(
        &self,
        box_lower: &[f64],
        box_upper: &[f64],
        samples: usize,
        seed: u64,
    ) -> Result<f64> {
        if box_lower.len() != self.dim || box_upper.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: box_lower.len(),
            });
        }
        if box_lower.iter().zip(box_upper).any(|(l, u)| l > u) {
            return Err(Error::InvalidConfig("empty sampling box".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xb0c5));
        let mut best: f64 = 0.0;
        let mut f_eta = vec![0.0; self.dim];
        let mut f_zeta = vec![0.0; self.dim];
        let strategies = [
            DisturbanceStrategy::Zero,
            DisturbanceStrategy::Vertices,
            DisturbanceStrategy::Uniform,
        ];
        for _ in 0..samples {
            let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                box_lower
                    .iter()
                    .zip(box_upper)
                    .map(|(&l, &u)| l + (u - l) * rng.random::<f64>())
                    .collect()
            };
            let eta = draw(&mut rng);
            let zeta = draw(&mut rng);
            let dist = eta
                .iter()
                .zip(&zeta)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if dist < 1e-12 {
                continue;
            }
            for strategy in strategies {
                let d = match strategy.sample(&self.disturbance_set, &mut rng) {
                    Ok(d) => d,
                    Err(_) => continue, // e.g. zero outside an offset box
                };
                self.field_into(&eta, &d, &mut f_eta);
                self.field_into(&zeta, &d, &mut f_zeta);
                let df = f_eta
                    .iter()
                    .zip(&f_zeta)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                best = best.max(df / dist);
            }
        }
        Ok(best)
    }

    /// Spot check that `omega` grows along rays: for each radius, the minimum
    /// of `omega` over sampled directions must be nondecreasing, and strictly
    /// larger at the last radius than the first. Properness is declared, not
    /// proven; this only probes the declaration.
    pub fn check_properness(&self, radii: &[f64], directions: usize, seed: u64) -> bool {
        if radii.len() < 2 {
            return true;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x03e6a));
        let dirs: Vec<Vec<f64>> = (0..directions)
            .map(|_| {
                let v: Vec<f64> = (0..self.dim).map(|_| rng.random::<f64>() - 0.5).collect();
                let n = norm(&v).max(1e-12);
                v.into_iter().map(|x| x / n).collect()
            })
            .collect();
        let min_at = |r: f64| -> f64 {
            dirs.iter()
                .map(|d| {
                    let x: Vec<f64> = d.iter().map(|c| c * r).collect();
                    self.omega(&x)
                })
                .fold(f64::INFINITY, f64::min)
        };
        let mins: Vec<f64> = radii.iter().map(|&r| min_at(r)).collect();
        let monotone = mins.windows(2).all(|w| w[1] + 1e-9 >= w[0]);
        monotone && mins[mins.len() - 1] > mins[0]
    }
}

/// A closed "bad" region of the state space.
#[derive(Clone)]
pub enum RegionPredicate {
    /// `D = { x : |h(x)| <= rho(|g(x)|) }` (closed; boundary counts inside).
    GainForm(ScalarGain),
    /// Arbitrary membership test.
    SetForm { name: String, contains: ContainsFn },
}

impl fmt::Debug for RegionPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegionPredicate::GainForm(rho) => f.debug_tuple("GainForm").field(rho).finish(),
            RegionPredicate::SetForm { name, .. } => {
                f.debug_struct("SetForm").field("name", name).finish()
            }
        }
    }
}

impl RegionPredicate {
    pub fn gain_form(rho: ScalarGain) -> Self {
        RegionPredicate::GainForm(rho)
    }

    pub fn set_form(
        name: impl Into<String>,
        contains: impl Fn(&[f64]) -> bool + Send + Sync + 'static,
    ) -> Self {
        RegionPredicate::SetForm {
            name: name.into(),
            contains: Arc::new(contains),
        }
    }

    /// The single point `{0}`.
    pub fn origin() -> Self {
        Self::set_form("origin", |x| x.iter().all(|&c| c == 0.0))
    }

    pub fn empty() -> Self {
        Self::set_form("empty", |_| false)
    }

    pub fn all() -> Self {
        Self::set_form("all", |_| true)
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Self {
        Self::set_form(format!("ball(r={radius})"), move |x| {
            let d2: f64 = x
                .iter()
                .zip(&center)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d2.sqrt() <= radius + TIE_TOL
        })
    }

    pub fn describe(&self) -> String {
        match self {
            RegionPredicate::GainForm(_) => "gain_form".into(),
            RegionPredicate::SetForm { name, .. } => name.clone(),
        }
    }

    /// Membership test; boundary points of the gain form count as inside.
    pub fn contains(&self, sys: &DisturbedSystem, x: &[f64]) -> Result<bool> {
        match self {
            RegionPredicate::GainForm(rho) => {
                let hy = sys.error_norm(x);
                let gw = sys.measurement_norm(x);
                Ok(hy <= rho.evaluate(gw)? + TIE_TOL)
            }
            RegionPredicate::SetForm { contains, .. } => Ok(contains(x)),
        }
    }
}

/// Serializable region description, as it appears in config files: one of
/// the named regions `"origin" | "empty" | "all"`, a gain form, or a closed
/// ball.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RegionSpec {
    Named(String),
    GainForm { gain_form: ScalarGain },
    Ball { ball: BallSpec },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallSpec {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl RegionSpec {
    pub fn resolve(&self) -> Result<RegionPredicate> {
        match self {
            RegionSpec::Named(name) => match name.as_str() {
                "origin" => Ok(RegionPredicate::origin()),
                "empty" => Ok(RegionPredicate::empty()),
                "all" => Ok(RegionPredicate::all()),
                other => Err(Error::InvalidConfig(format!(
                    "unknown region {other:?}; expected origin, empty, all, \
                     a gain_form, or a ball"
                ))),
            },
            RegionSpec::GainForm { gain_form } => {
                gain_form.validate()?;
                Ok(RegionPredicate::gain_form(gain_form.clone()))
            }
            RegionSpec::Ball { ball } => {
                if ball.radius < 0.0 {
                    return Err(Error::InvalidConfig("ball radius must be >= 0".into()));
                }
                Ok(RegionPredicate::ball(ball.center.clone(), ball.radius))
            }
        }
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// The Euclidean norm as a magnitude measure.
pub fn euclidean_magnitude() -> MagnitudeFn {
    Arc::new(|x: &[f64]| norm(x))
}

/// Distance to a finite point cloud as a magnitude measure (continuous and
/// proper for any nonempty cloud).
pub fn distance_to_points_magnitude(points: Vec<Vec<f64>>) -> MagnitudeFn {
    assert!(!points.is_empty());
    Arc::new(move |x: &[f64]| {
        points
            .iter()
            .map(|p| {
                x.iter()
                    .zip(p)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(f64::INFINITY, f64::min)
    })
}
