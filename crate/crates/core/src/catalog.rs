//! Built-in reference systems and the JSON system description.

use crate::error::{Error, Result};
use crate::system::{DisturbanceSet, DisturbedSystem, FieldFn, OutputFn};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

fn projection_output(index: usize) -> OutputFn {
    Arc::new(move |x: &[f64], out: &mut [f64]| out[0] = x[index])
}

fn identity_output(dim: usize) -> OutputFn {
    Arc::new(move |x: &[f64], out: &mut [f64]| out[..dim].copy_from_slice(&x[..dim]))
}

fn constant_output(value: f64) -> OutputFn {
    Arc::new(move |_x: &[f64], out: &mut [f64]| out[0] = value)
}

fn spiral_field() -> FieldFn {
    Arc::new(|x: &[f64], _d: &[f64], out: &mut [f64]| {
        out[0] = x[0] + x[1];
        out[1] = -x[0] + x[1];
    })
}

/// Planar unstable spiral with unit measurement: `x1' = x1 + x2`,
/// `x2' = -x1 + x2`, error `y = x1`, measurement `w = 1`. Solutions rotate
/// clockwise while growing like `e^t`, so the error oscillates with unbounded
/// peaks although it keeps re-entering `|y| <= rho(|w|)`.
pub fn example_5_5() -> DisturbedSystem {
    DisturbedSystem::new(
        "example_5_5",
        2,
        spiral_field(),
        DisturbanceSet::none(),
        projection_output(0),
        1,
        constant_output(1.0),
        1,
    )
    .with_lipschitz_hint(std::f64::consts::SQRT_2)
}

/// The same spiral with a projection measurement `w = x2` instead of the
/// constant: the error can dominate the measurement only for bounded spells
/// (a quarter turn), which makes the decay requirement easy to meet.
pub fn spiral_projection() -> DisturbedSystem {
    DisturbedSystem::new(
        "spiral_projection",
        2,
        spiral_field(),
        DisturbanceSet::none(),
        projection_output(0),
        1,
        projection_output(1),
        1,
    )
    .with_lipschitz_hint(std::f64::consts::SQRT_2)
}

/// `x' = -x` with `y = w = x`.
pub fn scalar_contraction() -> DisturbedSystem {
    DisturbedSystem::new(
        "scalar_contraction",
        1,
        Arc::new(|x: &[f64], _d: &[f64], out: &mut [f64]| out[0] = -x[0]),
        DisturbanceSet::none(),
        identity_output(1),
        1,
        identity_output(1),
        1,
    )
    .with_lipschitz_hint(1.0)
}

/// `x' = -x` with `y = x` but a blind measurement `w = 0`.
pub fn scalar_contraction_g0() -> DisturbedSystem {
    DisturbedSystem::new(
        "scalar_contraction_g0",
        1,
        Arc::new(|x: &[f64], _d: &[f64], out: &mut [f64]| out[0] = -x[0]),
        DisturbanceSet::none(),
        identity_output(1),
        1,
        constant_output(0.0),
        1,
    )
    .with_lipschitz_hint(1.0)
}

/// `x' = -x + d` with `|d| <= delta`, `y = w = x`.
pub fn disturbed_contraction(delta: f64) -> DisturbedSystem {
    DisturbedSystem::new(
        "disturbed_contraction",
        1,
        Arc::new(|x: &[f64], d: &[f64], out: &mut [f64]| out[0] = -x[0] + d[0]),
        DisturbanceSet::symmetric_box(delta, 1),
        identity_output(1),
        1,
        identity_output(1),
        1,
    )
    .with_lipschitz_hint(1.0)
}

/// A user-specified linear system `x' = A x + B d` with outputs `y = C x`,
/// `w = G x` (both default to the identity) and a box disturbance set.
pub fn linear_system(
    a: Vec<Vec<f64>>,
    b: Option<Vec<Vec<f64>>>,
    c: Option<Vec<Vec<f64>>>,
    g: Option<Vec<Vec<f64>>>,
    d_lower: Option<Vec<f64>>,
    d_upper: Option<Vec<f64>>,
) -> Result<DisturbedSystem> {
    let n = a.len();
    if n == 0 || a.iter().any(|row| row.len() != n) {
        return Err(Error::InvalidConfig("state matrix must be square and nonempty".into()));
    }
    let m = b.as_ref().map_or(0, |b| b.first().map_or(0, Vec::len));
    if let Some(b) = &b {
        if b.len() != n || b.iter().any(|row| row.len() != m) {
            return Err(Error::InvalidConfig(
                "input matrix must have one row per state".into(),
            ));
        }
    }
    let check_out = |mat: &Option<Vec<Vec<f64>>>, what: &str| -> Result<usize> {
        match mat {
            None => Ok(n),
            Some(mat) => {
                if mat.is_empty() || mat.iter().any(|row| row.len() != n) {
                    return Err(Error::InvalidConfig(format!(
                        "{what} matrix must have {n} columns"
                    )));
                }
                Ok(mat.len())
            }
        }
    };
    let p_y = check_out(&c, "error output")?;
    let p_w = check_out(&g, "measurement output")?;

    let disturbance_set = if m == 0 {
        DisturbanceSet::none()
    } else {
        let lower = d_lower.ok_or_else(|| {
            Error::InvalidConfig("disturbed linear system needs d_lower".into())
        })?;
        let upper = d_upper.ok_or_else(|| {
            Error::InvalidConfig("disturbed linear system needs d_upper".into())
        })?;
        if lower.len() != m || upper.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: lower.len(),
            });
        }
        let set = DisturbanceSet::Box { lower, upper };
        set.validate()?;
        set
    };

    let a_mat = a;
    let b_mat = b;
    let field: FieldFn = Arc::new(move |x: &[f64], d: &[f64], out: &mut [f64]| {
        for (i, row) in a_mat.iter().enumerate() {
            let mut acc = 0.0;
            for (j, aij) in row.iter().enumerate() {
                acc += aij * x[j];
            }
            if let Some(b) = &b_mat {
                for (j, bij) in b[i].iter().enumerate() {
                    acc += bij * d[j];
                }
            }
            out[i] = acc;
        }
    });
    let matrix_output = |mat: Option<Vec<Vec<f64>>>| -> OutputFn {
        match mat {
            None => identity_output(n),
            Some(mat) => Arc::new(move |x: &[f64], out: &mut [f64]| {
                for (i, row) in mat.iter().enumerate() {
                    out[i] = row.iter().zip(x).map(|(m, xj)| m * xj).sum();
                }
            }),
        }
    };
    Ok(DisturbedSystem::new(
        "linear",
        n,
        field,
        disturbance_set,
        matrix_output(c),
        p_y,
        matrix_output(g),
        p_w,
    ))
}

/// All catalog entries under their config names (parameterized entries use
/// their defaults).
pub fn entries() -> Vec<(&'static str, DisturbedSystem)> {
    vec![
        ("example_5_5", example_5_5()),
        ("spiral_projection", spiral_projection()),
        ("scalar_contraction", scalar_contraction()),
        ("scalar_contraction_g0", scalar_contraction_g0()),
        ("disturbed_contraction", disturbed_contraction(1.0)),
    ]
}

/// One line per catalog entry: name plus what the system is.
pub fn describe_catalog() -> Vec<(String, String)> {
    vec![
        (
            "example_5_5".into(),
            "planar unstable spiral, error y = x1, unit measurement w = 1; the error \
             decays relative to the measurement only on bounded initial windows while \
             its peaks grow without bound"
                .into(),
        ),
        (
            "spiral_projection".into(),
            "growth-bounded demo: the same spiral with projection measurement w = x2; \
             the error can dominate the measurement for at most a quarter turn"
                .into(),
        ),
        (
            "scalar_contraction".into(),
            "x' = -x with y = w = x".into(),
        ),
        (
            "scalar_contraction_g0".into(),
            "x' = -x with y = x and blind measurement w = 0".into(),
        ),
        (
            "disturbed_contraction".into(),
            "x' = -x + d with |d| <= delta (default 1), y = w = x".into(),
        ),
        (
            "linear".into(),
            "user-specified x' = A x + B d with y = C x, w = G x (C, G default to \
             the identity) and a box disturbance set"
                .into(),
        ),
    ]
}

/// JSON description of a system: a catalog entry by name, or an explicit
/// linear system.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog: Option<String>,
    /// Disturbance radius for `disturbed_contraction`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear: Option<LinearSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSpec {
    pub a: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_upper: Option<Vec<f64>>,
}

impl SystemSpec {
    pub fn resolve(&self) -> Result<DisturbedSystem> {
        match (&self.catalog, &self.linear) {
            (Some(name), None) => match name.as_str() {
                "example_5_5" => Ok(example_5_5()),
                "spiral_projection" => Ok(spiral_projection()),
                "scalar_contraction" => Ok(scalar_contraction()),
                "scalar_contraction_g0" => Ok(scalar_contraction_g0()),
                "disturbed_contraction" => Ok(disturbed_contraction(self.delta.unwrap_or(1.0))),
                other => Err(Error::InvalidConfig(format!(
                    "unknown catalog entry {other:?}"
                ))),
            },
            (None, Some(linear)) => linear_system(
                linear.a.clone(),
                linear.b.clone(),
                linear.c.clone(),
                linear.g.clone(),
                linear.d_lower.clone(),
                linear.d_upper.clone(),
            ),
            _ => Err(Error::InvalidConfig(
                "system spec needs exactly one of `catalog` or `linear`".into(),
            )),
        }
    }
}
