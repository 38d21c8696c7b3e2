//! JSON run configuration.
//!
//! A single config file drives all subcommands; each reads the blocks it
//! needs. Seeds are mandatory wherever randomness is involved, so identical
//! configs produce byte-identical outputs.

use ostab::checks::StabilityHypothesis;
use ostab::system::RegionSpec;
use ostab::trajectory::{annulus_states, box_grid_states};
use ostab::{
    DisturbanceStrategy, DisturbedSystem, Error, KlEnvelope, Result, ScalarGain, SimParams,
    StateGrid,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<ostab::catalog::SystemSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_states: Option<InitialStatesSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checks: Vec<StabilityHypothesis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyapunov: Option<LyapunovSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<GainsSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_json_with_base(text, Path::new("."))
    }

    /// Parses a config, first inlining any `{"family": "table", "csv": path}`
    /// gain references with breakpoints loaded from two-column CSV files
    /// (paths relative to `base`).
    pub fn from_json_with_base(text: &str, base: &Path) -> Result<Self> {
        let mut value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("config parse error: {e}")))?;
        inline_csv_tables(&mut value, base)?;
        serde_json::from_value(value)
            .map_err(|e| Error::InvalidConfig(format!("config parse error: {e}")))
    }

    pub fn system(&self) -> Result<DisturbedSystem> {
        self.system
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("config needs a `system` block".into()))?
            .resolve()
    }

    pub fn simulation(&self) -> Result<&SimulationSpec> {
        self.simulation
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("config needs a `simulation` block".into()))
    }

    pub fn initial_states(&self, sys: &DisturbedSystem, seed: u64) -> Result<Vec<Vec<f64>>> {
        self.initial_states
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("config needs an `initial_states` block".into()))?
            .resolve(sys.dim(), seed)
    }
}

/// Replaces `{"family": "table", "csv": "<path>"}` objects anywhere in the
/// config with the breakpoints parsed from the referenced file.
fn inline_csv_tables(value: &mut serde_json::Value, base: &Path) -> Result<()> {
    match value {
        serde_json::Value::Object(map) => {
            let is_csv_table = map.get("family").and_then(|f| f.as_str()) == Some("table")
                && map.contains_key("csv");
            if is_csv_table {
                let rel = map
                    .get("csv")
                    .and_then(|p| p.as_str())
                    .ok_or_else(|| Error::InvalidConfig("csv path must be a string".into()))?
                    .to_string();
                let text = std::fs::read_to_string(base.join(&rel))?;
                let gain = ScalarGain::table_from_csv(&text)?;
                let ScalarGain::Table { points, .. } = &gain else {
                    unreachable!("table_from_csv builds tables");
                };
                map.remove("csv");
                map.insert(
                    "points".into(),
                    serde_json::to_value(points)
                        .map_err(|e| Error::InvalidConfig(e.to_string()))?,
                );
            } else {
                for v in map.values_mut() {
                    inline_csv_tables(v, base)?;
                }
            }
        }
        serde_json::Value::Array(items) => {
            for v in items {
                inline_csv_tables(v, base)?;
            }
        }
        _ => {}
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub horizon: f64,
    #[serde(default = "default_hold")]
    pub hold: f64,
    /// Mandatory: no implicit entropy anywhere.
    pub seed: u64,
    #[serde(default = "default_blowup")]
    pub blowup_bound: f64,
    #[serde(default = "default_strategy")]
    pub strategy: DisturbanceStrategy,
}

impl SimulationSpec {
    pub fn params(&self, seed_override: Option<u64>) -> SimParams {
        SimParams::new(seed_override.unwrap_or(self.seed), self.horizon)
            .with_dt(self.dt)
            .with_hold(self.hold)
            .with_strategy(self.strategy)
            .with_blowup_bound(self.blowup_bound)
    }
}

fn default_dt() -> f64 {
    1e-3
}

fn default_hold() -> f64 {
    0.1
}

fn default_blowup() -> f64 {
    1e8
}

fn default_strategy() -> DisturbanceStrategy {
    DisturbanceStrategy::Zero
}

/// Exactly one of the three samplers.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialStatesSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explicit: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box_grid: Option<BoxGridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annulus: Option<AnnulusSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxGridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnulusSpec {
    pub r_min: f64,
    pub r_max: f64,
    pub count: usize,
}

impl InitialStatesSpec {
    pub fn resolve(&self, dim: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        match (&self.explicit, &self.box_grid, &self.annulus) {
            (Some(states), None, None) => {
                for s in states {
                    if s.len() != dim {
                        return Err(Error::DimensionMismatch {
                            expected: dim,
                            got: s.len(),
                        });
                    }
                }
                Ok(states.clone())
            }
            (None, Some(grid), None) => box_grid_states(&grid.lower, &grid.upper, &grid.counts),
            (None, None, Some(annulus)) => {
                annulus_states(dim, annulus.r_min, annulus.r_max, annulus.count, seed)
            }
            _ => Err(Error::InvalidConfig(
                "initial_states needs exactly one of `explicit`, `box_grid`, `annulus`".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovSpec {
    pub grid: Vec<AxisSpec>,
    pub alpha_tilde: ScalarGain,
    pub region: RegionSpec,
    pub horizon_cap: f64,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_tilde: Option<KlEnvelope>,
    #[serde(default)]
    pub checks: LyapunovChecks,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate: Option<CandidateSpec>,
}

fn default_budget() -> usize {
    1
}

impl LyapunovSpec {
    pub fn state_grid(&self) -> Result<StateGrid> {
        StateGrid::new(self.grid.iter().map(AxisSpec::resolve).collect())
    }
}

/// A grid axis: explicit nodes or a uniform range.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisSpec {
    Explicit(Vec<f64>),
    Uniform { min: f64, max: f64, count: usize },
}

impl AxisSpec {
    fn resolve(&self) -> Vec<f64> {
        match self {
            AxisSpec::Explicit(v) => v.clone(),
            AxisSpec::Uniform { min, max, count } => StateGrid::linspace(*min, *max, *count),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LyapunovChecks {
    pub sandwich: Option<SlackSpec>,
    pub exp_decrease: Option<ExpDecreaseSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlackSpec {
    pub slack: f64,
}

impl Default for SlackSpec {
    fn default() -> Self {
        Self {
            slack: ostab::checks::DEFAULT_SLACK,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpDecreaseSpec {
    #[serde(default = "default_probes")]
    pub probes: usize,
    pub horizon: f64,
    #[serde(default = "default_slack")]
    pub slack: f64,
}

fn default_probes() -> usize {
    16
}

fn default_slack() -> f64 {
    ostab::checks::DEFAULT_SLACK
}

/// A quadratic candidate `V(x) = x^T Q x` checked in integral and gradient
/// form against the decrease rate `alpha3`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateSpec {
    pub quadratic: Vec<Vec<f64>>,
    pub alpha3: ScalarGain,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    #[serde(default = "default_slack")]
    pub slack: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradient_probes: Option<Vec<Vec<f64>>>,
}

fn default_fd_step() -> f64 {
    1e-5
}

pub type CandidateFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;

impl CandidateSpec {
    pub fn function(&self, dim: usize) -> Result<CandidateFn> {
        let q = self.quadratic.clone();
        if q.len() != dim || q.iter().any(|row| row.len() != dim) {
            return Err(Error::InvalidConfig(format!(
                "candidate quadratic form must be {dim}x{dim}"
            )));
        }
        Ok(Box::new(move |x: &[f64]| {
            let mut acc = 0.0;
            for (i, row) in q.iter().enumerate() {
                for (j, qij) in row.iter().enumerate() {
                    acc += qij * x[i] * x[j];
                }
            }
            acc
        }))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSpec {
    #[serde(default)]
    pub define: BTreeMap<String, ScalarGain>,
    #[serde(default)]
    pub derive: Vec<DeriveSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<SampleSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSpec {
    pub r_max: f64,
    #[serde(default = "default_sample_count")]
    pub count: usize,
}

fn default_sample_count() -> usize {
    200
}

/// A named gain derivation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum DeriveSpec {
    Max {
        name: String,
        parts: Vec<GainRef>,
    },
    MesGain {
        name: String,
        rho1: GainRef,
        sigma1: GainRef,
        sigma2: GainRef,
        rho_tilde: GainRef,
    },
    SitGainFromMes {
        name: String,
        gamma: GainRef,
    },
    KlFactorize {
        name: String,
        beta: KlEnvelope,
        lambda: f64,
        #[serde(default = "default_factorize_extent")]
        s_max: f64,
        #[serde(default = "default_factorize_extent")]
        t_max: f64,
        #[serde(default = "default_factorize_nodes")]
        nodes: usize,
    },
    SettleTime {
        name: String,
        beta: KlEnvelope,
        r: f64,
        epsilon: f64,
    },
}

fn default_factorize_extent() -> f64 {
    10.0
}

fn default_factorize_nodes() -> usize {
    50
}

/// Reference to a defined gain by name, or an inline definition.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GainRef {
    Name(String),
    Inline(ScalarGain),
}

impl GainRef {
    pub fn resolve(&self, defined: &BTreeMap<String, ScalarGain>) -> Result<ScalarGain> {
        match self {
            GainRef::Name(name) => defined.get(name).cloned().ok_or_else(|| {
                Error::InvalidConfig(format!("gain {name:?} is not defined"))
            }),
            GainRef::Inline(gain) => {
                gain.validate()?;
                Ok(gain.clone())
            }
        }
    }
}
