//! Batch front door: parse a JSON config, dispatch a run, write artifacts.
//!
//! Exit-code contract: 0 = all requested checks pass or are vacuous,
//! 1 = some check reported a violation, 2 = configuration or input error.

pub mod config;
pub mod output;

use config::{DeriveSpec, RunConfig};
use ostab::checks::{HypothesisOutcome, Verdict};
use ostab::gains::{
    build_sit_gain_from_mes, compose_max, compose_mes_gain, kl_factorize, verify_factorization,
    FactorizationReport,
};
use ostab::lyapunov::{
    build_value_function, exp_decrease_check, gradient_decrease_check, integral_decrease_check,
    sandwich_check, DecreaseProbeOpts, ValueFnParams,
};
use ostab::{Ensemble, Error, KlEnvelope, Result, ScalarGain, StateGrid};
use serde::Serialize;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_VIOLATED: i32 = 1;
pub const EXIT_INPUT_ERROR: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Check,
    Lyapunov,
    Gains,
    Catalog,
}

/// Loads the config, runs the command, writes artifacts under the resolved
/// output directory, and maps errors to the exit-code contract. Messages go
/// to stderr; the catalog listing goes to stdout.
pub fn run_command(
    command: Command,
    config_path: Option<&Path>,
    out_override: Option<&Path>,
    seed_override: Option<u64>,
) -> i32 {
    if command == Command::Catalog {
        let mut stdout = std::io::stdout();
        return match print_catalog(&mut stdout) {
            Ok(()) => EXIT_PASS,
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_INPUT_ERROR
            }
        };
    }
    let result = (|| -> Result<i32> {
        let path = config_path
            .ok_or_else(|| Error::InvalidConfig("this subcommand needs --config".into()))?;
        let text = fs::read_to_string(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let config = RunConfig::from_json_with_base(&text, base)?;
        let out_dir = out_override
            .map(Path::to_path_buf)
            .or_else(|| config.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("."));
        fs::create_dir_all(&out_dir)?;
        match command {
            Command::Simulate => run_simulate(&config, &out_dir, seed_override),
            Command::Check => run_check(&config, &out_dir, seed_override),
            Command::Lyapunov => run_lyapunov(&config, &out_dir, seed_override),
            Command::Gains => run_gains(&config, &out_dir),
            Command::Catalog => unreachable!("handled above"),
        }
    })();
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INPUT_ERROR
        }
    }
}

/// The catalog listing: one `name: description` line per entry.
pub fn print_catalog(out: &mut impl std::io::Write) -> Result<()> {
    for (name, description) in ostab::catalog::describe_catalog() {
        writeln!(out, "{name}: {description}")?;
    }
    Ok(())
}

fn simulate_ensemble(config: &RunConfig, seed_override: Option<u64>) -> Result<Ensemble> {
    let sys = config.system()?;
    let sim = config.simulation()?;
    let params = sim.params(seed_override);
    let states = config.initial_states(&sys, params.seed)?;
    Ensemble::simulate(&sys, &states, &params)
}

#[derive(Serialize)]
struct SimulateReport {
    system: String,
    trajectories: usize,
    truncated: usize,
    dt: f64,
    horizon: f64,
    seed: u64,
    max_error_sup: f64,
    max_measurement_sup: f64,
}

pub fn run_simulate(
    config: &RunConfig,
    out_dir: &Path,
    seed_override: Option<u64>,
) -> Result<i32> {
    let ensemble = simulate_ensemble(config, seed_override)?;
    output::write_trajectories_csv(&out_dir.join("trajectories.csv"), &ensemble)?;
    output::write_json(&out_dir.join("manifest.json"), &ensemble.manifest())?;
    let report = SimulateReport {
        system: ensemble.system.name().to_string(),
        trajectories: ensemble.trajectories.len(),
        truncated: ensemble.trajectories.iter().filter(|t| t.truncated()).count(),
        dt: ensemble.params.dt,
        horizon: ensemble.params.horizon,
        seed: ensemble.params.seed,
        max_error_sup: ensemble
            .trajectories
            .iter()
            .filter(|t| !t.is_empty())
            .map(|t| t.sup_error(t.len() - 1))
            .fold(0.0, f64::max),
        max_measurement_sup: ensemble
            .trajectories
            .iter()
            .filter(|t| !t.is_empty())
            .map(|t| t.sup_measurement(t.len() - 1))
            .fold(0.0, f64::max),
    };
    output::write_json(&out_dir.join("report.json"), &report)?;
    Ok(EXIT_PASS)
}

#[derive(Serialize)]
struct CheckRun {
    index: usize,
    slack: f64,
    outcome: HypothesisOutcome,
}

#[derive(Serialize)]
struct CheckReport {
    system: String,
    trajectories: usize,
    runs: Vec<CheckRun>,
    overall: Verdict,
}

pub fn run_check(config: &RunConfig, out_dir: &Path, seed_override: Option<u64>) -> Result<i32> {
    if config.checks.is_empty() {
        return Err(Error::InvalidConfig("config has no `checks` block".into()));
    }
    let ensemble = simulate_ensemble(config, seed_override)?;
    let mut runs = Vec::new();
    let mut overall = Verdict::Vacuous;
    for (index, hypothesis) in config.checks.iter().enumerate() {
        let outcome = hypothesis.run(&ensemble)?;
        match outcome.verdict() {
            Verdict::Violated => overall = Verdict::Violated,
            Verdict::Pass if overall != Verdict::Violated => overall = Verdict::Pass,
            _ => {}
        }
        runs.push(CheckRun {
            index,
            slack: hypothesis.slack,
            outcome,
        });
    }

    output::write_margins_csv(&out_dir.join("margins.csv"), &ensemble, &config.checks)?;
    let envelopes: Vec<(usize, &KlEnvelope)> = runs
        .iter()
        .filter_map(|r| match &r.outcome {
            HypothesisOutcome::SmallGain(sg) => {
                sg.envelope.as_ref().map(|f| (r.index, &f.envelope))
            }
            HypothesisOutcome::Property(p) => {
                p.fitted_envelope.as_ref().map(|f| (r.index, &f.envelope))
            }
        })
        .collect();
    if !envelopes.is_empty() {
        output::write_envelopes_csv(&out_dir.join("envelope.csv"), &envelopes)?;
    }
    let report = CheckReport {
        system: ensemble.system.name().to_string(),
        trajectories: ensemble.trajectories.len(),
        runs,
        overall,
    };
    output::write_json(&out_dir.join("report.json"), &report)?;
    Ok(if overall == Verdict::Violated {
        EXIT_VIOLATED
    } else {
        EXIT_PASS
    })
}

#[derive(Serialize)]
struct LyapunovReport {
    system: String,
    region: String,
    grid_points: usize,
    in_region_points: usize,
    flagged_unbounded_horizon: usize,
    /// The table under-approximates the true supremum: finite trajectory
    /// budget, finite horizon.
    approximation: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    sandwich: Option<ostab::lyapunov::SandwichReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    exp_decrease: Option<ostab::lyapunov::ExpDecreaseReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    candidate_integral: Option<ostab::lyapunov::CandidateDecreaseReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    candidate_gradient: Option<ostab::lyapunov::CandidateDecreaseReport>,
    overall: Verdict,
}

pub fn run_lyapunov(
    config: &RunConfig,
    out_dir: &Path,
    seed_override: Option<u64>,
) -> Result<i32> {
    let spec = config
        .lyapunov
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("config has no `lyapunov` block".into()))?;
    let sys = config.system()?;
    let sim = config.simulation()?;
    let region = spec.region.resolve()?;
    let grid = spec.state_grid()?;

    let mut params = ValueFnParams::new(
        spec.alpha_tilde.clone(),
        spec.horizon_cap,
        seed_override.unwrap_or(sim.seed),
    )
    .with_budget(spec.budget)
    .with_dt(sim.dt)
    .with_hold(sim.hold)
    .with_strategy(sim.strategy);
    if let Some(beta) = &spec.beta_tilde {
        params = params.with_beta_tilde(beta.clone());
    }
    let table = build_value_function(&sys, &region, &grid, &params)?;

    let mut table_csv = Vec::new();
    table.write_csv(&mut table_csv)?;
    fs::write(out_dir.join("lyapunov_table.csv"), table_csv)?;

    let mut violated = false;
    let sandwich = match &spec.checks.sandwich {
        Some(slack_spec) => {
            let beta = spec.beta_tilde.as_ref().ok_or_else(|| {
                Error::InvalidConfig("sandwich check needs `beta_tilde`".into())
            })?;
            let report = sandwich_check(&table, &sys, beta, slack_spec.slack)?;
            violated |= !report.passed();
            Some(report)
        }
        None => None,
    };
    let exp_decrease = match &spec.checks.exp_decrease {
        Some(opts) => {
            let report = exp_decrease_check(
                &table,
                &sys,
                &region,
                &DecreaseProbeOpts {
                    probes: opts.probes,
                    seed: ostab::seeds::derive_seed(params.seed, 0xdec),
                    slack: opts.slack,
                    horizon: opts.horizon,
                },
            )?;
            violated |= !report.violations.is_empty() || !report.integral_violations.is_empty();
            Some(report)
        }
        None => None,
    };

    let (candidate_integral, candidate_gradient) = match &spec.candidate {
        Some(candidate) => {
            let v = candidate.function(sys.dim())?;
            let ensemble = simulate_ensemble(config, seed_override)?;
            let integral =
                integral_decrease_check(&v, &candidate.alpha3, &region, &ensemble, candidate.slack)?;
            let probes: Vec<Vec<f64>> = match &candidate.gradient_probes {
                Some(p) => p.clone(),
                None => grid.points().collect(),
            };
            let gradient = gradient_decrease_check(
                &v,
                &sys,
                &region,
                &candidate.alpha3,
                &probes,
                candidate.fd_step,
                4,
                ostab::seeds::derive_seed(params.seed, 0x6ad),
                candidate.slack,
            )?;
            violated |= !integral.violations.is_empty() || !gradient.violations.is_empty();
            (Some(integral), Some(gradient))
        }
        None => (None, None),
    };

    let report = LyapunovReport {
        system: sys.name().to_string(),
        region: table.region.clone(),
        grid_points: table.grid.len(),
        in_region_points: table.meta.iter().filter(|m| m.in_region).count(),
        flagged_unbounded_horizon: table.meta.iter().filter(|m| m.unbounded_horizon).count(),
        approximation: "under-approximation",
        sandwich,
        exp_decrease,
        candidate_integral,
        candidate_gradient,
        overall: if violated {
            Verdict::Violated
        } else {
            Verdict::Pass
        },
    };
    output::write_json(&out_dir.join("report.json"), &report)?;
    Ok(if violated { EXIT_VIOLATED } else { EXIT_PASS })
}

#[derive(Serialize)]
#[serde(rename_all = "snake_case")]
enum DeriveOutcome {
    Gain {
        name: String,
        gain: ScalarGain,
    },
    Factorization {
        name: String,
        alpha1: ScalarGain,
        alpha2: ScalarGain,
        verification: FactorizationReport,
    },
    SettleTime {
        name: String,
        r: f64,
        epsilon: f64,
        value: f64,
    },
}

#[derive(Serialize)]
struct GainsReport {
    defined: Vec<String>,
    derived: Vec<DeriveOutcome>,
    overall: Verdict,
}

pub fn run_gains(config: &RunConfig, out_dir: &Path) -> Result<i32> {
    let spec = config
        .gains
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("config has no `gains` block".into()))?;
    let mut named: BTreeMap<String, ScalarGain> = BTreeMap::new();
    for (name, gain) in &spec.define {
        gain.validate()?;
        named.insert(name.clone(), gain.clone());
    }

    let mut derived = Vec::new();
    let mut violated = false;
    for derive in &spec.derive {
        match derive {
            DeriveSpec::Max { name, parts } => {
                let parts = parts
                    .iter()
                    .map(|p| p.resolve(&named))
                    .collect::<Result<Vec<_>>>()?;
                let gain = compose_max(parts)?;
                named.insert(name.clone(), gain.clone());
                derived.push(DeriveOutcome::Gain {
                    name: name.clone(),
                    gain,
                });
            }
            DeriveSpec::MesGain {
                name,
                rho1,
                sigma1,
                sigma2,
                rho_tilde,
            } => {
                let gain = compose_mes_gain(
                    &rho1.resolve(&named)?,
                    &sigma1.resolve(&named)?,
                    &sigma2.resolve(&named)?,
                    &rho_tilde.resolve(&named)?,
                )?;
                named.insert(name.clone(), gain.clone());
                derived.push(DeriveOutcome::Gain {
                    name: name.clone(),
                    gain,
                });
            }
            DeriveSpec::SitGainFromMes { name, gamma } => {
                let gain = build_sit_gain_from_mes(&gamma.resolve(&named)?)?;
                named.insert(name.clone(), gain.clone());
                derived.push(DeriveOutcome::Gain {
                    name: name.clone(),
                    gain,
                });
            }
            DeriveSpec::KlFactorize {
                name,
                beta,
                lambda,
                s_max,
                t_max,
                nodes,
            } => {
                let (alpha1, alpha2) = kl_factorize(beta, *lambda)?;
                let s_grid = StateGrid::linspace(0.0, *s_max, *nodes);
                let t_grid = StateGrid::linspace(0.0, *t_max, *nodes);
                let verification =
                    verify_factorization(beta, &alpha1, &alpha2, *lambda, &s_grid, &t_grid)?;
                violated |= !verification.passed();
                named.insert(format!("{name}_alpha1"), alpha1.clone());
                named.insert(format!("{name}_alpha2"), alpha2.clone());
                derived.push(DeriveOutcome::Factorization {
                    name: name.clone(),
                    alpha1,
                    alpha2,
                    verification,
                });
            }
            DeriveSpec::SettleTime {
                name,
                beta,
                r,
                epsilon,
            } => {
                let value = beta.settle_time(*r, *epsilon)?;
                derived.push(DeriveOutcome::SettleTime {
                    name: name.clone(),
                    r: *r,
                    epsilon: *epsilon,
                    value,
                });
            }
        }
    }

    if let Some(sample) = &spec.sample {
        let gains: Vec<(String, ScalarGain)> =
            named.iter().map(|(n, g)| (n.clone(), g.clone())).collect();
        output::write_gain_samples_csv(
            &out_dir.join("envelope.csv"),
            &gains,
            sample.r_max,
            sample.count,
        )?;
    }
    let report = GainsReport {
        defined: spec.define.keys().cloned().collect(),
        derived,
        overall: if violated {
            Verdict::Violated
        } else {
            Verdict::Pass
        },
    };
    output::write_json(&out_dir.join("report.json"), &report)?;
    Ok(if violated { EXIT_VIOLATED } else { EXIT_PASS })
}
