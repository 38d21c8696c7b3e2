//! Deterministic artifact writers. All files are written in a fixed order
//! with default float formatting, so identical inputs give identical bytes.

use ostab::checks::{PropertyHypothesis, StabilityHypothesis};
use ostab::gains::KlEnvelope;
use ostab::{Ensemble, Result, ScalarGain};
use serde::Serialize;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| ostab::Error::InvalidConfig(format!("serialization failed: {e}")))?;
    out.write_all(text.as_bytes())?;
    out.write_all(b"\n")?;
    Ok(())
}

/// One CSV with all trajectories, a leading `traj` index column followed by
/// the per-trajectory schema.
pub fn write_trajectories_csv(path: &Path, ensemble: &Ensemble) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let sys = &ensemble.system;
    write!(out, "traj,t")?;
    for i in 1..=sys.dim() {
        write!(out, ",x_{i}")?;
    }
    for i in 1..=sys.p_y() {
        write!(out, ",y_{i}")?;
    }
    for i in 1..=sys.p_w() {
        write!(out, ",w_{i}")?;
    }
    writeln!(out, ",omega")?;
    for (id, traj) in ensemble.trajectories.iter().enumerate() {
        for k in 0..traj.len() {
            write!(out, "{id},{}", traj.time(k))?;
            for v in traj.state(k) {
                write!(out, ",{v}")?;
            }
            for v in traj.error_output(k) {
                write!(out, ",{v}")?;
            }
            for v in traj.measurement_output(k) {
                write!(out, ",{v}")?;
            }
            writeln!(out, ",{}", traj.omega(k))?;
        }
    }
    Ok(())
}

/// Per-time margin series for plotting: `lhs` is the error norm, `rhs` the
/// checked bound, on the binding window of each trajectory (strided).
pub fn write_margins_csv(
    path: &Path,
    ensemble: &Ensemble,
    checks: &[StabilityHypothesis],
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "check,property,traj,t,lhs,rhs,margin")?;
    for (ci, check) in checks.iter().enumerate() {
        let rows = margin_series(ensemble, check)?;
        for (name, traj, t, lhs, rhs) in rows {
            writeln!(
                out,
                "{ci},{name},{traj},{t},{lhs},{rhs},{}",
                lhs - check.slack * rhs
            )?;
        }
    }
    Ok(())
}

type MarginRow = (&'static str, usize, f64, f64, f64);

/// Recomputes lhs/bound pairs over binding windows with a stride that keeps
/// the series plot-sized. Small-gain hypotheses emit their fitted envelope
/// instead of a margin series.
fn margin_series(ensemble: &Ensemble, check: &StabilityHypothesis) -> Result<Vec<MarginRow>> {
    let mut rows = Vec::new();
    for (id, traj) in ensemble.trajectories.iter().enumerate() {
        if traj.is_empty() {
            continue;
        }
        let stride = (traj.len() / 512).max(1);
        let omega0 = traj.initial_omega();
        match &check.property {
            PropertyHypothesis::Mes { beta, gamma } => {
                for k in (0..traj.len()).step_by(stride) {
                    let rhs = beta
                        .evaluate(omega0, traj.time(k))?
                        .max(gamma.evaluate(traj.sup_measurement(k))?);
                    rows.push(("mes", id, traj.time(k), traj.error_norm(k), rhs));
                }
            }
            PropertyHypothesis::Sit { beta, rho } => {
                push_window_rows(&mut rows, "sit", traj, id, stride, beta, |k| {
                    Ok(traj.error_norm(k) > rho.evaluate(traj.measurement_norm(k))? + ostab::TIE_TOL)
                })?;
            }
            PropertyHypothesis::Res { beta, region } => {
                let region = region.resolve()?;
                push_window_rows(&mut rows, "res", traj, id, stride, beta, |k| {
                    Ok(!region.contains(&ensemble.system, traj.state(k))?)
                })?;
            }
            PropertyHypothesis::Rmeb {
                rho1,
                sigma1,
                sigma2,
            } => {
                let s1 = sigma1.evaluate(traj.error_norm(0))?;
                for k in (0..traj.len()).step_by(stride) {
                    let bound = rho1.evaluate(traj.measurement_norm(k))? + ostab::TIE_TOL;
                    if traj.error_norm(k) <= bound {
                        break;
                    }
                    let rhs = s1.max(sigma2.evaluate(traj.sup_measurement(k))?);
                    rows.push(("rmeb", id, traj.time(k), traj.error_norm(k), rhs));
                }
            }
            PropertyHypothesis::Reb { rho2, sigma } => {
                let rhs = sigma.evaluate(traj.error_norm(0))?;
                for k in (0..traj.len()).step_by(stride) {
                    let bound = rho2.evaluate(traj.measurement_norm(k))? + ostab::TIE_TOL;
                    if traj.error_norm(k) <= bound {
                        break;
                    }
                    rows.push(("reb", id, traj.time(k), traj.error_norm(k), rhs));
                }
            }
            PropertyHypothesis::SmallGain { .. } => {}
        }
    }
    Ok(rows)
}

fn push_window_rows(
    rows: &mut Vec<MarginRow>,
    name: &'static str,
    traj: &ostab::Trajectory,
    id: usize,
    stride: usize,
    beta: &KlEnvelope,
    mut binding: impl FnMut(usize) -> Result<bool>,
) -> Result<()> {
    if !binding(0)? {
        return Ok(());
    }
    let omega0 = traj.initial_omega();
    for k in (0..traj.len()).step_by(stride) {
        if !binding(k)? {
            break;
        }
        rows.push((
            name,
            id,
            traj.time(k),
            traj.error_norm(k),
            beta.evaluate(omega0, traj.time(k))?,
        ));
    }
    Ok(())
}

/// Fitted envelopes from check runs: `check,s,t,value` rows.
pub fn write_envelopes_csv(path: &Path, envelopes: &[(usize, &KlEnvelope)]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "check,s,t,value")?;
    for (ci, envelope) in envelopes {
        if let KlEnvelope::KlTable {
            s_grid,
            t_grid,
            values,
        } = envelope
        {
            for (i, &s) in s_grid.iter().enumerate() {
                for (j, &t) in t_grid.iter().enumerate() {
                    writeln!(out, "{ci},{s},{t},{}", values[i][j])?;
                }
            }
        }
    }
    Ok(())
}

/// Sampled gain curves from `gains` runs: `name,r,value` rows.
pub fn write_gain_samples_csv(
    path: &Path,
    gains: &[(String, ScalarGain)],
    r_max: f64,
    count: usize,
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "name,r,value")?;
    for (name, gain) in gains {
        let cap = gain.domain_cap().min(r_max);
        for i in 0..count.max(2) {
            let r = cap * i as f64 / (count.max(2) - 1) as f64;
            match gain.evaluate(r) {
                Ok(v) => writeln!(out, "{name},{r},{v}")?,
                Err(_) => break,
            }
        }
    }
    Ok(())
}
