//! Shared fixtures for the benchmark targets.

use ostab::catalog;
use ostab::trajectory::annulus_states;
use ostab::{DisturbanceStrategy, Ensemble, SimParams};

/// A medium ensemble on the spiral system.
pub fn spiral_ensemble(trajectories: usize, horizon: f64) -> Ensemble {
    let sys = catalog::example_5_5();
    let states = annulus_states(2, 0.5, 5.0, trajectories, 11).unwrap();
    let params = SimParams::new(11, horizon).with_dt(1e-3);
    Ensemble::simulate(&sys, &states, &params).unwrap()
}

/// A disturbed scalar ensemble with uniform disturbance sampling.
pub fn disturbed_ensemble(trajectories: usize, horizon: f64) -> Ensemble {
    let sys = catalog::disturbed_contraction(1.0);
    let states = annulus_states(1, 0.2, 2.0, trajectories, 13).unwrap();
    let params = SimParams::new(13, horizon)
        .with_dt(1e-3)
        .with_strategy(DisturbanceStrategy::Uniform);
    Ensemble::simulate(&sys, &states, &params).unwrap()
}
