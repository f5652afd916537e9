//! Shared fixtures for the pipeline benchmarks.

use koopmon::dynamics::{
    generate_trajectory, CartPoleParams, NoiseConfig, StateVector, Trajectory,
};

/// The standard probe trajectory: paper initial state, 10 ms sampling.
pub fn bench_trajectory(seconds: f64) -> Trajectory {
    // 3.14 rad, deliberately just off the inverted equilibrium.
    #[allow(clippy::approx_constant)]
    let initial = StateVector::cartpole(0.0, 0.0, 3.14, -0.5).expect("finite");
    generate_trajectory(
        &initial,
        (seconds / 0.01).round() as usize,
        0.01,
        &CartPoleParams::default(),
        &NoiseConfig::default(),
    )
    .expect("trajectory")
}
