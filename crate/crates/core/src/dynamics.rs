//! Non-linear plant dynamics: the inverted cart-pole vector field, RK4
//! integration with optional additive system noise, and trajectory
//! generation.
//!
//! The plant state is `[x, v, theta, omega]`: cart position (m), cart
//! velocity (m/s), pendulum angle (rad) and angular velocity (rad/s). The
//! angle is deliberately left unwrapped; the encoder consumes raw states and
//! a modulo jump would be a discontinuity the model never saw.

use crate::{Error, Result};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Cart-pole state dimension.
pub const CARTPOLE_DIM: usize = 4;

/// Any state entry beyond this magnitude is treated as a diverged
/// integration rather than silently propagated.
pub const OVERFLOW_GUARD: f64 = 1e12;

/// Internal RK4 substep width (s). Each sampling interval is subdivided so
/// the local truncation error stays negligible relative to channel noise.
pub const RK4_SUBSTEP_S: f64 = 1e-3;

/// Plant state vector; entries are finite by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    values: Vec<f64>,
}

impl StateVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput {
                context: "state vector",
            });
        }
        Ok(Self { values })
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(values.to_vec())
    }

    /// Cart-pole state `[x, v, theta, omega]`.
    pub fn cartpole(x: f64, v: f64, theta: f64, omega: f64) -> Result<Self> {
        Self::new(vec![x, v, theta, omega])
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Physical parameters of the inverted cart-pole.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartPoleParams {
    /// Pendulum mass (kg).
    pub pendulum_mass: f64,
    /// Cart mass (kg).
    pub cart_mass: f64,
    /// Pendulum length (m).
    pub length: f64,
    /// Gravitational acceleration (m/s^2).
    pub gravity: f64,
    /// Cart damping (N s/m).
    pub damping: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self {
            pendulum_mass: 1.0,
            cart_mass: 5.0,
            length: 0.2,
            gravity: -10.0,
            damping: 1.0,
        }
    }
}

impl CartPoleParams {
    pub fn validate(&self) -> Result<()> {
        if self.pendulum_mass <= 0.0 || self.cart_mass <= 0.0 || self.length <= 0.0 {
            return Err(Error::InvalidConfig(
                "cart-pole masses and length must be positive".into(),
            ));
        }
        if self.damping < 0.0 {
            return Err(Error::InvalidConfig("cart damping must be >= 0".into()));
        }
        Ok(())
    }
}

/// Additive per-dimension system noise applied after each integration step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Variance of the additive Gaussian system noise, per dimension.
    pub system_noise_variance: f64,
    pub rng_seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            system_noise_variance: 0.0,
            rng_seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.system_noise_variance < 0.0 || !self.system_noise_variance.is_finite() {
            return Err(Error::InvalidConfig(
                "system noise variance must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// A uniformly sampled sequence of plant states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<StateVector>,
    /// Sampling interval (s).
    pub dt: f64,
    /// Time of the first sample (s).
    pub t0: f64,
}

impl Trajectory {
    pub fn new(states: Vec<StateVector>, dt: f64, t0: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidConfig("trajectory dt must be > 0".into()));
        }
        let dim = match states.first() {
            Some(s) => s.dim(),
            None => {
                return Err(Error::InvalidConfig(
                    "trajectory must contain at least one state".into(),
                ))
            }
        };
        if let Some(bad) = states.iter().find(|s| s.dim() != dim) {
            return Err(Error::DimensionMismatch {
                context: "trajectory states",
                expected: dim,
                got: bad.dim(),
            });
        }
        Ok(Self { states, dt, t0 })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states[0].dim()
    }

    /// Sample time of state `k`.
    pub fn time_at(&self, k: usize) -> f64 {
        self.t0 + self.dt * k as f64
    }

    /// States as an `n x D` matrix.
    pub fn to_matrix(&self) -> ndarray::Array2<f64> {
        let n = self.len();
        let d = self.dim();
        let mut m = ndarray::Array2::zeros((n, d));
        for (i, s) in self.states.iter().enumerate() {
            m.row_mut(i).assign(&ndarray::ArrayView1::from(s.values()));
        }
        m
    }

    /// Writes the cart-pole CSV layout: `t,x,v,theta,omega`, time with six
    /// decimal places, values at full round-trip precision.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        if self.dim() != CARTPOLE_DIM {
            return Err(Error::DimensionMismatch {
                context: "trajectory csv export",
                expected: CARTPOLE_DIM,
                got: self.dim(),
            });
        }
        writeln!(w, "t,x,v,theta,omega")?;
        for (k, s) in self.states.iter().enumerate() {
            let v = s.values();
            writeln!(
                w,
                "{:.6},{},{},{},{}",
                self.time_at(k),
                v[0],
                v[1],
                v[2],
                v[3]
            )?;
        }
        Ok(())
    }
}

fn check_cartpole_state(state: &StateVector) -> Result<()> {
    if state.dim() != CARTPOLE_DIM {
        return Err(Error::DimensionMismatch {
            context: "cart-pole state",
            expected: CARTPOLE_DIM,
            got: state.dim(),
        });
    }
    if state.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput {
            context: "cart-pole state",
        });
    }
    Ok(())
}

/// Cart-pole vector field on the raw state `[x, v, theta, omega]`.
fn deriv_raw(s: &[f64; 4], p: &CartPoleParams) -> [f64; 4] {
    let (m, mc, l, g, delta) = (p.pendulum_mass, p.cart_mass, p.length, p.gravity, p.damping);
    let v = s[1];
    let theta = s[2];
    let omega = s[3];
    let (sin_t, cos_t) = theta.sin_cos();
    // Shared denominator m L^2 (M + m (1 - cos^2 theta)) and the recurring
    // term m L omega^2 sin(theta) - delta v.
    let denom = m * l * l * (mc + m * (1.0 - cos_t * cos_t));
    let swing = m * l * omega * omega * sin_t - delta * v;
    let dv = (-(m * m) * l * l * g * cos_t * sin_t + m * l * l * swing) / denom;
    let domega = ((m + mc) * m * g * l * sin_t - m * l * cos_t * swing) / denom;
    [v, dv, omega, domega]
}

/// Time derivative of the cart-pole state.
pub fn cartpole_derivative(state: &StateVector, params: &CartPoleParams) -> Result<StateVector> {
    check_cartpole_state(state)?;
    params.validate()?;
    let s: [f64; 4] = state.values().try_into().expect("dim checked");
    StateVector::new(deriv_raw(&s, params).to_vec())
}

fn rk4_raw(s: [f64; 4], h: f64, p: &CartPoleParams) -> [f64; 4] {
    let k1 = deriv_raw(&s, p);
    let mut s2 = s;
    for i in 0..4 {
        s2[i] = s[i] + 0.5 * h * k1[i];
    }
    let k2 = deriv_raw(&s2, p);
    let mut s3 = s;
    for i in 0..4 {
        s3[i] = s[i] + 0.5 * h * k2[i];
    }
    let k3 = deriv_raw(&s3, p);
    let mut s4 = s;
    for i in 0..4 {
        s4[i] = s[i] + h * k3[i];
    }
    let k4 = deriv_raw(&s4, p);
    let mut out = s;
    for i in 0..4 {
        out[i] = s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// One classical 4th-order Runge-Kutta step of width `h`, with no internal
/// subdivision and no noise. [`integrate_step`] builds on this.
pub fn rk4_step(state: &StateVector, h: f64, params: &CartPoleParams) -> Result<StateVector> {
    check_cartpole_state(state)?;
    if !(h > 0.0) {
        return Err(Error::InvalidConfig("rk4 step width must be > 0".into()));
    }
    let s: [f64; 4] = state.values().try_into().expect("dim checked");
    StateVector::new(rk4_raw(s, h, params).to_vec())
}

fn guard_raw(s: &[f64; 4], t: f64) -> Result<()> {
    for (i, v) in s.iter().enumerate() {
        if !v.is_finite() || v.abs() > OVERFLOW_GUARD {
            return Err(Error::IntegrationBlowUp {
                time: t,
                index: i,
                guard: OVERFLOW_GUARD,
            });
        }
    }
    Ok(())
}

/// Advances the state by `dt` using RK4 with internal substeps of at most
/// [`RK4_SUBSTEP_S`], then applies additive Gaussian system noise with
/// per-dimension variance `noise.system_noise_variance` when it is positive.
///
/// Blow-up (any entry beyond [`OVERFLOW_GUARD`]) is reported with the time
/// offset inside this step at which it was detected.
pub fn integrate_step<R: Rng + ?Sized>(
    state: &StateVector,
    dt: f64,
    params: &CartPoleParams,
    noise: &NoiseConfig,
    rng: &mut R,
) -> Result<StateVector> {
    check_cartpole_state(state)?;
    params.validate()?;
    noise.validate()?;
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig("integration dt must be > 0".into()));
    }
    let n_sub = (dt / RK4_SUBSTEP_S).ceil().max(1.0) as usize;
    let h = dt / n_sub as f64;
    let mut s: [f64; 4] = state.values().try_into().expect("dim checked");
    for k in 0..n_sub {
        s = rk4_raw(s, h, params);
        guard_raw(&s, (k + 1) as f64 * h)?;
    }
    if noise.system_noise_variance > 0.0 {
        let normal = Normal::new(0.0, noise.system_noise_variance.sqrt())
            .map_err(|e| Error::InvalidConfig(format!("system noise: {e}")))?;
        for v in s.iter_mut() {
            *v += normal.sample(rng);
        }
        guard_raw(&s, dt)?;
    }
    StateVector::new(s.to_vec())
}

/// Generates `n_steps + 1` states starting from `initial`, sampled every
/// `dt` seconds. The noise stream is derived from `noise.rng_seed`, so the
/// same configuration always yields a bitwise-identical trajectory.
pub fn generate_trajectory(
    initial: &StateVector,
    n_steps: usize,
    dt: f64,
    params: &CartPoleParams,
    noise: &NoiseConfig,
) -> Result<Trajectory> {
    if n_steps == 0 {
        return Err(Error::InvalidConfig(
            "trajectory needs at least one step".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise.rng_seed);
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(initial.clone());
    let mut current = initial.clone();
    for k in 0..n_steps {
        current = integrate_step(&current, dt, params, noise, &mut rng).map_err(|e| match e {
            Error::IntegrationBlowUp { time, index, guard } => Error::IntegrationBlowUp {
                time: k as f64 * dt + time,
                index,
                guard,
            },
            other => other,
        })?;
        states.push(current.clone());
    }
    Trajectory::new(states, dt, 0.0)
}
