//! Two-phase remote monitoring.
//!
//! Phase 1: the plant runs for a training period while the sensor streams
//! states and latent representations over the channel and both ends train
//! the split model. Phase 2: the sensor goes silent and the observer
//! predicts the plant locally by advancing the last received latent with
//! the learned transition matrix. An optional re-synchronization interval
//! lets the sensor transmit one fresh latent every so many steps to arrest
//! error propagation.

use crate::channel::{ChannelConfig, ChannelLink};
use crate::dynamics::{
    generate_trajectory, CartPoleParams, NoiseConfig, StateVector, Trajectory, CARTPOLE_DIM,
};
use crate::koopman::{
    train_with_links, SplitKoopmanModel, TrainConfig, TrainHistory, DEFAULT_HIDDEN,
};
use crate::seeding;
use crate::{Error, Result};
use ndarray::Array1;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Plant-side configuration: physics, sampling and system noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    pub params: CartPoleParams,
    /// Sampling interval (s).
    pub dt: f64,
    pub initial_state: Vec<f64>,
    pub noise: NoiseConfig,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            params: CartPoleParams::default(),
            dt: 0.01,
            // 3.14 rad, not pi: the standard initial angle sits just off
            // the inverted equilibrium so the pendulum actually falls.
            #[allow(clippy::approx_constant)]
            initial_state: vec![0.0, 0.0, 3.14, -0.5],
            noise: NoiseConfig::default(),
        }
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.noise.validate()?;
        if !(self.dt > 0.0) {
            return Err(Error::InvalidConfig("plant dt must be > 0".into()));
        }
        if self.initial_state.len() != CARTPOLE_DIM {
            return Err(Error::DimensionMismatch {
                context: "initial state",
                expected: CARTPOLE_DIM,
                got: self.initial_state.len(),
            });
        }
        if self.initial_state.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput {
                context: "initial state",
            });
        }
        Ok(())
    }
}

/// Full configuration of one monitoring run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitoringConfig {
    /// Training period T_P1 (s).
    pub phase1_duration_s: f64,
    /// Prediction period T_P2 (s).
    pub phase2_duration_s: f64,
    /// Steps between phase-2 latent re-synchronizations; 0 disables them.
    pub resync_interval: usize,
    /// Latent representation dimension q.
    pub latent_dim: usize,
    /// Encoder hidden widths (decoder mirrored).
    pub hidden_widths: Vec<usize>,
    pub plant: PlantConfig,
    pub channel: ChannelConfig,
    pub train: TrainConfig,
    pub master_seed: u64,
}

impl Default for MonitoringConfig {
    fn default() -> Self {
        Self {
            phase1_duration_s: 350.0,
            phase2_duration_s: 10.0,
            resync_interval: 0,
            latent_dim: 2,
            hidden_widths: DEFAULT_HIDDEN.to_vec(),
            plant: PlantConfig::default(),
            channel: ChannelConfig::default(),
            train: TrainConfig::default(),
            master_seed: 0,
        }
    }
}

impl MonitoringConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.phase1_duration_s > 0.0) || !(self.phase2_duration_s > 0.0) {
            return Err(Error::InvalidConfig("phase durations must be > 0".into()));
        }
        if self.latent_dim == 0 {
            return Err(Error::InvalidConfig("latent_dim must be >= 1".into()));
        }
        self.plant.validate()?;
        self.channel.validate()?;
        self.train.validate()
    }

    /// Number of sampled steps in a duration.
    pub fn steps_for(&self, duration_s: f64) -> usize {
        (duration_s / self.plant.dt).round() as usize
    }
}

/// RMSE of a prediction against a reference trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    pub rmse: f64,
    /// `20 log10(rmse)`; negative infinity for a perfect prediction.
    pub rmse_db: f64,
    pub per_dim: Vec<f64>,
}

/// Everything produced by one phase-1 run.
pub struct Phase1Output {
    pub model: SplitKoopmanModel,
    pub history: TrainHistory,
    /// Channel-equalized latent of the final phase-1 state; the seed of
    /// phase-2 rollouts.
    pub z_last: Array1<f64>,
    /// Ground-truth phase-1 trajectory.
    pub trajectory: Trajectory,
    pub transmissions: u64,
}

/// One complete monitoring run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitoringResult {
    pub config: MonitoringConfig,
    pub history: TrainHistory,
    /// Noiseless ground truth over phase 2.
    pub truth: Trajectory,
    /// Observer predictions over phase 2.
    pub predicted: Trajectory,
    pub rmse: f64,
    pub rmse_db: f64,
    pub rmse_per_dim: Vec<f64>,
    pub transmissions_phase1: u64,
    pub transmissions_phase2: u64,
    pub epochs_ran: usize,
}

impl MonitoringResult {
    /// Writes both phase-2 trajectories in the plant CSV layout with an
    /// extra `kind` column.
    pub fn write_trajectories_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,x,v,theta,omega,kind")?;
        let mut dump = |traj: &Trajectory, kind: &str| -> Result<()> {
            for (k, s) in traj.states.iter().enumerate() {
                let v = s.values();
                writeln!(
                    w,
                    "{:.6},{},{},{},{},{kind}",
                    traj.time_at(k),
                    v[0],
                    v[1],
                    v[2],
                    v[3]
                )?;
            }
            Ok(())
        };
        dump(&self.truth, "truth")?;
        dump(&self.predicted, "predicted")
    }
}

fn initial_state(cfg: &MonitoringConfig) -> Result<StateVector> {
    StateVector::from_slice(&cfg.plant.initial_state)
}

fn plant_noise(cfg: &MonitoringConfig) -> NoiseConfig {
    NoiseConfig {
        rng_seed: seeding::mix(&[cfg.master_seed, seeding::label_hash("plant")]),
        ..cfg.plant.noise
    }
}

/// Phase-1 training on a pre-generated trajectory; shared by
/// [`run_phase1`] and [`run_monitoring`] so that a standalone phase 1 and
/// the phase-1 prefix of a full run are identical.
fn run_phase1_on(cfg: &MonitoringConfig, trajectory: Trajectory) -> Result<Phase1Output> {
    let mut init_rng = seeding::stream(cfg.master_seed, "init");
    let model = SplitKoopmanModel::new(
        CARTPOLE_DIM,
        cfg.latent_dim,
        &cfg.hidden_widths,
        &mut init_rng,
    )?;

    let mut train_rng = seeding::stream(cfg.master_seed, "train");
    let mut uplink = ChannelLink::new(cfg.channel, rand::Rng::gen(&mut train_rng));
    let mut feedback = ChannelLink::new(cfg.channel, rand::Rng::gen(&mut train_rng));
    let (model, history) = train_with_links(
        model,
        &trajectory,
        &mut uplink,
        &mut feedback,
        &cfg.train,
        &mut train_rng,
    )
    .map_err(|e| e.in_phase("phase 1"))?;

    let last = trajectory.states.last().expect("non-empty trajectory");
    let z = model.encode_one(&Array1::from(last.values().to_vec()))?;
    let z_last = Array1::from(uplink.send(z.as_slice().expect("contiguous"))?);

    let transmissions = uplink.transmission_count() + feedback.transmission_count();
    Ok(Phase1Output {
        model,
        history,
        z_last,
        trajectory,
        transmissions,
    })
}

/// Runs phase 1 of the protocol: generates the plant trajectory over the
/// training period, trains the split model over the channel, and returns
/// the trained model together with the channel-equalized latent of the
/// final state.
pub fn run_phase1(cfg: &MonitoringConfig) -> Result<Phase1Output> {
    cfg.validate()?;
    let n1 = cfg.steps_for(cfg.phase1_duration_s);
    if n1 == 0 {
        return Err(Error::InvalidConfig("phase 1 shorter than dt".into()));
    }
    let trajectory = generate_trajectory(
        &initial_state(cfg)?,
        n1,
        cfg.plant.dt,
        &cfg.plant.params,
        &plant_noise(cfg),
    )
    .map_err(|e| e.in_phase("phase 1"))?;
    run_phase1_on(cfg, trajectory)
}

/// Rolls a latent forward `n_steps` and decodes every step. The latent is
/// advanced incrementally (one transition application per step), never
/// recomputed from scratch.
pub fn predict_rollout(
    model: &SplitKoopmanModel,
    z_start: &Array1<f64>,
    n_steps: usize,
    dt: f64,
    t0: f64,
) -> Result<Trajectory> {
    if n_steps == 0 {
        return Err(Error::InvalidConfig("rollout needs n_steps >= 1".into()));
    }
    let mut z = z_start.clone();
    let mut latents = ndarray::Array2::zeros((n_steps, model.latent_dim()));
    for step in 1..=n_steps {
        z = model.koopman.dot(&z);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::RolloutDiverged {
                step,
                spectral_radius: model.spectral_radius(),
            });
        }
        latents.row_mut(step - 1).assign(&z);
    }
    let decoded = model.decode(&latents)?;
    let states = decoded
        .outer_iter()
        .map(|row| StateVector::from_slice(row.as_slice().expect("contiguous")))
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(states, dt, t0)
}

/// Root mean square error between a predicted trajectory and the reference,
/// over all phase-2 steps and state dimensions.
pub fn evaluate_rmse(predicted: &Trajectory, truth: &Trajectory) -> Result<RmseReport> {
    if predicted.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            context: "rmse trajectory length",
            expected: truth.len(),
            got: predicted.len(),
        });
    }
    let d = truth.dim();
    if predicted.dim() != d {
        return Err(Error::DimensionMismatch {
            context: "rmse state dimension",
            expected: d,
            got: predicted.dim(),
        });
    }
    let n = truth.len();
    let mut per_dim = vec![0.0f64; d];
    for (p, t) in predicted.states.iter().zip(&truth.states) {
        for (i, (a, b)) in p.values().iter().zip(t.values()).enumerate() {
            per_dim[i] += (a - b) * (a - b);
        }
    }
    let rmse = (per_dim.iter().sum::<f64>() / (n * d) as f64).sqrt();
    for v in per_dim.iter_mut() {
        *v = (*v / n as f64).sqrt();
    }
    let rmse_db = if rmse > 0.0 {
        20.0 * rmse.log10()
    } else {
        f64::NEG_INFINITY
    };
    Ok(RmseReport {
        rmse,
        rmse_db,
        per_dim,
    })
}

/// Runs the full two-phase protocol: phase-1 training, then silent phase-2
/// prediction (with optional periodic latent re-synchronization) evaluated
/// against the true plant, which keeps running unobserved.
pub fn run_monitoring(cfg: &MonitoringConfig) -> Result<MonitoringResult> {
    run_monitoring_full(cfg).map(|(result, _)| result)
}

/// [`run_monitoring`], additionally returning the trained model (for
/// checkpointing or further evaluation).
pub fn run_monitoring_full(
    cfg: &MonitoringConfig,
) -> Result<(MonitoringResult, SplitKoopmanModel)> {
    cfg.validate()?;
    let n1 = cfg.steps_for(cfg.phase1_duration_s);
    let n2 = cfg.steps_for(cfg.phase2_duration_s);
    if n1 == 0 || n2 == 0 {
        return Err(Error::InvalidConfig("phase shorter than dt".into()));
    }
    let dt = cfg.plant.dt;

    // One continuous plant run covers both phases; phase 1 sees only its
    // prefix.
    let full = generate_trajectory(
        &initial_state(cfg)?,
        n1 + n2,
        dt,
        &cfg.plant.params,
        &plant_noise(cfg),
    )
    .map_err(|e| e.in_phase("plant"))?;
    let phase1_traj = Trajectory::new(full.states[..=n1].to_vec(), dt, 0.0)?;
    let p1 = run_phase1_on(cfg, phase1_traj)?;

    let truth = Trajectory::new(full.states[n1 + 1..].to_vec(), dt, (n1 + 1) as f64 * dt)?;

    let mut p2_link = ChannelLink::new(
        cfg.channel,
        seeding::mix(&[cfg.master_seed, seeding::label_hash("channel.phase2")]),
    );
    let mut z = p1.z_last.clone();
    let mut latents = ndarray::Array2::zeros((n2, p1.model.latent_dim()));
    for step in 1..=n2 {
        if cfg.resync_interval > 0 && step > 1 && (step - 1) % cfg.resync_interval == 0 {
            // The sensor sends one fresh latent of the current true state.
            let state = &full.states[n1 + step - 1];
            let z_fresh = p1
                .model
                .encode_one(&Array1::from(state.values().to_vec()))
                .map_err(|e| e.in_phase("phase 2"))?;
            z = Array1::from(
                p2_link
                    .send(z_fresh.as_slice().expect("contiguous"))
                    .map_err(|e| e.in_phase("phase 2"))?,
            );
        }
        z = p1.model.koopman.dot(&z);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::RolloutDiverged {
                step,
                spectral_radius: p1.model.spectral_radius(),
            }
            .in_phase("phase 2"));
        }
        latents.row_mut(step - 1).assign(&z);
    }
    let decoded = p1
        .model
        .decode(&latents)
        .map_err(|e| e.in_phase("phase 2"))?;
    let predicted = Trajectory::new(
        decoded
            .outer_iter()
            .map(|row| StateVector::from_slice(row.as_slice().expect("contiguous")))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.in_phase("phase 2"))?,
        dt,
        (n1 + 1) as f64 * dt,
    )?;

    let report = evaluate_rmse(&predicted, &truth)?;
    let result = MonitoringResult {
        config: cfg.clone(),
        epochs_ran: p1.history.len(),
        history: p1.history,
        truth,
        predicted,
        rmse: report.rmse,
        rmse_db: report.rmse_db,
        rmse_per_dim: report.per_dim,
        transmissions_phase1: p1.transmissions,
        transmissions_phase2: p2_link.transmission_count(),
    };
    Ok((result, p1.model))
}
