//! TOML configuration files.
//!
//! An empty file resolves to the default experiment (the cart-pole with its
//! standard masses, a 1 km Rayleigh link at 10 W, 350 s of training at
//! 10 ms sampling). Unknown keys are rejected. A `[sweep]` table turns the
//! file into a sweep specification; the remaining keys then describe the
//! base run every cell starts from.

use crate::{CliError, CliResult};
use koopmon::channel::ChannelConfig;
use koopmon::dynamics::{CartPoleParams, NoiseConfig};
use koopmon::koopman::{TrainConfig, DEFAULT_HIDDEN};
use koopmon::monitor::{MonitoringConfig, PlantConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigFile {
    pub master_seed: u64,
    pub phase1_duration_s: f64,
    pub phase2_duration_s: f64,
    pub resync_interval: usize,
    pub latent_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub plant: PlantSection,
    pub channel: ChannelSection,
    pub train: TrainSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

impl Default for ConfigFile {
    fn default() -> Self {
        Self {
            master_seed: 0,
            phase1_duration_s: 350.0,
            phase2_duration_s: 10.0,
            resync_interval: 0,
            latent_dim: 2,
            hidden_widths: DEFAULT_HIDDEN.to_vec(),
            plant: PlantSection::default(),
            channel: ChannelSection::default(),
            train: TrainSection::default(),
            sweep: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantSection {
    pub pendulum_mass_kg: f64,
    pub cart_mass_kg: f64,
    pub pole_length_m: f64,
    pub gravity_mps2: f64,
    pub damping_nspm: f64,
    pub dt_s: f64,
    pub initial_state: Vec<f64>,
    pub system_noise_variance: f64,
}

impl Default for PlantSection {
    fn default() -> Self {
        let p = PlantConfig::default();
        Self {
            pendulum_mass_kg: p.params.pendulum_mass,
            cart_mass_kg: p.params.cart_mass,
            pole_length_m: p.params.length,
            gravity_mps2: p.params.gravity,
            damping_nspm: p.params.damping,
            dt_s: p.dt,
            initial_state: p.initial_state,
            system_noise_variance: p.noise.system_noise_variance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub tx_power_watts: f64,
    pub distance_m: f64,
    pub pathloss_exp: f64,
    pub noise_variance_w: f64,
    pub fading_floor: f64,
    pub feedback_noisy: bool,
}

impl Default for ChannelSection {
    fn default() -> Self {
        let c = ChannelConfig::default();
        Self {
            tx_power_watts: c.tx_power,
            distance_m: c.distance_m,
            pathloss_exp: c.pathloss_exp,
            noise_variance_w: c.noise_variance,
            fading_floor: c.fading_floor,
            feedback_noisy: c.feedback_noisy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub prediction_depth: usize,
    pub loss_weights: [f64; 3],
    pub learning_rate: f64,
    pub val_fraction: f64,
    pub patience: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            prediction_depth: t.prediction_depth,
            loss_weights: t.loss_weights,
            learning_rate: t.learning_rate,
            val_fraction: t.val_fraction,
            patience: t.patience,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub latent_dims: Vec<usize>,
    pub tx_powers_watts: Vec<f64>,
    pub training_periods_s: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            latent_dims: vec![1, 2, 3, 4],
            tx_powers_watts: vec![0.1, 1.0, 10.0, 100.0],
            training_periods_s: vec![350.0],
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

/// A sweep: the base run plus the grid axes.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: MonitoringConfig,
    pub latent_dims: Vec<usize>,
    pub tx_powers_watts: Vec<f64>,
    pub training_periods_s: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    pub fn validate(&self) -> CliResult<()> {
        let bad = |msg: &str| Err(CliError::Config(msg.into()));
        if self.latent_dims.is_empty()
            || self.tx_powers_watts.is_empty()
            || self.training_periods_s.is_empty()
            || self.seeds.is_empty()
        {
            return bad("sweep axes must all be non-empty");
        }
        if self.latent_dims.iter().any(|&q| q == 0) {
            return bad("sweep latent_dims must be >= 1");
        }
        if self.tx_powers_watts.iter().any(|&p| !(p > 0.0)) {
            return bad("sweep tx_powers_watts must be > 0");
        }
        if self.training_periods_s.iter().any(|&t| !(t > 0.0)) {
            return bad("sweep training_periods_s must be > 0");
        }
        Ok(())
    }
}

/// A parsed configuration file: either one run or a sweep.
#[derive(Debug, Clone)]
pub enum LoadedConfig {
    Run(MonitoringConfig),
    Sweep(SweepSpec),
}

impl ConfigFile {
    pub fn to_monitoring(&self) -> MonitoringConfig {
        MonitoringConfig {
            phase1_duration_s: self.phase1_duration_s,
            phase2_duration_s: self.phase2_duration_s,
            resync_interval: self.resync_interval,
            latent_dim: self.latent_dim,
            hidden_widths: self.hidden_widths.clone(),
            plant: PlantConfig {
                params: CartPoleParams {
                    pendulum_mass: self.plant.pendulum_mass_kg,
                    cart_mass: self.plant.cart_mass_kg,
                    length: self.plant.pole_length_m,
                    gravity: self.plant.gravity_mps2,
                    damping: self.plant.damping_nspm,
                },
                dt: self.plant.dt_s,
                initial_state: self.plant.initial_state.clone(),
                noise: NoiseConfig {
                    system_noise_variance: self.plant.system_noise_variance,
                    rng_seed: 0,
                },
            },
            channel: ChannelConfig {
                tx_power: self.channel.tx_power_watts,
                distance_m: self.channel.distance_m,
                pathloss_exp: self.channel.pathloss_exp,
                noise_variance: self.channel.noise_variance_w,
                fading_floor: self.channel.fading_floor,
                feedback_noisy: self.channel.feedback_noisy,
                ..ChannelConfig::default()
            },
            train: TrainConfig {
                epochs: self.train.epochs,
                batch_size: self.train.batch_size,
                prediction_depth: self.train.prediction_depth,
                loss_weights: self.train.loss_weights,
                learning_rate: self.train.learning_rate,
                val_fraction: self.train.val_fraction,
                patience: self.train.patience,
            },
            master_seed: self.master_seed,
        }
    }

    pub fn from_monitoring(cfg: &MonitoringConfig) -> Self {
        Self {
            master_seed: cfg.master_seed,
            phase1_duration_s: cfg.phase1_duration_s,
            phase2_duration_s: cfg.phase2_duration_s,
            resync_interval: cfg.resync_interval,
            latent_dim: cfg.latent_dim,
            hidden_widths: cfg.hidden_widths.clone(),
            plant: PlantSection {
                pendulum_mass_kg: cfg.plant.params.pendulum_mass,
                cart_mass_kg: cfg.plant.params.cart_mass,
                pole_length_m: cfg.plant.params.length,
                gravity_mps2: cfg.plant.params.gravity,
                damping_nspm: cfg.plant.params.damping,
                dt_s: cfg.plant.dt,
                initial_state: cfg.plant.initial_state.clone(),
                system_noise_variance: cfg.plant.noise.system_noise_variance,
            },
            channel: ChannelSection {
                tx_power_watts: cfg.channel.tx_power,
                distance_m: cfg.channel.distance_m,
                pathloss_exp: cfg.channel.pathloss_exp,
                noise_variance_w: cfg.channel.noise_variance,
                fading_floor: cfg.channel.fading_floor,
                feedback_noisy: cfg.channel.feedback_noisy,
            },
            train: TrainSection {
                epochs: cfg.train.epochs,
                batch_size: cfg.train.batch_size,
                prediction_depth: cfg.train.prediction_depth,
                loss_weights: cfg.train.loss_weights,
                learning_rate: cfg.train.learning_rate,
                val_fraction: cfg.train.val_fraction,
                patience: cfg.train.patience,
            },
            sweep: None,
        }
    }
}

/// Parses a configuration string (the file contents).
pub fn parse_config(text: &str) -> CliResult<LoadedConfig> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    let base = file.to_monitoring();
    base.validate().map_err(CliError::from)?;
    match file.sweep {
        Some(sweep) => {
            let spec = SweepSpec {
                base,
                latent_dims: sweep.latent_dims,
                tx_powers_watts: sweep.tx_powers_watts,
                training_periods_s: sweep.training_periods_s,
                seeds: sweep.seeds,
            };
            spec.validate()?;
            Ok(LoadedConfig::Sweep(spec))
        }
        None => Ok(LoadedConfig::Run(base)),
    }
}

/// Loads a configuration file; a missing `--config` flag loads defaults.
pub fn load_config(path: Option<&Path>) -> CliResult<LoadedConfig> {
    match path {
        None => parse_config(""),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            parse_config(&text)
        }
    }
}

/// Serializes a run configuration back to TOML; `parse_config` of the
/// result reproduces the input exactly.
pub fn dump_config(cfg: &MonitoringConfig) -> CliResult<String> {
    toml::to_string_pretty(&ConfigFile::from_monitoring(cfg))
        .map_err(|e| CliError::Config(e.to_string()))
}
