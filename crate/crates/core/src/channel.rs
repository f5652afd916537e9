//! Analog uncoded wireless link: power scaling, block Rayleigh fading with
//! path loss, AWGN, and known-CSI equalization.
//!
//! Every transmitted vector sees one fresh fading realization (one
//! independent Rayleigh magnitude per orthogonal resource), constant across
//! the vector's dimensions for that transmission and redrawn per time step.
//! The receiver divides by the known channel, so the equalized estimate is
//! the signal plus noise scaled by `1 / (sqrt(P) h)` per dimension.

use crate::{Error, Result};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Link configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// Transmission power P (W).
    pub tx_power: f64,
    /// Sensor-observer distance R (m).
    pub distance_m: f64,
    /// Path loss exponent.
    pub pathloss_exp: f64,
    /// AWGN variance N_c (W).
    pub noise_variance: f64,
    /// Lower clamp on the small-scale fading magnitude, relative to the
    /// large-scale level. Equalization divides by the gain; without the
    /// clamp a deep fade occasionally amplifies noise by 1e3+ and wrecks
    /// training.
    pub fading_floor: f64,
    /// Route gradient feedback through the same noisy link instead of the
    /// default ideal feedback path.
    pub feedback_noisy: bool,
    pub rng_seed: u64,
    /// Bypass fading and noise entirely: the equalized output is bitwise
    /// equal to the input. Not part of the file schema; used when a run
    /// must be compared against an un-split baseline.
    #[serde(default)]
    pub ideal: bool,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            tx_power: 10.0,
            distance_m: 1000.0,
            pathloss_exp: 2.0,
            noise_variance: 1e-8,
            fading_floor: 0.05,
            feedback_noisy: false,
            rng_seed: 0,
            ideal: false,
        }
    }
}

impl ChannelConfig {
    /// A distortion-free unit-power link (`values == signal` bitwise).
    pub fn ideal() -> Self {
        Self {
            tx_power: 1.0,
            distance_m: 1.0,
            pathloss_exp: 0.0,
            noise_variance: 0.0,
            ideal: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if !(self.tx_power > 0.0) {
            return bad("tx_power_watts must be > 0");
        }
        if !(self.distance_m > 0.0) {
            return bad("distance_m must be > 0");
        }
        if self.pathloss_exp < 0.0 {
            return bad("pathloss_exp must be >= 0");
        }
        if self.noise_variance < 0.0 {
            return bad("noise_variance_w must be >= 0");
        }
        if !(self.fading_floor > 0.0 && self.fading_floor < 1.0) {
            return bad("fading_floor must be in (0, 1)");
        }
        Ok(())
    }

    /// Large-scale power gain `R^(-alpha)`.
    pub fn pathloss_gain(&self) -> f64 {
        self.distance_m.powf(-self.pathloss_exp)
    }
}

/// Fading gains for one vector transmission.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// Per-dimension channel gain (Rayleigh magnitude times the large-scale
    /// amplitude), strictly positive.
    pub gains: Vec<f64>,
    /// Large-scale power gain `R^(-alpha)`.
    pub pathloss_gain: f64,
}

/// One received vector: the raw channel output and the equalized estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedVector {
    /// Post-equalization estimate of the transmitted signal.
    pub values: Vec<f64>,
    /// Pre-equalization channel output.
    pub raw: Vec<f64>,
}

/// Draws one block-fading realization for a `dim`-dimensional transmission.
///
/// Each gain is `max(fading_floor, r) * sqrt(R^-alpha)` with `r` Rayleigh
/// distributed, normalized to `E[r^2] = 1`.
pub fn sample_fading<R: Rng + ?Sized>(
    dim: usize,
    cfg: &ChannelConfig,
    rng: &mut R,
) -> Result<ChannelRealization> {
    cfg.validate()?;
    if dim == 0 {
        return Err(Error::InvalidConfig("fading dimension must be >= 1".into()));
    }
    let pathloss_gain = cfg.pathloss_gain();
    if cfg.ideal {
        return Ok(ChannelRealization {
            gains: vec![1.0; dim],
            pathloss_gain,
        });
    }
    let amp = pathloss_gain.sqrt();
    let gains = (0..dim)
        .map(|_| {
            let u: f64 = rng.gen();
            // Inverse-CDF Rayleigh with unit second moment.
            let r = (-(1.0 - u).ln()).sqrt();
            r.max(cfg.fading_floor) * amp
        })
        .collect();
    Ok(ChannelRealization {
        gains,
        pathloss_gain,
    })
}

/// Sends `signal` through one fading realization plus AWGN and equalizes it
/// with the known channel state.
pub fn transmit<R: Rng + ?Sized>(
    signal: &[f64],
    cfg: &ChannelConfig,
    ch: &ChannelRealization,
    rng: &mut R,
) -> Result<ReceivedVector> {
    if signal.len() != ch.gains.len() {
        return Err(Error::DimensionMismatch {
            context: "transmit",
            expected: ch.gains.len(),
            got: signal.len(),
        });
    }
    let sqrt_p = cfg.tx_power.sqrt();
    let mut raw = Vec::with_capacity(signal.len());
    let mut values = Vec::with_capacity(signal.len());
    if cfg.noise_variance > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_variance.sqrt())
            .map_err(|e| Error::InvalidConfig(format!("channel noise: {e}")))?;
        for (x, h) in signal.iter().zip(&ch.gains) {
            let y = sqrt_p * h * x + normal.sample(rng);
            raw.push(y);
            values.push(y / (sqrt_p * h));
        }
    } else {
        for (x, h) in signal.iter().zip(&ch.gains) {
            let y = sqrt_p * h * x;
            raw.push(y);
            values.push(y / (sqrt_p * h));
        }
    }
    Ok(ReceivedVector { values, raw })
}

/// Average SNR in dB, ignoring small-scale fading:
/// `10 log10(P R^-alpha S / N_c)`. Defined as `+inf` when the link is
/// noiseless.
pub fn effective_snr_db(cfg: &ChannelConfig, signal_power: f64) -> Result<f64> {
    cfg.validate()?;
    if !(signal_power > 0.0) {
        return Err(Error::InvalidConfig("signal power must be > 0".into()));
    }
    if cfg.noise_variance == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (cfg.tx_power * cfg.pathloss_gain() * signal_power / cfg.noise_variance).log10())
}

/// A seeded link endpoint that draws a fresh fading realization per
/// transmitted vector and counts transmissions, so protocol phases can
/// prove they stayed silent.
#[derive(Debug, Clone)]
pub struct ChannelLink {
    pub cfg: ChannelConfig,
    rng: ChaCha8Rng,
    count: u64,
}

impl ChannelLink {
    pub fn new(cfg: ChannelConfig, seed: u64) -> Self {
        Self {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(crate::seeding::mix(&[seed, cfg.rng_seed])),
            count: 0,
        }
    }

    pub fn transmission_count(&self) -> u64 {
        self.count
    }

    /// Transmits one vector, returning the equalized estimate.
    pub fn send(&mut self, signal: &[f64]) -> Result<Vec<f64>> {
        let ch = sample_fading(signal.len(), &self.cfg, &mut self.rng)?;
        let rx = transmit(signal, &self.cfg, &ch, &mut self.rng)?;
        self.count += 1;
        Ok(rx.values)
    }

    /// Transmits each row of `signals` as its own vector (one realization
    /// per row) and returns the equalized rows.
    pub fn send_rows(&mut self, signals: &Array2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros(signals.raw_dim());
        for (mut out_row, row) in out.outer_iter_mut().zip(signals.outer_iter()) {
            let rx = self.send(row.as_slice().expect("contiguous row"))?;
            for (o, v) in out_row.iter_mut().zip(rx) {
                *o = v;
            }
        }
        Ok(out)
    }
}
