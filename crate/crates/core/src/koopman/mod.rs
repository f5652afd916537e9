//! The split Koopman autoencoder: an encoder that lives at the sensor, and
//! a linear latent-transition matrix plus decoder that live at the remote
//! observer.
//!
//! The latent space is the space of transmitted representations: the encoder
//! output is standardized per dimension to unit average power before it goes
//! on the air, the transition matrix acts on those standardized latents, and
//! the decoder maps them back to (destandardized) plant states. Powers of
//! the transition matrix advance a latent multiple steps, which is what
//! makes communication-free prediction possible once training has converged.

mod train;

pub use train::{split_gradients, train, train_with_links, SplitGradients, LATENT_STATS_MOMENTUM};

use crate::neural::{self, DenseNet};
use crate::{Error, Result};
use nalgebra::{Complex, DMatrix};
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Default hidden widths of the encoder (the decoder mirrors them).
pub const DEFAULT_HIDDEN: [usize; 3] = [128, 64, 32];

/// Floor applied to normalization scales so equalization and gradient
/// pass-through never divide by zero (a dead latent dimension would
/// otherwise produce a zero scale).
const SCALE_FLOOR: f64 = 1e-9;

/// Per-dimension standardization statistics (mean and scale).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
    /// False until the stats have seen data; an uninitialized instance is
    /// the identity map.
    pub initialized: bool,
}

impl NormStats {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: Array1::zeros(dim),
            scale: Array1::ones(dim),
            initialized: false,
        }
    }

    /// Mean/std statistics of a full data matrix (rows are samples).
    pub fn from_rows(rows: &Array2<f64>) -> Self {
        let n = rows.nrows().max(1) as f64;
        let mean = rows.sum_axis(Axis(0)) / n;
        let mut var = Array1::zeros(rows.ncols());
        for row in rows.outer_iter() {
            let d = &row - &mean;
            var += &(&d * &d);
        }
        var /= n;
        Self {
            mean,
            scale: var.mapv(|v| v.max(SCALE_FLOOR * SCALE_FLOOR).sqrt()),
            initialized: true,
        }
    }

    /// Folds one batch into running statistics. The first batch initializes
    /// them; later batches blend in with weight `1 - momentum`.
    pub fn ema_update(&mut self, batch: &Array2<f64>, momentum: f64) {
        let fresh = Self::from_rows(batch);
        if !self.initialized {
            *self = fresh;
            return;
        }
        let old_var = self.scale.mapv(|s| s * s);
        let new_var = fresh.scale.mapv(|s| s * s);
        self.mean = &self.mean * momentum + &fresh.mean * (1.0 - momentum);
        let var = &old_var * momentum + &new_var * (1.0 - momentum);
        self.scale = var.mapv(|v| v.max(SCALE_FLOOR * SCALE_FLOOR).sqrt());
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, rows: &Array2<f64>) -> Array2<f64> {
        (rows - &self.mean) / &self.scale
    }

    pub fn denormalize(&self, rows: &Array2<f64>) -> Array2<f64> {
        rows * &self.scale + &self.mean
    }

    pub fn normalize_one(&self, v: &Array1<f64>) -> Array1<f64> {
        (v - &self.mean) / &self.scale
    }

    pub fn denormalize_one(&self, v: &Array1<f64>) -> Array1<f64> {
        v * &self.scale + &self.mean
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.scale.len() {
            return Err(Error::DimensionMismatch {
                context: "normalization stats",
                expected: self.mean.len(),
                got: self.scale.len(),
            });
        }
        if self.scale.iter().any(|&s| !(s > 0.0)) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidConfig(
                "normalization scales must be finite and > 0".into(),
            ));
        }
        Ok(())
    }
}

/// The split autoencoder: encoder (sensor side), latent transition matrix
/// and decoder (observer side), plus the standardization statistics shared
/// by both ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitKoopmanModel {
    pub encoder: DenseNet,
    /// q x q latent transition matrix; no bias, no activation, so that its
    /// matrix powers advance a latent several steps at once.
    pub koopman: Array2<f64>,
    pub decoder: DenseNet,
    pub state_norm: NormStats,
    pub latent_norm: NormStats,
}

impl SplitKoopmanModel {
    /// Builds an untrained model: encoder `D -> hidden... -> q`, decoder
    /// mirrored, transition matrix initialized to the identity so early
    /// rollouts stay bounded.
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        latent_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        if state_dim == 0 || latent_dim == 0 {
            return Err(Error::InvalidConfig(
                "state and latent dimensions must be >= 1".into(),
            ));
        }
        let mut enc_dims = vec![state_dim];
        enc_dims.extend_from_slice(hidden);
        enc_dims.push(latent_dim);
        let mut dec_dims = enc_dims.clone();
        dec_dims.reverse();
        let encoder = DenseNet::mlp(&enc_dims, rng)?;
        let decoder = DenseNet::mlp(&dec_dims, rng)?;
        Ok(Self {
            encoder,
            koopman: Array2::eye(latent_dim),
            decoder,
            state_norm: NormStats::identity(state_dim),
            latent_norm: NormStats::identity(latent_dim),
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.koopman.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.encoder.in_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.latent_dim();
        if self.koopman.ncols() != q {
            return Err(Error::DimensionMismatch {
                context: "koopman matrix",
                expected: q,
                got: self.koopman.ncols(),
            });
        }
        if self.encoder.out_dim() != q
            || self.decoder.in_dim() != q
            || self.decoder.out_dim() != self.encoder.in_dim()
        {
            return Err(Error::DimensionMismatch {
                context: "model wiring",
                expected: q,
                got: self.encoder.out_dim(),
            });
        }
        if self.koopman.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput {
                context: "koopman matrix",
            });
        }
        if self.state_norm.dim() != self.state_dim() || self.latent_norm.dim() != q {
            return Err(Error::DimensionMismatch {
                context: "normalization dims",
                expected: self.state_dim(),
                got: self.state_norm.dim(),
            });
        }
        self.state_norm.validate()?;
        self.latent_norm.validate()
    }

    /// Encodes raw states (rows) into transmission-ready latents:
    /// standardized state in, standardized latent out.
    pub fn encode(&self, states: &Array2<f64>) -> Result<Array2<f64>> {
        let xn = self.state_norm.normalize(states);
        let (z_raw, _) = self.encoder.forward(&xn)?;
        Ok(self.latent_norm.normalize(&z_raw))
    }

    pub fn encode_one(&self, state: &Array1<f64>) -> Result<Array1<f64>> {
        let batch = state
            .clone()
            .into_shape_with_order((1, state.len()))
            .expect("row reshape");
        Ok(self.encode(&batch)?.row(0).to_owned())
    }

    /// Decodes latents (rows) back into raw plant states.
    pub fn decode(&self, latents: &Array2<f64>) -> Result<Array2<f64>> {
        let (yn, _) = self.decoder.forward(latents)?;
        Ok(self.state_norm.denormalize(&yn))
    }

    pub fn decode_one(&self, latent: &Array1<f64>) -> Result<Array1<f64>> {
        let batch = latent
            .clone()
            .into_shape_with_order((1, latent.len()))
            .expect("row reshape");
        Ok(self.decode(&batch)?.row(0).to_owned())
    }

    /// Advances a latent `tau` steps by repeated application of the
    /// transition matrix (`tau = 0` returns the latent unchanged).
    pub fn koopman_advance(&self, latent: &Array1<f64>, tau: usize) -> Array1<f64> {
        let mut z = latent.clone();
        for _ in 0..tau {
            z = self.koopman.dot(&z);
        }
        z
    }

    /// One transition step applied to a batch of latent rows.
    pub fn advance_rows(&self, latents: &Array2<f64>) -> Array2<f64> {
        latents.dot(&self.koopman.t())
    }

    /// Eigenvalues of the transition matrix. All magnitudes <= 1 means
    /// rollouts stay bounded no matter the horizon.
    pub fn koopman_spectrum(&self) -> Result<Vec<Complex<f64>>> {
        let q = self.latent_dim();
        if self.koopman.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput {
                context: "koopman matrix",
            });
        }
        let m = DMatrix::from_row_iterator(q, q, self.koopman.iter().copied());
        let schur = nalgebra::linalg::Schur::try_new(m, f64::EPSILON, 10_000)
            .ok_or_else(|| Error::Eigen("Schur decomposition did not converge".into()))?;
        Ok(schur.complex_eigenvalues().iter().copied().collect())
    }

    /// Largest eigenvalue magnitude of the transition matrix.
    pub fn spectral_radius(&self) -> f64 {
        self.koopman_spectrum()
            .map(|eigs| eigs.iter().map(|e| e.norm()).fold(0.0, f64::max))
            .unwrap_or(f64::NAN)
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Prediction depth T_d: how many future steps the linearity and
    /// prediction losses look ahead.
    pub prediction_depth: usize,
    /// Weights of the reconstruction, linearity and prediction losses.
    pub loss_weights: [f64; 3],
    pub learning_rate: f64,
    /// Trailing fraction of windows held out for validation.
    pub val_fraction: f64,
    /// Epochs without validation improvement before training stops.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 128,
            prediction_depth: 30,
            loss_weights: [1.0, 1.0, 1.0],
            learning_rate: 1e-3,
            val_fraction: 0.1,
            patience: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.epochs < 1 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1");
        }
        if self.prediction_depth < 1 {
            return bad("prediction_depth must be >= 1");
        }
        if self.loss_weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return bad("loss weights must be finite and >= 0");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 0.5) {
            return bad("val_fraction must be in (0, 0.5)");
        }
        Ok(())
    }
}

/// The three training losses and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub linearity: f64,
    pub prediction: f64,
    pub overall: f64,
}

/// One completed training epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_reconst: f64,
    pub loss_linear: f64,
    pub loss_pred: f64,
    pub val_loss: f64,
    pub wall_s: f64,
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// One JSON object per epoch with the pinned key set.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.epochs {
            let line = serde_json::json!({
                "epoch": e.epoch,
                "loss_total": e.loss_total,
                "loss_reconst": e.loss_reconst,
                "loss_linear": e.loss_linear,
                "loss_pred": e.loss_pred,
                "val_loss": e.val_loss,
            });
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Latent rollouts `K^tau z_0` for `tau = 0..=depth`, stacked tau-major:
/// block `tau` holds rows `tau * batch .. (tau + 1) * batch`.
pub(crate) struct WindowForward {
    /// Latent chain; `chain[tau]` is `K^tau` applied to the received head
    /// latents.
    pub chain: Vec<Array2<f64>>,
    pub dec_cache: crate::neural::ForwardCache,
    /// Decoded (destandardized) states for every chain block.
    pub dec_out: Array2<f64>,
    pub losses: LossBreakdown,
}

/// Shared forward pass over a batch of windows with already channel-equalized
/// states and latents. `latents[tau]` / `states[tau]` hold the received
/// vectors `tau` steps after each window head.
pub(crate) fn window_forward(
    model: &SplitKoopmanModel,
    states: &[Array2<f64>],
    latents: &[Array2<f64>],
    loss_weights: [f64; 3],
) -> Result<WindowForward> {
    let depth = states.len() - 1;
    let batch = states[0].nrows();
    let q = model.latent_dim();
    let d = model.state_dim();

    let mut chain = Vec::with_capacity(depth + 1);
    chain.push(latents[0].clone());
    for _ in 1..=depth {
        let next = model.advance_rows(chain.last().expect("non-empty"));
        chain.push(next);
    }

    let mut dec_in = Array2::zeros((batch * (depth + 1), q));
    for (tau, block) in chain.iter().enumerate() {
        dec_in
            .slice_mut(ndarray::s![tau * batch..(tau + 1) * batch, ..])
            .assign(block);
    }
    let (yn, dec_cache) = model.decoder.forward(&dec_in)?;
    let dec_out = model.state_norm.denormalize(&yn);

    let block = |tau: usize| dec_out.slice(ndarray::s![tau * batch..(tau + 1) * batch, ..]);
    let reconstruction = neural::mse(&states[0], &block(0).to_owned())?;
    let mut linearity = 0.0;
    let mut prediction = 0.0;
    for tau in 1..=depth {
        linearity += neural::mse(&latents[tau], &chain[tau])?;
        prediction += neural::mse(&states[tau], &block(tau).to_owned())?;
    }
    linearity /= depth as f64;
    prediction /= depth as f64;
    let [b1, b2, b3] = loss_weights;
    let losses = LossBreakdown {
        reconstruction,
        linearity,
        prediction,
        overall: b1 * reconstruction + b2 * linearity + b3 * prediction,
    };
    debug_assert_eq!(dec_out.ncols(), d);
    Ok(WindowForward {
        chain,
        dec_cache,
        dec_out,
        losses,
    })
}

/// Computes the three losses on a batch of windows of channel-equalized
/// states and latents (`tau = 0..=prediction_depth` each).
pub fn compute_losses(
    model: &SplitKoopmanModel,
    noisy_states: &[Array2<f64>],
    noisy_latents: &[Array2<f64>],
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    model.validate()?;
    let want = cfg.prediction_depth + 1;
    if noisy_states.len() != want || noisy_latents.len() != want {
        return Err(Error::DimensionMismatch {
            context: "loss windows",
            expected: want,
            got: noisy_states.len().min(noisy_latents.len()),
        });
    }
    let batch = noisy_states[0].nrows();
    for m in noisy_states {
        if m.nrows() != batch || m.ncols() != model.state_dim() {
            return Err(Error::DimensionMismatch {
                context: "state windows",
                expected: model.state_dim(),
                got: m.ncols(),
            });
        }
    }
    for m in noisy_latents {
        if m.nrows() != batch || m.ncols() != model.latent_dim() {
            return Err(Error::DimensionMismatch {
                context: "latent windows",
                expected: model.latent_dim(),
                got: m.ncols(),
            });
        }
    }
    Ok(window_forward(model, noisy_states, noisy_latents, cfg.loss_weights)?.losses)
}
