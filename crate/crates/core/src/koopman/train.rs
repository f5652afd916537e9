//! Channel-coupled split training.
//!
//! Each batch runs one round of the split protocol: the sensor encodes the
//! window states with its current weights and transmits both the states and
//! the latents (one fading realization per vector); the observer computes
//! the weighted loss on what it received, updates its own side (decoder and
//! transition matrix), and returns the loss gradient with respect to every
//! received latent over the feedback path; the sensor backpropagates that
//! through the encoder and updates its side. Each side keeps a single Adam
//! state for the whole run.
//!
//! Channel noise is additive after equalization, so gradients pass through
//! the link unchanged; the noise itself is never differentiated.

use super::{
    window_forward, EpochRecord, LossBreakdown, NormStats, SplitKoopmanModel, TrainConfig,
    TrainHistory,
};
use crate::channel::{ChannelConfig, ChannelLink};
use crate::dynamics::Trajectory;
use crate::neural::{mse_grad, AdamHyper, AdamState, ForwardCache};
use crate::{Error, Result};
use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

/// EMA weight on the previous latent statistics when folding in a batch.
pub const LATENT_STATS_MOMENTUM: f64 = 0.9;

struct BatchSignals {
    /// Received states per window offset, destandardized (raw units).
    xhat: Vec<Array2<f64>>,
    /// Received latents per window offset.
    zhat: Vec<Array2<f64>>,
    enc_cache: ForwardCache,
}

/// Observer-side gradients of the weighted window loss, plus the gradient
/// with respect to every received latent (the feedback payload).
struct ObserverBackward {
    dec_grads: crate::neural::NetGrads,
    d_koopman: Array2<f64>,
    /// `d_zhat[tau]` is the loss gradient at the received latents `tau`
    /// steps past the window heads.
    d_zhat: Vec<Array2<f64>>,
}

/// Reverse pass of [`window_forward`]: mse gradients through the decoder,
/// the destandardization and the latent transition chain. Head latents
/// collect the chained gradient; later latents only appear as linearity
/// targets.
fn window_backward(
    model: &SplitKoopmanModel,
    fwd: &super::WindowForward,
    xhat: &[Array2<f64>],
    zhat: &[Array2<f64>],
    loss_weights: [f64; 3],
) -> crate::Result<ObserverBackward> {
    let t = xhat.len() - 1;
    let b = xhat[0].nrows();
    let d = model.state_dim();
    let q = model.latent_dim();
    let [b1, b2, b3] = loss_weights;

    let mut d_dec = Array2::zeros((b * (t + 1), d));
    let block = |m: &Array2<f64>, tau: usize| m.slice(s![tau * b..(tau + 1) * b, ..]).to_owned();
    d_dec
        .slice_mut(s![0..b, ..])
        .assign(&(mse_grad(&block(&fwd.dec_out, 0), &xhat[0]) * b1));
    #[allow(clippy::needless_range_loop)]
    for tau in 1..=t {
        d_dec
            .slice_mut(s![tau * b..(tau + 1) * b, ..])
            .assign(&(mse_grad(&block(&fwd.dec_out, tau), &xhat[tau]) * (b3 / t as f64)));
    }
    // Through the destandardization y = yn * scale + mean.
    let d_yn = &d_dec * &model.state_norm.scale;
    let (dec_grads, d_chain_dec) = model.decoder.backward(&fwd.dec_cache, &d_yn)?;

    let mut d_koopman: Array2<f64> = Array2::zeros((q, q));
    let mut carry: Array2<f64> = Array2::zeros((b, q));
    let mut d_zhat: Vec<Array2<f64>> = vec![Array2::zeros((0, 0)); t + 1];
    for tau in (1..=t).rev() {
        let mut g = d_chain_dec.slice(s![tau * b..(tau + 1) * b, ..]).to_owned();
        g += &(mse_grad(&fwd.chain[tau], &zhat[tau]) * (b2 / t as f64));
        g += &carry;
        d_koopman += &g.t().dot(&fwd.chain[tau - 1]);
        carry = g.dot(&model.koopman);
        d_zhat[tau] = mse_grad(&zhat[tau], &fwd.chain[tau]) * (b2 / t as f64);
    }
    d_zhat[0] = d_chain_dec.slice(s![0..b, ..]).to_owned() + carry;

    Ok(ObserverBackward {
        dec_grads,
        d_koopman,
        d_zhat,
    })
}

/// Losses and exact parameter gradients of one split round.
pub struct SplitGradients {
    pub losses: LossBreakdown,
    pub encoder: crate::neural::NetGrads,
    pub koopman: Array2<f64>,
    pub decoder: crate::neural::NetGrads,
}

/// One split round on frozen channel noise, without optimizer updates or
/// statistics changes: the sensor encodes the raw window states with the
/// model as-is, the caller-provided additive noise stands in for the
/// equalized channel (`zhat = z + noise_z`, `xhat` likewise in
/// standardized units), and exact gradients of the weighted loss flow back
/// to every parameter. This is the differentiable core of
/// [`train`], exposed so its gradients can be checked against finite
/// differences end to end.
pub fn split_gradients(
    model: &SplitKoopmanModel,
    states_raw: &[Array2<f64>],
    noise_z: &[Array2<f64>],
    noise_xn: &[Array2<f64>],
    loss_weights: [f64; 3],
) -> crate::Result<SplitGradients> {
    let t = states_raw.len() - 1;
    let b = states_raw[0].nrows();
    let d = model.state_dim();

    let mut x_all = Array2::zeros((b * (t + 1), d));
    for (tau, blockm) in states_raw.iter().enumerate() {
        x_all
            .slice_mut(s![tau * b..(tau + 1) * b, ..])
            .assign(blockm);
    }
    let xn_all = model.state_norm.normalize(&x_all);
    let (z_raw, enc_cache) = model.encoder.forward(&xn_all)?;
    let z_tx = model.latent_norm.normalize(&z_raw);

    let split = |m: &Array2<f64>, tau: usize| m.slice(s![tau * b..(tau + 1) * b, ..]).to_owned();
    let mut zhat = Vec::with_capacity(t + 1);
    let mut xhat = Vec::with_capacity(t + 1);
    for tau in 0..=t {
        zhat.push(split(&z_tx, tau) + &noise_z[tau]);
        let xn_noisy = split(&xn_all, tau) + &noise_xn[tau];
        xhat.push(model.state_norm.denormalize(&xn_noisy));
    }

    let fwd = window_forward(model, &xhat, &zhat, loss_weights)?;
    let back = window_backward(model, &fwd, &xhat, &zhat, loss_weights)?;

    let mut d_z_tx = Array2::zeros((b * (t + 1), model.latent_dim()));
    for (tau, g) in back.d_zhat.iter().enumerate() {
        d_z_tx.slice_mut(s![tau * b..(tau + 1) * b, ..]).assign(g);
    }
    let d_z_raw = &d_z_tx / &model.latent_norm.scale;
    let (enc_grads, _) = model.encoder.backward(&enc_cache, &d_z_raw)?;

    Ok(SplitGradients {
        losses: fwd.losses,
        encoder: enc_grads,
        koopman: back.d_koopman,
        decoder: back.dec_grads,
    })
}

struct Trainer {
    model: SplitKoopmanModel,
    cfg: TrainConfig,
    states: Array2<f64>,
    sensor_adam: AdamState,
    observer_adam: AdamState,
}

impl Trainer {
    /// Sensor-side encode plus uplink transmission for one batch of window
    /// heads. Statistics updates are suppressed on validation passes so
    /// evaluation never mutates the model.
    fn encode_and_transmit(
        &mut self,
        heads: &[usize],
        link: &mut ChannelLink,
        update_stats: bool,
    ) -> Result<BatchSignals> {
        let t = self.cfg.prediction_depth;
        let b = heads.len();
        let d = self.model.state_dim();

        let mut x_all = Array2::zeros((b * (t + 1), d));
        for tau in 0..=t {
            for (i, &head) in heads.iter().enumerate() {
                x_all
                    .row_mut(tau * b + i)
                    .assign(&self.states.row(head + tau));
            }
        }

        let xn_all = self.model.state_norm.normalize(&x_all);
        let (z_raw, enc_cache) = self.model.encoder.forward(&xn_all)?;
        if update_stats {
            self.model
                .latent_norm
                .ema_update(&z_raw, LATENT_STATS_MOMENTUM);
        }
        let z_tx = self.model.latent_norm.normalize(&z_raw);

        let zhat_all = link.send_rows(&z_tx)?;
        let xhatn_all = link.send_rows(&xn_all)?;
        let xhat_all = self.model.state_norm.denormalize(&xhatn_all);

        let split = |m: &Array2<f64>| -> Vec<Array2<f64>> {
            (0..=t)
                .map(|tau| m.slice(s![tau * b..(tau + 1) * b, ..]).to_owned())
                .collect()
        };
        Ok(BatchSignals {
            xhat: split(&xhat_all),
            zhat: split(&zhat_all),
            enc_cache,
        })
    }

    /// One full split-learning round on a batch of window heads.
    fn train_batch(
        &mut self,
        heads: &[usize],
        uplink: &mut ChannelLink,
        feedback: &mut ChannelLink,
    ) -> Result<LossBreakdown> {
        let t = self.cfg.prediction_depth;
        let b = heads.len();
        let q = self.model.latent_dim();

        let signals = self.encode_and_transmit(heads, uplink, true)?;
        let fwd = window_forward(
            &self.model,
            &signals.xhat,
            &signals.zhat,
            self.cfg.loss_weights,
        )?;
        if !fwd.losses.overall.is_finite() {
            // Caller attaches the epoch/batch indices.
            return Ok(fwd.losses);
        }

        // Observer-side backward pass and update: decoder and transition
        // matrix share one Adam state.
        let back = window_backward(
            &self.model,
            &fwd,
            &signals.xhat,
            &signals.zhat,
            self.cfg.loss_weights,
        )?;
        {
            let SplitKoopmanModel {
                decoder, koopman, ..
            } = &mut self.model;
            let mut params = decoder.flat_params_mut();
            params.push(koopman.as_slice_mut().expect("standard layout"));
            let mut grads = back.dec_grads.flat();
            grads.push(back.d_koopman.as_slice().expect("standard layout"));
            self.observer_adam.step(&mut params, &grads)?;
        }

        // Gradient feedback to the sensor; ideal by default, optionally
        // routed through the same noisy link.
        let mut d_z_tx = Array2::zeros((b * (t + 1), q));
        for (tau, g) in back.d_zhat.iter().enumerate() {
            d_z_tx.slice_mut(s![tau * b..(tau + 1) * b, ..]).assign(g);
        }
        if uplink.cfg.feedback_noisy {
            d_z_tx = feedback.send_rows(&d_z_tx)?;
        }

        // Sensor-side update: through the latent standardization, then the
        // encoder.
        let d_z_raw = &d_z_tx / &self.model.latent_norm.scale;
        let (enc_grads, _) = self.model.encoder.backward(&signals.enc_cache, &d_z_raw)?;
        self.sensor_adam
            .step(&mut self.model.encoder.flat_params_mut(), &enc_grads.flat())?;

        Ok(fwd.losses)
    }

    fn validation_loss(
        &mut self,
        heads: &[usize],
        cfg_channel: &ChannelConfig,
        val_seed: u64,
    ) -> Result<f64> {
        let mut link = ChannelLink::new(*cfg_channel, val_seed);
        let mut total = 0.0;
        let mut batches = 0usize;
        let heads: Vec<usize> = heads.to_vec();
        for chunk in heads.chunks(self.cfg.batch_size) {
            let signals = self.encode_and_transmit(chunk, &mut link, false)?;
            let fwd = window_forward(
                &self.model,
                &signals.xhat,
                &signals.zhat,
                self.cfg.loss_weights,
            )?;
            total += fwd.losses.overall;
            batches += 1;
        }
        Ok(total / batches.max(1) as f64)
    }
}

/// Trains the split model on one trajectory over a simulated link.
///
/// Windows of `prediction_depth + 1` consecutive states (stride 1) are
/// shuffled and batched each epoch; the trailing `val_fraction` of windows
/// is held out and scored per epoch with a fixed validation noise stream.
/// Early stopping restores the weights of the best validation epoch.
pub fn train<R: Rng + ?Sized>(
    model: SplitKoopmanModel,
    trajectory: &Trajectory,
    channel_cfg: &ChannelConfig,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(SplitKoopmanModel, TrainHistory)> {
    let mut uplink = ChannelLink::new(*channel_cfg, rng.gen());
    let mut feedback = ChannelLink::new(*channel_cfg, rng.gen());
    train_with_links(model, trajectory, &mut uplink, &mut feedback, cfg, rng)
}

/// [`train`] with caller-owned channel endpoints, so the protocol layer can
/// inspect transmission counts afterwards.
pub fn train_with_links<R: Rng + ?Sized>(
    mut model: SplitKoopmanModel,
    trajectory: &Trajectory,
    uplink: &mut ChannelLink,
    feedback: &mut ChannelLink,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(SplitKoopmanModel, TrainHistory)> {
    cfg.validate()?;
    uplink.cfg.validate()?;
    model.validate()?;
    if trajectory.dim() != model.state_dim() {
        return Err(Error::DimensionMismatch {
            context: "training trajectory",
            expected: model.state_dim(),
            got: trajectory.dim(),
        });
    }
    let n_states = trajectory.len();
    let t = cfg.prediction_depth;
    if n_states <= t + cfg.batch_size {
        return Err(Error::InvalidConfig(format!(
            "trajectory too short: {n_states} states for prediction depth {t} and batch size {}",
            cfg.batch_size
        )));
    }

    let states = trajectory.to_matrix();
    if !model.state_norm.initialized {
        model.state_norm = NormStats::from_rows(&states);
    }

    let n_windows = n_states - t;
    let val_count = ((n_windows as f64 * cfg.val_fraction).round() as usize).max(1);
    let train_count = n_windows - val_count;
    if train_count == 0 {
        return Err(Error::InvalidConfig(
            "no training windows left after validation split".into(),
        ));
    }
    let mut train_heads: Vec<usize> = (0..train_count).collect();
    let val_heads: Vec<usize> = (train_count..n_windows).collect();

    let val_seed: u64 = rng.gen();
    let shuffle_seed: u64 = rng.gen();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    let channel_cfg = uplink.cfg;

    let hyper = AdamHyper::with_lr(cfg.learning_rate);
    let sensor_adam = AdamState::for_net(&model.encoder, hyper, "encoder")?;
    let mut observer_blocks = model.decoder.block_specs("decoder");
    observer_blocks.push(("koopman".to_string(), model.koopman.len()));
    let observer_adam = AdamState::new(hyper, &observer_blocks)?;

    let mut trainer = Trainer {
        model,
        cfg: *cfg,
        states,
        sensor_adam,
        observer_adam,
    };

    let mut history = TrainHistory::default();
    let mut best: Option<(f64, SplitKoopmanModel)> = None;
    let mut stale_epochs = 0usize;

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        train_heads.shuffle(&mut shuffle_rng);
        let mut sums = LossBreakdown {
            reconstruction: 0.0,
            linearity: 0.0,
            prediction: 0.0,
            overall: 0.0,
        };
        let mut batches = 0usize;
        let chunks: Vec<Vec<usize>> = train_heads
            .chunks(cfg.batch_size)
            .map(|c| c.to_vec())
            .collect();
        for (batch_idx, chunk) in chunks.iter().enumerate() {
            let losses = trainer.train_batch(chunk, uplink, feedback)?;
            if !losses.overall.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    batch: batch_idx,
                });
            }
            sums.reconstruction += losses.reconstruction;
            sums.linearity += losses.linearity;
            sums.prediction += losses.prediction;
            sums.overall += losses.overall;
            batches += 1;
        }
        let inv = 1.0 / batches.max(1) as f64;
        let val_loss = trainer.validation_loss(&val_heads, &channel_cfg, val_seed)?;
        history.epochs.push(EpochRecord {
            epoch,
            loss_total: sums.overall * inv,
            loss_reconst: sums.reconstruction * inv,
            loss_linear: sums.linearity * inv,
            loss_pred: sums.prediction * inv,
            val_loss,
            wall_s: start.elapsed().as_secs_f64(),
        });

        let improved = best.as_ref().is_none_or(|(b, _)| val_loss < *b);
        if improved {
            best = Some((val_loss, trainer.model.clone()));
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= cfg.patience {
                break;
            }
        }
    }

    let model = match best {
        Some((_, m)) => m,
        None => trainer.model,
    };
    Ok((model, history))
}
