//! Cross-entropy training of the TX and RX phase stacks.

mod backward;
mod batch_norm;
mod checkpoint;

pub use backward::{
    batch_loss, evaluate_batch, finite_difference_check, loss_and_gradient, BatchInput,
    BatchOutcome, GradientCheck, GradientCheckEntry, GradientSet, ParamRef, Trainable,
    PROBABILITY_FLOOR, RELATIVE_ERROR_FLOOR,
};
pub use batch_norm::{batch_norm, bn_scale, BnMode};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};

use crate::channel::{
    noise_vector, received_power, sigma2_for_snr, ChannelModel, ChannelPolicy, ChannelSampler,
};
use crate::error::{Error, Result};
use crate::field::{wrap_phase, LayerStack, PhaseLayer, SymbolBatch};
use crate::rng::{RngSeed, Stream};
use crate::transceiver::Transceiver;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitScheme {
    #[default]
    Uniform,
    Zero,
}

/// Phases i.i.d. uniform on `(-pi, pi]`, or all zero.
pub fn init_phases<R: Rng + ?Sized>(
    count: usize,
    n_x: usize,
    n_z: usize,
    rng: &mut R,
    scheme: InitScheme,
) -> LayerStack {
    match scheme {
        InitScheme::Zero => LayerStack::zeros(count, n_x, n_z),
        InitScheme::Uniform => LayerStack {
            layers: (0..count)
                .map(|_| {
                    let phases = (0..n_x * n_z)
                        .map(|_| PI - 2.0 * PI * rng.random::<f64>())
                        .collect();
                    PhaseLayer::from_phases(n_x, n_z, phases).expect("sized")
                })
                .collect(),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    #[default]
    Analytic,
    /// Verify the analytic gradient against finite differences on the first
    /// batch before training.
    FiniteDifferenceCheck,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Training samples per epoch.
    pub samples: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub adam: AdamParams,
    pub snr_db: f64,
    pub channel: ChannelModel,
    pub channel_policy: ChannelPolicy,
    pub batch_norm: bool,
    pub init: InitScheme,
    /// Random symbols used to estimate the received power that fixes sigma^2.
    pub calibration_batch: usize,
    pub gradient_mode: GradientMode,
    pub trainable: Trainable,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            samples: 3200,
            epochs: 50,
            learning_rate: 0.03,
            optimizer: OptimizerKind::Adam,
            adam: AdamParams::default(),
            snr_db: -10.0,
            channel: ChannelModel::rician_db(0.0),
            channel_policy: ChannelPolicy::Fixed,
            batch_norm: false,
            init: InitScheme::Uniform,
            calibration_batch: 1024,
            gradient_mode: GradientMode::Analytic,
            trainable: Trainable::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if self.samples < self.batch_size {
            return Err(Error::invalid("samples", "must be at least one batch"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        if self.calibration_batch == 0 {
            return Err(Error::invalid("calibration_batch", "must be at least 1"));
        }
        if !self.snr_db.is_finite() {
            return Err(Error::invalid("snr_db", "must be finite"));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.epsilon > 0.0) {
            return Err(Error::invalid("adam", "need 0 <= beta < 1 and epsilon > 0"));
        }
        Ok(())
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.samples / self.batch_size
    }

    fn bn_mode(&self) -> BnMode {
        if self.batch_norm {
            BnMode::Train
        } else {
            BnMode::Off
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CeLoss {
    pub loss: f64,
    pub clamp_events: usize,
}

/// Batch-mean cross-entropy against one-hot targets.
pub fn ce_loss(batch: &SymbolBatch, probabilities: &[Vec<f64>]) -> Result<CeLoss> {
    if batch.len() != probabilities.len() {
        return Err(Error::mismatch(batch.len(), probabilities.len()));
    }
    if batch.is_empty() {
        return Err(Error::invalid("batch_size", "batch is empty"));
    }
    let mut total = 0.0;
    let mut clamp_events = 0;
    for (&truth, p) in batch.symbols.iter().zip(probabilities) {
        if p.len() != batch.order {
            return Err(Error::mismatch(batch.order, p.len()));
        }
        if p[truth] < PROBABILITY_FLOOR {
            clamp_events += 1;
        }
        total -= p[truth].max(PROBABILITY_FLOOR).ln();
    }
    Ok(CeLoss {
        loss: total / batch.len() as f64,
        clamp_events,
    })
}

fn for_each_param(
    transceiver: &mut Transceiver,
    grads: &GradientSet,
    mut f: impl FnMut(usize, &mut f64, f64),
) {
    let mut k = 0;
    let stacks = [
        (&mut transceiver.tx, &grads.tx),
        (&mut transceiver.rx, &grads.rx),
    ];
    for (stack, g) in stacks {
        for (layer, lg) in stack.layers.iter_mut().zip(g) {
            for (phase, &gv) in layer.phases_mut().iter_mut().zip(lg) {
                f(k, phase, gv);
                k += 1;
            }
        }
    }
}

/// `phase <- wrap(phase - lr * grad)`.
pub fn sgd_step(transceiver: &mut Transceiver, grads: &GradientSet, learning_rate: f64) {
    for_each_param(transceiver, grads, |_, phase, g| {
        if g != 0.0 {
            *phase = wrap_phase(*phase - learning_rate * g);
        }
    });
}

/// First and second moments for every phase, flattened TX then RX.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(transceiver: &Transceiver) -> Self {
        let n = transceiver.tx.parameter_count() + transceiver.rx.parameter_count();
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

pub fn adam_step(
    transceiver: &mut Transceiver,
    grads: &GradientSet,
    state: &mut AdamState,
    learning_rate: f64,
    params: &AdamParams,
) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - params.beta1.powi(t);
    let c2 = 1.0 - params.beta2.powi(t);
    let (m, v) = (&mut state.m, &mut state.v);
    for_each_param(transceiver, grads, |k, phase, g| {
        m[k] = params.beta1 * m[k] + (1.0 - params.beta1) * g;
        v[k] = params.beta2 * v[k] + (1.0 - params.beta2) * g * g;
        let update = learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + params.epsilon);
        if update != 0.0 {
            *phase = wrap_phase(*phase - update);
        }
    });
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_ser: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    /// Received power of the initial pipeline; fixes sigma^2 for every SNR.
    pub reference_power: f64,
    /// Noise variance used for training.
    pub sigma2: f64,
    pub clamp_events: usize,
    pub channel: ChannelSampler,
    pub gradient_check: Option<GradientCheck>,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |r| r.mean_loss)
    }

    /// CSV with header `epoch,mean_loss,train_ser`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,mean_loss,train_ser")?;
        for r in &self.history {
            writeln!(out, "{},{:.12e},{:.6}", r.epoch, r.mean_loss, r.train_ser)?;
        }
        Ok(())
    }
}

/// Builds the random part of batch `index` (global over epochs).
pub fn draw_batch(
    symbols: Vec<usize>,
    sampler: &ChannelSampler,
    sigma2: f64,
    seed: RngSeed,
    index: u64,
) -> Result<BatchInput> {
    let b = symbols.len() as u64;
    let channels = (0..b)
        .map(|i| sampler.training(index, i, b))
        .collect::<Result<Vec<_>>>()?;
    let n = channels.first().map_or(0, |h| h.nrows());
    let mut rng = seed.rng(Stream::Noise, index);
    let noise = (0..b)
        .map(|_| {
            if sigma2 > 0.0 {
                noise_vector(n, sigma2, &mut rng)
            } else {
                Vec::new()
            }
        })
        .collect();
    Ok(BatchInput {
        symbols,
        channels,
        noise,
    })
}

/// Initializes the phases per `config.init` and trains the transceiver in
/// place. On divergence the phases are left at the last finite state.
pub fn train(
    config: &TrainConfig,
    transceiver: &mut Transceiver,
    seed: RngSeed,
) -> Result<TrainReport> {
    config.validate()?;
    let g = *transceiver.geometry();
    let mut init_rng = seed.rng(Stream::Init, 0);
    transceiver.tx = init_phases(g.l_tx, g.n_x, g.n_z, &mut init_rng, config.init);
    transceiver.rx = init_phases(g.l_rx, g.n_x, g.n_z, &mut init_rng, config.init);

    let sampler = ChannelSampler::new(&g, config.channel, config.channel_policy, seed)?;
    let reference_power = received_power(transceiver, &sampler, seed, config.calibration_batch)?;
    let sigma2 = sigma2_for_snr(config.snr_db, reference_power)?;
    log::info!("reference power {reference_power:.4e}, training sigma^2 {sigma2:.4e}");

    let order = transceiver.scheme().order();
    let mut data_rng = seed.rng(Stream::Data, 0);
    let mut dataset: Vec<usize> = (0..config.samples)
        .map(|_| data_rng.random_range(0..order))
        .collect();
    let per_epoch = config.batches_per_epoch();
    let bn = config.bn_mode();
    let mut adam = AdamState::new(transceiver);
    let mut history = Vec::with_capacity(config.epochs);
    let mut clamp_events = 0;
    let mut gradient_check = None;

    for epoch in 0..config.epochs {
        dataset.shuffle(&mut seed.rng(Stream::Data, 1 + epoch as u64));
        let mut loss_sum = 0.0;
        let mut errors = 0;
        for batch in 0..per_epoch {
            let index = (epoch * per_epoch + batch) as u64;
            let symbols =
                dataset[batch * config.batch_size..(batch + 1) * config.batch_size].to_vec();
            let input = draw_batch(symbols, &sampler, sigma2, seed, index)?;
            if index == 0 && config.gradient_mode == GradientMode::FiniteDifferenceCheck {
                let check = finite_difference_check(
                    transceiver,
                    &input,
                    bn,
                    20,
                    1e-5,
                    &mut seed.rng(Stream::Init, 1),
                )?;
                log::info!(
                    "gradient check: max relative error {:.3e}",
                    check.max_relative_error
                );
                gradient_check = Some(check);
            }
            let outcome = evaluate_batch(transceiver, &input, bn, config.trainable, true)?;
            let grads = outcome.gradients.expect("gradients requested");
            if !outcome.loss.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch,
                    loss: outcome.loss,
                });
            }
            loss_sum += outcome.loss;
            errors += outcome.errors;
            clamp_events += outcome.clamp_events;
            match config.optimizer {
                OptimizerKind::Sgd => sgd_step(transceiver, &grads, config.learning_rate),
                OptimizerKind::Adam => adam_step(
                    transceiver,
                    &grads,
                    &mut adam,
                    config.learning_rate,
                    &config.adam,
                ),
            }
        }
        let record = EpochRecord {
            epoch,
            mean_loss: loss_sum / per_epoch as f64,
            train_ser: errors as f64 / (per_epoch * config.batch_size) as f64,
        };
        log::info!(
            "epoch {:>3}: loss {:.4}, train SER {:.4}",
            record.epoch,
            record.mean_loss,
            record.train_ser
        );
        history.push(record);
    }
    if clamp_events > 0 {
        log::warn!("{clamp_events} samples hit the probability floor");
    }

    Ok(TrainReport {
        history,
        reference_power,
        sigma2,
        clamp_events,
        channel: sampler,
        gradient_check,
    })
}
