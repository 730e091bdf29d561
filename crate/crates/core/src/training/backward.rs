//! Batched forward pass with retained hop fields, and the matching reverse
//! pass producing phase gradients.
//!
//! Adjoint fields carry `2 dL/dx*`, so `dL = Re <g, dx>` for any field `x`.
//! Linear operators pass adjoints back through their conjugate transpose; a
//! phase layer `c = exp(j theta) b` contributes `dL/dtheta = Re(conj(g_c) j c)`.

use super::batch_norm::{bn_adjoint, bn_scale, BnMode};
use crate::channel::{channel_adjoint_matvec, channel_matvec_into, CMatrix};
use crate::error::{Error, Result};
use crate::transceiver::{logits, softmax, subarray_powers, Normalization, Transceiver};
use num_complex::Complex64;
use rayon::prelude::*;
use std::sync::Arc;

/// Lower bound applied to the true-class probability before the log.
pub const PROBABILITY_FLOOR: f64 = 1e-30;

/// Everything random about one batch, drawn up front so the loss is a
/// deterministic function of the phases.
#[derive(Debug, Clone)]
pub struct BatchInput {
    pub symbols: Vec<usize>,
    pub channels: Vec<Arc<CMatrix>>,
    /// Per-sample receive-aperture noise; empty vectors mean noiseless.
    pub noise: Vec<Vec<Complex64>>,
}

impl BatchInput {
    pub fn noiseless(symbols: Vec<usize>, channel: Arc<CMatrix>) -> Self {
        let count = symbols.len();
        BatchInput {
            symbols,
            channels: vec![channel; count],
            noise: vec![Vec::new(); count],
        }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    fn validate(&self, transceiver: &Transceiver) -> Result<()> {
        let n = transceiver.geometry().len();
        if self.is_empty() {
            return Err(Error::invalid("batch_size", "batch is empty"));
        }
        if self.channels.len() != self.len() || self.noise.len() != self.len() {
            return Err(Error::mismatch(
                self.len(),
                self.channels.len().min(self.noise.len()),
            ));
        }
        for &s in &self.symbols {
            transceiver.scheme().check_symbol(s)?;
        }
        for h in &self.channels {
            if h.nrows() != n || h.ncols() != n {
                return Err(Error::mismatch(n, h.nrows()));
            }
        }
        for w in &self.noise {
            if !w.is_empty() && w.len() != n {
                return Err(Error::mismatch(n, w.len()));
            }
        }
        Ok(())
    }
}

/// Real gradients of the loss with respect to every layer phase, shaped like
/// the stacks (index 0 closest to the feed or detector array).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub tx: Vec<Vec<f64>>,
    pub rx: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like(transceiver: &Transceiver) -> Self {
        GradientSet {
            tx: transceiver
                .tx
                .layers
                .iter()
                .map(|l| vec![0.0; l.len()])
                .collect(),
            rx: transceiver
                .rx
                .layers
                .iter()
                .map(|l| vec![0.0; l.len()])
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.tx.iter().chain(self.rx.iter())
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().flatten().fold(0.0, |m, g| m.max(g.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.iter().flatten().all(|g| g.is_finite())
    }
}

/// Which stacks receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trainable {
    pub tx: bool,
    pub rx: bool,
}

impl Default for Trainable {
    fn default() -> Self {
        Trainable { tx: true, rx: true }
    }
}

#[derive(Debug, Clone)]
pub struct BatchOutcome {
    /// Batch-mean cross-entropy.
    pub loss: f64,
    pub errors: usize,
    pub clamp_events: usize,
    pub gradients: Option<GradientSet>,
}

#[derive(Debug, Clone)]
struct SampleTrace {
    /// Output of each TX phase layer before batch normalization.
    tx_pre: Vec<Vec<Complex64>>,
    /// Field incident on each RX layer, in traversal order (outermost first).
    rx_in: Vec<Vec<Complex64>>,
    /// Output of each RX hop before batch normalization.
    rx_pre: Vec<Vec<Complex64>>,
    detector: Vec<Complex64>,
}

fn scale_in_place(values: &mut [Complex64], s: f64) {
    if s > 0.0 {
        let inv = 1.0 / s;
        values.iter_mut().for_each(|v| *v *= inv);
    }
}

/// Cross-entropy of one sample and `dL/dp` for its subarray powers.
fn sample_loss(
    powers: &[f64],
    truth: usize,
    normalization: Normalization,
) -> (f64, bool, Vec<f64>) {
    let probabilities = softmax(&logits(powers, normalization));
    let clamped = probabilities[truth] < PROBABILITY_FLOOR;
    let loss = -probabilities[truth].max(PROBABILITY_FLOOR).ln();
    // d loss / d logit
    let mut g: Vec<f64> = probabilities.clone();
    g[truth] -= 1.0;
    let dp = match normalization {
        Normalization::None => g,
        Normalization::Mean => {
            let m = powers.len() as f64;
            let mu = powers.iter().sum::<f64>() / m;
            if mu > 0.0 {
                let cross: f64 = g.iter().zip(powers).map(|(a, p)| a * p).sum();
                g.iter().map(|gk| gk / mu - cross / (mu * mu * m)).collect()
            } else {
                vec![0.0; powers.len()]
            }
        }
    };
    (loss, clamped, dp)
}

/// Batch loss and, if `with_gradients`, the phase gradients.
pub fn evaluate_batch(
    transceiver: &Transceiver,
    input: &BatchInput,
    bn: BnMode,
    trainable: Trainable,
    with_gradients: bool,
) -> Result<BatchOutcome> {
    input.validate(transceiver)?;
    let n = transceiver.geometry().len();
    let b = input.len();
    let prop = transceiver.propagator().clone();
    let l_tx = transceiver.tx.len();
    let l_rx = transceiver.rx.len();
    let bn_train = bn == BnMode::Train;
    let zero = Complex64::new(0.0, 0.0);

    // ---- forward, one hop at a time across the batch ----
    let mut traces: Vec<SampleTrace> = input
        .symbols
        .iter()
        .map(|&s| -> Result<SampleTrace> {
            Ok(SampleTrace {
                tx_pre: Vec::with_capacity(l_tx),
                rx_in: Vec::with_capacity(l_rx),
                rx_pre: Vec::with_capacity(l_rx),
                detector: transceiver.modulate(s)?.into_vec(),
            })
        })
        .collect::<Result<_>>()?;
    // `detector` doubles as the running field during the forward pass.
    let mut tx_scales = Vec::with_capacity(l_tx);
    for layer in &transceiver.tx.layers {
        traces.par_iter_mut().for_each(|t| {
            let mut next = vec![zero; n];
            prop.apply_into(&t.detector, &mut next);
            layer.apply(&mut next);
            t.tx_pre.push(next.clone());
            t.detector = next;
        });
        let s = if bn_train {
            bn_scale(traces.iter().map(|t| t.detector.as_slice()))
        } else {
            1.0
        };
        traces
            .par_iter_mut()
            .for_each(|t| scale_in_place(&mut t.detector, s));
        tx_scales.push(s);
    }
    traces.par_iter_mut().enumerate().for_each(|(i, t)| {
        let mut v = vec![zero; n];
        channel_matvec_into(&input.channels[i], &t.detector, &mut v);
        if !input.noise[i].is_empty() {
            v.iter_mut().zip(&input.noise[i]).for_each(|(a, w)| *a += w);
        }
        t.detector = v;
    });
    let mut rx_scales = Vec::with_capacity(l_rx);
    for layer in transceiver.rx.layers.iter().rev() {
        traces.par_iter_mut().for_each(|t| {
            t.rx_in.push(t.detector.clone());
            let mut c = t.detector.clone();
            layer.apply(&mut c);
            let mut next = vec![zero; n];
            prop.apply_into(&c, &mut next);
            t.rx_pre.push(next.clone());
            t.detector = next;
        });
        let s = if bn_train {
            bn_scale(traces.iter().map(|t| t.detector.as_slice()))
        } else {
            1.0
        };
        traces
            .par_iter_mut()
            .for_each(|t| scale_in_place(&mut t.detector, s));
        rx_scales.push(s);
    }

    // ---- loss ----
    let labels = transceiver.labels();
    let order = transceiver.scheme().order();
    let normalization = transceiver.normalization();
    let per_sample: Vec<(f64, bool, bool, Vec<f64>)> = traces
        .par_iter()
        .zip(input.symbols.par_iter())
        .map(|(t, &truth)| {
            let powers = subarray_powers(&t.detector, labels, order);
            let wrong = crate::transceiver::argmax(&powers) != truth;
            let (loss, clamped, dp) = sample_loss(&powers, truth, normalization);
            (loss, clamped, wrong, dp)
        })
        .collect();
    let loss = per_sample.iter().map(|s| s.0).sum::<f64>() / b as f64;
    let clamp_events = per_sample.iter().filter(|s| s.1).count();
    let errors = per_sample.iter().filter(|s| s.2).count();
    if !with_gradients {
        return Ok(BatchOutcome {
            loss,
            errors,
            clamp_events,
            gradients: None,
        });
    }

    // ---- reverse pass ----
    let inv_b = 1.0 / b as f64;
    let mut adjoints: Vec<Vec<Complex64>> = traces
        .par_iter()
        .zip(per_sample.par_iter())
        .map(|(t, s)| {
            t.detector
                .iter()
                .zip(labels)
                .map(|(y, &label)| *y * (2.0 * s.3[label] * inv_b))
                .collect()
        })
        .collect();

    let mut grads = GradientSet::zeros_like(transceiver);
    let pre_bn = |adjoints: &mut Vec<Vec<Complex64>>, fields: Vec<&[Complex64]>, s: f64| {
        if bn_train && s > 0.0 {
            bn_adjoint(adjoints, &fields, s);
        }
    };

    for k in (0..l_rx).rev() {
        let layer_index = l_rx - 1 - k;
        let layer = &transceiver.rx.layers[layer_index];
        pre_bn(
            &mut adjoints,
            traces.iter().map(|t| t.rx_pre[k].as_slice()).collect(),
            rx_scales[k],
        );
        let contributions: Vec<Vec<f64>> = adjoints
            .par_iter_mut()
            .zip(traces.par_iter())
            .map(|(g, t)| {
                let mut g_c = vec![zero; n];
                prop.apply_adjoint_into(g, &mut g_c);
                let mut c = t.rx_in[k].clone();
                layer.apply(&mut c);
                let grad: Vec<f64> = g_c
                    .iter()
                    .zip(&c)
                    .map(|(gc, cc)| -(gc.conj() * cc).im)
                    .collect();
                layer.apply_conj(&mut g_c);
                *g = g_c;
                grad
            })
            .collect();
        if trainable.rx {
            accumulate(&mut grads.rx[layer_index], &contributions);
        }
    }
    adjoints
        .par_iter_mut()
        .enumerate()
        .for_each(|(i, g)| *g = channel_adjoint_matvec(&input.channels[i], g));
    for l in (0..l_tx).rev() {
        let layer = &transceiver.tx.layers[l];
        pre_bn(
            &mut adjoints,
            traces.iter().map(|t| t.tx_pre[l].as_slice()).collect(),
            tx_scales[l],
        );
        let contributions: Vec<Vec<f64>> = adjoints
            .par_iter_mut()
            .zip(traces.par_iter())
            .map(|(g, t)| {
                let grad: Vec<f64> = g
                    .iter()
                    .zip(&t.tx_pre[l])
                    .map(|(gb, c)| -(gb.conj() * c).im)
                    .collect();
                if l > 0 {
                    layer.apply_conj(g);
                    let mut prev = vec![zero; n];
                    prop.apply_adjoint_into(g, &mut prev);
                    *g = prev;
                }
                grad
            })
            .collect();
        if trainable.tx {
            accumulate(&mut grads.tx[l], &contributions);
        }
    }

    Ok(BatchOutcome {
        loss,
        errors,
        clamp_events,
        gradients: Some(grads),
    })
}

/// Ordered sum over samples so results do not depend on scheduling.
fn accumulate(target: &mut [f64], contributions: &[Vec<f64>]) {
    for c in contributions {
        target.iter_mut().zip(c).for_each(|(t, v)| *t += v);
    }
}

pub fn loss_and_gradient(
    transceiver: &Transceiver,
    input: &BatchInput,
    bn: BnMode,
    trainable: Trainable,
) -> Result<(f64, GradientSet)> {
    let outcome = evaluate_batch(transceiver, input, bn, trainable, true)?;
    Ok((
        outcome.loss,
        outcome.gradients.expect("gradients requested"),
    ))
}

pub fn batch_loss(transceiver: &Transceiver, input: &BatchInput, bn: BnMode) -> Result<f64> {
    Ok(evaluate_batch(transceiver, input, bn, Trainable::default(), false)?.loss)
}

/// Parameter address inside a [`GradientSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRef {
    Tx { layer: usize, index: usize },
    Rx { layer: usize, index: usize },
}

impl ParamRef {
    pub fn read(&self, grads: &GradientSet) -> f64 {
        match *self {
            ParamRef::Tx { layer, index } => grads.tx[layer][index],
            ParamRef::Rx { layer, index } => grads.rx[layer][index],
        }
    }

    fn phase_mut<'a>(&self, transceiver: &'a mut Transceiver) -> &'a mut f64 {
        match *self {
            ParamRef::Tx { layer, index } => &mut transceiver.tx.layers[layer].phases_mut()[index],
            ParamRef::Rx { layer, index } => &mut transceiver.rx.layers[layer].phases_mut()[index],
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradientCheckEntry {
    pub param: ParamRef,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradientCheck {
    pub entries: Vec<GradientCheckEntry>,
    pub max_relative_error: f64,
}

/// Absolute floor on the relative-error denominator.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-8;

/// Compares analytic gradients with central differences of step `step` at
/// `per_layer` randomly chosen elements of every layer. The batch input is
/// frozen, so both sides see the same channel and noise.
pub fn finite_difference_check<R: rand::Rng + ?Sized>(
    transceiver: &Transceiver,
    input: &BatchInput,
    bn: BnMode,
    per_layer: usize,
    step: f64,
    rng: &mut R,
) -> Result<GradientCheck> {
    let (_, grads) = loss_and_gradient(transceiver, input, bn, Trainable::default())?;
    let mut params = Vec::new();
    let n = transceiver.geometry().len();
    for layer in 0..transceiver.tx.len() {
        for index in rand::seq::index::sample(rng, n, per_layer.min(n)) {
            params.push(ParamRef::Tx { layer, index });
        }
    }
    for layer in 0..transceiver.rx.len() {
        for index in rand::seq::index::sample(rng, n, per_layer.min(n)) {
            params.push(ParamRef::Rx { layer, index });
        }
    }
    let entries: Vec<GradientCheckEntry> = params
        .into_iter()
        .map(|param| -> Result<GradientCheckEntry> {
            let mut probe = transceiver.clone();
            let base = *param.phase_mut(&mut probe);
            *param.phase_mut(&mut probe) = base + step;
            let plus = batch_loss(&probe, input, bn)?;
            *param.phase_mut(&mut probe) = base - step;
            let minus = batch_loss(&probe, input, bn)?;
            let numeric = (plus - minus) / (2.0 * step);
            let analytic = param.read(&grads);
            let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
            Ok(GradientCheckEntry {
                param,
                analytic,
                numeric,
                relative_error: (analytic - numeric).abs() / denom,
            })
        })
        .collect::<Result<_>>()?;
    let max_relative_error = entries.iter().map(|e| e.relative_error).fold(0.0, f64::max);
    Ok(GradientCheck {
        entries,
        max_relative_error,
    })
}
