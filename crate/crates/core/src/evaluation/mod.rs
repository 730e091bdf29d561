//! Monte-Carlo symbol error rate measurement, experiment sweeps and the
//! conventional MRT + 16-QAM reference link.

mod baseline;
mod sweep;

pub use baseline::{
    baseline_mrt_qam, qam16_awgn_ser, qam16_constellation, qam16_slice, BaselineChannel,
    BaselineConfig,
};
pub use sweep::{
    channel_cells, count_inversions, median, median_point, read_completed, run_cell, run_resumable,
    sweep_capacity, sweep_channel, sweep_training_snr, train_config, write_ser_csv, CellResult,
    SweepCell, SweepKind, SweepSpec, CAPACITY_LABEL_PREFIX, SWEEP_CSV_HEADER,
};

use crate::channel::{channel_matvec, noise_vector, sigma2_for_snr, ChannelPolicy, ChannelSampler};
use crate::error::{Error, Result};
use crate::rng::{RngSeed, Stream};
use crate::transceiver::Transceiver;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use std::io::Write;

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

/// Trials evaluated per random stream; also the unit of parallel work.
const CHUNK: usize = 512;

/// Wilson score interval `(low, high)` for `errors` out of `trials`.
pub fn wilson_interval(errors: usize, trials: usize, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = errors as f64 / n;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Trials needed for about 100 expected errors at `target_ser`, capped at 10^6.
pub fn min_trials(target_ser: f64) -> usize {
    if !(target_ser > 0.0) {
        return 1_000_000;
    }
    ((100.0 / target_ser).ceil() as usize).min(1_000_000)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SerPoint {
    pub snr_db: f64,
    pub ser: f64,
    pub errors: usize,
    pub trials: usize,
    /// Half-width of the 95% Wilson interval.
    pub ci_halfwidth: f64,
}

impl SerPoint {
    pub fn from_counts(snr_db: f64, errors: usize, trials: usize) -> Self {
        let (lo, hi) = wilson_interval(errors, trials, Z_95);
        SerPoint {
            snr_db,
            ser: errors as f64 / trials.max(1) as f64,
            errors,
            trials,
            ci_halfwidth: (hi - lo) / 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SerCurve {
    pub label: String,
    pub points: Vec<SerPoint>,
}

impl SerCurve {
    pub fn point(&self, snr_db: f64) -> Option<&SerPoint> {
        self.points
            .iter()
            .find(|p| (p.snr_db - snr_db).abs() < 1e-9)
    }

    /// Rows `config_hash,snr_db,ser,trials,ci_halfwidth`, no header.
    pub fn write_rows<W: Write>(&self, config_hash: &str, mut out: W) -> std::io::Result<()> {
        for p in &self.points {
            writeln!(
                out,
                "{config_hash},{},{},{},{}",
                p.snr_db, p.ser, p.trials, p.ci_halfwidth
            )?;
        }
        Ok(())
    }
}

pub const SER_CSV_HEADER: &str = "config_hash,snr_db,ser,trials,ci_halfwidth";

/// Errors over `trials` uses of the link at one SNR. Symbols, channel draws
/// and noise come from `Stream::Evaluation`; trial `t` sees the same symbol
/// and channel at every SNR point.
fn count_errors(
    model: &Transceiver,
    sampler: &ChannelSampler,
    transmitted: &[Vec<Complex64>],
    received: Option<&[Vec<Complex64>]>,
    sigma2: f64,
    trials: usize,
    seed: RngSeed,
) -> Result<usize> {
    let order = model.scheme().order();
    let n = model.geometry().len();
    let chunks = trials.div_ceil(CHUNK);
    let per_chunk: Vec<usize> = (0..chunks)
        .into_par_iter()
        .map(|chunk| -> Result<usize> {
            let mut symbol_rng = seed.rng(Stream::Evaluation, 2 * chunk as u64);
            let mut noise_rng = seed.rng(Stream::Evaluation, 2 * chunk as u64 + 1);
            let mut errors = 0;
            for t in chunk * CHUNK..((chunk + 1) * CHUNK).min(trials) {
                let symbol = symbol_rng.random_range(0..order);
                let mut v = match received {
                    Some(r) => r[symbol].clone(),
                    None => {
                        channel_matvec(sampler.evaluation(t as u64)?.as_ref(), &transmitted[symbol])
                    }
                };
                if sigma2 > 0.0 {
                    v.iter_mut()
                        .zip(noise_vector(n, sigma2, &mut noise_rng))
                        .for_each(|(a, w)| *a += w);
                }
                if model.detect_slice(&model.receive(&v)).decision != symbol {
                    errors += 1;
                }
            }
            Ok(errors)
        })
        .collect::<Result<_>>()?;
    Ok(per_chunk.iter().sum())
}

/// SER of a trained model at each SNR. Noise variance follows
/// `sigma^2 = reference_power / 10^(snr/10)`. Channels are redrawn per trial
/// unless the sampler holds a fixed realization.
pub fn measure_ser(
    model: &Transceiver,
    snr_points: &[f64],
    trials: usize,
    sampler: &ChannelSampler,
    reference_power: f64,
    seed: RngSeed,
) -> Result<SerCurve> {
    if trials == 0 {
        return Err(Error::invalid("trials", "must be at least 1"));
    }
    let order = model.scheme().order();
    let transmitted: Vec<Vec<Complex64>> = (0..order)
        .map(|m| model.transmit(m))
        .collect::<Result<_>>()?;
    let received: Option<Vec<Vec<Complex64>>> = match (sampler.policy(), sampler.fixed()) {
        (ChannelPolicy::Fixed, Some(h)) => {
            Some(transmitted.iter().map(|u| channel_matvec(h, u)).collect())
        }
        _ => None,
    };
    let mut points = Vec::with_capacity(snr_points.len());
    for &snr_db in snr_points {
        let sigma2 = sigma2_for_snr(snr_db, reference_power)?;
        let errors = count_errors(
            model,
            sampler,
            &transmitted,
            received.as_deref(),
            sigma2,
            trials,
            seed,
        )?;
        points.push(SerPoint::from_counts(snr_db, errors, trials));
    }
    Ok(SerCurve {
        label: String::new(),
        points,
    })
}
