//! Conventional reference link: an `n_rf`-antenna maximum ratio transmitter
//! sending 16-QAM to a single-antenna receiver.
//!
//! The transmit array is a UPA at the metasurface pitch (9x9 for 81 RF
//! chains). Its channel vector mixes the LoS steering response with
//! correlated Rayleigh fading exactly like the metasurface channel, with the
//! NLoS part normalized to squared norm `n_rf`. With unit symbol energy and
//! unit per-antenna gain, `sigma^2 = 10^(-snr/10)`; after conjugate
//! beamforming the matched-filter output is `s + n / ||h||`.

use super::{SerCurve, SerPoint};
use crate::channel::{
    complex_gaussian, correlation_matrix, psd_sqrt, steering_vector, RicianConfig,
};
use crate::error::{Error, Result};
use crate::field::Geometry;
use crate::rng::{RngSeed, Stream};
use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineChannel {
    /// Unit-gain channel: plain AWGN at `Es/N0 = snr`.
    Awgn,
    Rician(RicianConfig),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineConfig {
    pub n_rf: usize,
    pub pitch_x: f64,
    pub pitch_z: f64,
    pub wavelength: f64,
    pub channel: BaselineChannel,
}

impl BaselineConfig {
    /// `n_rf` antennas at the reference pitch over the K = 0 dB channel.
    pub fn reference(n_rf: usize) -> Self {
        let g = Geometry::reference();
        BaselineConfig {
            n_rf,
            pitch_x: g.d_x,
            pitch_z: g.d_z,
            wavelength: g.wavelength,
            channel: BaselineChannel::Rician(RicianConfig::from_db(0.0)),
        }
    }

    /// Most nearly square `n_x x n_z` factorization of `n_rf`.
    pub fn array_shape(&self) -> (usize, usize) {
        let mut n_x = (self.n_rf as f64).sqrt().floor().max(1.0) as usize;
        while self.n_rf % n_x != 0 {
            n_x -= 1;
        }
        (n_x, self.n_rf / n_x)
    }

    fn geometry(&self) -> Geometry {
        let (n_x, n_z) = self.array_shape();
        Geometry {
            n_x,
            n_z,
            d_x: self.pitch_x,
            d_z: self.pitch_z,
            d_layer: 1.0,
            wavelength: self.wavelength,
            l_tx: 1,
            l_rx: 1,
        }
    }
}

/// Unit-average-energy 16-QAM points, index `4 * i_im + i_re` over levels
/// `{-3, -1, 1, 3} / sqrt(10)`.
pub fn qam16_constellation() -> [Complex64; 16] {
    let levels = [-3.0, -1.0, 1.0, 3.0];
    let scale = 1.0 / 10f64.sqrt();
    let mut points = [Complex64::new(0.0, 0.0); 16];
    for (k, p) in points.iter_mut().enumerate() {
        *p = Complex64::new(levels[k % 4], levels[k / 4]) * scale;
    }
    points
}

fn slice_axis(value: f64) -> usize {
    let v = value * 10f64.sqrt();
    if v < -2.0 {
        0
    } else if v < 0.0 {
        1
    } else if v < 2.0 {
        2
    } else {
        3
    }
}

/// Minimum-distance decision.
pub fn qam16_slice(y: Complex64) -> usize {
    4 * slice_axis(y.im) + slice_axis(y.re)
}

/// Exact 16-QAM symbol error probability over AWGN at `Es/N0` (dB).
pub fn qam16_awgn_ser(es_n0_db: f64) -> f64 {
    let gamma = 10f64.powf(es_n0_db / 10.0);
    let q = |x: f64| 0.5 * statrs::function::erf::erfc(x / std::f64::consts::SQRT_2);
    let p = 2.0 * (1.0 - 0.25) * q((3.0 * gamma / 15.0).sqrt());
    1.0 - (1.0 - p) * (1.0 - p)
}

const CHUNK: usize = 4096;

/// Monte-Carlo SER of the MRT link, fresh channel, symbol and noise each trial.
pub fn baseline_mrt_qam(
    config: &BaselineConfig,
    snr_points: &[f64],
    trials: usize,
    seed: RngSeed,
) -> Result<SerCurve> {
    if config.n_rf == 0 {
        return Err(Error::invalid("n_rf", "must be at least 1"));
    }
    if trials == 0 {
        return Err(Error::invalid("trials", "must be at least 1"));
    }
    let n = config.n_rf;
    let model = match config.channel {
        BaselineChannel::Awgn => None,
        BaselineChannel::Rician(cfg) => {
            let g = config.geometry();
            let a = DVector::from_vec(steering_vector(&g, cfg.tx_elevation, cfg.tx_azimuth));
            Some((
                cfg,
                a,
                psd_sqrt(&correlation_matrix(&g)).map(|v| Complex64::new(v, 0.0)),
            ))
        }
    };
    let constellation = qam16_constellation();
    let mut points = Vec::with_capacity(snr_points.len());
    for (point, &snr_db) in snr_points.iter().enumerate() {
        let sigma = 10f64.powf(-snr_db / 20.0);
        let chunks = trials.div_ceil(CHUNK);
        let errors: usize = (0..chunks)
            .into_par_iter()
            .map(|chunk| {
                let mut rng = seed.rng(Stream::Evaluation, ((point as u64) << 32) | chunk as u64);
                let mut errors = 0;
                for _ in chunk * CHUNK..((chunk + 1) * CHUNK).min(trials) {
                    let gain = match &model {
                        None => 1.0,
                        Some((cfg, a, sqrt)) => {
                            let g = DVector::from_fn(n, |_, _| complex_gaussian(&mut rng));
                            let nlos = sqrt * g;
                            let norm = nlos.norm();
                            let nlos = if norm > 0.0 {
                                nlos * Complex64::new((n as f64).sqrt() / norm, 0.0)
                            } else {
                                nlos
                            };
                            let (w_los, w_nlos) = cfg.weights();
                            (a * Complex64::new(w_los, 0.0) + nlos * Complex64::new(w_nlos, 0.0))
                                .norm()
                        }
                    };
                    let symbol = rng.random_range(0..16);
                    let noise = complex_gaussian(&mut rng) * sigma;
                    if gain == 0.0 {
                        errors += usize::from(symbol != 0);
                        continue;
                    }
                    if qam16_slice(constellation[symbol] + noise / gain) != symbol {
                        errors += 1;
                    }
                }
                errors
            })
            .collect::<Vec<_>>()
            .iter()
            .sum();
        points.push(SerPoint::from_counts(snr_db, errors, trials));
    }
    Ok(SerCurve {
        label: format!("mrt_{}rf", config.n_rf),
        points,
    })
}
