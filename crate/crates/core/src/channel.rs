//! Wireless channel between the outermost TX and RX layers.
//!
//! Correlated Rician fading (rank-one LoS plus spatially correlated Rayleigh
//! NLoS), rank-constrained random channels, additive noise at the receive
//! aperture, and noise calibration against a target SNR.

use crate::error::{Error, Result};
use crate::field::{ComplexField, Geometry};
use crate::rng::{RngSeed, Stream};
use crate::transceiver::Transceiver;
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::{BufRead, Read, Write};
use std::sync::Arc;

pub type CMatrix = DMatrix<Complex64>;

/// Draws one circularly-symmetric `CN(0, 1)` sample.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Normalized sinc, `sin(pi x) / (pi x)`.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// LoS departure/arrival angles and the Rician K-factor (linear).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RicianConfig {
    pub k_factor: f64,
    pub tx_elevation: f64,
    pub tx_azimuth: f64,
    pub rx_elevation: f64,
    pub rx_azimuth: f64,
}

impl RicianConfig {
    /// All four angles at pi/4.
    pub fn with_k_factor(k_factor: f64) -> Self {
        RicianConfig {
            k_factor,
            tx_elevation: PI / 4.0,
            tx_azimuth: PI / 4.0,
            rx_elevation: PI / 4.0,
            rx_azimuth: PI / 4.0,
        }
    }

    pub fn from_db(k_factor_db: f64) -> Self {
        Self::with_k_factor(10f64.powf(k_factor_db / 10.0))
    }

    /// `(LoS, NLoS)` amplitude weights.
    pub fn weights(&self) -> (f64, f64) {
        let k = self.k_factor;
        if k.is_infinite() {
            return (1.0, 0.0);
        }
        ((k / (1.0 + k)).sqrt(), (1.0 / (1.0 + k)).sqrt())
    }
}

/// How a realization was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKind {
    Rician,
    RankConstrained,
    Identity,
}

/// One draw of the `N x N` channel matrix and the noise variance at the
/// receive aperture.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h: CMatrix,
    pub sigma2: f64,
    pub kind: ChannelKind,
}

impl ChannelRealization {
    pub fn identity(n: usize) -> Self {
        ChannelRealization {
            h: CMatrix::identity(n, n),
            sigma2: 0.0,
            kind: ChannelKind::Identity,
        }
    }

    pub fn with_sigma2(mut self, sigma2: f64) -> Self {
        self.sigma2 = sigma2;
        self
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }
}

/// Array response of the UPA for a plane wave at `(elevation, azimuth)`.
/// Element `(x, z)` carries phase `x * w_x + z * w_z`.
pub fn steering_vector(geometry: &Geometry, elevation: f64, azimuth: f64) -> Vec<Complex64> {
    let w_x = 2.0 * PI * geometry.d_x / geometry.wavelength * elevation.sin() * azimuth.cos();
    let w_z = 2.0 * PI * geometry.d_z / geometry.wavelength * elevation.cos();
    let mut a = Vec::with_capacity(geometry.len());
    for z in 0..geometry.n_z {
        for x in 0..geometry.n_x {
            a.push(Complex64::from_polar(1.0, x as f64 * w_x + z as f64 * w_z));
        }
    }
    a
}

/// Rank-one LoS matrix with entry `(n, m) = a_tx[n] * conj(a_rx[m])`.
pub fn los_channel(geometry: &Geometry, config: &RicianConfig) -> CMatrix {
    let a_tx = steering_vector(geometry, config.tx_elevation, config.tx_azimuth);
    let a_rx = steering_vector(geometry, config.rx_elevation, config.rx_azimuth);
    let n = geometry.len();
    CMatrix::from_fn(n, n, |i, j| a_tx[i] * a_rx[j].conj())
}

/// Spatial correlation `sinc(2 r / lambda)` between every pair of elements.
pub fn correlation_matrix(geometry: &Geometry) -> DMatrix<f64> {
    let n = geometry.len();
    let coords: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            (
                (i % geometry.n_x) as f64 * geometry.d_x,
                (i / geometry.n_x) as f64 * geometry.d_z,
            )
        })
        .collect();
    DMatrix::from_fn(n, n, |i, j| {
        let r = ((coords[i].0 - coords[j].0).powi(2) + (coords[i].1 - coords[j].1).powi(2)).sqrt();
        sinc(2.0 * r / geometry.wavelength)
    })
}

/// Symmetric PSD square root via eigendecomposition, negative eigenvalues
/// clipped to zero.
pub fn psd_sqrt(matrix: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(matrix.clone());
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let scaled = &eig.eigenvectors * DMatrix::from_diagonal(&roots);
    &scaled * eig.eigenvectors.transpose()
}

fn gaussian_matrix<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut re = DMatrix::zeros(rows, cols);
    let mut im = DMatrix::zeros(rows, cols);
    // column-major fill, fixed order for reproducibility
    for j in 0..cols {
        for i in 0..rows {
            let c = complex_gaussian(rng);
            re[(i, j)] = c.re;
            im[(i, j)] = c.im;
        }
    }
    (re, im)
}

fn combine(re: DMatrix<f64>, im: DMatrix<f64>) -> CMatrix {
    re.zip_map(&im, Complex64::new)
}

fn frobenius_sq(m: &CMatrix) -> f64 {
    m.iter().map(|c| c.norm_sqr()).sum()
}

fn normalize_to(m: &mut CMatrix, target_sq: f64) -> Result<()> {
    let norm_sq = frobenius_sq(m);
    if !(norm_sq > 0.0) {
        return Err(Error::DegenerateCorrelation);
    }
    let alpha = (target_sq / norm_sq).sqrt();
    m.iter_mut().for_each(|c| *c *= alpha);
    Ok(())
}

/// Correlated Rayleigh NLoS draw from a precomputed correlation square root,
/// scaled so the squared Frobenius norm is exactly `N^2`.
pub fn nlos_from_sqrt<R: Rng + ?Sized>(sqrt: &DMatrix<f64>, rng: &mut R) -> Result<CMatrix> {
    let n = sqrt.nrows();
    if sqrt.iter().all(|v| *v == 0.0) {
        return Err(Error::DegenerateCorrelation);
    }
    let (g_re, g_im) = gaussian_matrix(n, n, rng);
    let re = sqrt * g_re * sqrt;
    let im = sqrt * g_im * sqrt;
    let mut h = combine(re, im);
    normalize_to(&mut h, (n * n) as f64)?;
    Ok(h)
}

pub fn nlos_channel(geometry: &Geometry, seed: RngSeed) -> Result<CMatrix> {
    let sqrt = psd_sqrt(&correlation_matrix(geometry));
    nlos_from_sqrt(&sqrt, &mut seed.rng(Stream::Channel, 0))
}

/// LoS/NLoS mixture weighted by the K-factor.
pub fn rician_from_parts(los: &CMatrix, nlos: &CMatrix, config: &RicianConfig) -> CMatrix {
    let (w_los, w_nlos) = config.weights();
    los.zip_map(nlos, |a, b| a * w_los + b * w_nlos)
}

pub fn rician_channel(
    geometry: &Geometry,
    config: &RicianConfig,
    seed: RngSeed,
) -> Result<ChannelRealization> {
    let los = los_channel(geometry, config);
    let nlos = nlos_channel(geometry, seed)?;
    Ok(ChannelRealization {
        h: rician_from_parts(&los, &nlos, config),
        sigma2: 0.0,
        kind: ChannelKind::Rician,
    })
}

/// `H = N / ||UV||_F * U V` with i.i.d. `CN(0,1)` factors of inner size `rank`.
pub fn rank_constrained_from_rng<R: Rng + ?Sized>(
    n: usize,
    rank: usize,
    rng: &mut R,
) -> Result<CMatrix> {
    if rank == 0 || rank > n {
        return Err(Error::invalid(
            "rank",
            format!("must be in 1..={n}, got {rank}"),
        ));
    }
    let (u_re, u_im) = gaussian_matrix(n, rank, rng);
    let (v_re, v_im) = gaussian_matrix(rank, n, rng);
    let re = &u_re * &v_re - &u_im * &v_im;
    let im = &u_re * &v_im + &u_im * &v_re;
    let mut h = combine(re, im);
    normalize_to(&mut h, (n * n) as f64)?;
    Ok(h)
}

pub fn rank_constrained_channel(
    geometry: &Geometry,
    rank: usize,
    seed: RngSeed,
) -> Result<ChannelRealization> {
    let h = rank_constrained_from_rng(geometry.len(), rank, &mut seed.rng(Stream::Channel, 0))?;
    Ok(ChannelRealization {
        h,
        sigma2: 0.0,
        kind: ChannelKind::RankConstrained,
    })
}

/// `H u` (no noise).
pub fn channel_matvec(h: &CMatrix, u: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); h.nrows()];
    channel_matvec_into(h, u, &mut out);
    out
}

pub fn channel_matvec_into(h: &CMatrix, u: &[Complex64], out: &mut [Complex64]) {
    debug_assert_eq!(u.len(), h.ncols());
    out.iter_mut().for_each(|o| *o = Complex64::new(0.0, 0.0));
    // column-major storage: accumulate one column at a time
    for (column, &value) in h.as_slice().chunks_exact(h.nrows()).zip(u) {
        if value == Complex64::new(0.0, 0.0) {
            continue;
        }
        for (o, &entry) in out.iter_mut().zip(column) {
            *o += entry * value;
        }
    }
}

/// `H^H g`.
pub fn channel_adjoint_matvec(h: &CMatrix, g: &[Complex64]) -> Vec<Complex64> {
    debug_assert_eq!(g.len(), h.nrows());
    h.as_slice()
        .chunks_exact(h.nrows())
        .map(|column| {
            column
                .iter()
                .zip(g)
                .map(|(entry, value)| entry.conj() * value)
                .sum()
        })
        .collect()
}

/// Draws `n` i.i.d. noise samples of per-element variance `sigma2`.
pub fn noise_vector<R: Rng + ?Sized>(n: usize, sigma2: f64, rng: &mut R) -> Vec<Complex64> {
    let scale = sigma2.sqrt();
    (0..n).map(|_| complex_gaussian(rng) * scale).collect()
}

/// `H u + n` with `n ~ CN(0, sigma^2 I)` drawn from `rng`.
pub fn apply_channel<R: Rng + ?Sized>(
    tx_field: &ComplexField,
    channel: &ChannelRealization,
    rng: &mut R,
) -> Result<ComplexField> {
    if tx_field.len() != channel.dim() {
        return Err(Error::mismatch(channel.dim(), tx_field.len()));
    }
    let mut out = channel_matvec(&channel.h, tx_field.as_slice());
    if channel.sigma2 > 0.0 {
        for (o, n) in out
            .iter_mut()
            .zip(noise_vector(tx_field.len(), channel.sigma2, rng))
        {
            *o += n;
        }
    }
    ComplexField::from_vec(tx_field.n_x(), tx_field.n_z(), out)
}

/// Statistical model the channel is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelModel {
    /// Correlated Rician fading, K-factor in dB, angles in degrees.
    Rician {
        k_factor_db: f64,
        tx_elevation_deg: f64,
        tx_azimuth_deg: f64,
        rx_elevation_deg: f64,
        rx_azimuth_deg: f64,
    },
    RankConstrained {
        rank: usize,
    },
    Identity,
}

impl ChannelModel {
    pub fn rician_db(k_factor_db: f64) -> Self {
        ChannelModel::Rician {
            k_factor_db,
            tx_elevation_deg: 45.0,
            tx_azimuth_deg: 45.0,
            rx_elevation_deg: 45.0,
            rx_azimuth_deg: 45.0,
        }
    }

    pub fn rician_config(&self) -> Option<RicianConfig> {
        match *self {
            ChannelModel::Rician {
                k_factor_db,
                tx_elevation_deg,
                tx_azimuth_deg,
                rx_elevation_deg,
                rx_azimuth_deg,
            } => Some(RicianConfig {
                k_factor: 10f64.powf(k_factor_db / 10.0),
                tx_elevation: tx_elevation_deg.to_radians(),
                tx_azimuth: tx_azimuth_deg.to_radians(),
                rx_elevation: rx_elevation_deg.to_radians(),
                rx_azimuth: rx_azimuth_deg.to_radians(),
            }),
            _ => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            ChannelModel::Rician { k_factor_db, .. } => format!("rician_k{k_factor_db}db"),
            ChannelModel::RankConstrained { rank } => format!("rank{rank}"),
            ChannelModel::Identity => "identity".to_string(),
        }
    }
}

/// When a new channel realization is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelPolicy {
    /// One realization for the whole run, shared by training and testing.
    Fixed,
    PerBatch,
    PerSample,
}

/// Offset separating evaluation channel draws from training draws.
pub const EVALUATION_DRAW_OFFSET: u64 = 1 << 40;
/// Offset separating calibration channel draws.
pub const CALIBRATION_DRAW_OFFSET: u64 = 1 << 41;

/// Produces channel realizations for a run according to a model and policy.
#[derive(Debug, Clone)]
pub struct ChannelSampler {
    geometry: Geometry,
    model: ChannelModel,
    policy: ChannelPolicy,
    seed: RngSeed,
    sqrt: Option<Arc<DMatrix<f64>>>,
    los: Option<Arc<CMatrix>>,
    fixed: Option<Arc<CMatrix>>,
}

impl ChannelSampler {
    pub fn new(
        geometry: &Geometry,
        model: ChannelModel,
        policy: ChannelPolicy,
        seed: RngSeed,
    ) -> Result<Self> {
        if let ChannelModel::RankConstrained { rank } = model {
            if rank == 0 || rank > geometry.len() {
                return Err(Error::invalid(
                    "rank",
                    format!("must be in 1..={}, got {rank}", geometry.len()),
                ));
            }
        }
        let (sqrt, los) = match model.rician_config() {
            Some(cfg) => (
                Some(Arc::new(psd_sqrt(&correlation_matrix(geometry)))),
                Some(Arc::new(los_channel(geometry, &cfg))),
            ),
            None => (None, None),
        };
        let mut sampler = ChannelSampler {
            geometry: *geometry,
            model,
            policy,
            seed,
            sqrt,
            los,
            fixed: None,
        };
        if policy == ChannelPolicy::Fixed {
            sampler.fixed = Some(Arc::new(sampler.draw(0)?));
        }
        Ok(sampler)
    }

    /// Replaces the fixed realization, e.g. with one loaded from disk.
    pub fn with_fixed(mut self, h: CMatrix) -> Result<Self> {
        if h.nrows() != self.geometry.len() || h.ncols() != self.geometry.len() {
            return Err(Error::mismatch(self.geometry.len(), h.nrows()));
        }
        self.policy = ChannelPolicy::Fixed;
        self.fixed = Some(Arc::new(h));
        Ok(self)
    }

    pub fn model(&self) -> ChannelModel {
        self.model
    }

    pub fn policy(&self) -> ChannelPolicy {
        self.policy
    }

    pub fn fixed(&self) -> Option<&Arc<CMatrix>> {
        self.fixed.as_ref()
    }

    pub fn kind(&self) -> ChannelKind {
        match self.model {
            ChannelModel::Rician { .. } => ChannelKind::Rician,
            ChannelModel::RankConstrained { .. } => ChannelKind::RankConstrained,
            ChannelModel::Identity => ChannelKind::Identity,
        }
    }

    /// Fresh draw number `index` from the channel stream.
    pub fn draw(&self, index: u64) -> Result<CMatrix> {
        let n = self.geometry.len();
        let mut rng = self.seed.rng(Stream::Channel, index);
        match self.model {
            ChannelModel::Rician { .. } => {
                let cfg = self.model.rician_config().expect("rician model");
                let nlos = nlos_from_sqrt(self.sqrt.as_ref().expect("sqrt"), &mut rng)?;
                Ok(rician_from_parts(
                    self.los.as_ref().expect("los"),
                    &nlos,
                    &cfg,
                ))
            }
            ChannelModel::RankConstrained { rank } => rank_constrained_from_rng(n, rank, &mut rng),
            ChannelModel::Identity => Ok(CMatrix::identity(n, n)),
        }
    }

    /// Channel for training batch `batch`, sample `sample`.
    pub fn training(
        &self,
        batch: u64,
        sample: u64,
        samples_per_batch: u64,
    ) -> Result<Arc<CMatrix>> {
        match self.policy {
            ChannelPolicy::Fixed => Ok(self.fixed.clone().expect("fixed channel")),
            ChannelPolicy::PerBatch => Ok(Arc::new(self.draw(1 + batch)?)),
            ChannelPolicy::PerSample => {
                Ok(Arc::new(self.draw(1 + batch * samples_per_batch + sample)?))
            }
        }
    }

    /// Channel for evaluation trial `trial`; redrawn per trial unless fixed.
    pub fn evaluation(&self, trial: u64) -> Result<Arc<CMatrix>> {
        match self.policy {
            ChannelPolicy::Fixed => Ok(self.fixed.clone().expect("fixed channel")),
            _ => Ok(Arc::new(self.draw(EVALUATION_DRAW_OFFSET + trial)?)),
        }
    }

    pub fn calibration(&self, sample: u64) -> Result<Arc<CMatrix>> {
        match self.policy {
            ChannelPolicy::Fixed => Ok(self.fixed.clone().expect("fixed channel")),
            _ => Ok(Arc::new(self.draw(CALIBRATION_DRAW_OFFSET + sample)?)),
        }
    }
}

/// Average per-element received signal power at the RX aperture over a batch
/// of random symbols.
pub fn received_power(
    transceiver: &Transceiver,
    sampler: &ChannelSampler,
    seed: RngSeed,
    batch: usize,
) -> Result<f64> {
    let order = transceiver.scheme().order();
    let mut rng = seed.rng(Stream::Calibration, 0);
    let n = transceiver.geometry().len() as f64;
    let mut total = 0.0;
    for i in 0..batch {
        let symbol = rng.random_range(0..order);
        let u = transceiver.transmit(symbol)?;
        let h = sampler.calibration(i as u64)?;
        let v = channel_matvec(&h, &u);
        total += v.iter().map(|c| c.norm_sqr()).sum::<f64>() / n;
    }
    Ok(total / batch.max(1) as f64)
}

/// Noise variance giving `snr_db` relative to the calibrated received power.
pub fn calibrate_noise(
    snr_db: f64,
    transceiver: &Transceiver,
    sampler: &ChannelSampler,
    seed: RngSeed,
    batch: usize,
) -> Result<f64> {
    let power = received_power(transceiver, sampler, seed, batch)?;
    sigma2_for_snr(snr_db, power)
}

/// `sigma^2 = P / 10^(snr/10)`.
pub fn sigma2_for_snr(snr_db: f64, reference_power: f64) -> Result<f64> {
    if !(reference_power > 0.0) || !reference_power.is_finite() {
        return Err(Error::ZeroReceivedPower);
    }
    Ok(reference_power / 10f64.powf(snr_db / 10.0))
}

const CHANNEL_MAGIC: &[u8; 8] = b"D2NNCHAN";

/// Binary dump: magic, `u32` version, `u64` rows, `u64` cols, `f64` sigma2,
/// then row-major `(re, im)` little-endian `f64` pairs.
pub fn write_channel_binary<W: Write>(
    channel: &ChannelRealization,
    mut out: W,
) -> std::io::Result<()> {
    out.write_all(CHANNEL_MAGIC)?;
    out.write_all(&1u32.to_le_bytes())?;
    out.write_all(&(channel.h.nrows() as u64).to_le_bytes())?;
    out.write_all(&(channel.h.ncols() as u64).to_le_bytes())?;
    out.write_all(&channel.sigma2.to_le_bytes())?;
    for i in 0..channel.h.nrows() {
        for j in 0..channel.h.ncols() {
            let c = channel.h[(i, j)];
            out.write_all(&c.re.to_le_bytes())?;
            out.write_all(&c.im.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u64<R: Read>(input: &mut R) -> std::io::Result<u64> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64<R: Read>(input: &mut R) -> std::io::Result<f64> {
    Ok(f64::from_bits(read_u64(input)?))
}

pub fn read_channel_binary<R: Read>(mut input: R, kind: ChannelKind) -> Result<ChannelRealization> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != CHANNEL_MAGIC {
        return Err(Error::Checkpoint("bad channel magic".into()));
    }
    let mut version = [0u8; 4];
    input.read_exact(&mut version)?;
    if u32::from_le_bytes(version) != 1 {
        return Err(Error::Checkpoint("unsupported channel dump version".into()));
    }
    let rows = read_u64(&mut input)? as usize;
    let cols = read_u64(&mut input)? as usize;
    if rows == 0 || cols == 0 || rows.saturating_mul(cols) > (1 << 28) {
        return Err(Error::Checkpoint(format!(
            "implausible channel shape {rows}x{cols}"
        )));
    }
    let sigma2 = read_f64(&mut input)?;
    let mut h = CMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let re = read_f64(&mut input)?;
            let im = read_f64(&mut input)?;
            h[(i, j)] = Complex64::new(re, im);
        }
    }
    Ok(ChannelRealization { h, sigma2, kind })
}

/// CSV dump: one line per matrix row, columns `re0,im0,re1,im1,...`.
pub fn write_channel_csv<W: Write>(h: &CMatrix, mut out: W) -> std::io::Result<()> {
    let header: Vec<String> = (0..h.ncols())
        .flat_map(|j| [format!("re{j}"), format!("im{j}")])
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for i in 0..h.nrows() {
        let row: Vec<String> = (0..h.ncols())
            .flat_map(|j| {
                let c = h[(i, j)];
                [format!("{:.17e}", c.re), format!("{:.17e}", c.im)]
            })
            .collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_channel_csv<R: BufRead>(input: R) -> Result<CMatrix> {
    let mut rows: Vec<Vec<Complex64>> = Vec::new();
    for (line_no, line) in input.lines().enumerate() {
        let line = line?;
        if line_no == 0 || line.trim().is_empty() {
            continue;
        }
        let values: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|v| v.trim().parse::<f64>()).collect();
        let values = values.map_err(|e| Error::Checkpoint(format!("line {}: {e}", line_no + 1)))?;
        if values.len() % 2 != 0 {
            return Err(Error::Checkpoint(format!(
                "line {}: odd column count",
                line_no + 1
            )));
        }
        rows.push(
            values
                .chunks_exact(2)
                .map(|p| Complex64::new(p[0], p[1]))
                .collect(),
        );
    }
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(Error::Checkpoint("ragged or empty channel CSV".into()));
    }
    let cols = rows[0].len();
    Ok(CMatrix::from_fn(n, cols, |i, j| rows[i][j]))
}
