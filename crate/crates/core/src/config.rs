//! Declarative experiment configuration (TOML).
//!
//! Lengths are millimetres, angles degrees, SNRs and K-factors dB. Unknown
//! keys are rejected. Validation runs before any compute and names the
//! offending field.

use crate::channel::{ChannelModel, ChannelPolicy};
use crate::diffraction::{Engine, Propagator};
use crate::error::{Error, Result};
use crate::field::{Geometry, ModulationScheme};
use crate::rng::RngSeed;
use crate::training::{
    AdamParams, GradientMode, InitScheme, OptimizerKind, TrainConfig, Trainable,
};
use crate::transceiver::{Normalization, Transceiver};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// Reference configuration shipped with the crate.
pub const REFERENCE_CONFIG: &str = include_str!("../configs/reference.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub n_x: usize,
    pub n_z: usize,
    pub pitch_x_mm: f64,
    pub pitch_z_mm: f64,
    pub layer_spacing_mm: f64,
    pub wavelength_mm: f64,
    pub tx_layers: usize,
    pub rx_layers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulationSection {
    pub m_x: usize,
    pub m_z: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagationSection {
    pub engine: Engine,
    pub padding: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    pub normalization: Normalization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelModelTag {
    Rician,
    RankConstrained,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub model: ChannelModelTag,
    pub policy: ChannelPolicy,
    #[serde(default)]
    pub k_factor_db: f64,
    #[serde(default = "default_angle")]
    pub tx_elevation_deg: f64,
    #[serde(default = "default_angle")]
    pub tx_azimuth_deg: f64,
    #[serde(default = "default_angle")]
    pub rx_elevation_deg: f64,
    #[serde(default = "default_angle")]
    pub rx_azimuth_deg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
}

fn default_angle() -> f64 {
    45.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub batch_size: usize,
    pub samples: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub snr_db: f64,
    pub batch_norm: bool,
    pub init: InitScheme,
    pub calibration_batch: usize,
    #[serde(default)]
    pub gradient_mode: GradientMode,
    #[serde(default = "yes")]
    pub train_tx: bool,
    #[serde(default = "yes")]
    pub train_rx: bool,
}

fn default_beta1() -> f64 {
    AdamParams::default().beta1
}
fn default_beta2() -> f64 {
    AdamParams::default().beta2
}
fn default_epsilon() -> f64 {
    AdamParams::default().epsilon
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    pub snr_db: Vec<f64>,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub geometry: GeometrySection,
    pub modulation: ModulationSection,
    pub propagation: PropagationSection,
    pub detector: DetectorSection,
    pub channel: ChannelSection,
    pub training: TrainingSection,
    pub evaluation: EvaluationSection,
}

fn config_error(field: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

/// `start, start + step, ..., stop` inclusive.
pub fn snr_grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    (0..count).map(|i| start + step * i as f64).collect()
}

impl ExperimentConfig {
    pub fn reference() -> Self {
        Self::parse(REFERENCE_CONFIG).expect("reference config is valid")
    }

    /// Parses and validates.
    pub fn parse(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| text[s].lines().next().unwrap_or("").trim().to_string())
                .filter(|s| !s.is_empty())
                .unwrap_or_else(|| "<document>".to_string());
            config_error(&field, e.message().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical serialization,
    /// ignoring `output_dir`.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        for (field, value) in [("geometry.n_x", g.n_x), ("geometry.n_z", g.n_z)] {
            if value == 0 {
                return Err(config_error(field, "must be at least 1"));
            }
        }
        for (field, value) in [
            ("geometry.pitch_x_mm", g.pitch_x_mm),
            ("geometry.pitch_z_mm", g.pitch_z_mm),
            ("geometry.layer_spacing_mm", g.layer_spacing_mm),
            ("geometry.wavelength_mm", g.wavelength_mm),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(config_error(
                    field,
                    format!("must be positive, got {value}"),
                ));
            }
        }
        for (field, value) in [
            ("geometry.tx_layers", g.tx_layers),
            ("geometry.rx_layers", g.rx_layers),
        ] {
            if value == 0 {
                return Err(config_error(field, "must be at least 1"));
            }
        }
        let m = &self.modulation;
        if m.m_x == 0 || g.n_x % m.m_x != 0 {
            return Err(config_error(
                "modulation.m_x",
                format!("n_x = {} is not divisible by m_x = {}", g.n_x, m.m_x),
            ));
        }
        if m.m_z == 0 || g.n_z % m.m_z != 0 {
            return Err(config_error(
                "modulation.m_z",
                format!("n_z = {} is not divisible by m_z = {}", g.n_z, m.m_z),
            ));
        }
        let order = m.m_x * m.m_z;
        if order < 2 || !order.is_power_of_two() {
            return Err(config_error(
                "modulation.m_x",
                format!("order m_x * m_z = {order} must be a power of two and at least 2"),
            ));
        }
        if !(self.propagation.padding >= 1.0 && self.propagation.padding.is_finite()) {
            return Err(config_error("propagation.padding", "must be at least 1"));
        }
        let c = &self.channel;
        match c.model {
            ChannelModelTag::RankConstrained => match c.rank {
                Some(r) if r >= 1 && r <= g.n_x * g.n_z => {}
                Some(r) => {
                    return Err(config_error(
                        "channel.rank",
                        format!("must be in 1..={}, got {r}", g.n_x * g.n_z),
                    ))
                }
                None => {
                    return Err(config_error(
                        "channel.rank",
                        "required for rank_constrained",
                    ))
                }
            },
            _ => {
                if c.rank.is_some() {
                    return Err(config_error(
                        "channel.rank",
                        "only valid for rank_constrained",
                    ));
                }
            }
        }
        if !c.k_factor_db.is_finite() {
            return Err(config_error("channel.k_factor_db", "must be finite"));
        }
        let t = &self.training;
        if t.batch_size == 0 {
            return Err(config_error("training.batch_size", "must be at least 1"));
        }
        if t.samples < t.batch_size {
            return Err(config_error(
                "training.samples",
                "must cover at least one batch",
            ));
        }
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return Err(config_error("training.learning_rate", "must be positive"));
        }
        if !t.snr_db.is_finite() {
            return Err(config_error("training.snr_db", "must be finite"));
        }
        if t.calibration_batch == 0 {
            return Err(config_error(
                "training.calibration_batch",
                "must be at least 1",
            ));
        }
        for (field, value) in [("training.beta1", t.beta1), ("training.beta2", t.beta2)] {
            if !(0.0..1.0).contains(&value) {
                return Err(config_error(field, "must be in [0, 1)"));
            }
        }
        if !(t.epsilon > 0.0) {
            return Err(config_error("training.epsilon", "must be positive"));
        }
        let e = &self.evaluation;
        if e.trials == 0 {
            return Err(config_error("evaluation.trials", "must be at least 1"));
        }
        if e.snr_db.is_empty() || e.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(config_error(
                "evaluation.snr_db",
                "must be a nonempty list of finite values",
            ));
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<Geometry> {
        let g = &self.geometry;
        Geometry::new(
            g.n_x,
            g.n_z,
            g.pitch_x_mm * 1e-3,
            g.pitch_z_mm * 1e-3,
            g.layer_spacing_mm * 1e-3,
            g.wavelength_mm * 1e-3,
            g.tx_layers,
            g.rx_layers,
        )
    }

    pub fn scheme(&self) -> Result<ModulationScheme> {
        ModulationScheme::new(self.modulation.m_x, self.modulation.m_z, &self.geometry()?)
    }

    pub fn channel_model(&self) -> ChannelModel {
        let c = &self.channel;
        match c.model {
            ChannelModelTag::Rician => ChannelModel::Rician {
                k_factor_db: c.k_factor_db,
                tx_elevation_deg: c.tx_elevation_deg,
                tx_azimuth_deg: c.tx_azimuth_deg,
                rx_elevation_deg: c.rx_elevation_deg,
                rx_azimuth_deg: c.rx_azimuth_deg,
            },
            ChannelModelTag::RankConstrained => ChannelModel::RankConstrained {
                rank: c.rank.unwrap_or(1),
            },
            ChannelModelTag::Identity => ChannelModel::Identity,
        }
    }

    pub fn set_channel_model(&mut self, model: ChannelModel) {
        let c = &mut self.channel;
        match model {
            ChannelModel::Rician {
                k_factor_db,
                tx_elevation_deg,
                tx_azimuth_deg,
                rx_elevation_deg,
                rx_azimuth_deg,
            } => {
                c.model = ChannelModelTag::Rician;
                c.k_factor_db = k_factor_db;
                c.tx_elevation_deg = tx_elevation_deg;
                c.tx_azimuth_deg = tx_azimuth_deg;
                c.rx_elevation_deg = rx_elevation_deg;
                c.rx_azimuth_deg = rx_azimuth_deg;
                c.rank = None;
            }
            ChannelModel::RankConstrained { rank } => {
                c.model = ChannelModelTag::RankConstrained;
                c.rank = Some(rank);
            }
            ChannelModel::Identity => {
                c.model = ChannelModelTag::Identity;
                c.rank = None;
            }
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            batch_size: t.batch_size,
            samples: t.samples,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            optimizer: t.optimizer,
            adam: AdamParams {
                beta1: t.beta1,
                beta2: t.beta2,
                epsilon: t.epsilon,
            },
            snr_db: t.snr_db,
            channel: self.channel_model(),
            channel_policy: self.channel.policy,
            batch_norm: t.batch_norm,
            init: t.init,
            calibration_batch: t.calibration_batch,
            gradient_mode: t.gradient_mode,
            trainable: Trainable {
                tx: t.train_tx,
                rx: t.train_rx,
            },
        }
    }

    pub fn rng_seed(&self) -> RngSeed {
        RngSeed(self.seed)
    }

    pub fn propagator(&self) -> Result<Arc<Propagator>> {
        Ok(Arc::new(Propagator::for_geometry(
            &self.geometry()?,
            self.propagation.engine,
            self.propagation.padding,
        )?))
    }

    /// Untrained transceiver (all phases zero).
    pub fn transceiver(&self) -> Result<Transceiver> {
        Transceiver::flat(
            self.scheme()?,
            self.propagator()?,
            self.detector.normalization,
        )
    }

    /// Copy with a square `n x n` grid and `layers` layers per side, pitch
    /// and everything else unchanged.
    pub fn with_shape(&self, n: usize, layers: usize) -> Self {
        let mut c = self.clone();
        c.geometry.n_x = n;
        c.geometry.n_z = n;
        c.geometry.tx_layers = layers;
        c.geometry.rx_layers = layers;
        c
    }
}
