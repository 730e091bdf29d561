//! Experiment sweeps: each cell is one full configuration that is trained and
//! then measured on a test SNR grid.

use super::{measure_ser, SerCurve, SerPoint, SER_CSV_HEADER};
use crate::channel::ChannelModel;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::training::{train, TrainReport};
use crate::transceiver::Transceiver;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// Layers x element grid.
    Capacity,
    TrainingSnr,
    Rank,
    Rician,
}

/// Sweep description file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub kind: SweepKind,
    /// Base experiment config, relative to the sweep file; the shipped
    /// reference config when absent.
    #[serde(default)]
    pub base: Option<PathBuf>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub layers: Vec<usize>,
    #[serde(default)]
    pub sizes: Vec<usize>,
    #[serde(default)]
    pub train_snr_db: Vec<f64>,
    #[serde(default)]
    pub ranks: Vec<usize>,
    #[serde(default)]
    pub k_factors_db: Vec<f64>,
    pub test_snr_db: Vec<f64>,
    pub trials: usize,
}

impl SweepSpec {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config {
            field: "sweep".into(),
            reason: e.message().to_string(),
        })
    }

    pub fn base_config(&self, spec_path: Option<&Path>) -> Result<ExperimentConfig> {
        match &self.base {
            None => Ok(ExperimentConfig::reference()),
            Some(p) => {
                let path = match spec_path.and_then(Path::parent) {
                    Some(dir) if p.is_relative() => dir.join(p),
                    _ => p.clone(),
                };
                ExperimentConfig::load(&path)
            }
        }
    }

    /// Expands the sweep into cells, validating every configuration.
    pub fn cells(&self, base: &ExperimentConfig) -> Result<Vec<SweepCell>> {
        let reject = |field: &str| Error::Config {
            field: field.into(),
            reason: "list must not be empty".into(),
        };
        if self.seeds.is_empty() {
            return Err(reject("seeds"));
        }
        if self.test_snr_db.is_empty() {
            return Err(reject("test_snr_db"));
        }
        if self.trials == 0 {
            return Err(Error::Config {
                field: "trials".into(),
                reason: "must be at least 1".into(),
            });
        }
        let cells = match self.kind {
            SweepKind::Capacity => {
                if self.layers.is_empty() {
                    return Err(reject("layers"));
                }
                if self.sizes.is_empty() {
                    return Err(reject("sizes"));
                }
                capacity_cells(base, &self.layers, &self.sizes, &self.seeds)
            }
            SweepKind::TrainingSnr => {
                if self.train_snr_db.is_empty() {
                    return Err(reject("train_snr_db"));
                }
                training_snr_cells(base, &self.train_snr_db, &self.seeds)
            }
            SweepKind::Rank => {
                if self.ranks.is_empty() {
                    return Err(reject("ranks"));
                }
                let models: Vec<ChannelModel> = self
                    .ranks
                    .iter()
                    .map(|&rank| ChannelModel::RankConstrained { rank })
                    .collect();
                channel_cells(base, &models, &self.seeds)
            }
            SweepKind::Rician => {
                if self.k_factors_db.is_empty() {
                    return Err(reject("k_factors_db"));
                }
                let models: Vec<ChannelModel> = self
                    .k_factors_db
                    .iter()
                    .map(|&k| {
                        let mut m = base.channel_model();
                        if let ChannelModel::Rician { k_factor_db, .. } = &mut m {
                            *k_factor_db = k;
                            m
                        } else {
                            ChannelModel::rician_db(k)
                        }
                    })
                    .collect();
                channel_cells(base, &models, &self.seeds)
            }
        };
        for cell in &cells {
            cell.config.validate()?;
        }
        Ok(cells)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub label: String,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub config_hash: String,
    pub label: String,
    pub seed: u64,
    pub final_loss: f64,
    pub curve: SerCurve,
}

pub const SWEEP_CSV_HEADER: &str =
    "config_hash,snr_db,ser,trials,ci_halfwidth,label,seed,final_loss";

impl CellResult {
    pub fn write_rows<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for p in &self.curve.points {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                self.config_hash,
                p.snr_db,
                p.ser,
                p.trials,
                p.ci_halfwidth,
                self.label,
                self.seed,
                self.final_loss
            )?;
        }
        Ok(())
    }
}

pub const CAPACITY_LABEL_PREFIX: &str = "capacity";

fn capacity_cells(
    base: &ExperimentConfig,
    layers: &[usize],
    sizes: &[usize],
    seeds: &[u64],
) -> Vec<SweepCell> {
    let mut cells = Vec::new();
    for &l in layers {
        for &n in sizes {
            for &seed in seeds {
                let mut config = base.with_shape(n, l);
                config.seed = seed;
                cells.push(SweepCell {
                    label: format!("{CAPACITY_LABEL_PREFIX}_L{l}_N{n}"),
                    config,
                });
            }
        }
    }
    cells
}

fn training_snr_cells(
    base: &ExperimentConfig,
    train_snr_db: &[f64],
    seeds: &[u64],
) -> Vec<SweepCell> {
    let mut cells = Vec::new();
    for &snr in train_snr_db {
        for &seed in seeds {
            let mut config = base.clone();
            config.training.snr_db = snr;
            config.seed = seed;
            cells.push(SweepCell {
                label: format!("train_snr_{snr}dB"),
                config,
            });
        }
    }
    cells
}

/// One cell per channel model and seed.
pub fn channel_cells(
    base: &ExperimentConfig,
    models: &[ChannelModel],
    seeds: &[u64],
) -> Vec<SweepCell> {
    let mut cells = Vec::new();
    for model in models {
        for &seed in seeds {
            let mut config = base.clone();
            config.set_channel_model(*model);
            config.seed = seed;
            cells.push(SweepCell {
                label: model.label(),
                config,
            });
        }
    }
    cells
}

/// Trains a fresh transceiver for `config`.
pub fn train_config(config: &ExperimentConfig) -> Result<(Transceiver, TrainReport)> {
    let mut transceiver = config.transceiver()?;
    let report = train(&config.train_config(), &mut transceiver, config.rng_seed())?;
    Ok((transceiver, report))
}

pub fn run_cell(cell: &SweepCell, test_snr_db: &[f64], trials: usize) -> Result<CellResult> {
    let (transceiver, report) = train_config(&cell.config)?;
    let mut curve = measure_ser(
        &transceiver,
        test_snr_db,
        trials,
        &report.channel,
        report.reference_power,
        cell.config.rng_seed(),
    )?;
    curve.label = cell.label.clone();
    log::info!(
        "{} seed {}: final loss {:.4}",
        cell.label,
        cell.config.seed,
        report.final_loss()
    );
    Ok(CellResult {
        config_hash: cell.config.hash(),
        label: cell.label.clone(),
        seed: cell.config.seed,
        final_loss: report.final_loss(),
        curve,
    })
}

fn run_all(cells: &[SweepCell], test_snr_db: &[f64], trials: usize) -> Result<Vec<CellResult>> {
    cells
        .iter()
        .map(|c| run_cell(c, test_snr_db, trials))
        .collect()
}

pub fn sweep_capacity(
    base: &ExperimentConfig,
    layers: &[usize],
    sizes: &[usize],
    seeds: &[u64],
    test_snr_db: &[f64],
    trials: usize,
) -> Result<Vec<CellResult>> {
    run_all(
        &capacity_cells(base, layers, sizes, seeds),
        test_snr_db,
        trials,
    )
}

pub fn sweep_training_snr(
    base: &ExperimentConfig,
    train_snr_db: &[f64],
    seeds: &[u64],
    test_snr_db: &[f64],
    trials: usize,
) -> Result<Vec<CellResult>> {
    run_all(
        &training_snr_cells(base, train_snr_db, seeds),
        test_snr_db,
        trials,
    )
}

pub fn sweep_channel(
    base: &ExperimentConfig,
    models: &[ChannelModel],
    seeds: &[u64],
    test_snr_db: &[f64],
    trials: usize,
) -> Result<Vec<CellResult>> {
    run_all(&channel_cells(base, models, seeds), test_snr_db, trials)
}

fn parse_row(line: &str) -> Option<(String, String, u64, f64, SerPoint)> {
    let f: Vec<&str> = line.split(',').collect();
    if f.len() != 8 {
        return None;
    }
    let snr_db: f64 = f[1].parse().ok()?;
    let ser: f64 = f[2].parse().ok()?;
    let trials: usize = f[3].parse().ok()?;
    let ci_halfwidth: f64 = f[4].parse().ok()?;
    let seed: u64 = f[6].parse().ok()?;
    let final_loss: f64 = f[7].parse().ok()?;
    if !(0.0..=1.0).contains(&ser) || trials == 0 {
        return None;
    }
    let errors = (ser * trials as f64).round() as usize;
    Some((
        f[0].to_string(),
        f[5].to_string(),
        seed,
        final_loss,
        SerPoint {
            snr_db,
            ser,
            errors,
            trials,
            ci_halfwidth,
        },
    ))
}

/// Results already present in a sweep CSV. A cell counts as complete only if
/// it has exactly one valid row per grid point; anything else is dropped so
/// the cell is recomputed.
pub fn read_completed(path: &Path, test_snr_db: &[f64]) -> Result<BTreeMap<String, CellResult>> {
    let mut grouped: BTreeMap<String, Vec<(String, u64, f64, SerPoint)>> = BTreeMap::new();
    let mut broken = std::collections::BTreeSet::new();
    let file = match std::fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(BTreeMap::new()),
        Err(e) => return Err(e.into()),
    };
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let Ok(line) = line else { break };
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        match parse_row(&line) {
            Some((hash, label, seed, loss, point)) => grouped
                .entry(hash)
                .or_default()
                .push((label, seed, loss, point)),
            None => {
                if let Some(hash) = line.split(',').next() {
                    broken.insert(hash.to_string());
                }
            }
        }
    }
    let mut done = BTreeMap::new();
    for (hash, rows) in grouped {
        let complete = !broken.contains(&hash)
            && rows.len() == test_snr_db.len()
            && rows
                .iter()
                .zip(test_snr_db)
                .all(|(r, s)| (r.3.snr_db - s).abs() < 1e-9);
        if !complete {
            continue;
        }
        let (label, seed, final_loss) = (rows[0].0.clone(), rows[0].1, rows[0].2);
        done.insert(
            hash.clone(),
            CellResult {
                config_hash: hash,
                label: label.clone(),
                seed,
                final_loss,
                curve: SerCurve {
                    label,
                    points: rows.into_iter().map(|r| r.3).collect(),
                },
            },
        );
    }
    Ok(done)
}

/// Runs every cell not already complete in `csv_path`, rewriting the file
/// with the surviving rows first. Results come back in cell order.
pub fn run_resumable(
    cells: &[SweepCell],
    test_snr_db: &[f64],
    trials: usize,
    csv_path: &Path,
) -> Result<Vec<CellResult>> {
    let mut done = read_completed(csv_path, test_snr_db)?;
    // keep only rows of cells that belong to this sweep and are complete
    done.retain(|hash, _| cells.iter().any(|c| &c.config.hash() == hash));
    {
        let mut out = std::io::BufWriter::new(std::fs::File::create(csv_path)?);
        writeln!(out, "{SWEEP_CSV_HEADER}")?;
        for cell in cells {
            if let Some(r) = done.get(&cell.config.hash()) {
                r.write_rows(&mut out)?;
            }
        }
        out.flush()?;
    }
    let mut results = Vec::with_capacity(cells.len());
    for cell in cells {
        let hash = cell.config.hash();
        if let Some(r) = done.get(&hash) {
            log::info!(
                "{} seed {}: already complete, skipped",
                cell.label,
                cell.config.seed
            );
            results.push(r.clone());
            continue;
        }
        let result = run_cell(cell, test_snr_db, trials)?;
        let mut out = std::fs::OpenOptions::new().append(true).open(csv_path)?;
        let mut buf = Vec::new();
        result.write_rows(&mut buf)?;
        out.write_all(&buf)?;
        out.sync_data()?;
        done.insert(hash, result.clone());
        results.push(result);
    }
    Ok(results)
}

/// Plain SER CSV for a single curve.
pub fn write_ser_csv<W: Write>(
    curve: &SerCurve,
    config_hash: &str,
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "{SER_CSV_HEADER}")?;
    curve.write_rows(config_hash, out)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// The point with the median SER, carrying its own confidence half-width.
/// For an even count the upper of the two middle points is returned.
pub fn median_point(points: &[SerPoint]) -> SerPoint {
    let mut v = points.to_vec();
    v.sort_by(|a, b| a.ser.total_cmp(&b.ser));
    v[v.len() / 2]
}

/// Number of adjacent increases in a sequence expected to be non-increasing.
pub fn count_inversions(values: &[f64]) -> usize {
    values.windows(2).filter(|w| w[1] > w[0]).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_base() -> ExperimentConfig {
        let mut c = ExperimentConfig::reference().with_shape(4, 1);
        c.training.samples = 32;
        c.training.batch_size = 16;
        c.training.epochs = 1;
        c.training.calibration_batch = 16;
        c
    }

    #[test]
    fn helpers() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(count_inversions(&[3.0, 2.0, 2.5, 1.0]), 1);
        let p = |ser| SerPoint::from_counts(0.0, (ser * 100.0) as usize, 100);
        assert_eq!(median_point(&[p(0.3), p(0.1), p(0.2)]).ser, 0.2);
    }

    #[test]
    fn spec_expansion() {
        let spec = SweepSpec::parse(
            "kind = \"capacity\"\nseeds = [1, 2]\nlayers = [1, 2]\nsizes = [4, 8]\ntest_snr_db = [0.0]\ntrials = 10\n",
        )
        .unwrap();
        let cells = spec.cells(&tiny_base()).unwrap();
        assert_eq!(cells.len(), 8);
        let hashes: std::collections::BTreeSet<String> =
            cells.iter().map(|c| c.config.hash()).collect();
        assert_eq!(hashes.len(), 8);
        let empty = SweepSpec {
            layers: vec![],
            ..spec.clone()
        };
        assert!(empty.cells(&tiny_base()).is_err());
        assert!(SweepSpec::parse(
            "kind = \"capacity\"\nbogus = 1\nseeds=[1]\ntest_snr_db=[0.0]\ntrials=1"
        )
        .is_err());
        let bad = SweepSpec {
            sizes: vec![6],
            ..spec
        };
        assert!(bad.cells(&tiny_base()).is_err());
    }

    #[test]
    fn single_cell_sweep_matches_direct_run() {
        let base = tiny_base();
        let rows = sweep_capacity(&base, &[1], &[4], &[base.seed], &[0.0], 64).unwrap();
        assert_eq!(rows.len(), 1);
        let direct = run_cell(
            &SweepCell {
                label: rows[0].label.clone(),
                config: base.with_shape(4, 1),
            },
            &[0.0],
            64,
        )
        .unwrap();
        assert_eq!(rows[0], direct);
    }

    #[test]
    fn resume_skips_complete_and_redoes_partial() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.csv");
        let base = tiny_base();
        let cells = capacity_cells(&base, &[1], &[4], &[1, 2]);
        let grid = [-10.0, 0.0];
        let first = run_resumable(&cells, &grid, 32, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1 + 4);

        // drop the last row: cell two becomes partial
        let truncated: Vec<&str> = text.lines().take(4).collect();
        std::fs::write(&path, truncated.join("\n") + "\n").unwrap();
        let done = read_completed(&path, &grid).unwrap();
        assert_eq!(done.len(), 1);
        let second = run_resumable(&cells, &grid, 32, &path).unwrap();
        assert_eq!(first, second);
        assert_eq!(std::fs::read_to_string(&path).unwrap(), text);
    }
}
