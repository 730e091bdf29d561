//! Timing of one propagation hop with the dense and FFT engines.
//!
//! Setup (kernel matrix or transfer function plus FFT plans) is timed once and
//! reported separately from the per-propagation times. Every timed instance is
//! also checked for agreement between the two engines.

use crate::channel::complex_gaussian;
use crate::diffraction::{Engine, Propagator};
use crate::error::{Error, Result};
use crate::field::Geometry;
use crate::rng::{RngSeed, Stream};
use num_complex::Complex64;
use statrs::statistics::{Data, OrderStatistics};
use std::io::Write;
use std::time::Instant;

/// Discarded iterations before timing starts.
pub const WARMUP: usize = 3;
pub const MIN_REPS: usize = 30;

/// Largest accepted relative L2 gap between the engines on a timed instance.
/// At the reference spacing the layer gap is shorter than the element pitch and
/// the two discretizations differ by about 0.2 for any padding of 2 or more
/// (0.41 at 8x8 without padding). The check catches layout and scaling bugs,
/// which produce gaps of order 1.
pub const ENGINE_TOLERANCE: f64 = 0.5;

pub const BENCH_CSV_HEADER: &str = "n,engine,median_ns,iqr_ns,setup_ns,padding";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    /// Side length; the grid is `n x n`.
    pub n: usize,
    pub engine: Engine,
    pub median_ns: f64,
    pub iqr_ns: f64,
    pub setup_ns: f64,
    pub padding: f64,
    pub reps: usize,
    /// Worst engine gap seen over the timed instances of this size.
    pub max_relative_error: f64,
}

impl BenchRecord {
    pub fn elements(&self) -> usize {
        self.n * self.n
    }
}

fn engine_tag(engine: Engine) -> &'static str {
    match engine {
        Engine::Asm => "asm",
        Engine::Rsf => "rsf",
    }
}

pub fn relative_l2(actual: &[Complex64], reference: &[Complex64]) -> f64 {
    let num: f64 = actual
        .iter()
        .zip(reference)
        .map(|(a, r)| (a - r).norm_sqr())
        .sum();
    let den: f64 = reference.iter().map(|r| r.norm_sqr()).sum();
    (num / den).sqrt()
}

fn nanos(start: Instant) -> f64 {
    start.elapsed().as_nanos() as f64
}

fn summarize(mut samples: Vec<f64>) -> (f64, f64) {
    let mut data = Data::new(samples.as_mut_slice());
    let iqr = data.upper_quartile() - data.lower_quartile();
    (data.median(), iqr)
}

/// Times both engines on `reps` identical random fields per size, using the
/// reference geometry resized to `n x n`. Fails only when an instance breaks
/// [`ENGINE_TOLERANCE`].
pub fn bench_propagation(sizes: &[usize], padding: f64, reps: usize) -> Result<Vec<BenchRecord>> {
    bench_with_geometry(
        &Geometry::reference(),
        sizes,
        padding,
        reps,
        ENGINE_TOLERANCE,
    )
}

pub fn bench_with_geometry(
    base: &Geometry,
    sizes: &[usize],
    padding: f64,
    reps: usize,
    tolerance: f64,
) -> Result<Vec<BenchRecord>> {
    if sizes.is_empty() || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(
            "sizes",
            "must be non-empty and strictly ascending",
        ));
    }
    if reps < MIN_REPS {
        return Err(Error::invalid(
            "reps",
            format!("need at least {MIN_REPS} repetitions"),
        ));
    }
    let seed = RngSeed(0xBE4C);
    let mut records = Vec::with_capacity(2 * sizes.len());
    for &n in sizes {
        let g = base.with_size(n, n);
        let start = Instant::now();
        let asm = Propagator::for_geometry(&g, Engine::Asm, padding)?;
        let asm_setup = nanos(start);
        let start = Instant::now();
        let rsf = Propagator::for_geometry(&g, Engine::Rsf, padding)?;
        let rsf_setup = nanos(start);

        let len = g.len();
        let mut rng = seed.rng(Stream::Data, n as u64);
        let fields: Vec<Vec<Complex64>> = (0..WARMUP + reps)
            .map(|_| (0..len).map(|_| complex_gaussian(&mut rng)).collect())
            .collect();
        let mut out_asm = vec![Complex64::new(0.0, 0.0); len];
        let mut out_rsf = out_asm.clone();
        let mut t_asm = Vec::with_capacity(reps);
        let mut t_rsf = Vec::with_capacity(reps);
        let mut worst = 0.0f64;
        for (i, field) in fields.iter().enumerate() {
            let start = Instant::now();
            asm.apply_into(field, &mut out_asm);
            let ta = nanos(start);
            let start = Instant::now();
            rsf.apply_into(field, &mut out_rsf);
            let tr = nanos(start);
            if i < WARMUP {
                continue;
            }
            t_asm.push(ta);
            t_rsf.push(tr);
            let err = relative_l2(&out_asm, &out_rsf);
            if !(err <= tolerance) {
                return Err(Error::EngineMismatch {
                    n,
                    error: err,
                    tolerance,
                });
            }
            worst = worst.max(err);
        }
        for (engine, times, setup) in [
            (Engine::Asm, t_asm, asm_setup),
            (Engine::Rsf, t_rsf, rsf_setup),
        ] {
            let (median_ns, iqr_ns) = summarize(times);
            records.push(BenchRecord {
                n,
                engine,
                median_ns,
                iqr_ns,
                setup_ns: setup,
                padding,
                reps,
                max_relative_error: worst,
            });
        }
    }
    Ok(records)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaling {
    /// Slope of median time against element count `n^2`.
    pub rsf_slope: f64,
    pub asm_slope: f64,
    /// RSF median over ASM median at the largest size.
    pub speedup_at_largest: f64,
}

pub const RSF_SLOPE_RANGE: (f64, f64) = (1.7, 2.3);
pub const ASM_SLOPE_RANGE: (f64, f64) = (0.8, 1.5);

impl Scaling {
    pub fn from_records(records: &[BenchRecord]) -> Option<Scaling> {
        let series = |engine: Engine| -> Vec<(f64, f64)> {
            records
                .iter()
                .filter(|r| r.engine == engine)
                .map(|r| (r.elements() as f64, r.median_ns))
                .collect()
        };
        let (asm, rsf) = (series(Engine::Asm), series(Engine::Rsf));
        if asm.len() < 2 || rsf.len() < 2 {
            return None;
        }
        Some(Scaling {
            rsf_slope: loglog_slope(&rsf),
            asm_slope: loglog_slope(&asm),
            speedup_at_largest: rsf.last()?.1 / asm.last()?.1,
        })
    }

    pub fn slopes_in_range(&self) -> bool {
        let within = |v: f64, (lo, hi): (f64, f64)| (lo..=hi).contains(&v);
        within(self.rsf_slope, RSF_SLOPE_RANGE) && within(self.asm_slope, ASM_SLOPE_RANGE)
    }

    /// Timing drift is a warning, never an error.
    pub fn warn_if_off(&self) {
        if !self.slopes_in_range() {
            log::warn!(
                "scaling off target: rsf slope {:.2} (want {:?}), asm slope {:.2} (want {:?})",
                self.rsf_slope,
                RSF_SLOPE_RANGE,
                self.asm_slope,
                ASM_SLOPE_RANGE
            );
        }
    }
}

pub fn write_bench_csv<W: Write>(records: &[BenchRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{BENCH_CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.n,
            engine_tag(r.engine),
            r.median_ns,
            r.iqr_ns,
            r.setup_ns,
            r.padding
        )?;
    }
    Ok(())
}
