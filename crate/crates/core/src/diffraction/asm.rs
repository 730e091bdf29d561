//! Angular spectrum propagation on a zero-padded FFT grid.

use crate::error::{Error, Result};
use crate::field::{ComplexField, Geometry};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::fmt;
use std::io::Write;
use std::sync::Arc;

/// Signed frequency index of DFT bin `bin` on a grid of `p` samples.
///
/// Even `p` yields `-p/2 ..= p/2 - 1`.
pub fn signed_frequency(bin: usize, p: usize) -> i64 {
    if bin < p - p / 2 {
        bin as i64
    } else {
        bin as i64 - p as i64
    }
}

fn bin_of(index: i64, p: usize) -> usize {
    index.rem_euclid(p as i64) as usize
}

/// Padded size per axis for a padding factor.
pub fn padded_len(n: usize, padding: f64) -> usize {
    ((padding * n as f64) - 1e-9).ceil().max(n as f64) as usize
}

/// Sampled transfer function of free-space propagation over a fixed distance.
#[derive(Clone)]
pub struct AsmTransfer {
    n_x: usize,
    n_z: usize,
    p_x: usize,
    p_z: usize,
    distance: f64,
    d_x: f64,
    d_z: f64,
    wavelength: f64,
    /// Natural layout, `bin_z * p_x + bin_x`, FFT bin order.
    h: Vec<Complex64>,
    propagating: Vec<bool>,
}

impl fmt::Debug for AsmTransfer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AsmTransfer")
            .field("n", &(self.n_x, self.n_z))
            .field("padded", &(self.p_x, self.p_z))
            .field("distance", &self.distance)
            .finish()
    }
}

/// Transfer value at frequency `(f_x, f_z)`. Evanescent components decay as
/// `exp(-gamma * distance)` with `gamma = sqrt(k_x^2 + k_z^2 - k^2)`.
fn transfer_value(f_x: f64, f_z: f64, wavelength: f64, distance: f64) -> (Complex64, bool) {
    let k = 2.0 * std::f64::consts::PI / wavelength;
    let radial = (wavelength * f_x).powi(2) + (wavelength * f_z).powi(2);
    if radial <= 1.0 {
        let k_y = k * (1.0 - radial).sqrt();
        (Complex64::from_polar(1.0, k_y * distance), true)
    } else {
        let gamma = k * (radial - 1.0).sqrt();
        (Complex64::new((-gamma * distance).exp(), 0.0), false)
    }
}

impl AsmTransfer {
    pub fn padded(&self) -> (usize, usize) {
        (self.p_x, self.p_z)
    }

    pub fn aperture(&self) -> (usize, usize) {
        (self.n_x, self.n_z)
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn distance(&self) -> f64 {
        self.distance
    }

    /// Range of signed frequency indices along x.
    pub fn x_indices(&self) -> std::ops::RangeInclusive<i64> {
        signed_frequency(self.p_x - self.p_x / 2, self.p_x)
            ..=signed_frequency(self.p_x - self.p_x / 2 - 1, self.p_x)
    }

    pub fn z_indices(&self) -> std::ops::RangeInclusive<i64> {
        signed_frequency(self.p_z - self.p_z / 2, self.p_z)
            ..=signed_frequency(self.p_z - self.p_z / 2 - 1, self.p_z)
    }

    /// Spatial frequency (1/m) of signed index `nbar_x`.
    pub fn f_x(&self, nbar_x: i64) -> f64 {
        nbar_x as f64 / (self.p_x as f64 * self.d_x)
    }

    pub fn f_z(&self, nbar_z: i64) -> f64 {
        nbar_z as f64 / (self.p_z as f64 * self.d_z)
    }

    /// Transfer sample at signed frequency indices (periodic in each index).
    pub fn sample(&self, nbar_x: i64, nbar_z: i64) -> Complex64 {
        self.h[bin_of(nbar_z, self.p_z) * self.p_x + bin_of(nbar_x, self.p_x)]
    }

    pub fn is_propagating(&self, nbar_x: i64, nbar_z: i64) -> bool {
        self.propagating[bin_of(nbar_z, self.p_z) * self.p_x + bin_of(nbar_x, self.p_x)]
    }

    /// Fraction of frequency samples on the propagating disk.
    pub fn propagating_fraction(&self) -> f64 {
        self.propagating.iter().filter(|&&p| p).count() as f64 / self.propagating.len() as f64
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.h
    }
}

/// Samples the transfer function on the padded frequency grid.
pub fn build_asm_transfer(geometry: &Geometry, distance: f64, padding: f64) -> Result<AsmTransfer> {
    if !(padding >= 1.0) || !padding.is_finite() {
        return Err(Error::invalid(
            "padding",
            format!("must be >= 1, got {padding}"),
        ));
    }
    if !(distance > 0.0) {
        return Err(Error::invalid(
            "distance",
            format!("must be positive, got {distance}"),
        ));
    }
    let p_x = padded_len(geometry.n_x, padding);
    let p_z = padded_len(geometry.n_z, padding);
    let mut h = Vec::with_capacity(p_x * p_z);
    let mut propagating = Vec::with_capacity(p_x * p_z);
    for bz in 0..p_z {
        let f_z = signed_frequency(bz, p_z) as f64 / (p_z as f64 * geometry.d_z);
        for bx in 0..p_x {
            let f_x = signed_frequency(bx, p_x) as f64 / (p_x as f64 * geometry.d_x);
            let (value, prop) = transfer_value(f_x, f_z, geometry.wavelength, distance);
            h.push(value);
            propagating.push(prop);
        }
    }
    Ok(AsmTransfer {
        n_x: geometry.n_x,
        n_z: geometry.n_z,
        p_x,
        p_z,
        distance,
        d_x: geometry.d_x,
        d_z: geometry.d_z,
        wavelength: geometry.wavelength,
        h,
        propagating,
    })
}

/// FFT-backed propagation operator built from an [`AsmTransfer`].
///
/// The spectrum is kept x-major between the two passes so the z-axis
/// transforms run on contiguous memory; rows that are known to be zero on
/// input, or discarded on output, are skipped.
#[derive(Clone)]
pub struct AsmPropagator {
    transfer: AsmTransfer,
    /// Transfer in x-major layout, pre-scaled by `1 / (P_x P_z)`.
    h_t: Vec<Complex64>,
    fwd_x: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    fwd_z: Arc<dyn Fft<f64>>,
    inv_z: Arc<dyn Fft<f64>>,
    off_x: usize,
    off_z: usize,
}

impl fmt::Debug for AsmPropagator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AsmPropagator")
            .field("transfer", &self.transfer)
            .finish()
    }
}

impl AsmPropagator {
    pub fn new(transfer: AsmTransfer) -> Self {
        let (p_x, p_z) = (transfer.p_x, transfer.p_z);
        let mut planner = FftPlanner::new();
        let scale = 1.0 / (p_x * p_z) as f64;
        let mut h_t = vec![Complex64::new(0.0, 0.0); p_x * p_z];
        for bz in 0..p_z {
            for bx in 0..p_x {
                h_t[bx * p_z + bz] = transfer.h[bz * p_x + bx] * scale;
            }
        }
        AsmPropagator {
            fwd_x: planner.plan_fft_forward(p_x),
            inv_x: planner.plan_fft_inverse(p_x),
            fwd_z: planner.plan_fft_forward(p_z),
            inv_z: planner.plan_fft_inverse(p_z),
            off_x: (p_x - transfer.n_x) / 2,
            off_z: (p_z - transfer.n_z) / 2,
            h_t,
            transfer,
        }
    }

    pub fn transfer(&self) -> &AsmTransfer {
        &self.transfer
    }

    pub fn apply_into(&self, src: &[Complex64], dst: &mut [Complex64]) {
        self.run(src, dst, false);
    }

    /// Adjoint operator: identical pipeline with the conjugated transfer.
    pub fn apply_adjoint_into(&self, src: &[Complex64], dst: &mut [Complex64]) {
        self.run(src, dst, true);
    }

    fn run(&self, src: &[Complex64], dst: &mut [Complex64], adjoint: bool) {
        let t = &self.transfer;
        let (n_x, n_z, p_x, p_z) = (t.n_x, t.n_z, t.p_x, t.p_z);
        debug_assert_eq!(src.len(), n_x * n_z);
        let zero = Complex64::new(0.0, 0.0);
        let scratch_len = [&self.fwd_x, &self.inv_x, &self.fwd_z, &self.inv_z]
            .iter()
            .map(|f| f.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        let mut scratch = vec![zero; scratch_len];

        // Only the n_z rows that carry the aperture are nonzero.
        let mut rows = vec![zero; n_z * p_x];
        for z in 0..n_z {
            rows[z * p_x + self.off_x..z * p_x + self.off_x + n_x]
                .copy_from_slice(&src[z * n_x..(z + 1) * n_x]);
        }
        self.fwd_x.process_with_scratch(&mut rows, &mut scratch);

        let mut cols = vec![zero; p_x * p_z];
        for z in 0..n_z {
            let row = &rows[z * p_x..(z + 1) * p_x];
            for (x, &v) in row.iter().enumerate() {
                cols[x * p_z + self.off_z + z] = v;
            }
        }
        self.fwd_z.process_with_scratch(&mut cols, &mut scratch);
        if adjoint {
            for (c, h) in cols.iter_mut().zip(&self.h_t) {
                *c *= h.conj();
            }
        } else {
            for (c, h) in cols.iter_mut().zip(&self.h_t) {
                *c *= h;
            }
        }
        self.inv_z.process_with_scratch(&mut cols, &mut scratch);

        for z in 0..n_z {
            let row = &mut rows[z * p_x..(z + 1) * p_x];
            for (x, v) in row.iter_mut().enumerate() {
                *v = cols[x * p_z + self.off_z + z];
            }
        }
        self.inv_x.process_with_scratch(&mut rows, &mut scratch);
        for z in 0..n_z {
            dst[z * n_x..(z + 1) * n_x]
                .copy_from_slice(&rows[z * p_x + self.off_x..z * p_x + self.off_x + n_x]);
        }
    }
}

/// Zero-pad, transform, filter by the transfer function, transform back and
/// crop the aperture window.
pub fn propagate_asm(src: &ComplexField, transfer: &AsmTransfer) -> Result<ComplexField> {
    if (src.n_x(), src.n_z()) != transfer.aperture() {
        return Err(Error::mismatch(
            format!("{:?}", transfer.aperture()),
            format!("{:?}", (src.n_x(), src.n_z())),
        ));
    }
    let propagator = AsmPropagator::new(transfer.clone());
    let mut dst = vec![Complex64::new(0.0, 0.0); src.len()];
    propagator.apply_into(src.as_slice(), &mut dst);
    ComplexField::from_vec(src.n_x(), src.n_z(), dst)
}

/// `(nbar_x, |h(nbar_x, 0)|)` along the `f_z = 0` axis.
pub fn spectrum_passband_plot(transfer: &AsmTransfer) -> Vec<(i64, f64)> {
    transfer
        .x_indices()
        .map(|nbar_x| (nbar_x, transfer.sample(nbar_x, 0).norm()))
        .collect()
}

/// Writes the passband slice as `index,magnitude` CSV.
pub fn write_passband_csv<W: Write>(rows: &[(i64, f64)], mut out: W) -> std::io::Result<()> {
    writeln!(out, "index,magnitude")?;
    for (index, magnitude) in rows {
        writeln!(out, "{index},{magnitude:.17e}")?;
    }
    Ok(())
}
