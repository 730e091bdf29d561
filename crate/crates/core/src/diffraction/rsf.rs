//! Dense Rayleigh-Sommerfeld propagation between parallel element grids.

use crate::error::{Error, Result};
use crate::field::{ComplexField, Geometry};
use num_complex::Complex64;
use std::f64::consts::PI;

/// Element-to-element coefficient for an inter-layer hop at the geometry's
/// layer spacing, between cells `offset_x`, `offset_z` apart.
pub fn rsf_coefficient(offset_x: i64, offset_z: i64, geometry: &Geometry) -> Complex64 {
    rsf_coefficient_at(offset_x, offset_z, geometry, geometry.d_layer)
}

/// Same as [`rsf_coefficient`] for an arbitrary propagation distance.
pub fn rsf_coefficient_at(
    offset_x: i64,
    offset_z: i64,
    geometry: &Geometry,
    distance: f64,
) -> Complex64 {
    let dx = offset_x as f64 * geometry.d_x;
    let dz = offset_z as f64 * geometry.d_z;
    let r2 = distance * distance + dx * dx + dz * dz;
    let r = r2.sqrt();
    let lambda = geometry.wavelength;
    // 1/(j lambda) = -j/lambda
    let obliquity = Complex64::new(1.0 / (2.0 * PI * r), -1.0 / lambda);
    obliquity
        * (geometry.area() * distance / r2)
        * Complex64::from_polar(1.0, 2.0 * PI * r / lambda)
}

/// Coefficients for every offset between two `n_x x n_z` grids. The full
/// propagation matrix is block Toeplitz, so only `(2N_x-1)(2N_z-1)` distinct
/// values exist.
#[derive(Debug, Clone)]
pub struct RsfKernel {
    n_x: usize,
    n_z: usize,
    distance: f64,
    table: Vec<Complex64>,
}

impl RsfKernel {
    pub fn new(geometry: &Geometry, distance: f64) -> Result<Self> {
        if !(distance > 0.0) {
            return Err(Error::invalid("distance", "must be positive"));
        }
        let (n_x, n_z) = (geometry.n_x, geometry.n_z);
        let width = 2 * n_x - 1;
        let mut table = Vec::with_capacity(width * (2 * n_z - 1));
        for oz in -(n_z as i64 - 1)..=(n_z as i64 - 1) {
            for ox in -(n_x as i64 - 1)..=(n_x as i64 - 1) {
                table.push(rsf_coefficient_at(ox, oz, geometry, distance));
            }
        }
        Ok(RsfKernel {
            n_x,
            n_z,
            distance,
            table,
        })
    }

    pub fn distance(&self) -> f64 {
        self.distance
    }

    /// Coefficient coupling a source cell to a destination cell `offset` away
    /// (destination minus source).
    pub fn coefficient(&self, offset_x: i64, offset_z: i64) -> Complex64 {
        let ix = (offset_x + self.n_x as i64 - 1) as usize;
        let iz = (offset_z + self.n_z as i64 - 1) as usize;
        self.table[iz * (2 * self.n_x - 1) + ix]
    }

    /// Row-major `N x N` matrix with entry `[dst][src]`.
    pub fn dense(&self) -> Vec<Complex64> {
        let n = self.n_x * self.n_z;
        let mut matrix = Vec::with_capacity(n * n);
        for dz in 0..self.n_z {
            for dx in 0..self.n_x {
                for sz in 0..self.n_z {
                    for sx in 0..self.n_x {
                        matrix.push(self.coefficient(dx as i64 - sx as i64, dz as i64 - sz as i64));
                    }
                }
            }
        }
        matrix
    }

    /// Direct `O(N^2)` summation.
    pub fn apply(&self, src: &[Complex64]) -> Vec<Complex64> {
        let (n_x, n_z) = (self.n_x, self.n_z);
        let mut dst = vec![Complex64::new(0.0, 0.0); n_x * n_z];
        for dz in 0..n_z {
            for dx in 0..n_x {
                let mut acc = Complex64::new(0.0, 0.0);
                for sz in 0..n_z {
                    let row = &src[sz * n_x..(sz + 1) * n_x];
                    for (sx, &value) in row.iter().enumerate() {
                        acc +=
                            self.coefficient(dx as i64 - sx as i64, dz as i64 - sz as i64) * value;
                    }
                }
                dst[dz * n_x + dx] = acc;
            }
        }
        dst
    }
}

/// Dense summation over every source element.
pub fn propagate_rsf(src: &ComplexField, geometry: &Geometry) -> Result<ComplexField> {
    src.matches(geometry)?;
    let kernel = RsfKernel::new(geometry, geometry.d_layer)?;
    ComplexField::from_vec(geometry.n_x, geometry.n_z, kernel.apply(src.as_slice()))
}

/// Precomputed dense propagation matrix.
#[derive(Debug, Clone)]
pub struct DenseRsf {
    n: usize,
    matrix: Vec<Complex64>,
}

impl DenseRsf {
    pub fn new(geometry: &Geometry, distance: f64) -> Result<Self> {
        let kernel = RsfKernel::new(geometry, distance)?;
        Ok(DenseRsf {
            n: geometry.len(),
            matrix: kernel.dense(),
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn apply_into(&self, src: &[Complex64], dst: &mut [Complex64]) {
        for (row, out) in self.matrix.chunks_exact(self.n).zip(dst.iter_mut()) {
            *out = row.iter().zip(src).map(|(w, s)| w * s).sum();
        }
    }

    /// Conjugate-transpose application.
    pub fn apply_adjoint_into(&self, src: &[Complex64], dst: &mut [Complex64]) {
        dst.iter_mut().for_each(|d| *d = Complex64::new(0.0, 0.0));
        for (row, &s) in self.matrix.chunks_exact(self.n).zip(src) {
            for (d, w) in dst.iter_mut().zip(row) {
                *d += w.conj() * s;
            }
        }
    }
}
