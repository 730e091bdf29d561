//! Geometry, field and symbol types shared by the whole pipeline.
//!
//! Grids are `n_x` columns by `n_z` rows. Flat storage uses
//! `n = n_z * N_x + n_x`, i.e. x runs fastest.

use crate::error::{Error, Result};
use num_complex::Complex64;
use std::f64::consts::PI;

/// Uniform planar array shared by the feed array, every metasurface layer and
/// the detector array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub n_x: usize,
    pub n_z: usize,
    /// Element pitch along x (m).
    pub d_x: f64,
    /// Element pitch along z (m).
    pub d_z: f64,
    /// Spacing between adjacent layers (m).
    pub d_layer: f64,
    /// Carrier wavelength (m).
    pub wavelength: f64,
    pub l_tx: usize,
    pub l_rx: usize,
}

impl Geometry {
    pub fn new(
        n_x: usize,
        n_z: usize,
        d_x: f64,
        d_z: f64,
        d_layer: f64,
        wavelength: f64,
        l_tx: usize,
        l_rx: usize,
    ) -> Result<Self> {
        let geometry = Geometry {
            n_x,
            n_z,
            d_x,
            d_z,
            d_layer,
            wavelength,
            l_tx,
            l_rx,
        };
        geometry.validate()?;
        Ok(geometry)
    }

    /// 28 GHz link, 16x16 elements at 0.125 wavelength pitch, 1 mm layer
    /// spacing, four layers per side.
    pub fn reference() -> Self {
        let wavelength = 10.7e-3;
        Geometry {
            n_x: 16,
            n_z: 16,
            d_x: 0.125 * wavelength,
            d_z: 0.125 * wavelength,
            d_layer: 1e-3,
            wavelength,
            l_tx: 4,
            l_rx: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_x == 0 {
            return Err(Error::invalid("n_x", "must be at least 1"));
        }
        if self.n_z == 0 {
            return Err(Error::invalid("n_z", "must be at least 1"));
        }
        for (name, value) in [
            ("d_x", self.d_x),
            ("d_z", self.d_z),
            ("d_layer", self.d_layer),
            ("wavelength", self.wavelength),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::invalid(
                    name,
                    format!("must be positive, got {value}"),
                ));
            }
        }
        if self.l_tx == 0 {
            return Err(Error::invalid("l_tx", "must be at least 1"));
        }
        if self.l_rx == 0 {
            return Err(Error::invalid("l_rx", "must be at least 1"));
        }
        Ok(())
    }

    /// Total element count `N = N_x * N_z`.
    pub fn len(&self) -> usize {
        self.n_x * self.n_z
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Element area `d_x * d_z`.
    pub fn area(&self) -> f64 {
        self.d_x * self.d_z
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    pub fn with_size(mut self, n_x: usize, n_z: usize) -> Self {
        self.n_x = n_x;
        self.n_z = n_z;
        self
    }

    pub fn with_layers(mut self, l_tx: usize, l_rx: usize) -> Self {
        self.l_tx = l_tx;
        self.l_rx = l_rx;
        self
    }

    pub fn flat_index(&self, x: usize, z: usize) -> Result<usize> {
        flat_index(x, z, self)
    }

    pub fn grid_index(&self, n: usize) -> Result<(usize, usize)> {
        grid_index(n, self)
    }
}

/// Flat index `z * N_x + x` of grid cell `(x, z)`.
pub fn flat_index(x: usize, z: usize, geometry: &Geometry) -> Result<usize> {
    if x >= geometry.n_x || z >= geometry.n_z {
        return Err(Error::OutOfBounds {
            x,
            z,
            n_x: geometry.n_x,
            n_z: geometry.n_z,
        });
    }
    Ok(z * geometry.n_x + x)
}

/// Inverse of [`flat_index`].
pub fn grid_index(n: usize, geometry: &Geometry) -> Result<(usize, usize)> {
    if n >= geometry.len() {
        return Err(Error::FlatOutOfBounds {
            index: n,
            len: geometry.len(),
        });
    }
    Ok((n % geometry.n_x, n / geometry.n_x))
}

/// Complex amplitudes sampled on one plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    n_x: usize,
    n_z: usize,
    data: Vec<Complex64>,
}

impl ComplexField {
    pub fn zeros(n_x: usize, n_z: usize) -> Self {
        ComplexField {
            n_x,
            n_z,
            data: vec![Complex64::new(0.0, 0.0); n_x * n_z],
        }
    }

    pub fn for_geometry(geometry: &Geometry) -> Self {
        Self::zeros(geometry.n_x, geometry.n_z)
    }

    pub fn from_vec(n_x: usize, n_z: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != n_x * n_z {
            return Err(Error::mismatch(n_x * n_z, data.len()));
        }
        Ok(ComplexField { n_x, n_z, data })
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_z(&self) -> usize {
        self.n_z
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    pub fn get(&self, x: usize, z: usize) -> Complex64 {
        self.data[z * self.n_x + x]
    }

    pub fn set(&mut self, x: usize, z: usize, value: Complex64) {
        self.data[z * self.n_x + x] = value;
    }

    /// Sum of squared magnitudes.
    pub fn power(&self) -> f64 {
        field_power(self)
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn scale(&mut self, factor: Complex64) {
        self.data.iter_mut().for_each(|c| *c *= factor);
    }

    pub fn matches(&self, geometry: &Geometry) -> Result<()> {
        if self.n_x != geometry.n_x || self.n_z != geometry.n_z {
            return Err(Error::mismatch(
                format!("{}x{}", geometry.n_x, geometry.n_z),
                format!("{}x{}", self.n_x, self.n_z),
            ));
        }
        Ok(())
    }
}

impl std::ops::Index<usize> for ComplexField {
    type Output = Complex64;

    fn index(&self, n: usize) -> &Complex64 {
        &self.data[n]
    }
}

impl std::ops::IndexMut<usize> for ComplexField {
    fn index_mut(&mut self, n: usize) -> &mut Complex64 {
        &mut self.data[n]
    }
}

pub fn field_power(field: &ComplexField) -> f64 {
    field.data.iter().map(|c| c.norm_sqr()).sum()
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_phase(phase: f64) -> f64 {
    let mut wrapped = phase.rem_euclid(2.0 * PI);
    if wrapped > PI {
        wrapped -= 2.0 * PI;
    }
    wrapped
}

/// Trainable phases of one metasurface layer. Element `n` transmits with
/// coefficient `exp(j * phase[n])`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseLayer {
    n_x: usize,
    n_z: usize,
    phases: Vec<f64>,
}

impl PhaseLayer {
    pub fn zeros(n_x: usize, n_z: usize) -> Self {
        PhaseLayer {
            n_x,
            n_z,
            phases: vec![0.0; n_x * n_z],
        }
    }

    pub fn from_phases(n_x: usize, n_z: usize, phases: Vec<f64>) -> Result<Self> {
        if phases.len() != n_x * n_z {
            return Err(Error::mismatch(n_x * n_z, phases.len()));
        }
        Ok(PhaseLayer { n_x, n_z, phases })
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_z(&self) -> usize {
        self.n_z
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn phases_mut(&mut self) -> &mut [f64] {
        &mut self.phases
    }

    pub fn coefficient(&self, n: usize) -> Complex64 {
        Complex64::from_polar(1.0, self.phases[n])
    }

    pub fn coefficients(&self) -> Vec<Complex64> {
        self.phases
            .iter()
            .map(|&p| Complex64::from_polar(1.0, p))
            .collect()
    }

    /// Multiplies `field` elementwise by the layer's transmission coefficients.
    pub fn apply(&self, field: &mut [Complex64]) {
        debug_assert_eq!(field.len(), self.phases.len());
        for (value, &phase) in field.iter_mut().zip(&self.phases) {
            *value *= Complex64::from_polar(1.0, phase);
        }
    }

    /// Applies the conjugate coefficients (adjoint of [`PhaseLayer::apply`]).
    pub fn apply_conj(&self, field: &mut [Complex64]) {
        for (value, &phase) in field.iter_mut().zip(&self.phases) {
            *value *= Complex64::from_polar(1.0, -phase);
        }
    }
}

/// Ordered phase layers of one diffractive stack. Index 0 is layer 1.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    pub layers: Vec<PhaseLayer>,
}

impl LayerStack {
    pub fn zeros(count: usize, n_x: usize, n_z: usize) -> Self {
        LayerStack {
            layers: (0..count).map(|_| PhaseLayer::zeros(n_x, n_z)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(PhaseLayer::len).sum()
    }
}

/// Subarray on-off modulation of order `M = M_x * M_z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModulationScheme {
    pub m_x: usize,
    pub m_z: usize,
    pub sub_x: usize,
    pub sub_z: usize,
}

impl ModulationScheme {
    pub fn new(m_x: usize, m_z: usize, geometry: &Geometry) -> Result<Self> {
        if m_x == 0 || geometry.n_x % m_x != 0 {
            return Err(Error::invalid(
                "m_x",
                format!("n_x = {} is not divisible by m_x = {m_x}", geometry.n_x),
            ));
        }
        if m_z == 0 || geometry.n_z % m_z != 0 {
            return Err(Error::invalid(
                "m_z",
                format!("n_z = {} is not divisible by m_z = {m_z}", geometry.n_z),
            ));
        }
        let order = m_x * m_z;
        if !order.is_power_of_two() || order < 2 {
            return Err(Error::invalid(
                "m_x",
                format!("modulation order {order} must be a power of two and at least 2"),
            ));
        }
        Ok(ModulationScheme {
            m_x,
            m_z,
            sub_x: geometry.n_x / m_x,
            sub_z: geometry.n_z / m_z,
        })
    }

    /// Number of symbols `M`.
    pub fn order(&self) -> usize {
        self.m_x * self.m_z
    }

    pub fn bits_per_symbol(&self) -> u32 {
        self.order().trailing_zeros()
    }

    /// Elements per subarray.
    pub fn subarray_len(&self) -> usize {
        self.sub_x * self.sub_z
    }

    /// `(m_x, m_z)` block coordinates of symbol `m = m_z * M_x + m_x`.
    pub fn block(&self, symbol: usize) -> (usize, usize) {
        (symbol % self.m_x, symbol / self.m_x)
    }

    pub fn check_symbol(&self, symbol: usize) -> Result<()> {
        if symbol >= self.order() {
            return Err(Error::InvalidSymbol {
                symbol,
                order: self.order(),
            });
        }
        Ok(())
    }

    /// Symbol whose subarray contains grid cell `(x, z)`.
    pub fn symbol_of_cell(&self, x: usize, z: usize) -> usize {
        (z / self.sub_z) * self.m_x + x / self.sub_x
    }

    /// Per-cell symbol label for a grid of `n_x` columns.
    pub fn cell_labels(&self, n_x: usize, n_z: usize) -> Vec<usize> {
        let mut labels = Vec::with_capacity(n_x * n_z);
        for z in 0..n_z {
            for x in 0..n_x {
                labels.push(self.symbol_of_cell(x, z));
            }
        }
        labels
    }
}

/// A batch of symbol indices (0-based).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolBatch {
    pub symbols: Vec<usize>,
    pub order: usize,
}

impl SymbolBatch {
    pub fn new(symbols: Vec<usize>, order: usize) -> Result<Self> {
        if let Some(&bad) = symbols.iter().find(|&&s| s >= order) {
            return Err(Error::InvalidSymbol { symbol: bad, order });
        }
        Ok(SymbolBatch { symbols, order })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn one_hot(&self, i: usize) -> Vec<f64> {
        let mut q = vec![0.0; self.order];
        q[self.symbols[i]] = 1.0;
        q
    }

    /// The `M_x x M_z` one-hot matrix of sample `i`, flattened with m_x fastest.
    pub fn block_matrix(&self, i: usize, scheme: &ModulationScheme) -> Vec<f64> {
        let (bx, bz) = scheme.block(self.symbols[i]);
        let mut q = vec![0.0; scheme.order()];
        q[bz * scheme.m_x + bx] = 1.0;
        q
    }

    /// Subarray indicator of sample `i` on the full element grid.
    pub fn mask(&self, i: usize, scheme: &ModulationScheme, geometry: &Geometry) -> Vec<bool> {
        let symbol = self.symbols[i];
        scheme
            .cell_labels(geometry.n_x, geometry.n_z)
            .into_iter()
            .map(|label| label == symbol)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n_x: usize, n_z: usize) -> Geometry {
        Geometry::reference().with_size(n_x, n_z)
    }

    #[test]
    fn flat_index_examples() {
        let g = grid(8, 8);
        assert_eq!(flat_index(0, 0, &g).unwrap(), 0);
        assert_eq!(flat_index(3, 2, &g).unwrap(), 19);
        assert!(matches!(
            flat_index(8, 0, &g),
            Err(Error::OutOfBounds { .. })
        ));
        assert!(grid_index(64, &g).is_err());
    }

    #[test]
    fn index_bijection_exhaustive() {
        for n_x in 1..=64 {
            for n_z in [1, 2, 7, 16, 33, 64] {
                let g = grid(n_x, n_z);
                let mut seen = vec![false; g.len()];
                for z in 0..n_z {
                    for x in 0..n_x {
                        let n = flat_index(x, z, &g).unwrap();
                        assert!(!seen[n]);
                        seen[n] = true;
                        assert_eq!(grid_index(n, &g).unwrap(), (x, z));
                    }
                }
            }
        }
    }

    #[test]
    fn power_examples() {
        assert_eq!(ComplexField::zeros(4, 4).power(), 0.0);
        let mut f = ComplexField::zeros(4, 4);
        f.set(1, 2, Complex64::new(0.0, 2.0));
        assert_eq!(f.power(), 4.0);
        let f = ComplexField::from_vec(4, 4, vec![Complex64::new(0.5, 0.0); 16]).unwrap();
        assert!((f.power() - 4.0).abs() < 1e-15);
    }

    #[test]
    fn geometry_rejects_bad_values() {
        assert!(Geometry::new(0, 4, 1.0, 1.0, 1.0, 1.0, 1, 1).is_err());
        assert!(Geometry::new(4, 4, -1.0, 1.0, 1.0, 1.0, 1, 1).is_err());
        assert!(Geometry::new(4, 4, 1.0, 1.0, 1.0, 1.0, 0, 1).is_err());
        let g = Geometry::new(4, 2, 2.0, 3.0, 1.0, 1.0, 1, 1).unwrap();
        assert_eq!(g.area(), 6.0);
    }

    #[test]
    fn modulation_divisibility() {
        let g = grid(10, 8);
        assert!(ModulationScheme::new(4, 4, &g).is_err());
        assert!(ModulationScheme::new(5, 4, &grid(10, 8)).is_err()); // M = 20
        let s = ModulationScheme::new(4, 4, &grid(8, 8)).unwrap();
        assert_eq!(
            (s.order(), s.bits_per_symbol(), s.subarray_len()),
            (16, 4, 4)
        );
        assert_eq!(s.block(6), (2, 1));
        assert_eq!(s.symbol_of_cell(5, 2), 6);
    }

    #[test]
    fn one_hot_matches_block_matrix() {
        let g = grid(8, 8);
        let s = ModulationScheme::new(4, 4, &g).unwrap();
        let batch = SymbolBatch::new((0..16).collect(), 16).unwrap();
        for i in 0..16 {
            let q = batch.one_hot(i);
            assert_eq!(q.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(q, batch.block_matrix(i, &s));
            assert_eq!(batch.mask(i, &s, &g).iter().filter(|&&b| b).count(), 4);
        }
        assert!(SymbolBatch::new(vec![16], 16).is_err());
    }

    #[test]
    fn unit_modulus_and_wrap() {
        let layer = PhaseLayer::from_phases(2, 2, vec![0.3, -2.9, 7.0, 1e6]).unwrap();
        for c in layer.coefficients() {
            assert!((c.norm() - 1.0).abs() <= 1e-12);
        }
        for p in [-10.0, -PI, 0.0, PI, 3.5, 100.0] {
            let w = wrap_phase(p);
            assert!(w > -PI && w <= PI);
            assert!(
                ((w - p) / (2.0 * PI))
                    .rem_euclid(1.0)
                    .min(1.0 - ((w - p) / (2.0 * PI)).rem_euclid(1.0))
                    < 1e-9
            );
        }
        assert_eq!(wrap_phase(-PI), PI);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn coefficients_have_unit_modulus(phases in prop::collection::vec(-1e4..1e4f64, 16)) {
                let layer = PhaseLayer::from_phases(4, 4, phases).unwrap();
                for c in layer.coefficients() {
                    prop_assert!((c.norm() - 1.0).abs() <= 1e-12);
                }
            }

            #[test]
            fn wrapped_phase_is_in_range(p in -1e6..1e6f64) {
                let w = wrap_phase(p);
                prop_assert!(w > -PI && w <= PI);
                prop_assert!((Complex64::from_polar(1.0, w) - Complex64::from_polar(1.0, p)).norm() < 1e-9);
            }

            #[test]
            fn index_round_trip(n_x in 1usize..=64, n_z in 1usize..=64, seed in any::<u64>()) {
                let g = grid(n_x, n_z);
                let n = (seed % (n_x * n_z) as u64) as usize;
                let (x, z) = grid_index(n, &g).unwrap();
                prop_assert_eq!((x, z), (n % n_x, n / n_x));
                prop_assert_eq!(flat_index(x, z, &g).unwrap(), n);
            }
        }
    }
}
