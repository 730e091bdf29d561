//! Layer-to-layer free-space propagation.
//!
//! Two engines implement the same linear operator: a dense Rayleigh-Sommerfeld
//! summation and the FFT-based angular spectrum method. Both expose an adjoint
//! so gradients can be pushed back through a hop without forming matrices.

mod asm;
mod rsf;

pub use asm::{
    build_asm_transfer, padded_len, propagate_asm, signed_frequency, spectrum_passband_plot,
    write_passband_csv, AsmPropagator, AsmTransfer,
};
pub use rsf::{propagate_rsf, rsf_coefficient, rsf_coefficient_at, DenseRsf, RsfKernel};

use crate::error::{Error, Result};
use crate::field::{ComplexField, Geometry, LayerStack};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Default zero-padding factor per axis.
pub const DEFAULT_PADDING: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Asm,
    Rsf,
}

impl std::str::FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "asm" => Ok(Engine::Asm),
            "rsf" => Ok(Engine::Rsf),
            other => Err(Error::invalid(
                "engine",
                format!("unknown engine `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone)]
enum Operator {
    Dense(DenseRsf),
    Asm(AsmPropagator),
}

/// One inter-layer hop, shared by every hop of both stacks.
#[derive(Debug, Clone)]
pub struct Propagator {
    engine: Engine,
    geometry: Geometry,
    distance: f64,
    padding: f64,
    op: Operator,
}

impl Propagator {
    pub fn new(geometry: &Geometry, engine: Engine, distance: f64, padding: f64) -> Result<Self> {
        geometry.validate()?;
        let op = match engine {
            Engine::Rsf => Operator::Dense(DenseRsf::new(geometry, distance)?),
            Engine::Asm => Operator::Asm(AsmPropagator::new(build_asm_transfer(
                geometry, distance, padding,
            )?)),
        };
        Ok(Propagator {
            engine,
            geometry: *geometry,
            distance,
            padding,
            op,
        })
    }

    /// Propagator over the geometry's layer spacing.
    pub fn for_geometry(geometry: &Geometry, engine: Engine, padding: f64) -> Result<Self> {
        Self::new(geometry, engine, geometry.d_layer, padding)
    }

    pub fn engine(&self) -> Engine {
        self.engine
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn distance(&self) -> f64 {
        self.distance
    }

    pub fn padding(&self) -> f64 {
        self.padding
    }

    pub fn len(&self) -> usize {
        self.geometry.len()
    }

    pub fn is_empty(&self) -> bool {
        self.geometry.is_empty()
    }

    pub fn apply_into(&self, src: &[Complex64], dst: &mut [Complex64]) {
        match &self.op {
            Operator::Dense(m) => m.apply_into(src, dst),
            Operator::Asm(a) => a.apply_into(src, dst),
        }
    }

    pub fn apply_adjoint_into(&self, src: &[Complex64], dst: &mut [Complex64]) {
        match &self.op {
            Operator::Dense(m) => m.apply_adjoint_into(src, dst),
            Operator::Asm(a) => a.apply_adjoint_into(src, dst),
        }
    }

    pub fn apply(&self, src: &[Complex64]) -> Vec<Complex64> {
        let mut dst = vec![Complex64::new(0.0, 0.0); src.len()];
        self.apply_into(src, &mut dst);
        dst
    }

    pub fn apply_adjoint(&self, src: &[Complex64]) -> Vec<Complex64> {
        let mut dst = vec![Complex64::new(0.0, 0.0); src.len()];
        self.apply_adjoint_into(src, &mut dst);
        dst
    }

    pub fn propagate(&self, field: &ComplexField) -> Result<ComplexField> {
        field.matches(&self.geometry)?;
        ComplexField::from_vec(field.n_x(), field.n_z(), self.apply(field.as_slice()))
    }
}

/// Which way a stack is traversed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Per hop: propagate, then apply the layer phase. Layers in order 1..L.
    Tx,
    /// Per hop: apply the layer phase, then propagate. Layers in order L..1.
    Rx,
}

/// Runs a field through a whole stack without forming the stack matrix.
pub fn cascade(
    src: &ComplexField,
    layers: &LayerStack,
    propagator: &Propagator,
    direction: Direction,
) -> Result<ComplexField> {
    src.matches(propagator.geometry())?;
    let mut current = src.as_slice().to_vec();
    let mut next = vec![Complex64::new(0.0, 0.0); current.len()];
    for layer in layers.layers.iter() {
        if (layer.n_x(), layer.n_z()) != (src.n_x(), src.n_z()) {
            return Err(Error::mismatch(
                format!("{}x{}", src.n_x(), src.n_z()),
                format!("{}x{}", layer.n_x(), layer.n_z()),
            ));
        }
    }
    match direction {
        Direction::Tx => {
            for layer in &layers.layers {
                propagator.apply_into(&current, &mut next);
                layer.apply(&mut next);
                std::mem::swap(&mut current, &mut next);
            }
        }
        Direction::Rx => {
            for layer in layers.layers.iter().rev() {
                layer.apply(&mut current);
                propagator.apply_into(&current, &mut next);
                std::mem::swap(&mut current, &mut next);
            }
        }
    }
    ComplexField::from_vec(src.n_x(), src.n_z(), current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::PhaseLayer;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    const LAMBDA: f64 = 10.7e-3;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn field_strategy(len: usize) -> impl Strategy<Value = Vec<Complex64>> {
        prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64).prop_map(|(a, b)| c(a, b)), len)
    }

    fn norm(v: &[Complex64]) -> f64 {
        v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
    }

    fn rel_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
        let d: Vec<Complex64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        norm(&d) / norm(b).max(1e-300)
    }

    fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
        a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
    }

    fn small() -> Geometry {
        Geometry::reference().with_size(8, 8)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn engines_are_linear(
            u in field_strategy(64),
            v in field_strategy(64),
            a in (-2.0..2.0f64, -2.0..2.0f64),
            b in (-2.0..2.0f64, -2.0..2.0f64),
        ) {
            let (a, b) = (c(a.0, a.1), c(b.0, b.1));
            for engine in [Engine::Asm, Engine::Rsf] {
                let p = Propagator::for_geometry(&small(), engine, DEFAULT_PADDING).unwrap();
                let mix: Vec<Complex64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
                let lhs = p.apply(&mix);
                let rhs: Vec<Complex64> =
                    p.apply(&u).iter().zip(p.apply(&v)).map(|(x, y)| a * x + b * y).collect();
                prop_assert!(rel_diff(&lhs, &rhs) < 1e-12);
            }
        }

        #[test]
        fn adjoint_satisfies_inner_product_identity(u in field_strategy(64), v in field_strategy(64)) {
            for engine in [Engine::Asm, Engine::Rsf] {
                let p = Propagator::for_geometry(&small(), engine, DEFAULT_PADDING).unwrap();
                let lhs = inner(&p.apply(&u), &v);
                let rhs = inner(&u, &p.apply_adjoint(&v));
                prop_assert!((lhs - rhs).norm() <= 1e-12 * lhs.norm().max(1.0));
            }
        }

        #[test]
        fn global_phase_offset_factors_out(u in field_strategy(16), offset in -PI..PI) {
            let g = Geometry::reference().with_size(4, 4).with_layers(2, 2);
            let p = Propagator::for_geometry(&g, Engine::Asm, DEFAULT_PADDING).unwrap();
            let phases: Vec<f64> = (0..16).map(|i| 0.37 * i as f64).collect();
            let stack = LayerStack {
                layers: vec![PhaseLayer::from_phases(4, 4, phases.clone()).unwrap(), PhaseLayer::zeros(4, 4)],
            };
            let mut shifted = stack.clone();
            shifted.layers[0] =
                PhaseLayer::from_phases(4, 4, phases.iter().map(|p| p + offset).collect()).unwrap();
            let src = ComplexField::from_vec(4, 4, u).unwrap();
            let base = cascade(&src, &stack, &p, Direction::Tx).unwrap();
            let moved = cascade(&src, &shifted, &p, Direction::Tx).unwrap();
            let expect: Vec<Complex64> =
                base.as_slice().iter().map(|x| x * Complex64::from_polar(1.0, offset)).collect();
            prop_assert!(rel_diff(moved.as_slice(), &expect) < 1e-12);
        }
    }

    #[test]
    fn zero_field_stays_zero() {
        for engine in [Engine::Asm, Engine::Rsf] {
            let p = Propagator::for_geometry(&small(), engine, DEFAULT_PADDING).unwrap();
            assert!(p
                .apply(&vec![c(0.0, 0.0); 64])
                .iter()
                .all(|x| *x == c(0.0, 0.0)));
        }
    }

    #[test]
    fn impulse_response_is_kernel_column() {
        let g = small();
        let kernel = RsfKernel::new(&g, g.d_layer).unwrap();
        let mut src = ComplexField::zeros(8, 8);
        src.set(4, 4, c(1.0, 0.0));
        let out = propagate_rsf(&src, &g).unwrap();
        for z in 0..8 {
            for x in 0..8 {
                let expect = rsf_coefficient(x as i64 - 4, z as i64 - 4, &g);
                assert!((out.get(x, z) - expect).norm() <= 1e-12 * expect.norm());
                assert_eq!(kernel.coefficient(x as i64 - 4, z as i64 - 4), expect);
            }
        }
    }

    /// Field synthesized directly from plane waves inside the propagating
    /// disk, on an unpadded periodic grid so no energy leaves the window.
    #[test]
    fn passband_input_keeps_its_power() {
        let n = 16usize;
        let mut g = Geometry::reference().with_size(n, n);
        g.d_layer = 4.0 * LAMBDA;
        let transfer = build_asm_transfer(&g, g.d_layer, 1.0).unwrap();
        let p = Propagator::new(&g, Engine::Asm, g.d_layer, 1.0).unwrap();
        let mut rng = crate::rng::RngSeed(5).rng(crate::rng::Stream::Data, 0);
        let mut src = vec![c(0.0, 0.0); n * n];
        let mut expect = vec![c(0.0, 0.0); n * n];
        let mut modes = 0;
        for kz in transfer.z_indices() {
            for kx in transfer.x_indices() {
                if !transfer.is_propagating(kx, kz) {
                    continue;
                }
                modes += 1;
                let amp = crate::channel::complex_gaussian(&mut rng);
                let h = transfer.sample(kx, kz);
                for z in 0..n {
                    for x in 0..n {
                        let w = Complex64::from_polar(
                            1.0,
                            2.0 * PI * (kx as f64 * x as f64 + kz as f64 * z as f64) / n as f64,
                        );
                        src[z * n + x] += amp * w;
                        expect[z * n + x] += amp * h * w;
                    }
                }
            }
        }
        assert!(modes > 1);
        let out = p.apply(&src);
        assert!((norm(&out) / norm(&src) - 1.0).abs() < 1e-6);
        assert!(rel_diff(&out, &expect) < 1e-10);
    }

    #[test]
    fn transfer_composes_over_distance() {
        let g = small();
        let (a, b) = (0.7e-3, 2.3e-3);
        let ta = build_asm_transfer(&g, a, 2.0).unwrap();
        let tb = build_asm_transfer(&g, b, 2.0).unwrap();
        let tab = build_asm_transfer(&g, a + b, 2.0).unwrap();
        for kz in ta.z_indices() {
            for kx in ta.x_indices() {
                if ta.is_propagating(kx, kz) {
                    let lhs = ta.sample(kx, kz) * tb.sample(kx, kz);
                    assert!((lhs - tab.sample(kx, kz)).norm() < 1e-10);
                }
            }
        }
    }

    fn dense_of(p: &Propagator) -> Vec<Vec<Complex64>> {
        let n = p.len();
        // column j is the response to the j-th unit vector
        (0..n)
            .map(|j| {
                let mut e = vec![c(0.0, 0.0); n];
                e[j] = c(1.0, 0.0);
                p.apply(&e)
            })
            .collect()
    }

    fn matvec(cols: &[Vec<Complex64>], v: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![c(0.0, 0.0); v.len()];
        for (col, &s) in cols.iter().zip(v) {
            for (o, w) in out.iter_mut().zip(col) {
                *o += w * s;
            }
        }
        out
    }

    #[test]
    fn cascade_matches_explicit_matrix_chain() {
        let g = Geometry::reference().with_size(4, 4).with_layers(2, 2);
        let mut rng = crate::rng::RngSeed(11).rng(crate::rng::Stream::Init, 0);
        let stack =
            crate::training::init_phases(2, 4, 4, &mut rng, crate::training::InitScheme::Uniform);
        let src: Vec<Complex64> = (0..16)
            .map(|_| crate::channel::complex_gaussian(&mut rng))
            .collect();
        let field = ComplexField::from_vec(4, 4, src.clone()).unwrap();
        for engine in [Engine::Rsf, Engine::Asm] {
            let p = Propagator::for_geometry(&g, engine, DEFAULT_PADDING).unwrap();
            let w = dense_of(&p);
            let diag = |l: usize, v: &[Complex64]| -> Vec<Complex64> {
                v.iter()
                    .enumerate()
                    .map(|(n, x)| stack.layers[l].coefficient(n) * x)
                    .collect()
            };
            // TX: Phi2 W Phi1 W u
            let tx = diag(1, &matvec(&w, &diag(0, &matvec(&w, &src))));
            let got = cascade(&field, &stack, &p, Direction::Tx).unwrap();
            assert!(rel_diff(got.as_slice(), &tx) < 1e-12, "{engine:?} tx");
            // RX: W Psi1 W Psi2 u
            let rx = matvec(&w, &diag(0, &matvec(&w, &diag(1, &src))));
            let got = cascade(&field, &stack, &p, Direction::Rx).unwrap();
            assert!(rel_diff(got.as_slice(), &rx) < 1e-12, "{engine:?} rx");
        }
        let zero_layers = LayerStack::zeros(1, 4, 4);
        let p = Propagator::for_geometry(&g, Engine::Asm, DEFAULT_PADDING).unwrap();
        let got = cascade(&field, &zero_layers, &p, Direction::Tx).unwrap();
        assert_eq!(got.as_slice(), p.apply(&src).as_slice());
    }

    #[test]
    fn passband_slices() {
        let mut half = small();
        half.d_x = LAMBDA / 2.0;
        half.d_z = LAMBDA / 2.0;
        let slice = spectrum_passband_plot(&build_asm_transfer(&half, 1e-3, 2.0).unwrap());
        assert!(slice.iter().all(|&(_, m)| (m - 1.0).abs() < 1e-12));

        let fine = small();
        let slice = spectrum_passband_plot(&build_asm_transfer(&fine, 1e-3, 2.0).unwrap());
        let pass = slice
            .iter()
            .filter(|&&(_, m)| (m - 1.0).abs() < 1e-12)
            .count();
        assert!(pass > 0 && pass < slice.len());

        let near = spectrum_passband_plot(&build_asm_transfer(&fine, 1e-3, 2.0).unwrap());
        let far = spectrum_passband_plot(&build_asm_transfer(&fine, 2e-3, 2.0).unwrap());
        for (a, b) in near.iter().zip(&far) {
            if a.1 < 1.0 - 1e-12 {
                assert!(b.1 < a.1);
            }
        }
        let mut csv = Vec::new();
        write_passband_csv(&near, &mut csv).unwrap();
        assert_eq!(
            String::from_utf8(csv).unwrap().lines().count(),
            near.len() + 1
        );
    }

    #[test]
    fn reference_geometry_gap_to_dense_sum() {
        let g = small();
        let mut rng = crate::rng::RngSeed(2).rng(crate::rng::Stream::Data, 0);
        let src: Vec<Complex64> = (0..64)
            .map(|_| crate::channel::complex_gaussian(&mut rng))
            .collect();
        let dense = Propagator::for_geometry(&g, Engine::Rsf, 4.0)
            .unwrap()
            .apply(&src);
        let fft = Propagator::for_geometry(&g, Engine::Asm, 4.0)
            .unwrap()
            .apply(&src);
        let gap = rel_diff(&fft, &dense);
        assert!(gap <= crate::bench::ENGINE_TOLERANCE, "gap {gap}");
    }

    #[test]
    fn engine_names_parse() {
        assert_eq!("asm".parse::<Engine>().unwrap(), Engine::Asm);
        assert_eq!("rsf".parse::<Engine>().unwrap(), Engine::Rsf);
        assert!("fft".parse::<Engine>().is_err());
    }
}
