//! Symbol to decision: modulator, TX stack, channel, RX stack, power detector.

use crate::channel::{channel_matvec_into, CMatrix, ChannelRealization};
use crate::diffraction::{Direction, Propagator};
use crate::error::{Error, Result};
use crate::field::{ComplexField, Geometry, LayerStack, ModulationScheme};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::sync::Arc;

/// Scaling applied to subarray powers before the softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Divide by the mean subarray power of the sample.
    #[default]
    Mean,
    None,
}

/// Feed-array field for `symbol`: amplitude `1/sqrt(N_sub)` on its subarray,
/// zero elsewhere.
pub fn modulate(
    symbol: usize,
    scheme: &ModulationScheme,
    geometry: &Geometry,
) -> Result<ComplexField> {
    scheme.check_symbol(symbol)?;
    let mut field = ComplexField::for_geometry(geometry);
    let amplitude = Complex64::new(1.0 / (scheme.subarray_len() as f64).sqrt(), 0.0);
    let (bx, bz) = scheme.block(symbol);
    for z in bz * scheme.sub_z..(bz + 1) * scheme.sub_z {
        for x in bx * scheme.sub_x..(bx + 1) * scheme.sub_x {
            field.set(x, z, amplitude);
        }
    }
    Ok(field)
}

/// Power collected by each subarray, `labels[n]` naming the subarray of cell `n`.
pub fn subarray_powers(field: &[Complex64], labels: &[usize], order: usize) -> Vec<f64> {
    let mut powers = vec![0.0; order];
    for (value, &label) in field.iter().zip(labels) {
        powers[label] += value.norm_sqr();
    }
    powers
}

/// Softmax inputs for the given powers.
pub fn logits(powers: &[f64], normalization: Normalization) -> Vec<f64> {
    match normalization {
        Normalization::None => powers.to_vec(),
        Normalization::Mean => {
            let mean = powers.iter().sum::<f64>() / powers.len() as f64;
            if mean > 0.0 {
                powers.iter().map(|p| p / mean).collect()
            } else {
                vec![0.0; powers.len()]
            }
        }
    }
}

pub fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub powers: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub decision: usize,
}

impl DetectionResult {
    pub fn from_powers(powers: Vec<f64>, normalization: Normalization) -> Self {
        let probabilities = softmax(&logits(&powers, normalization));
        let decision = argmax(&powers);
        DetectionResult {
            powers,
            probabilities,
            decision,
        }
    }
}

pub fn detect(
    rx_field: &ComplexField,
    scheme: &ModulationScheme,
    normalization: Normalization,
) -> DetectionResult {
    let labels = scheme.cell_labels(rx_field.n_x(), rx_field.n_z());
    DetectionResult::from_powers(
        subarray_powers(rx_field.as_slice(), &labels, scheme.order()),
        normalization,
    )
}

/// Result of one forward pass, optionally with every plane retained.
#[derive(Debug, Clone)]
pub struct Forward {
    pub detection: DetectionResult,
    /// Modulator, each TX layer output, the field incident on each RX layer
    /// (outermost first), detector plane.
    pub planes: Option<Vec<ComplexField>>,
}

/// A complete link with trainable TX and RX stacks. Layer 0 of each stack is
/// the one closest to its feed or detector array.
#[derive(Debug, Clone)]
pub struct Transceiver {
    geometry: Geometry,
    scheme: ModulationScheme,
    pub tx: LayerStack,
    pub rx: LayerStack,
    propagator: Arc<Propagator>,
    normalization: Normalization,
    labels: Arc<Vec<usize>>,
}

impl Transceiver {
    pub fn new(
        scheme: ModulationScheme,
        tx: LayerStack,
        rx: LayerStack,
        propagator: Arc<Propagator>,
        normalization: Normalization,
    ) -> Result<Self> {
        let geometry = *propagator.geometry();
        for (name, stack, expected) in [("l_tx", &tx, geometry.l_tx), ("l_rx", &rx, geometry.l_rx)]
        {
            if stack.len() != expected {
                return Err(Error::invalid(
                    name,
                    format!(
                        "geometry declares {expected} layers, stack has {}",
                        stack.len()
                    ),
                ));
            }
            for layer in &stack.layers {
                if (layer.n_x(), layer.n_z()) != (geometry.n_x, geometry.n_z) {
                    return Err(Error::mismatch(
                        format!("{}x{}", geometry.n_x, geometry.n_z),
                        format!("{}x{}", layer.n_x(), layer.n_z()),
                    ));
                }
            }
        }
        let labels = Arc::new(scheme.cell_labels(geometry.n_x, geometry.n_z));
        Ok(Transceiver {
            geometry,
            scheme,
            tx,
            rx,
            propagator,
            normalization,
            labels,
        })
    }

    /// All phases zero.
    pub fn flat(
        scheme: ModulationScheme,
        propagator: Arc<Propagator>,
        normalization: Normalization,
    ) -> Result<Self> {
        let g = *propagator.geometry();
        Self::new(
            scheme,
            LayerStack::zeros(g.l_tx, g.n_x, g.n_z),
            LayerStack::zeros(g.l_rx, g.n_x, g.n_z),
            propagator,
            normalization,
        )
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn scheme(&self) -> &ModulationScheme {
        &self.scheme
    }

    pub fn propagator(&self) -> &Arc<Propagator> {
        &self.propagator
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn set_normalization(&mut self, normalization: Normalization) {
        self.normalization = normalization;
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn modulate(&self, symbol: usize) -> Result<ComplexField> {
        modulate(symbol, &self.scheme, &self.geometry)
    }

    /// Field leaving the outermost TX layer.
    pub fn transmit(&self, symbol: usize) -> Result<Vec<Complex64>> {
        let u0 = self.modulate(symbol)?;
        Ok(crate::diffraction::cascade(&u0, &self.tx, &self.propagator, Direction::Tx)?.into_vec())
    }

    /// Detector-plane field for a field arriving at the outermost RX layer.
    pub fn receive(&self, incident: &[Complex64]) -> Vec<Complex64> {
        let n = incident.len();
        let mut current = incident.to_vec();
        let mut next = vec![Complex64::new(0.0, 0.0); n];
        for layer in self.rx.layers.iter().rev() {
            layer.apply(&mut current);
            self.propagator.apply_into(&current, &mut next);
            std::mem::swap(&mut current, &mut next);
        }
        current
    }

    pub fn detect_slice(&self, detector: &[Complex64]) -> DetectionResult {
        DetectionResult::from_powers(
            subarray_powers(detector, &self.labels, self.scheme.order()),
            self.normalization,
        )
    }

    pub fn detect(&self, rx_field: &ComplexField) -> Result<DetectionResult> {
        rx_field.matches(&self.geometry)?;
        Ok(self.detect_slice(rx_field.as_slice()))
    }

    /// Full pass with a given channel matrix and an explicit noise vector
    /// (`None` for noiseless).
    pub fn forward_with(
        &self,
        symbol: usize,
        h: &CMatrix,
        noise: Option<&[Complex64]>,
        retain: bool,
    ) -> Result<Forward> {
        let n = self.geometry.len();
        if h.nrows() != n || h.ncols() != n {
            return Err(Error::mismatch(n, h.nrows()));
        }
        let (n_x, n_z) = (self.geometry.n_x, self.geometry.n_z);
        let mut planes = retain.then(Vec::new);
        let keep = |planes: &mut Option<Vec<ComplexField>>, data: &[Complex64]| {
            if let Some(p) = planes.as_mut() {
                p.push(ComplexField::from_vec(n_x, n_z, data.to_vec()).expect("plane size"));
            }
        };

        let mut current = self.modulate(symbol)?.into_vec();
        let mut next = vec![Complex64::new(0.0, 0.0); n];
        keep(&mut planes, &current);
        for layer in &self.tx.layers {
            self.propagator.apply_into(&current, &mut next);
            layer.apply(&mut next);
            std::mem::swap(&mut current, &mut next);
            keep(&mut planes, &current);
        }
        channel_matvec_into(h, &current, &mut next);
        std::mem::swap(&mut current, &mut next);
        if let Some(noise) = noise {
            if noise.len() != n {
                return Err(Error::mismatch(n, noise.len()));
            }
            current.iter_mut().zip(noise).for_each(|(c, w)| *c += w);
        }
        for layer in self.rx.layers.iter().rev() {
            keep(&mut planes, &current);
            layer.apply(&mut current);
            self.propagator.apply_into(&current, &mut next);
            std::mem::swap(&mut current, &mut next);
        }
        keep(&mut planes, &current);
        Ok(Forward {
            detection: self.detect_slice(&current),
            planes,
        })
    }

    /// Full pass drawing noise of the realization's variance from `rng`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        symbol: usize,
        channel: &ChannelRealization,
        rng: &mut R,
        retain: bool,
    ) -> Result<Forward> {
        let noise = (channel.sigma2 > 0.0)
            .then(|| crate::channel::noise_vector(self.geometry.len(), channel.sigma2, rng));
        self.forward_with(symbol, &channel.h, noise.as_deref(), retain)
    }
}

/// Magnitude grids of retained planes, in pipeline order.
pub fn dump_fields(forward: &Forward) -> Result<Vec<Vec<f64>>> {
    let planes = forward.planes.as_ref().ok_or(Error::MissingIntermediates)?;
    Ok(planes.iter().map(ComplexField::magnitudes).collect())
}

/// 8-bit binary PGM, rows of constant z, brightest cell mapped to 255.
pub fn write_pgm<W: Write>(
    magnitudes: &[f64],
    n_x: usize,
    n_z: usize,
    mut out: W,
) -> std::io::Result<()> {
    let max = magnitudes.iter().cloned().fold(0.0, f64::max);
    write!(out, "P5\n{n_x} {n_z}\n255\n")?;
    let bytes: Vec<u8> = magnitudes
        .iter()
        .map(|&m| {
            if max > 0.0 {
                (m / max * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect();
    out.write_all(&bytes)
}

/// One CSV row per z, `n_x` columns, no header.
pub fn write_magnitude_csv<W: Write>(
    magnitudes: &[f64],
    n_x: usize,
    mut out: W,
) -> std::io::Result<()> {
    for row in magnitudes.chunks(n_x) {
        let cells: Vec<String> = row.iter().map(|m| format!("{m:.9e}")).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffraction::{Engine, DEFAULT_PADDING};

    fn setup(n: usize, layers: usize) -> Transceiver {
        let g = Geometry::reference()
            .with_size(n, n)
            .with_layers(layers, layers);
        let scheme = ModulationScheme::new(4, 4, &g).unwrap();
        let prop = Arc::new(Propagator::for_geometry(&g, Engine::Asm, DEFAULT_PADDING).unwrap());
        Transceiver::flat(scheme, prop, Normalization::Mean).unwrap()
    }

    #[test]
    fn modulated_block() {
        let t = setup(8, 1);
        for m in 0..16 {
            let u = t.modulate(m).unwrap();
            assert!((u.power() - 1.0).abs() < 1e-15);
            let active: Vec<usize> = (0..64).filter(|&i| u[i].norm() > 0.0).collect();
            assert_eq!(active.len(), 4);
            assert!(active
                .iter()
                .all(|&i| (u[i].re - 0.5).abs() < 1e-15 && t.labels()[i] == m));
        }
        assert!(matches!(t.modulate(16), Err(Error::InvalidSymbol { .. })));
    }

    #[test]
    fn detection_examples() {
        let t = setup(8, 1);
        let mut f = ComplexField::zeros(8, 8);
        // subarray 3 covers x in 6..8, z in 0..2
        f.set(7, 1, Complex64::new(0.0, 2.0));
        let d = t.detect(&f).unwrap();
        assert_eq!(d.powers[3], 4.0);
        assert_eq!(d.powers.iter().sum::<f64>(), 4.0);
        assert_eq!(d.decision, 3);

        let uniform = ComplexField::from_vec(8, 8, vec![Complex64::new(0.3, 0.1); 64]).unwrap();
        let d = t.detect(&uniform).unwrap();
        assert_eq!(d.decision, 0);
        assert!(d
            .probabilities
            .iter()
            .all(|p| (p - 1.0 / 16.0).abs() < 1e-15));
        assert!((d.powers.iter().sum::<f64>() - uniform.power()).abs() < 1e-12);
    }

    #[test]
    fn mean_normalization_removes_scale() {
        let powers = vec![0.1, 0.4, 0.2, 0.3];
        let a = DetectionResult::from_powers(powers.clone(), Normalization::Mean);
        let b = DetectionResult::from_powers(
            powers.iter().map(|p| p * 7.0).collect(),
            Normalization::Mean,
        );
        for (x, y) in a.probabilities.iter().zip(&b.probabilities) {
            assert!((x - y).abs() < 1e-15);
        }
        let raw = DetectionResult::from_powers(powers, Normalization::None);
        assert_eq!(raw.decision, 1);
        assert!((raw.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_channel_matches_composition() {
        let t = setup(8, 1);
        let h = CMatrix::identity(64, 64);
        let out = t.forward_with(5, &h, None, true).unwrap();
        let u0 = t.modulate(5).unwrap();
        let twice = t.propagator().apply(&t.propagator().apply(u0.as_slice()));
        let expected = t.detect_slice(&twice);
        for (a, b) in out.detection.powers.iter().zip(&expected.powers) {
            assert!((a - b).abs() < 1e-14);
        }
        let planes = dump_fields(&out).unwrap();
        assert_eq!(planes.len(), 4);
        assert_eq!(planes[0].iter().filter(|&&m| m > 0.0).count(), 4);
        let noplanes = t.forward_with(5, &h, None, false).unwrap();
        assert!(matches!(
            dump_fields(&noplanes),
            Err(Error::MissingIntermediates)
        ));
    }

    #[test]
    fn pgm_layout() {
        let mut buf = Vec::new();
        write_pgm(&[0.0, 1.0, 2.0, 4.0], 2, 2, &mut buf).unwrap();
        assert_eq!(&buf[..11], b"P5\n2 2\n255\n");
        assert_eq!(&buf[11..], &[0, 64, 128, 255]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn powers() -> impl Strategy<Value = Vec<f64>> {
            prop::collection::vec(0.0..10.0f64, 2..32)
                .prop_filter("nonzero total", |p| p.iter().sum::<f64>() > 1e-9)
        }

        proptest! {
            #[test]
            fn probabilities_are_positive_and_sum_to_one(p in powers()) {
                for norm in [Normalization::Mean, Normalization::None] {
                    let d = DetectionResult::from_powers(p.clone(), norm);
                    prop_assert!(d.probabilities.iter().all(|&q| q > 0.0));
                    prop_assert!((d.probabilities.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                    prop_assert_eq!(d.decision, argmax(&p));
                }
            }

            #[test]
            fn decision_ignores_positive_scaling(
                re in prop::collection::vec(-1.0..1.0f64, 64),
                im in prop::collection::vec(-1.0..1.0f64, 64),
                scale in 1e-3..1e3f64,
            ) {
                let t = setup(8, 1);
                let u: Vec<Complex64> = re.iter().zip(&im).map(|(&a, &b)| Complex64::new(a, b)).collect();
                let scaled: Vec<Complex64> = u.iter().map(|x| x * scale).collect();
                prop_assert_eq!(t.detect_slice(&u).decision, t.detect_slice(&scaled).decision);
            }

            #[test]
            fn noiseless_forward_ignores_noise_stream(symbol in 0usize..16, a in any::<u64>(), b in any::<u64>()) {
                let t = setup(8, 1);
                let ch = ChannelRealization::identity(64);
                let x = t.forward(symbol, &ch, &mut crate::rng::RngSeed(a).rng(crate::rng::Stream::Noise, 0), false).unwrap();
                let y = t.forward(symbol, &ch, &mut crate::rng::RngSeed(b).rng(crate::rng::Stream::Noise, 0), false).unwrap();
                prop_assert_eq!(x.detection, y.detection);
            }
        }
    }
}
