//! Scale-only batch normalization of complex fields.

use crate::error::{Error, Result};
use crate::field::ComplexField;
use num_complex::Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Not part of the network.
    Off,
    /// Divide by the batch RMS magnitude.
    Train,
    /// Identity.
    Eval,
}

/// Root-mean-square magnitude over every element of every field.
pub fn bn_scale<'a, I: Iterator<Item = &'a [Complex64]>>(fields: I) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for f in fields {
        total += f.iter().map(|c| c.norm_sqr()).sum::<f64>();
        count += f.len();
    }
    if count == 0 {
        return 0.0;
    }
    (total / count as f64).sqrt()
}

/// Maps adjoints at `y = x / s` back to the pre-normalization fields `x`,
/// including the dependence of `s` on the whole batch.
pub(crate) fn bn_adjoint(adjoints: &mut [Vec<Complex64>], fields: &[&[Complex64]], s: f64) {
    let count: usize = fields.iter().map(|f| f.len()).sum();
    let cross: f64 = adjoints
        .iter()
        .zip(fields)
        .map(|(g, x)| {
            g.iter()
                .zip(x.iter())
                .map(|(a, b)| (a.conj() * b).re)
                .sum::<f64>()
        })
        .sum();
    let c = cross / (s * s * s * count as f64);
    for (g, x) in adjoints.iter_mut().zip(fields) {
        for (a, b) in g.iter_mut().zip(x.iter()) {
            *a = *a / s - *b * c;
        }
    }
}

/// Normalizes a batch of fields taken at one layer. A zero-power batch is
/// returned unchanged with a warning.
pub fn batch_norm(fields: &[ComplexField], mode: BnMode) -> Result<Vec<ComplexField>> {
    if fields.is_empty() {
        return Err(Error::invalid("batch_size", "batch is empty"));
    }
    if mode != BnMode::Train {
        return Ok(fields.to_vec());
    }
    let s = bn_scale(fields.iter().map(ComplexField::as_slice));
    if s == 0.0 {
        log::warn!("batch norm skipped: zero-power batch");
        return Ok(fields.to_vec());
    }
    Ok(fields
        .iter()
        .map(|f| {
            let mut out = f.clone();
            out.scale(Complex64::new(1.0 / s, 0.0));
            out
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch() -> Vec<ComplexField> {
        (0..3)
            .map(|k| {
                ComplexField::from_vec(
                    2,
                    2,
                    (0..4)
                        .map(|i| Complex64::new((i + k) as f64 * 0.3, 1.0 - i as f64))
                        .collect(),
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn eval_is_bitwise_identity() {
        let b = batch();
        assert_eq!(batch_norm(&b, BnMode::Eval).unwrap(), b);
    }

    #[test]
    fn train_normalizes_rms_and_ignores_scale() {
        let b = batch();
        let out = batch_norm(&b, BnMode::Train).unwrap();
        assert!((bn_scale(out.iter().map(ComplexField::as_slice)) - 1.0).abs() < 1e-12);
        let scaled: Vec<ComplexField> = b
            .iter()
            .map(|f| {
                let mut g = f.clone();
                g.scale(Complex64::new(3.7, 0.0));
                g
            })
            .collect();
        let out2 = batch_norm(&scaled, BnMode::Train).unwrap();
        for (a, c) in out.iter().zip(&out2) {
            for (x, y) in a.as_slice().iter().zip(c.as_slice()) {
                assert!((x - y).norm() < 1e-12);
            }
        }
        let zeros = vec![ComplexField::zeros(2, 2)];
        assert_eq!(batch_norm(&zeros, BnMode::Train).unwrap(), zeros);
        assert!(batch_norm(&[], BnMode::Train).is_err());
    }

    #[test]
    fn adjoint_matches_finite_differences() {
        // L = Re <w, y(x)> summed over the batch, y = x / s(x)
        let b = batch();
        let w: Vec<Vec<Complex64>> = (0..3)
            .map(|k| {
                (0..4)
                    .map(|i| Complex64::new((i * k) as f64 * 0.1 - 0.2, 0.5 + k as f64))
                    .collect()
            })
            .collect();
        let loss = |fields: &[ComplexField]| -> f64 {
            let out = batch_norm(fields, BnMode::Train).unwrap();
            out.iter()
                .zip(&w)
                .map(|(y, wk)| {
                    y.as_slice()
                        .iter()
                        .zip(wk)
                        .map(|(a, b)| (b.conj() * a).re)
                        .sum::<f64>()
                })
                .sum()
        };
        let s = bn_scale(b.iter().map(ComplexField::as_slice));
        let mut adj = w.clone();
        let views: Vec<&[Complex64]> = b.iter().map(ComplexField::as_slice).collect();
        bn_adjoint(&mut adj, &views, s);
        let h = 1e-6;
        for k in 0..3 {
            for i in 0..4 {
                for dir in [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)] {
                    let mut plus = b.clone();
                    plus[k][i] += dir * h;
                    let mut minus = b.clone();
                    minus[k][i] -= dir * h;
                    let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
                    let analytic = (adj[k][i].conj() * dir).re;
                    assert!((numeric - analytic).abs() < 1e-7, "{numeric} vs {analytic}");
                }
            }
        }
    }
}
