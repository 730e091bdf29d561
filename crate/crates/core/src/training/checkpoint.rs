//! Flat-file model checkpoints.
//!
//! Layout, all little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `D2NNCKPT` |
//! | 4     | format version (`u32`, currently 1) |
//! | 6 x 8 | `n_x, n_z, l_tx, l_rx, m_x, m_z` as `u64` |
//! | 5 x 8 | `d_x, d_z, d_layer, wavelength` (m), reference power, as `f64` |
//! | 1     | detector normalization (0 = mean, 1 = none) |
//! | rest  | TX layers 0..l_tx then RX layers 0..l_rx, each `n_x * n_z` phases (`f64`, flat index order) |

use crate::error::{Error, Result};
use crate::field::{Geometry, LayerStack, ModulationScheme, PhaseLayer};
use crate::transceiver::{Normalization, Transceiver};
use std::io::{Read, Write};

const MAGIC: &[u8; 8] = b"D2NNCKPT";
const VERSION: u32 = 1;
/// Refuse headers describing absurdly large models.
const MAX_ELEMENTS: u64 = 1 << 24;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub geometry: Geometry,
    pub scheme: ModulationScheme,
    pub normalization: Normalization,
    pub reference_power: f64,
    pub tx: LayerStack,
    pub rx: LayerStack,
}

impl Checkpoint {
    pub fn from_transceiver(transceiver: &Transceiver, reference_power: f64) -> Self {
        Checkpoint {
            geometry: *transceiver.geometry(),
            scheme: *transceiver.scheme(),
            normalization: transceiver.normalization(),
            reference_power,
            tx: transceiver.tx.clone(),
            rx: transceiver.rx.clone(),
        }
    }

    /// Installs the stored phases into a transceiver of the same shape.
    pub fn apply_to(&self, transceiver: &mut Transceiver) -> Result<()> {
        let g = transceiver.geometry();
        if (g.n_x, g.n_z, g.l_tx, g.l_rx)
            != (
                self.geometry.n_x,
                self.geometry.n_z,
                self.geometry.l_tx,
                self.geometry.l_rx,
            )
        {
            return Err(Error::mismatch(
                format!("{}x{} with {}+{} layers", g.n_x, g.n_z, g.l_tx, g.l_rx),
                format!(
                    "{}x{} with {}+{} layers",
                    self.geometry.n_x, self.geometry.n_z, self.geometry.l_tx, self.geometry.l_rx
                ),
            ));
        }
        if *transceiver.scheme() != self.scheme {
            return Err(Error::mismatch(
                format!(
                    "{}x{} symbols",
                    transceiver.scheme().m_x,
                    transceiver.scheme().m_z
                ),
                format!("{}x{} symbols", self.scheme.m_x, self.scheme.m_z),
            ));
        }
        transceiver.tx = self.tx.clone();
        transceiver.rx = self.rx.clone();
        transceiver.set_normalization(self.normalization);
        Ok(())
    }
}

pub fn write_checkpoint<W: Write>(checkpoint: &Checkpoint, mut out: W) -> std::io::Result<()> {
    let g = &checkpoint.geometry;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    for v in [
        g.n_x,
        g.n_z,
        g.l_tx,
        g.l_rx,
        checkpoint.scheme.m_x,
        checkpoint.scheme.m_z,
    ] {
        out.write_all(&(v as u64).to_le_bytes())?;
    }
    for v in [
        g.d_x,
        g.d_z,
        g.d_layer,
        g.wavelength,
        checkpoint.reference_power,
    ] {
        out.write_all(&v.to_le_bytes())?;
    }
    out.write_all(&[match checkpoint.normalization {
        Normalization::Mean => 0u8,
        Normalization::None => 1u8,
    }])?;
    for layer in checkpoint.tx.layers.iter().chain(&checkpoint.rx.layers) {
        for p in layer.phases() {
            out.write_all(&p.to_le_bytes())?;
        }
    }
    Ok(())
}

fn bad(reason: impl Into<String>) -> Error {
    Error::Checkpoint(reason.into())
}

fn read_array<const K: usize, R: Read>(input: &mut R, what: &str) -> Result<[u8; K]> {
    let mut buf = [0u8; K];
    input
        .read_exact(&mut buf)
        .map_err(|e| bad(format!("truncated while reading {what}: {e}")))?;
    Ok(buf)
}

/// Reads and validates a checkpoint. Nothing is returned unless the header is
/// consistent and every phase is present and finite.
pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Checkpoint> {
    if &read_array::<8, _>(&mut input, "magic")? != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(read_array::<4, _>(&mut input, "version")?);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let mut ints = [0u64; 6];
    for (i, v) in ints.iter_mut().enumerate() {
        *v = u64::from_le_bytes(read_array::<8, _>(
            &mut input,
            &format!("header field {i}"),
        )?);
    }
    let [n_x, n_z, l_tx, l_rx, m_x, m_z] = ints;
    if n_x == 0 || n_z == 0 || n_x.saturating_mul(n_z) > MAX_ELEMENTS || l_tx > 1024 || l_rx > 1024
    {
        return Err(bad(format!(
            "implausible header: {n_x}x{n_z} grid, {l_tx}+{l_rx} layers"
        )));
    }
    let mut floats = [0f64; 5];
    for (i, v) in floats.iter_mut().enumerate() {
        *v = f64::from_le_bytes(read_array::<8, _>(
            &mut input,
            &format!("header value {i}"),
        )?);
    }
    let [d_x, d_z, d_layer, wavelength, reference_power] = floats;
    let normalization = match read_array::<1, _>(&mut input, "normalization")?[0] {
        0 => Normalization::Mean,
        1 => Normalization::None,
        other => return Err(bad(format!("unknown normalization tag {other}"))),
    };
    let geometry = Geometry::new(
        n_x as usize,
        n_z as usize,
        d_x,
        d_z,
        d_layer,
        wavelength,
        l_tx as usize,
        l_rx as usize,
    )
    .map_err(|e| bad(format!("invalid geometry in header: {e}")))?;
    let scheme = ModulationScheme::new(m_x as usize, m_z as usize, &geometry)
        .map_err(|e| bad(format!("invalid modulation in header: {e}")))?;
    if !(reference_power.is_finite() && reference_power >= 0.0) {
        return Err(bad("invalid reference power"));
    }
    let n = geometry.len();
    let mut read_stack = |count: usize| -> Result<LayerStack> {
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let mut phases = Vec::with_capacity(n);
            for _ in 0..n {
                let p = f64::from_le_bytes(read_array::<8, _>(&mut input, "phases")?);
                if !p.is_finite() {
                    return Err(bad("non-finite phase"));
                }
                phases.push(p);
            }
            layers.push(PhaseLayer::from_phases(geometry.n_x, geometry.n_z, phases)?);
        }
        Ok(LayerStack { layers })
    };
    let tx = read_stack(geometry.l_tx)?;
    let rx = read_stack(geometry.l_rx)?;
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(bad("trailing bytes after phase data"));
    }
    Ok(Checkpoint {
        geometry,
        scheme,
        normalization,
        reference_power,
        tx,
        rx,
    })
}
