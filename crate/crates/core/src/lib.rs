//! Simulation and training of end-to-end wireless links built from stacked
//! phase-only metasurfaces.
//!
//! The transmitter maps a symbol to a subarray of feed antennas and shapes the
//! radiated wave with a stack of phase layers; the receiver applies a second
//! stack and decides by comparing subarray powers on the detector plane. Layer
//! phases are trained end to end by gradient descent through the diffraction
//! operators.

pub mod bench;
pub mod channel;
pub mod config;
pub mod diffraction;
pub mod error;
pub mod evaluation;
pub mod field;
pub mod rng;
pub mod training;
pub mod transceiver;

pub use error::{Error, Result};
pub use field::{ComplexField, Geometry, LayerStack, ModulationScheme, PhaseLayer, SymbolBatch};
pub use rng::{RngSeed, Stream};
