//! Network-side radio sensing for a multiuser MIMO-OFDM mobile network.
//!
//! The crate simulates downlink (active/passive) and uplink sensing
//! observations over random multipath scenes and recovers per-path delay,
//! angle of arrival, angle of departure, Doppler and amplitude by solving a
//! block-sparse multiple-measurement-vector problem over a quantized delay
//! grid.
//!
//! Pipeline:
//!
//! ```text
//! scenario ──► waveform ──► measurement ──► solver ──► extractor ──► experiment
//!  (paths)     (symbols)    (Y_t, W)        (blocks)    (estimates)   (matching, CSV)
//! ```

pub mod array;
pub mod error;
pub mod experiment;
pub mod extractor;
pub mod measurement;
pub mod scenario;
pub mod solver;
pub mod waveform;

pub use num_complex::Complex64;

pub use array::UniformLinearArray;
pub use error::{Error, Result};
pub use experiment::{run_experiment, ExperimentConfig, ExperimentOutcome, MatchReport};
pub use extractor::PathEstimate;
pub use measurement::SensingMeasurement;
pub use scenario::{ClusterConfig, DelayGrid, MultipathComponent, SensingMode};
pub use solver::{BlockSolution, SolverOptions, StoppingRule};
pub use waveform::{AllocationPattern, OfdmConfig, SubcarrierAllocation, SymbolGrid};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Complex matrix type used throughout.
pub type CMatrix = nalgebra::DMatrix<Complex64>;
