//! End-to-end runs: scene, symbols, observations, recovery, extraction and
//! scoring against ground truth.

mod config;
mod matching;
mod report;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::array::UniformLinearArray;
use crate::error::{Error, Result};
use crate::extractor::{extract_paths, noise_floor_magnitude, threshold_paths, ExtractionConfig, PathEstimate, ThresholdRule};
use crate::measurement::{synthesize_received, SensingMeasurement, SynthesisParams};
use crate::scenario::{generate_scene, ClusterConfig, DelayGrid, MultipathComponent, SensingMode};
use crate::solver::{refit_support_with_gram, solve_block_mmv_with_gram, BlockSolution, SolverOptions};
use crate::waveform::{derive_seed, generate_symbols, make_allocation, AllocationPattern, OfdmConfig};

pub use config::{Preset, PRESET_NAMES};
pub use matching::{match_estimates, MatchGates, MatchReport, MatchedPair};
pub use report::{format_g9, read_csv, read_records, write_csv, write_records, CsvRecord, RecordKind, CSV_HEADER};

const SCENE_STREAM: u64 = 1;
const SYMBOL_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;

/// How candidates are thresholded after extraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdSetting {
    /// Keep magnitudes at least `factor` times the estimated noise floor.
    NoiseFloor(f64),
    Absolute(f64),
    TopK(usize),
}

impl fmt::Display for ThresholdSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThresholdSetting::NoiseFloor(x) => write!(f, "noise:{x}"),
            ThresholdSetting::Absolute(x) => write!(f, "abs:{x}"),
            ThresholdSetting::TopK(k) => write!(f, "top:{k}"),
        }
    }
}

impl FromStr for ThresholdSetting {
    type Err = Error;

    /// `noise:<factor>`, `abs:<magnitude>` or `top:<k>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config(format!("threshold '{s}' must be noise:<f>, abs:<f> or top:<k>"));
        let (kind, arg) = s.trim().split_once(':').ok_or_else(bad)?;
        let value = |a: &str| a.parse::<f64>().ok().filter(|v| v.is_finite() && *v >= 0.0).ok_or_else(bad);
        match kind {
            "noise" => Ok(ThresholdSetting::NoiseFloor(value(arg)?)),
            "abs" => Ok(ThresholdSetting::Absolute(value(arg)?)),
            "top" => Ok(ThresholdSetting::TopK(arg.parse().map_err(|_| bad())?)),
            _ => Err(bad()),
        }
    }
}

/// Everything one run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub ofdm: OfdmConfig,
    pub mode: SensingMode,
    /// K
    pub num_sources: usize,
    /// M
    pub rx_elements: usize,
    /// M_T
    pub tx_antennas: usize,
    /// Element spacing over wavelength for both arrays.
    pub element_spacing: f64,
    /// g
    pub oversampling: usize,
    /// N_p; `None` sizes the grid to cover the cluster distances.
    pub num_bins: Option<usize>,
    /// T
    pub num_blocks: usize,
    pub allocation: AllocationPattern,
    pub cluster: ClusterConfig,
    pub tx_power_dbm: f64,
    /// `None` runs noiseless.
    pub noise_dbm_total: Option<f64>,
    pub uplink_timing_offset_bins: usize,
    pub solver: SolverOptions,
    pub extraction: ExtractionConfig,
    pub threshold: ThresholdSetting,
    pub gates: MatchGates,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::downlink_default()
    }
}

impl ExperimentConfig {
    /// Four RRUs with four-element arrays, full 1024-subcarrier allocation.
    pub fn downlink_default() -> Self {
        Self {
            ofdm: OfdmConfig::default(),
            mode: SensingMode::Downlink,
            num_sources: 4,
            rx_elements: 4,
            tx_antennas: 4,
            element_spacing: 0.5,
            oversampling: 1,
            num_bins: None,
            num_blocks: 8,
            allocation: AllocationPattern::Full,
            cluster: ClusterConfig::default(),
            tx_power_dbm: 20.0,
            noise_dbm_total: Some(-97.0),
            uplink_timing_offset_bins: 0,
            solver: SolverOptions::default(),
            extraction: ExtractionConfig::default(),
            threshold: ThresholdSetting::NoiseFloor(3.0),
            gates: MatchGates::default(),
            seed: 1,
        }
    }

    /// Four single-antenna mobiles on 256 interleaved subcarriers.
    pub fn uplink_default() -> Self {
        Self {
            mode: SensingMode::Uplink,
            tx_antennas: 1,
            allocation: AllocationPattern::Interleaved { step: 4 },
            ..Self::downlink_default()
        }
    }

    pub fn rx_array(&self) -> Result<UniformLinearArray> {
        UniformLinearArray::new(self.rx_elements, self.element_spacing).map_err(|e| e.with_context("rx_elements"))
    }

    pub fn tx_array(&self) -> Result<UniformLinearArray> {
        UniformLinearArray::new(self.tx_antennas, self.element_spacing).map_err(|e| e.with_context("tx_antennas"))
    }

    /// Delay grid, either as configured or just covering the cluster span
    /// (plus any uplink timing offset).
    pub fn delay_grid(&self) -> Result<DelayGrid> {
        let grid = match self.num_bins {
            Some(n) => DelayGrid::new(self.oversampling, n),
            None => DelayGrid::covering(self.oversampling, &self.ofdm, self.cluster.max_distance_m(self.num_sources)).map(
                |g| DelayGrid {
                    num_bins: g.num_bins + self.uplink_offset(),
                    ..g
                },
            ),
        }
        .map_err(|e| e.with_context("grid"))?;
        grid.validate_for(&self.ofdm).map_err(|e| e.with_context("grid.num_bins"))?;
        Ok(grid)
    }

    fn uplink_offset(&self) -> usize {
        match self.mode {
            SensingMode::Uplink => self.uplink_timing_offset_bins,
            SensingMode::Downlink => 0,
        }
    }

    /// Cross-field consistency.
    pub fn validate(&self) -> Result<()> {
        self.ofdm.validate().map_err(|e| e.with_context("ofdm"))?;
        if self.num_sources == 0 {
            return Err(Error::config("sources: need at least one source"));
        }
        if self.num_blocks == 0 {
            return Err(Error::config("blocks: need at least one OFDM block"));
        }
        let rx = self.rx_array()?;
        let tx = self.tx_array()?;
        if self.mode == SensingMode::Downlink && tx.num_elements() != rx.num_elements() {
            return Err(Error::config(format!(
                "tx_antennas: downlink sources are RRUs with the receiver's array size (M_T = {} ≠ M = {})",
                tx.num_elements(),
                rx.num_elements()
            )));
        }
        self.delay_grid()?;
        make_allocation(self.allocation, self.ofdm.num_subcarriers).map_err(|e| e.with_context("allocation"))?;
        self.cluster.validate(self.num_sources).map_err(|e| e.with_context("cluster"))?;
        if !self.tx_power_dbm.is_finite() {
            return Err(Error::config("power.tx_dbm must be finite"));
        }
        if self.noise_dbm_total.is_some_and(|n| !n.is_finite()) {
            return Err(Error::config("power.noise_dbm_total must be finite"));
        }
        if !(self.extraction.source_energy_ratio >= 0.0 && self.extraction.source_energy_ratio <= 1.0) {
            return Err(Error::config("extract.source_energy_ratio must lie in [0, 1]"));
        }
        if self.extraction.scan_points == 0 {
            return Err(Error::config("extract.scan_points must be positive"));
        }
        Ok(())
    }
}

/// Ground-truth path as reported next to the estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthPath {
    pub source_id: usize,
    pub delay_bin: usize,
    /// Distance of the delay bin the path was placed in.
    pub distance_m: f64,
    pub aoa: f64,
    pub aoa_phase: f64,
    /// Absent when sources have a single antenna.
    pub aod_phase: Option<f64>,
    pub doppler_hz: f64,
    pub magnitude: f64,
    /// Received SNR `s²·|b|²·M_T/σ²` per subcarrier, dB; infinite when noiseless.
    pub snr_db: f64,
}

/// Result of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub scene: Vec<MultipathComponent>,
    pub truth: Vec<TruthPath>,
    /// Estimates that passed the threshold, ordered by source, bin and AoA.
    pub estimates: Vec<PathEstimate>,
    /// Number of candidates before thresholding.
    pub candidates: usize,
    /// Magnitude threshold that was applied, when it was absolute.
    pub magnitude_threshold: Option<f64>,
    pub report: MatchReport,
}

impl ExperimentOutcome {
    /// Rows of the output CSV: truths first, then estimates.
    pub fn records(&self) -> Vec<CsvRecord> {
        let mut rows: Vec<CsvRecord> = self.truth.iter().map(CsvRecord::from_truth).collect();
        rows.extend(self.estimates.iter().map(CsvRecord::from_estimate));
        rows
    }
}

/// Ground truth of `scene` as seen through the configured arrays and grid.
pub fn truth_paths(scene: &[MultipathComponent], meas: &SensingMeasurement) -> Vec<TruthPath> {
    let sigma2 = meas.noise_variance_per_subcarrier;
    let m_t = meas.tx_antennas();
    scene
        .iter()
        .map(|p| {
            let magnitude = p.amplitude.norm();
            let signal = meas.tx_amplitude.powi(2) * magnitude * magnitude * m_t as f64;
            TruthPath {
                source_id: p.source_id,
                delay_bin: p.delay_bin,
                distance_m: meas.grid.bin_distance_m(p.delay_bin, meas.ofdm.bandwidth_hz),
                aoa: p.aoa,
                aoa_phase: crate::array::wrap_phase(meas.rx_array.sin_phase(p.aoa)),
                aod_phase: (m_t > 1).then(|| crate::array::wrap_phase(meas.tx_array.sin_phase(p.aod))),
                doppler_hz: p.doppler_hz,
                magnitude,
                snr_db: 10.0 * (signal / sigma2).log10(),
            }
        })
        .collect()
}

/// Solve every block, then re-fit each block on the union of the supports
/// so all blocks share one set of bins.
pub fn recover_blocks(meas: &SensingMeasurement, options: &SolverOptions) -> Result<Vec<BlockSolution>> {
    let bs = meas.block_size();
    let systems: Vec<_> = (0..meas.num_blocks())
        .map(|t| (meas.sensing_matrix(t), meas.gram(t)))
        .collect();
    let first: Vec<BlockSolution> = systems
        .par_iter()
        .zip(&meas.blocks)
        .map(|((w, gram), y)| solve_block_mmv_with_gram(w, gram, y, bs, options))
        .collect::<Result<_>>()?;
    let mut union: Vec<usize> = first.iter().flat_map(|s| s.bins()).collect();
    union.sort_unstable();
    union.dedup();
    if first.iter().all(|s| s.bins() == union) {
        return Ok(first);
    }
    systems
        .par_iter()
        .zip(&meas.blocks)
        .map(|((w, gram), y)| refit_support_with_gram(w, gram, y, bs, &union))
        .collect()
}

/// Scenario → waveform → measurement → solver → extractor → matching.
/// Deterministic in `config.seed`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let grid = config.delay_grid()?;
    let (rx, tx) = (config.rx_array()?, config.tx_array()?);
    let scene_grid = DelayGrid {
        num_bins: grid.num_bins - config.uplink_offset(),
        ..grid
    };
    let scene = generate_scene(
        &config.cluster,
        config.num_sources,
        derive_seed(config.seed, SCENE_STREAM),
        &config.ofdm,
        &scene_grid,
    )
    .map_err(|e| e.with_context("cluster"))?;
    let allocation = make_allocation(config.allocation, config.ofdm.num_subcarriers)?;
    let symbols = generate_symbols(
        config.num_sources,
        config.tx_antennas,
        &allocation,
        config.num_blocks,
        derive_seed(config.seed, SYMBOL_STREAM),
    )?;
    let params = SynthesisParams {
        noise_dbm_total: config.noise_dbm_total,
        tx_power_dbm: Some(config.tx_power_dbm),
        uplink_timing_offset_bins: config.uplink_offset(),
        seed: derive_seed(config.seed, NOISE_STREAM),
    };
    let meas = synthesize_received(&scene, &symbols, &config.ofdm, config.mode, &rx, &tx, &grid, &params)?;

    let solutions = recover_blocks(&meas, &config.solver).map_err(|e| e.with_context("solver"))?;
    let candidates = extract_paths(&meas, &solutions, &config.extraction).map_err(|e| e.with_context("extract"))?;
    let count = candidates.len();
    let (rule, magnitude_threshold) = match config.threshold {
        ThresholdSetting::NoiseFloor(f) => {
            let t = f * noise_floor_magnitude(&meas, &solutions);
            (ThresholdRule::Absolute(t), Some(t))
        }
        ThresholdSetting::Absolute(t) => (ThresholdRule::Absolute(t), Some(t)),
        ThresholdSetting::TopK(k) => (ThresholdRule::TopK(k), None),
    };
    let mut estimates = threshold_paths(candidates, rule);
    estimates.sort_by(|a, b| {
        (a.source_id, a.delay_bin)
            .cmp(&(b.source_id, b.delay_bin))
            .then(a.aoa_phase.total_cmp(&b.aoa_phase))
    });

    let truth = truth_paths(&scene, &meas);
    let report = match_estimates(&estimates, &truth, &config.gates);
    Ok(ExperimentOutcome {
        scene,
        truth,
        estimates,
        candidates: count,
        magnitude_threshold,
        report,
    })
}
