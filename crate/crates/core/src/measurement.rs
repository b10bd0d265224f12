//! Frequency-domain received-signal synthesis and the stacked MMV system
//! `Y_t = W·V·Aᵀ + Z`.
//!
//! Two independent routes produce the same noiseless observation:
//! [`synthesize_received`] sums every path's contribution subcarrier by
//! subcarrier, while [`build_sensing_matrix`] × [`block_coefficients`]
//! goes through the Kronecker-structured sensing matrix.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::array::UniformLinearArray;
use crate::error::{Error, Result};
use crate::scenario::{DelayGrid, MultipathComponent, SensingMode};
use crate::solver::ColumnGram;
use crate::waveform::{delay_phase_vector, OfdmConfig, SubcarrierAllocation, SymbolGrid};
use crate::CMatrix;

/// Convert dBm to milliwatts.
pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

/// Knobs of the received-signal synthesis that are not part of the scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisParams {
    /// Total receiver thermal noise over the whole band; `None` disables noise.
    pub noise_dbm_total: Option<f64>,
    /// Per-source transmit power, split evenly over N subcarriers and M_T
    /// antennas. `None` means unit per-subcarrier, per-antenna amplitude.
    pub tx_power_dbm: Option<f64>,
    /// Uplink only: constant MS-to-RRU timing offset in delay bins. The
    /// measured delays become relative; nothing downstream removes it.
    pub uplink_timing_offset_bins: usize,
    pub seed: u64,
}

impl Default for SynthesisParams {
    fn default() -> Self {
        Self {
            noise_dbm_total: None,
            tx_power_dbm: None,
            uplink_timing_offset_bins: 0,
            seed: 0,
        }
    }
}

/// Observations of all OFDM blocks plus everything needed to rebuild the
/// sensing matrix of any block.
#[derive(Debug, Clone)]
pub struct SensingMeasurement {
    /// `Y[t]`, each `N_s × M`.
    pub blocks: Vec<CMatrix>,
    pub symbols: SymbolGrid,
    pub mode: SensingMode,
    pub grid: DelayGrid,
    pub ofdm: OfdmConfig,
    pub rx_array: UniformLinearArray,
    pub tx_array: UniformLinearArray,
    /// Complex noise variance per subcarrier and receive element (mW).
    pub noise_variance_per_subcarrier: f64,
    /// Amplitude scale applied to every unit-modulus symbol, sqrt(mW).
    pub tx_amplitude: f64,
}

impl SensingMeasurement {
    pub fn allocation(&self) -> &SubcarrierAllocation {
        self.symbols.allocation()
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn num_sources(&self) -> usize {
        self.symbols.num_sources()
    }

    pub fn rx_elements(&self) -> usize {
        self.rx_array.num_elements()
    }

    pub fn tx_antennas(&self) -> usize {
        self.tx_array.num_elements()
    }

    /// `M_T·K`, the row count of one delay-bin block.
    pub fn block_size(&self) -> usize {
        self.symbols.vector_len()
    }

    /// Structured Gram of [`Self::sensing_matrix`] for block `t`.
    pub fn gram(&self, t: usize) -> DelayGram {
        DelayGram::new(&self.symbols, t, &self.grid, self.ofdm.num_subcarriers)
    }

    /// `W` for block `t`.
    pub fn sensing_matrix(&self, t: usize) -> CMatrix {
        build_sensing_matrix(&self.symbols, t, &self.grid, self.ofdm.num_subcarriers)
    }

    /// Dump block `t` as CSV: one row per sensing subcarrier, `re,im` pairs per receive element.
    pub fn write_block_csv<W: Write>(&self, t: usize, out: W) -> csv::Result<()> {
        let y = &self.blocks[t];
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        let mut header = vec!["subcarrier".to_string()];
        for m in 0..y.ncols() {
            header.push(format!("re_{m}"));
            header.push(format!("im_{m}"));
        }
        w.write_record(&header)?;
        for (row, &n) in self.allocation().indices().iter().enumerate() {
            let mut rec = vec![n.to_string()];
            for m in 0..y.ncols() {
                rec.push(y[(row, m)].re.to_string());
                rec.push(y[(row, m)].im.to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_dims(
    scene: &[MultipathComponent],
    symbols: &SymbolGrid,
    mode: SensingMode,
    rx_array: &UniformLinearArray,
    tx_array: &UniformLinearArray,
    grid: &DelayGrid,
    timing_offset: usize,
) -> Result<()> {
    if symbols.tx_antennas() != tx_array.num_elements() {
        return Err(Error::invalid(format!(
            "symbols carry {} antennas per source but the transmit array has {}",
            symbols.tx_antennas(),
            tx_array.num_elements()
        )));
    }
    if mode == SensingMode::Downlink && tx_array.num_elements() != rx_array.num_elements() {
        return Err(Error::invalid(format!(
            "downlink sensing needs M_T = M (got M_T = {}, M = {})",
            tx_array.num_elements(),
            rx_array.num_elements()
        )));
    }
    for p in scene {
        if p.source_id >= symbols.num_sources() {
            return Err(Error::invalid(format!(
                "path from source {} but symbols cover {} sources",
                p.source_id,
                symbols.num_sources()
            )));
        }
        if p.delay_bin + timing_offset >= grid.num_bins {
            return Err(Error::OutOfRange {
                what: "delay bin",
                value: p.delay_bin + timing_offset,
                limit: grid.num_bins,
            });
        }
    }
    Ok(())
}

fn doppler_phase(doppler_hz: f64, t: usize, block_period_s: f64) -> Complex64 {
    Complex64::from_polar(1.0, 2.0 * PI * t as f64 * doppler_hz * block_period_s)
}

/// Synthesize `y_{n,t}` for every sensing subcarrier and block by summing
/// the paths directly, then add circular complex Gaussian noise.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_received(
    scene: &[MultipathComponent],
    symbols: &SymbolGrid,
    ofdm: &OfdmConfig,
    mode: SensingMode,
    rx_array: &UniformLinearArray,
    tx_array: &UniformLinearArray,
    grid: &DelayGrid,
    params: &SynthesisParams,
) -> Result<SensingMeasurement> {
    ofdm.validate()?;
    grid.validate_for(ofdm)?;
    let offset = match mode {
        SensingMode::Uplink => params.uplink_timing_offset_bins,
        SensingMode::Downlink => 0,
    };
    check_dims(scene, symbols, mode, rx_array, tx_array, grid, offset)?;

    let n_total = ofdm.num_subcarriers as f64;
    let m_t = tx_array.num_elements();
    let tx_amplitude = params
        .tx_power_dbm
        .map_or(1.0, |p| (dbm_to_mw(p) / (n_total * m_t as f64)).sqrt());
    let noise_var = params.noise_dbm_total.map_or(0.0, |p| dbm_to_mw(p) / n_total);
    let t_s = ofdm.block_period_s();
    let ns = symbols.allocation().len();
    let m = rx_array.num_elements();
    let g_n = (grid.oversampling * ofdm.num_subcarriers) as f64;

    // per-path steering vectors are reused across every (n, t)
    let rx_steer: Vec<_> = scene.iter().map(|p| rx_array.steering_vector(p.aoa)).collect::<Result<_>>()?;
    let tx_steer: Vec<_> = scene.iter().map(|p| tx_array.steering_vector(p.aod)).collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let normal = Normal::new(0.0, (noise_var / 2.0).sqrt()).expect("finite noise std");

    let blocks = (0..symbols.num_blocks())
        .map(|t| {
            let mut y = CMatrix::zeros(ns, m);
            for (pi, p) in scene.iter().enumerate() {
                let common = p.amplitude * tx_amplitude * doppler_phase(p.doppler_hz, t, t_s);
                let bin = (p.delay_bin + offset) as f64;
                for (row, &n) in symbols.allocation().indices().iter().enumerate() {
                    let delay = Complex64::from_polar(1.0, -2.0 * PI * n as f64 * bin / g_n);
                    let x = symbols.source_symbols(t, row, p.source_id);
                    let tx_gain: Complex64 = tx_steer[pi].iter().zip(x).map(|(a, s)| a * s).sum();
                    let coeff = common * delay * tx_gain;
                    for (col, a) in rx_steer[pi].iter().enumerate() {
                        y[(row, col)] += coeff * a;
                    }
                }
            }
            if noise_var > 0.0 {
                for row in 0..ns {
                    for col in 0..m {
                        y[(row, col)] += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
                    }
                }
            }
            y
        })
        .collect();

    Ok(SensingMeasurement {
        blocks,
        symbols: symbols.clone(),
        mode,
        grid: *grid,
        ofdm: *ofdm,
        rx_array: *rx_array,
        tx_array: *tx_array,
        noise_variance_per_subcarrier: noise_var,
        tx_amplitude,
    })
}

/// Sensing matrix of block `t`: row for subcarrier `n` is
/// `x_{n,t}ᵀ·(c_nᵀ ⊗ I_{M_T·K})`, i.e. column `ℓ·M_T·K + i` holds `c_n[ℓ]·x_{n,t}[i]`.
pub fn build_sensing_matrix(symbols: &SymbolGrid, t: usize, grid: &DelayGrid, num_subcarriers: usize) -> CMatrix {
    let bs = symbols.vector_len();
    let alloc = symbols.allocation();
    let mut w = CMatrix::zeros(alloc.len(), bs * grid.num_bins);
    for (row, &n) in alloc.indices().iter().enumerate() {
        let c = delay_phase_vector(n, grid.num_bins, grid.oversampling, num_subcarriers);
        let x = symbols.symbols(t, row);
        for (l, cl) in c.iter().enumerate() {
            for (i, xi) in x.iter().enumerate() {
                w[(row, l * bs + i)] = cl * xi;
            }
        }
    }
    w
}

/// Gram entries of a sensing matrix from its Kronecker structure:
/// `⟨w_{ℓ,a}, w_{ℓ',b}⟩ = Σ_n e^{j2πn(ℓ−ℓ')/(g·N)}·conj(x_n[a])·x_n[b]`,
/// which depends on the bins only through `ℓ − ℓ'`.
#[derive(Debug, Clone)]
pub struct DelayGram {
    block_size: usize,
    num_bins: usize,
    // lag δ ∈ (−N_p, N_p) at offset (δ + N_p − 1)·bs²
    lags: Vec<Complex64>,
}

impl DelayGram {
    pub fn new(symbols: &SymbolGrid, t: usize, grid: &DelayGrid, num_subcarriers: usize) -> Self {
        let bs = symbols.vector_len();
        let np = grid.num_bins;
        let span = 2 * np - 1;
        let mut lags = vec![Complex64::new(0.0, 0.0); span * bs * bs];
        let g_n = (grid.oversampling * num_subcarriers) as f64;
        let mut outer = vec![Complex64::new(0.0, 0.0); bs * bs];
        for (row, &n) in symbols.allocation().indices().iter().enumerate() {
            let x = symbols.symbols(t, row);
            for a in 0..bs {
                for b in 0..bs {
                    outer[a * bs + b] = x[a].conj() * x[b];
                }
            }
            for d in 0..span {
                let delta = d as f64 - (np - 1) as f64;
                let phase = Complex64::from_polar(1.0, 2.0 * PI * n as f64 * delta / g_n);
                let dst = &mut lags[d * bs * bs..(d + 1) * bs * bs];
                for (acc, o) in dst.iter_mut().zip(&outer) {
                    *acc += phase * o;
                }
            }
        }
        Self {
            block_size: bs,
            num_bins: np,
            lags,
        }
    }
}

impl ColumnGram for DelayGram {
    fn inner(&self, i: usize, j: usize) -> Complex64 {
        let bs = self.block_size;
        let (li, a) = (i / bs, i % bs);
        let (lj, b) = (j / bs, j % bs);
        let d = li + self.num_bins - 1 - lj;
        self.lags[d * bs * bs + a * bs + b]
    }
}

/// Ground-truth `V·Aᵀ` for block `t`: `N_p` stacked blocks of
/// `M_T·K × M`; source `k`'s rows of bin `ℓ` hold
/// `s·b·e^{j2πt·f_D·T_s}·a(M_T, θ)·aᵀ(M, φ)` summed over its paths in that bin.
#[allow(clippy::too_many_arguments)]
pub fn block_coefficients(
    scene: &[MultipathComponent],
    num_sources: usize,
    rx_array: &UniformLinearArray,
    tx_array: &UniformLinearArray,
    grid: &DelayGrid,
    t: usize,
    block_period_s: f64,
    tx_amplitude: f64,
) -> Result<CMatrix> {
    let (m, m_t) = (rx_array.num_elements(), tx_array.num_elements());
    let bs = m_t * num_sources;
    let mut g = CMatrix::zeros(bs * grid.num_bins, m);
    for p in scene {
        if p.source_id >= num_sources || p.delay_bin >= grid.num_bins {
            return Err(Error::invalid(format!(
                "path (source {}, bin {}) outside {} sources × {} bins",
                p.source_id, p.delay_bin, num_sources, grid.num_bins
            )));
        }
        let outer = tx_array.steering_vector(p.aod)? * rx_array.steering_vector(p.aoa)?.transpose()
            * (p.amplitude * tx_amplitude * doppler_phase(p.doppler_hz, t, block_period_s));
        let r0 = p.delay_bin * bs + p.source_id * m_t;
        let mut view = g.view_mut((r0, 0), (m_t, m));
        view += outer;
    }
    Ok(g)
}
