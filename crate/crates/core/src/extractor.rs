//! From recovered delay-bin blocks to physical path estimates.
//!
//! Each block `Ĝ_ℓ` stacks `K` sub-blocks `B_{ℓ,k}` of size `M_T × M`. A
//! single path gives `B = b·e^{j2πt·f_D·T_s}·a(M_T, θ)·aᵀ(M, φ)`, so:
//!
//! * the source is whichever sub-block carries energy,
//! * AoA (AoD) is the phase of the lag-1 correlation across columns (rows),
//! * Doppler is the phase advance of `B` from one OFDM block to the next,
//! * `|b|` is the RMS entry or, better, the root of the lag-1 correlation
//!   magnitude, where uncorrelated noise averages out.
//!
//! Several paths sharing one bin and one source break the rank-1 structure;
//! those are separated by beam scanning over receive angles.

use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;

use crate::array::{beam_scan, sin_uniform_grid, wrap_phase, UniformLinearArray, DEFAULT_SCAN_POINTS};
use crate::error::{Error, Result};
use crate::measurement::SensingMeasurement;
use crate::solver::BlockSolution;
use crate::CMatrix;

/// One estimated propagation path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEstimate {
    pub source_id: usize,
    pub delay_bin: usize,
    /// Total signal travelling distance `c·ℓ/(g·B)`.
    pub distance_m: f64,
    /// Receive sin-domain phase κ·sin(φ), wrapped to (-π, π].
    pub aoa_phase: f64,
    /// AoA in radians from broadside.
    pub aoa: f64,
    /// Transmit sin-domain phase; absent when the source has one antenna.
    pub aod_phase: Option<f64>,
    pub aod: Option<f64>,
    /// Absent when fewer than two OFDM blocks were observed.
    pub doppler_hz: Option<f64>,
    /// Estimated `|b|` (cross-correlation based when available).
    pub magnitude: f64,
    /// RMS-entry estimate of `|b|`; biased upward by noise.
    pub power_score: f64,
    /// An angle had `|ψ/κ| > 1` and was clamped to endfire.
    pub angle_clamped: bool,
}

/// A sub-block attributed to one source.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceBlock {
    pub source: usize,
    pub block: CMatrix,
    pub energy: f64,
}

fn check_partition(rows: usize, num_sources: usize, tx_antennas: usize) -> Result<()> {
    if num_sources == 0 || tx_antennas == 0 || rows != num_sources * tx_antennas {
        return Err(Error::invalid(format!(
            "block with {rows} rows cannot be split into {num_sources} sources × {tx_antennas} antennas"
        )));
    }
    Ok(())
}

/// Split `G` into its `K` sub-blocks and keep those whose energy is at least
/// `eta` times the strongest.
pub fn identify_source(g: &CMatrix, num_sources: usize, tx_antennas: usize, eta: f64) -> Result<Vec<SourceBlock>> {
    Ok(identify_sources_over_blocks(std::slice::from_ref(g), num_sources, tx_antennas, eta)?
        .into_iter()
        .map(|mut s| SourceBlock {
            source: s.source,
            block: s.blocks.remove(0),
            energy: s.energy,
        })
        .collect())
}

/// Sub-blocks of one source across several OFDM blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceTrack {
    pub source: usize,
    pub blocks: Vec<CMatrix>,
    /// Energy summed over all blocks.
    pub energy: f64,
}

/// [`identify_source`] over the same bin observed in several OFDM blocks;
/// energies are summed across blocks before thresholding.
pub fn identify_sources_over_blocks(
    gs: &[CMatrix],
    num_sources: usize,
    tx_antennas: usize,
    eta: f64,
) -> Result<Vec<SourceTrack>> {
    let Some(first) = gs.first() else {
        return Ok(Vec::new());
    };
    for g in gs {
        check_partition(g.nrows(), num_sources, tx_antennas)?;
        if g.shape() != first.shape() {
            return Err(Error::invalid("blocks over time differ in shape"));
        }
    }
    let tracks: Vec<SourceTrack> = (0..num_sources)
        .map(|k| {
            let blocks: Vec<CMatrix> = gs
                .iter()
                .map(|g| g.rows(k * tx_antennas, tx_antennas).into_owned())
                .collect();
            let energy = blocks.iter().map(|b| b.norm_squared()).sum();
            SourceTrack { source: k, blocks, energy }
        })
        .collect();
    let max = tracks.iter().map(|t| t.energy).fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(Vec::new());
    }
    Ok(tracks.into_iter().filter(|t| t.energy >= eta * max).collect())
}

/// Running lag-1 correlations of one or more `M_T × M` sub-blocks.
#[derive(Debug, Clone, Default)]
pub struct LagCorrelation {
    /// Σ conj(B[i,m])·B[i,m+1]
    pub across_columns: Complex64,
    /// Σ |B[i,m]|·|B[i,m+1]|
    pub across_columns_abs: f64,
    pub column_pairs: usize,
    /// Σ conj(B[i,m])·B[i+1,m]
    pub across_rows: Complex64,
    pub row_pairs: usize,
    pub energy: f64,
    pub entries: usize,
}

impl LagCorrelation {
    pub fn of(block: &CMatrix) -> Self {
        let mut lc = Self::default();
        lc.accumulate(block);
        lc
    }

    pub fn accumulate(&mut self, b: &CMatrix) {
        let (rows, cols) = b.shape();
        for i in 0..rows {
            for m in 0..cols {
                let z = b[(i, m)];
                self.energy += z.norm_sqr();
                if m + 1 < cols {
                    let next = b[(i, m + 1)];
                    self.across_columns += z.conj() * next;
                    self.across_columns_abs += z.norm() * next.norm();
                }
                if i + 1 < rows {
                    self.across_rows += z.conj() * b[(i + 1, m)];
                }
            }
        }
        self.entries += rows * cols;
        self.column_pairs += rows * cols.saturating_sub(1);
        self.row_pairs += rows.saturating_sub(1) * cols;
    }

    /// |Σ lag-1 products| / Σ |lag-1 products| across columns: 1 for a
    /// single steering vector, lower when several arrival angles mix.
    pub fn coherence(&self) -> f64 {
        if self.across_columns_abs == 0.0 {
            1.0
        } else {
            self.across_columns.norm() / self.across_columns_abs
        }
    }

    /// `|b|` from the column (else row) correlation magnitude.
    pub fn xcorr_magnitude(&self) -> Option<f64> {
        if self.column_pairs > 0 {
            Some((self.across_columns.norm() / self.column_pairs as f64).sqrt())
        } else if self.row_pairs > 0 {
            Some((self.across_rows.norm() / self.row_pairs as f64).sqrt())
        } else {
            None
        }
    }

    pub fn rms_magnitude(&self) -> f64 {
        if self.entries == 0 {
            0.0
        } else {
            (self.energy / self.entries as f64).sqrt()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleEstimate {
    pub aoa: f64,
    pub aoa_phase: f64,
    pub aod: Option<f64>,
    pub aod_phase: Option<f64>,
    pub clamped: bool,
}

fn angles_from(lc: &LagCorrelation, tx_array: &UniformLinearArray, rx_array: &UniformLinearArray) -> Result<AngleEstimate> {
    if lc.column_pairs == 0 {
        return Err(Error::Unavailable("AoA needs at least two receive elements".into()));
    }
    if lc.energy == 0.0 {
        return Err(Error::Unavailable("AoA of an all-zero block".into()));
    }
    let aoa_phase = lc.across_columns.arg();
    let (aoa, mut clamped) = rx_array.angle_from_phase(aoa_phase);
    let (aod, aod_phase) = if lc.row_pairs > 0 {
        let phase = lc.across_rows.arg();
        let (angle, c) = tx_array.angle_from_phase(phase);
        clamped |= c;
        (Some(angle), Some(phase))
    } else {
        (None, None)
    };
    Ok(AngleEstimate {
        aoa,
        aoa_phase,
        aod,
        aod_phase,
        clamped,
    })
}

/// AoA from lag-1 correlation across columns, AoD across rows (absent when `M_T = 1`).
pub fn estimate_angles(b: &CMatrix, tx_array: &UniformLinearArray, rx_array: &UniformLinearArray) -> Result<AngleEstimate> {
    if b.shape() != (tx_array.num_elements(), rx_array.num_elements()) {
        return Err(Error::invalid(format!(
            "sub-block is {:?}, arrays expect {}×{}",
            b.shape(),
            tx_array.num_elements(),
            rx_array.num_elements()
        )));
    }
    angles_from(&LagCorrelation::of(b), tx_array, rx_array)
}

/// Doppler from the average phase advance between consecutive blocks.
pub fn estimate_doppler(blocks: &[CMatrix], block_period_s: f64) -> Result<f64> {
    if blocks.len() < 2 {
        return Err(Error::Unavailable(format!(
            "Doppler needs at least two OFDM blocks, got {}",
            blocks.len()
        )));
    }
    let acc: Complex64 = blocks
        .windows(2)
        .map(|pair| pair[0].dotc(&pair[1]))
        .sum();
    Ok(acc.arg() / (2.0 * PI * block_period_s))
}

/// RMS entry magnitude, `sqrt(mean |B|²)`.
pub fn estimate_magnitude(b: &CMatrix) -> f64 {
    LagCorrelation::of(b).rms_magnitude()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdRule {
    /// Keep estimates with `magnitude ≥ value`.
    Absolute(f64),
    /// Keep the `k` largest magnitudes.
    TopK(usize),
}

/// Filter candidates; survivors keep their input order.
pub fn threshold_paths(candidates: Vec<PathEstimate>, rule: ThresholdRule) -> Vec<PathEstimate> {
    match rule {
        ThresholdRule::Absolute(min) => candidates.into_iter().filter(|p| p.magnitude >= min).collect(),
        ThresholdRule::TopK(k) => {
            let mut order: Vec<usize> = (0..candidates.len()).collect();
            order.sort_by(|&a, &b| candidates[b].magnitude.total_cmp(&candidates[a].magnitude));
            let mut keep = vec![false; candidates.len()];
            for &i in order.iter().take(k) {
                keep[i] = true;
            }
            candidates
                .into_iter()
                .zip(keep)
                .filter_map(|(p, k)| k.then_some(p))
                .collect()
        }
    }
}

/// One component separated from a same-delay block.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedPath {
    pub aoa: f64,
    pub aoa_phase: f64,
    /// `sqrt(mean |v|²)` of the fitted transmit-side response.
    pub magnitude: f64,
    /// Fitted column `v` with `B ≈ Σ v·aᵀ(M, φ)`; one entry per block row.
    pub response: DVector<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolveOptions {
    pub angle_grid: Vec<f64>,
    /// At most this many components (capped at `M - 1`).
    pub max_components: usize,
    /// Stop adding components once the residual energy falls below this
    /// fraction of the block energy.
    pub residual_floor: f64,
    /// Absolute residual energy regarded as noise; also stops the search.
    pub noise_energy: f64,
    /// Components weaker than this fraction of the strongest are dropped.
    pub min_relative_magnitude: f64,
}

impl Default for ResolveOptions {
    fn default() -> Self {
        Self {
            angle_grid: sin_uniform_grid(DEFAULT_SCAN_POINTS),
            max_components: usize::MAX,
            residual_floor: 1e-3,
            noise_energy: 0.0,
            min_relative_magnitude: 0.25,
        }
    }
}

// Rows of the returned matrix are aᵀ(M, ψ_p).
fn steering_rows(rx: &UniformLinearArray, phases: &[f64]) -> CMatrix {
    let m = rx.num_elements();
    CMatrix::from_fn(phases.len(), m, |p, i| Complex64::from_polar(1.0, phases[p] * i as f64))
}

/// Least-squares fit `B ≈ V·A` for the given receive phases; returns `V`
/// and the residual energy.
fn fit_components(b: &CMatrix, rx: &UniformLinearArray, phases: &[f64]) -> Option<(CMatrix, f64)> {
    let a = steering_rows(rx, phases);
    let gram = &a * a.adjoint();
    let inv = gram.cholesky()?.inverse();
    let v = b * a.adjoint() * inv;
    let resid = (b - &v * &a).norm_squared();
    Some((v, resid))
}

fn polish(b: &CMatrix, rx: &UniformLinearArray, phases: &mut [f64], start_step: f64) {
    let cost = |p: &[f64]| fit_components(b, rx, p).map_or(f64::INFINITY, |(_, r)| r);
    let mut best = cost(phases);
    let mut step = start_step;
    while step > 1e-12 {
        let mut improved = false;
        for p in 0..phases.len() {
            for delta in [step, -step] {
                let old = phases[p];
                phases[p] = old + delta;
                let c = cost(phases);
                if c < best {
                    best = c;
                    improved = true;
                    break;
                }
                phases[p] = old;
            }
        }
        if !improved {
            step /= 2.0;
        }
    }
}

/// Separate paths that share one delay bin and one source.
///
/// Components are found one at a time from the peak of the beam scan of
/// what the current fit leaves unexplained; after each addition all
/// receive phases are refined jointly by least squares, which removes the
/// bias mutual leakage puts on raw scan peaks of small arrays.
pub fn resolve_same_delay(b: &CMatrix, rx_array: &UniformLinearArray, options: &ResolveOptions) -> Result<Vec<ResolvedPath>> {
    let m = rx_array.num_elements();
    if b.ncols() != m {
        return Err(Error::invalid(format!("block has {} columns, array has {m}", b.ncols())));
    }
    if options.angle_grid.is_empty() {
        return Err(Error::invalid("beam-scan angle grid is empty"));
    }
    let total = b.norm_squared();
    if total == 0.0 {
        return Ok(Vec::new());
    }
    let kappa = rx_array.kappa();
    let step = kappa * 2.0 / options.angle_grid.len() as f64;
    let max_components = options.max_components.min(m.saturating_sub(1)).max(1);

    let mut phases: Vec<f64> = Vec::new();
    let mut residual = b.clone();
    while phases.len() < max_components {
        let r_energy = residual.norm_squared();
        if !phases.is_empty() && (r_energy <= options.residual_floor * total || r_energy <= options.noise_energy) {
            break;
        }
        let spectrum = beam_scan(&residual, rx_array, &options.angle_grid)?;
        let g = spectrum
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc })
            .0;
        phases.push(rx_array.sin_phase(options.angle_grid[g]));
        polish(b, rx_array, &mut phases, step);
        match fit_components(b, rx_array, &phases) {
            Some((v, _)) => residual = b - &v * steering_rows(rx_array, &phases),
            None => {
                phases.pop();
                break;
            }
        }
    }

    let (v, _) = fit_components(b, rx_array, &phases).ok_or_else(|| Error::IllConditioned { bins: Vec::new() })?;
    let rows = b.nrows() as f64;
    let mags: Vec<f64> = (0..phases.len()).map(|p| v.column(p).norm() / rows.sqrt()).collect();
    let strongest = mags.iter().cloned().fold(0.0, f64::max);
    let mut out: Vec<ResolvedPath> = phases
        .iter()
        .zip(&mags)
        .enumerate()
        .filter(|(_, (_, &mag))| mag >= options.min_relative_magnitude * strongest)
        .map(|(p, (&phase, &magnitude))| {
            let phase = wrap_phase(phase);
            ResolvedPath {
                aoa: rx_array.angle_from_phase(phase).0,
                aoa_phase: phase,
                magnitude,
                response: v.column(p).into_owned(),
            }
        })
        .collect();
    out.sort_by(|a, b| a.aoa_phase.total_cmp(&b.aoa_phase));
    Ok(out)
}

/// Tunables for [`extract_paths`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionConfig {
    /// Relative source-energy threshold η of [`identify_source`].
    pub source_energy_ratio: f64,
    pub scan_points: usize,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            source_energy_ratio: 0.1,
            scan_points: DEFAULT_SCAN_POINTS,
        }
    }
}

/// Noise variance per observation entry, estimated from the fit residuals.
pub fn residual_noise_variance(meas: &SensingMeasurement, solutions: &[BlockSolution]) -> f64 {
    let ns = meas.allocation().len();
    let m = meas.rx_elements();
    let mut energy = 0.0;
    let mut dof = 0usize;
    for sol in solutions {
        let cols = sol.blocks.len() * meas.block_size();
        if ns > cols {
            energy += sol.residual_norm.powi(2);
            dof += (ns - cols) * m;
        }
    }
    if dof == 0 {
        0.0
    } else {
        energy / dof as f64
    }
}

/// Typical noise magnitude of one recovered coefficient, in `|b|` units.
///
/// A least-squares coefficient over `N_s` unit-modulus rows and `C` fitted
/// columns carries noise variance close to `σ²/(N_s − C)`.
pub fn noise_floor_magnitude(meas: &SensingMeasurement, solutions: &[BlockSolution]) -> f64 {
    let sigma2 = residual_noise_variance(meas, solutions);
    let ns = meas.allocation().len();
    let cols = solutions.iter().map(|s| s.blocks.len() * meas.block_size()).max().unwrap_or(0);
    let dof = if ns > cols { ns - cols } else { ns };
    (sigma2 / dof as f64).sqrt() / meas.tx_amplitude
}

fn split_segments(v: &DVector<Complex64>, num_blocks: usize) -> Vec<CMatrix> {
    let seg = v.len() / num_blocks;
    (0..num_blocks)
        .map(|t| CMatrix::from_fn(seg, 1, |i, _| v[t * seg + i]))
        .collect()
}

/// Turn per-block solutions that share one support into path estimates.
///
/// `solutions[t]` must be the solution for OFDM block `t`. Estimates are
/// aggregated over all blocks; no magnitude threshold is applied here.
pub fn extract_paths(meas: &SensingMeasurement, solutions: &[BlockSolution], cfg: &ExtractionConfig) -> Result<Vec<PathEstimate>> {
    let Some(first) = solutions.first() else {
        return Ok(Vec::new());
    };
    let bins = first.bins();
    if solutions.iter().any(|s| s.bins() != bins) {
        return Err(Error::invalid("per-block solutions must share one support; re-fit on the union first"));
    }
    let (k, m_t) = (meas.num_sources(), meas.tx_antennas());
    let scale = meas.tx_amplitude;
    let t_s = meas.ofdm.block_period_s();
    let t_count = solutions.len();
    let resolve = ResolveOptions {
        angle_grid: sin_uniform_grid(cfg.scan_points),
        ..ResolveOptions::default()
    };
    let floor = noise_floor_magnitude(meas, solutions) * scale;

    let mut out = Vec::new();
    for &bin in &bins {
        let gs: Vec<CMatrix> = solutions
            .iter()
            .map(|s| s.block(bin).expect("bin in support").clone())
            .collect();
        let distance_m = meas.grid.bin_distance_m(bin, meas.ofdm.bandwidth_hz);
        for track in identify_sources_over_blocks(&gs, k, m_t, cfg.source_energy_ratio)? {
            let mut lc = LagCorrelation::default();
            for b in &track.blocks {
                lc.accumulate(b);
            }
            let doppler_hz = estimate_doppler(&track.blocks, t_s).ok();

            if meas.rx_elements() > 1 {
                let refs: Vec<&CMatrix> = track.blocks.iter().collect();
                let stacked = vstack(&refs);
                let opts = ResolveOptions {
                    noise_energy: 2.0 * floor * floor * stacked.len() as f64,
                    ..resolve.clone()
                };
                let comps = resolve_same_delay(&stacked, &meas.rx_array, &opts)?;
                if comps.len() > 1 {
                    for c in comps {
                        let segs = split_segments(&c.response, t_count);
                        let mut tx_lc = LagCorrelation::default();
                        for s in &segs {
                            tx_lc.accumulate(s);
                        }
                        let (aod, aod_phase, clamped) = if m_t > 1 {
                            let phase = tx_lc.across_rows.arg();
                            let (a, cl) = meas.tx_array.angle_from_phase(phase);
                            (Some(a), Some(phase), cl)
                        } else {
                            (None, None, false)
                        };
                        out.push(PathEstimate {
                            source_id: track.source,
                            delay_bin: bin,
                            distance_m,
                            aoa_phase: c.aoa_phase,
                            aoa: c.aoa,
                            aod_phase,
                            aod,
                            doppler_hz: estimate_doppler(&segs, t_s).ok(),
                            magnitude: c.magnitude / scale,
                            power_score: c.magnitude / scale,
                            angle_clamped: clamped,
                        });
                    }
                    continue;
                }
            }

            let angles = if meas.rx_elements() > 1 {
                Some(angles_from(&lc, &meas.tx_array, &meas.rx_array)?)
            } else {
                None
            };
            let power_score = lc.rms_magnitude() / scale;
            out.push(PathEstimate {
                source_id: track.source,
                delay_bin: bin,
                distance_m,
                aoa_phase: angles.map_or(0.0, |a| a.aoa_phase),
                aoa: angles.map_or(0.0, |a| a.aoa),
                aod_phase: angles.and_then(|a| a.aod_phase),
                aod: angles.and_then(|a| a.aod),
                doppler_hz,
                magnitude: lc.xcorr_magnitude().map_or(power_score, |x| x / scale),
                power_score,
                angle_clamped: angles.is_some_and(|a| a.clamped),
            });
        }
    }
    Ok(out)
}

fn vstack(blocks: &[&CMatrix]) -> CMatrix {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = CMatrix::zeros(rows, cols);
    let mut r0 = 0;
    for b in blocks {
        out.view_mut((r0, 0), b.shape()).copy_from(*b);
        r0 += b.nrows();
    }
    out
}
