//! Block-sparse multiple-measurement-vector recovery.
//!
//! Solves `Y ≈ W·X` where `X` is made of `N_p` row blocks of `block_size`
//! rows (one per delay bin) and only a few blocks are nonzero. The reference
//! solver is block orthogonal matching pursuit: each iteration picks the
//! bin whose columns correlate best with the residual, then jointly re-fits
//! every selected block by least squares.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::CMatrix;

/// When block-OMP stops adding blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StoppingRule {
    /// Select exactly this many blocks (or fewer if the residual vanishes).
    FixedSparsity(usize),
    /// Stop once `‖R‖_F ≤ ε·‖Y‖_F`.
    ResidualRatio(f64),
    /// Stop when one more block improves `‖R‖_F` by less than the relative
    /// amount `δ`; that last block is discarded.
    Plateau(f64),
}

impl Default for StoppingRule {
    fn default() -> Self {
        StoppingRule::ResidualRatio(1e-9)
    }
}

impl fmt::Display for StoppingRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StoppingRule::FixedSparsity(l) => write!(f, "fixed:{l}"),
            StoppingRule::ResidualRatio(e) => write!(f, "residual:{e:e}"),
            StoppingRule::Plateau(d) => write!(f, "plateau:{d}"),
        }
    }
}

impl FromStr for StoppingRule {
    type Err = Error;

    /// `fixed:<L>`, `residual:<eps>` or `plateau:<delta>`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s
            .trim()
            .split_once(':')
            .ok_or_else(|| Error::config(format!("stopping rule '{s}' needs the form kind:value")))?;
        let bad = |e: &dyn fmt::Display| Error::config(format!("stopping rule '{s}': {e}"));
        let rule = match kind {
            "fixed" => StoppingRule::FixedSparsity(arg.parse().map_err(|e| bad(&e))?),
            "residual" => StoppingRule::ResidualRatio(arg.parse().map_err(|e| bad(&e))?),
            "plateau" => StoppingRule::Plateau(arg.parse().map_err(|e| bad(&e))?),
            _ => return Err(Error::config(format!("unknown stopping rule '{kind}'"))),
        };
        match rule {
            StoppingRule::ResidualRatio(v) | StoppingRule::Plateau(v) if !(v.is_finite() && v >= 0.0) => {
                Err(Error::config(format!("stopping rule '{s}' needs a non-negative threshold")))
            }
            _ => Ok(rule),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolverOptions {
    pub stop: StoppingRule,
    /// Cap on selected blocks. Defaults to `min(N_p, N_s / block_size)`.
    pub max_iterations: Option<usize>,
}

impl SolverOptions {
    pub fn new(stop: StoppingRule) -> Self {
        Self {
            stop,
            max_iterations: None,
        }
    }
}

/// One recovered delay-bin block `Ĝ_ℓ = V_ℓ·Aᵀ` (`block_size × M`).
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredBlock {
    pub bin: usize,
    pub coefficients: CMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSolution {
    /// Nonzero blocks, strictly increasing in bin.
    pub blocks: Vec<RecoveredBlock>,
    pub residual_norm: f64,
    /// Number of greedy selection steps taken (0 for a plain re-fit).
    pub iterations: usize,
    /// `‖R‖_F` after each selection step, starting with `‖Y‖_F`.
    pub residual_history: Vec<f64>,
}

impl BlockSolution {
    pub fn bins(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.bin).collect()
    }

    pub fn block(&self, bin: usize) -> Option<&CMatrix> {
        self.blocks
            .binary_search_by_key(&bin, |b| b.bin)
            .ok()
            .map(|i| &self.blocks[i].coefficients)
    }
}

/// Anything that can recover block-sparse coefficients from `Y ≈ W·X`.
pub trait BlockSparseSolver {
    fn solve(&self, w: &CMatrix, y: &CMatrix, block_size: usize) -> Result<BlockSolution>;
}

/// Block orthogonal matching pursuit.
#[derive(Debug, Clone, Copy, Default)]
pub struct BlockOmp {
    pub options: SolverOptions,
}

impl BlockSparseSolver for BlockOmp {
    fn solve(&self, w: &CMatrix, y: &CMatrix, block_size: usize) -> Result<BlockSolution> {
        solve_block_mmv(w, y, block_size, &self.options)
    }
}

/// Inner products `⟨w_i, w_j⟩ = w_iᴴ·w_j` between dictionary columns.
///
/// The solver only needs these to grow its least-squares factor; a
/// dictionary with known structure can supply them without touching the
/// full columns.
pub trait ColumnGram: Sync {
    fn inner(&self, i: usize, j: usize) -> Complex64;
}

/// Gram entries computed directly from the columns of `W`.
pub struct DenseGram<'a>(pub &'a CMatrix);

impl ColumnGram for DenseGram<'_> {
    fn inner(&self, i: usize, j: usize) -> Complex64 {
        dotc(column(self.0, i), column(self.0, j))
    }
}

// Relative Schur-complement floor below which a new column is treated as
// lying in the span of the already selected ones.
const RANK_TOL: f64 = 1e-10;

/// Cholesky factor of the Gram matrix of the selected columns, grown one
/// column at a time.
fn column(w: &CMatrix, j: usize) -> &[Complex64] {
    let n = w.nrows();
    &w.as_slice()[j * n..(j + 1) * n]
}

/// `aᴴ·b` with split accumulators so the loop vectorizes.
fn dotc(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    let mut re = [0.0f64; 4];
    let mut im = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x4, y4) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            re[k] += x4[k].re * y4[k].re + x4[k].im * y4[k].im;
            im[k] += x4[k].re * y4[k].im - x4[k].im * y4[k].re;
        }
    }
    let mut acc = Complex64::new(re.iter().sum(), im.iter().sum());
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        acc += x.conj() * y;
    }
    acc
}

struct GrowingCholesky {
    // row i holds L[i][0..=i]
    rows: Vec<Vec<Complex64>>,
}

impl GrowingCholesky {
    fn new() -> Self {
        Self { rows: Vec::new() }
    }

    fn len(&self) -> usize {
        self.rows.len()
    }

    /// Append a column with Gram entries `g = W_sᴴ·w_new` and `‖w_new‖²`.
    /// Returns false when the column is numerically dependent.
    fn push(&mut self, g: &[Complex64], self_energy: f64) -> bool {
        let n = self.rows.len();
        // r = L⁻¹ g; the new row is conj(r)
        let mut r = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..n {
            let row = &self.rows[i];
            let acc: Complex64 = (0..i).map(|k| row[k] * r[k]).sum();
            r[i] = (g[i] - acc) / row[i].re;
        }
        let d2 = self_energy - r.iter().map(|z| z.norm_sqr()).sum::<f64>();
        if !(d2 > RANK_TOL * self_energy) {
            return false;
        }
        let mut row: Vec<Complex64> = r.into_iter().map(|z| z.conj()).collect();
        row.push(Complex64::new(d2.sqrt(), 0.0));
        self.rows.push(row);
        true
    }

    fn truncate(&mut self, n: usize) {
        self.rows.truncate(n);
    }

    /// Solve `L·Lᴴ·X = B` for `B` with `len()` rows.
    fn solve(&self, b: &CMatrix) -> CMatrix {
        let n = self.len();
        let mut z = b.clone();
        for i in 0..n {
            let row = &self.rows[i];
            for c in 0..z.ncols() {
                let acc: Complex64 = (0..i).map(|k| row[k] * z[(k, c)]).sum();
                z[(i, c)] = (z[(i, c)] - acc) / row[i].re;
            }
        }
        for i in (0..n).rev() {
            let diag = self.rows[i][i].re;
            for c in 0..z.ncols() {
                let acc: Complex64 = (i + 1..n).map(|k| self.rows[k][i].conj() * z[(k, c)]).sum();
                z[(i, c)] = (z[(i, c)] - acc) / diag;
            }
        }
        z
    }
}

/// Least-squares state over a growing set of selected blocks.
struct Fit<'a> {
    w: &'a CMatrix,
    gram: &'a dyn ColumnGram,
    y: &'a CMatrix,
    block_size: usize,
    bins: Vec<usize>,
    columns: Vec<usize>,
    chol: GrowingCholesky,
    // W_sᴴ·Y, one row per selected column
    wh_y: Vec<Vec<Complex64>>,
    coefficients: CMatrix,
    residual: CMatrix,
}

impl<'a> Fit<'a> {
    fn new(w: &'a CMatrix, gram: &'a dyn ColumnGram, y: &'a CMatrix, block_size: usize) -> Self {
        Self {
            w,
            gram,
            y,
            block_size,
            bins: Vec::new(),
            columns: Vec::new(),
            chol: GrowingCholesky::new(),
            wh_y: Vec::new(),
            coefficients: CMatrix::zeros(0, y.ncols()),
            residual: y.clone(),
        }
    }

    fn add_block(&mut self, bin: usize) -> Result<()> {
        for j in bin * self.block_size..(bin + 1) * self.block_size {
            let col = column(self.w, j);
            let g: Vec<Complex64> = self.columns.iter().map(|&p| self.gram.inner(p, j)).collect();
            let energy = self.gram.inner(j, j).re;
            if !self.chol.push(&g, energy) {
                let mut bins = self.bins.clone();
                bins.push(bin);
                bins.sort_unstable();
                return Err(Error::IllConditioned { bins });
            }
            self.columns.push(j);
            self.wh_y
                .push((0..self.y.ncols()).map(|c| dotc(col, column(self.y, c))).collect());
        }
        self.bins.push(bin);
        Ok(())
    }

    fn remove_last_block(&mut self) {
        self.bins.pop();
        let n = self.columns.len() - self.block_size;
        self.columns.truncate(n);
        self.wh_y.truncate(n);
        self.chol.truncate(n);
    }

    fn refit(&mut self) {
        let n = self.columns.len();
        let m = self.y.ncols();
        let rhs = CMatrix::from_fn(n, m, |i, c| self.wh_y[i][c]);
        self.coefficients = self.chol.solve(&rhs);
        let mut r = self.y.clone();
        for (i, &j) in self.columns.iter().enumerate() {
            let col = self.w.column(j);
            for c in 0..m {
                let x = self.coefficients[(i, c)];
                if x != Complex64::new(0.0, 0.0) {
                    r.column_mut(c).axpy(-x, &col, Complex64::new(1.0, 0.0));
                }
            }
        }
        self.residual = r;
    }

    fn into_solution(self, iterations: usize, residual_history: Vec<f64>) -> BlockSolution {
        let bs = self.block_size;
        let mut blocks: Vec<RecoveredBlock> = self
            .bins
            .iter()
            .enumerate()
            .map(|(k, &bin)| RecoveredBlock {
                bin,
                coefficients: self.coefficients.rows(k * bs, bs).into_owned(),
            })
            .collect();
        blocks.sort_by_key(|b| b.bin);
        BlockSolution {
            blocks,
            residual_norm: self.residual.norm(),
            iterations,
            residual_history,
        }
    }
}

fn check_system(w: &CMatrix, y: &CMatrix, block_size: usize) -> Result<usize> {
    if block_size == 0 || w.ncols() % block_size != 0 || w.ncols() == 0 {
        return Err(Error::invalid(format!(
            "sensing matrix has {} columns, not a positive multiple of block size {block_size}",
            w.ncols()
        )));
    }
    if w.nrows() != y.nrows() {
        return Err(Error::invalid(format!(
            "sensing matrix has {} rows but the observation has {}",
            w.nrows(),
            y.nrows()
        )));
    }
    Ok(w.ncols() / block_size)
}

/// Greedy block-OMP solve of `Y ≈ W·X`.
///
/// Selection metric for bin ℓ is `‖W_ℓᴴ·R‖_F / ‖W_ℓ‖_F`; equal metrics go to
/// the lowest bin.
pub fn solve_block_mmv(w: &CMatrix, y: &CMatrix, block_size: usize, options: &SolverOptions) -> Result<BlockSolution> {
    solve_block_mmv_with_gram(w, &DenseGram(w), y, block_size, options)
}

/// [`solve_block_mmv`] with Gram entries taken from `gram`, which must agree
/// with the columns of `w`.
pub fn solve_block_mmv_with_gram(
    w: &CMatrix,
    gram: &dyn ColumnGram,
    y: &CMatrix,
    block_size: usize,
    options: &SolverOptions,
) -> Result<BlockSolution> {
    let num_bins = check_system(w, y, block_size)?;
    let y_norm = y.norm();
    let cap = options
        .max_iterations
        .unwrap_or(usize::MAX)
        .min(num_bins)
        .min(w.nrows() / block_size);

    let block_norms: Vec<f64> = (0..num_bins)
        .map(|l| w.columns(l * block_size, block_size).norm())
        .collect();

    let mut fit = Fit::new(w, gram, y, block_size);
    let mut history = vec![y_norm];
    let mut selected = vec![false; num_bins];
    let mut iterations = 0;

    if y_norm == 0.0 {
        return Ok(fit.into_solution(0, history));
    }

    while fit.bins.len() < cap {
        if let StoppingRule::FixedSparsity(l) = options.stop {
            if fit.bins.len() >= l {
                break;
            }
        }
        let mut best: Option<(usize, f64)> = None;
        for l in (0..num_bins).filter(|&l| !selected[l] && block_norms[l] > 0.0) {
            let mut energy = 0.0;
            for j in l * block_size..(l + 1) * block_size {
                let col = column(w, j);
                for c in 0..fit.residual.ncols() {
                    energy += dotc(col, column(&fit.residual, c)).norm_sqr();
                }
            }
            let metric = energy.sqrt() / block_norms[l];
            if best.is_none_or(|(_, m)| metric > m) {
                best = Some((l, metric));
            }
        }
        let Some((bin, metric)) = best else { break };
        if metric == 0.0 {
            break;
        }

        iterations += 1;
        let prev = *history.last().expect("history starts with ‖Y‖");
        fit.add_block(bin)?;
        selected[bin] = true;
        fit.refit();
        let norm = fit.residual.norm();

        match options.stop {
            StoppingRule::Plateau(delta) if prev > 0.0 && (prev - norm) / prev < delta => {
                fit.remove_last_block();
                fit.refit();
                history.push(fit.residual.norm());
                break;
            }
            StoppingRule::ResidualRatio(eps) if norm <= eps * y_norm => {
                history.push(norm);
                break;
            }
            _ => history.push(norm),
        }
        if norm == 0.0 {
            break;
        }
    }
    Ok(fit.into_solution(iterations, history))
}

/// Least-squares fit of `Y` on a fixed set of bins.
pub fn refit_support(w: &CMatrix, y: &CMatrix, block_size: usize, bins: &[usize]) -> Result<BlockSolution> {
    refit_support_with_gram(w, &DenseGram(w), y, block_size, bins)
}

/// [`refit_support`] with Gram entries taken from `gram`.
pub fn refit_support_with_gram(
    w: &CMatrix,
    gram: &dyn ColumnGram,
    y: &CMatrix,
    block_size: usize,
    bins: &[usize],
) -> Result<BlockSolution> {
    let num_bins = check_system(w, y, block_size)?;
    let mut sorted = bins.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if let Some(&b) = sorted.iter().find(|&&b| b >= num_bins) {
        return Err(Error::OutOfRange {
            what: "delay bin",
            value: b,
            limit: num_bins,
        });
    }
    if sorted.len() * block_size > w.nrows() {
        return Err(Error::invalid(format!(
            "{} blocks of {block_size} columns exceed {} measurements",
            sorted.len(),
            w.nrows()
        )));
    }
    let mut fit = Fit::new(w, gram, y, block_size);
    for &b in &sorted {
        fit.add_block(b)?;
    }
    fit.refit();
    let norm = fit.residual.norm();
    Ok(fit.into_solution(0, vec![y.norm(), norm]))
}
