#![allow(dead_code)]

use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pmn_sensing::measurement::{block_coefficients, synthesize_received, SynthesisParams};
use pmn_sensing::waveform::{generate_symbols, make_allocation};
use pmn_sensing::{
    AllocationPattern, CMatrix, Complex64, DelayGrid, MultipathComponent, OfdmConfig, SensingMeasurement, SensingMode,
    UniformLinearArray,
};

/// Shape of a synthetic instance.
#[derive(Debug, Clone)]
pub struct Spec {
    pub num_subcarriers: usize,
    pub allocation: AllocationPattern,
    pub sources: usize,
    pub rx: usize,
    pub tx: usize,
    pub bins: usize,
    pub oversampling: usize,
    pub blocks: usize,
    pub paths: usize,
    /// No two paths share a bin, even across sources.
    pub globally_distinct: bool,
}

impl Spec {
    pub fn small(paths: usize) -> Self {
        Self {
            num_subcarriers: 64,
            allocation: AllocationPattern::Full,
            sources: 2,
            rx: 4,
            tx: 1,
            bins: 16,
            oversampling: 1,
            blocks: 1,
            paths,
            globally_distinct: true,
        }
    }

    pub fn ofdm(&self) -> OfdmConfig {
        OfdmConfig {
            num_subcarriers: self.num_subcarriers,
            ..OfdmConfig::default()
        }
    }

    pub fn mode(&self) -> SensingMode {
        if self.tx == self.rx {
            SensingMode::Downlink
        } else {
            SensingMode::Uplink
        }
    }

    pub fn block_size(&self) -> usize {
        self.sources * self.tx
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_scene(spec: &Spec, rng: &mut ChaCha8Rng) -> Vec<MultipathComponent> {
    let mut scene = Vec::with_capacity(spec.paths);
    let owners: Vec<usize> = (0..spec.paths).map(|_| rng.random_range(0..spec.sources)).collect();
    let bins: Vec<usize> = if spec.globally_distinct {
        sample(rng, spec.bins, spec.paths).into_vec()
    } else {
        let mut used = vec![Vec::new(); spec.sources];
        owners
            .iter()
            .map(|&k| loop {
                let b = rng.random_range(0..spec.bins);
                if !used[k].contains(&b) {
                    used[k].push(b);
                    break b;
                }
            })
            .collect()
    };
    for (&source_id, &delay_bin) in owners.iter().zip(&bins) {
        scene.push(MultipathComponent {
            source_id,
            delay_bin,
            doppler_hz: rng.random_range(0.0..600.0),
            aoa: rng.random_range(-1.3..1.3),
            aod: rng.random_range(-1.3..1.3),
            amplitude: Complex64::from_polar(rng.random_range(0.5..1.5), rng.random_range(0.0..2.0 * PI)),
        });
    }
    scene
}

pub fn arrays(spec: &Spec) -> (UniformLinearArray, UniformLinearArray) {
    (
        UniformLinearArray::half_wavelength(spec.rx).unwrap(),
        UniformLinearArray::half_wavelength(spec.tx).unwrap(),
    )
}

pub fn grid(spec: &Spec) -> DelayGrid {
    DelayGrid::new(spec.oversampling, spec.bins).unwrap()
}

/// Observation of `scene` with unit-amplitude QPSK symbols.
pub fn observe(spec: &Spec, scene: &[MultipathComponent], seed: u64, noise_dbm_total: Option<f64>) -> SensingMeasurement {
    let ofdm = spec.ofdm();
    let alloc = make_allocation(spec.allocation, spec.num_subcarriers).unwrap();
    let symbols = generate_symbols(spec.sources, spec.tx, &alloc, spec.blocks, seed).unwrap();
    let (rx, tx) = arrays(spec);
    let params = SynthesisParams {
        noise_dbm_total,
        seed: seed ^ 0x5eed,
        ..SynthesisParams::default()
    };
    synthesize_received(scene, &symbols, &ofdm, spec.mode(), &rx, &tx, &grid(spec), &params).unwrap()
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn columns_of(bins: &[usize], bs: usize) -> Vec<usize> {
    bins.iter().flat_map(|&b| b * bs..(b + 1) * bs).collect()
}

/// Residual norm of the least-squares fit of `y` on the given bins, by SVD.
pub fn lstsq_residual(w: &CMatrix, y: &CMatrix, bs: usize, bins: &[usize]) -> f64 {
    let cols = columns_of(bins, bs);
    let sub = w.select_columns(&cols);
    let x = sub.clone().svd(true, true).solve(y, 1e-12).unwrap();
    (y - sub * x).norm()
}

pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::new(), &mut out);
    out
}

pub fn exhaustive_support(w: &CMatrix, y: &CMatrix, bs: usize, k: usize) -> Vec<usize> {
    let nb = w.ncols() / bs;
    subsets(nb, k)
        .into_iter()
        .map(|s| (lstsq_residual(w, y, bs, &s), s))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap()
        .1
}

pub fn true_bins(scene: &[MultipathComponent]) -> Vec<usize> {
    let mut bins: Vec<usize> = scene.iter().map(|p| p.delay_bin).collect();
    bins.sort_unstable();
    bins.dedup();
    bins
}

/// Largest relative deviation between the synthesized observation and
/// `W·G` assembled from ground truth, over every block of one random instance.
pub fn identity_error(trial: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut spec = Spec::small(1 + trial % 6);
    spec.num_subcarriers = [32, 64, 128][trial % 3];
    spec.allocation = [
        AllocationPattern::Full,
        AllocationPattern::Interleaved { step: 2 },
        AllocationPattern::Random { count: 20, seed: trial as u64 },
    ][trial % 3];
    spec.sources = 1 + trial % 4;
    spec.tx = if trial % 2 == 0 { 1 } else { spec.rx };
    spec.oversampling = 1 + trial % 2;
    spec.blocks = 2;
    spec.globally_distinct = false;
    let scene = random_scene(&spec, rng);
    let meas = observe(&spec, &scene, trial as u64, None);
    let (rx, tx) = arrays(&spec);
    (0..spec.blocks)
        .map(|t| {
            let g = block_coefficients(&scene, spec.sources, &rx, &tx, &grid(&spec), t, meas.ofdm.block_period_s(), meas.tx_amplitude)
                .unwrap();
            max_abs(&(&meas.blocks[t] - meas.sensing_matrix(t) * g)) / max_abs(&meas.blocks[t])
        })
        .fold(0.0, f64::max)
}

/// Records one named check and its verdict for the acceptance report.
pub struct Verdicts(pub Vec<(String, bool, String)>);

impl Verdicts {
    pub fn record(&mut self, name: &str, pass: bool, detail: String) {
        println!("[{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.0.push((name.to_string(), pass, detail));
    }
}
