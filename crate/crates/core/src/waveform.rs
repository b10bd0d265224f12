//! OFDM numerology, subcarrier allocations and the known symbol grid.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::SPEED_OF_LIGHT;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OfdmConfig {
    pub num_subcarriers: usize,
    pub bandwidth_hz: f64,
    /// Cyclic prefix length as a fraction of the useful symbol `N/B`.
    pub cp_fraction: f64,
    pub carrier_hz: f64,
}

impl Default for OfdmConfig {
    fn default() -> Self {
        Self {
            num_subcarriers: 1024,
            bandwidth_hz: 100e6,
            cp_fraction: 0.125,
            carrier_hz: 2.35e9,
        }
    }
}

impl OfdmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_subcarriers == 0 {
            return Err(Error::config("num_subcarriers must be at least 1"));
        }
        for (name, v) in [("bandwidth_hz", self.bandwidth_hz), ("carrier_hz", self.carrier_hz)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.cp_fraction.is_finite() && self.cp_fraction >= 0.0) {
            return Err(Error::config(format!(
                "cp_fraction must be non-negative, got {}",
                self.cp_fraction
            )));
        }
        Ok(())
    }

    /// f0 = B/N.
    pub fn subcarrier_spacing_hz(&self) -> f64 {
        self.bandwidth_hz / self.num_subcarriers as f64
    }

    /// T_p = cp_fraction · N/B.
    pub fn cyclic_prefix_s(&self) -> f64 {
        self.cp_fraction * self.num_subcarriers as f64 / self.bandwidth_hz
    }

    /// T_s = N/B + T_p.
    pub fn block_period_s(&self) -> f64 {
        self.num_subcarriers as f64 / self.bandwidth_hz + self.cyclic_prefix_s()
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }
}

/// How the sensing subcarrier set is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocationPattern {
    Full,
    Interleaved { step: usize },
    Contiguous { start: usize, len: usize },
    Random { count: usize, seed: u64 },
}

impl fmt::Display for AllocationPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AllocationPattern::Full => write!(f, "full"),
            AllocationPattern::Interleaved { step } => write!(f, "interleaved:{step}"),
            AllocationPattern::Contiguous { start, len } => write!(f, "contiguous:{start}:{len}"),
            AllocationPattern::Random { count, seed } => write!(f, "random:{count}:{seed}"),
        }
    }
}

impl FromStr for AllocationPattern {
    type Err = Error;

    /// `full`, `interleaved:<step>`, `contiguous:<start>:<len>`, `random:<count>:<seed>`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |i: usize| -> Result<u64> {
            parts
                .get(i)
                .ok_or_else(|| Error::config(format!("allocation pattern '{s}' is missing a field")))?
                .parse::<u64>()
                .map_err(|e| Error::config(format!("allocation pattern '{s}': {e}")))
        };
        let pattern = match (parts[0], parts.len()) {
            ("full", 1) => AllocationPattern::Full,
            ("interleaved", 2) => AllocationPattern::Interleaved { step: num(1)? as usize },
            ("contiguous", 3) => AllocationPattern::Contiguous {
                start: num(1)? as usize,
                len: num(2)? as usize,
            },
            ("random", 3) => AllocationPattern::Random {
                count: num(1)? as usize,
                seed: num(2)?,
            },
            _ => return Err(Error::config(format!("unknown allocation pattern '{s}'"))),
        };
        Ok(pattern)
    }
}

/// Sorted set of subcarrier indices available for sensing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubcarrierAllocation {
    indices: Vec<usize>,
    pattern: AllocationPattern,
    num_subcarriers: usize,
}

impl SubcarrierAllocation {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn pattern(&self) -> AllocationPattern {
        self.pattern
    }

    pub fn num_subcarriers(&self) -> usize {
        self.num_subcarriers
    }

    pub fn contains(&self, n: usize) -> bool {
        self.indices.binary_search(&n).is_ok()
    }

    /// Allocation from an explicit index list (sorted and deduplicated here).
    pub fn from_indices(mut indices: Vec<usize>, num_subcarriers: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if indices.is_empty() {
            return Err(Error::config("allocation must contain at least one subcarrier"));
        }
        if let Some(&last) = indices.last() {
            if last >= num_subcarriers {
                return Err(Error::OutOfRange {
                    what: "subcarrier index",
                    value: last,
                    limit: num_subcarriers,
                });
            }
        }
        let len = indices.len();
        Ok(Self {
            indices,
            pattern: AllocationPattern::Contiguous { start: 0, len },
            num_subcarriers,
        })
    }
}

pub fn make_allocation(pattern: AllocationPattern, num_subcarriers: usize) -> Result<SubcarrierAllocation> {
    let n = num_subcarriers;
    if n == 0 {
        return Err(Error::config("allocation over zero subcarriers"));
    }
    let indices: Vec<usize> = match pattern {
        AllocationPattern::Full => (0..n).collect(),
        AllocationPattern::Interleaved { step } => {
            if step == 0 {
                return Err(Error::config("interleaved allocation step must be at least 1"));
            }
            (0..n).step_by(step).collect()
        }
        AllocationPattern::Contiguous { start, len } => {
            if len == 0 || start.checked_add(len).is_none_or(|end| end > n) {
                return Err(Error::config(format!(
                    "contiguous allocation {start}+{len} does not fit in {n} subcarriers"
                )));
            }
            (start..start + len).collect()
        }
        AllocationPattern::Random { count, seed } => {
            if count == 0 || count > n {
                return Err(Error::config(format!(
                    "random allocation of {count} out of {n} subcarriers"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut v = index::sample(&mut rng, n, count).into_vec();
            v.sort_unstable();
            v
        }
    };
    Ok(SubcarrierAllocation {
        indices,
        pattern,
        num_subcarriers: n,
    })
}

/// Known transmitted symbols `x_{n,t}` (length `M_T·K`) for every sensing
/// subcarrier and OFDM block. Active entries are unit-modulus QPSK; entries
/// of a source that does not occupy a subcarrier are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolGrid {
    num_sources: usize,
    tx_antennas: usize,
    num_blocks: usize,
    allocation: SubcarrierAllocation,
    // [t][subcarrier position][source * M_T + antenna]
    data: Vec<Complex64>,
}

impl SymbolGrid {
    pub fn num_sources(&self) -> usize {
        self.num_sources
    }

    pub fn tx_antennas(&self) -> usize {
        self.tx_antennas
    }

    pub fn num_blocks(&self) -> usize {
        self.num_blocks
    }

    /// Length of each symbol vector, `M_T·K`.
    pub fn vector_len(&self) -> usize {
        self.num_sources * self.tx_antennas
    }

    pub fn allocation(&self) -> &SubcarrierAllocation {
        &self.allocation
    }

    /// Symbol vector for block `t` at the `pos`-th allocated subcarrier.
    pub fn symbols(&self, t: usize, pos: usize) -> &[Complex64] {
        let len = self.vector_len();
        let start = (t * self.allocation.len() + pos) * len;
        &self.data[start..start + len]
    }

    /// Segment of `symbols(t, pos)` transmitted by `source`.
    pub fn source_symbols(&self, t: usize, pos: usize, source: usize) -> &[Complex64] {
        let m = self.tx_antennas;
        &self.symbols(t, pos)[source * m..(source + 1) * m]
    }

    /// Grid with caller-chosen symbols; `f(t, subcarrier, slot)` gives
    /// entry `slot` of `x_{n,t}`.
    pub fn from_fn(
        num_sources: usize,
        tx_antennas: usize,
        allocation: &SubcarrierAllocation,
        num_blocks: usize,
        mut f: impl FnMut(usize, usize, usize) -> Complex64,
    ) -> Self {
        let len = num_sources * tx_antennas;
        let mut data = Vec::with_capacity(num_blocks * allocation.len() * len);
        for t in 0..num_blocks {
            for &n in allocation.indices() {
                data.extend((0..len).map(|i| f(t, n, i)));
            }
        }
        Self {
            num_sources,
            tx_antennas,
            num_blocks,
            allocation: allocation.clone(),
            data,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Complex64> {
        self.data.iter()
    }

    /// Silence each source outside its own allocation. `per_source[k]` must
    /// be a subset of the grid's allocation.
    pub fn restrict_sources(&mut self, per_source: &[SubcarrierAllocation]) -> Result<()> {
        if per_source.len() != self.num_sources {
            return Err(Error::invalid(format!(
                "{} per-source allocations for {} sources",
                per_source.len(),
                self.num_sources
            )));
        }
        for (k, alloc) in per_source.iter().enumerate() {
            if let Some(&n) = alloc.indices().iter().find(|&&n| !self.allocation.contains(n)) {
                return Err(Error::invalid(format!(
                    "source {k} uses subcarrier {n} outside the sensing allocation"
                )));
            }
        }
        let (len, m, ns) = (self.vector_len(), self.tx_antennas, self.allocation.len());
        for t in 0..self.num_blocks {
            for (pos, &n) in self.allocation.indices.iter().enumerate() {
                for (k, alloc) in per_source.iter().enumerate() {
                    if !alloc.contains(n) {
                        let start = (t * ns + pos) * len + k * m;
                        self.data[start..start + m].fill(Complex64::new(0.0, 0.0));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Independent uniform QPSK symbols `(±1 ± j)/√2`, deterministic in `seed`.
pub fn generate_symbols(
    num_sources: usize,
    tx_antennas: usize,
    allocation: &SubcarrierAllocation,
    num_blocks: usize,
    seed: u64,
) -> Result<SymbolGrid> {
    if num_sources == 0 || tx_antennas == 0 || num_blocks == 0 {
        return Err(Error::invalid(format!(
            "symbol grid needs positive counts (K={num_sources}, M_T={tx_antennas}, T={num_blocks})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = num_blocks * allocation.len() * num_sources * tx_antennas;
    let data = (0..total)
        .map(|_| {
            let bits: u8 = rng.random_range(0..4);
            let re = if bits & 1 == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
            let im = if bits & 2 == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
            Complex64::new(re, im)
        })
        .collect();
    Ok(SymbolGrid {
        num_sources,
        tx_antennas,
        num_blocks,
        allocation: allocation.clone(),
        data,
    })
}

/// Delay phase ramp `c_n`, entry ℓ = exp(−j2π·n·ℓ/(g·N)).
pub fn delay_phase_vector(
    subcarrier: usize,
    num_bins: usize,
    oversampling: usize,
    num_subcarriers: usize,
) -> DVector<Complex64> {
    let step = -2.0 * PI * subcarrier as f64 / (oversampling * num_subcarriers) as f64;
    DVector::from_fn(num_bins, |l, _| {
        if l == 0 {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::from_polar(1.0, step * l as f64)
        }
    })
}

/// Derive an independent sub-seed for one pipeline stage from a master seed.
pub fn derive_seed(master: u64, stage: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stage);
    rng.random()
}
