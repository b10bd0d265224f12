//! Random clustered multipath scenes, pathloss and ground-truth bookkeeping.

use std::f64::consts::PI;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::waveform::OfdmConfig;
use crate::SPEED_OF_LIGHT;

/// Which communication signal the sensing receiver exploits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensingMode {
    /// Active or passive sensing of RRU downlink signals (sources are RRUs, `M_T = M`).
    Downlink,
    /// Uplink sensing of mobile-station signals (sources are MSs).
    Uplink,
}

impl fmt::Display for SensingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SensingMode::Downlink => "downlink",
            SensingMode::Uplink => "uplink",
        })
    }
}

impl FromStr for SensingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "downlink" | "active" | "passive" => Ok(SensingMode::Downlink),
            "uplink" => Ok(SensingMode::Uplink),
            other => Err(Error::config(format!("unknown sensing mode '{other}'"))),
        }
    }
}

/// Quantized delay grid: resolution `1/(g·B)` with `num_bins` bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DelayGrid {
    pub oversampling: usize,
    pub num_bins: usize,
}

impl DelayGrid {
    pub fn new(oversampling: usize, num_bins: usize) -> Result<Self> {
        if oversampling == 0 || num_bins == 0 {
            return Err(Error::config(format!(
                "delay grid needs g ≥ 1 and N_p ≥ 1 (got g={oversampling}, N_p={num_bins})"
            )));
        }
        Ok(Self {
            oversampling,
            num_bins,
        })
    }

    /// Smallest grid covering one-way distances up to `max_distance_m`:
    /// `N_p = ceil(g·B·τ_max) + 1`, capped at `g·N`.
    pub fn covering(oversampling: usize, ofdm: &OfdmConfig, max_distance_m: f64) -> Result<Self> {
        let tau_max = max_distance_m.max(0.0) / SPEED_OF_LIGHT;
        let needed = (oversampling as f64 * ofdm.bandwidth_hz * tau_max).ceil() as usize + 1;
        Self::new(oversampling, needed.min(oversampling * ofdm.num_subcarriers))
    }

    pub fn resolution_s(&self, bandwidth_hz: f64) -> f64 {
        1.0 / (self.oversampling as f64 * bandwidth_hz)
    }

    /// Signal travelling distance of bin `bin`: `c·ℓ/(g·B)`.
    pub fn bin_distance_m(&self, bin: usize, bandwidth_hz: f64) -> f64 {
        SPEED_OF_LIGHT * bin as f64 / (self.oversampling as f64 * bandwidth_hz)
    }

    pub fn validate_for(&self, ofdm: &OfdmConfig) -> Result<()> {
        let cap = self.oversampling * ofdm.num_subcarriers;
        if self.num_bins > cap {
            return Err(Error::config(format!(
                "N_p = {} exceeds g·N = {cap}",
                self.num_bins
            )));
        }
        Ok(())
    }
}

/// One propagation path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultipathComponent {
    pub source_id: usize,
    pub delay_bin: usize,
    pub doppler_hz: f64,
    /// Angle of arrival, radians from broadside.
    pub aoa: f64,
    /// Angle of departure, radians from broadside.
    pub aod: f64,
    /// Complex path gain `b` (pathloss only, transmit power excluded).
    pub amplitude: Complex64,
}

/// Closed interval `[lo, hi]`; `lo == hi` is allowed and pins the value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Copy + PartialOrd + fmt::Display> Interval<T> {
    pub fn new(lo: T, hi: T) -> Self {
        Self { lo, hi }
    }

    fn check(&self, name: &str) -> Result<()> {
        if !(self.lo <= self.hi) {
            return Err(Error::config(format!(
                "{name} interval [{}, {}] is empty",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

impl Interval<f64> {
    fn sample(&self, rng: &mut impl Rng) -> f64 {
        self.lo + (self.hi - self.lo) * rng.random::<f64>()
    }
}

/// Random cluster model. Every source gets one cluster; source `k`'s draws
/// are shifted by `k` times the offset steps (directions are centred so the
/// K clusters straddle broadside).
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub num_paths: Interval<usize>,
    pub direction_span_deg: Interval<f64>,
    pub distance_range_m: Interval<f64>,
    pub doppler_range_hz: Interval<f64>,
    pub direction_offset_step_deg: f64,
    pub distance_offset_step_m: f64,
    pub doppler_offset_step_hz: f64,
    pub pathloss_exponent: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            num_paths: Interval::new(10, 15),
            direction_span_deg: Interval::new(0.0, 45.0),
            distance_range_m: Interval::new(0.0, 90.0),
            doppler_range_hz: Interval::new(0.0, 600.0),
            direction_offset_step_deg: 20.0,
            distance_offset_step_m: 15.0,
            doppler_offset_step_hz: 0.0,
            pathloss_exponent: 3.0,
        }
    }
}

const MAX_RESAMPLE: usize = 100;

impl ClusterConfig {
    /// Offsets `(direction °, distance m, Doppler Hz)` applied to source `k` of `K`.
    pub fn offsets(&self, k: usize, num_sources: usize) -> (f64, f64, f64) {
        let centre = (num_sources.saturating_sub(1)) as f64 / 2.0;
        (
            (k as f64 - centre) * self.direction_offset_step_deg,
            k as f64 * self.distance_offset_step_m,
            k as f64 * self.doppler_offset_step_hz,
        )
    }

    /// Largest one-way distance any of `K` clusters can produce.
    pub fn max_distance_m(&self, num_sources: usize) -> f64 {
        let (_, off, _) = self.offsets(num_sources.saturating_sub(1), num_sources);
        self.distance_range_m.hi + off.max(0.0)
    }

    pub fn validate(&self, num_sources: usize) -> Result<()> {
        self.num_paths.check("num_paths")?;
        self.direction_span_deg.check("direction_span_deg")?;
        self.distance_range_m.check("distance_range_m")?;
        self.doppler_range_hz.check("doppler_range_hz")?;
        if self.num_paths.hi == 0 {
            return Err(Error::config("num_paths upper bound must be at least 1"));
        }
        if self.distance_range_m.lo < 0.0 {
            return Err(Error::config("distances must be non-negative"));
        }
        if !(self.pathloss_exponent.is_finite() && self.pathloss_exponent > 0.0) {
            return Err(Error::config("pathloss exponent must be positive"));
        }
        for k in 0..num_sources {
            let (dir, dist, _) = self.offsets(k, num_sources);
            let lo = self.direction_span_deg.lo + dir;
            let hi = self.direction_span_deg.hi + dir;
            if lo < -90.0 || hi > 90.0 {
                return Err(Error::config(format!(
                    "cluster {k} directions [{lo}, {hi}] deg leave [-90, 90]"
                )));
            }
            if self.distance_range_m.lo + dist < 0.0 {
                return Err(Error::config(format!("cluster {k} has negative distances")));
            }
        }
        Ok(())
    }
}

/// Nearest delay bin, ties away from zero: `round(τ·g·B)`.
pub fn quantize_delay(tau_s: f64, oversampling: usize, bandwidth_hz: f64, num_bins: usize) -> Result<usize> {
    if !(tau_s.is_finite() && tau_s >= 0.0) {
        return Err(Error::invalid(format!("delay must be non-negative, got {tau_s}")));
    }
    let bin = (tau_s * oversampling as f64 * bandwidth_hz).round() as usize;
    if bin >= num_bins {
        return Err(Error::OutOfRange {
            what: "delay bin",
            value: bin,
            limit: num_bins,
        });
    }
    Ok(bin)
}

/// Pathloss in dB: `10·n·log10(4π·d/λ)`.
pub fn pathloss_db(distance_m: f64, wavelength_m: f64, exponent: f64) -> f64 {
    10.0 * exponent * (4.0 * PI * distance_m / wavelength_m).log10()
}

/// Complex path gain with `|b|² = (λ/(4π·d))^n` and a uniform random phase.
pub fn amplitude_from_distance(
    distance_m: f64,
    wavelength_m: f64,
    pathloss_exponent: f64,
    rng: &mut impl Rng,
) -> Result<Complex64> {
    if !(distance_m.is_finite() && distance_m > 0.0) {
        return Err(Error::invalid(format!("path distance must be positive, got {distance_m}")));
    }
    let gain = (wavelength_m / (4.0 * PI * distance_m)).powf(pathloss_exponent / 2.0);
    let phase = 2.0 * PI * rng.random::<f64>();
    Ok(Complex64::from_polar(gain, phase))
}

/// Draw a clustered scene for `num_sources` transmitters, deterministic in `seed`.
///
/// Delays are snapped to `grid` and kept distinct within each source by
/// resampling; angles and Dopplers stay continuous. The result is ordered by
/// source, then delay bin.
pub fn generate_scene(
    config: &ClusterConfig,
    num_sources: usize,
    seed: u64,
    ofdm: &OfdmConfig,
    grid: &DelayGrid,
) -> Result<Vec<MultipathComponent>> {
    if num_sources == 0 {
        return Err(Error::invalid("scene needs at least one source"));
    }
    ofdm.validate()?;
    config.validate(num_sources)?;
    grid.validate_for(ofdm)?;
    let span_m = grid.num_bins as f64 * grid.resolution_s(ofdm.bandwidth_hz) * SPEED_OF_LIGHT;
    let max_d = config.max_distance_m(num_sources);
    let max_bin = (max_d / SPEED_OF_LIGHT * grid.oversampling as f64 * ofdm.bandwidth_hz).round();
    if max_bin >= grid.num_bins as f64 {
        return Err(Error::config(format!(
            "distances up to {max_d} m exceed the unambiguous delay span of {span_m:.3} m (N_p = {})",
            grid.num_bins
        )));
    }

    let wavelength = ofdm.wavelength_m();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = Vec::new();
    for k in 0..num_sources {
        let (dir_off, dist_off, dop_off) = config.offsets(k, num_sources);
        let count = rng.random_range(config.num_paths.lo..=config.num_paths.hi);
        let mut used = vec![false; grid.num_bins];
        let mut paths = Vec::with_capacity(count);
        for _ in 0..count {
            let mut attempt = 0;
            let (distance, bin) = loop {
                if attempt == MAX_RESAMPLE {
                    return Err(Error::config(format!(
                        "could not place {count} distinct delays for source {k} after {MAX_RESAMPLE} draws"
                    )));
                }
                attempt += 1;
                let d = config.distance_range_m.sample(&mut rng) + dist_off;
                if d <= 0.0 {
                    continue;
                }
                let bin = quantize_delay(d / SPEED_OF_LIGHT, grid.oversampling, ofdm.bandwidth_hz, grid.num_bins)?;
                if !used[bin] {
                    used[bin] = true;
                    break (d, bin);
                }
            };
            let aoa = (config.direction_span_deg.sample(&mut rng) + dir_off).to_radians();
            let aod = (config.direction_span_deg.sample(&mut rng) + dir_off).to_radians();
            let doppler_hz = config.doppler_range_hz.sample(&mut rng) + dop_off;
            let amplitude = amplitude_from_distance(distance, wavelength, config.pathloss_exponent, &mut rng)?;
            paths.push(MultipathComponent {
                source_id: k,
                delay_bin: bin,
                doppler_hz,
                aoa,
                aod,
                amplitude,
            });
        }
        paths.sort_by_key(|p| p.delay_bin);
        scene.extend(paths);
    }
    Ok(scene)
}

const SCENE_HEADER: [&str; 7] = [
    "source_id", "delay_bin", "doppler_hz", "aoa_deg", "aod_deg", "amp_re", "amp_im",
];

/// Write a scene as a flat CSV table, one path per row.
pub fn write_scene<W: Write>(scene: &[MultipathComponent], out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(SCENE_HEADER)?;
    for p in scene {
        w.write_record([
            p.source_id.to_string(),
            p.delay_bin.to_string(),
            p.doppler_hz.to_string(),
            p.aoa.to_degrees().to_string(),
            p.aod.to_degrees().to_string(),
            p.amplitude.re.to_string(),
            p.amplitude.im.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parse a table produced by [`write_scene`]. `origin` only labels errors.
pub fn read_scene<R: Read>(input: R, origin: &Path) -> Result<Vec<MultipathComponent>> {
    let mut r = csv::Reader::from_reader(input);
    let parse_err = |line: usize, reason: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        reason,
    };
    let header = r.headers().map_err(|e| parse_err(1, e.to_string()))?;
    if header.iter().ne(SCENE_HEADER) {
        return Err(parse_err(1, format!("unexpected header {header:?}")));
    }
    let mut scene = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        if rec.len() != SCENE_HEADER.len() {
            return Err(parse_err(line, format!("expected 7 fields, got {}", rec.len())));
        }
        let f = |j: usize| -> Result<f64> {
            rec[j]
                .parse::<f64>()
                .map_err(|e| parse_err(line, format!("{}: {e}", SCENE_HEADER[j])))
        };
        let u = |j: usize| -> Result<usize> {
            rec[j]
                .parse::<usize>()
                .map_err(|e| parse_err(line, format!("{}: {e}", SCENE_HEADER[j])))
        };
        scene.push(MultipathComponent {
            source_id: u(0)?,
            delay_bin: u(1)?,
            doppler_hz: f(2)?,
            aoa: f(3)?.to_radians(),
            aod: f(4)?.to_radians(),
            amplitude: Complex64::new(f(5)?, f(6)?),
        });
    }
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_clusters_without_offsets() -> ClusterConfig {
        ClusterConfig {
            direction_offset_step_deg: 0.0,
            distance_offset_step_m: 0.0,
            ..ClusterConfig::default()
        }
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize_delay(30e-9, 1, 1e8, 64).unwrap(), 3);
        assert_eq!(quantize_delay(0.0, 3, 5e7, 64).unwrap(), 0);
        assert_eq!(quantize_delay(25e-9, 1, 1e8, 64).unwrap(), 3);
        assert!(matches!(
            quantize_delay(30e-9, 1, 1e8, 3),
            Err(Error::OutOfRange { value: 3, .. })
        ));
        assert!(quantize_delay(-1e-9, 1, 1e8, 64).is_err());
    }

    #[test]
    fn unit_gain_reference_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lambda = 0.2;
        let b = amplitude_from_distance(lambda / (4.0 * PI), lambda, 3.0, &mut rng).unwrap();
        assert!((b.norm() - 1.0).abs() < 1e-12);
        assert!(amplitude_from_distance(0.0, lambda, 3.0, &mut rng).is_err());
    }

    #[test]
    fn pathloss_at_ninety_metres() {
        // 30·log10(4π·90/λ) at 2.35 GHz, evaluated independently: 118.43099 dB
        let lambda = SPEED_OF_LIGHT / 2.35e9;
        assert!((lambda - 0.127571).abs() < 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = amplitude_from_distance(90.0, lambda, 3.0, &mut rng).unwrap();
        let loss = -20.0 * b.norm().log10();
        assert!((loss - 118.43099).abs() < 1e-4, "{loss}");
        assert!((pathloss_db(90.0, lambda, 3.0) - 118.43099).abs() < 1e-4);
    }

    #[test]
    fn exponent_two_is_free_space() {
        let lambda = 0.125;
        for d in [1.0, 17.0, 250.0] {
            let fspl = 20.0 * (4.0 * PI * d / lambda).log10();
            assert!((pathloss_db(d, lambda, 2.0) - fspl).abs() < 1e-12);
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let b = amplitude_from_distance(d, lambda, 2.0, &mut rng).unwrap();
            assert!((-20.0 * b.norm().log10() - fspl).abs() < 1e-9);
        }
    }

    #[test]
    fn paper_cluster_ranges() {
        let ofdm = OfdmConfig::default();
        let cfg = paper_clusters_without_offsets();
        let grid = DelayGrid::covering(1, &ofdm, cfg.max_distance_m(4)).unwrap();
        for seed in 0..20 {
            let scene = generate_scene(&cfg, 4, seed, &ofdm, &grid).unwrap();
            assert!((40..=60).contains(&scene.len()), "{}", scene.len());
            assert!(scene.iter().all(|p| p.delay_bin < 31));
            for p in &scene {
                assert!(p.aoa >= 0.0 && p.aoa <= 45f64.to_radians());
                assert!((0.0..=600.0).contains(&p.doppler_hz));
            }
        }
    }

    #[test]
    fn pinned_single_path() {
        let ofdm = OfdmConfig::default();
        let cfg = ClusterConfig {
            num_paths: Interval::new(1, 1),
            distance_range_m: Interval::new(3.0, 3.0),
            ..paper_clusters_without_offsets()
        };
        let grid = DelayGrid::new(1, 8).unwrap();
        let scene = generate_scene(&cfg, 1, 0, &ofdm, &grid).unwrap();
        assert_eq!(scene.len(), 1);
        assert_eq!(scene[0].delay_bin, 1);
    }

    #[test]
    fn default_offsets_straddle_broadside() {
        let cfg = ClusterConfig::default();
        assert_eq!(cfg.offsets(0, 4), (-30.0, 0.0, 0.0));
        assert_eq!(cfg.offsets(3, 4), (30.0, 45.0, 0.0));
        assert_eq!(cfg.max_distance_m(4), 135.0);
        cfg.validate(4).unwrap();
        // seven sources would push the last cluster past endfire
        assert!(cfg.validate(7).is_err());
    }

    #[test]
    fn deterministic_and_distinct_bins() {
        let ofdm = OfdmConfig::default();
        let cfg = ClusterConfig::default();
        let grid = DelayGrid::covering(1, &ofdm, cfg.max_distance_m(4)).unwrap();
        assert_eq!(grid.num_bins, 47);
        let a = generate_scene(&cfg, 4, 42, &ofdm, &grid).unwrap();
        let b = generate_scene(&cfg, 4, 42, &ofdm, &grid).unwrap();
        assert_eq!(a, b);
        for k in 0..4 {
            let mut bins: Vec<usize> = a.iter().filter(|p| p.source_id == k).map(|p| p.delay_bin).collect();
            let n = bins.len();
            bins.dedup();
            assert_eq!(bins.len(), n);
        }
    }

    #[test]
    fn span_violation_is_config_error() {
        let ofdm = OfdmConfig::default();
        let cfg = ClusterConfig::default();
        let grid = DelayGrid::new(1, 20).unwrap();
        assert!(matches!(
            generate_scene(&cfg, 4, 0, &ofdm, &grid),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn too_many_paths_for_bins() {
        let ofdm = OfdmConfig::default();
        let cfg = ClusterConfig {
            num_paths: Interval::new(5, 5),
            distance_range_m: Interval::new(3.0, 6.0),
            ..paper_clusters_without_offsets()
        };
        let grid = DelayGrid::new(1, 8).unwrap();
        assert!(generate_scene(&cfg, 1, 0, &ofdm, &grid).is_err());
    }

    #[test]
    fn amplitude_non_increasing_in_distance() {
        let lambda = 0.127;
        let mut last = f64::INFINITY;
        for i in 1..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let b = amplitude_from_distance(i as f64 * 0.7, lambda, 3.0, &mut rng).unwrap();
            assert!(b.norm() <= last);
            last = b.norm();
        }
    }

    #[test]
    fn scene_table_round_trip() {
        let ofdm = OfdmConfig::default();
        let cfg = ClusterConfig::default();
        let grid = DelayGrid::covering(1, &ofdm, cfg.max_distance_m(2)).unwrap();
        let scene = generate_scene(&cfg, 2, 8, &ofdm, &grid).unwrap();
        let mut buf = Vec::new();
        write_scene(&scene, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("source_id,delay_bin,doppler_hz,aoa_deg,aod_deg,amp_re,amp_im\n"));
        let back = read_scene(buf.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(back.len(), scene.len());
        for (a, b) in scene.iter().zip(&back) {
            assert_eq!((a.source_id, a.delay_bin), (b.source_id, b.delay_bin));
            assert_eq!(a.doppler_hz, b.doppler_hz);
            assert_eq!(a.amplitude, b.amplitude);
            assert!((a.aoa - b.aoa).abs() < 1e-14 && (a.aod - b.aod).abs() < 1e-14);
        }
        let bad = "source_id,delay_bin\n1,2\n";
        assert!(matches!(read_scene(bad.as_bytes(), Path::new("x")), Err(Error::Parse { .. })));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("uplink".parse::<SensingMode>().unwrap(), SensingMode::Uplink);
        assert_eq!("passive".parse::<SensingMode>().unwrap(), SensingMode::Downlink);
        assert!("sideways".parse::<SensingMode>().is_err());
    }
}
