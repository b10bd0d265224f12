//! Presets and the key-value config file.
//!
//! The file is TOML restricted to scalar values; keys are addressed by their
//! dotted path, so `[cluster]\npaths_min = 3` and `cluster.paths_min = 3`
//! are the same setting. Unset keys keep the preset's value.
//!
//! ```toml
//! preset = "uplink_default"
//! seed = 7
//! blocks = 4
//! power.tx_dbm = 15
//! cluster.distance_max_m = 60
//! solver.stop = "plateau:0.01"
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::solver::StoppingRule;

use super::{ExperimentConfig, ThresholdSetting};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    DownlinkDefault,
    UplinkDefault,
}

pub const PRESET_NAMES: [&str; 2] = ["downlink_default", "uplink_default"];

impl Preset {
    pub fn config(self) -> ExperimentConfig {
        match self {
            Preset::DownlinkDefault => ExperimentConfig::downlink_default(),
            Preset::UplinkDefault => ExperimentConfig::uplink_default(),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::DownlinkDefault => PRESET_NAMES[0],
            Preset::UplinkDefault => PRESET_NAMES[1],
        })
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "downlink_default" => Ok(Preset::DownlinkDefault),
            "uplink_default" => Ok(Preset::UplinkDefault),
            other => Err(Error::config(format!(
                "unknown preset '{other}' (expected one of {})",
                PRESET_NAMES.join(", ")
            ))),
        }
    }
}

fn flatten(prefix: &str, table: &Table, out: &mut Vec<(String, Value)>) -> Result<()> {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out)?,
            Value::Array(_) => return Err(Error::config(format!("{key}: arrays are not supported"))),
            other => out.push((key, other.clone())),
        }
    }
    Ok(())
}

fn as_f64(v: &Value) -> std::result::Result<f64, String> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        other => Err(format!("expected a number, got {}", other.type_str())),
    }
}

fn as_usize(v: &Value) -> std::result::Result<usize, String> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        Value::Integer(i) => Err(format!("expected a non-negative integer, got {i}")),
        other => Err(format!("expected an integer, got {}", other.type_str())),
    }
}

fn as_str(v: &Value) -> std::result::Result<&str, String> {
    v.as_str().ok_or_else(|| format!("expected a string, got {}", v.type_str()))
}

fn as_bool(v: &Value) -> std::result::Result<bool, String> {
    v.as_bool().ok_or_else(|| format!("expected true or false, got {}", v.type_str()))
}

fn parsed<T: FromStr<Err = Error>>(v: &Value) -> std::result::Result<T, String> {
    as_str(v)?.parse().map_err(|e: Error| e.to_string())
}

impl ExperimentConfig {
    /// Build a config from file text. `origin` names the source in errors.
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config(format!("{origin}: {}", e.message())))?;
        let base = match table.get("preset") {
            Some(v) => parsed::<Preset>(v)
                .map_err(|e| Error::config(format!("{origin}: preset: {e}")))?
                .config(),
            None => ExperimentConfig::downlink_default(),
        };
        let mut config = base;
        config.apply_table(&table, origin)?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    fn apply_table(&mut self, table: &Table, origin: &str) -> Result<()> {
        let mut entries = Vec::new();
        flatten("", table, &mut entries).map_err(|e| e.with_context(origin))?;
        for (key, value) in entries {
            self.set(&key, &value)
                .map_err(|reason| Error::config(format!("{origin}: {key}: {reason}")))?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, v: &Value) -> std::result::Result<(), String> {
        let c = &mut self.cluster;
        match key {
            "preset" => {}
            "seed" => {
                self.seed = match v {
                    Value::Integer(i) => u64::try_from(*i).map_err(|_| format!("seed must be non-negative, got {i}"))?,
                    Value::String(s) => s.parse().map_err(|e| format!("seed: {e}"))?,
                    other => return Err(format!("expected an integer, got {}", other.type_str())),
                }
            }
            "mode" => self.mode = parsed(v)?,
            "sources" => self.num_sources = as_usize(v)?,
            "rx_elements" => self.rx_elements = as_usize(v)?,
            "tx_antennas" => self.tx_antennas = as_usize(v)?,
            "element_spacing" => self.element_spacing = as_f64(v)?,
            "blocks" => self.num_blocks = as_usize(v)?,
            "allocation" => self.allocation = parsed(v)?,
            "ofdm.num_subcarriers" => self.ofdm.num_subcarriers = as_usize(v)?,
            "ofdm.bandwidth_hz" => self.ofdm.bandwidth_hz = as_f64(v)?,
            "ofdm.cp_fraction" => self.ofdm.cp_fraction = as_f64(v)?,
            "ofdm.carrier_hz" => self.ofdm.carrier_hz = as_f64(v)?,
            "grid.oversampling" => self.oversampling = as_usize(v)?,
            "grid.num_bins" => {
                self.num_bins = match v {
                    Value::String(s) if s == "auto" => None,
                    other => Some(as_usize(other)?),
                }
            }
            "power.tx_dbm" => self.tx_power_dbm = as_f64(v)?,
            "power.noise_dbm_total" => self.noise_dbm_total = Some(as_f64(v)?),
            "power.noiseless" => {
                if as_bool(v)? {
                    self.noise_dbm_total = None;
                }
            }
            "uplink.timing_offset_bins" => self.uplink_timing_offset_bins = as_usize(v)?,
            "cluster.paths_min" => c.num_paths.lo = as_usize(v)?,
            "cluster.paths_max" => c.num_paths.hi = as_usize(v)?,
            "cluster.direction_min_deg" => c.direction_span_deg.lo = as_f64(v)?,
            "cluster.direction_max_deg" => c.direction_span_deg.hi = as_f64(v)?,
            "cluster.distance_min_m" => c.distance_range_m.lo = as_f64(v)?,
            "cluster.distance_max_m" => c.distance_range_m.hi = as_f64(v)?,
            "cluster.doppler_min_hz" => c.doppler_range_hz.lo = as_f64(v)?,
            "cluster.doppler_max_hz" => c.doppler_range_hz.hi = as_f64(v)?,
            "cluster.direction_offset_deg" => c.direction_offset_step_deg = as_f64(v)?,
            "cluster.distance_offset_m" => c.distance_offset_step_m = as_f64(v)?,
            "cluster.doppler_offset_hz" => c.doppler_offset_step_hz = as_f64(v)?,
            "cluster.pathloss_exponent" => c.pathloss_exponent = as_f64(v)?,
            "solver.stop" => self.solver.stop = parsed::<StoppingRule>(v)?,
            "solver.max_iterations" => self.solver.max_iterations = Some(as_usize(v)?),
            "extract.source_energy_ratio" => self.extraction.source_energy_ratio = as_f64(v)?,
            "extract.scan_points" => self.extraction.scan_points = as_usize(v)?,
            "extract.threshold" => self.threshold = parsed::<ThresholdSetting>(v)?,
            "match.max_bin_error" => self.gates.max_bin_error = as_usize(v)?,
            "match.max_sin_phase_error" => self.gates.max_sin_phase_error = as_f64(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }
}
