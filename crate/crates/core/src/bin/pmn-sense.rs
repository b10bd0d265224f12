use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use rayon::prelude::*;

use pmn_sensing::experiment::{write_csv, write_records, Preset};
use pmn_sensing::{run_experiment, ExperimentConfig, ExperimentOutcome, StoppingRule};

/// Simulate network-side sensing runs and write estimated vs. actual paths as CSV.
#[derive(Debug, Parser)]
#[command(name = "pmn-sense", version)]
struct Cli {
    /// Config file (dotted keys); applied on top of --preset or its own `preset` key.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Starting configuration.
    #[arg(long, value_parser = ["downlink_default", "uplink_default"])]
    preset: Option<String>,

    #[arg(long)]
    seed: Option<u64>,

    /// Per-source transmit power in dBm.
    #[arg(long, allow_negative_numbers = true)]
    tx_power_dbm: Option<f64>,

    /// Output CSV; stdout when omitted. With several trials, each trial
    /// writes `<stem>-<seed>.<ext>`.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Independent runs with seeds seed, seed+1, ...
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    trials: u64,

    /// fixed:<L> | residual:<eps> | plateau:<delta>
    #[arg(long)]
    solver_stop: Option<StoppingRule>,
}

fn build_config(cli: &Cli) -> pmn_sensing::Result<ExperimentConfig> {
    let mut config = match (&cli.config, &cli.preset) {
        (Some(path), None) => ExperimentConfig::load(path)?,
        (Some(path), Some(p)) => {
            let text = std::fs::read_to_string(path).map_err(|source| pmn_sensing::Error::Io {
                path: path.clone(),
                source,
            })?;
            let base = format!("preset = \"{p}\"\n");
            if text.lines().any(|l| l.trim_start().starts_with("preset")) {
                ExperimentConfig::load(path)?
            } else {
                ExperimentConfig::from_toml_str(&(base + &text), &path.display().to_string())?
            }
        }
        (None, Some(p)) => p.parse::<Preset>()?.config(),
        (None, None) => ExperimentConfig::downlink_default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(p) = cli.tx_power_dbm {
        config.tx_power_dbm = p;
    }
    if let Some(stop) = cli.solver_stop {
        config.solver.stop = stop;
    }
    config.validate()?;
    Ok(config)
}

fn trial_path(out: &Path, seed: u64) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}-{seed}.{}", ext.to_string_lossy()),
        None => format!("{stem}-{seed}"),
    };
    out.with_file_name(name)
}

fn summary(seed: u64, o: &ExperimentOutcome) -> String {
    let r = &o.report;
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    format!(
        "seed {seed}: {} paths, {} estimates, detection {:.3}, false alarms {}, rmse distance {} m, aoa {} deg, doppler {} Hz",
        o.truth.len(),
        o.estimates.len(),
        r.detection_rate,
        r.false_alarm_count,
        opt(r.rmse_distance_m),
        opt(r.rmse_aoa_deg),
        opt(r.rmse_doppler_hz)
    )
}

fn run(cli: &Cli) -> pmn_sensing::Result<()> {
    let config = build_config(cli)?;
    let seeds: Vec<u64> = (0..cli.trials).map(|i| config.seed.wrapping_add(i)).collect();
    let outcomes: Vec<ExperimentOutcome> = seeds
        .par_iter()
        .map(|&seed| {
            run_experiment(&ExperimentConfig {
                seed,
                ..config.clone()
            })
        })
        .collect::<pmn_sensing::Result<_>>()?;

    for (&seed, outcome) in seeds.iter().zip(&outcomes) {
        match &cli.out {
            Some(out) => {
                let path = if seeds.len() == 1 { out.clone() } else { trial_path(out, seed) };
                write_csv(&outcome.records(), &path)?;
                eprintln!("{} -> {}", summary(seed, outcome), path.display());
            }
            None => {
                let stdout = io::stdout();
                let mut lock = stdout.lock();
                write_records(&outcome.records(), &mut lock).map_err(|source| pmn_sensing::Error::Io {
                    path: PathBuf::from("<stdout>"),
                    source,
                })?;
                lock.flush().ok();
                eprintln!("{}", summary(seed, outcome));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pmn-sense: {e}");
            ExitCode::FAILURE
        }
    }
}
