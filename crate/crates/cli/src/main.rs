//! `sage`: run, analyze and sweep resilient distributed estimation
//! experiments described by JSON configuration files.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use sage_core::config::{
    build_measurement_model, resolve_attack_spec, AttackSpec, MeasurementSpec, ResolvedAttack,
    SimulationConfig,
};
use sage_core::harness::{
    run_experiment, sweep_attack_count, sweep_gamma, write_outputs, SweepPoint,
};
use sage_core::resilience::check_resilience;

#[derive(Parser)]
#[command(
    name = "sage",
    version,
    about = "Saturating-gain distributed parameter estimation under measurement attacks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte-Carlo experiment and write metrics.csv + summary.json
    Run {
        /// Experiment configuration (JSON)
        #[arg(long)]
        config: PathBuf,
        /// Output directory (created if missing)
        #[arg(long)]
        out: PathBuf,
        /// Override the configured trial count
        #[arg(long)]
        trials: Option<usize>,
        /// Override the configured master seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Spectral resilience report for a measurement model under an attack
    Analyze {
        /// Measurement model (JSON: the `measurement` config section)
        #[arg(long)]
        model: PathBuf,
        /// Attack description (JSON: the `attack` config section)
        #[arg(long)]
        attack: PathBuf,
    },
    /// Rerun an experiment across a parameter range and write sweep.json
    Sweep {
        /// Which knob to sweep
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated values (saturation caps, or attack sizes)
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Experiment configuration (JSON)
        #[arg(long)]
        config: PathBuf,
        /// Output directory (created if missing)
        #[arg(long)]
        out: PathBuf,
        /// Override the configured trial count
        #[arg(long)]
        trials: Option<usize>,
        /// Override the configured master seed
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepParam {
    /// Saturation cap of the gain schedule
    Gamma,
    /// Number of uniformly random compromised streams per trial
    AttackCount,
}

fn load_config(path: &PathBuf, trials: Option<usize>, seed: Option<u64>) -> Result<SimulationConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let mut config = SimulationConfig::from_json(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    if let Some(t) = trials {
        config.trials = t;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(config)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            out,
            trials,
            seed,
        } => {
            let resolved = load_config(&config, trials, seed)?.resolve()?;
            let result = run_experiment(&resolved)?;
            let (csv, json) = write_outputs(&out, &result)?;
            for agg in &result.summary.aggregates {
                println!(
                    "{:<8} final max_rmse: mean {:.6}, median {:.6}, q05 {:.6}, q95 {:.6}",
                    agg.estimator.as_str(),
                    agg.max_rmse.mean,
                    agg.max_rmse.median,
                    agg.max_rmse.q05,
                    agg.max_rmse.q95
                );
            }
            if let Some(r) = &result.summary.resilience {
                println!(
                    "resilience: lambda_min {:.6}, delta {:.6}{}, margin {:.6} ({})",
                    r.lambda_min_clean,
                    r.delta_a,
                    if r.delta_exact { "" } else { " (bound)" },
                    r.margin_kappa,
                    r.verdict
                );
            }
            println!("wrote {}", csv.display());
            println!("wrote {}", json.display());
        }
        Command::Analyze { model, attack } => {
            let model_text = fs::read_to_string(&model)
                .with_context(|| format!("reading model {}", model.display()))?;
            let spec: MeasurementSpec = serde_json::from_str(&model_text)
                .with_context(|| format!("parsing model {}", model.display()))?;
            let measurement = build_measurement_model(&spec)?;

            let attack_text = fs::read_to_string(&attack)
                .with_context(|| format!("reading attack {}", attack.display()))?;
            let attack_spec: AttackSpec = serde_json::from_str(&attack_text)
                .with_context(|| format!("parsing attack {}", attack.display()))?;
            let scenario = match resolve_attack_spec(Some(&attack_spec), &measurement)? {
                ResolvedAttack::Fixed(s) => s,
                ResolvedAttack::RandomStreams { .. } | ResolvedAttack::RandomAgents { .. } => {
                    bail!(
                        "analyze needs a concrete attack set; random_agents/random_streams \
                         only make sense inside a Monte-Carlo run"
                    );
                }
            };
            let report = check_resilience(&measurement, scenario.compromised())?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Sweep {
            param,
            values,
            config,
            out,
            trials,
            seed,
        } => {
            let resolved = load_config(&config, trials, seed)?.resolve()?;
            let points: Vec<SweepPoint> = match param {
                SweepParam::Gamma => sweep_gamma(&resolved, &values)?,
                SweepParam::AttackCount => {
                    let counts: Vec<usize> = values
                        .iter()
                        .map(|&v| {
                            if v.fract() != 0.0 || v < 0.0 {
                                bail!("attack counts must be non-negative integers, got {v}");
                            }
                            Ok(v as usize)
                        })
                        .collect::<Result<_>>()?;
                    sweep_attack_count(&resolved, &counts)?
                }
            };
            fs::create_dir_all(&out)
                .with_context(|| format!("creating {}", out.display()))?;
            let path = out.join("sweep.json");
            let doc = serde_json::json!({
                "param": match param {
                    SweepParam::Gamma => "gamma",
                    SweepParam::AttackCount => "attack_count",
                },
                "points": points,
            });
            let mut text = serde_json::to_string_pretty(&doc)?;
            text.push('\n');
            fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            for p in &points {
                let sage = &p.aggregates[0];
                println!(
                    "value {:>10}: {} final max_rmse mean {:.6}",
                    p.value,
                    sage.estimator.as_str(),
                    sage.max_rmse.mean
                );
            }
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}
