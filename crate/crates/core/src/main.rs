//! Experiment CLI: single rollouts, full campaigns, offline training, plots.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use segway_cbf::harness::campaign::{run_campaign, run_single_rollout};
use segway_cbf::harness::config::{load_config, CampaignConfig};
use segway_cbf::harness::csv::{read_dataset_csv, write_loss_csv};
use segway_cbf::harness::plot::{emit_plot, PlotKind, PlotSeries, PlotSpec};
use segway_cbf::learning::erm_train;
use segway_cbf::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_SAFETY: u8 = 3;

#[derive(Parser)]
#[command(name = "segway-cbf", about = "Safety-filtered Segway simulations with episodic residual learning", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PlotKindArg {
    /// Pitch vs. pitch rate with the barrier's zero level set.
    Phase,
    /// Barrier value over time with the zero line.
    HT,
}

#[derive(Subcommand)]
enum Command {
    /// One model-based CBF-QP rollout on the perturbed plant.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to the config's).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Re-seed every stochastic component from this value.
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Full three-phase protocol: baseline, episodic learning, final eval.
    Campaign {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed_override: Option<u64>,
        /// Fan out N independently seeded campaigns into subdirectories.
        #[arg(long, default_value_t = 1)]
        replicas: usize,
    },
    /// Fit the residual estimator on a stored dataset CSV.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dataset CSV (episode,t,x_pos,x_vel,theta,theta_dot,u,hdot).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Render an SVG from one or more trajectory CSVs.
    Plot {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        kind: PlotKindArg,
        /// Trajectory CSV; repeat for multiple traces.
        #[arg(long = "csv", required = true)]
        csvs: Vec<PathBuf>,
        /// Output SVG path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(config: &PathBuf, seed_override: Option<u64>) -> Result<CampaignConfig, Error> {
    let mut cfg = load_config(config)?;
    if let Some(seed) = seed_override {
        cfg.override_seeds(seed);
        cfg.validate()?;
    }
    Ok(cfg)
}

fn exit_for(err: &Error) -> u8 {
    match err {
        Error::Config { .. } | Error::ConfigParse(_) | Error::InvalidParam { .. } => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Simulate { config, out, seed_override } => {
            let cfg = load(&config, seed_override)?;
            let path = run_single_rollout(&cfg, out.as_deref())?;
            println!("trajectory written to {}", path.display());
            Ok(0)
        }
        Command::Campaign { config, out, seed_override, replicas } => {
            let cfg = load(&config, seed_override)?;
            if replicas <= 1 {
                let outcome = run_campaign(&cfg, out.as_deref())?;
                if !outcome.unsafe_baseline_found {
                    println!(
                        "note: no unsafe baseline rollout for perturbation seed {}; \
                         seed excluded from the unsafe-baseline criterion",
                        cfg.perturbation.seed
                    );
                }
                return Ok(if outcome.safety_pass { 0 } else { EXIT_SAFETY });
            }

            // Independent seeded replicas, each in its own subdirectory.
            let base_out = out.unwrap_or_else(|| cfg.campaign.out_dir.clone());
            let base_seed = seed_override.unwrap_or(cfg.perturbation.seed);
            let mut handles = Vec::new();
            for r in 0..replicas {
                let mut replica_cfg = cfg.clone();
                replica_cfg.override_seeds(base_seed.wrapping_add(1000 * r as u64));
                let dir = base_out.join(format!("replica_{r:02}"));
                handles.push(std::thread::spawn(move || {
                    run_campaign(&replica_cfg, Some(&dir)).map(|o| o.safety_pass)
                }));
            }
            let mut all_pass = true;
            for h in handles {
                match h.join() {
                    Ok(Ok(pass)) => all_pass &= pass,
                    Ok(Err(e)) => return Err(e),
                    Err(_) => {
                        return Err(Error::TrainingDiverged("replica thread panicked".into()))
                    }
                }
            }
            Ok(if all_pass { 0 } else { EXIT_SAFETY })
        }
        Command::Train { config, data, out, seed_override } => {
            let cfg = load(&config, seed_override)?;
            let dataset = read_dataset_csv(&data)?;
            let (bf, _) = cfg.barrier.build()?;
            let trained = erm_train(
                &dataset,
                &bf,
                &cfg.plant,
                &cfg.training.train_config(),
                &cfg.training.hidden_layers,
            )?;
            let out_dir = out.unwrap_or_else(|| cfg.campaign.out_dir.clone());
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            trained.estimator.save(&out_dir.join("estimator.txt"))?;
            write_loss_csv(&out_dir.join("loss.csv"), &trained.epoch_loss)?;
            println!(
                "trained on {} records; final train MAE {:.6}{}",
                dataset.len(),
                trained.epoch_loss.last().copied().unwrap_or(f64::NAN),
                trained
                    .validation_loss
                    .map(|v| format!(", validation MAE {v:.6}"))
                    .unwrap_or_default()
            );
            Ok(0)
        }
        Command::Plot { config, kind, csvs, out } => {
            let cfg = load(&config, None)?;
            let palette = ["green", "blue", "red", "orange", "purple", "teal"];
            let series = csvs
                .iter()
                .enumerate()
                .map(|(i, csv)| PlotSeries {
                    csv: csv.clone(),
                    label: csv
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| format!("series {i}")),
                    color: palette[i % palette.len()].to_string(),
                })
                .collect();
            emit_plot(&PlotSpec {
                kind: match kind {
                    PlotKindArg::Phase => PlotKind::PhasePortrait,
                    PlotKindArg::HT => PlotKind::BarrierOverTime,
                },
                barrier: cfg.barrier.descriptor(),
                series,
                output: out.clone(),
            })?;
            println!("plot written to {}", out.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}
