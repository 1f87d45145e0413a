use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use spatialnet::data::{DualDataset, InputMode, Split};
use spatialnet::eval::{evaluate, EvalOptions};
use spatialnet::export::{export, DEFAULT_MIN_EDGE, DEFAULT_MIN_INWEIGHT};
use spatialnet::gradcheck::{self, DEFAULT_TOLERANCE};
use spatialnet::persist::{self, RunConfig};
use spatialnet::split::{greedy_split, inter_group_weight_mass, mean_inter_group_weight_mass};
use spatialnet::train::{init_checkpoint, train_epoch};
use spatialnet::Error;

const DATA_ENV: &str = "SPATIALNET_DATA";
const FETCH_HINT: &str = "fetch the datasets with `scripts/fetch_data.sh <dir>` and pass --data <dir> or set SPATIALNET_DATA";

#[derive(Parser)]
#[command(name = "spatialnet", version, about = "Spatially embedded networks: train, split, evaluate, export")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum Size {
    Small,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and write a checkpoint.
    Train {
        /// JSON run configuration; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, env = DATA_ENV, default_value = "data")]
        data: PathBuf,
        #[arg(long)]
        mode: Option<InputMode>,
        #[arg(long, value_enum)]
        spatial: Option<Switch>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch JSON-lines log (default: `<out>.log.jsonl`).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Greedy backward split of a trained network into task groups.
    Split {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of groups (default: from the checkpoint's config).
        #[arg(long)]
        groups: Option<usize>,
    },
    /// Test-set accuracy of the full network and, with an assignment, of the split subnetworks.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        assignment: Option<PathBuf>,
        #[arg(long, env = DATA_ENV, default_value = "data")]
        data: PathBuf,
        #[arg(long, default_value = "results.jsonl")]
        results: PathBuf,
    },
    /// Write positions.csv, edges.csv and topdown.svg.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        assignment: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MIN_INWEIGHT)]
        min_inweight: f64,
        #[arg(long, default_value_t = DEFAULT_MIN_EDGE)]
        min_edge: f64,
    },
    /// Finite-difference check of all analytic gradients.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "small")]
        size: Size,
        #[arg(long, hide = true, default_value_t = 0.0)]
        perturb_gradient: f64,
    },
}

enum Failure {
    Check(String),
    Usage(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Numerical(_) => Failure::Numerical(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

fn load_data(dir: &Path, cfg: &RunConfig, split: Split) -> Result<DualDataset, Failure> {
    DualDataset::load(dir, &cfg.data_layout, split)
        .map_err(|e| Failure::Usage(format!("cannot load {split:?} data from {}: {e}\n{FETCH_HINT}", dir.display())))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train {
            config,
            data,
            mode,
            spatial,
            seed,
            epochs,
            out,
            log,
        } => {
            let mut cfg = match config {
                Some(p) => persist::load_config(&p)?,
                None => RunConfig::default(),
            };
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if let Some(s) = spatial {
                cfg.spatial = matches!(s, Switch::On);
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            cfg.validate()?;
            let log = log.unwrap_or_else(|| {
                let mut p = out.clone().into_os_string();
                p.push(".log.jsonl");
                PathBuf::from(p)
            });
            let mut ckpt = init_checkpoint(&cfg)?;
            if cfg.epochs > 0 {
                let train = load_data(&data, &cfg, Split::Train)?;
                for _ in 0..cfg.epochs {
                    let entry = train_epoch(&mut ckpt, &train)?;
                    println!("{}", serde_json::to_string(&entry).expect("log entry serializes"));
                    persist::append_json_line(&log, &entry)?;
                }
            }
            persist::save_checkpoint(&out, &ckpt)?;
            eprintln!("wrote {}", out.display());
            Ok(())
        }
        Command::Split { checkpoint, out, groups } => {
            let ckpt = persist::load_checkpoint(&checkpoint)?;
            let groups = groups.unwrap_or(ckpt.config.split_groups);
            let a = greedy_split(&ckpt.network, groups, &ckpt.config.split_layers())?;
            persist::save_assignment(&out, &a)?;
            for (layer, sizes) in a.group_sizes() {
                println!("layer {layer}: group sizes {sizes:?}");
            }
            for (layer, mass) in inter_group_weight_mass(&ckpt.network, &a)? {
                println!("layer {layer}: inter-group weight mass {mass}");
            }
            println!("mean inter-group weight mass {}", mean_inter_group_weight_mass(&ckpt.network, &a)?);
            Ok(())
        }
        Command::Eval {
            checkpoint,
            assignment,
            data,
            results,
        } => {
            let ckpt = persist::load_checkpoint(&checkpoint)?;
            let cfg = &ckpt.config;
            let a = assignment.map(|p| persist::load_assignment(&p)).transpose()?;
            let test = load_data(&data, cfg, Split::Test)?;
            let opts = EvalOptions {
                test_pairing_seed: cfg.test_pairing_seed,
                mnist_weight: cfg.mnist_weight,
                ..EvalOptions::default()
            };
            let mut report = evaluate(&ckpt.network, a.as_ref(), &test, cfg.mode, &opts)?;
            report.spatial = Some(cfg.spatial);
            report.seed = Some(cfg.seed);
            report.checkpoint = Some(checkpoint.display().to_string());
            if let Some(a) = &a {
                report.inter_group_weight_mass = Some(mean_inter_group_weight_mass(&ckpt.network, a)?);
            }
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            persist::append_report(&results, &report)?;
            Ok(())
        }
        Command::Export {
            checkpoint,
            assignment,
            out,
            min_inweight,
            min_edge,
        } => {
            if !assignment.exists() {
                return Err(Failure::Usage(format!(
                    "assignment {} not found; create it with `spatialnet split`",
                    assignment.display()
                )));
            }
            let ckpt = persist::load_checkpoint(&checkpoint)?;
            let a = persist::load_assignment(&assignment)?;
            let s = export(&out, &ckpt.network, &ckpt.positions, &a, min_inweight, min_edge)?;
            println!("{} neurons, {} edges written to {}", s.neurons, s.edges, out.display());
            Ok(())
        }
        Command::Gradcheck {
            seed,
            size: Size::Small,
            perturb_gradient,
        } => {
            let report = gradcheck::run(seed, perturb_gradient)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            println!("max relative error {:e}", report.max_relative_error);
            if report.passed(DEFAULT_TOLERANCE) {
                Ok(())
            } else {
                Err(Failure::Check(format!(
                    "max relative error {:e} exceeds {DEFAULT_TOLERANCE:e}",
                    report.max_relative_error
                )))
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, msg) = match f {
                Failure::Check(m) => (1, m),
                Failure::Usage(m) => (2, m),
                Failure::Numerical(m) => (3, m),
            };
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
