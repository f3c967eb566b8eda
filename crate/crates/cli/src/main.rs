//! `ecam`: dataset generation, training, evaluation, inference and gradient
//! checking from the command line.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ecam_core::data::{self, ClassCounts, Split, SplitCounts, SyntheticSpec};
use ecam_core::engine::{
    self, InferOptions, OracleOptions, Selection, TrainParams, DEFAULT_OPACITY, DEFAULT_SNAPSHOT_EVERY,
    METRICS_CSV_HEADER,
};
use ecam_core::error::exit;
use ecam_core::net::parse_scale_list;
use ecam_core::optim::{self, DEFAULT_LEARNING_RATE, DEFAULT_MOMENTUM};
use ecam_core::{Arch, Error, NetworkConfig};

#[derive(Debug, Parser)]
#[command(name = "ecam", version, about = "Multi-scale class activation map classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset and its manifest.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// `A,B` counts for every split, or `A,B/A,B/A,B` for train/val/test.
        #[arg(long)]
        per_split: Option<String>,
        /// Image extent as `HxW`.
        #[arg(long, default_value = "64x64")]
        size: String,
        #[arg(long, default_value_t = 1)]
        folds: usize,
        /// Synthetic patients per class per split.
        #[arg(long, default_value_t = 5)]
        patients: usize,
    },
    /// Train one fold and keep the best validation snapshot.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 1)]
        fold: usize,
        #[arg(long, default_value = "proposed")]
        arch: Arch,
        #[arg(long, default_value_t = DEFAULT_LEARNING_RATE)]
        lr: f64,
        #[arg(long, default_value_t = DEFAULT_MOMENTUM)]
        momentum: f64,
        #[arg(long, default_value_t = DEFAULT_SNAPSHOT_EVERY)]
        snapshot_every: usize,
        /// Defaults to four times the training-set size.
        #[arg(long)]
        max_iters: Option<usize>,
        /// Seeds both the initial weights and the shuffle.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Snapshot ranking statistic: `f1` or `accuracy`.
        #[arg(long, default_value = "f1")]
        selection: Selection,
        /// Backbone filters per scale, comma-separated.
        #[arg(long, default_value = "8,16,32,64,64")]
        filters: String,
    },
    /// Evaluate a checkpoint on one split of a fold.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 1)]
        fold: usize,
        #[arg(long, default_value = "test")]
        split: Split,
        /// CSV file the report row is appended to (header written when new).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Predict one image and write its heatmaps.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Heatmaps to write, e.g. `3,4,5,fused`.
        #[arg(long, default_value = "fused")]
        scales: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_OPACITY)]
        opacity: f64,
    },
    /// Run the finite-difference oracle suite.
    Gradcheck {
        /// Full trial count instead of the quick subset.
        #[arg(long)]
        full: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: e.exit_code(),
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: exit::USAGE,
        message: message.into(),
    }
}

fn core<T, E: Into<Error>>(r: Result<T, E>) -> Result<T, Failure> {
    r.map_err(|e| Failure::from(e.into()))
}

fn parse_pair(s: &str) -> Result<ClassCounts, Failure> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| usage(format!("counts `{s}` are not `A,B`")))?;
    let n = |v: &str| v.trim().parse::<usize>().map_err(|_| usage(format!("bad count `{v}`")));
    Ok(ClassCounts { a: n(a)?, b: n(b)? })
}

fn parse_counts(s: &str) -> Result<SplitCounts, Failure> {
    let parts: Vec<&str> = s.split('/').collect();
    match parts.as_slice() {
        [one] => {
            let c = parse_pair(one)?;
            Ok(SplitCounts {
                train: c,
                val: c,
                test: c,
            })
        }
        [t, v, e] => Ok(SplitCounts {
            train: parse_pair(t)?,
            val: parse_pair(v)?,
            test: parse_pair(e)?,
        }),
        _ => Err(usage(format!("--per-split `{s}` is not `A,B` or `A,B/A,B/A,B`"))),
    }
}

fn parse_size(s: &str) -> Result<(usize, usize), Failure> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| usage(format!("size `{s}` is not HxW")))?;
    let n = |v: &str| v.trim().parse::<usize>().map_err(|_| usage(format!("bad extent `{v}`")));
    Ok((n(h)?, n(w)?))
}

fn parse_filters(s: &str) -> Result<Vec<usize>, Failure> {
    s.split(',')
        .map(|v| v.trim().parse::<usize>().map_err(|_| usage(format!("bad filter count `{v}`"))))
        .collect()
}

fn append_csv(path: &Path, row: &str) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure {
        code: exit::DATA,
        message: format!("{}: {e}", path.display()),
    };
    let fresh = !path.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    if fresh {
        writeln!(f, "{METRICS_CSV_HEADER}").map_err(io)?;
    }
    writeln!(f, "{row}").map_err(io)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenData {
            out,
            seed,
            per_split,
            size,
            folds,
            patients,
        } => {
            let (height, width) = parse_size(&size)?;
            let mut spec = SyntheticSpec {
                height,
                width,
                seed,
                folds,
                patients_per_class: patients,
                ..Default::default()
            };
            if let Some(c) = per_split {
                spec.counts = parse_counts(&c)?;
            }
            if let Err(e) = spec.validate() {
                return Err(usage(e.to_string()));
            }
            let manifests = core(data::generate_synthetic(&spec, &out))?;
            for m in &manifests {
                println!(
                    "fold {}: {} images (train {}, val {}, test {})",
                    m.fold,
                    m.samples.len(),
                    m.split(Split::Train).len(),
                    m.split(Split::Val).len(),
                    m.split(Split::Test).len()
                );
            }
            println!("manifest: {}", out.join("manifest.csv").display());
        }
        Command::Train {
            manifest,
            fold,
            arch,
            lr,
            momentum,
            snapshot_every,
            max_iters,
            seed,
            out,
            selection,
            filters,
        } => {
            let filters_per_scale = parse_filters(&filters)?;
            let config = NetworkConfig {
                scales: filters_per_scale.len(),
                filters_per_scale,
                arch,
                seed,
                ..Default::default()
            };
            if let Err(e) = config.validate() {
                return Err(usage(e.to_string()));
            }
            if snapshot_every == 0 {
                return Err(usage("--snapshot-every must be at least 1"));
            }
            let fold_manifest = core(data::load_fold(&manifest, fold))?;
            let params = TrainParams {
                learning_rate: lr,
                momentum,
                snapshot_every,
                max_iterations: max_iters,
                seed,
                selection,
                out_dir: Some(out.clone()),
            };
            let (best, run) = core(engine::train_fold(&fold_manifest, config, &params, |s| {
                println!("iter {:>6}  loss {:.4}  val {:.4}", s.iteration, s.mean_loss, s.score);
            }))?;
            println!(
                "selected iteration {} (val {:.4}) of {}; wrote {}",
                best.iteration,
                run.best.score,
                run.max_iterations,
                out.join("best.ckpt").display()
            );
        }
        Command::Eval {
            checkpoint,
            manifest,
            fold,
            split,
            csv,
        } => {
            let ckpt = core(optim::load(&checkpoint))?;
            let fold_manifest = core(data::load_fold(&manifest, fold))?;
            let samples = fold_manifest.split(split);
            let report = core(engine::evaluate(&ckpt.network, &samples, Some(fold)))?;
            for name in &report.degenerate {
                eprintln!("warning: {name} has a zero denominator, reported as 0");
            }
            println!("{report}");
            let csv = csv.unwrap_or_else(|| {
                checkpoint
                    .parent()
                    .unwrap_or(Path::new("."))
                    .join("metrics.csv")
            });
            append_csv(&csv, &report.csv_row(&ckpt.network.arch().to_string(), &split.to_string()))?;
        }
        Command::Infer {
            checkpoint,
            image,
            scales,
            out,
            opacity,
        } => {
            let tags = parse_scale_list(&scales).map_err(usage)?;
            if !(0.0..=1.0).contains(&opacity) {
                return Err(usage("--opacity must lie in [0, 1]"));
            }
            let opts = InferOptions { tags, opacity };
            let result = core(engine::infer(&checkpoint, &image, &out, &opts))?;
            let label = data::Label::from_class_index(result.predicted)
                .map_or_else(|| result.predicted.to_string(), |l| l.to_string());
            let probs: Vec<String> = result.probabilities.iter().map(|p| format!("{p:.4}")).collect();
            println!("class {label}  probabilities [{}]", probs.join(", "));
            for f in result.heatmaps.iter().chain([&result.overlay]) {
                println!("wrote {}", f.display());
            }
        }
        Command::Gradcheck { full, seed } => {
            let mut opts = if full { OracleOptions::full() } else { OracleOptions::quick() };
            if let Some(s) = seed {
                opts.seed = s;
            }
            let report = engine::run_oracle_suite(&opts);
            for c in &report.checks {
                println!(
                    "{} {:<22} trials {:>3}  coords {:>6}  skipped {:>4}  max rel err {:.3e}  {:.1}s",
                    if c.passed() { "PASS" } else { "FAIL" },
                    c.name,
                    c.trials,
                    c.coordinates,
                    c.skipped,
                    c.max_relative_error,
                    c.elapsed.as_secs_f64()
                );
            }
            if !report.passed() {
                return Err(Failure {
                    code: exit::NUMERIC,
                    message: format!(
                        "gradient check failed (max relative error {:.3e})",
                        report.max_relative_error()
                    ),
                });
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code as u8)
        }
    }
}
