//! Command-line front end for articulated object modeling: synthetic dataset
//! generation, model fitting, evaluation against ground truth, and
//! re-articulation to new poses.

pub mod error;
pub mod formats;
pub mod pipeline;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use error::{CliError, CliResult};
use pipeline::{FlowArg, ModeArg, OcclusionKind, ProfileArg};

#[derive(Parser, Debug)]
#[command(
    name = "artigauss",
    version,
    about = "Articulated object modeling from point cloud sequences with dynamic 3D Gaussians"
)]
pub struct Cli {
    /// Upper bound on internal parallelism; 1 guarantees bit-reproducible
    /// output (the current implementation always computes sequentially).
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic articulated dataset.
    Generate {
        /// Scene preset: chain2, chain3, prism2, star4, cyl-axis.
        #[arg(long)]
        preset: String,
        #[arg(long, default_value_t = 8)]
        frames: usize,
        /// Points per frame.
        #[arg(long, default_value_t = 512)]
        points: usize,
        /// Isotropic noise sigma in scene units.
        #[arg(long, default_value_t = 0.005)]
        noise: f64,
        #[arg(long, value_enum, default_value_t = OcclusionKind::None)]
        occlusion: OcclusionKind,
        /// Falls back to ARTIGAUSS_SEED, then 0.
        #[arg(long)]
        seed: Option<u64>,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the articulated model to a dataset directory.
    Fit {
        /// Dataset directory (as written by `generate`).
        dir: PathBuf,
        /// Part-count candidates for the selection sweep, e.g. 2,3,4.
        #[arg(long, value_delimiter = ',')]
        m: Option<Vec<usize>>,
        /// Optimization iterations per candidate.
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Loss family: `full` for complete clouds, `partial` for datasets
        /// with missing points.
        #[arg(long, value_enum, default_value_t = ModeArg::Full)]
        mode: ModeArg,
        /// Scene-flow oracle: ground-truth, nearest-neighbor, or disabled.
        #[arg(long, value_enum, default_value_t = FlowArg::Gt)]
        flow: FlowArg,
        /// desk = fast small-scale defaults; paper = the full 15k-iteration
        /// schedule.
        #[arg(long, value_enum, default_value_t = ProfileArg::Desk)]
        profile: ProfileArg,
        /// EMD subsample size per matched pair.
        #[arg(long)]
        emd_subsample: Option<usize>,
        /// Random subset of target steps per iteration.
        #[arg(long)]
        target_subset: Option<usize>,
        /// Warm-up iterations for scale initialization.
        #[arg(long)]
        warmup: Option<usize>,
        /// Joint-refinement iterations.
        #[arg(long)]
        finetune_iters: Option<usize>,
        /// Optional key = value config file; explicit flags win.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for model.json, kinematic.json, fit_report.json.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Evaluate fitted artifacts against the dataset's ground truth.
    Eval {
        dir: PathBuf,
        #[arg(long, default_value = "model.json")]
        model: PathBuf,
        #[arg(long, default_value = "kinematic.json")]
        kinematic: PathBuf,
        #[arg(long, default_value = "metrics.json")]
        out: PathBuf,
    },
    /// Re-articulate a source frame to new joint states and export a PLY.
    Reanimate {
        dir: PathBuf,
        #[arg(long, default_value = "model.json")]
        model: PathBuf,
        #[arg(long, default_value = "kinematic.json")]
        kinematic: PathBuf,
        /// JSON file mapping edge ids to joint values.
        #[arg(long)]
        states: PathBuf,
        /// Source cloud, e.g. frame:0.
        #[arg(long, default_value = "frame:0")]
        source: String,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Seed resolution: flag, then the ARTIGAUSS_SEED environment variable,
/// then 0.
pub fn resolve_seed(flag: Option<u64>) -> CliResult<u64> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match std::env::var("ARTIGAUSS_SEED") {
        Ok(text) => text
            .trim()
            .parse()
            .map_err(|_| CliError::usage(format!("ARTIGAUSS_SEED: bad seed '{text}'"))),
        Err(_) => Ok(0),
    }
}

/// Minimal key = value config file; `#` starts a comment. Recognized keys
/// mirror the fit flags. Values from flags win.
fn apply_config_file(
    path: &std::path::Path,
    args: &mut pipeline::FitConfigArgs,
    seed_flag: Option<u64>,
) -> CliResult<()> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("reading {}: {e}", path.display())))?;
    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::format(format!(
                "{}:{}: expected key = value",
                path.display(),
                line_no + 1
            )));
        };
        let key = key.trim();
        let value = value.trim();
        let bad = |what: &str| {
            CliError::format(format!(
                "{}:{}: bad {what} '{value}'",
                path.display(),
                line_no + 1
            ))
        };
        match key {
            "m" => {
                if args.m.is_none() {
                    let list: Result<Vec<usize>, _> =
                        value.split(',').map(|v| v.trim().parse()).collect();
                    args.m = Some(list.map_err(|_| bad("m list"))?);
                }
            }
            "iters" => {
                if args.iters.is_none() {
                    args.iters = Some(value.parse().map_err(|_| bad("iteration count"))?);
                }
            }
            "seed" => {
                if seed_flag.is_none() {
                    args.seed = value.parse().map_err(|_| bad("seed"))?;
                }
            }
            "emd_subsample" => {
                if args.emd_subsample.is_none() {
                    args.emd_subsample = Some(value.parse().map_err(|_| bad("subsample"))?);
                }
            }
            "target_subset" => {
                if args.target_subset.is_none() {
                    args.target_subset = Some(value.parse().map_err(|_| bad("subset"))?);
                }
            }
            "warmup" => {
                if args.warmup.is_none() {
                    args.warmup = Some(value.parse().map_err(|_| bad("warmup"))?);
                }
            }
            "finetune_iters" => {
                if args.finetune_iters.is_none() {
                    args.finetune_iters = Some(value.parse().map_err(|_| bad("count"))?);
                }
            }
            other => {
                return Err(CliError::format(format!(
                    "{}:{}: unknown key '{other}'",
                    path.display(),
                    line_no + 1
                )));
            }
        }
    }
    Ok(())
}

pub fn run(cli: Cli) -> CliResult<()> {
    if cli.threads == 0 {
        return Err(CliError::usage("--threads must be at least 1"));
    }
    match cli.command {
        Command::Generate {
            preset,
            frames,
            points,
            noise,
            occlusion,
            seed,
            out,
        } => {
            let seed = resolve_seed(seed)?;
            pipeline::cmd_generate(&preset, frames, points, noise, occlusion, seed, &out)
        }
        Command::Fit {
            dir,
            m,
            iters,
            seed,
            mode,
            flow,
            profile,
            emd_subsample,
            target_subset,
            warmup,
            finetune_iters,
            config,
            out,
        } => {
            let resolved_seed = resolve_seed(seed)?;
            let mut args = pipeline::FitConfigArgs {
                m,
                iters,
                seed: resolved_seed,
                mode,
                flow,
                profile,
                emd_subsample,
                target_subset,
                warmup,
                finetune_iters,
            };
            if let Some(path) = config {
                apply_config_file(&path, &mut args, seed)?;
            }
            let mut progress = pipeline::StderrProgress {
                label: String::new(),
            };
            pipeline::cmd_fit(&dir, &args, &out, &mut progress)
        }
        Command::Eval {
            dir,
            model,
            kinematic,
            out,
        } => pipeline::cmd_eval(&dir, &model, &kinematic, &out),
        Command::Reanimate {
            dir,
            model,
            kinematic,
            states,
            source,
            out,
        } => pipeline::cmd_reanimate(&dir, &model, &kinematic, &states, &source, &out),
    }
}

/// Parses and runs; returns the process exit code. Used by `main` and the
/// integration tests.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // clap exits 0 for --help/--version, 2 for usage errors.
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
