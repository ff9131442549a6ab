//! Command implementations wiring the pipeline:
//! generate -> fit -> eval -> reanimate.

use std::fmt::Write as _;
use std::path::Path;

use artigauss_core::gaussian::{assign_hard, GaussianSet};
use artigauss_core::kinematics::{
    self, FinetuneOptions, KinematicModel, SegmentOptions,
};
use artigauss_core::losses::{FitMode, FlowOracle, NearestNeighborFlow, ZeroFlow};
use artigauss_core::metrics;
use artigauss_core::optimizer::{fit_sweep, FitResult, LossTrace, OptimizerConfig, Progress};
use artigauss_core::synth::{self, Dataset, GroundTruthFlow};

use crate::error::{CliError, CliResult};
use crate::formats::{
    self, export_ply, fmt_float, load_dataset, save_dataset, save_kinematic, save_model,
    FitArtifacts, MetricsReport,
};

pub const MERGE_THRESHOLD: f64 = 3e-2;
pub const TREE_LAMBDA_SPATIAL: f64 = 100.0;
pub const TREE_LAMBDA_1DOF: f64 = 1.0;
pub const FINETUNE_ITERATIONS: usize = 500;
pub const EVAL_SUBSAMPLE: usize = 256;

/// One status line per 100 iterations to standard error.
pub struct StderrProgress {
    pub label: String,
}

impl Progress for StderrProgress {
    fn log(&mut self, iteration: usize, trace: &LossTrace) {
        eprintln!(
            "{}iter={} total={:.6} mle={:.6} sep={:.6} cd={:.6} emd={:.6} flow={:.6}",
            self.label, iteration, trace.total, trace.mle, trace.sep, trace.cd, trace.emd,
            trace.flow
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum OcclusionKind {
    None,
    Partial,
    Camera,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ModeArg {
    Full,
    Partial,
}

impl ModeArg {
    pub fn to_fit_mode(self) -> FitMode {
        match self {
            ModeArg::Full => FitMode::Full,
            ModeArg::Partial => FitMode::Partial,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum FlowArg {
    Gt,
    Nn,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ProfileArg {
    Desk,
    Paper,
}

pub fn cmd_generate(
    preset_name: &str,
    frames: usize,
    points: usize,
    noise: f64,
    occlusion: OcclusionKind,
    seed: u64,
    out: &Path,
) -> CliResult<()> {
    let spec = synth::preset(preset_name, frames, points, noise, seed)?;
    let ds = synth::generate(&spec)?;
    let ds = match occlusion {
        OcclusionKind::None => ds,
        OcclusionKind::Partial => synth::make_partial(&ds, seed)?,
        OcclusionKind::Camera => synth::make_occluded(&ds, seed)?,
    };
    save_dataset(&ds, out)?;
    let total: usize = ds.frames.iter().map(Vec::len).sum();
    println!(
        "generated preset={preset_name} frames={} points_total={total} occlusion={occlusion:?} seed={seed} -> {}",
        ds.frames.len(),
        out.display()
    );
    Ok(())
}

pub struct FitConfigArgs {
    pub m: Option<Vec<usize>>,
    pub iters: Option<usize>,
    pub seed: u64,
    pub mode: ModeArg,
    pub flow: FlowArg,
    pub profile: ProfileArg,
    pub emd_subsample: Option<usize>,
    pub target_subset: Option<usize>,
    pub warmup: Option<usize>,
    pub finetune_iters: Option<usize>,
}

pub fn build_config(args: &FitConfigArgs) -> OptimizerConfig {
    let mut config = match args.profile {
        ProfileArg::Desk => OptimizerConfig::desk(),
        ProfileArg::Paper => OptimizerConfig::paper(),
    };
    if let Some(m) = &args.m {
        config.m_candidates = m.clone();
    }
    if let Some(iters) = args.iters {
        config.iterations = iters;
        // Keep the schedule proportional when only the length is overridden.
        config.emd_start_iteration = config.emd_start_iteration.min(iters / 3);
    }
    if let Some(sub) = args.emd_subsample {
        config.emd_subsample = sub;
    }
    if args.target_subset.is_some() {
        config.target_subset = args.target_subset;
    }
    if let Some(warmup) = args.warmup {
        config.warmup_iterations = warmup;
    }
    config.seed = args.seed;
    config.mode = args.mode.to_fit_mode();
    if args.flow == FlowArg::Off {
        config.weights.lambda_flow = 0.0;
    }
    config
}

fn make_oracle(flow: FlowArg, ds: &Dataset) -> CliResult<Box<dyn FlowOracle>> {
    match flow {
        FlowArg::Gt => {
            let oracle = GroundTruthFlow::from_dataset(ds).map_err(|_| {
                CliError::usage("--flow gt requires a dataset with ground truth")
            })?;
            Ok(Box::new(oracle))
        }
        FlowArg::Nn => Ok(Box::new(NearestNeighborFlow)),
        FlowArg::Off => Ok(Box::new(ZeroFlow)),
    }
}

pub struct FitOutcome {
    pub best: FitResult,
    pub all: Vec<FitResult>,
    pub set: GaussianSet,
    pub labels: Vec<Vec<usize>>,
    pub model: KinematicModel,
    pub finetune_history: Vec<f64>,
}

/// The full pipeline behind `fit`: sweep over part counts, merge, extract
/// the tree, and refine the joints.
pub fn run_fit_pipeline(
    ds: &Dataset,
    config: &OptimizerConfig,
    oracle: &dyn FlowOracle,
    finetune_iterations: usize,
    progress: &mut dyn Progress,
) -> CliResult<FitOutcome> {
    let (best, all) = fit_sweep(&ds.frames, config, oracle, progress)?;

    // Evaluation-mode hard labels per frame.
    let mut labels: Vec<Vec<usize>> = Vec::with_capacity(ds.frames.len());
    for (t, frame) in ds.frames.iter().enumerate() {
        labels.push(assign_hard(frame, &best.set, t)?);
    }
    let (set, remap) = kinematics::prune_empty_parts(&best.set, &labels)?;
    let labels = kinematics::remap_labels(&labels, &remap);

    let segment_opts = SegmentOptions {
        use_fused_points: config.mode == FitMode::Partial,
        ..SegmentOptions::default()
    };
    let (set, remap) =
        kinematics::merge_parts(&set, &ds.frames, &labels, MERGE_THRESHOLD, &segment_opts)?;
    let labels = kinematics::remap_labels(&labels, &remap);

    let model = if set.num_parts() >= 2 {
        let costs = kinematics::edge_costs(&set, &ds.frames, &labels, &segment_opts)?;
        let tree = kinematics::build_tree(&costs, TREE_LAMBDA_SPATIAL, TREE_LAMBDA_1DOF);
        kinematics::select_root_and_orient(&tree, &set)?
    } else {
        kinematics::select_root_and_orient(&[], &set)?
    };

    let finetune = FinetuneOptions {
        iterations: finetune_iterations,
        lr: config.lr_kinematic,
        lambda_cd: config.weights.lambda_cd,
        lambda_emd: config.weights.lambda_emd,
        emd_subsample: config.emd_subsample,
        seed: config.seed,
        mode: config.mode,
    };
    let (model, finetune_history) =
        kinematics::finetune_joints(&model, &ds.frames, &labels, &finetune)?;

    Ok(FitOutcome {
        best,
        all,
        set,
        labels,
        model,
        finetune_history,
    })
}

pub fn cmd_fit(
    dir: &Path,
    args: &FitConfigArgs,
    out_dir: &Path,
    progress: &mut dyn Progress,
) -> CliResult<()> {
    let ds = load_dataset(dir)?;
    let config = build_config(args);
    let oracle = make_oracle(args.flow, &ds)?;
    let finetune_iterations = args.finetune_iters.unwrap_or(FINETUNE_ITERATIONS);
    let outcome = run_fit_pipeline(&ds, &config, oracle.as_ref(), finetune_iterations, progress)?;

    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::io(format!("creating {}: {e}", out_dir.display())))?;
    let artifacts = FitArtifacts::in_dir(out_dir);
    save_model(&outcome.set, &artifacts.model)?;
    save_kinematic(&outcome.model, &artifacts.kinematic)?;

    let mut report = String::from("{");
    let _ = write!(report, "\"chosen_m\":{},", outcome.best.set.num_parts());
    report.push_str("\"candidates\":[");
    for (i, result) in outcome.all.iter().enumerate() {
        if i > 0 {
            report.push(',');
        }
        let _ = write!(
            report,
            "{{\"m\":{},\"final_cd\":{}}}",
            result.set.num_parts(),
            fmt_float(result.final_cd)
        );
    }
    report.push_str("],");
    let _ = write!(report, "\"merged_parts\":{},", outcome.set.num_parts());
    let last = outcome.best.loss_history.last();
    let _ = write!(
        report,
        "\"final_total\":{},",
        fmt_float(last.map_or(0.0, |t| t.total))
    );
    let _ = write!(
        report,
        "\"finetune_first\":{},\"finetune_last\":{}",
        fmt_float(outcome.finetune_history.first().copied().unwrap_or(0.0)),
        fmt_float(outcome.finetune_history.last().copied().unwrap_or(0.0))
    );
    report.push_str("}\n");
    std::fs::write(&artifacts.report, report)
        .map_err(|e| CliError::io(format!("writing {}: {e}", artifacts.report.display())))?;

    println!(
        "fit: chosen m={} (candidates {:?}), merged to {} parts, root={}, edges={}",
        outcome.best.set.num_parts(),
        outcome
            .all
            .iter()
            .map(|r| (r.set.num_parts(), r.final_cd))
            .collect::<Vec<_>>(),
        outcome.set.num_parts(),
        outcome.model.root,
        outcome.model.edges.len()
    );
    Ok(())
}

/// Metric inputs assembled from the artifacts; shared by `eval` and the
/// acceptance suite.
pub fn evaluate(
    ds: &Dataset,
    set: &GaussianSet,
    model: &KinematicModel,
) -> CliResult<MetricsReport> {
    let gt = ds
        .gt
        .as_ref()
        .ok_or_else(|| CliError::missing_gt("dataset has no ground truth"))?;

    let mut est_labels: Vec<Vec<usize>> = Vec::with_capacity(ds.frames.len());
    for (t, frame) in ds.frames.iter().enumerate() {
        est_labels.push(assign_hard(frame, set, t)?);
    }

    let steps = model.num_timesteps();
    let states = model.edge_states();
    let mut est_poses = vec![Vec::with_capacity(steps); model.parts.len()];
    for u in 0..steps {
        for (i, pose) in kinematics::forward_kinematics(model, &states, u)?
            .into_iter()
            .enumerate()
        {
            est_poses[i].push(pose);
        }
    }

    let recon = metrics::reconstruction_error(
        &ds.frames[0],
        &gt.poses,
        &gt.labels[0],
        &est_poses,
        &est_labels[0],
    )?;
    let flow = metrics::flow_error(&ds.frames, &gt.poses, &gt.labels, &est_poses, &est_labels)?;
    let (per_scan, multi_scan) = metrics::rand_index_suite(&est_labels, &gt.labels)?;

    let est_tree = model_tree(model)?;
    let gt_pairs: Vec<(usize, usize)> = gt.joints.iter().map(|j| (j.parent, j.child)).collect();
    let gt_tree = metrics::RootedTree::from_edges(gt.poses.len(), &gt_pairs, gt.root)
        .map_err(CliError::from)?;
    let ted = metrics::tree_edit_distance(&est_tree, &gt_tree);

    let unseen_states: Vec<Vec<f64>> = gt.holdout.iter().map(|h| h.states.clone()).collect();
    let mapped = metrics::map_gt_states_to_edges(
        model,
        &est_labels,
        &gt.labels,
        &gt_pairs,
        &gt.trajectory,
        &unseen_states,
    );
    let unseen: Vec<(Vec<f64>, Vec<artigauss_core::Vec3>)> = mapped
        .into_iter()
        .zip(gt.holdout.iter().map(|h| h.points.clone()))
        .collect();
    let reanimate = metrics::reanimate_error(
        model,
        &ds.frames[0],
        &est_labels[0],
        &unseen,
        EVAL_SUBSAMPLE,
        0,
    )?;

    Ok(MetricsReport {
        recon_error_raw: recon,
        flow_error_raw: flow,
        reanimate_error_raw: reanimate,
        rand_index_per_scan: per_scan,
        rand_index_multi_scan: multi_scan,
        tree_edit_distance: ted,
    })
}

pub fn model_tree(model: &KinematicModel) -> CliResult<metrics::RootedTree> {
    let pairs: Vec<(usize, usize)> = model.edges.iter().map(|e| (e.parent, e.child)).collect();
    metrics::RootedTree::from_edges(model.parts.len(), &pairs, model.root).map_err(CliError::from)
}

pub fn cmd_eval(dir: &Path, model_path: &Path, kinematic_path: &Path, out: &Path) -> CliResult<()> {
    let ds = load_dataset(dir)?;
    if ds.gt.is_none() {
        return Err(CliError::missing_gt("eval requires a dataset with ground truth"));
    }
    let set = formats::load_model(model_path)?;
    let model = formats::load_kinematic(kinematic_path)?;
    let report = evaluate(&ds, &set, &model)?;
    std::fs::write(out, formats::metrics_to_json(&report))
        .map_err(|e| CliError::io(format!("writing {}: {e}", out.display())))?;
    print!("{}", formats::metrics_table(&report));
    Ok(())
}

pub fn cmd_reanimate(
    dir: &Path,
    model_path: &Path,
    kinematic_path: &Path,
    states_path: &Path,
    source: &str,
    out: &Path,
) -> CliResult<()> {
    let ds = load_dataset(dir)?;
    let set = formats::load_model(model_path)?;
    let model = formats::load_kinematic(kinematic_path)?;
    let frame_idx: usize = source
        .strip_prefix("frame:")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| CliError::usage(format!("bad --source '{source}', expected frame:<index>")))?;
    let frame = ds
        .frames
        .get(frame_idx)
        .ok_or_else(|| CliError::usage(format!("source frame {frame_idx} out of range")))?;
    let labels = assign_hard(frame, &set, frame_idx)?;
    let states = formats::load_states(states_path, model.edges.len())?;
    let points = kinematics::reanimate(&model, &states, frame, &labels)?;
    export_ply(&points, &labels, out)?;
    println!(
        "reanimated frame {frame_idx} under {} joint states -> {}",
        states.len(),
        out.display()
    );
    Ok(())
}
