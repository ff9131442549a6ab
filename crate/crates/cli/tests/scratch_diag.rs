// Temporary diagnostic; not part of the suite.

use artigauss::pipeline;
use artigauss_core::gaussian::assign_hard;
use artigauss_core::kinematics;
use artigauss_core::losses::FitMode;
use artigauss_core::metrics;
use artigauss_core::optimizer::{fit_once, NoProgress, OptimizerConfig};
use artigauss_core::synth::{self, GroundTruthFlow};

#[test]
#[ignore]
fn diagnose_chain3_fit() {
    let spec = synth::preset("chain3", 8, 512, 0.006, 7).unwrap();
    let ds = synth::generate(&spec).unwrap();
    let gt = ds.gt.as_ref().unwrap();
    let oracle = GroundTruthFlow::from_dataset(&ds).unwrap();
    let mut config = OptimizerConfig::desk();
    config.seed = 7;
    config.mode = FitMode::Full;
    if let Some(v) = std::env::var("DIAG_EMDSTART").ok().and_then(|v| v.parse().ok()) {
        config.emd_start_iteration = v;
    }
    if let Some(v) = std::env::var("DIAG_ITERS").ok().and_then(|v| v.parse().ok()) {
        config.iterations = v;
    }
    config.flow_full_sum = std::env::var("DIAG_FULLFLOW").is_ok();

    let m_fit = std::env::var("DIAG_M").ok().and_then(|v| v.parse().ok()).unwrap_or(3);
    let result = fit_once(&ds.frames, m_fit, &config, &oracle, &mut NoProgress).unwrap();
    println!("final_cd = {}", result.final_cd);
    for (i, t) in result.loss_history.iter().enumerate() {
        if i % 150 == 0 || i + 1 == result.loss_history.len() {
            println!(
                "it {i:4}: mle {:10.2} sep {:8.4} cd {:10.3} emd {:10.3} flow {:10.4}",
                t.mle, t.sep, t.cd, t.emd, t.flow
            );
        }
    }
    let m_parts = result.set.num_parts();
    for (i, part) in result.set.parts.iter().enumerate() {
        println!(
            "part {i}: center0 {:?} scales {:?}",
            part.centers[0],
            part.scales()
        );
        println!("         center7 {:?}", part.centers[7]);
    }
    // Assignment quality per frame.
    let mut labels = Vec::new();
    for (t, frame) in ds.frames.iter().enumerate() {
        labels.push(assign_hard(frame, &result.set, t).unwrap());
    }
    let (per_scan, multi) = metrics::rand_index_suite(&labels, &gt.labels).unwrap();
    println!("RI per-scan {per_scan:.4} multi {multi:.4}");

    // Confusion counts frame 0 and frame 7.
    for t in [0usize, 7] {
        let mut confusion = vec![[0usize; 3]; m_parts];
        for (&e, &g) in labels[t].iter().zip(&gt.labels[t]) {
            confusion[e][g] += 1;
        }
        println!("frame {t} confusion (est rows x gt cols): {confusion:?}");
    }

    // Merge losses between all pairs.
    for i in 0..m_parts {
        for j in (i + 1)..m_parts {
            println!(
                "merge_loss({i},{j}) = {:.5}",
                kinematics::merge_loss(&result.set, i, j).unwrap()
            );
        }
    }

    // Post-merge segmentation quality.
    let opts = kinematics::SegmentOptions::default();
    let (merged, remap) =
        kinematics::merge_parts(&result.set, &ds.frames, &labels, 3e-2, &opts).unwrap();
    let merged_labels = kinematics::remap_labels(&labels, &remap);
    let (ri_m, _) = metrics::rand_index_suite(&merged_labels, &gt.labels).unwrap();
    println!("after merge: {} parts, RI per-scan {ri_m:.4}", merged.num_parts());

    // Per-part: majority GT link and per-transition deviation of the
    // part's motion from that link's GT motion.
    for i in 0..m_parts {
        let mut votes = [0usize; 3];
        for (t, frame_labels) in labels.iter().enumerate() {
            let _ = t;
            for (&e, &g) in frame_labels.iter().zip(&gt.labels[labels.len() - 1 - 0]) {
                let _ = (e, g);
            }
        }
        for (frame_labels, gt_frame) in labels.iter().zip(&gt.labels) {
            for (&e, &g) in frame_labels.iter().zip(gt_frame) {
                if e == i {
                    votes[g] += 1;
                }
            }
        }
        let majority = (0..3).max_by_key(|&g| votes[g]).unwrap();
        let mut dev = 0.0;
        for k in 0..7 {
            let o_est = artigauss_core::geometry::relative_motion(
                &result.set.parts[i].pose(k + 1).unwrap(),
                &result.set.parts[i].pose(k).unwrap(),
            );
            let o_gt = artigauss_core::geometry::relative_motion(&gt.poses[majority][k + 1], &gt.poses[majority][k]);
            dev += o_est.compose(&o_gt.inverse()).deviation_from_identity_sq();
        }
        println!("part {i}: votes {votes:?} majority {majority} track-dev {dev:.4}");
    }

    // Pose track error vs ground truth (centers motion).
    for i in 0..m_parts.min(3) {
        let o_est = artigauss_core::geometry::relative_motion(
            &result.set.parts[i].pose(7).unwrap(),
            &result.set.parts[i].pose(0).unwrap(),
        );
        println!("part {i} est motion 0->7: rot dev {:.4} t {:?}",
            o_est.deviation_from_identity_sq(), o_est.translation);
    }
    for g in 0..3 {
        let o_gt = artigauss_core::geometry::relative_motion(&gt.poses[g][7], &gt.poses[g][0]);
        println!("gt part {g} motion 0->7: rot dev {:.4} t {:?}",
            o_gt.deviation_from_identity_sq(), o_gt.translation);
    }
    let _ = pipeline::MERGE_THRESHOLD;
}

#[test]
#[ignore]
fn dynamics_from_ground_truth_init() {
    use artigauss_core::gaussian::GaussianPart;
    use artigauss_core::geometry::{matrix_to_rot6d, RigidTransform};
    use artigauss_core::losses::{total_loss, LossOptions, LossWeights};
    use artigauss_core::optimizer::AdamState;
    use artigauss_core::rng::Rng;

    let spec = synth::preset("chain3", 8, 512, 0.006, 7).unwrap();
    let ds = synth::generate(&spec).unwrap();
    let gt = ds.gt.as_ref().unwrap();
    let oracle = GroundTruthFlow::from_dataset(&ds).unwrap();

    // Ground-truth-exact model: poses = GT part poses composed with link
    // placement, scales matched to the boxes.
    let link_centers = [[0.5, 0.0, 0.0], [1.5, 0.0, 0.0], [2.5, 0.0, 0.0]];
    let parts: Vec<GaussianPart> = (0..3)
        .map(|i| {
            let rotations = (0..8)
                .map(|u| matrix_to_rot6d(&gt.poses[i][u].rotation))
                .collect();
            let centers = (0..8)
                .map(|u| gt.poses[i][u].apply(link_centers[i]))
                .collect();
            GaussianPart::new(
                rotations,
                centers,
                [(0.5f64 / 1.7).ln(), (0.15f64 / 1.7).ln(), (0.1f64 / 1.7).ln()],
            )
            .unwrap()
        })
        .collect();
    let mut set = artigauss_core::gaussian::GaussianSet::new(parts).unwrap();
    let _ = RigidTransform::IDENTITY;

    let config = OptimizerConfig::desk();
    let weights = LossWeights::default();
    let phase_a = LossWeights { lambda_cd: 0.0, lambda_emd: 0.0, lambda_flow: 0.0, ..weights };
    let opts = LossOptions {
        temperature: 1.0,
        use_noise: std::env::var("DIAG_NONOISE").is_err(),
        emd_subsample: 128,
        target_subset: None,
        flow_anchor_only: true,
    };
    let mut rng = Rng::new(3);
    let mut adam = AdamState::new(set.param_len());
    let mut labels = Vec::new();
    for (t, frame) in ds.frames.iter().enumerate() {
        labels.push(assign_hard(frame, &set, t).unwrap());
    }
    let (ri0, _) = metrics::rand_index_suite(&labels, &gt.labels).unwrap();
    println!("GT-init RI = {ri0:.4}");

    for iteration in 0..1500 {
        let k = rng.index(8);
        let bd_a = total_loss(&set, &ds.frames, k, &phase_a, FitMode::Full, &oracle, &opts, &mut rng).unwrap();
        let mut params = set.flatten();
        adam.step(&mut params, &bd_a.gradient, config.lr_gaussians);
        set.unflatten(&params).unwrap();
        let past = iteration >= config.emd_start_iteration;
        let phase_b = LossWeights {
            lambda_mle: 0.0,
            lambda_cd: if past { 0.0 } else { weights.lambda_cd },
            lambda_emd: if past { weights.lambda_emd } else { 0.0 },
            ..weights
        };
        let bd_b = total_loss(&set, &ds.frames, k, &phase_b, FitMode::Full, &oracle, &opts, &mut rng).unwrap();
        let mut params = set.flatten();
        adam.step(&mut params, &bd_b.gradient, config.lr_gaussians);
        set.unflatten(&params).unwrap();
        if iteration % 300 == 0 || iteration == 1499 {
            let mut labels = Vec::new();
            for (t, frame) in ds.frames.iter().enumerate() {
                labels.push(assign_hard(frame, &set, t).unwrap());
            }
            let (ri, _) = metrics::rand_index_suite(&labels, &gt.labels).unwrap();
            println!(
                "it {iteration:4}: mle {:9.1} cd {:8.2} emd {:8.2} flow {:8.3} RI {ri:.4} s0 {:?}",
                bd_a.mle, bd_b.cd, bd_b.emd, bd_b.flow,
                set.parts[0].scales().map(|v| (v * 1000.0).round() / 1000.0)
            );
        }
    }
}
