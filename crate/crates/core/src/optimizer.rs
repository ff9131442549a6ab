//! Step 1 of the pipeline: initialization, the per-iteration training loop
//! over the Gaussian parameters, loss scheduling, and the sweep over
//! candidate part counts.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::float::ln;
use crate::gaussian::{GaussianPart, GaussianSet};
use crate::geometry::{dist_sq, Vec3};
use crate::losses::{
    chamfer_full_sum, total_loss, FitMode, FlowOracle, LossOptions, LossWeights,
};
use crate::rng::{mix_seed, Rng};

#[derive(Clone, Debug)]
pub struct OptimizerConfig {
    pub m_candidates: Vec<usize>,
    pub iterations: usize,
    pub lr_gaussians: f64,
    pub lr_kinematic: f64,
    /// Learning rate of the short warm-up stage; larger than the main rate
    /// so the initial centers and scales settle within a few hundred steps.
    pub lr_warmup: f64,
    pub warmup_iterations: usize,
    /// Iterations before this use the Chamfer term; from here on the EMD
    /// term replaces it.
    pub emd_start_iteration: usize,
    pub weights: LossWeights,
    pub temperature: f64,
    pub seed: u64,
    pub mode: FitMode,
    pub emd_subsample: usize,
    pub target_subset: Option<usize>,
    /// Evaluate the flow term over every transition each iteration instead
    /// of only the sampled frame's own transition.
    pub flow_full_sum: bool,
    /// Fraction of the iterations after which the learning rate starts a
    /// cosine decay to 5% of its base value. Without the decay tail the
    /// Adam iterates keep orbiting the optimum at a step-size-scale radius,
    /// which is too coarse for the merge stage's pose-track comparisons.
    pub lr_decay_start: f64,
}

impl OptimizerConfig {
    /// Small profile sized so a full fit finishes in seconds to minutes.
    pub fn desk() -> Self {
        OptimizerConfig {
            m_candidates: vec![2, 3, 4],
            iterations: 1500,
            lr_gaussians: 2e-3,
            lr_kinematic: 1.5e-2,
            lr_warmup: 2e-2,
            warmup_iterations: 500,
            emd_start_iteration: 500,
            weights: LossWeights::default(),
            temperature: 1.0,
            seed: 0,
            mode: FitMode::Full,
            emd_subsample: 128,
            target_subset: None,
            flow_full_sum: false,
            lr_decay_start: 0.6,
        }
    }

    /// Full-scale schedule: 15k iterations with EMD switched in at 5k.
    pub fn paper() -> Self {
        OptimizerConfig {
            m_candidates: vec![10, 11, 12, 13, 14, 15],
            iterations: 15_000,
            emd_start_iteration: 5_000,
            emd_subsample: 256,
            ..OptimizerConfig::desk()
        }
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::desk()
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// First/second-moment accumulators of the Adam update.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - crate::float::powf(ADAM_BETA1, t as f64);
        let bias2 = 1.0 - crate::float::powf(ADAM_BETA2, t as f64);
        for i in 0..params.len() {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * grad[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bias1;
            let v_hat = self.v[i] / bias2;
            params[i] -= lr * m_hat / (crate::float::sqrt(v_hat) + ADAM_EPSILON);
        }
    }
}

/// Per-iteration record of the (unweighted) term values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTrace {
    pub mle: f64,
    pub sep: f64,
    pub cd: f64,
    pub emd: f64,
    pub flow: f64,
    pub total: f64,
}

/// Sink for the once-per-100-iterations progress line.
pub trait Progress {
    fn log(&mut self, iteration: usize, trace: &LossTrace);
}

pub struct NoProgress;

impl Progress for NoProgress {
    fn log(&mut self, _iteration: usize, _trace: &LossTrace) {}
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub set: GaussianSet,
    /// Full double-sum Chamfer score in hard-assignment evaluation mode;
    /// the model-selection quantity.
    pub final_cd: f64,
    pub loss_history: Vec<LossTrace>,
    pub config: OptimizerConfig,
}

/// Greedy farthest-point subset of the cloud; the first point is a seeded
/// random pick, each next point maximizes the distance to the chosen set,
/// ties to the lowest point index.
pub fn fps_init(cloud: &[Vec3], m: usize, seed: u64) -> Result<Vec<Vec3>> {
    if cloud.len() < m {
        return Err(Error::TooFewPoints {
            needed: m,
            got: cloud.len(),
        });
    }
    let mut rng = Rng::new(mix_seed(seed, 0xf5));
    let start = rng.index(cloud.len());
    let mut chosen = Vec::with_capacity(m);
    let mut min_dist = vec![f64::INFINITY; cloud.len()];
    let mut current = start;
    for _ in 0..m {
        chosen.push(cloud[current]);
        for (i, &p) in cloud.iter().enumerate() {
            min_dist[i] = min_dist[i].min(dist_sq(p, cloud[current]));
        }
        let mut best = 0;
        for i in 1..cloud.len() {
            if min_dist[i] > min_dist[best] {
                best = i;
            }
        }
        current = best;
    }
    Ok(chosen)
}

fn bbox_diagonal(cloud: &[Vec3]) -> f64 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in cloud {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    crate::float::sqrt(
        (hi[0] - lo[0]) * (hi[0] - lo[0])
            + (hi[1] - lo[1]) * (hi[1] - lo[1])
            + (hi[2] - lo[2]) * (hi[2] - lo[2]),
    )
}

/// Initial model for the first frame: farthest-point centers, identity
/// rotations, scales warmed up against the likelihood and separation terms,
/// then the frame-0 pose replicated across all timesteps.
pub fn init_gaussians(
    cloud: &[Vec3],
    m: usize,
    num_timesteps: usize,
    config: &OptimizerConfig,
) -> Result<GaussianSet> {
    Ok(init_gaussians_detailed(cloud, m, num_timesteps, config)?.0)
}

/// As [`init_gaussians`], also returning the warm-up trace of the
/// likelihood term.
pub fn init_gaussians_detailed(
    cloud: &[Vec3],
    m: usize,
    num_timesteps: usize,
    config: &OptimizerConfig,
) -> Result<(GaussianSet, Vec<f64>)> {
    let centers = fps_init(cloud, m, config.seed)?;
    let init_scale = ln((0.1 * bbox_diagonal(cloud)).max(crate::gaussian::MIN_SCALE));
    let parts: Vec<GaussianPart> = centers
        .into_iter()
        .map(|c| GaussianPart::static_at(c, [init_scale; 3], 1))
        .collect();
    let mut warm = GaussianSet::new(parts)?;

    let weights = LossWeights {
        lambda_cd: 0.0,
        lambda_emd: 0.0,
        lambda_flow: 0.0,
        ..config.weights
    };
    let frames = [cloud.to_vec()];
    let mut adam = AdamState::new(warm.param_len());
    let mut rng = Rng::new(mix_seed(config.seed, 0x11));
    let opts = LossOptions {
        temperature: config.temperature,
        ..LossOptions::default()
    };
    let mut history = Vec::with_capacity(config.warmup_iterations);
    for iteration in 0..config.warmup_iterations {
        let bd = total_loss(
            &warm,
            &frames,
            0,
            &weights,
            FitMode::Full,
            &crate::losses::ZeroFlow,
            &opts,
            &mut rng,
        )?;
        if !bd.total.is_finite() {
            return Err(Error::NonFiniteLoss { iteration });
        }
        history.push(bd.mle);
        let mut params = warm.flatten();
        adam.step(&mut params, &bd.gradient, config.lr_warmup);
        warm.unflatten(&params)?;
    }

    // Replicate the warmed frame-0 pose across all timesteps.
    let parts = warm
        .parts
        .into_iter()
        .map(|p| {
            GaussianPart::new(
                vec![p.rotations[0]; num_timesteps],
                vec![p.centers[0]; num_timesteps],
                p.log_scales,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((GaussianSet::new(parts)?, history))
}

/// Learning rate at `iteration`: constant until `lr_decay_start`, then a
/// cosine ramp down to 5% of the base rate.
pub fn scheduled_lr(config: &OptimizerConfig, iteration: usize) -> f64 {
    let start = (config.lr_decay_start * config.iterations as f64) as usize;
    if iteration < start || config.iterations <= start {
        return config.lr_gaussians;
    }
    let progress = (iteration - start) as f64 / (config.iterations - start) as f64;
    let floor = 0.05 * config.lr_gaussians;
    floor
        + (config.lr_gaussians - floor)
            * 0.5
            * (1.0 + crate::float::cos(core::f64::consts::PI * progress))
}

/// One full optimization run for a fixed number of parts.
///
/// Every iteration samples a frame uniformly at random and performs two Adam
/// updates: first against the likelihood and separation terms only, then
/// against everything but the likelihood, with the Chamfer term replaced by
/// EMD once `emd_start_iteration` is reached.
pub fn fit_once(
    frames: &[Vec<Vec3>],
    m: usize,
    config: &OptimizerConfig,
    oracle: &dyn FlowOracle,
    progress: &mut dyn Progress,
) -> Result<FitResult> {
    if frames.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: frames.len(),
        });
    }
    let k_steps = frames.len();
    let mut rng = Rng::new(mix_seed(config.seed, m as u64));
    let mut set = init_gaussians(&frames[0], m, k_steps, config)?;
    let mut adam = AdamState::new(set.param_len());

    let phase_a_weights = LossWeights {
        lambda_cd: 0.0,
        lambda_emd: 0.0,
        lambda_flow: 0.0,
        ..config.weights
    };
    let opts = LossOptions {
        temperature: config.temperature,
        use_noise: true,
        emd_subsample: config.emd_subsample,
        target_subset: config.target_subset,
        flow_anchor_only: !config.flow_full_sum,
    };

    let mut history = Vec::with_capacity(config.iterations);
    for iteration in 0..config.iterations {
        let k = rng.index(k_steps);

        let lr = scheduled_lr(config, iteration);
        let bd_a = total_loss(
            &set,
            frames,
            k,
            &phase_a_weights,
            config.mode,
            oracle,
            &opts,
            &mut rng,
        )?;
        if !bd_a.total.is_finite() {
            return Err(Error::NonFiniteLoss { iteration });
        }
        let mut params = set.flatten();
        adam.step(&mut params, &bd_a.gradient, lr);
        set.unflatten(&params)?;

        let past_emd_start = iteration >= config.emd_start_iteration;
        let phase_b_weights = LossWeights {
            lambda_mle: 0.0,
            lambda_cd: if past_emd_start { 0.0 } else { config.weights.lambda_cd },
            lambda_emd: if past_emd_start { config.weights.lambda_emd } else { 0.0 },
            ..config.weights
        };
        let bd_b = total_loss(
            &set,
            frames,
            k,
            &phase_b_weights,
            config.mode,
            oracle,
            &opts,
            &mut rng,
        )?;
        if !bd_b.total.is_finite() || bd_b.gradient.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { iteration });
        }
        let mut params = set.flatten();
        adam.step(&mut params, &bd_b.gradient, lr);
        set.unflatten(&params)?;

        let trace = LossTrace {
            mle: bd_a.mle,
            sep: bd_b.sep,
            cd: bd_b.cd,
            emd: bd_b.emd,
            flow: bd_b.flow,
            total: config.weights.lambda_mle * bd_a.mle + bd_b.total,
        };
        if iteration % 100 == 0 {
            progress.log(iteration, &trace);
        }
        history.push(trace);
    }

    let final_cd = chamfer_full_sum(&set, frames)?;
    Ok(FitResult {
        set,
        final_cd,
        loss_history: history,
        config: config.clone(),
    })
}

/// Runs [`fit_once`] for every candidate part count and keeps the run with
/// the lowest evaluation-mode Chamfer score, ties to the smaller count.
pub fn fit_sweep(
    frames: &[Vec<Vec3>],
    config: &OptimizerConfig,
    oracle: &dyn FlowOracle,
    progress: &mut dyn Progress,
) -> Result<(FitResult, Vec<FitResult>)> {
    if config.m_candidates.is_empty() {
        return Err(Error::InvalidInput("no m candidates".into()));
    }
    let mut results = Vec::with_capacity(config.m_candidates.len());
    for &m in &config.m_candidates {
        results.push(fit_once(frames, m, config, oracle, progress)?);
    }
    let mut best = 0;
    for i in 1..results.len() {
        let better = results[i].final_cd < results[best].final_cd
            || (results[i].final_cd == results[best].final_cd
                && results[i].set.num_parts() < results[best].set.num_parts());
        if better {
            best = i;
        }
    }
    Ok((results[best].clone(), results))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::ZeroFlow;

    #[test]
    fn adam_matches_scalar_reimplementation() {
        // Quadratic objective f(x) = (x - 3)^2 with exact gradients.
        let mut state = AdamState::new(1);
        let mut params = vec![10.0];
        let mut reference = 10.0;
        let (mut m, mut v) = (0.0, 0.0);
        let lr = 0.05;
        for t in 1..=100 {
            let grad = 2.0 * (params[0] - 3.0);
            state.step(&mut params, &[grad], lr);

            let g = 2.0 * (reference - 3.0);
            m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g;
            v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = m / (1.0 - libm::pow(ADAM_BETA1, t as f64));
            let v_hat = v / (1.0 - libm::pow(ADAM_BETA2, t as f64));
            reference -= lr * m_hat / (libm::sqrt(v_hat) + ADAM_EPSILON);

            assert!(
                (params[0] - reference).abs() < 1e-12,
                "step {t}: {} vs {reference}",
                params[0]
            );
        }
        assert!((params[0] - 10.0).abs() > 0.1, "should have moved");
    }

    #[test]
    fn fps_collinear_picks() {
        let cloud: Vec<Vec3> = (0..10).map(|i| [i as f64, 0.0, 0.0]).collect();
        // Find a seed whose random start lands on index 0.
        let mut seed = 0;
        loop {
            let mut rng = Rng::new(mix_seed(seed, 0xf5));
            if rng.index(10) == 0 {
                break;
            }
            seed += 1;
        }
        let two = fps_init(&cloud, 2, seed).unwrap();
        assert_eq!(two, vec![[0.0, 0.0, 0.0], [9.0, 0.0, 0.0]]);
        // The third pick maximizes min distance to {0, 9}: index 4 on ties.
        let three = fps_init(&cloud, 3, seed).unwrap();
        assert_eq!(three[2], [4.0, 0.0, 0.0]);
    }

    #[test]
    fn fps_all_points_and_errors() {
        let cloud: Vec<Vec3> = (0..5).map(|i| [i as f64, 0.0, 0.0]).collect();
        let all = fps_init(&cloud, 5, 3).unwrap();
        let mut xs: Vec<i64> = all.iter().map(|p| p[0] as i64).collect();
        xs.sort_unstable();
        assert_eq!(xs, vec![0, 1, 2, 3, 4]);
        assert_eq!(
            fps_init(&cloud, 6, 3),
            Err(Error::TooFewPoints { needed: 6, got: 5 })
        );
    }

    #[test]
    fn warmup_zero_returns_raw_initialization() {
        let cloud: Vec<Vec3> = (0..50)
            .map(|i| [(i % 10) as f64 * 0.1, (i / 10) as f64 * 0.1, 0.0])
            .collect();
        let mut config = OptimizerConfig::desk();
        config.warmup_iterations = 0;
        let (set, history) = init_gaussians_detailed(&cloud, 3, 4, &config).unwrap();
        assert!(history.is_empty());
        assert_eq!(set.num_timesteps, 4);
        assert_eq!(set.num_parts(), 3);
        for part in &set.parts {
            assert_eq!(part.rotations[0], crate::geometry::Rot6D::IDENTITY);
        }
    }

    #[test]
    fn warmup_decreases_mle_on_blob() {
        let mut rng = Rng::new(9);
        let cloud: Vec<Vec3> = (0..200)
            .map(|_| [rng.normal() * 0.3, rng.normal() * 0.3, rng.normal() * 0.3])
            .collect();
        let mut config = OptimizerConfig::desk();
        config.warmup_iterations = 400;
        let (_, history) = init_gaussians_detailed(&cloud, 2, 2, &config).unwrap();
        let head = &history[..history.len() / 10];
        let tail = &history[history.len() - history.len() / 10..];
        let median = |xs: &[f64]| {
            let mut v = xs.to_vec();
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        };
        assert!(
            median(tail) < median(head),
            "tail {} vs head {}",
            median(tail),
            median(head)
        );
    }

    #[test]
    fn single_gaussian_recovers_unit_scale() {
        let mut rng = Rng::new(12);
        let cloud: Vec<Vec3> = (0..400)
            .map(|_| [rng.normal(), rng.normal(), rng.normal()])
            .collect();
        let mut config = OptimizerConfig::desk();
        config.warmup_iterations = 500;
        // A single part has no separation term; this is a pure ML fit.
        let (set, _) = init_gaussians_detailed(&cloud, 1, 1, &config).unwrap();
        for s in set.parts[0].scales() {
            assert!((s - 1.0).abs() < 0.2, "scale {s}");
        }
    }

    #[test]
    fn zero_iterations_returns_initialization() {
        let cloud: Vec<Vec3> = (0..30).map(|i| [i as f64 * 0.1, 0.0, 0.0]).collect();
        let frames = vec![cloud.clone(), cloud];
        let mut config = OptimizerConfig::desk();
        config.iterations = 0;
        config.warmup_iterations = 10;
        let result = fit_once(&frames, 2, &config, &ZeroFlow, &mut NoProgress).unwrap();
        let init = init_gaussians(&frames[0], 2, 2, &config).unwrap();
        assert_eq!(result.set, init);
        assert!(result.loss_history.is_empty());
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let mut rng = Rng::new(5);
        let frames: Vec<Vec<Vec3>> = (0..2)
            .map(|_| {
                (0..40)
                    .map(|_| [rng.normal(), rng.normal(), rng.normal()])
                    .collect()
            })
            .collect();
        let mut config = OptimizerConfig::desk();
        config.iterations = 20;
        config.warmup_iterations = 20;
        config.emd_start_iteration = 10;
        config.emd_subsample = 16;
        let a = fit_once(&frames, 2, &config, &ZeroFlow, &mut NoProgress).unwrap();
        let b = fit_once(&frames, 2, &config, &ZeroFlow, &mut NoProgress).unwrap();
        assert_eq!(a.set, b.set);
        assert_eq!(a.loss_history, b.loss_history);
        assert_eq!(a.final_cd, b.final_cd);
    }

    #[test]
    fn loss_schedule_respected() {
        let mut rng = Rng::new(6);
        let frames: Vec<Vec<Vec3>> = (0..3)
            .map(|t| {
                (0..30)
                    .map(|_| [rng.normal() + t as f64 * 0.1, rng.normal(), rng.normal()])
                    .collect()
            })
            .collect();
        let mut config = OptimizerConfig::desk();
        config.iterations = 30;
        config.warmup_iterations = 5;
        config.emd_start_iteration = 15;
        config.emd_subsample = 16;
        let result = fit_once(&frames, 2, &config, &ZeroFlow, &mut NoProgress).unwrap();
        for (i, trace) in result.loss_history.iter().enumerate() {
            if i < 15 {
                assert_eq!(trace.emd, 0.0, "iteration {i}");
            } else {
                assert_eq!(trace.cd, 0.0, "iteration {i}");
            }
        }
    }

    #[test]
    fn sweep_selects_lower_cd() {
        let mut rng = Rng::new(30);
        // Two clearly separated blobs, one of them moving.
        let frames: Vec<Vec<Vec3>> = (0..3)
            .map(|t| {
                (0..60)
                    .map(|i| {
                        if i % 2 == 0 {
                            [
                                rng.normal() * 0.1,
                                rng.normal() * 0.1,
                                rng.normal() * 0.1,
                            ]
                        } else {
                            [
                                3.0 + rng.normal() * 0.1 + t as f64 * 0.4,
                                rng.normal() * 0.1,
                                rng.normal() * 0.1,
                            ]
                        }
                    })
                    .collect()
            })
            .collect();
        let mut config = OptimizerConfig::desk();
        config.m_candidates = vec![1, 2];
        config.iterations = 500;
        config.warmup_iterations = 150;
        config.emd_start_iteration = 350;
        config.emd_subsample = 32;
        // The zero oracle carries no information, so the flow term is off.
        config.weights.lambda_flow = 0.0;
        let (best, all) = fit_sweep(&frames, &config, &ZeroFlow, &mut NoProgress).unwrap();
        assert_eq!(all.len(), 2);
        assert_eq!(best.set.num_parts(), 2, "cd1={} cd2={}", all[0].final_cd, all[1].final_cd);
    }
}
