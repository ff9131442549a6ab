//! Central finite-difference validation of every loss gradient.
//!
//! The analytic gradients come from hand-specified reverse accumulation;
//! these tests are the independent oracle. Gumbel noise is fixed per
//! instance, EMD subsampling and split choices are re-seeded identically per
//! evaluation, and the flow oracle returns index-keyed constants so the
//! objective is a smooth deterministic function of the parameters.

use artigauss_core::error::Result;
use artigauss_core::gaussian::{GaussianPart, GaussianSet};
use artigauss_core::geometry::{Rot6D, Vec3};
use artigauss_core::losses::{
    chamfer_loss, emd_loss, flow_loss, mle_loss, partial_chamfer_loss, partial_emd_loss,
    sep_loss, split_fusion_regularizer, total_loss, AssignmentSpec, FitMode, FlowOracle,
    LossOptions, LossWeights, SeqAssignment,
};
use artigauss_core::rng::Rng;

const H: f64 = 1e-5;

struct ConstantFlow {
    flows: Vec<Vec3>,
}

impl FlowOracle for ConstantFlow {
    fn flow(&self, _frames: &[Vec<Vec3>], _t: usize, queries: &[Vec3]) -> Result<Vec<Vec3>> {
        Ok(self.flows[..queries.len()].to_vec())
    }
}

struct Instance {
    set: GaussianSet,
    frames: Vec<Vec<Vec3>>,
    noise: Vec<Vec<f64>>,
    flows: Vec<Vec3>,
}

fn random_instance(seed: u64) -> Instance {
    let mut rng = Rng::new(seed);
    let (m, k, n) = (2, 3, 32);
    let parts: Vec<GaussianPart> = (0..m)
        .map(|i| {
            let rotations: Vec<Rot6D> = (0..k)
                .map(|_| {
                    Rot6D::new(
                        [
                            1.0 + rng.normal() * 0.3,
                            rng.normal() * 0.3,
                            rng.normal() * 0.3,
                        ],
                        [
                            rng.normal() * 0.3,
                            1.0 + rng.normal() * 0.3,
                            rng.normal() * 0.3,
                        ],
                    )
                })
                .collect();
            let centers: Vec<Vec3> = (0..k)
                .map(|u| {
                    [
                        i as f64 * 2.0 + u as f64 * 0.1 + rng.normal() * 0.2,
                        rng.normal() * 0.2,
                        rng.normal() * 0.2,
                    ]
                })
                .collect();
            let log_scales = [
                -0.4 + rng.normal() * 0.2,
                -0.4 + rng.normal() * 0.2,
                -0.4 + rng.normal() * 0.2,
            ];
            GaussianPart::new(rotations, centers, log_scales).unwrap()
        })
        .collect();
    let set = GaussianSet::new(parts).unwrap();
    let frames: Vec<Vec<Vec3>> = (0..k)
        .map(|u| {
            (0..n)
                .map(|i| {
                    let cluster = (i % m) as f64 * 2.0;
                    [
                        cluster + u as f64 * 0.1 + rng.normal() * 0.5,
                        rng.normal() * 0.5,
                        rng.normal() * 0.5,
                    ]
                })
                .collect()
        })
        .collect();
    let noise: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..n * m).map(|_| rng.gumbel()).collect())
        .collect();
    let flows: Vec<Vec3> = (0..n)
        .map(|_| {
            [
                rng.normal() * 0.05,
                rng.normal() * 0.05,
                rng.normal() * 0.05,
            ]
        })
        .collect();
    Instance {
        set,
        frames,
        noise,
        flows,
    }
}

/// Checks every coordinate of the analytic gradient against central
/// differences with the acceptance tolerance (relative 1e-3, floor 1e-8).
fn check_gradient(
    name: &str,
    instance: &Instance,
    eval: &dyn Fn(&GaussianSet) -> (f64, Vec<f64>),
) {
    let (_, grad) = eval(&instance.set);
    let base = instance.set.flatten();
    assert_eq!(grad.len(), base.len(), "{name}: gradient length");
    for i in 0..base.len() {
        let mut plus = instance.set.clone();
        let mut params = base.clone();
        params[i] += H;
        plus.unflatten(&params).unwrap();
        let mut minus = instance.set.clone();
        params[i] -= 2.0 * H;
        minus.unflatten(&params).unwrap();
        let fd = (eval(&plus).0 - eval(&minus).0) / (2.0 * H);
        let tol = (1e-3 * fd.abs().max(grad[i].abs())).max(1e-8);
        assert!(
            (fd - grad[i]).abs() <= tol,
            "{name}: coordinate {i}: finite difference {fd} vs analytic {}",
            grad[i]
        );
    }
}

#[test]
fn mle_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let instance = random_instance(100 + seed);
        check_gradient("mle", &instance, &|set| {
            let (v, g) = mle_loss(&instance.frames[0], set, 0).unwrap();
            (v, g.to_flat())
        });
    }
}

#[test]
fn sep_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let instance = random_instance(200 + seed);
        check_gradient("sep", &instance, &|set| {
            let (v, g) = sep_loss(set, 1, 0.5).unwrap();
            (v, g.to_flat())
        });
    }
}

#[test]
fn chamfer_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let instance = random_instance(300 + seed);
        check_gradient("cd", &instance, &|set| {
            let spec = AssignmentSpec::Soft {
                temperature: 1.0,
                noise: Some(&instance.noise[0]),
            };
            let (v, g) = chamfer_loss(set, &instance.frames, spec, 0).unwrap();
            (v, g.to_flat())
        });
    }
}

#[test]
fn emd_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let instance = random_instance(400 + seed);
        check_gradient("emd", &instance, &|set| {
            let spec = AssignmentSpec::Soft {
                temperature: 1.0,
                noise: Some(&instance.noise[1]),
            };
            let mut rng = Rng::new(7);
            let (v, g) = emd_loss(set, &instance.frames, spec, 1, 256, &mut rng).unwrap();
            (v, g.to_flat())
        });
    }
}

#[test]
fn flow_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let instance = random_instance(500 + seed);
        let oracle = ConstantFlow {
            flows: instance.flows.clone(),
        };
        check_gradient("flow", &instance, &|set| {
            let spec = AssignmentSpec::Soft {
                temperature: 1.0,
                noise: Some(&instance.noise[0]),
            };
            let (v, g) = flow_loss(set, &instance.frames, spec, 0, &oracle).unwrap();
            (v, g.to_flat())
        });
    }
}

#[test]
fn partial_losses_gradients_match_finite_differences() {
    for seed in 0..3 {
        let instance = random_instance(600 + seed);
        let seq = SeqAssignment::Soft {
            temperature: 1.0,
            noise: Some(&instance.noise),
        };
        check_gradient("partial_cd", &instance, &|set| {
            let (v, g) = partial_chamfer_loss(set, &instance.frames, seq, 1).unwrap();
            (v, g.to_flat())
        });
        check_gradient("partial_emd", &instance, &|set| {
            let mut rng = Rng::new(11);
            let (v, g) =
                partial_emd_loss(set, &instance.frames, seq, 1, 16, &mut rng).unwrap();
            (v, g.to_flat())
        });
        check_gradient("split", &instance, &|set| {
            let mut rng = Rng::new(13);
            let (v, g) =
                split_fusion_regularizer(set, &instance.frames, seq, 1, &mut rng).unwrap();
            (v, g.to_flat())
        });
    }
}

#[test]
fn total_loss_gradient_matches_finite_differences_both_modes() {
    for seed in 0..3 {
        let instance = random_instance(700 + seed);
        let oracle = ConstantFlow {
            flows: instance.flows.clone(),
        };
        let weights = LossWeights::default();
        for mode in [FitMode::Full, FitMode::Partial] {
            let name = match mode {
                FitMode::Full => "total_full",
                FitMode::Partial => "total_partial",
            };
            check_gradient(name, &instance, &|set| {
                // Noise off keeps total_loss a deterministic function; the
                // assignment softness itself is still exercised.
                let opts = LossOptions {
                    temperature: 1.0,
                    use_noise: false,
                    emd_subsample: 256,
                    target_subset: None,
                    flow_anchor_only: false,
                };
                let mut rng = Rng::new(17);
                let bd =
                    total_loss(set, &instance.frames, 1, &weights, mode, &oracle, &opts, &mut rng)
                        .unwrap();
                (bd.total, bd.gradient)
            });
        }
    }
}
