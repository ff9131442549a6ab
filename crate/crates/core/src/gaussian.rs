//! Dynamic Gaussian representation: per-part, per-timestep covariance and
//! pose, point-to-part assignment (hard and Gumbel-Softmax relaxed),
//! cross-time point transformation, and multi-frame fusion.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::float::exp;
use crate::geometry::{self, mat_tvec, rot6d_to_matrix, Mat3, RigidTransform, Rot6D, Vec3};

/// exp(log_scales) is clamped to this range so the covariance stays
/// invertible throughout optimization.
pub const MIN_SCALE: f64 = 1e-4;
pub const MAX_SCALE: f64 = 1e2;

pub fn clamp_log_scale(ls: f64) -> f64 {
    let lo = crate::float::ln(MIN_SCALE);
    let hi = crate::float::ln(MAX_SCALE);
    ls.clamp(lo, hi)
}

/// One rigid part: K poses (rotation + center) and a time-shared scale.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPart {
    pub rotations: Vec<Rot6D>,
    pub centers: Vec<Vec3>,
    pub log_scales: Vec3,
}

impl GaussianPart {
    pub fn new(rotations: Vec<Rot6D>, centers: Vec<Vec3>, log_scales: Vec3) -> Result<Self> {
        if rotations.len() != centers.len() {
            return Err(Error::LengthMismatch {
                left: rotations.len(),
                right: centers.len(),
            });
        }
        Ok(GaussianPart {
            rotations,
            centers,
            log_scales: [
                clamp_log_scale(log_scales[0]),
                clamp_log_scale(log_scales[1]),
                clamp_log_scale(log_scales[2]),
            ],
        })
    }

    /// A part fixed at one pose replicated over `steps` timesteps.
    pub fn static_at(center: Vec3, log_scales: Vec3, steps: usize) -> Self {
        GaussianPart::new(
            vec![Rot6D::IDENTITY; steps],
            vec![center; steps],
            log_scales,
        )
        .expect("equal lengths by construction")
    }

    pub fn scales(&self) -> Vec3 {
        [
            exp(self.log_scales[0]),
            exp(self.log_scales[1]),
            exp(self.log_scales[2]),
        ]
    }

    /// World pose of the part's local frame at `step`.
    pub fn pose(&self, step: usize) -> Result<RigidTransform> {
        let r = self.rotations.get(step).ok_or(Error::IndexOutOfRange {
            index: step,
            len: self.rotations.len(),
        })?;
        Ok(RigidTransform::new(rot6d_to_matrix(r)?, self.centers[step]))
    }
}

/// The articulated model being optimized: m parts over K timesteps.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSet {
    pub parts: Vec<GaussianPart>,
    pub num_timesteps: usize,
}

impl GaussianSet {
    pub fn new(parts: Vec<GaussianPart>) -> Result<Self> {
        let first = parts.first().ok_or(Error::TooFewPoints { needed: 1, got: 0 })?;
        let k = first.rotations.len();
        for p in &parts {
            if p.rotations.len() != k {
                return Err(Error::LengthMismatch {
                    left: p.rotations.len(),
                    right: k,
                });
            }
        }
        Ok(GaussianSet {
            parts,
            num_timesteps: k,
        })
    }

    pub fn num_parts(&self) -> usize {
        self.parts.len()
    }

    pub fn check_step(&self, step: usize) -> Result<()> {
        if step >= self.num_timesteps {
            return Err(Error::IndexOutOfRange {
                index: step,
                len: self.num_timesteps,
            });
        }
        Ok(())
    }

    /// Number of free parameters: per part, K * (6 + 3) pose values plus 3
    /// log-scales.
    pub fn param_len(&self) -> usize {
        self.parts.len() * (self.num_timesteps * 9 + 3)
    }

    /// Flat parameter vector; layout per part: for each step the 6D rotation
    /// then the center, then the log-scales.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_len());
        for part in &self.parts {
            for step in 0..self.num_timesteps {
                out.extend_from_slice(&part.rotations[step].a);
                out.extend_from_slice(&part.rotations[step].b);
                out.extend_from_slice(&part.centers[step]);
            }
            out.extend_from_slice(&part.log_scales);
        }
        out
    }

    /// Overwrites parameters from a flat vector laid out as in [`flatten`].
    /// Log-scales are clamped back into range.
    pub fn unflatten(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_len() {
            return Err(Error::LengthMismatch {
                left: params.len(),
                right: self.param_len(),
            });
        }
        let mut i = 0;
        let k = self.num_timesteps;
        for part in &mut self.parts {
            for step in 0..k {
                part.rotations[step].a.copy_from_slice(&params[i..i + 3]);
                part.rotations[step].b.copy_from_slice(&params[i + 3..i + 6]);
                part.centers[step].copy_from_slice(&params[i + 6..i + 9]);
                i += 9;
            }
            for j in 0..3 {
                part.log_scales[j] = clamp_log_scale(params[i + j]);
            }
            i += 3;
        }
        Ok(())
    }
}

/// Relaxed point-to-part assignment; each row is a distribution over parts.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftAssignment {
    pub weights: Vec<Vec<f64>>,
}

impl SoftAssignment {
    pub fn num_points(&self) -> usize {
        self.weights.len()
    }

    /// Index of the largest weight per point, ties to the lowest part index.
    pub fn argmax(&self) -> Vec<usize> {
        self.weights
            .iter()
            .map(|row| {
                let mut best = 0;
                for (i, w) in row.iter().enumerate() {
                    if *w > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }
}

/// Point-to-part assignment accepted by the transformation routines.
#[derive(Clone, Copy)]
pub enum Assignment<'a> {
    Hard(&'a [usize]),
    Soft(&'a SoftAssignment),
}

/// Covariance of one Gaussian: R S (R S)^T with S = diag(exp(log_scales)).
pub fn covariance(set: &GaussianSet, part: usize, step: usize) -> Result<Mat3> {
    set.check_step(step)?;
    let p = set.parts.get(part).ok_or(Error::IndexOutOfRange {
        index: part,
        len: set.parts.len(),
    })?;
    let r = rot6d_to_matrix(&p.rotations[step])?;
    let s2 = p.scales().map(|s| s * s);
    let mut cov = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            cov[i][j] = (0..3).map(|a| r[i][a] * s2[a] * r[j][a]).sum();
        }
    }
    Ok(cov)
}

/// Squared Mahalanobis distance of x from the Gaussian (part, step).
///
/// Evaluated through the covariance square root R S: with z = R^T (x - mu),
/// the distance is sum_j (z_j / s_j)^2, so the covariance is never inverted
/// explicitly.
pub fn mahalanobis_sq(x: Vec3, set: &GaussianSet, part: usize, step: usize) -> Result<f64> {
    let p = &set.parts[part];
    let r = rot6d_to_matrix(&p.rotations[step])?;
    Ok(mahalanobis_sq_with(x, &r, p.centers[step], p.scales()))
}

#[inline]
pub(crate) fn mahalanobis_sq_with(x: Vec3, r: &Mat3, center: Vec3, scales: Vec3) -> f64 {
    let d = geometry::sub(x, center);
    let z = mat_tvec(r, d);
    let w0 = z[0] / scales[0];
    let w1 = z[1] / scales[1];
    let w2 = z[2] / scales[2];
    w0 * w0 + w1 * w1 + w2 * w2
}

pub(crate) fn rotation_matrices(set: &GaussianSet, step: usize) -> Result<Vec<Mat3>> {
    set.parts
        .iter()
        .map(|p| rot6d_to_matrix(&p.rotations[step]))
        .collect()
}

/// Hard assignment: label of the Gaussian with the smallest squared
/// Mahalanobis distance; ties go to the lowest part index.
pub fn assign_hard(points: &[Vec3], set: &GaussianSet, step: usize) -> Result<Vec<usize>> {
    set.check_step(step)?;
    let rots = rotation_matrices(set, step)?;
    let scales: Vec<Vec3> = set.parts.iter().map(|p| p.scales()).collect();
    Ok(points
        .iter()
        .map(|&x| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, part) in set.parts.iter().enumerate() {
                let d = mahalanobis_sq_with(x, &rots[i], part.centers[step], scales[i]);
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            best
        })
        .collect())
}

/// Gumbel-Softmax relaxation of [`assign_hard`].
///
/// weights[n][i] = softmax_i((-M(x_n, G_i) + g_ni) / temperature), with
/// g the optional per-point-per-part Gumbel samples (zeros when absent, the
/// evaluation setting).
pub fn assign_soft(
    points: &[Vec3],
    set: &GaussianSet,
    step: usize,
    temperature: f64,
    gumbel_noise: Option<&[f64]>,
) -> Result<SoftAssignment> {
    set.check_step(step)?;
    assert!(temperature > 0.0, "temperature must be positive");
    let m = set.num_parts();
    if let Some(noise) = gumbel_noise {
        if noise.len() != points.len() * m {
            return Err(Error::LengthMismatch {
                left: noise.len(),
                right: points.len() * m,
            });
        }
    }
    let rots = rotation_matrices(set, step)?;
    let scales: Vec<Vec3> = set.parts.iter().map(|p| p.scales()).collect();
    let mut weights = Vec::with_capacity(points.len());
    let mut logits = vec![0.0; m];
    for (n, &x) in points.iter().enumerate() {
        for i in 0..m {
            let g = gumbel_noise.map_or(0.0, |ns| ns[n * m + i]);
            let d = mahalanobis_sq_with(x, &rots[i], set.parts[i].centers[step], scales[i]);
            logits[i] = (-d + g) / temperature;
        }
        weights.push(softmax(&logits));
    }
    Ok(SoftAssignment { weights })
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| exp(l - max)).collect();
    let sum: f64 = out.iter().sum();
    for w in &mut out {
        *w /= sum;
    }
    out
}

/// Per-part relative motion T_i^t o (T_i^k)^-1 for every part.
pub fn step_motions(set: &GaussianSet, k: usize, t: usize) -> Result<Vec<RigidTransform>> {
    set.check_step(k)?;
    set.check_step(t)?;
    set.parts
        .iter()
        .map(|p| Ok(geometry::relative_motion(&p.pose(t)?, &p.pose(k)?)))
        .collect()
}

/// Transforms points observed at step k to step t by following the poses of
/// their assigned Gaussians; a soft assignment blends the per-part results.
pub fn transform_points(
    points: &[Vec3],
    assignment: Assignment<'_>,
    set: &GaussianSet,
    k: usize,
    t: usize,
) -> Result<Vec<Vec3>> {
    let motions = step_motions(set, k, t)?;
    match assignment {
        Assignment::Hard(labels) => {
            if labels.len() != points.len() {
                return Err(Error::LengthMismatch {
                    left: labels.len(),
                    right: points.len(),
                });
            }
            points
                .iter()
                .zip(labels)
                .map(|(&x, &l)| {
                    motions
                        .get(l)
                        .map(|m| m.apply(x))
                        .ok_or(Error::UnknownLabel { label: l })
                })
                .collect()
        }
        Assignment::Soft(soft) => {
            if soft.weights.len() != points.len() {
                return Err(Error::LengthMismatch {
                    left: soft.weights.len(),
                    right: points.len(),
                });
            }
            Ok(points
                .iter()
                .zip(&soft.weights)
                .map(|(&x, row)| {
                    let mut y = [0.0; 3];
                    for (i, &w) in row.iter().enumerate() {
                        let yi = motions[i].apply(x);
                        y = geometry::add(y, geometry::scale(yi, w));
                    }
                    y
                })
                .collect())
        }
    }
}

/// Fuses all frames into the coordinate frame of step t; the concatenation
/// of every frame transformed with its own assignment. Set `exclude_target`
/// to leave frame t itself out (the partial-data losses do).
pub fn fuse_to_step(
    frames: &[Vec<Vec3>],
    assignments: &[Assignment<'_>],
    set: &GaussianSet,
    t: usize,
    exclude_target: bool,
) -> Result<Vec<Vec3>> {
    if frames.len() != assignments.len() {
        return Err(Error::LengthMismatch {
            left: frames.len(),
            right: assignments.len(),
        });
    }
    let mut fused = Vec::new();
    for (k, frame) in frames.iter().enumerate() {
        if exclude_target && k == t {
            continue;
        }
        fused.extend(transform_points(frame, assignments[k], set, k, t)?);
    }
    Ok(fused)
}
