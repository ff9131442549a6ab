//! Steps 2 and 3 of the pipeline: part merging, pairwise edge costs,
//! minimum-spanning-tree extraction, root selection, screw-parameter
//! projection, forward-kinematics fine-tuning, and re-articulation to
//! unseen poses.

use alloc::vec;
use alloc::vec::Vec;

use crate::assignment::{solve, CostMatrix};
use crate::diff::{axis_angle_backward, normalize_backward, rot6d_backward, rot6d_forward};
use crate::error::{Error, Result};
use crate::float::atan2;
use crate::gaussian::{clamp_log_scale, GaussianPart, GaussianSet};
use crate::geometry::{
    self, dist_sq, mat_mul, mat_tvec, mat_vec, matrix_to_rot6d, normalize, rot6d_to_matrix,
    rotation_about_line, rotation_axis_angle, transpose, Mat3, RigidTransform, Rot6D, ScrewKind,
    ScrewMotion, Vec3, IDENTITY3,
};
use crate::losses::FitMode;
use crate::nn::NearestNeighbors;
use crate::rng::{mix_seed, Rng};

/// Rooted tree of parts with one screw joint per edge.
///
/// Edges are stored in breadth-first order from the root, so a parent's pose
/// is always computed before its children's. Screw axes and origins live in
/// the child's canonical (step-0) local frame; `rest_pose` holds the
/// canonical world pose of every part and `root_track` the root's free pose
/// at every timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct KinematicModel {
    pub parts: Vec<usize>,
    pub root: usize,
    pub edges: Vec<KinematicEdge>,
    pub rest_pose: Vec<RigidTransform>,
    pub root_track: Vec<RigidTransform>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KinematicEdge {
    pub parent: usize,
    pub child: usize,
    pub screw: ScrewMotion,
}

impl KinematicModel {
    pub fn num_timesteps(&self) -> usize {
        self.root_track.len()
    }

    /// Joint-state tracks stored in the edges: states[edge][step-1].
    pub fn edge_states(&self) -> Vec<Vec<f64>> {
        self.edges.iter().map(|e| e.screw.states.clone()).collect()
    }
}

/// Pairwise edge costs over the surviving parts.
#[derive(Clone, Debug)]
pub struct EdgeCosts {
    n_parts: usize,
    spatial: Vec<f64>,
    one_dof: Vec<f64>,
}

impl EdgeCosts {
    fn index(&self, i: usize, j: usize) -> usize {
        let (lo, hi) = if i < j { (i, j) } else { (j, i) };
        lo * (2 * self.n_parts - lo - 1) / 2 + (hi - lo - 1)
    }

    pub fn n_parts(&self) -> usize {
        self.n_parts
    }

    pub fn spatial(&self, i: usize, j: usize) -> f64 {
        self.spatial[self.index(i, j)]
    }

    pub fn one_dof(&self, i: usize, j: usize) -> f64 {
        self.one_dof[self.index(i, j)]
    }
}

/// Deviation of the pair's relative motion from static over all transitions:
/// sum_k |O_i^k^-1 O_j^k - I|_F^2 on homogeneous matrices.
pub fn merge_loss(set: &GaussianSet, i: usize, j: usize) -> Result<f64> {
    if i == j {
        return Err(Error::InvalidInput("merge_loss needs distinct parts".into()));
    }
    let mut total = 0.0;
    for rel in pair_relative_motions(set, i, j)? {
        total += rel.deviation_from_identity_sq();
    }
    Ok(total)
}

/// Options shared by the merge and edge-cost stages.
#[derive(Clone, Copy, Debug)]
pub struct SegmentOptions {
    /// Gather each part's point set from every frame transformed to step 0
    /// instead of frame 0 only; needed when occlusion can empty a part's
    /// frame-0 footprint.
    pub use_fused_points: bool,
    /// Spatial gate for "neighboring" pairs, as a fraction of the bounding
    /// box diagonal.
    pub neighbor_gate_fraction: f64,
}

impl Default for SegmentOptions {
    fn default() -> Self {
        SegmentOptions {
            use_fused_points: false,
            neighbor_gate_fraction: 0.05,
        }
    }
}

/// Canonical-frame point set of every part: frame-0 points, or all frames
/// carried to step 0 along their own part poses when `use_fused_points`.
fn part_point_sets(
    set: &GaussianSet,
    frames: &[Vec<Vec3>],
    labels: &[Vec<usize>],
    opts: &SegmentOptions,
) -> Result<Vec<Vec<Vec3>>> {
    let m = set.num_parts();
    let mut sets = vec![Vec::new(); m];
    let frame_range = if opts.use_fused_points {
        0..frames.len()
    } else {
        0..1
    };
    for k in frame_range {
        let motions: Vec<RigidTransform> = (0..m)
            .map(|i| {
                Ok(geometry::relative_motion(
                    &set.parts[i].pose(0)?,
                    &set.parts[i].pose(k)?,
                ))
            })
            .collect::<Result<_>>()?;
        for (&p, &l) in frames[k].iter().zip(&labels[k]) {
            if l >= m {
                return Err(Error::UnknownLabel { label: l });
            }
            sets[l].push(motions[l].apply(p));
        }
    }
    Ok(sets)
}

fn min_dist_sq_between(a: &[Vec3], b: &[Vec3]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::INFINITY;
    }
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let nn = NearestNeighbors::build(large);
    let mut best = f64::INFINITY;
    for &p in small {
        best = best.min(nn.nearest(p).1);
    }
    best
}

fn bbox_diagonal_all(frames: &[Vec<Vec3>]) -> f64 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for frame in frames {
        for p in frame {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
    }
    crate::float::sqrt(
        (hi[0] - lo[0]) * (hi[0] - lo[0])
            + (hi[1] - lo[1]) * (hi[1] - lo[1])
            + (hi[2] - lo[2]) * (hi[2] - lo[2]),
    )
}

/// Greedy merging of neighboring part pairs whose relative motion is close
/// to static, lowest deviation first, recomputing after every merge.
///
/// Returns the reduced set plus the map from old part ids to new ones. The
/// merged part keeps the pose track of the member with more assigned points;
/// its scales are re-estimated from the union of both members' points so the
/// merged Gaussian still covers them.
pub fn merge_parts(
    set: &GaussianSet,
    frames: &[Vec<Vec3>],
    labels: &[Vec<usize>],
    threshold: f64,
    opts: &SegmentOptions,
) -> Result<(GaussianSet, Vec<usize>)> {
    let m = set.num_parts();
    let mut points = part_point_sets(set, frames, labels, opts)?;
    let mut counts: Vec<usize> = vec![0; m];
    for frame_labels in labels {
        for &l in frame_labels {
            counts[l] += 1;
        }
    }
    let gate = opts.neighbor_gate_fraction * bbox_diagonal_all(frames);
    let gate_sq = gate * gate;

    let mut parts: Vec<GaussianPart> = set.parts.clone();
    let mut alive: Vec<bool> = vec![true; m];
    // representative[i] tracks which original slot part i was folded into.
    let mut representative: Vec<usize> = (0..m).collect();

    loop {
        let current = GaussianSet::new(parts.clone())?;
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..m {
            if !alive[i] {
                continue;
            }
            for j in (i + 1)..m {
                if !alive[j] {
                    continue;
                }
                if min_dist_sq_between(&points[i], &points[j]) > gate_sq {
                    continue;
                }
                let loss = merge_loss(&current, i, j)?;
                if loss < threshold && best.map_or(true, |b| loss < b.0) {
                    best = Some((loss, i, j));
                }
            }
        }
        let Some((_, i, j)) = best else { break };
        let (keep, drop) = if counts[j] > counts[i] { (j, i) } else { (i, j) };
        counts[keep] += counts[drop];
        counts[drop] = 0;
        let drop_points = core::mem::take(&mut points[drop]);
        points[keep].extend(drop_points);
        alive[drop] = false;
        for r in representative.iter_mut() {
            if *r == drop {
                *r = keep;
            }
        }
        refresh_scales(&mut parts[keep], &points[keep]);
    }

    let mut new_id = vec![usize::MAX; m];
    let mut merged_parts = Vec::new();
    for i in 0..m {
        if alive[i] {
            new_id[i] = merged_parts.len();
            merged_parts.push(parts[i].clone());
        }
    }
    let remap: Vec<usize> = representative.iter().map(|&r| new_id[r]).collect();
    Ok((GaussianSet::new(merged_parts)?, remap))
}

/// Re-estimates per-axis scales from second moments of the part's points in
/// its canonical local frame.
fn refresh_scales(part: &mut GaussianPart, canonical_points: &[Vec3]) {
    if canonical_points.is_empty() {
        return;
    }
    let Ok(r) = rot6d_to_matrix(&part.rotations[0]) else {
        return;
    };
    let center = part.centers[0];
    let mut second = [0.0; 3];
    for &p in canonical_points {
        let z = mat_tvec(&r, geometry::sub(p, center));
        for a in 0..3 {
            second[a] += z[a] * z[a];
        }
    }
    for a in 0..3 {
        let s = crate::float::sqrt(second[a] / canonical_points.len() as f64);
        part.log_scales[a] = clamp_log_scale(crate::float::ln(s.max(crate::gaussian::MIN_SCALE)));
    }
}

/// Relabels every frame through the merge remap.
pub fn remap_labels(labels: &[Vec<usize>], remap: &[usize]) -> Vec<Vec<usize>> {
    labels
        .iter()
        .map(|frame| frame.iter().map(|&l| remap[l]).collect())
        .collect()
}

/// Drops parts that own no points in any frame (possible after heavy
/// occlusion) and remaps the labels onto the survivors.
pub fn prune_empty_parts(
    set: &GaussianSet,
    labels: &[Vec<usize>],
) -> Result<(GaussianSet, Vec<usize>)> {
    let m = set.num_parts();
    let mut counts = vec![0usize; m];
    for frame in labels {
        for &l in frame {
            if l >= m {
                return Err(Error::UnknownLabel { label: l });
            }
            counts[l] += 1;
        }
    }
    let mut remap = vec![usize::MAX; m];
    let mut parts = Vec::new();
    for i in 0..m {
        if counts[i] > 0 {
            remap[i] = parts.len();
            parts.push(set.parts[i].clone());
        }
    }
    if parts.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    Ok((GaussianSet::new(parts)?, remap))
}

/// Pairwise spatial proximity and 1-DOF deviation for every part pair.
pub fn edge_costs(
    set: &GaussianSet,
    frames: &[Vec<Vec3>],
    labels: &[Vec<usize>],
    opts: &SegmentOptions,
) -> Result<EdgeCosts> {
    let m = set.num_parts();
    if m < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: m });
    }
    let points = part_point_sets(set, frames, labels, opts)?;
    for (i, set_i) in points.iter().enumerate() {
        if set_i.is_empty() {
            return Err(Error::EmptyPart { part: i });
        }
    }
    let mut spatial = Vec::with_capacity(m * (m - 1) / 2);
    let mut one_dof = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in (i + 1)..m {
            spatial.push(min_dist_sq_between(&points[i], &points[j]));
            let motions = pair_relative_motions(set, i, j)?;
            let dof = match fit_screw(&motions) {
                Ok((_, residual)) => residual,
                // A still-rigid pair deviates from 1-DOF motion by nothing.
                Err(Error::DegenerateMotion) => 0.0,
                Err(e) => return Err(e),
            };
            one_dof.push(dof);
        }
    }
    Ok(EdgeCosts {
        n_parts: m,
        spatial,
        one_dof,
    })
}

/// O_i^k^-1 O_j^k for all K-1 transitions.
fn pair_relative_motions(set: &GaussianSet, i: usize, j: usize) -> Result<Vec<RigidTransform>> {
    let mut out = Vec::with_capacity(set.num_timesteps.saturating_sub(1));
    for k in 0..set.num_timesteps - 1 {
        let oi = geometry::relative_motion(&set.parts[i].pose(k + 1)?, &set.parts[i].pose(k)?);
        let oj = geometry::relative_motion(&set.parts[j].pose(k + 1)?, &set.parts[j].pose(k)?);
        out.push(oi.inverse().compose(&oj));
    }
    Ok(out)
}

const SCREW_REFINE_ITERATIONS: usize = 200;
const SCREW_TIE_MARGIN: f64 = 1e-6;

/// Fits a 1-DOF screw (static axis and origin, one state per motion) to a
/// sequence of rigid motions, minimizing sum_k |M_k S(theta_k)^-1 - I|_F^2.
///
/// Both a revolute and a prismatic candidate are fitted — closed-form
/// initialization, then Adam refinement that never accepts a worse iterate —
/// and the lower-residual candidate wins, with a small margin preferring
/// revolute on ties. The first clearly nonzero state is made positive by
/// flipping the axis when needed.
pub fn fit_screw(motions: &[RigidTransform]) -> Result<(ScrewMotion, f64)> {
    if motions.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    if motions
        .iter()
        .all(|m| crate::float::sqrt(m.deviation_from_identity_sq()) < 1e-10)
    {
        return Err(Error::DegenerateMotion);
    }

    let revolute = fit_revolute(motions);
    let prismatic = fit_prismatic(motions);
    let (kind, axis, origin, states, residual) = match (revolute, prismatic) {
        (Some(r), Some(p)) => {
            if p.2 < r.3 - SCREW_TIE_MARGIN {
                (ScrewKind::Prismatic, p.0, [0.0; 3], p.1, p.2)
            } else {
                (ScrewKind::Revolute, r.0, r.1, r.2, r.3)
            }
        }
        (Some(r), None) => (ScrewKind::Revolute, r.0, r.1, r.2, r.3),
        (None, Some(p)) => (ScrewKind::Prismatic, p.0, [0.0; 3], p.1, p.2),
        (None, None) => return Err(Error::DegenerateMotion),
    };

    let (axis, states) = orient_first_state_positive(axis, states);
    Ok((ScrewMotion::new(kind, axis, origin, states)?, residual))
}

fn orient_first_state_positive(axis: Vec3, states: Vec<f64>) -> (Vec3, Vec<f64>) {
    for &s in &states {
        if s.abs() > 1e-9 {
            if s < 0.0 {
                return (
                    geometry::scale(axis, -1.0),
                    states.iter().map(|&v| -v).collect(),
                );
            }
            break;
        }
    }
    (axis, states)
}

fn revolute_residual(motions: &[RigidTransform], axis: Vec3, origin: Vec3, states: &[f64]) -> f64 {
    motions
        .iter()
        .zip(states)
        .map(|(m, &q)| {
            m.compose(&rotation_about_line(axis, origin, -q))
                .deviation_from_identity_sq()
        })
        .sum()
}

fn prismatic_residual(motions: &[RigidTransform], axis: Vec3, states: &[f64]) -> f64 {
    motions
        .iter()
        .zip(states)
        .map(|(m, &q)| {
            let t = geometry::sub(m.translation, geometry::scale(mat_vec(&m.rotation, axis), q));
            geometry::frobenius_diff_sq(&m.rotation, &IDENTITY3) + geometry::norm_sq(t)
        })
        .sum()
}

/// Optimal rotation angle about a fixed unit axis approximating R.
fn angle_about_axis(r: &Mat3, axis: Vec3) -> f64 {
    let w = [
        r[2][1] - r[1][2],
        r[0][2] - r[2][0],
        r[1][0] - r[0][1],
    ];
    let trace = r[0][0] + r[1][1] + r[2][2];
    let a_ra = geometry::dot(axis, mat_vec(r, axis));
    atan2(geometry::dot(axis, w), trace - a_ra)
}

type RevoluteFit = (Vec3, Vec3, Vec<f64>, f64);
type PrismaticFit = (Vec3, Vec<f64>, f64);

fn fit_revolute(motions: &[RigidTransform]) -> Option<RevoluteFit> {
    // Axis from the sign-aligned, angle-weighted mean of per-step rotation
    // axes; origin from least squares on (I - R_k) o = t_k.
    let mut reference: Option<Vec3> = None;
    let mut axis_sum = [0.0; 3];
    for m in motions {
        let (angle, ax) = rotation_axis_angle(&m.rotation);
        if angle.abs() < 1e-7 {
            continue;
        }
        let aligned = match reference {
            None => {
                reference = Some(ax);
                ax
            }
            Some(r) => {
                if geometry::dot(ax, r) < 0.0 {
                    geometry::scale(ax, -1.0)
                } else {
                    ax
                }
            }
        };
        axis_sum = geometry::add(axis_sum, geometry::scale(aligned, angle.abs()));
    }
    let axis = normalize(axis_sum).unwrap_or([0.0, 0.0, 1.0]);

    let mut normal = [[0.0; 3]; 3];
    let mut rhs = [0.0; 3];
    for m in motions {
        let mut a = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                a[r][c] = if r == c { 1.0 } else { 0.0 } - m.rotation[r][c];
            }
        }
        let at = transpose(&a);
        let ata = mat_mul(&at, &a);
        let atb = mat_vec(&at, m.translation);
        for r in 0..3 {
            for c in 0..3 {
                normal[r][c] += ata[r][c];
            }
            rhs[r] += atb[r];
        }
    }
    // Pin the null direction along the axis; the solved origin is then the
    // point on the axis line closest to the coordinate origin.
    for r in 0..3 {
        for c in 0..3 {
            normal[r][c] += axis[r] * axis[c];
        }
    }
    let origin = geometry::solve_spd3(&normal, rhs).unwrap_or([0.0; 3]);

    let states: Vec<f64> = motions
        .iter()
        .map(|m| angle_about_axis(&m.rotation, axis))
        .collect();
    let init_residual = revolute_residual(motions, axis, origin, &states);

    // Joint refinement of axis, origin, and states.
    let mut params: Vec<f64> = Vec::with_capacity(6 + states.len());
    params.extend_from_slice(&axis);
    params.extend_from_slice(&origin);
    params.extend_from_slice(&states);
    let mut adam = crate::optimizer::AdamState::new(params.len());
    let mut best = (init_residual, axis, origin, states);
    for _ in 0..SCREW_REFINE_ITERATIONS {
        if best.0 < 1e-16 {
            break;
        }
        let raw_axis = [params[0], params[1], params[2]];
        let Some(unit) = normalize(raw_axis) else { break };
        let o = [params[3], params[4], params[5]];
        let mut grad = vec![0.0; params.len()];
        let mut residual = 0.0;
        let mut unit_bar = [0.0; 3];
        for (idx, m) in motions.iter().enumerate() {
            let q = params[6 + idx];
            let g = rotation_about_line(unit, o, -q);
            let p = m.compose(&g);
            residual += p.deviation_from_identity_sq();
            let mut pr_bar = [[0.0; 3]; 3];
            for r in 0..3 {
                for c in 0..3 {
                    pr_bar[r][c] = 2.0 * (p.rotation[r][c] - if r == c { 1.0 } else { 0.0 });
                }
            }
            let pt_bar = geometry::scale(p.translation, 2.0);
            // P = M o G
            let gr_bar = mat_mul(&transpose(&m.rotation), &pr_bar);
            let gt_bar = mat_tvec(&m.rotation, pt_bar);
            // G.t = o - G.R o
            let o_bar = geometry::sub(gt_bar, mat_tvec(&g.rotation, gt_bar));
            let mut grot_bar = gr_bar;
            for r in 0..3 {
                for c in 0..3 {
                    grot_bar[r][c] -= gt_bar[r] * o[c];
                }
            }
            let (ax_bar, neg_q_bar) = axis_angle_backward(unit, -q, &grot_bar);
            grad[6 + idx] = -neg_q_bar;
            for a in 0..3 {
                unit_bar[a] += ax_bar[a];
                grad[3 + a] += o_bar[a];
            }
        }
        let raw_bar = normalize_backward(raw_axis, unit, unit_bar);
        grad[..3].copy_from_slice(&raw_bar);

        if residual < best.0 {
            best = (residual, unit, o, params[6..].to_vec());
        }
        adam.step(&mut params, &grad, 1.5e-2);
    }
    if let Some(unit) = normalize([params[0], params[1], params[2]]) {
        let o = [params[3], params[4], params[5]];
        let qs: Vec<f64> = params[6..].to_vec();
        let residual = revolute_residual(motions, unit, o, &qs);
        if residual < best.0 {
            best = (residual, unit, o, qs);
        }
    }
    Some((best.1, best.2, best.3, best.0))
}

fn fit_prismatic(motions: &[RigidTransform]) -> Option<PrismaticFit> {
    let mut reference: Option<Vec3> = None;
    let mut dir_sum = [0.0; 3];
    for m in motions {
        let n = geometry::norm(m.translation);
        if n < 1e-12 {
            continue;
        }
        let d = geometry::scale(m.translation, 1.0 / n);
        let aligned = match reference {
            None => {
                reference = Some(d);
                d
            }
            Some(r) => {
                if geometry::dot(d, r) < 0.0 {
                    geometry::scale(d, -1.0)
                } else {
                    d
                }
            }
        };
        dir_sum = geometry::add(dir_sum, geometry::scale(aligned, n));
    }
    let axis = normalize(dir_sum)?;
    let states: Vec<f64> = motions
        .iter()
        .map(|m| geometry::dot(m.translation, mat_vec(&m.rotation, axis)))
        .collect();
    let init_residual = prismatic_residual(motions, axis, &states);

    let mut params: Vec<f64> = Vec::with_capacity(3 + states.len());
    params.extend_from_slice(&axis);
    params.extend_from_slice(&states);
    let mut adam = crate::optimizer::AdamState::new(params.len());
    let mut best = (init_residual, axis, states);
    for _ in 0..SCREW_REFINE_ITERATIONS {
        if best.0 < 1e-16 {
            break;
        }
        let raw_axis = [params[0], params[1], params[2]];
        let Some(unit) = normalize(raw_axis) else { break };
        let mut grad = vec![0.0; params.len()];
        let mut unit_bar = [0.0; 3];
        let mut residual = 0.0;
        for (idx, m) in motions.iter().enumerate() {
            let q = params[3 + idx];
            let ra = mat_vec(&m.rotation, unit);
            let t = geometry::sub(m.translation, geometry::scale(ra, q));
            residual +=
                geometry::frobenius_diff_sq(&m.rotation, &IDENTITY3) + geometry::norm_sq(t);
            let t_bar = geometry::scale(t, 2.0);
            grad[3 + idx] = -geometry::dot(ra, t_bar);
            let u_bar = mat_tvec(&m.rotation, geometry::scale(t_bar, -q));
            for a in 0..3 {
                unit_bar[a] += u_bar[a];
            }
        }
        let raw_bar = normalize_backward(raw_axis, unit, unit_bar);
        grad[..3].copy_from_slice(&raw_bar);
        if residual < best.0 {
            best = (residual, unit, params[3..].to_vec());
        }
        adam.step(&mut params, &grad, 1.5e-2);
    }
    if let Some(unit) = normalize([params[0], params[1], params[2]]) {
        let qs: Vec<f64> = params[3..].to_vec();
        let residual = prismatic_residual(motions, unit, &qs);
        if residual < best.0 {
            best = (residual, unit, qs);
        }
    }
    Some((best.1, best.2, best.0))
}

/// Minimum spanning tree of the complete part graph under
/// lambda_spatial * spatial + lambda_1dof * one_dof edge weights (Kruskal,
/// ties broken by lexicographic pair order). One part yields no edges.
pub fn build_tree(costs: &EdgeCosts, lambda_spatial: f64, lambda_1dof: f64) -> Vec<(usize, usize)> {
    let n = costs.n_parts;
    if n == 0 {
        return Vec::new();
    }
    let mut edges: Vec<(f64, usize, usize)> = Vec::with_capacity(n.saturating_sub(1) * n / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let w = lambda_spatial * costs.spatial(i, j) + lambda_1dof * costs.one_dof(i, j);
            edges.push((w, i, j));
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    fn find(parent: &mut [usize], x: usize) -> usize {
        if parent[x] != x {
            parent[x] = find(parent, parent[x]);
        }
        parent[x]
    }
    let mut parent: Vec<usize> = (0..n).collect();
    let mut tree = Vec::with_capacity(n.saturating_sub(1));
    for (_, i, j) in edges {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri != rj {
            parent[ri] = rj;
            tree.push((i, j));
        }
    }
    tree
}

/// Picks the part with the least world motion as the root, orients the tree
/// outward from it breadth-first, and projects every edge's relative pose
/// deviations onto a 1-DOF screw joint.
pub fn select_root_and_orient(
    tree: &[(usize, usize)],
    set: &GaussianSet,
) -> Result<KinematicModel> {
    let m = set.num_parts();
    let k_steps = set.num_timesteps;
    let mut motion_score = vec![0.0; m];
    for (i, score) in motion_score.iter_mut().enumerate() {
        for k in 0..k_steps.saturating_sub(1) {
            let o = geometry::relative_motion(&set.parts[i].pose(k + 1)?, &set.parts[i].pose(k)?);
            *score += o.deviation_from_identity_sq();
        }
    }
    let mut root = 0;
    for i in 1..m {
        if motion_score[i] < motion_score[root] {
            root = i;
        }
    }

    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); m];
    for &(i, j) in tree {
        adjacency[i].push(j);
        adjacency[j].push(i);
    }
    for neighbors in &mut adjacency {
        neighbors.sort_unstable();
    }

    let mut visited = vec![false; m];
    visited[root] = true;
    let mut queue = vec![root];
    let mut head = 0;
    let mut oriented: Vec<(usize, usize)> = Vec::with_capacity(tree.len());
    while head < queue.len() {
        let p = queue[head];
        head += 1;
        for &c in &adjacency[p] {
            if !visited[c] {
                visited[c] = true;
                oriented.push((p, c));
                queue.push(c);
            }
        }
    }

    let rest_pose: Vec<RigidTransform> = set
        .parts
        .iter()
        .map(|p| p.pose(0))
        .collect::<Result<_>>()?;
    let root_track: Vec<RigidTransform> = (0..k_steps)
        .map(|k| set.parts[root].pose(k))
        .collect::<Result<_>>()?;

    let mut edges = Vec::with_capacity(oriented.len());
    for (p, c) in oriented {
        let motions = local_deviation_track(set, p, c)?;
        let screw = match fit_screw(&motions) {
            Ok((screw, _)) => screw,
            // Rigidly attached pair that survived merging: a zero joint.
            Err(Error::DegenerateMotion) => ScrewMotion::new(
                ScrewKind::Revolute,
                [0.0, 0.0, 1.0],
                [0.0; 3],
                vec![0.0; k_steps - 1],
            )?,
            Err(e) => return Err(e),
        };
        edges.push(KinematicEdge {
            parent: p,
            child: c,
            screw,
        });
    }

    Ok(KinematicModel {
        parts: (0..m).collect(),
        root,
        edges,
        rest_pose,
        root_track,
    })
}

/// Per-step deviation of the child's pose in the parent frame from rest,
/// expressed in the child's canonical local frame: D_u = L_0^-1 L_u with
/// L_u = P_p(u)^-1 P_c(u), for u = 1..K-1. A true 1-DOF joint makes every
/// D_u a screw about one static axis regardless of the parent's own motion,
/// which is what forward kinematics replays.
fn local_deviation_track(
    set: &GaussianSet,
    parent: usize,
    child: usize,
) -> Result<Vec<RigidTransform>> {
    let k_steps = set.num_timesteps;
    let l0 = set.parts[parent]
        .pose(0)?
        .inverse()
        .compose(&set.parts[child].pose(0)?);
    let l0_inv = l0.inverse();
    let mut track = Vec::with_capacity(k_steps - 1);
    for u in 1..k_steps {
        let lu = set.parts[parent]
            .pose(u)?
            .inverse()
            .compose(&set.parts[child].pose(u)?);
        track.push(l0_inv.compose(&lu));
    }
    Ok(track)
}

/// World pose of every part at `step` under the given joint-state tracks
/// (states[edge][step-1]; step 0 is the rest configuration).
pub fn forward_kinematics(
    model: &KinematicModel,
    states: &[Vec<f64>],
    step: usize,
) -> Result<Vec<RigidTransform>> {
    if states.len() != model.edges.len() {
        return Err(Error::MissingState {
            edge: states.len(),
            step,
        });
    }
    let mut q = Vec::with_capacity(model.edges.len());
    for (e, track) in states.iter().enumerate() {
        let value = if step == 0 {
            0.0
        } else {
            *track
                .get(step - 1)
                .ok_or(Error::MissingState { edge: e, step })?
        };
        q.push(value);
    }
    let root_pose = *model.root_track.get(step).ok_or(Error::IndexOutOfRange {
        index: step,
        len: model.root_track.len(),
    })?;
    fk_with_root(model, &q, &root_pose)
}

/// Forward kinematics with one state per edge and an explicit root pose.
pub fn fk_with_root(
    model: &KinematicModel,
    edge_states: &[f64],
    root_pose: &RigidTransform,
) -> Result<Vec<RigidTransform>> {
    if edge_states.len() != model.edges.len() {
        return Err(Error::MissingState {
            edge: edge_states.len(),
            step: 0,
        });
    }
    let mut poses = vec![None; model.parts.len()];
    poses[model.root] = Some(*root_pose);
    for (e, edge) in model.edges.iter().enumerate() {
        let parent_pose = poses[edge.parent]
            .ok_or_else(|| Error::InvalidInput("edges not in parent-first order".into()))?;
        let rel_rest = model.rest_pose[edge.parent]
            .inverse()
            .compose(&model.rest_pose[edge.child]);
        let joint = edge.screw.transform_for_state(edge_states[e]);
        poses[edge.child] = Some(parent_pose.compose(&rel_rest).compose(&joint));
    }
    poses
        .into_iter()
        .enumerate()
        .map(|(i, p)| p.ok_or(Error::EmptyPart { part: i }))
        .collect()
}

/// Re-articulates canonical-frame points to the pose given by one state per
/// edge: each point follows its part's forward-kinematics pose composed with
/// the inverse canonical pose.
pub fn reanimate(
    model: &KinematicModel,
    edge_states: &[f64],
    points: &[Vec3],
    labels: &[usize],
) -> Result<Vec<Vec3>> {
    if points.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: points.len(),
            right: labels.len(),
        });
    }
    let poses = fk_with_root(model, edge_states, &model.root_track[0])?;
    let motions: Vec<RigidTransform> = poses
        .iter()
        .zip(&model.rest_pose)
        .map(|(p, rest)| p.compose(&rest.inverse()))
        .collect();
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

#[derive(Clone, Debug)]
pub struct FinetuneOptions {
    pub iterations: usize,
    pub lr: f64,
    pub lambda_cd: f64,
    pub lambda_emd: f64,
    pub emd_subsample: usize,
    pub seed: u64,
    pub mode: FitMode,
}

impl Default for FinetuneOptions {
    fn default() -> Self {
        FinetuneOptions {
            iterations: 500,
            lr: 1.5e-2,
            lambda_cd: 1.0,
            lambda_emd: 0.3,
            emd_subsample: 128,
            seed: 0,
            mode: FitMode::Full,
        }
    }
}

// Anchored hard-label transform in pose space, with adjoints; the fine-tune
// counterpart of the Gaussian-space transport in `losses`.
struct PoseAnchor {
    k: usize,
    labels: Vec<usize>,
    points: Vec<Vec3>,
    zloc: Vec<Vec3>,
    zloc_bar: Vec<Vec3>,
}

struct PoseBar {
    r_bar: Vec<Vec<Mat3>>, // [part][step]
    t_bar: Vec<Vec<Vec3>>, // [part][step]
}

impl PoseAnchor {
    fn new(poses: &[Vec<RigidTransform>], frame: &[Vec3], labels: &[usize], k: usize) -> Self {
        let zloc = frame
            .iter()
            .zip(labels)
            .map(|(&x, &l)| {
                let p = &poses[l][k];
                mat_tvec(&p.rotation, geometry::sub(x, p.translation))
            })
            .collect();
        PoseAnchor {
            k,
            labels: labels.to_vec(),
            points: frame.to_vec(),
            zloc,
            zloc_bar: vec![[0.0; 3]; frame.len()],
        }
    }

    fn transform(&self, poses: &[Vec<RigidTransform>], t: usize) -> Vec<Vec3> {
        self.zloc
            .iter()
            .zip(&self.labels)
            .map(|(&z, &l)| poses[l][t].apply(z))
            .collect()
    }

    fn backprop(
        &mut self,
        poses: &[Vec<RigidTransform>],
        t: usize,
        h_bar: &[Vec3],
        bar: &mut PoseBar,
    ) {
        for (n, &g) in h_bar.iter().enumerate() {
            if g == [0.0; 3] {
                continue;
            }
            let l = self.labels[n];
            let z = self.zloc[n];
            for r in 0..3 {
                for c in 0..3 {
                    bar.r_bar[l][t][r][c] += g[r] * z[c];
                }
            }
            for c in 0..3 {
                bar.t_bar[l][t][c] += g[c];
            }
            let zb = mat_tvec(&poses[l][t].rotation, g);
            for c in 0..3 {
                self.zloc_bar[n][c] += zb[c];
            }
        }
    }

    fn finalize(self, poses: &[Vec<RigidTransform>], bar: &mut PoseBar) {
        for (n, zb) in self.zloc_bar.iter().enumerate() {
            if *zb == [0.0; 3] {
                continue;
            }
            let l = self.labels[n];
            let p = &poses[l][self.k];
            let d = geometry::sub(self.points[n], p.translation);
            for r in 0..3 {
                for c in 0..3 {
                    bar.r_bar[l][self.k][r][c] += d[r] * zb[c];
                }
            }
            let d_bar = mat_vec(&p.rotation, *zb);
            for c in 0..3 {
                bar.t_bar[l][self.k][c] -= d_bar[c];
            }
        }
    }
}

/// Full-sum Chamfer score of a kinematic model against the observations:
/// every frame carried to every other step through the forward-kinematics
/// poses under its fixed labels. In partial mode the one-directional variant
/// (each frame against the fused complement) is summed instead.
pub fn fk_chamfer_score(
    model: &KinematicModel,
    frames: &[Vec<Vec3>],
    labels: &[Vec<usize>],
    mode: FitMode,
) -> Result<f64> {
    let k_steps = model.num_timesteps();
    let states = model.edge_states();
    let mut poses = vec![Vec::with_capacity(k_steps); model.parts.len()];
    for u in 0..k_steps {
        for (i, pose) in forward_kinematics(model, &states, u)?.into_iter().enumerate() {
            poses[i].push(pose);
        }
    }
    let mut total = 0.0;
    match mode {
        FitMode::Full => {
            for k in 0..k_steps {
                let ctx = PoseAnchor::new(&poses, &frames[k], &labels[k], k);
                for t in 0..k_steps {
                    if t == k {
                        continue;
                    }
                    let h = ctx.transform(&poses, t);
                    total += crate::losses::symmetric_chamfer(&h, &frames[t]);
                }
            }
        }
        FitMode::Partial => {
            for t in 0..k_steps {
                let mut fused = Vec::new();
                for q in 0..k_steps {
                    if q == t {
                        continue;
                    }
                    let ctx = PoseAnchor::new(&poses, &frames[q], &labels[q], q);
                    fused.extend(ctx.transform(&poses, t));
                }
                if fused.is_empty() {
                    continue;
                }
                let nn = NearestNeighbors::build(&fused);
                for &x in &frames[t] {
                    total += nn.nearest(x).1;
                }
            }
        }
    }
    Ok(total)
}

/// Refines joint states, axes, origins, and the root trajectory by Adam on
/// the Chamfer + EMD objective with part poses produced through forward
/// kinematics. Point labels are held fixed. Returns the refined model and
/// the per-iteration objective values.
///
/// The refined parameters are accepted only if they do not worsen the
/// deterministic full-sum Chamfer score; otherwise the input model is kept
/// (Adam orbits rather than settles once the objective floor is reached).
pub fn finetune_joints(
    model: &KinematicModel,
    frames: &[Vec<Vec3>],
    labels: &[Vec<usize>],
    opts: &FinetuneOptions,
) -> Result<(KinematicModel, Vec<f64>)> {
    let k_steps = model.num_timesteps();
    if frames.len() != k_steps {
        return Err(Error::LengthMismatch {
            left: frames.len(),
            right: k_steps,
        });
    }
    let n_edges = model.edges.len();
    let states_len = k_steps - 1;

    // Parameter layout: per edge [axis(3), origin(3), states(K-1)], then the
    // root track as per-step [rot6d(6), translation(3)].
    let edge_stride = 6 + states_len;
    let root_offset = n_edges * edge_stride;
    let mut params = vec![0.0; root_offset + k_steps * 9];
    for (e, edge) in model.edges.iter().enumerate() {
        let base = e * edge_stride;
        params[base..base + 3].copy_from_slice(&edge.screw.axis);
        params[base + 3..base + 6].copy_from_slice(&edge.screw.origin);
        params[base + 6..base + 6 + states_len].copy_from_slice(&edge.screw.states);
    }
    for (u, pose) in model.root_track.iter().enumerate() {
        let r6 = matrix_to_rot6d(&pose.rotation);
        let base = root_offset + u * 9;
        params[base..base + 3].copy_from_slice(&r6.a);
        params[base + 3..base + 6].copy_from_slice(&r6.b);
        params[base + 6..base + 9].copy_from_slice(&pose.translation);
    }

    let rel_rest: Vec<RigidTransform> = model
        .edges
        .iter()
        .map(|e| {
            model.rest_pose[e.parent]
                .inverse()
                .compose(&model.rest_pose[e.child])
        })
        .collect();

    let mut adam = crate::optimizer::AdamState::new(params.len());
    let mut rng = Rng::new(mix_seed(opts.seed, 0x0f));
    let mut history = Vec::with_capacity(opts.iterations);

    for iteration in 0..opts.iterations {
        let anchor = rng.index(k_steps);
        let (value, grad) = fk_objective(
            model, &rel_rest, &params, frames, labels, anchor, opts, &mut rng,
        )?;
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { iteration });
        }
        history.push(value);
        adam.step(&mut params, &grad, opts.lr);
        // Keep the axes unit length.
        for e in 0..n_edges {
            let base = e * edge_stride;
            let axis = [params[base], params[base + 1], params[base + 2]];
            if let Some(unit) = normalize(axis) {
                params[base..base + 3].copy_from_slice(&unit);
            }
        }
    }

    let refined = rebuild_model(model, &params, edge_stride, root_offset)?;
    let before = fk_chamfer_score(model, frames, labels, opts.mode)?;
    let after = fk_chamfer_score(&refined, frames, labels, opts.mode)?;
    if after <= before {
        Ok((refined, history))
    } else {
        Ok((model.clone(), history))
    }
}

fn rebuild_model(
    model: &KinematicModel,
    params: &[f64],
    edge_stride: usize,
    root_offset: usize,
) -> Result<KinematicModel> {
    let k_steps = model.num_timesteps();
    let states_len = k_steps - 1;
    let mut edges = Vec::with_capacity(model.edges.len());
    for (e, edge) in model.edges.iter().enumerate() {
        let base = e * edge_stride;
        let screw = ScrewMotion::new(
            edge.screw.kind,
            [params[base], params[base + 1], params[base + 2]],
            [params[base + 3], params[base + 4], params[base + 5]],
            params[base + 6..base + 6 + states_len].to_vec(),
        )?;
        edges.push(KinematicEdge {
            parent: edge.parent,
            child: edge.child,
            screw,
        });
    }
    let mut root_track = Vec::with_capacity(k_steps);
    for u in 0..k_steps {
        let base = root_offset + u * 9;
        let r6 = Rot6D::new(
            [params[base], params[base + 1], params[base + 2]],
            [params[base + 3], params[base + 4], params[base + 5]],
        );
        root_track.push(RigidTransform::new(
            rot6d_to_matrix(&r6)?,
            [params[base + 6], params[base + 7], params[base + 8]],
        ));
    }
    let mut refined = KinematicModel {
        parts: model.parts.clone(),
        root: model.root,
        edges,
        rest_pose: model.rest_pose.clone(),
        root_track,
    };
    // Re-anchor the canonical poses to the refined step-0 configuration so
    // zero joint states reproduce it exactly.
    let zero = vec![0.0; refined.edges.len()];
    let root0 = refined.root_track[0];
    refined.rest_pose = fk_with_root(&refined, &zero, &root0)?;
    Ok(refined)
}

#[allow(clippy::too_many_arguments)]
fn fk_objective(
    model: &KinematicModel,
    rel_rest: &[RigidTransform],
    params: &[f64],
    frames: &[Vec<Vec3>],
    labels: &[Vec<usize>],
    anchor: usize,
    opts: &FinetuneOptions,
    rng: &mut Rng,
) -> Result<(f64, Vec<f64>)> {
    let k_steps = model.num_timesteps();
    let n_parts = model.parts.len();
    let n_edges = model.edges.len();
    let states_len = k_steps - 1;
    let edge_stride = 6 + states_len;
    let root_offset = n_edges * edge_stride;

    // Forward pass: poses for every part and step, with per-edge caches.
    let mut poses = vec![vec![RigidTransform::IDENTITY; k_steps]; n_parts];
    let mut joints = vec![vec![RigidTransform::IDENTITY; k_steps]; n_edges];
    let mut axes = vec![[0.0; 3]; n_edges];
    let mut root_caches = Vec::with_capacity(k_steps);
    for u in 0..k_steps {
        let base = root_offset + u * 9;
        let r6 = Rot6D::new(
            [params[base], params[base + 1], params[base + 2]],
            [params[base + 3], params[base + 4], params[base + 5]],
        );
        let cache = rot6d_forward(&r6)?;
        poses[model.root][u] = RigidTransform::new(
            cache.r,
            [params[base + 6], params[base + 7], params[base + 8]],
        );
        root_caches.push(cache);
    }
    for (e, edge) in model.edges.iter().enumerate() {
        let base = e * edge_stride;
        let raw_axis = [params[base], params[base + 1], params[base + 2]];
        let unit = normalize(raw_axis).ok_or(Error::DegenerateRotation)?;
        axes[e] = unit;
        let origin = [params[base + 3], params[base + 4], params[base + 5]];
        for u in 0..k_steps {
            let q = if u == 0 { 0.0 } else { params[base + 6 + u - 1] };
            let joint = match edge.screw.kind {
                ScrewKind::Revolute => rotation_about_line(unit, origin, q),
                ScrewKind::Prismatic => {
                    RigidTransform::from_translation(geometry::scale(unit, q))
                }
            };
            joints[e][u] = joint;
            poses[edge.child][u] = poses[edge.parent][u]
                .compose(&rel_rest[e])
                .compose(&joint);
        }
    }

    // Loss in pose space with fixed labels.
    let mut bar = PoseBar {
        r_bar: vec![vec![[[0.0; 3]; 3]; k_steps]; n_parts],
        t_bar: vec![vec![[0.0; 3]; k_steps]; n_parts],
    };
    let value = match opts.mode {
        FitMode::Full => {
            let mut ctx = PoseAnchor::new(&poses, &frames[anchor], &labels[anchor], anchor);
            let mut value = 0.0;
            for t in 0..k_steps {
                if t == anchor {
                    continue;
                }
                let h = ctx.transform(&poses, t);
                let mut h_bar = vec![[0.0; 3]; h.len()];
                if opts.lambda_cd > 0.0 {
                    value +=
                        opts.lambda_cd * chamfer_into(&h, &frames[t], opts.lambda_cd, &mut h_bar);
                }
                if opts.lambda_emd > 0.0 {
                    value += opts.lambda_emd
                        * emd_into(
                            &h,
                            &frames[t],
                            opts.emd_subsample,
                            opts.lambda_emd,
                            rng,
                            &mut h_bar,
                        );
                }
                ctx.backprop(&poses, t, &h_bar, &mut bar);
            }
            ctx.finalize(&poses, &mut bar);
            value
        }
        FitMode::Partial => {
            let mut ctxs: Vec<PoseAnchor> = (0..k_steps)
                .map(|q| PoseAnchor::new(&poses, &frames[q], &labels[q], q))
                .collect();
            let sources: Vec<usize> = (0..k_steps).filter(|&q| q != anchor).collect();
            let mut fused = Vec::new();
            let mut origin = Vec::new();
            for &q in &sources {
                let h = ctxs[q].transform(&poses, anchor);
                for (n, p) in h.into_iter().enumerate() {
                    fused.push(p);
                    origin.push((q, n));
                }
            }
            let mut fused_bar = vec![[0.0; 3]; fused.len()];
            let mut value = 0.0;
            if opts.lambda_cd > 0.0 && !fused.is_empty() {
                let nn = NearestNeighbors::build(&fused);
                let mut v = 0.0;
                for &x in &frames[anchor] {
                    let (j, d) = nn.nearest(x);
                    v += d;
                    let g = geometry::scale(geometry::sub(fused[j], x), 2.0 * opts.lambda_cd);
                    for c in 0..3 {
                        fused_bar[j][c] += g[c];
                    }
                }
                value += opts.lambda_cd * v;
            }
            if opts.lambda_emd > 0.0 && !fused.is_empty() {
                let rows = opts
                    .emd_subsample
                    .min(frames[anchor].len())
                    .min(fused.len());
                if rows > 0 {
                    let cols = (2 * opts.emd_subsample).min(fused.len()).max(rows);
                    let xi = rng.sample_indices(frames[anchor].len(), rows);
                    let fi = rng.sample_indices(fused.len(), cols);
                    let mut costs = Vec::with_capacity(rows * cols);
                    for &a in &xi {
                        for &b in &fi {
                            costs.push(dist_sq(frames[anchor][a], fused[b]));
                        }
                    }
                    let matrix = CostMatrix::new(rows, cols, costs).expect("finite costs");
                    let (assignment, cost) = solve(&matrix);
                    value += opts.lambda_emd * cost;
                    for (r, &c) in assignment.iter().enumerate() {
                        let g = geometry::scale(
                            geometry::sub(fused[fi[c]], frames[anchor][xi[r]]),
                            2.0 * opts.lambda_emd,
                        );
                        for j in 0..3 {
                            fused_bar[fi[c]][j] += g[j];
                        }
                    }
                }
            }
            for &q in &sources {
                let n = ctxs[q].points.len();
                let mut h_bar = vec![[0.0; 3]; n];
                let mut any = false;
                for (idx, &(src, point)) in origin.iter().enumerate() {
                    if src == q && fused_bar[idx] != [0.0; 3] {
                        h_bar[point] = fused_bar[idx];
                        any = true;
                    }
                }
                if any {
                    ctxs[q].backprop(&poses, anchor, &h_bar, &mut bar);
                }
            }
            for ctx in ctxs {
                ctx.finalize(&poses, &mut bar);
            }
            value
        }
    };

    // Backward pass through the kinematic chain, children before parents.
    let mut grad = vec![0.0; params.len()];
    for (e, edge) in model.edges.iter().enumerate().rev() {
        let base = e * edge_stride;
        for u in 0..k_steps {
            let rc_bar = bar.r_bar[edge.child][u];
            let tc_bar = bar.t_bar[edge.child][u];
            if rc_bar == [[0.0; 3]; 3] && tc_bar == [0.0; 3] {
                continue;
            }
            let parent_pose = poses[edge.parent][u];
            let joint = joints[e][u];
            let e_pose = rel_rest[e].compose(&joint);
            // child = parent o E
            for r in 0..3 {
                for c in 0..3 {
                    let mut acc = 0.0;
                    for s in 0..3 {
                        acc += rc_bar[r][s] * e_pose.rotation[c][s];
                    }
                    bar.r_bar[edge.parent][u][r][c] += acc + tc_bar[r] * e_pose.translation[c];
                }
                bar.t_bar[edge.parent][u][r] += tc_bar[r];
            }
            let er_bar = mat_mul(&transpose(&parent_pose.rotation), &rc_bar);
            let et_bar = mat_tvec(&parent_pose.rotation, tc_bar);
            // E = rel_rest o S
            let sr_bar = mat_mul(&transpose(&rel_rest[e].rotation), &er_bar);
            let st_bar = mat_tvec(&rel_rest[e].rotation, et_bar);
            let q = if u == 0 { 0.0 } else { params[base + 6 + u - 1] };
            match edge.screw.kind {
                ScrewKind::Revolute => {
                    let o = [params[base + 3], params[base + 4], params[base + 5]];
                    // t_S = o - R_S o
                    let o_bar = geometry::sub(st_bar, mat_tvec(&joint.rotation, st_bar));
                    let mut rot_bar = sr_bar;
                    for r in 0..3 {
                        for c in 0..3 {
                            rot_bar[r][c] -= st_bar[r] * o[c];
                        }
                    }
                    let (axis_bar, q_bar) = axis_angle_backward(axes[e], q, &rot_bar);
                    if u > 0 {
                        grad[base + 6 + u - 1] += q_bar;
                    }
                    let raw = [params[base], params[base + 1], params[base + 2]];
                    let raw_bar = normalize_backward(raw, axes[e], axis_bar);
                    for a in 0..3 {
                        grad[base + a] += raw_bar[a];
                        grad[base + 3 + a] += o_bar[a];
                    }
                }
                ScrewKind::Prismatic => {
                    if u > 0 {
                        grad[base + 6 + u - 1] += geometry::dot(axes[e], st_bar);
                    }
                    let unit_bar = geometry::scale(st_bar, q);
                    let raw = [params[base], params[base + 1], params[base + 2]];
                    let raw_bar = normalize_backward(raw, axes[e], unit_bar);
                    for a in 0..3 {
                        grad[base + a] += raw_bar[a];
                    }
                }
            }
        }
    }
    for u in 0..k_steps {
        let base = root_offset + u * 9;
        let (a_bar, b_bar) = rot6d_backward(&root_caches[u], &bar.r_bar[model.root][u]);
        for a in 0..3 {
            grad[base + a] += a_bar[a];
            grad[base + 3 + a] += b_bar[a];
            grad[base + 6 + a] += bar.t_bar[model.root][u][a];
        }
    }
    Ok((value, grad))
}

/// Symmetric Chamfer between h and the target, accumulating dL/dh (already
/// scaled by `weight`); returns the raw value.
fn chamfer_into(h: &[Vec3], target: &[Vec3], weight: f64, h_bar: &mut [Vec3]) -> f64 {
    let mut value = 0.0;
    let nn_target = NearestNeighbors::build(target);
    for (n, &hp) in h.iter().enumerate() {
        let (j, d) = nn_target.nearest(hp);
        value += d;
        let g = geometry::scale(geometry::sub(hp, target[j]), 2.0 * weight);
        for c in 0..3 {
            h_bar[n][c] += g[c];
        }
    }
    let nn_h = NearestNeighbors::build(h);
    for &y in target {
        let (n, d) = nn_h.nearest(y);
        value += d;
        let g = geometry::scale(geometry::sub(h[n], y), 2.0 * weight);
        for c in 0..3 {
            h_bar[n][c] += g[c];
        }
    }
    value
}

fn emd_into(
    h: &[Vec3],
    target: &[Vec3],
    subsample: usize,
    weight: f64,
    rng: &mut Rng,
    h_bar: &mut [Vec3],
) -> f64 {
    let count = subsample.min(h.len()).min(target.len());
    if count == 0 {
        return 0.0;
    }
    let hi = rng.sample_indices(h.len(), count);
    let yi = rng.sample_indices(target.len(), count);
    let mut costs = Vec::with_capacity(count * count);
    for &a in &hi {
        for &b in &yi {
            costs.push(dist_sq(h[a], target[b]));
        }
    }
    let matrix = CostMatrix::new(count, count, costs).expect("square finite costs");
    let (assignment, cost) = solve(&matrix);
    for (r, &c) in assignment.iter().enumerate() {
        let g = geometry::scale(geometry::sub(h[hi[r]], target[yi[c]]), 2.0 * weight);
        for j in 0..3 {
            h_bar[hi[r]][j] += g[j];
        }
    }
    cost
}
