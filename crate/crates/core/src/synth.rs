//! Synthetic articulated-scene generation: surface-sampled point cloud
//! sequences with full ground truth, plus the partially observed and
//! camera-occluded variants and the ground-truth flow oracle.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::float::{atan2, cos, sin, sqrt};
use crate::geometry::{self, normalize, rotation_about_line, RigidTransform, ScrewKind, Vec3};
use crate::losses::FlowOracle;
use crate::nn::NearestNeighbors;
use crate::rng::{mix_seed, Rng};

#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    Box { half_extents: Vec3 },
    Cylinder { radius: f64, half_height: f64 },
    Sphere { radius: f64 },
}

impl Shape {
    pub fn surface_area(&self) -> f64 {
        match *self {
            Shape::Box { half_extents: h } => {
                8.0 * (h[0] * h[1] + h[1] * h[2] + h[0] * h[2])
            }
            Shape::Cylinder {
                radius,
                half_height,
            } => {
                2.0 * core::f64::consts::PI * radius * (2.0 * half_height)
                    + 2.0 * core::f64::consts::PI * radius * radius
            }
            Shape::Sphere { radius } => 4.0 * core::f64::consts::PI * radius * radius,
        }
    }

    /// Uniform-by-area sample of the surface, in the shape's local frame.
    pub fn sample_surface(&self, rng: &mut Rng) -> Vec3 {
        match *self {
            Shape::Box { half_extents: h } => {
                let areas = [
                    4.0 * h[1] * h[2], // +-x faces
                    4.0 * h[0] * h[2], // +-y
                    4.0 * h[0] * h[1], // +-z
                ];
                let total = areas[0] + areas[1] + areas[2];
                let mut pick = rng.uniform() * total;
                let mut axis = 0;
                for (i, &a) in areas.iter().enumerate() {
                    if pick < a || i == 2 {
                        axis = i;
                        break;
                    }
                    pick -= a;
                }
                let side = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
                let u = (rng.uniform() * 2.0 - 1.0) * h[(axis + 1) % 3];
                let v = (rng.uniform() * 2.0 - 1.0) * h[(axis + 2) % 3];
                let mut p = [0.0; 3];
                p[axis] = side * h[axis];
                p[(axis + 1) % 3] = u;
                p[(axis + 2) % 3] = v;
                p
            }
            Shape::Cylinder {
                radius,
                half_height,
            } => {
                let lateral = 2.0 * core::f64::consts::PI * radius * (2.0 * half_height);
                let cap = core::f64::consts::PI * radius * radius;
                let pick = rng.uniform() * (lateral + 2.0 * cap);
                if pick < lateral {
                    let phi = rng.uniform() * 2.0 * core::f64::consts::PI;
                    let z = (rng.uniform() * 2.0 - 1.0) * half_height;
                    [radius * cos(phi), radius * sin(phi), z]
                } else {
                    let z = if pick < lateral + cap {
                        half_height
                    } else {
                        -half_height
                    };
                    let phi = rng.uniform() * 2.0 * core::f64::consts::PI;
                    let r = radius * sqrt(rng.uniform());
                    [r * cos(phi), r * sin(phi), z]
                }
            }
            Shape::Sphere { radius } => {
                // z uniform and azimuth uniform is area-uniform on a sphere.
                let z = rng.uniform() * 2.0 - 1.0;
                let phi = rng.uniform() * 2.0 * core::f64::consts::PI;
                let r = sqrt((1.0 - z * z).max(0.0));
                [radius * r * cos(phi), radius * r * sin(phi), radius * z]
            }
        }
    }
}

/// One rigid part: a shape placed (axis-aligned) at `center` in the
/// canonical world frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PartSpec {
    pub shape: Shape,
    pub center: Vec3,
}

/// A 1-DOF joint; axis and origin are in canonical world coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct JointSpec {
    pub parent: usize,
    pub child: usize,
    pub kind: ScrewKind,
    pub axis: Vec3,
    pub origin: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub parts: Vec<PartSpec>,
    pub joints: Vec<JointSpec>,
    /// Absolute joint state per joint per frame; frame 0 is canonical.
    pub trajectory: Vec<Vec<f64>>,
    pub frames: usize,
    pub points_per_frame: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Joint states of the held-out articulations; two unseen poses are
    /// derived automatically when empty.
    pub holdout: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeldOutPose {
    pub states: Vec<f64>,
    pub points: Vec<Vec3>,
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    /// Per-frame per-point part labels.
    pub labels: Vec<Vec<usize>>,
    /// Per-part per-frame world pose of the canonical frame.
    pub poses: Vec<Vec<RigidTransform>>,
    pub root: usize,
    pub joints: Vec<JointSpec>,
    pub trajectory: Vec<Vec<f64>>,
    pub holdout: Vec<HeldOutPose>,
    pub noise_sigma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub frames: Vec<Vec<Vec3>>,
    pub gt: Option<GroundTruth>,
}

impl Dataset {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn require_gt(&self) -> Result<&GroundTruth> {
        self.gt.as_ref().ok_or(Error::MissingGroundTruth)
    }
}

fn validate(spec: &SceneSpec) -> Result<usize> {
    let m = spec.parts.len();
    if m == 0 {
        return Err(Error::InvalidInput("scene needs at least one part".into()));
    }
    if spec.points_per_frame == 0 || spec.frames == 0 {
        return Err(Error::InvalidInput("frames and points must be positive".into()));
    }
    if spec.noise_sigma < 0.0 {
        return Err(Error::InvalidInput("noise sigma must be nonnegative".into()));
    }
    if spec.joints.len() + 1 != m {
        return Err(Error::InvalidInput(format!(
            "{} joints cannot form a tree over {m} parts",
            spec.joints.len()
        )));
    }
    let mut has_parent = vec![false; m];
    for j in &spec.joints {
        if j.parent >= m || j.child >= m || j.parent == j.child {
            return Err(Error::InvalidInput("joint references invalid parts".into()));
        }
        if has_parent[j.child] {
            return Err(Error::InvalidInput("part with two parents".into()));
        }
        has_parent[j.child] = true;
        if normalize(j.axis).is_none() {
            return Err(Error::InvalidInput("joint axis must be nonzero".into()));
        }
    }
    let root = (0..m)
        .find(|&i| !has_parent[i])
        .ok_or_else(|| Error::InvalidInput("no root part".into()))?;
    if spec.trajectory.len() != spec.joints.len() {
        return Err(Error::InvalidInput("trajectory must cover every joint".into()));
    }
    for track in &spec.trajectory {
        if track.len() != spec.frames {
            return Err(Error::InvalidInput("trajectory must cover every frame".into()));
        }
    }
    for states in &spec.holdout {
        if states.len() != spec.joints.len() {
            return Err(Error::InvalidInput("holdout must cover every joint".into()));
        }
    }
    // Reachability from the root.
    let mut reached = vec![false; m];
    reached[root] = true;
    let mut changed = true;
    while changed {
        changed = false;
        for j in &spec.joints {
            if reached[j.parent] && !reached[j.child] {
                reached[j.child] = true;
                changed = true;
            }
        }
    }
    if reached.iter().any(|r| !r) {
        return Err(Error::InvalidInput("kinematic tree is not connected".into()));
    }
    Ok(root)
}

/// Joints ordered parent-before-child from the root.
fn topological_joints(spec: &SceneSpec, root: usize) -> Vec<usize> {
    let m = spec.parts.len();
    let mut order = Vec::with_capacity(spec.joints.len());
    let mut placed = vec![false; m];
    placed[root] = true;
    while order.len() < spec.joints.len() {
        for (idx, j) in spec.joints.iter().enumerate() {
            if placed[j.parent] && !placed[j.child] {
                placed[j.child] = true;
                order.push(idx);
            }
        }
    }
    order
}

/// World pose of every part for one state vector (product of exponentials
/// with axes in the canonical configuration).
fn fk_poses(spec: &SceneSpec, root: usize, order: &[usize], states: &[f64]) -> Vec<RigidTransform> {
    let unit_axes: Vec<Vec3> = spec
        .joints
        .iter()
        .map(|j| normalize(j.axis).expect("validated"))
        .collect();
    let mut poses = vec![RigidTransform::IDENTITY; spec.parts.len()];
    let _ = root;
    for &idx in order {
        let j = &spec.joints[idx];
        let joint_motion = match j.kind {
            ScrewKind::Revolute => rotation_about_line(unit_axes[idx], j.origin, states[idx]),
            ScrewKind::Prismatic => {
                RigidTransform::from_translation(geometry::scale(unit_axes[idx], states[idx]))
            }
        };
        poses[j.child] = poses[j.parent].compose(&joint_motion);
    }
    poses
}

/// Largest-remainder allocation of the point budget by surface area, with
/// at least one point per part when the budget allows.
fn allocate_points(spec: &SceneSpec) -> Vec<usize> {
    let m = spec.parts.len();
    let areas: Vec<f64> = spec.parts.iter().map(|p| p.shape.surface_area()).collect();
    let total: f64 = areas.iter().sum();
    let n = spec.points_per_frame;
    let mut counts = vec![0usize; m];
    let mut fractions: Vec<(f64, usize)> = Vec::with_capacity(m);
    let mut assigned = 0usize;
    for i in 0..m {
        let exact = n as f64 * areas[i] / total;
        let floor = crate::float::floor(exact) as usize;
        counts[i] = floor;
        assigned += floor;
        fractions.push((exact - floor as f64, i));
    }
    fractions.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut leftover = n - assigned;
    let mut cursor = 0;
    while leftover > 0 {
        counts[fractions[cursor % m].1] += 1;
        cursor += 1;
        leftover -= 1;
    }
    if n >= m {
        // Steal from the largest allocation for any empty part.
        for i in 0..m {
            while counts[i] == 0 {
                let donor = (0..m).max_by_key(|&j| counts[j]).expect("nonempty");
                if counts[donor] <= 1 {
                    break;
                }
                counts[donor] -= 1;
                counts[i] += 1;
            }
        }
    }
    counts
}

fn sample_articulation(
    spec: &SceneSpec,
    root: usize,
    order: &[usize],
    counts: &[usize],
    states: &[f64],
    rng: &mut Rng,
) -> (Vec<Vec3>, Vec<usize>) {
    let poses = fk_poses(spec, root, order, states);
    let mut points = Vec::with_capacity(spec.points_per_frame);
    let mut labels = Vec::with_capacity(spec.points_per_frame);
    for (part_idx, part) in spec.parts.iter().enumerate() {
        for _ in 0..counts[part_idx] {
            let local = part.shape.sample_surface(rng);
            let canonical = geometry::add(local, part.center);
            let mut world = poses[part_idx].apply(canonical);
            if spec.noise_sigma > 0.0 {
                world = [
                    world[0] + rng.normal() * spec.noise_sigma,
                    world[1] + rng.normal() * spec.noise_sigma,
                    world[2] + rng.normal() * spec.noise_sigma,
                ];
            }
            points.push(world);
            labels.push(part_idx);
        }
    }
    (points, labels)
}

/// Generates the dataset: every frame freshly surface-sampled, transformed
/// by the trajectory's forward kinematics, and perturbed by isotropic noise,
/// with full ground truth including two held-out articulations.
pub fn generate(spec: &SceneSpec) -> Result<Dataset> {
    let root = validate(spec)?;
    let order = topological_joints(spec, root);
    let counts = allocate_points(spec);

    let mut frames = Vec::with_capacity(spec.frames);
    let mut labels = Vec::with_capacity(spec.frames);
    let mut poses: Vec<Vec<RigidTransform>> = vec![Vec::with_capacity(spec.frames); spec.parts.len()];
    for frame in 0..spec.frames {
        let states: Vec<f64> = spec.trajectory.iter().map(|t| t[frame]).collect();
        let frame_poses = fk_poses(spec, root, &order, &states);
        for (i, pose) in frame_poses.iter().enumerate() {
            poses[i].push(*pose);
        }
        let mut rng = Rng::new(mix_seed(spec.seed, frame as u64));
        let (pts, lbs) = sample_articulation(spec, root, &order, &counts, &states, &mut rng);
        frames.push(pts);
        labels.push(lbs);
    }

    let holdout_states = if spec.holdout.is_empty() {
        default_holdout(spec)
    } else {
        spec.holdout.clone()
    };
    let mut holdout = Vec::with_capacity(holdout_states.len());
    for (idx, states) in holdout_states.iter().enumerate() {
        let mut rng = Rng::new(mix_seed(spec.seed, 0x4a00 + idx as u64));
        let (pts, lbs) = sample_articulation(spec, root, &order, &counts, states, &mut rng);
        holdout.push(HeldOutPose {
            states: states.clone(),
            points: pts,
            labels: lbs,
        });
    }

    Ok(Dataset {
        frames,
        gt: Some(GroundTruth {
            labels,
            poses,
            root,
            joints: spec.joints.clone(),
            trajectory: spec.trajectory.clone(),
            holdout,
            noise_sigma: spec.noise_sigma,
        }),
    })
}

/// Two articulations outside the observed state range of every joint.
fn default_holdout(spec: &SceneSpec) -> Vec<Vec<f64>> {
    let mut above = Vec::with_capacity(spec.joints.len());
    let mut below = Vec::with_capacity(spec.joints.len());
    for track in &spec.trajectory {
        let lo = track.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = track.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(0.3);
        above.push(hi + 0.35 * span);
        below.push(lo - 0.35 * span);
    }
    vec![above, below]
}

fn frame_bbox_diag(points: &[Vec3]) -> (Vec3, f64) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let center = [
        0.5 * (lo[0] + hi[0]),
        0.5 * (lo[1] + hi[1]),
        0.5 * (lo[2] + hi[2]),
    ];
    let diag = sqrt(
        (hi[0] - lo[0]) * (hi[0] - lo[0])
            + (hi[1] - lo[1]) * (hi[1] - lo[1])
            + (hi[2] - lo[2]) * (hi[2] - lo[2]),
    );
    (center, diag)
}

/// Self-occlusion variant: per frame and per part, the half of the part's
/// points facing away from a seeded random direction is dropped, keeping at
/// least 20% of each part's points visible in every frame.
pub fn make_partial(ds: &Dataset, seed: u64) -> Result<Dataset> {
    let gt = ds.require_gt()?;
    let m = gt.poses.len();
    let mut frames = Vec::with_capacity(ds.frames.len());
    let mut labels = Vec::with_capacity(ds.frames.len());
    for (f, frame) in ds.frames.iter().enumerate() {
        let mut keep = vec![false; frame.len()];
        for part in 0..m {
            let indices: Vec<usize> = (0..frame.len())
                .filter(|&i| gt.labels[f][i] == part)
                .collect();
            if indices.is_empty() {
                continue;
            }
            let mut rng = Rng::new(mix_seed(mix_seed(seed, f as u64), part as u64));
            let direction = rng.unit_vector();
            let mut centroid = [0.0; 3];
            for &i in &indices {
                centroid = geometry::add(centroid, frame[i]);
            }
            centroid = geometry::scale(centroid, 1.0 / indices.len() as f64);
            let dots: Vec<f64> = indices
                .iter()
                .map(|&i| geometry::dot(geometry::sub(frame[i], centroid), direction))
                .collect();
            let mut kept = 0usize;
            for (pos, &i) in indices.iter().enumerate() {
                if dots[pos] >= 0.0 {
                    keep[i] = true;
                    kept += 1;
                }
            }
            let minimum = ((indices.len() as f64 * 0.2) as usize).max(1);
            if kept < minimum {
                // Top up with the most front-facing of the dropped points.
                let mut ranked: Vec<(f64, usize)> = indices
                    .iter()
                    .enumerate()
                    .map(|(pos, &i)| (dots[pos], i))
                    .collect();
                ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                for &(_, i) in ranked.iter().take(minimum) {
                    keep[i] = true;
                }
            }
        }
        let mut new_frame = Vec::new();
        let mut new_labels = Vec::new();
        for (i, &k) in keep.iter().enumerate() {
            if k {
                new_frame.push(frame[i]);
                new_labels.push(gt.labels[f][i]);
            }
        }
        frames.push(new_frame);
        labels.push(new_labels);
    }
    Ok(Dataset {
        frames,
        gt: Some(GroundTruth {
            labels,
            ..gt.clone()
        }),
    })
}

const OCCLUSION_MAX_BINS: usize = 64;
const OCCLUSION_DEPTH_SLACK: f64 = 0.02;

/// Bin count per angular axis: at most 64x64, reduced for sparse clouds so
/// each bin holds over a dozen points — a grid finer than the point spacing
/// would occlude nothing, and bins that happen to contain only back-surface
/// points would leak them through.
fn occlusion_bins(n_points: usize) -> usize {
    let target = crate::float::sqrt(n_points as f64 / 16.0) as usize;
    target.clamp(4, OCCLUSION_MAX_BINS)
}

/// Camera-occlusion variant: per frame a camera is sampled on a sphere of
/// three bounding-box diagonals, points are projected into an angular grid
/// toward it (up to 64x64 bins), and within each bin only points near the
/// minimal depth survive. Whole parts may vanish from a frame.
pub fn make_occluded(ds: &Dataset, seed: u64) -> Result<Dataset> {
    let gt = ds.require_gt()?;
    let mut frames = Vec::with_capacity(ds.frames.len());
    let mut labels = Vec::with_capacity(ds.frames.len());
    for (f, frame) in ds.frames.iter().enumerate() {
        if frame.is_empty() {
            frames.push(Vec::new());
            labels.push(Vec::new());
            continue;
        }
        let mut rng = Rng::new(mix_seed(seed, f as u64));
        let (center, diag) = frame_bbox_diag(frame);
        let camera = geometry::add(center, geometry::scale(rng.unit_vector(), 3.0 * diag));
        let w = normalize(geometry::sub(center, camera)).expect("camera off-center");
        // Complete an orthonormal camera basis.
        let pick = if w[0].abs() <= w[1].abs() && w[0].abs() <= w[2].abs() {
            [1.0, 0.0, 0.0]
        } else if w[1].abs() <= w[2].abs() {
            [0.0, 1.0, 0.0]
        } else {
            [0.0, 0.0, 1.0]
        };
        let u = normalize(geometry::cross(w, pick)).expect("basis");
        let v = geometry::cross(w, u);

        let mut coords = Vec::with_capacity(frame.len());
        let mut depths = Vec::with_capacity(frame.len());
        let (mut lo_u, mut hi_u) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut lo_v, mut hi_v) = (f64::INFINITY, f64::NEG_INFINITY);
        for &p in frame {
            let rel = geometry::sub(p, camera);
            let au = atan2(geometry::dot(rel, u), geometry::dot(rel, w));
            let av = atan2(geometry::dot(rel, v), geometry::dot(rel, w));
            lo_u = lo_u.min(au);
            hi_u = hi_u.max(au);
            lo_v = lo_v.min(av);
            hi_v = hi_v.max(av);
            coords.push((au, av));
            depths.push(geometry::norm(rel));
        }
        let span_u = (hi_u - lo_u).max(1e-12);
        let span_v = (hi_v - lo_v).max(1e-12);
        let bins = occlusion_bins(frame.len());
        let bin_of = |au: f64, av: f64| {
            let bu = (((au - lo_u) / span_u) * bins as f64) as usize;
            let bv = (((av - lo_v) / span_v) * bins as f64) as usize;
            bu.min(bins - 1) * bins + bv.min(bins - 1)
        };
        let mut bin_min = vec![f64::INFINITY; bins * bins];
        for (i, &(au, av)) in coords.iter().enumerate() {
            let b = bin_of(au, av);
            bin_min[b] = bin_min[b].min(depths[i]);
        }
        let slack = OCCLUSION_DEPTH_SLACK * diag;
        let mut new_frame = Vec::new();
        let mut new_labels = Vec::new();
        for (i, &(au, av)) in coords.iter().enumerate() {
            if depths[i] <= bin_min[bin_of(au, av)] + slack {
                new_frame.push(frame[i]);
                new_labels.push(gt.labels[f][i]);
            }
        }
        frames.push(new_frame);
        labels.push(new_labels);
    }
    Ok(Dataset {
        frames,
        gt: Some(GroundTruth {
            labels,
            ..gt.clone()
        }),
    })
}

/// Ground-truth scene flow: a query anchored at step t inherits the motion
/// of the part owning its nearest observed point in frame t.
pub struct GroundTruthFlow {
    labels: Vec<Vec<usize>>,
    poses: Vec<Vec<RigidTransform>>,
}

impl GroundTruthFlow {
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let gt = ds.require_gt()?;
        Ok(GroundTruthFlow {
            labels: gt.labels.clone(),
            poses: gt.poses.clone(),
        })
    }
}

impl FlowOracle for GroundTruthFlow {
    fn flow(&self, frames: &[Vec<Vec3>], t: usize, queries: &[Vec3]) -> Result<Vec<Vec3>> {
        if t + 1 >= self.labels.len() || t >= frames.len() {
            return Err(Error::IndexOutOfRange {
                index: t + 1,
                len: self.labels.len(),
            });
        }
        let frame = &frames[t];
        if frame.is_empty() {
            return Ok(vec![[0.0; 3]; queries.len()]);
        }
        let motions: Vec<RigidTransform> = self
            .poses
            .iter()
            .map(|track| geometry::relative_motion(&track[t + 1], &track[t]))
            .collect();
        let nn = NearestNeighbors::build(frame);
        queries
            .iter()
            .map(|&q| {
                let (idx, _) = nn.nearest(q);
                let label = self.labels[t][idx];
                let motion = motions.get(label).ok_or(Error::UnknownLabel { label })?;
                Ok(geometry::sub(motion.apply(q), q))
            })
            .collect()
    }
}

/// Built-in scene presets: revolute chains, a prismatic slider, a star, and
/// a cylinder spinning about its own axis (the degenerate stress case).
pub fn preset(
    name: &str,
    frames: usize,
    points_per_frame: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<SceneSpec> {
    let ramp = |rate: f64| -> Vec<f64> { (0..frames).map(|u| rate * u as f64).collect() };
    let base = SceneSpec {
        parts: Vec::new(),
        joints: Vec::new(),
        trajectory: Vec::new(),
        frames,
        points_per_frame,
        noise_sigma,
        seed,
        holdout: Vec::new(),
    };
    let spec = match name {
        "chain2" => SceneSpec {
            parts: vec![
                PartSpec {
                    shape: Shape::Box {
                        half_extents: [0.5, 0.15, 0.1],
                    },
                    center: [0.5, 0.0, 0.0],
                },
                PartSpec {
                    shape: Shape::Box {
                        half_extents: [0.5, 0.15, 0.1],
                    },
                    center: [1.5, 0.0, 0.0],
                },
            ],
            joints: vec![JointSpec {
                parent: 0,
                child: 1,
                kind: ScrewKind::Revolute,
                axis: [0.0, 0.0, 1.0],
                origin: [1.0, 0.0, 0.0],
            }],
            trajectory: vec![ramp(0.12)],
            ..base
        },
        "chain3" => SceneSpec {
            parts: vec![
                PartSpec {
                    shape: Shape::Box {
                        half_extents: [0.5, 0.15, 0.1],
                    },
                    center: [0.5, 0.0, 0.0],
                },
                PartSpec {
                    shape: Shape::Box {
                        half_extents: [0.5, 0.15, 0.1],
                    },
                    center: [1.5, 0.0, 0.0],
                },
                PartSpec {
                    shape: Shape::Box {
                        half_extents: [0.5, 0.15, 0.1],
                    },
                    center: [2.5, 0.0, 0.0],
                },
            ],
            joints: vec![
                JointSpec {
                    parent: 0,
                    child: 1,
                    kind: ScrewKind::Revolute,
                    axis: [0.0, 0.0, 1.0],
                    origin: [1.0, 0.0, 0.0],
                },
                JointSpec {
                    parent: 1,
                    child: 2,
                    kind: ScrewKind::Revolute,
                    axis: [0.0, 0.0, 1.0],
                    origin: [2.0, 0.0, 0.0],
                },
            ],
            trajectory: vec![ramp(0.12), ramp(-0.1)],
            ..base
        },
        "prism2" => SceneSpec {
            parts: vec![
                PartSpec {
                    shape: Shape::Box {
                        half_extents: [0.5, 0.2, 0.15],
                    },
                    center: [0.5, 0.0, 0.0],
                },
                PartSpec {
                    shape: Shape::Box {
                        half_extents: [0.5, 0.15, 0.1],
                    },
                    center: [1.5, 0.0, 0.0],
                },
            ],
            joints: vec![JointSpec {
                parent: 0,
                child: 1,
                kind: ScrewKind::Prismatic,
                axis: [1.0, 0.0, 0.0],
                origin: [0.0, 0.0, 0.0],
            }],
            trajectory: vec![ramp(0.12)],
            ..base
        },
        "star4" => SceneSpec {
            parts: vec![
                PartSpec {
                    shape: Shape::Box {
                        half_extents: [0.3, 0.3, 0.3],
                    },
                    center: [0.0, 0.0, 0.0],
                },
                PartSpec {
                    shape: Shape::Box {
                        half_extents: [0.45, 0.12, 0.12],
                    },
                    center: [0.75, 0.0, 0.0],
                },
                PartSpec {
                    shape: Shape::Box {
                        half_extents: [0.12, 0.45, 0.12],
                    },
                    center: [0.0, 0.75, 0.0],
                },
                PartSpec {
                    shape: Shape::Box {
                        half_extents: [0.12, 0.12, 0.45],
                    },
                    center: [0.0, 0.0, 0.75],
                },
            ],
            joints: vec![
                JointSpec {
                    parent: 0,
                    child: 1,
                    kind: ScrewKind::Revolute,
                    axis: [0.0, 1.0, 0.0],
                    origin: [0.3, 0.0, 0.0],
                },
                JointSpec {
                    parent: 0,
                    child: 2,
                    kind: ScrewKind::Revolute,
                    axis: [0.0, 0.0, 1.0],
                    origin: [0.0, 0.3, 0.0],
                },
                JointSpec {
                    parent: 0,
                    child: 3,
                    kind: ScrewKind::Revolute,
                    axis: [1.0, 0.0, 0.0],
                    origin: [0.0, 0.0, 0.3],
                },
            ],
            trajectory: vec![ramp(0.2), ramp(-0.15), ramp(0.25)],
            ..base
        },
        "cyl-axis" => SceneSpec {
            parts: vec![
                PartSpec {
                    shape: Shape::Box {
                        half_extents: [0.4, 0.4, 0.1],
                    },
                    center: [0.0, 0.0, 0.0],
                },
                PartSpec {
                    shape: Shape::Cylinder {
                        radius: 0.25,
                        half_height: 0.5,
                    },
                    center: [0.0, 0.0, 0.6],
                },
            ],
            joints: vec![JointSpec {
                parent: 0,
                child: 1,
                kind: ScrewKind::Revolute,
                axis: [0.0, 0.0, 1.0],
                origin: [0.0, 0.0, 0.0],
            }],
            trajectory: vec![ramp(0.3)],
            ..base
        },
        other => {
            return Err(Error::InvalidInput(format!("unknown preset '{other}'")));
        }
    };
    Ok(spec)
}

pub const PRESET_NAMES: &[&str] = &["chain2", "chain3", "prism2", "star4", "cyl-axis"];

#[cfg(test)]
mod tests {
    use super::*;

    fn chain3(frames: usize, points: usize, noise: f64, seed: u64) -> Dataset {
        generate(&preset("chain3", frames, points, noise, seed).unwrap()).unwrap()
    }

    #[test]
    fn single_box_all_points_on_surface() {
        let spec = SceneSpec {
            parts: vec![PartSpec {
                shape: Shape::Box {
                    half_extents: [0.5, 0.3, 0.2],
                },
                center: [1.0, 0.0, 0.0],
            }],
            joints: vec![],
            trajectory: vec![],
            frames: 1,
            points_per_frame: 200,
            noise_sigma: 0.0,
            seed: 5,
            holdout: vec![],
        };
        let ds = generate(&spec).unwrap();
        assert_eq!(ds.frames[0].len(), 200);
        let gt = ds.gt.unwrap();
        assert!(gt.labels[0].iter().all(|&l| l == 0));
        for p in &ds.frames[0] {
            let local = geometry::sub(*p, [1.0, 0.0, 0.0]);
            let on_face = (local[0].abs() - 0.5).abs() < 1e-12
                || (local[1].abs() - 0.3).abs() < 1e-12
                || (local[2].abs() - 0.2).abs() < 1e-12;
            assert!(on_face, "{local:?}");
            assert!(local[0].abs() <= 0.5 + 1e-12);
            assert!(local[1].abs() <= 0.3 + 1e-12);
            assert!(local[2].abs() <= 0.2 + 1e-12);
        }
    }

    #[test]
    fn frames_are_independent_resamplings() {
        let ds = chain3(4, 256, 0.0, 9);
        for t in 1..4 {
            let shared = ds.frames[0]
                .iter()
                .filter(|p| ds.frames[t].contains(p))
                .count();
            assert_eq!(shared, 0, "frames 0 and {t} share points");
        }
    }

    #[test]
    fn generator_is_deterministic() {
        let a = chain3(3, 128, 0.01, 77);
        let b = chain3(3, 128, 0.01, 77);
        assert_eq!(a, b);
    }

    #[test]
    fn hinge_relative_motion_matches_spec() {
        let spec = preset("chain2", 5, 64, 0.0, 1).unwrap();
        let ds = generate(&spec).unwrap();
        let gt = ds.gt.unwrap();
        let expected = rotation_about_line([0.0, 0.0, 1.0], [1.0, 0.0, 0.0], 0.22);
        for k in 0..4 {
            let parent_motion =
                geometry::relative_motion(&gt.poses[0][k + 1], &gt.poses[0][k]);
            let child_motion = geometry::relative_motion(&gt.poses[1][k + 1], &gt.poses[1][k]);
            let relative = parent_motion.inverse().compose(&child_motion);
            let diff = relative.compose(&expected.inverse()).deviation_from_identity_sq();
            assert!(diff < 1e-24, "step {k}: {diff}");
        }
    }

    #[test]
    fn holdout_states_are_unseen() {
        let spec = preset("chain3", 6, 64, 0.0, 2).unwrap();
        let ds = generate(&spec).unwrap();
        let gt = ds.gt.unwrap();
        assert_eq!(gt.holdout.len(), 2);
        for held in &gt.holdout {
            for (j, &s) in held.states.iter().enumerate() {
                assert!(gt.trajectory[j].iter().all(|&o| (o - s).abs() > 1e-9));
            }
            assert_eq!(held.points.len(), held.labels.len());
        }
    }

    #[test]
    fn partial_keeps_fraction_and_coordinates() {
        let ds = chain3(6, 512, 0.0, 3);
        let partial = make_partial(&ds, 11).unwrap();
        let gt = ds.gt.as_ref().unwrap();
        let pgt = partial.gt.as_ref().unwrap();
        for f in 0..6 {
            assert!(partial.frames[f].len() <= ds.frames[f].len());
            // Survivors keep coordinates and labels.
            for (p, &l) in partial.frames[f].iter().zip(&pgt.labels[f]) {
                let idx = ds.frames[f]
                    .iter()
                    .position(|q| q == p)
                    .expect("survivor came from the original frame");
                assert_eq!(gt.labels[f][idx], l);
            }
            // Every part keeps at least 20% of its points.
            for part in 0..3 {
                let before = gt.labels[f].iter().filter(|&&l| l == part).count();
                let after = pgt.labels[f].iter().filter(|&&l| l == part).count();
                assert!(
                    after * 5 >= before,
                    "frame {f} part {part}: {after}/{before}"
                );
            }
        }
        assert_eq!(make_partial(&ds, 11).unwrap(), partial);
    }

    #[test]
    fn partial_union_covers_surface() {
        let ds = chain3(8, 512, 0.0, 4);
        let partial = make_partial(&ds, 29).unwrap();
        // Coarse voxel occupancy of the canonical-frame union.
        let gt = ds.gt.as_ref().unwrap();
        let voxelize = |ds: &Dataset, labels: &[Vec<usize>]| {
            let mut cells = alloc::collections::BTreeSet::new();
            for f in 0..ds.frames.len() {
                for (p, &l) in ds.frames[f].iter().zip(&labels[f]) {
                    let back =
                        geometry::relative_motion(&gt.poses[l][0], &gt.poses[l][f]).apply(*p);
                    let cell = (
                        crate::float::floor(back[0] * 8.0) as i64,
                        crate::float::floor(back[1] * 8.0) as i64,
                        crate::float::floor(back[2] * 8.0) as i64,
                    );
                    cells.insert(cell);
                }
            }
            cells
        };
        let full = voxelize(&ds, &gt.labels);
        let part = voxelize(&partial, &partial.gt.as_ref().unwrap().labels);
        let covered = full.iter().filter(|c| part.contains(*c)).count();
        assert!(
            covered as f64 >= 0.95 * full.len() as f64,
            "{covered}/{}",
            full.len()
        );
    }

    #[test]
    fn occluded_sphere_keeps_facing_hemisphere() {
        let spec = SceneSpec {
            parts: vec![PartSpec {
                shape: Shape::Sphere { radius: 1.0 },
                center: [0.0, 0.0, 0.0],
            }],
            joints: vec![],
            trajectory: vec![],
            frames: 1,
            points_per_frame: 2000,
            noise_sigma: 0.0,
            seed: 6,
            holdout: vec![],
        };
        let ds = generate(&spec).unwrap();
        let occluded = make_occluded(&ds, 15).unwrap();
        assert!(occluded.frames[0].len() < ds.frames[0].len());
        assert!(!occluded.frames[0].is_empty());

        // Recover the camera used for frame 0.
        let mut rng = Rng::new(mix_seed(15, 0));
        let (center, diag) = frame_bbox_diag(&ds.frames[0]);
        let camera = geometry::add(center, geometry::scale(rng.unit_vector(), 3.0 * diag));
        let view = normalize(geometry::sub(center, camera)).unwrap();
        // Survivors sit overwhelmingly on the camera-facing hemisphere.
        let back_half = occluded.frames[0]
            .iter()
            .filter(|p| geometry::dot(**p, view) > 0.25)
            .count();
        assert!(
            (back_half as f64) < 0.05 * occluded.frames[0].len() as f64,
            "{back_half} far-side survivors of {}",
            occluded.frames[0].len()
        );
        // And they cover the facing cap: every facing point keeps a survivor
        // within a couple of bin footprints.
        let survivors = NearestNeighbors::build(&occluded.frames[0]);
        for p in ds.frames[0]
            .iter()
            .filter(|p| geometry::dot(**p, view) < -0.25)
        {
            let (_, d) = survivors.nearest(*p);
            assert!(d < 0.5 * 0.5, "uncovered facing point {p:?} (d^2 = {d})");
        }
    }

    #[test]
    fn occluded_never_adds_points() {
        let ds = chain3(5, 300, 0.002, 21);
        let occluded = make_occluded(&ds, 99).unwrap();
        for f in 0..5 {
            assert!(occluded.frames[f].len() <= ds.frames[f].len());
            for p in &occluded.frames[f] {
                assert!(ds.frames[f].contains(p));
            }
        }
    }

    #[test]
    fn variants_require_ground_truth() {
        let ds = Dataset {
            frames: vec![vec![[0.0; 3]]],
            gt: None,
        };
        assert_eq!(make_partial(&ds, 0), Err(Error::MissingGroundTruth));
        assert_eq!(make_occluded(&ds, 0), Err(Error::MissingGroundTruth));
    }

    #[test]
    fn ground_truth_flow_is_exact_on_separated_parts() {
        // Two separated parts so nearest-neighbor labeling is unambiguous.
        let spec = SceneSpec {
            parts: vec![
                PartSpec {
                    shape: Shape::Box {
                        half_extents: [0.3, 0.3, 0.3],
                    },
                    center: [0.0, 0.0, 0.0],
                },
                PartSpec {
                    shape: Shape::Box {
                        half_extents: [0.3, 0.3, 0.3],
                    },
                    center: [3.0, 0.0, 0.0],
                },
            ],
            joints: vec![JointSpec {
                parent: 0,
                child: 1,
                kind: ScrewKind::Prismatic,
                axis: [0.0, 1.0, 0.0],
                origin: [0.0, 0.0, 0.0],
            }],
            trajectory: vec![vec![0.0, 0.4, 0.8]],
            frames: 3,
            points_per_frame: 128,
            noise_sigma: 0.0,
            seed: 8,
            holdout: vec![],
        };
        let ds = generate(&spec).unwrap();
        let oracle = GroundTruthFlow::from_dataset(&ds).unwrap();
        let gt = ds.gt.as_ref().unwrap();
        // Queries exactly at frame-0 points of part 1 should report (0,0.4,0).
        let queries: Vec<Vec3> = ds.frames[0]
            .iter()
            .zip(&gt.labels[0])
            .filter(|(_, &l)| l == 1)
            .map(|(&p, _)| p)
            .collect();
        let flows = oracle.flow(&ds.frames, 0, &queries).unwrap();
        for f in flows {
            assert!(geometry::norm(geometry::sub(f, [0.0, 0.4, 0.0])) < 1e-12);
        }
    }

    #[test]
    fn preset_names_all_valid() {
        for name in PRESET_NAMES {
            let spec = preset(name, 4, 64, 0.0, 0).unwrap();
            generate(&spec).unwrap();
        }
        assert!(preset("nonsense", 4, 64, 0.0, 0).is_err());
    }
}
