//! The five training losses (likelihood, separation, Chamfer, earth-mover,
//! flow), their partial-data variants, and their gradients with respect to
//! every Gaussian parameter.
//!
//! Gradients are produced by reverse accumulation through the fixed
//! computation graph of each term: Gram-Schmidt for the rotations, the
//! whitened-coordinate Mahalanobis form, the Gumbel-Softmax assignment, and
//! the cross-time rigid transport. Matchings (nearest neighbors, optimal
//! assignments) are held fixed in the backward pass.

use alloc::vec;
use alloc::vec::Vec;

use crate::assignment::{solve, CostMatrix};
use crate::diff::{rot6d_backward, rot6d_forward, Rot6dCache};
use crate::error::{Error, Result};
use crate::float::{exp, ln};
use crate::gaussian::{softmax, GaussianSet};
use crate::geometry::{self, dist_sq, mat_tvec, mat_vec, Mat3, Vec3};
use crate::nn::NearestNeighbors;
use crate::rng::Rng;

/// Term weights of the total loss plus the separation sharpness.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_mle: f64,
    pub lambda_sep: f64,
    pub lambda_cd: f64,
    pub lambda_emd: f64,
    pub lambda_flow: f64,
    pub alpha_sep: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_mle: 1.0,
            lambda_sep: 1.0,
            lambda_cd: 1.0,
            lambda_emd: 0.3,
            lambda_flow: 1.0,
            alpha_sep: 0.5,
        }
    }
}

/// Gradient with respect to every [`GaussianSet`] parameter, in the same
/// shapes as the set itself.
#[derive(Clone, Debug)]
pub struct ParamGrad {
    pub rot: Vec<Vec<[f64; 6]>>,
    pub centers: Vec<Vec<Vec3>>,
    pub log_scales: Vec<Vec3>,
}

impl ParamGrad {
    pub fn zeros(parts: usize, steps: usize) -> Self {
        ParamGrad {
            rot: vec![vec![[0.0; 6]; steps]; parts],
            centers: vec![vec![[0.0; 3]; steps]; parts],
            log_scales: vec![[0.0; 3]; parts],
        }
    }

    /// Flat layout matching [`GaussianSet::flatten`]: per part, per step the
    /// 6D rotation then the center, then the log-scales.
    pub fn to_flat(&self) -> Vec<f64> {
        let steps = self.rot.first().map_or(0, Vec::len);
        let mut out = Vec::with_capacity(self.rot.len() * (steps * 9 + 3));
        for i in 0..self.rot.len() {
            for u in 0..steps {
                out.extend_from_slice(&self.rot[i][u]);
                out.extend_from_slice(&self.centers[i][u]);
            }
            out.extend_from_slice(&self.log_scales[i]);
        }
        out
    }

    pub fn add_scaled(&mut self, other: &ParamGrad, w: f64) {
        for i in 0..self.rot.len() {
            for u in 0..self.rot[i].len() {
                for j in 0..6 {
                    self.rot[i][u][j] += w * other.rot[i][u][j];
                }
                for j in 0..3 {
                    self.centers[i][u][j] += w * other.centers[i][u][j];
                }
            }
            for j in 0..3 {
                self.log_scales[i][j] += w * other.log_scales[i][j];
            }
        }
    }
}

/// Values (and the gradient) of the five loss terms plus their weighted sum.
#[derive(Clone, Debug)]
pub struct LossBreakdown {
    pub mle: f64,
    pub sep: f64,
    pub cd: f64,
    pub emd: f64,
    pub flow: f64,
    pub total: f64,
    pub gradient: Vec<f64>,
}

/// Scene-flow estimates for query points anchored at step t: the motion each
/// query undergoes from frame t to frame t+1.
pub trait FlowOracle {
    fn flow(&self, frames: &[Vec<Vec3>], t: usize, queries: &[Vec3]) -> Result<Vec<Vec3>>;
}

/// Always-zero flow; pair it with lambda_flow = 0.
pub struct ZeroFlow;

impl FlowOracle for ZeroFlow {
    fn flow(&self, _frames: &[Vec<Vec3>], _t: usize, queries: &[Vec3]) -> Result<Vec<Vec3>> {
        Ok(vec![[0.0; 3]; queries.len()])
    }
}

/// Flow toward the nearest point of the next frame.
pub struct NearestNeighborFlow;

impl FlowOracle for NearestNeighborFlow {
    fn flow(&self, frames: &[Vec<Vec3>], t: usize, queries: &[Vec3]) -> Result<Vec<Vec3>> {
        let next = frames.get(t + 1).ok_or(Error::IndexOutOfRange {
            index: t + 1,
            len: frames.len(),
        })?;
        let nn = NearestNeighbors::build(next);
        Ok(queries
            .iter()
            .map(|&q| geometry::sub(next[nn.nearest(q).0], q))
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitMode {
    Full,
    Partial,
}

/// How the point-to-part assignment entering a loss is produced.
///
/// `Hard` fixes the labels; gradients then flow only through the part poses.
/// `Soft` recomputes the Gumbel-Softmax weights from the current parameters,
/// so gradients also flow through the assignment.
#[derive(Clone, Copy)]
pub enum AssignmentSpec<'a> {
    Hard(&'a [usize]),
    Soft {
        temperature: f64,
        noise: Option<&'a [f64]>,
    },
}

/// Per-frame assignment specs for the partial-data losses.
#[derive(Clone, Copy)]
pub enum SeqAssignment<'a> {
    Hard(&'a [Vec<usize>]),
    Soft {
        temperature: f64,
        noise: Option<&'a [Vec<f64>]>,
    },
}

#[derive(Clone, Debug)]
pub struct LossOptions {
    pub temperature: f64,
    pub use_noise: bool,
    pub emd_subsample: usize,
    /// Cap on the number of targets per Chamfer/EMD evaluation; None sums
    /// over every other step.
    pub target_subset: Option<usize>,
    /// Evaluate the flow term only on the transition adjacent to the anchor
    /// frame (the per-iteration setting) instead of every transition.
    pub flow_anchor_only: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions {
            temperature: 1.0,
            use_noise: false,
            emd_subsample: 256,
            target_subset: None,
            flow_anchor_only: false,
        }
    }
}

// --- forward caches and adjoint accumulators ---

pub(crate) struct GaussCaches {
    rot: Vec<Vec<Rot6dCache>>, // [part][step]
    inv_s2: Vec<Vec3>,
}

pub(crate) fn build_caches(set: &GaussianSet) -> Result<GaussCaches> {
    let mut rot = Vec::with_capacity(set.num_parts());
    for part in &set.parts {
        let mut steps = Vec::with_capacity(set.num_timesteps);
        for r6 in &part.rotations {
            steps.push(rot6d_forward(r6)?);
        }
        rot.push(steps);
    }
    let inv_s2 = set
        .parts
        .iter()
        .map(|p| {
            let s = p.scales();
            [1.0 / (s[0] * s[0]), 1.0 / (s[1] * s[1]), 1.0 / (s[2] * s[2])]
        })
        .collect();
    Ok(GaussCaches { rot, inv_s2 })
}

pub(crate) struct Adjoints {
    r_bar: Vec<Vec<Mat3>>,
    c_bar: Vec<Vec<Vec3>>,
    ls_bar: Vec<Vec3>,
}

impl Adjoints {
    fn zeros(parts: usize, steps: usize) -> Self {
        Adjoints {
            r_bar: vec![vec![[[0.0; 3]; 3]; steps]; parts],
            c_bar: vec![vec![[0.0; 3]; steps]; parts],
            ls_bar: vec![[0.0; 3]; parts],
        }
    }

    fn into_grad(self, caches: &GaussCaches) -> ParamGrad {
        let parts = self.r_bar.len();
        let steps = self.r_bar.first().map_or(0, Vec::len);
        let mut grad = ParamGrad::zeros(parts, steps);
        for i in 0..parts {
            for u in 0..steps {
                let (a_bar, b_bar) = rot6d_backward(&caches.rot[i][u], &self.r_bar[i][u]);
                grad.rot[i][u] = [a_bar[0], a_bar[1], a_bar[2], b_bar[0], b_bar[1], b_bar[2]];
                grad.centers[i][u] = self.c_bar[i][u];
            }
            grad.log_scales[i] = self.ls_bar[i];
        }
        grad
    }
}

/// Adds the Mahalanobis backward pass for distance M(x, G_i at step k) given
/// dL/dM; returns dL/dx for callers whose query point is itself a parameter.
fn mahalanobis_backward(
    caches: &GaussCaches,
    adj: &mut Adjoints,
    part: usize,
    step: usize,
    diff: Vec3,
    zloc: Vec3,
    m_bar: f64,
) -> Vec3 {
    let inv_s2 = caches.inv_s2[part];
    let common = [
        2.0 * m_bar * zloc[0] * inv_s2[0],
        2.0 * m_bar * zloc[1] * inv_s2[1],
        2.0 * m_bar * zloc[2] * inv_s2[2],
    ];
    let r = &caches.rot[part][step].r;
    let d_bar = mat_vec(r, common);
    let c = &mut adj.c_bar[part][step];
    for j in 0..3 {
        c[j] -= d_bar[j];
    }
    let rb = &mut adj.r_bar[part][step];
    for row in 0..3 {
        for col in 0..3 {
            rb[row][col] += diff[row] * common[col];
        }
    }
    let ls = &mut adj.ls_bar[part];
    for j in 0..3 {
        ls[j] += m_bar * (-2.0) * zloc[j] * zloc[j] * inv_s2[j];
    }
    d_bar
}

// --- anchored transform context (the H_{k -> t} machinery) ---

enum AnchorKind {
    Soft {
        weights: Vec<f64>,  // n*m
        w_bar: Vec<f64>,    // n*m
        temperature: f64,
    },
    Hard {
        labels: Vec<usize>,
    },
}

struct AnchorCtx {
    k: usize,
    points: Vec<Vec3>,
    kind: AnchorKind,
    // Per (point, part) for soft, per point (its label) for hard:
    diff: Vec<Vec3>,
    zloc: Vec<Vec3>,
    zloc_bar: Vec<Vec3>,
    m_parts: usize,
}

impl AnchorCtx {
    fn soft(
        set: &GaussianSet,
        caches: &GaussCaches,
        frame: &[Vec3],
        k: usize,
        temperature: f64,
        noise: Option<&[f64]>,
    ) -> Result<Self> {
        let m = set.num_parts();
        let n = frame.len();
        if let Some(ns) = noise {
            if ns.len() != n * m {
                return Err(Error::LengthMismatch {
                    left: ns.len(),
                    right: n * m,
                });
            }
        }
        let mut diff = Vec::with_capacity(n * m);
        let mut zloc = Vec::with_capacity(n * m);
        let mut weights = Vec::with_capacity(n * m);
        let mut logits = vec![0.0; m];
        for (idx, &x) in frame.iter().enumerate() {
            for i in 0..m {
                let d = geometry::sub(x, set.parts[i].centers[k]);
                let z = mat_tvec(&caches.rot[i][k].r, d);
                let inv_s2 = caches.inv_s2[i];
                let mahal =
                    z[0] * z[0] * inv_s2[0] + z[1] * z[1] * inv_s2[1] + z[2] * z[2] * inv_s2[2];
                let g = noise.map_or(0.0, |ns| ns[idx * m + i]);
                logits[i] = (-mahal + g) / temperature;
                diff.push(d);
                zloc.push(z);
            }
            weights.extend(softmax(&logits));
        }
        Ok(AnchorCtx {
            k,
            points: frame.to_vec(),
            kind: AnchorKind::Soft {
                weights,
                w_bar: vec![0.0; n * m],
                temperature,
            },
            diff,
            zloc,
            zloc_bar: vec![[0.0; 3]; n * m],
            m_parts: m,
        })
    }

    fn hard(
        set: &GaussianSet,
        caches: &GaussCaches,
        frame: &[Vec3],
        k: usize,
        labels: &[usize],
    ) -> Result<Self> {
        if labels.len() != frame.len() {
            return Err(Error::LengthMismatch {
                left: labels.len(),
                right: frame.len(),
            });
        }
        let m = set.num_parts();
        let mut diff = Vec::with_capacity(frame.len());
        let mut zloc = Vec::with_capacity(frame.len());
        for (&x, &l) in frame.iter().zip(labels) {
            if l >= m {
                return Err(Error::UnknownLabel { label: l });
            }
            let d = geometry::sub(x, set.parts[l].centers[k]);
            diff.push(d);
            zloc.push(mat_tvec(&caches.rot[l][k].r, d));
        }
        Ok(AnchorCtx {
            k,
            points: frame.to_vec(),
            kind: AnchorKind::Hard {
                labels: labels.to_vec(),
            },
            diff,
            zloc,
            zloc_bar: vec![[0.0; 3]; frame.len()],
            m_parts: m,
        })
    }

    fn from_spec(
        set: &GaussianSet,
        caches: &GaussCaches,
        frame: &[Vec3],
        k: usize,
        spec: AssignmentSpec<'_>,
    ) -> Result<Self> {
        match spec {
            AssignmentSpec::Hard(labels) => Self::hard(set, caches, frame, k, labels),
            AssignmentSpec::Soft { temperature, noise } => {
                Self::soft(set, caches, frame, k, temperature, noise)
            }
        }
    }

    /// H_{k -> t}: the anchor frame carried to step t.
    fn transform(&self, set: &GaussianSet, caches: &GaussCaches, t: usize) -> Vec<Vec3> {
        let m = self.m_parts;
        match &self.kind {
            AnchorKind::Hard { labels } => self
                .points
                .iter()
                .enumerate()
                .map(|(n, _)| {
                    let l = labels[n];
                    geometry::add(
                        mat_vec(&caches.rot[l][t].r, self.zloc[n]),
                        set.parts[l].centers[t],
                    )
                })
                .collect(),
            AnchorKind::Soft { weights, .. } => (0..self.points.len())
                .map(|n| {
                    let mut y = [0.0; 3];
                    for i in 0..m {
                        let yi = geometry::add(
                            mat_vec(&caches.rot[i][t].r, self.zloc[n * m + i]),
                            set.parts[i].centers[t],
                        );
                        let w = weights[n * m + i];
                        y[0] += w * yi[0];
                        y[1] += w * yi[1];
                        y[2] += w * yi[2];
                    }
                    y
                })
                .collect(),
        }
    }

    /// Accumulates dL/dh for points transformed to step t. Target-step pose
    /// adjoints land in `adj` immediately; anchor-side contributions are
    /// buffered until [`finalize`].
    fn backprop(
        &mut self,
        set: &GaussianSet,
        caches: &GaussCaches,
        t: usize,
        h_bar: &[Vec3],
        adj: &mut Adjoints,
    ) {
        let m = self.m_parts;
        match &mut self.kind {
            AnchorKind::Hard { labels } => {
                for (n, &g) in h_bar.iter().enumerate() {
                    if g == [0.0; 3] {
                        continue;
                    }
                    let l = labels[n];
                    let z = self.zloc[n];
                    for row in 0..3 {
                        for col in 0..3 {
                            adj.r_bar[l][t][row][col] += g[row] * z[col];
                        }
                    }
                    for j in 0..3 {
                        adj.c_bar[l][t][j] += g[j];
                    }
                    let zb = mat_tvec(&caches.rot[l][t].r, g);
                    for j in 0..3 {
                        self.zloc_bar[n][j] += zb[j];
                    }
                }
            }
            AnchorKind::Soft {
                weights, w_bar, ..
            } => {
                for (n, &g) in h_bar.iter().enumerate() {
                    if g == [0.0; 3] {
                        continue;
                    }
                    for i in 0..m {
                        let idx = n * m + i;
                        let z = self.zloc[idx];
                        let yi = geometry::add(
                            mat_vec(&caches.rot[i][t].r, z),
                            set.parts[i].centers[t],
                        );
                        let w = weights[idx];
                        let y_bar = geometry::scale(g, w);
                        for row in 0..3 {
                            for col in 0..3 {
                                adj.r_bar[i][t][row][col] += y_bar[row] * z[col];
                            }
                        }
                        for j in 0..3 {
                            adj.c_bar[i][t][j] += y_bar[j];
                        }
                        let zb = mat_tvec(&caches.rot[i][t].r, y_bar);
                        for j in 0..3 {
                            self.zloc_bar[idx][j] += zb[j];
                        }
                        w_bar[idx] += geometry::dot(g, yi);
                    }
                }
            }
        }
    }

    /// Flushes anchor-side adjoints: the inverse transform at step k and,
    /// for soft assignments, the softmax and Mahalanobis backward passes.
    fn finalize(self, caches: &GaussCaches, adj: &mut Adjoints) {
        let m = self.m_parts;
        let k = self.k;
        match self.kind {
            AnchorKind::Hard { labels } => {
                for (n, zb) in self.zloc_bar.iter().enumerate() {
                    if *zb == [0.0; 3] {
                        continue;
                    }
                    let l = labels[n];
                    let d = self.diff[n];
                    for row in 0..3 {
                        for col in 0..3 {
                            adj.r_bar[l][k][row][col] += d[row] * zb[col];
                        }
                    }
                    let d_bar = mat_vec(&caches.rot[l][k].r, *zb);
                    for j in 0..3 {
                        adj.c_bar[l][k][j] -= d_bar[j];
                    }
                }
            }
            AnchorKind::Soft {
                weights,
                w_bar,
                temperature,
            } => {
                for n in 0..self.points.len() {
                    let row = &weights[n * m..(n + 1) * m];
                    let row_bar = &w_bar[n * m..(n + 1) * m];
                    let dot: f64 = row.iter().zip(row_bar).map(|(w, wb)| w * wb).sum();
                    for i in 0..m {
                        let idx = n * m + i;
                        // softmax backward, then through u = (-M + g)/tau
                        let u_bar = row[i] * (row_bar[i] - dot);
                        let m_bar = -u_bar / temperature;
                        if m_bar != 0.0 {
                            mahalanobis_backward(
                                caches,
                                adj,
                                i,
                                k,
                                self.diff[idx],
                                self.zloc[idx],
                                m_bar,
                            );
                        }
                        let zb = self.zloc_bar[idx];
                        if zb == [0.0; 3] {
                            continue;
                        }
                        let d = self.diff[idx];
                        for r in 0..3 {
                            for c in 0..3 {
                                adj.r_bar[i][k][r][c] += d[r] * zb[c];
                            }
                        }
                        let d_bar = mat_vec(&caches.rot[i][k].r, zb);
                        for j in 0..3 {
                            adj.c_bar[i][k][j] -= d_bar[j];
                        }
                    }
                }
            }
        }
    }
}

// --- individual loss terms ---

fn mle_term(
    set: &GaussianSet,
    caches: &GaussCaches,
    points: &[Vec3],
    step: usize,
    adj: &mut Adjoints,
    weight: f64,
) -> f64 {
    let m = set.num_parts();
    let half_log_2pi_cubed = 1.5 * ln(2.0 * core::f64::consts::PI);
    let log_norm: Vec<f64> = (0..m)
        .map(|i| {
            let p = &set.parts[i];
            -half_log_2pi_cubed - (p.log_scales[0] + p.log_scales[1] + p.log_scales[2])
        })
        .collect();

    let mut value = 0.0;
    let mut logits = vec![0.0; m];
    let mut diffs = vec![[0.0; 3]; m];
    let mut zlocs = vec![[0.0; 3]; m];
    for &x in points {
        for i in 0..m {
            let d = geometry::sub(x, set.parts[i].centers[step]);
            let z = mat_tvec(&caches.rot[i][step].r, d);
            let inv_s2 = caches.inv_s2[i];
            let mahal =
                z[0] * z[0] * inv_s2[0] + z[1] * z[1] * inv_s2[1] + z[2] * z[2] * inv_s2[2];
            logits[i] = log_norm[i] - 0.5 * mahal;
            diffs[i] = d;
            zlocs[i] = z;
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = logits.iter().map(|&l| exp(l - max)).sum();
        value -= max + ln(sum_exp);
        // dL/dlogit_i = -softmax(logits)_i
        for i in 0..m {
            let q = exp(logits[i] - max) / sum_exp;
            let e_bar = -weight * q;
            for j in 0..3 {
                adj.ls_bar[i][j] += -e_bar; // d logit / d ls_j = -1
            }
            mahalanobis_backward(caches, adj, i, step, diffs[i], zlocs[i], -0.5 * e_bar);
        }
    }
    value
}

fn sep_term(
    set: &GaussianSet,
    caches: &GaussCaches,
    step: usize,
    alpha: f64,
    adj: &mut Adjoints,
    weight: f64,
) -> f64 {
    let m = set.num_parts();
    if m < 2 {
        return 0.0;
    }
    let mut value = 0.0;
    for i in 0..m {
        let mut best_j = usize::MAX;
        let mut best = f64::INFINITY;
        let mut best_diff = [0.0; 3];
        let mut best_zloc = [0.0; 3];
        for j in 0..m {
            if j == i {
                continue;
            }
            let d = geometry::sub(set.parts[j].centers[step], set.parts[i].centers[step]);
            let z = mat_tvec(&caches.rot[i][step].r, d);
            let inv_s2 = caches.inv_s2[i];
            let mahal =
                z[0] * z[0] * inv_s2[0] + z[1] * z[1] * inv_s2[1] + z[2] * z[2] * inv_s2[2];
            if mahal < best {
                best = mahal;
                best_j = j;
                best_diff = d;
                best_zloc = z;
            }
        }
        let e = exp(-alpha * best);
        value += e / m as f64;
        let m_bar = weight * (e / m as f64) * (-alpha);
        let x_bar = mahalanobis_backward(caches, adj, i, step, best_diff, best_zloc, m_bar);
        // The query point is the other part's center.
        for jj in 0..3 {
            adj.c_bar[best_j][step][jj] += x_bar[jj];
        }
    }
    value
}

fn cd_term(
    ctx: &mut AnchorCtx,
    set: &GaussianSet,
    caches: &GaussCaches,
    frames: &[Vec<Vec3>],
    targets: &[usize],
    adj: &mut Adjoints,
    weight: f64,
) -> f64 {
    let mut value = 0.0;
    for &t in targets {
        if t == ctx.k {
            continue; // exact zero with zero gradient
        }
        let h = ctx.transform(set, caches, t);
        let target = &frames[t];
        let mut h_bar = vec![[0.0; 3]; h.len()];
        let nn_target = NearestNeighbors::build(target);
        for (n, &hp) in h.iter().enumerate() {
            let (j, d) = nn_target.nearest(hp);
            value += d;
            let g = geometry::scale(geometry::sub(hp, target[j]), 2.0 * weight);
            for c in 0..3 {
                h_bar[n][c] += g[c];
            }
        }
        let nn_h = NearestNeighbors::build(&h);
        for &y in target.iter() {
            let (n, d) = nn_h.nearest(y);
            value += d;
            let g = geometry::scale(geometry::sub(h[n], y), 2.0 * weight);
            for c in 0..3 {
                h_bar[n][c] += g[c];
            }
        }
        ctx.backprop(set, caches, t, &h_bar, adj);
    }
    value
}

fn emd_term(
    ctx: &mut AnchorCtx,
    set: &GaussianSet,
    caches: &GaussCaches,
    frames: &[Vec<Vec3>],
    targets: &[usize],
    subsample: usize,
    rng: &mut Rng,
    adj: &mut Adjoints,
    weight: f64,
) -> f64 {
    let mut value = 0.0;
    for &t in targets {
        if t == ctx.k {
            continue;
        }
        let h = ctx.transform(set, caches, t);
        let target = &frames[t];
        let count = subsample.min(h.len()).min(target.len());
        if count == 0 {
            continue;
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
        value += cost;
        let mut h_bar = vec![[0.0; 3]; h.len()];
        for (r, &c) in assignment.iter().enumerate() {
            let g = geometry::scale(
                geometry::sub(h[hi[r]], target[yi[c]]),
                2.0 * weight,
            );
            for j in 0..3 {
                h_bar[hi[r]][j] += g[j];
            }
        }
        ctx.backprop(set, caches, t, &h_bar, adj);
    }
    value
}

fn flow_term(
    ctx: &mut AnchorCtx,
    set: &GaussianSet,
    caches: &GaussCaches,
    frames: &[Vec<Vec3>],
    oracle: &dyn FlowOracle,
    transitions: &[usize],
    adj: &mut Adjoints,
    weight: f64,
) -> Result<f64> {
    let mut value = 0.0;
    for &t in transitions {
        let ht = ctx.transform(set, caches, t);
        let ht1 = ctx.transform(set, caches, t + 1);
        let flows = oracle.flow(frames, t, &ht)?;
        if flows.len() != ht.len() {
            return Err(Error::OracleShapeMismatch {
                expected: ht.len(),
                got: flows.len(),
            });
        }
        let mut ht_bar = vec![[0.0; 3]; ht.len()];
        let mut ht1_bar = vec![[0.0; 3]; ht.len()];
        for n in 0..ht.len() {
            let r = geometry::sub(geometry::sub(ht1[n], ht[n]), flows[n]);
            value += geometry::norm_sq(r);
            let g = geometry::scale(r, 2.0 * weight);
            for j in 0..3 {
                ht1_bar[n][j] += g[j];
                ht_bar[n][j] -= g[j];
            }
        }
        ctx.backprop(set, caches, t, &ht_bar, adj);
        ctx.backprop(set, caches, t + 1, &ht1_bar, adj);
    }
    Ok(value)
}

/// Builds the fused cloud (all frames but `t`, carried to step t) plus the
/// per-source bookkeeping needed to route gradients back.
fn fuse_contexts(
    ctxs: &[AnchorCtx],
    set: &GaussianSet,
    caches: &GaussCaches,
    t: usize,
    sources: &[usize],
) -> (Vec<Vec3>, Vec<(usize, usize)>) {
    let mut fused = Vec::new();
    let mut origin = Vec::new();
    for &q in sources {
        let h = ctxs[q].transform(set, caches, t);
        for (n, p) in h.into_iter().enumerate() {
            fused.push(p);
            origin.push((q, n));
        }
    }
    (fused, origin)
}

fn scatter_fused_bar(
    ctxs: &mut [AnchorCtx],
    set: &GaussianSet,
    caches: &GaussCaches,
    t: usize,
    sources: &[usize],
    origin: &[(usize, usize)],
    fused_bar: &[Vec3],
    adj: &mut Adjoints,
) {
    for &q in sources {
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
            ctxs[q].backprop(set, caches, t, &h_bar, adj);
        }
    }
}

fn partial_cd_term(
    ctxs: &mut [AnchorCtx],
    set: &GaussianSet,
    caches: &GaussCaches,
    frames: &[Vec<Vec3>],
    t: usize,
    adj: &mut Adjoints,
    weight: f64,
) -> f64 {
    let sources: Vec<usize> = (0..frames.len()).filter(|&q| q != t).collect();
    let (fused, origin) = fuse_contexts(ctxs, set, caches, t, &sources);
    if fused.is_empty() {
        return 0.0;
    }
    let nn = NearestNeighbors::build(&fused);
    let mut value = 0.0;
    let mut fused_bar = vec![[0.0; 3]; fused.len()];
    for &x in &frames[t] {
        let (j, d) = nn.nearest(x);
        value += d;
        let g = geometry::scale(geometry::sub(fused[j], x), 2.0 * weight);
        for c in 0..3 {
            fused_bar[j][c] += g[c];
        }
    }
    scatter_fused_bar(ctxs, set, caches, t, &sources, &origin, &fused_bar, adj);
    value
}

fn partial_emd_term(
    ctxs: &mut [AnchorCtx],
    set: &GaussianSet,
    caches: &GaussCaches,
    frames: &[Vec<Vec3>],
    t: usize,
    subsample: usize,
    rng: &mut Rng,
    adj: &mut Adjoints,
    weight: f64,
) -> f64 {
    let sources: Vec<usize> = (0..frames.len()).filter(|&q| q != t).collect();
    let (fused, origin) = fuse_contexts(ctxs, set, caches, t, &sources);
    let rows = subsample.min(frames[t].len()).min(fused.len());
    if rows == 0 {
        return 0.0;
    }
    // The fused side keeps extra candidates so the injection has slack.
    let cols = (2 * subsample).min(fused.len()).max(rows);
    let xi = rng.sample_indices(frames[t].len(), rows);
    let fi = rng.sample_indices(fused.len(), cols);
    let mut costs = Vec::with_capacity(rows * cols);
    for &a in &xi {
        for &b in &fi {
            costs.push(dist_sq(frames[t][a], fused[b]));
        }
    }
    let matrix = CostMatrix::new(rows, cols, costs).expect("finite rectangular costs");
    let (assignment, cost) = solve(&matrix);
    let mut fused_bar = vec![[0.0; 3]; fused.len()];
    for (r, &c) in assignment.iter().enumerate() {
        let g = geometry::scale(
            geometry::sub(fused[fi[c]], frames[t][xi[r]]),
            2.0 * weight,
        );
        for j in 0..3 {
            fused_bar[fi[c]][j] += g[j];
        }
    }
    scatter_fused_bar(ctxs, set, caches, t, &sources, &origin, &fused_bar, adj);
    cost
}

fn split_fusion_term(
    ctxs: &mut [AnchorCtx],
    set: &GaussianSet,
    caches: &GaussCaches,
    frames: &[Vec<Vec3>],
    t: usize,
    rng: &mut Rng,
    adj: &mut Adjoints,
    weight: f64,
) -> f64 {
    let k = frames.len();
    let mut order: Vec<usize> = (0..k).collect();
    rng.shuffle(&mut order);
    let (half_a, half_b) = order.split_at(k / 2);
    let mut half_a = half_a.to_vec();
    let mut half_b = half_b.to_vec();
    half_a.sort_unstable();
    half_b.sort_unstable();

    let (fused_a, origin_a) = fuse_contexts(ctxs, set, caches, t, &half_a);
    let (fused_b, origin_b) = fuse_contexts(ctxs, set, caches, t, &half_b);
    if fused_a.is_empty() || fused_b.is_empty() {
        return 0.0;
    }
    let nn_a = NearestNeighbors::build(&fused_a);
    let nn_b = NearestNeighbors::build(&fused_b);
    let mut value = 0.0;
    let mut bar_a = vec![[0.0; 3]; fused_a.len()];
    let mut bar_b = vec![[0.0; 3]; fused_b.len()];
    for (i, &p) in fused_a.iter().enumerate() {
        let (j, d) = nn_b.nearest(p);
        value += d;
        let g = geometry::scale(geometry::sub(p, fused_b[j]), 2.0 * weight);
        for c in 0..3 {
            bar_a[i][c] += g[c];
            bar_b[j][c] -= g[c];
        }
    }
    for (j, &p) in fused_b.iter().enumerate() {
        let (i, d) = nn_a.nearest(p);
        value += d;
        let g = geometry::scale(geometry::sub(fused_a[i], p), 2.0 * weight);
        for c in 0..3 {
            bar_a[i][c] += g[c];
            bar_b[j][c] -= g[c];
        }
    }
    scatter_fused_bar(ctxs, set, caches, t, &half_a, &origin_a, &bar_a, adj);
    scatter_fused_bar(ctxs, set, caches, t, &half_b, &origin_b, &bar_b, adj);
    value
}

// --- public single-term entry points ---

fn check_anchor(set: &GaussianSet, frames: &[Vec<Vec3>], k: usize) -> Result<()> {
    set.check_step(k)?;
    if frames.len() != set.num_timesteps {
        return Err(Error::LengthMismatch {
            left: frames.len(),
            right: set.num_timesteps,
        });
    }
    Ok(())
}

/// Negative log-likelihood of the points under the equal-weight Gaussian
/// mixture at `step`.
pub fn mle_loss(points: &[Vec3], set: &GaussianSet, step: usize) -> Result<(f64, ParamGrad)> {
    set.check_step(step)?;
    let caches = build_caches(set)?;
    let mut adj = Adjoints::zeros(set.num_parts(), set.num_timesteps);
    let value = mle_term(set, &caches, points, step, &mut adj, 1.0);
    Ok((value, adj.into_grad(&caches)))
}

/// Penalty for Gaussians whose centers sit inside a neighbor: the mean of
/// exp(-alpha * min_j M(mu_j, G_i)).
pub fn sep_loss(set: &GaussianSet, step: usize, alpha: f64) -> Result<(f64, ParamGrad)> {
    set.check_step(step)?;
    let caches = build_caches(set)?;
    let mut adj = Adjoints::zeros(set.num_parts(), set.num_timesteps);
    let value = sep_term(set, &caches, step, alpha, &mut adj, 1.0);
    Ok((value, adj.into_grad(&caches)))
}

/// Symmetric Chamfer distance of the anchor frame transported to every other
/// step against the observations there.
pub fn chamfer_loss(
    set: &GaussianSet,
    frames: &[Vec<Vec3>],
    spec: AssignmentSpec<'_>,
    k: usize,
) -> Result<(f64, ParamGrad)> {
    check_anchor(set, frames, k)?;
    let caches = build_caches(set)?;
    let mut adj = Adjoints::zeros(set.num_parts(), set.num_timesteps);
    let mut ctx = AnchorCtx::from_spec(set, &caches, &frames[k], k, spec)?;
    let targets: Vec<usize> = (0..frames.len()).collect();
    let value = cd_term(&mut ctx, set, &caches, frames, &targets, &mut adj, 1.0);
    ctx.finalize(&caches, &mut adj);
    Ok((value, adj.into_grad(&caches)))
}

/// Earth-mover distance of the transported anchor frame against every other
/// step, on seeded equal-size subsamples, with the optimal matching held
/// fixed in the backward pass.
pub fn emd_loss(
    set: &GaussianSet,
    frames: &[Vec<Vec3>],
    spec: AssignmentSpec<'_>,
    k: usize,
    subsample: usize,
    rng: &mut Rng,
) -> Result<(f64, ParamGrad)> {
    check_anchor(set, frames, k)?;
    let caches = build_caches(set)?;
    let mut adj = Adjoints::zeros(set.num_parts(), set.num_timesteps);
    let mut ctx = AnchorCtx::from_spec(set, &caches, &frames[k], k, spec)?;
    let targets: Vec<usize> = (0..frames.len()).collect();
    let value = emd_term(
        &mut ctx, set, &caches, frames, &targets, subsample, rng, &mut adj, 1.0,
    );
    ctx.finalize(&caches, &mut adj);
    Ok((value, adj.into_grad(&caches)))
}

/// Disagreement between the model-induced displacement of the anchored
/// points and the flow oracle, summed over all consecutive transitions.
pub fn flow_loss(
    set: &GaussianSet,
    frames: &[Vec<Vec3>],
    spec: AssignmentSpec<'_>,
    k: usize,
    oracle: &dyn FlowOracle,
) -> Result<(f64, ParamGrad)> {
    check_anchor(set, frames, k)?;
    if frames.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: frames.len(),
        });
    }
    let caches = build_caches(set)?;
    let mut adj = Adjoints::zeros(set.num_parts(), set.num_timesteps);
    let mut ctx = AnchorCtx::from_spec(set, &caches, &frames[k], k, spec)?;
    let transitions: Vec<usize> = (0..frames.len() - 1).collect();
    let value = flow_term(
        &mut ctx,
        set,
        &caches,
        frames,
        oracle,
        &transitions,
        &mut adj,
        1.0,
    )?;
    ctx.finalize(&caches, &mut adj);
    Ok((value, adj.into_grad(&caches)))
}

fn seq_contexts<'s>(
    set: &GaussianSet,
    caches: &GaussCaches,
    frames: &[Vec<Vec3>],
    seq: SeqAssignment<'s>,
) -> Result<Vec<AnchorCtx>> {
    let mut ctxs = Vec::with_capacity(frames.len());
    for (q, frame) in frames.iter().enumerate() {
        let ctx = match seq {
            SeqAssignment::Hard(labels) => AnchorCtx::hard(set, caches, frame, q, &labels[q])?,
            SeqAssignment::Soft { temperature, noise } => AnchorCtx::soft(
                set,
                caches,
                frame,
                q,
                temperature,
                noise.map(|ns| ns[q].as_slice()),
            )?,
        };
        ctxs.push(ctx);
    }
    Ok(ctxs)
}

/// One-directional Chamfer distance from the observed frame t into the fused
/// cloud of every other frame carried to step t.
pub fn partial_chamfer_loss(
    set: &GaussianSet,
    frames: &[Vec<Vec3>],
    seq: SeqAssignment<'_>,
    t: usize,
) -> Result<(f64, ParamGrad)> {
    check_anchor(set, frames, t)?;
    let caches = build_caches(set)?;
    let mut adj = Adjoints::zeros(set.num_parts(), set.num_timesteps);
    let mut ctxs = seq_contexts(set, &caches, frames, seq)?;
    let value = partial_cd_term(&mut ctxs, set, &caches, frames, t, &mut adj, 1.0);
    for ctx in ctxs {
        ctx.finalize(&caches, &mut adj);
    }
    Ok((value, adj.into_grad(&caches)))
}

/// Minimum-cost injective matching of (subsampled) frame t into the
/// (subsampled) fused cloud of the other frames.
pub fn partial_emd_loss(
    set: &GaussianSet,
    frames: &[Vec<Vec3>],
    seq: SeqAssignment<'_>,
    t: usize,
    subsample: usize,
    rng: &mut Rng,
) -> Result<(f64, ParamGrad)> {
    check_anchor(set, frames, t)?;
    let caches = build_caches(set)?;
    let mut adj = Adjoints::zeros(set.num_parts(), set.num_timesteps);
    let mut ctxs = seq_contexts(set, &caches, frames, seq)?;
    let value = partial_emd_term(
        &mut ctxs, set, &caches, frames, t, subsample, rng, &mut adj, 1.0,
    );
    for ctx in ctxs {
        ctx.finalize(&caches, &mut adj);
    }
    Ok((value, adj.into_grad(&caches)))
}

/// Symmetric Chamfer distance between the fusions of two random halves of
/// the frame set, both carried to step t.
pub fn split_fusion_regularizer(
    set: &GaussianSet,
    frames: &[Vec<Vec3>],
    seq: SeqAssignment<'_>,
    t: usize,
    rng: &mut Rng,
) -> Result<(f64, ParamGrad)> {
    check_anchor(set, frames, t)?;
    let caches = build_caches(set)?;
    let mut adj = Adjoints::zeros(set.num_parts(), set.num_timesteps);
    let mut ctxs = seq_contexts(set, &caches, frames, seq)?;
    let value = split_fusion_term(&mut ctxs, set, &caches, frames, t, rng, &mut adj, 1.0);
    for ctx in ctxs {
        ctx.finalize(&caches, &mut adj);
    }
    Ok((value, adj.into_grad(&caches)))
}

/// Weighted sum of the configured terms with the full gradient.
///
/// In `Full` mode the five losses of the training objective are evaluated
/// with frame k as the anchor. In `Partial` mode frame k is the target: the
/// one-directional Chamfer/EMD variants plus the split-fusion regularizer
/// (reported inside the `cd` slot) replace their full-data counterparts.
/// Terms with zero weight are skipped entirely.
pub fn total_loss(
    set: &GaussianSet,
    frames: &[Vec<Vec3>],
    k: usize,
    weights: &LossWeights,
    mode: FitMode,
    oracle: &dyn FlowOracle,
    opts: &LossOptions,
    rng: &mut Rng,
) -> Result<LossBreakdown> {
    check_anchor(set, frames, k)?;
    let m = set.num_parts();
    let steps = set.num_timesteps;
    let caches = build_caches(set)?;
    let mut adj = Adjoints::zeros(m, steps);

    let mut bd = LossBreakdown {
        mle: 0.0,
        sep: 0.0,
        cd: 0.0,
        emd: 0.0,
        flow: 0.0,
        total: 0.0,
        gradient: Vec::new(),
    };

    if weights.lambda_mle > 0.0 {
        bd.mle = mle_term(set, &caches, &frames[k], k, &mut adj, weights.lambda_mle);
    }
    if weights.lambda_sep > 0.0 {
        bd.sep = sep_term(
            set,
            &caches,
            k,
            weights.alpha_sep,
            &mut adj,
            weights.lambda_sep,
        );
    }

    let need_transport =
        weights.lambda_cd > 0.0 || weights.lambda_emd > 0.0 || weights.lambda_flow > 0.0;
    if need_transport {
        let flow_transitions: Vec<usize> = if steps < 2 || weights.lambda_flow == 0.0 {
            Vec::new()
        } else if opts.flow_anchor_only {
            vec![if k + 1 < steps { k } else { steps - 2 }]
        } else {
            (0..steps - 1).collect()
        };

        match mode {
            FitMode::Full => {
                let noise = opts
                    .use_noise
                    .then(|| gumbel_noise(rng, frames[k].len() * m));
                let mut ctx = AnchorCtx::soft(
                    set,
                    &caches,
                    &frames[k],
                    k,
                    opts.temperature,
                    noise.as_deref(),
                )?;
                let targets = pick_targets(steps, k, opts.target_subset, rng);
                if weights.lambda_cd > 0.0 {
                    bd.cd = cd_term(
                        &mut ctx,
                        set,
                        &caches,
                        frames,
                        &targets,
                        &mut adj,
                        weights.lambda_cd,
                    );
                }
                if weights.lambda_emd > 0.0 {
                    bd.emd = emd_term(
                        &mut ctx,
                        set,
                        &caches,
                        frames,
                        &targets,
                        opts.emd_subsample,
                        rng,
                        &mut adj,
                        weights.lambda_emd,
                    );
                }
                if weights.lambda_flow > 0.0 {
                    bd.flow = flow_term(
                        &mut ctx,
                        set,
                        &caches,
                        frames,
                        oracle,
                        &flow_transitions,
                        &mut adj,
                        weights.lambda_flow,
                    )?;
                }
                ctx.finalize(&caches, &mut adj);
            }
            FitMode::Partial => {
                let mut ctxs = Vec::with_capacity(steps);
                for (q, frame) in frames.iter().enumerate() {
                    let noise = opts.use_noise.then(|| gumbel_noise(rng, frame.len() * m));
                    ctxs.push(AnchorCtx::soft(
                        set,
                        &caches,
                        frame,
                        q,
                        opts.temperature,
                        noise.as_deref(),
                    )?);
                }
                if weights.lambda_cd > 0.0 {
                    bd.cd = partial_cd_term(
                        &mut ctxs,
                        set,
                        &caches,
                        frames,
                        k,
                        &mut adj,
                        weights.lambda_cd,
                    );
                    bd.cd += split_fusion_term(
                        &mut ctxs,
                        set,
                        &caches,
                        frames,
                        k,
                        rng,
                        &mut adj,
                        weights.lambda_cd,
                    );
                }
                if weights.lambda_emd > 0.0 {
                    bd.emd = partial_emd_term(
                        &mut ctxs,
                        set,
                        &caches,
                        frames,
                        k,
                        opts.emd_subsample,
                        rng,
                        &mut adj,
                        weights.lambda_emd,
                    );
                }
                if weights.lambda_flow > 0.0 {
                    let ctx = &mut ctxs[k];
                    bd.flow = flow_term(
                        ctx,
                        set,
                        &caches,
                        frames,
                        oracle,
                        &flow_transitions,
                        &mut adj,
                        weights.lambda_flow,
                    )?;
                }
                for ctx in ctxs {
                    ctx.finalize(&caches, &mut adj);
                }
            }
        }
    }

    bd.total = weights.lambda_mle * bd.mle
        + weights.lambda_sep * bd.sep
        + weights.lambda_cd * bd.cd
        + weights.lambda_emd * bd.emd
        + weights.lambda_flow * bd.flow;
    bd.gradient = adj.into_grad(&caches).to_flat();
    Ok(bd)
}

fn pick_targets(steps: usize, k: usize, subset: Option<usize>, rng: &mut Rng) -> Vec<usize> {
    let all: Vec<usize> = (0..steps).filter(|&t| t != k).collect();
    match subset {
        Some(cap) if cap < all.len() => {
            let chosen = rng.sample_indices(all.len(), cap);
            let mut targets: Vec<usize> = chosen.into_iter().map(|i| all[i]).collect();
            targets.sort_unstable();
            targets
        }
        _ => all,
    }
}

pub fn gumbel_noise(rng: &mut Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gumbel()).collect()
}

/// Full double-sum symmetric Chamfer score used for model selection: every
/// frame carried to every other step under hard assignments, no noise.
pub fn chamfer_full_sum(set: &GaussianSet, frames: &[Vec<Vec3>]) -> Result<f64> {
    if frames.len() != set.num_timesteps {
        return Err(Error::LengthMismatch {
            left: frames.len(),
            right: set.num_timesteps,
        });
    }
    let mut total = 0.0;
    for k in 0..frames.len() {
        let labels = crate::gaussian::assign_hard(&frames[k], set, k)?;
        for t in 0..frames.len() {
            if t == k {
                continue;
            }
            let h = crate::gaussian::transform_points(
                &frames[k],
                crate::gaussian::Assignment::Hard(&labels),
                set,
                k,
                t,
            )?;
            total += symmetric_chamfer(&h, &frames[t]);
        }
    }
    Ok(total)
}

/// Plain symmetric Chamfer distance between two clouds (no model involved).
pub fn symmetric_chamfer(a: &[Vec3], b: &[Vec3]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let nn_b = NearestNeighbors::build(b);
    let nn_a = NearestNeighbors::build(a);
    let mut total = 0.0;
    for &p in a {
        total += nn_b.nearest(p).1;
    }
    for &p in b {
        total += nn_a.nearest(p).1;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::GaussianPart;
    use crate::geometry::Rot6D;

    fn unit_set(centers: &[Vec3], steps: usize) -> GaussianSet {
        GaussianSet::new(
            centers
                .iter()
                .map(|&c| GaussianPart::static_at(c, [0.0; 3], steps))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn mle_at_mode_matches_closed_form() {
        let set = unit_set(&[[0.0; 3]], 1);
        let points = vec![[0.0; 3]; 7];
        let (value, _) = mle_loss(&points, &set, 0).unwrap();
        let expected = 7.0 * 1.5 * ln(2.0 * core::f64::consts::PI);
        assert!((value - expected).abs() < 1e-12, "{value} vs {expected}");
    }

    #[test]
    fn mle_increases_with_center_distance() {
        let points = vec![[0.0; 3]; 5];
        let mut prev = f64::NEG_INFINITY;
        for shift in [0.0, 0.5, 1.0, 2.0] {
            let set = unit_set(&[[shift, 0.0, 0.0]], 1);
            let (value, _) = mle_loss(&points, &set, 0).unwrap();
            assert!(value > prev);
            prev = value;
        }
    }

    #[test]
    fn mle_duplicate_gaussians_shift_by_n_log_two() {
        let points: Vec<Vec3> = (0..11).map(|i| [i as f64 * 0.1, 0.0, 0.0]).collect();
        let one = unit_set(&[[0.3, 0.0, 0.0]], 1);
        let two = unit_set(&[[0.3, 0.0, 0.0], [0.3, 0.0, 0.0]], 1);
        let (l1, _) = mle_loss(&points, &one, 0).unwrap();
        let (l2, _) = mle_loss(&points, &two, 0).unwrap();
        let expected = points.len() as f64 * ln(2.0);
        assert!(((l1 - l2) - expected).abs() < 1e-9, "{}", l1 - l2);
    }

    #[test]
    fn mle_invariant_under_part_permutation() {
        let points: Vec<Vec3> = (0..9).map(|i| [i as f64 * 0.3, 0.1, -0.2]).collect();
        let a = unit_set(&[[0.0; 3], [2.0, 0.0, 0.0]], 1);
        let b = unit_set(&[[2.0, 0.0, 0.0], [0.0; 3]], 1);
        let (la, _) = mle_loss(&points, &a, 0).unwrap();
        let (lb, _) = mle_loss(&points, &b, 0).unwrap();
        assert!((la - lb).abs() < 1e-12);
    }

    #[test]
    fn sep_examples() {
        let coincident = unit_set(&[[1.0, 2.0, 3.0], [1.0, 2.0, 3.0], [1.0, 2.0, 3.0]], 1);
        let (value, _) = sep_loss(&coincident, 0, 0.5).unwrap();
        assert!((value - 1.0).abs() < 1e-12);

        let single = unit_set(&[[0.0; 3]], 1);
        assert_eq!(sep_loss(&single, 0, 0.5).unwrap().0, 0.0);

        let pair = unit_set(&[[0.0; 3], [2.0, 0.0, 0.0]], 1);
        let (value, _) = sep_loss(&pair, 0, 0.5).unwrap();
        assert!((value - exp(-2.0)).abs() < 1e-12);
    }

    #[test]
    fn sep_decreases_with_separation() {
        let mut prev = f64::INFINITY;
        for d in [1.0, 2.0, 3.0, 5.0] {
            let set = unit_set(&[[0.0; 3], [d, 0.0, 0.0]], 1);
            let (value, _) = sep_loss(&set, 0, 0.5).unwrap();
            assert!(value < prev);
            prev = value;
        }
    }

    #[test]
    fn chamfer_identity_and_two_point_case() {
        // Static object, identical frames, correct static model.
        let set = unit_set(&[[0.0; 3]], 2);
        let cloud: Vec<Vec3> = (0..10).map(|i| [i as f64 * 0.2, 0.0, 0.0]).collect();
        let frames = vec![cloud.clone(), cloud.clone()];
        let labels = vec![0; 10];
        let (value, _) =
            chamfer_loss(&set, &frames, AssignmentSpec::Hard(&labels), 0).unwrap();
        assert!(value.abs() < 1e-18);

        // Two single-point clouds one unit apart under the identity model.
        let frames = vec![vec![[0.0, 0.0, 0.0]], vec![[1.0, 0.0, 0.0]]];
        let labels = vec![0];
        let (value, _) =
            chamfer_loss(&set, &frames, AssignmentSpec::Hard(&labels), 0).unwrap();
        assert!((value - 2.0).abs() < 1e-12, "{value}");
    }

    #[test]
    fn chamfer_self_is_zero() {
        let cloud: Vec<Vec3> = (0..25)
            .map(|i| [(i % 5) as f64, (i / 5) as f64, 0.0])
            .collect();
        assert_eq!(symmetric_chamfer(&cloud, &cloud), 0.0);
    }

    #[test]
    fn emd_examples() {
        let set = unit_set(&[[0.0; 3]], 2);
        let mut rng = Rng::new(1);

        let frames = vec![
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
            vec![[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
        ];
        let labels = vec![0, 0];
        let (value, _) = emd_loss(
            &set,
            &frames,
            AssignmentSpec::Hard(&labels),
            0,
            256,
            &mut rng,
        )
        .unwrap();
        assert!(value.abs() < 1e-18, "permutation should be free: {value}");

        let frames = vec![
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
            vec![[0.0, 0.0, 0.0], [3.0, 0.0, 0.0]],
        ];
        let (value, _) = emd_loss(
            &set,
            &frames,
            AssignmentSpec::Hard(&labels),
            0,
            256,
            &mut rng,
        )
        .unwrap();
        assert!((value - 4.0).abs() < 1e-12, "{value}");
    }

    #[test]
    fn emd_dominates_chamfer() {
        let mut rng = Rng::new(33);
        for _ in 0..20 {
            let a: Vec<Vec3> = (0..16)
                .map(|_| [rng.normal(), rng.normal(), rng.normal()])
                .collect();
            let b: Vec<Vec3> = (0..16)
                .map(|_| [rng.normal(), rng.normal(), rng.normal()])
                .collect();
            let mut costs = Vec::new();
            for &p in &a {
                for &q in &b {
                    costs.push(dist_sq(p, q));
                }
            }
            let (_, emd) = solve(&CostMatrix::new(16, 16, costs).unwrap());
            let nn_b = NearestNeighbors::build(&b);
            let nn_a = NearestNeighbors::build(&a);
            let fwd: f64 = a.iter().map(|&p| nn_b.nearest(p).1).sum();
            let bwd: f64 = b.iter().map(|&p| nn_a.nearest(p).1).sum();
            assert!(emd >= fwd.max(bwd) - 1e-12);
        }
    }

    #[test]
    fn flow_loss_examples() {
        // Static object, zero-flow oracle, static model.
        let set = unit_set(&[[0.0; 3]], 2);
        let cloud: Vec<Vec3> = (0..5).map(|i| [i as f64, 0.0, 0.0]).collect();
        let frames = vec![cloud.clone(), cloud.clone()];
        let labels = vec![0; 5];
        let (value, _) = flow_loss(
            &set,
            &frames,
            AssignmentSpec::Hard(&labels),
            0,
            &ZeroFlow,
        )
        .unwrap();
        assert!(value.abs() < 1e-18);

        // Model moves the point by (1,0,0) but the oracle says zero.
        let moving = GaussianSet::new(vec![GaussianPart::new(
            vec![Rot6D::IDENTITY; 2],
            vec![[0.0; 3], [1.0, 0.0, 0.0]],
            [0.0; 3],
        )
        .unwrap()])
        .unwrap();
        let frames = vec![vec![[0.0, 0.0, 0.0]], vec![[1.0, 0.0, 0.0]]];
        let labels = vec![0];
        let (value, _) = flow_loss(
            &moving,
            &frames,
            AssignmentSpec::Hard(&labels),
            0,
            &ZeroFlow,
        )
        .unwrap();
        assert!((value - 1.0).abs() < 1e-12, "{value}");
    }

    #[test]
    fn flow_oracle_shape_mismatch_detected() {
        struct BadOracle;
        impl FlowOracle for BadOracle {
            fn flow(&self, _f: &[Vec<Vec3>], _t: usize, _q: &[Vec3]) -> Result<Vec<Vec3>> {
                Ok(vec![[0.0; 3]; 1])
            }
        }
        let set = unit_set(&[[0.0; 3]], 2);
        let frames = vec![vec![[0.0; 3]; 4], vec![[0.0; 3]; 4]];
        let labels = vec![0; 4];
        let err = flow_loss(
            &set,
            &frames,
            AssignmentSpec::Hard(&labels),
            0,
            &BadOracle,
        )
        .unwrap_err();
        assert_eq!(
            err,
            Error::OracleShapeMismatch {
                expected: 4,
                got: 1
            }
        );
    }

    #[test]
    fn partial_chamfer_subset_is_zero() {
        // Frame 1 is a strict subset of frame 0 under a static model.
        let set = unit_set(&[[0.0; 3]], 2);
        let full: Vec<Vec3> = (0..10).map(|i| [i as f64 * 0.3, 0.0, 0.0]).collect();
        let half: Vec<Vec3> = full.iter().cloned().step_by(2).collect();
        let frames = vec![full, half];
        let labels: Vec<Vec<usize>> = frames.iter().map(|f| vec![0; f.len()]).collect();
        let (value, _) =
            partial_chamfer_loss(&set, &frames, SeqAssignment::Hard(&labels), 1).unwrap();
        assert!(value.abs() < 1e-18);
    }

    #[test]
    fn partial_chamfer_single_far_point() {
        let set = unit_set(&[[0.0; 3]], 2);
        let frames = vec![vec![[5.0, 0.0, 0.0]], vec![[0.0; 3], [1.0, 0.0, 0.0]]];
        let labels: Vec<Vec<usize>> = frames.iter().map(|f| vec![0; f.len()]).collect();
        // Both observed points match against the single fused point at
        // distance 5 and 4: 25 + 16.
        let (value, _) =
            partial_chamfer_loss(&set, &frames, SeqAssignment::Hard(&labels), 1).unwrap();
        assert!((value - 41.0).abs() < 1e-12, "{value}");
    }

    #[test]
    fn partial_emd_picks_nearer_candidate() {
        let set = unit_set(&[[0.0; 3]], 2);
        let frames = vec![
            vec![[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]],
            vec![[0.0, 0.0, 0.0]],
        ];
        let labels: Vec<Vec<usize>> = frames.iter().map(|f| vec![0; f.len()]).collect();
        let mut rng = Rng::new(0);
        let (value, _) = partial_emd_loss(
            &set,
            &frames,
            SeqAssignment::Hard(&labels),
            1,
            256,
            &mut rng,
        )
        .unwrap();
        assert!((value - 1.0).abs() < 1e-12, "{value}");
    }

    #[test]
    fn partial_emd_matches_brute_force_injection() {
        let mut rng = Rng::new(12);
        let set = unit_set(&[[0.0; 3]], 2);
        for _ in 0..10 {
            let obs: Vec<Vec3> = (0..3)
                .map(|_| [rng.normal(), rng.normal(), rng.normal()])
                .collect();
            let fused: Vec<Vec3> = (0..5)
                .map(|_| [rng.normal(), rng.normal(), rng.normal()])
                .collect();
            let frames = vec![fused.clone(), obs.clone()];
            let labels: Vec<Vec<usize>> = frames.iter().map(|f| vec![0; f.len()]).collect();
            let mut loss_rng = Rng::new(1);
            let (value, _) = partial_emd_loss(
                &set,
                &frames,
                SeqAssignment::Hard(&labels),
                1,
                256,
                &mut loss_rng,
            )
            .unwrap();
            // Brute force over all 5*4*3 injections.
            let mut best = f64::INFINITY;
            for a in 0..5 {
                for b in 0..5 {
                    for c in 0..5 {
                        if a == b || b == c || a == c {
                            continue;
                        }
                        let cost = dist_sq(obs[0], fused[a])
                            + dist_sq(obs[1], fused[b])
                            + dist_sq(obs[2], fused[c]);
                        best = best.min(cost);
                    }
                }
            }
            assert!((value - best).abs() < 1e-9, "{value} vs {best}");
        }
    }

    #[test]
    fn split_regularizer_k2_reduces_to_raw_chamfer() {
        let set = unit_set(&[[0.0; 3]], 2);
        let a: Vec<Vec3> = (0..6).map(|i| [i as f64 * 0.4, 0.0, 0.0]).collect();
        let b: Vec<Vec3> = (0..6).map(|i| [i as f64 * 0.4 + 0.13, 0.0, 0.0]).collect();
        let frames = vec![a.clone(), b.clone()];
        let labels: Vec<Vec<usize>> = frames.iter().map(|f| vec![0; f.len()]).collect();
        let mut rng = Rng::new(3);
        let (value, _) = split_fusion_regularizer(
            &set,
            &frames,
            SeqAssignment::Hard(&labels),
            0,
            &mut rng,
        )
        .unwrap();
        let expected = symmetric_chamfer(&a, &b);
        assert!((value - expected).abs() < 1e-12);
    }

    #[test]
    fn split_regularizer_identical_halves_zero() {
        let set = unit_set(&[[0.0; 3]], 2);
        let cloud: Vec<Vec3> = (0..8).map(|i| [i as f64, 0.5, 0.0]).collect();
        let frames = vec![cloud.clone(), cloud.clone()];
        let labels: Vec<Vec<usize>> = frames.iter().map(|f| vec![0; f.len()]).collect();
        let mut rng = Rng::new(5);
        let (value, _) = split_fusion_regularizer(
            &set,
            &frames,
            SeqAssignment::Hard(&labels),
            0,
            &mut rng,
        )
        .unwrap();
        assert!(value.abs() < 1e-18);
    }

    #[test]
    fn total_loss_zero_weights() {
        let set = unit_set(&[[0.0; 3]], 2);
        let frames = vec![vec![[0.0; 3]; 4], vec![[0.1, 0.0, 0.0]; 4]];
        let weights = LossWeights {
            lambda_mle: 0.0,
            lambda_sep: 0.0,
            lambda_cd: 0.0,
            lambda_emd: 0.0,
            lambda_flow: 0.0,
            alpha_sep: 0.5,
        };
        let mut rng = Rng::new(0);
        let bd = total_loss(
            &set,
            &frames,
            0,
            &weights,
            FitMode::Full,
            &ZeroFlow,
            &LossOptions::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(bd.total, 0.0);
        assert!(bd.gradient.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn total_loss_matches_hand_weighted_sum() {
        let mut rng = Rng::new(77);
        let set = GaussianSet::new(vec![
            GaussianPart::new(
                vec![Rot6D::IDENTITY; 3],
                vec![[0.0; 3], [0.2, 0.0, 0.0], [0.4, 0.0, 0.0]],
                [-0.5; 3],
            )
            .unwrap(),
            GaussianPart::new(
                vec![Rot6D::IDENTITY; 3],
                vec![[2.0, 0.0, 0.0]; 3],
                [-0.5; 3],
            )
            .unwrap(),
        ])
        .unwrap();
        let frames: Vec<Vec<Vec3>> = (0..3)
            .map(|t| {
                (0..12)
                    .map(|_| {
                        let base = if rng.uniform() < 0.5 {
                            [t as f64 * 0.2, 0.0, 0.0]
                        } else {
                            [2.0, 0.0, 0.0]
                        };
                        [
                            base[0] + rng.normal() * 0.3,
                            base[1] + rng.normal() * 0.3,
                            base[2] + rng.normal() * 0.3,
                        ]
                    })
                    .collect()
            })
            .collect();
        let weights = LossWeights::default();
        let opts = LossOptions::default();
        let bd = total_loss(
            &set,
            &frames,
            0,
            &weights,
            FitMode::Full,
            &ZeroFlow,
            &opts,
            &mut Rng::new(5),
        )
        .unwrap();
        let hand = weights.lambda_mle * bd.mle
            + weights.lambda_sep * bd.sep
            + weights.lambda_cd * bd.cd
            + weights.lambda_emd * bd.emd
            + weights.lambda_flow * bd.flow;
        assert!((bd.total - hand).abs() < 1e-9);
        assert_eq!(bd.gradient.len(), set.param_len());
    }
}
