//! Evaluation of a fitted model against ground truth: Rand indices,
//! tree edit distance, and the reconstruction / flow / reanimation errors,
//! plus the brute-force oracles used to validate them.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::assignment::{solve, CostMatrix};
use crate::error::{Error, Result};
use crate::geometry::{self, dist_sq, RigidTransform, Vec3};
use crate::kinematics::{reanimate, KinematicModel};
use crate::nn::NearestNeighbors;
use crate::rng::{mix_seed, Rng};

fn choose2(n: u128) -> u128 {
    n * n.saturating_sub(1) / 2
}

/// Fraction of point pairs on which the two partitions agree (both same
/// cluster or both different clusters). Exact integer counting.
pub fn rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: a.len(),
        });
    }
    let mut cells: BTreeMap<(usize, usize), u128> = BTreeMap::new();
    let mut rows: BTreeMap<usize, u128> = BTreeMap::new();
    let mut cols: BTreeMap<usize, u128> = BTreeMap::new();
    for (&la, &lb) in a.iter().zip(b) {
        *cells.entry((la, lb)).or_insert(0) += 1;
        *rows.entry(la).or_insert(0) += 1;
        *cols.entry(lb).or_insert(0) += 1;
    }
    let same_both: u128 = cells.values().map(|&c| choose2(c)).sum();
    let same_a: u128 = rows.values().map(|&c| choose2(c)).sum();
    let same_b: u128 = cols.values().map(|&c| choose2(c)).sum();
    let total = choose2(a.len() as u128);
    // agreements = total - same_a - same_b + 2 * same_both, ordered so the
    // unsigned arithmetic cannot underflow.
    let agreements = (total + 2 * same_both) - same_a - same_b;
    Ok(agreements as f64 / total as f64)
}

/// O(n^2) pair-count oracle for [`rand_index`].
pub fn rand_index_brute_force(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let mut agreements: u128 = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[i] == a[j]) == (b[i] == b[j]) {
                agreements += 1;
            }
        }
    }
    agreements as f64 / choose2(n as u128) as f64
}

/// Per-scan (unweighted mean over frames) and multi-scan (pooled points,
/// frame-consistent label spaces) Rand indices.
pub fn rand_index_suite(
    predicted: &[Vec<usize>],
    ground_truth: &[Vec<usize>],
) -> Result<(f64, f64)> {
    if predicted.len() != ground_truth.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: ground_truth.len(),
        });
    }
    let mut per_scan = 0.0;
    let mut pooled_pred = Vec::new();
    let mut pooled_gt = Vec::new();
    for (pred, gt) in predicted.iter().zip(ground_truth) {
        per_scan += rand_index(pred, gt)?;
        pooled_pred.extend_from_slice(pred);
        pooled_gt.extend_from_slice(gt);
    }
    per_scan /= predicted.len() as f64;
    let multi_scan = rand_index(&pooled_pred, &pooled_gt)?;
    Ok((per_scan, multi_scan))
}

/// Unlabeled rooted tree given by children lists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RootedTree {
    pub children: Vec<Vec<usize>>,
    pub root: usize,
}

impl RootedTree {
    pub fn from_edges(n_nodes: usize, edges: &[(usize, usize)], root: usize) -> Result<Self> {
        if root >= n_nodes {
            return Err(Error::IndexOutOfRange {
                index: root,
                len: n_nodes,
            });
        }
        let mut children = vec![Vec::new(); n_nodes];
        let mut has_parent = vec![false; n_nodes];
        for &(p, c) in edges {
            if p >= n_nodes || c >= n_nodes {
                return Err(Error::IndexOutOfRange {
                    index: p.max(c),
                    len: n_nodes,
                });
            }
            if has_parent[c] || c == root {
                return Err(Error::InvalidInput("node with two parents".into()));
            }
            has_parent[c] = true;
            children[p].push(c);
        }
        if edges.len() + 1 != n_nodes {
            return Err(Error::InvalidInput("edge count must be nodes - 1".into()));
        }
        Ok(RootedTree { children, root })
    }

    pub fn size(&self) -> usize {
        self.children.len()
    }
}

/// Ordered tree in canonical child order, as nested children lists.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct OrderedTree {
    pub children: Vec<OrderedTree>,
}

impl OrderedTree {
    pub fn size(&self) -> usize {
        1 + self.children.iter().map(OrderedTree::size).sum::<usize>()
    }

    pub fn encoding(&self) -> String {
        let mut s = String::from("(");
        for c in &self.children {
            s.push_str(&c.encoding());
        }
        s.push(')');
        s
    }
}

/// Canonically ordered version of a rooted tree: children sorted by
/// (subtree size, subtree encoding) descending, recursively.
pub fn canonicalize(tree: &RootedTree) -> OrderedTree {
    fn build(tree: &RootedTree, node: usize) -> OrderedTree {
        let mut subs: Vec<(usize, String, OrderedTree)> = tree.children[node]
            .iter()
            .map(|&c| {
                let t = build(tree, c);
                (t.size(), t.encoding(), t)
            })
            .collect();
        subs.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.cmp(&a.1)));
        OrderedTree {
            children: subs.into_iter().map(|(_, _, t)| t).collect(),
        }
    }
    build(tree, tree.root)
}

/// Minimum number of node insertions/deletions transforming one tree into
/// the other (nodes unlabeled, relabel free), computed on the canonically
/// ordered forms with an ordered-tree edit-distance algorithm.
pub fn tree_edit_distance(a: &RootedTree, b: &RootedTree) -> usize {
    ordered_tree_edit_distance(&canonicalize(a), &canonicalize(b))
}

struct ZsIndex {
    // 1-based postorder; leftmost[i] is the postorder index of the leftmost
    // leaf of the subtree rooted at i.
    leftmost: Vec<usize>,
    keyroots: Vec<usize>,
    size: usize,
}

fn zs_index(tree: &OrderedTree) -> ZsIndex {
    fn walk(node: &OrderedTree, counter: &mut usize, leftmost: &mut Vec<usize>) -> usize {
        let mut own_leftmost = 0;
        for (i, c) in node.children.iter().enumerate() {
            let lm = walk(c, counter, leftmost);
            if i == 0 {
                own_leftmost = lm;
            }
        }
        *counter += 1;
        let id = *counter;
        if node.children.is_empty() {
            own_leftmost = id;
        }
        leftmost.push(own_leftmost); // entry for postorder id
        own_leftmost
    }
    let mut leftmost = vec![0];
    let mut counter = 0;
    walk(tree, &mut counter, &mut leftmost);
    let size = counter;
    let mut keyroots = Vec::new();
    for i in 1..=size {
        let mut is_keyroot = true;
        for j in (i + 1)..=size {
            if leftmost[j] == leftmost[i] {
                is_keyroot = false;
                break;
            }
        }
        if is_keyroot {
            keyroots.push(i);
        }
    }
    ZsIndex {
        leftmost,
        keyroots,
        size,
    }
}

/// Zhang-Shasha dynamic program with unit insert/delete and zero relabel
/// cost (nodes are unlabeled).
pub fn ordered_tree_edit_distance(a: &OrderedTree, b: &OrderedTree) -> usize {
    let ia = zs_index(a);
    let ib = zs_index(b);
    let (n, m) = (ia.size, ib.size);
    let mut treedist = vec![vec![0usize; m + 1]; n + 1];
    let mut forest = vec![vec![0usize; m + 1]; n + 1];

    for &i in &ia.keyroots {
        for &j in &ib.keyroots {
            let li = ia.leftmost[i];
            let lj = ib.leftmost[j];
            forest[li - 1][lj - 1] = 0;
            for x in li..=i {
                forest[x][lj - 1] = forest[x - 1][lj - 1] + 1;
            }
            for y in lj..=j {
                forest[li - 1][y] = forest[li - 1][y - 1] + 1;
            }
            for x in li..=i {
                for y in lj..=j {
                    if ia.leftmost[x] == li && ib.leftmost[y] == lj {
                        // Both prefixes are whole trees; matching the roots
                        // costs nothing.
                        let d = (forest[x - 1][y] + 1)
                            .min(forest[x][y - 1] + 1)
                            .min(forest[x - 1][y - 1]);
                        forest[x][y] = d;
                        treedist[x][y] = d;
                    } else {
                        let d = (forest[x - 1][y] + 1).min(forest[x][y - 1] + 1).min(
                            forest[ia.leftmost[x] - 1][ib.leftmost[y] - 1] + treedist[x][y],
                        );
                        forest[x][y] = d;
                    }
                }
            }
        }
    }
    treedist[n][m]
}

/// Exhaustive insert/delete edit search for small trees: intersects the
/// ordered deletion closures of both trees; the largest common member gives
/// the minimal script length |a| + |b| - 2|common|.
pub fn tree_edit_distance_oracle(a: &OrderedTree, b: &OrderedTree) -> usize {
    let ca = deletion_closure(a);
    let cb = deletion_closure(b);
    let mut best_common = 0usize;
    for (enc, size) in &ca {
        if *size > best_common && cb.contains_key(enc) {
            best_common = *size;
        }
    }
    a.size() + b.size() - 2 * best_common
}

/// Every ordered tree reachable by deleting non-root nodes (children splice
/// into the parent's list in place), keyed by encoding.
fn deletion_closure(tree: &OrderedTree) -> BTreeMap<String, usize> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let mut queue = vec![tree.clone()];
    seen.insert(tree.encoding(), tree.size());
    while let Some(t) = queue.pop() {
        for idx in 0..t.size().saturating_sub(1) {
            let next = delete_nth_non_root(&t, idx);
            let enc = next.encoding();
            if !seen.contains_key(&enc) {
                seen.insert(enc, next.size());
                queue.push(next);
            }
        }
    }
    seen
}

/// Deletes the idx-th non-root node in preorder, splicing its children into
/// its position.
fn delete_nth_non_root(tree: &OrderedTree, idx: usize) -> OrderedTree {
    fn rebuild(node: &OrderedTree, target: &mut isize) -> OrderedTree {
        let mut children = Vec::new();
        for c in &node.children {
            if *target == 0 {
                *target -= 1;
                for gc in &c.children {
                    children.push(gc.clone());
                }
            } else if *target < 0 {
                children.push(c.clone());
            } else {
                *target -= 1;
                children.push(rebuild(c, target));
            }
        }
        OrderedTree { children }
    }
    let mut target = idx as isize;
    rebuild(tree, &mut target)
}

/// All distinct unlabeled rooted trees with exactly n nodes, in canonical
/// ordered form.
pub fn all_rooted_trees(n: usize) -> Vec<OrderedTree> {
    fn enumerate(n: usize) -> Vec<Vec<usize>> {
        // Parent arrays with parent[i] < i cover every rooted tree shape.
        let mut out = Vec::new();
        let mut parents = vec![0usize; n];
        fn recurse(i: usize, n: usize, parents: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if i == n {
                out.push(parents.clone());
                return;
            }
            for p in 0..i {
                parents[i] = p;
                recurse(i + 1, n, parents, out);
            }
        }
        if n <= 1 {
            out.push(vec![0; n]);
        } else {
            recurse(1, n, &mut parents, &mut out);
        }
        out
    }
    let mut seen: BTreeMap<String, OrderedTree> = BTreeMap::new();
    for parents in enumerate(n) {
        let edges: Vec<(usize, usize)> = (1..n).map(|i| (parents[i], i)).collect();
        let tree = RootedTree::from_edges(n, &edges, 0).expect("valid by construction");
        let ordered = canonicalize(&tree);
        seen.entry(ordered.encoding()).or_insert(ordered);
    }
    seen.into_values().collect()
}

/// Mean squared distance between frame-0 points carried to every later step
/// by the ground-truth motions versus the estimated ones. Raw (unscaled)
/// value; reports additionally print it multiplied by 100.
pub fn reconstruction_error(
    frame0: &[Vec3],
    gt_poses: &[Vec<RigidTransform>],
    gt_labels0: &[usize],
    est_poses: &[Vec<RigidTransform>],
    est_labels0: &[usize],
) -> Result<f64> {
    if gt_labels0.len() != frame0.len() || est_labels0.len() != frame0.len() {
        return Err(Error::LengthMismatch {
            left: gt_labels0.len().min(est_labels0.len()),
            right: frame0.len(),
        });
    }
    let steps = gt_poses.first().ok_or(Error::MissingGroundTruth)?.len();
    if steps < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: steps,
        });
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for t in 1..steps {
        let gt_motion: Vec<RigidTransform> = gt_poses
            .iter()
            .map(|track| geometry::relative_motion(&track[t], &track[0]))
            .collect();
        let est_motion: Vec<RigidTransform> = est_poses
            .iter()
            .map(|track| geometry::relative_motion(&track[t], &track[0]))
            .collect();
        for ((&x, &lg), &le) in frame0.iter().zip(gt_labels0).zip(est_labels0) {
            let yg = gt_motion
                .get(lg)
                .ok_or(Error::UnknownLabel { label: lg })?
                .apply(x);
            let ye = est_motion
                .get(le)
                .ok_or(Error::UnknownLabel { label: le })?
                .apply(x);
            total += dist_sq(yg, ye);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Mean squared difference between ground-truth and estimated per-point
/// displacements over every consecutive transition. Raw value.
pub fn flow_error(
    frames: &[Vec<Vec3>],
    gt_poses: &[Vec<RigidTransform>],
    gt_labels: &[Vec<usize>],
    est_poses: &[Vec<RigidTransform>],
    est_labels: &[Vec<usize>],
) -> Result<f64> {
    let steps = frames.len();
    if steps < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: steps,
        });
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for t in 0..steps - 1 {
        let gt_motion: Vec<RigidTransform> = gt_poses
            .iter()
            .map(|track| geometry::relative_motion(&track[t + 1], &track[t]))
            .collect();
        let est_motion: Vec<RigidTransform> = est_poses
            .iter()
            .map(|track| geometry::relative_motion(&track[t + 1], &track[t]))
            .collect();
        for ((&x, &lg), &le) in frames[t].iter().zip(&gt_labels[t]).zip(&est_labels[t]) {
            let dg = geometry::sub(
                gt_motion
                    .get(lg)
                    .ok_or(Error::UnknownLabel { label: lg })?
                    .apply(x),
                x,
            );
            let de = geometry::sub(
                est_motion
                    .get(le)
                    .ok_or(Error::UnknownLabel { label: le })?
                    .apply(x),
                x,
            );
            total += dist_sq(dg, de);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Mean optimal-assignment squared distance between the re-articulated
/// source cloud and each held-out ground-truth cloud, on seeded subsamples
/// of up to `subsample` points per side. Raw value.
pub fn reanimate_error(
    model: &KinematicModel,
    source_points: &[Vec3],
    source_labels: &[usize],
    unseen: &[(Vec<f64>, Vec<Vec3>)],
    subsample: usize,
    seed: u64,
) -> Result<f64> {
    if unseen.is_empty() {
        return Err(Error::MissingGroundTruth);
    }
    let mut total = 0.0;
    for (pose_idx, (states, gt_cloud)) in unseen.iter().enumerate() {
        let predicted = reanimate(model, states, source_points, source_labels)?;
        let mut rng = Rng::new(mix_seed(seed, pose_idx as u64));
        let count = subsample.min(predicted.len()).min(gt_cloud.len());
        if count == 0 {
            return Err(Error::TooFewPoints { needed: 1, got: 0 });
        }
        let pi = rng.sample_indices(predicted.len(), count);
        let gi = rng.sample_indices(gt_cloud.len(), count);
        let mut costs = Vec::with_capacity(count * count);
        for &a in &pi {
            for &b in &gi {
                costs.push(dist_sq(predicted[a], gt_cloud[b]));
            }
        }
        let matrix = CostMatrix::new(count, count, costs)?;
        let (_, cost) = solve(&matrix);
        total += cost / count as f64;
    }
    Ok(total / unseen.len() as f64)
}

/// Empirical resampling noise floor: mean nearest-neighbor squared distance
/// between two independent samplings of the same surface.
pub fn resampling_noise_floor(a: &[Vec3], b: &[Vec3]) -> f64 {
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
    total / (a.len() + b.len()) as f64
}

/// Maps held-out ground-truth joint states onto the fitted model's edges.
///
/// Fitted parts are matched to ground-truth parts by label overlap; each
/// model edge then inherits the ground-truth joint over the same part pair,
/// with the state sign/scale recovered by least squares between the two
/// observed state tracks (the fitted axis may point the other way). Edges
/// without a counterpart stay at their rest state.
pub fn map_gt_states_to_edges(
    model: &KinematicModel,
    est_labels: &[Vec<usize>],
    gt_labels: &[Vec<usize>],
    gt_joints: &[(usize, usize)],
    gt_trajectory: &[Vec<f64>],
    unseen_states: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let mut overlap: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (est_frame, gt_frame) in est_labels.iter().zip(gt_labels) {
        for (&e, &g) in est_frame.iter().zip(gt_frame) {
            *overlap.entry((e, g)).or_insert(0) += 1;
        }
    }
    let mut est_to_gt: BTreeMap<usize, usize> = BTreeMap::new();
    for (&(e, g), &count) in &overlap {
        let better = match est_to_gt.get(&e) {
            None => true,
            Some(&cur) => count > *overlap.get(&(e, cur)).unwrap_or(&0),
        };
        if better {
            est_to_gt.insert(e, g);
        }
    }

    let mut per_pose = vec![vec![0.0; model.edges.len()]; unseen_states.len()];
    for (e_idx, edge) in model.edges.iter().enumerate() {
        let (Some(&gp), Some(&gc)) = (est_to_gt.get(&edge.parent), est_to_gt.get(&edge.child))
        else {
            continue;
        };
        let Some(j) = gt_joints
            .iter()
            .position(|&(p, c)| (p == gp && c == gc) || (p == gc && c == gp))
        else {
            continue;
        };
        // Observed ground-truth deviations from the canonical frame.
        let gt_dev: Vec<f64> = gt_trajectory[j][1..]
            .iter()
            .map(|&s| s - gt_trajectory[j][0])
            .collect();
        let fitted = &edge.screw.states;
        let num: f64 = fitted.iter().zip(&gt_dev).map(|(a, b)| a * b).sum();
        let den: f64 = gt_dev.iter().map(|b| b * b).sum();
        let scale = if den > 1e-12 { num / den } else { 0.0 };
        for (pose_idx, states) in unseen_states.iter().enumerate() {
            per_pose[pose_idx][e_idx] = scale * (states[j] - gt_trajectory[j][0]);
        }
    }
    per_pose
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotation_about_line;

    #[test]
    fn rand_index_examples() {
        assert_eq!(rand_index(&[0, 1, 2], &[5, 7, 9]).unwrap(), 1.0);
        assert_eq!(rand_index(&[0, 0, 0], &[0, 1, 2]).unwrap(), 0.0);
        assert_eq!(rand_index(&[0, 0, 1, 1], &[0, 0, 0, 1]).unwrap(), 0.5);
    }

    #[test]
    fn rand_index_matches_brute_force() {
        let mut rng = Rng::new(41);
        for _ in 0..100 {
            let n = 2 + rng.index(30);
            let a: Vec<usize> = (0..n).map(|_| rng.index(5)).collect();
            let b: Vec<usize> = (0..n).map(|_| rng.index(4)).collect();
            assert_eq!(rand_index(&a, &b).unwrap(), rand_index_brute_force(&a, &b));
        }
    }

    #[test]
    fn rand_index_symmetric_and_relabel_invariant() {
        let mut rng = Rng::new(42);
        for _ in 0..50 {
            let n = 2 + rng.index(20);
            let a: Vec<usize> = (0..n).map(|_| rng.index(4)).collect();
            let b: Vec<usize> = (0..n).map(|_| rng.index(3)).collect();
            assert_eq!(rand_index(&a, &b).unwrap(), rand_index(&b, &a).unwrap());
            let renamed: Vec<usize> = a.iter().map(|&l| 17 + 3 * l).collect();
            assert_eq!(
                rand_index(&a, &b).unwrap(),
                rand_index(&renamed, &b).unwrap()
            );
        }
    }

    #[test]
    fn rand_index_errors() {
        assert!(matches!(
            rand_index(&[0, 1], &[0]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            rand_index(&[0], &[0]),
            Err(Error::TooFewPoints { .. })
        ));
    }

    #[test]
    fn suite_examples() {
        let pred = vec![vec![0, 0, 1, 1], vec![0, 0, 1, 1]];
        let gt = vec![vec![2, 2, 3, 3], vec![2, 2, 3, 3]];
        assert_eq!(rand_index_suite(&pred, &gt).unwrap(), (1.0, 1.0));

        // Per-frame perfect but labels swapped across frames: pooling hurts.
        let pred = vec![vec![0, 0, 1, 1], vec![1, 1, 0, 0]];
        let (per_scan, multi_scan) = rand_index_suite(&pred, &gt).unwrap();
        assert_eq!(per_scan, 1.0);
        assert!(multi_scan < 1.0);

        let single = vec![vec![0, 1, 0, 2]];
        let gt_single = vec![vec![0, 0, 1, 1]];
        let (per, multi) = rand_index_suite(&single, &gt_single).unwrap();
        assert_eq!(per, multi);
    }

    fn path(n: usize) -> RootedTree {
        let edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
        RootedTree::from_edges(n, &edges, 0).unwrap()
    }

    fn star(leaves: usize) -> RootedTree {
        let edges: Vec<(usize, usize)> = (1..=leaves).map(|i| (0, i)).collect();
        RootedTree::from_edges(leaves + 1, &edges, 0).unwrap()
    }

    #[test]
    fn ted_examples() {
        assert_eq!(tree_edit_distance(&path(3), &path(3)), 0);
        assert_eq!(tree_edit_distance(&path(3), &path(4)), 1);
        // Star and path of equal size only share a 2-node common minor.
        let star_vs_path = tree_edit_distance(&star(3), &path(4));
        assert_eq!(
            star_vs_path,
            tree_edit_distance_oracle(&canonicalize(&star(3)), &canonicalize(&path(4)))
        );
        assert_eq!(star_vs_path, 4);
    }

    #[test]
    fn ted_matches_oracle_small() {
        for n in 1..=4 {
            for m in 1..=4 {
                for a in all_rooted_trees(n) {
                    for b in all_rooted_trees(m) {
                        let fast = ordered_tree_edit_distance(&a, &b);
                        let oracle = tree_edit_distance_oracle(&a, &b);
                        assert_eq!(fast, oracle, "trees {} vs {}", a.encoding(), b.encoding());
                    }
                }
            }
        }
    }

    #[test]
    fn ted_is_order_invariant_via_canonicalization() {
        // The same unordered tree written with different child orders.
        let a = RootedTree::from_edges(4, &[(0, 1), (0, 2), (2, 3)], 0).unwrap();
        let b = RootedTree::from_edges(4, &[(0, 2), (0, 1), (1, 3)], 0).unwrap();
        assert_eq!(tree_edit_distance(&a, &b), 0);
    }

    #[test]
    fn tree_counts_match_known_sequence() {
        // Numbers of unlabeled rooted trees: 1, 1, 2, 4, 9, 20.
        assert_eq!(all_rooted_trees(1).len(), 1);
        assert_eq!(all_rooted_trees(2).len(), 1);
        assert_eq!(all_rooted_trees(3).len(), 2);
        assert_eq!(all_rooted_trees(4).len(), 4);
        assert_eq!(all_rooted_trees(5).len(), 9);
        assert_eq!(all_rooted_trees(6).len(), 20);
    }

    #[test]
    fn reconstruction_and_flow_zero_when_equal() {
        let frame0: Vec<Vec3> = (0..20).map(|i| [i as f64 * 0.1, 0.0, 0.0]).collect();
        let motions: Vec<RigidTransform> = (0..3)
            .map(|u| rotation_about_line([0.0, 0.0, 1.0], [0.0; 3], 0.2 * u as f64))
            .collect();
        let poses = vec![motions.clone()];
        let labels0 = vec![0; 20];
        let err = reconstruction_error(&frame0, &poses, &labels0, &poses, &labels0).unwrap();
        assert_eq!(err, 0.0);

        let frames = vec![frame0.clone(), frame0.clone(), frame0];
        let labels = vec![labels0.clone(), labels0.clone(), labels0.clone()];
        let err = flow_error(&frames, &poses, &labels, &poses, &labels).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn reconstruction_uniform_offset() {
        let frame0: Vec<Vec3> = (0..10).map(|i| [i as f64, 0.0, 0.0]).collect();
        let k = 4;
        let gt = vec![vec![RigidTransform::IDENTITY; k]];
        // The estimate shifts everything by 0.1 at every step past 0.
        let mut est_track = vec![RigidTransform::IDENTITY; k];
        for pose in est_track.iter_mut().skip(1) {
            *pose = RigidTransform::from_translation([0.1, 0.0, 0.0]);
        }
        let est = vec![est_track];
        let labels = vec![0; 10];
        let err = reconstruction_error(&frame0, &gt, &labels, &est, &labels).unwrap();
        assert!((err - 0.01).abs() < 1e-15, "{err}");
    }

    #[test]
    fn flow_error_uniform_drift() {
        let cloud: Vec<Vec3> = (0..10).map(|i| [i as f64, 0.0, 0.0]).collect();
        let k = 3;
        let frames = vec![cloud.clone(), cloud.clone(), cloud];
        let labels = vec![vec![0; 10]; k];
        let gt = vec![vec![RigidTransform::IDENTITY; k]];
        let d = [0.2, 0.1, 0.0];
        let est = vec![(0..k)
            .map(|u| RigidTransform::from_translation(geometry::scale(d, u as f64)))
            .collect::<Vec<_>>()];
        let err = flow_error(&frames, &gt, &labels, &est, &labels).unwrap();
        assert!((err - geometry::norm_sq(d)).abs() < 1e-12, "{err}");
    }

    #[test]
    fn reanimate_error_empty_unseen_errors() {
        let model = KinematicModel {
            parts: vec![0],
            root: 0,
            edges: vec![],
            rest_pose: vec![RigidTransform::IDENTITY],
            root_track: vec![RigidTransform::IDENTITY],
        };
        assert_eq!(
            reanimate_error(&model, &[[0.0; 3]], &[0], &[], 64, 0),
            Err(Error::MissingGroundTruth)
        );
    }

    #[test]
    fn reanimate_error_rigid_offset() {
        // A single static part whose held-out "articulation" is the same
        // cloud shifted by d: every matched pair is offset by exactly d.
        let mut rng = Rng::new(9);
        let points: Vec<Vec3> = (0..300)
            .map(|_| [rng.normal(), rng.normal(), rng.normal()])
            .collect();
        let labels = vec![0; points.len()];
        let model = KinematicModel {
            parts: vec![0],
            root: 0,
            edges: vec![],
            rest_pose: vec![RigidTransform::IDENTITY],
            root_track: vec![RigidTransform::IDENTITY],
        };
        let d = [0.3, -0.2, 0.5];
        let shifted: Vec<Vec3> = points.iter().map(|&p| geometry::add(p, d)).collect();
        let err = reanimate_error(&model, &points, &labels, &[(vec![], shifted)], 256, 3).unwrap();
        let expected = geometry::norm_sq(d);
        assert!(
            (err - expected).abs() < 0.1 * expected,
            "{err} vs {expected}"
        );
    }
}
