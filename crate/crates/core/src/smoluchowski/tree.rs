//! Finite binary ultrametric trees and the coalescing mark system on them.
//!
//! Node `i` stands for the branch that ends at time `end(i)` (a branch point, or the horizon for
//! a leaf). The root branch starts at time 0. Children always have larger indices than their
//! parent, so a reverse scan visits every node after its descendants.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::mechanism::{FlowEvaluator, Mass};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Node {
    end: f64,
    parent: Option<usize>,
    children: Option<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkedTree {
    horizon: f64,
    nodes: Vec<Node>,
    leaves: Vec<usize>,
}

impl MarkedTree {
    /// A single branch of length `horizon`.
    pub fn single(horizon: f64) -> Result<Self> {
        Self::from_nodes(horizon, &[(horizon, None)])
    }

    /// Builds a tree from `(end time, children)` pairs; node 0 is the root branch.
    ///
    /// Children must have larger indices than their parent, every node other than the root must
    /// have exactly one parent, end times must not decrease from parent to child, and leaves must
    /// end at `horizon`.
    pub fn from_nodes(horizon: f64, spec: &[(f64, Option<[usize; 2]>)]) -> Result<Self> {
        if !(horizon >= 0.0) || !horizon.is_finite() {
            return Err(domain(format!("tree horizon must be finite and >= 0, got {horizon}")));
        }
        if spec.is_empty() {
            return Err(domain("a tree needs at least the root branch"));
        }
        let mut nodes: Vec<Node> =
            spec.iter().map(|&(end, children)| Node { end, parent: None, children }).collect();
        for i in 0..nodes.len() {
            let end = nodes[i].end;
            if !(end >= 0.0 && end <= horizon) {
                return Err(domain(format!("node {i} ends at {end}, outside [0, {horizon}]")));
            }
            match nodes[i].children {
                None if end != horizon => {
                    return Err(domain(format!("leaf {i} ends at {end} before the horizon")));
                }
                Some(kids) => {
                    for k in kids {
                        if k <= i || k >= nodes.len() {
                            return Err(domain(format!("node {i} has invalid child {k}")));
                        }
                        if nodes[k].parent.is_some() {
                            return Err(domain(format!("node {k} has two parents")));
                        }
                        if nodes[k].end < end {
                            return Err(domain(format!("child {k} ends before its parent {i}")));
                        }
                        nodes[k].parent = Some(i);
                    }
                    if kids[0] == kids[1] {
                        return Err(domain(format!("node {i} lists the same child twice")));
                    }
                }
                None => {}
            }
        }
        if let Some(orphan) = (1..nodes.len()).find(|&i| nodes[i].parent.is_none()) {
            return Err(domain(format!("node {orphan} is not attached to the root")));
        }
        let leaves = (0..nodes.len()).filter(|&i| nodes[i].children.is_none()).collect();
        Ok(MarkedTree { horizon, nodes, leaves })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    pub fn children(&self, node: usize) -> Option<[usize; 2]> {
        self.nodes[node].children
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        self.nodes[node].parent
    }

    /// Time at which the branch of `node` ends.
    pub fn end(&self, node: usize) -> f64 {
        self.nodes[node].end
    }

    pub fn start(&self, node: usize) -> f64 {
        self.nodes[node].parent.map_or(0.0, |p| self.nodes[p].end)
    }

    pub fn branch_length(&self, node: usize) -> f64 {
        self.end(node) - self.start(node)
    }

    /// Branch times of the internal nodes, in index order.
    pub fn split_times(&self) -> Vec<f64> {
        self.nodes.iter().filter(|n| n.children.is_some()).map(|n| n.end).collect()
    }

    /// Replaces leaf `leaf` by a branch point at `time` with two fresh leaves.
    pub fn split(&self, leaf: usize, time: f64) -> Result<MarkedTree> {
        if self.nodes.get(leaf).is_none_or(|n| n.children.is_some()) {
            return Err(domain(format!("node {leaf} is not a leaf")));
        }
        if !(time >= self.start(leaf) && time <= self.horizon) {
            return Err(domain(format!("split time {time} is outside the branch of leaf {leaf}")));
        }
        let mut spec: Vec<_> = self.nodes.iter().map(|n| (n.end, n.children)).collect();
        let k = spec.len();
        spec[leaf] = (time, Some([k, k + 1]));
        spec.push((self.horizon, None));
        spec.push((self.horizon, None));
        MarkedTree::from_nodes(self.horizon, &spec)
    }
}

/// Samples the genealogy of a particle system started at time 0 with one particle, where every
/// particle alive at time `t` splits at rate `1 / (horizon - t + delta)`, stopped at `horizon`.
///
/// The integrated rate from `s` to `t` is `ln((horizon - s + delta) / (horizon - t + delta))`, so
/// the next split of a particle born at `s` solves `horizon - t + delta = (horizon - s + delta) e^-E`.
pub fn sample_inhomogeneous_yule<R: Rng + ?Sized>(
    horizon: f64,
    delta: f64,
    rng: &mut R,
) -> Result<MarkedTree> {
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(domain(format!("horizon must be finite and >= 0, got {horizon}")));
    }
    if !(delta > 0.0) {
        return Err(domain(format!(
            "delta = {delta}: the tree has infinitely many leaves at delta = 0; use the \
             self-similar representation instead"
        )));
    }
    let mut nodes = vec![Node { end: f64::NAN, parent: None, children: None }];
    let mut pending = vec![0usize];
    while let Some(i) = pending.pop() {
        let start = nodes[i].parent.map_or(0.0, |p| nodes[p].end);
        let e: f64 = Exp1.sample(rng);
        let end = horizon + delta - (horizon - start + delta) * (-e).exp();
        if delta.is_infinite() || !(end < horizon) || end <= start {
            nodes[i].end = horizon;
            continue;
        }
        nodes[i].end = end;
        let k = nodes.len();
        nodes[i].children = Some([k, k + 1]);
        for _ in 0..2 {
            nodes.push(Node { end: f64::NAN, parent: Some(i), children: None });
        }
        pending.extend([k + 1, k]);
    }
    let leaves = (0..nodes.len()).filter(|&i| nodes[i].children.is_none()).collect();
    Ok(MarkedTree { horizon, nodes, leaves })
}

/// Random ultrametric tree with `leaves` leaves: `leaves - 1` uniform split times on
/// `(0, horizon)`, each splitting a uniformly chosen lineage alive at that time.
pub fn random_tree<R: Rng + ?Sized>(leaves: usize, horizon: f64, rng: &mut R) -> Result<MarkedTree> {
    if leaves == 0 || !(horizon > 0.0) {
        return Err(domain("random tree needs at least one leaf and a positive horizon"));
    }
    let mut times: Vec<f64> = (1..leaves).map(|_| rng.random::<f64>() * horizon).collect();
    times.sort_by(f64::total_cmp);
    let mut tree = MarkedTree::single(horizon)?;
    for t in times {
        let live = tree.leaves().to_vec();
        let pick = live[rng.random_range(0..live.len())];
        tree = tree.split(pick, t)?;
    }
    Ok(tree)
}

/// Root mark `F(tree, marks)`: marks follow `x' = -psi(x)` along branches from the leaves to the
/// root and add up at branch points. `marks` are given in the order of [`MarkedTree::leaves`].
pub fn propagate_marks(tree: &MarkedTree, marks: &[Mass], flow: &FlowEvaluator) -> Result<Mass> {
    if marks.len() != tree.leaf_count() {
        return Err(domain(format!(
            "{} marks for a tree with {} leaves",
            marks.len(),
            tree.leaf_count()
        )));
    }
    if let Some(bad) = marks.iter().find(|m| matches!(m, Mass::Finite(x) if !(*x >= 0.0) || x.is_infinite())) {
        return Err(domain(format!("leaf marks must be >= 0, got {bad:?}")));
    }
    let mut at_end = vec![Mass::ZERO; tree.node_count()];
    for (&leaf, &m) in tree.leaves().iter().zip(marks) {
        at_end[leaf] = m;
    }
    for node in (0..tree.node_count()).rev() {
        if let Some([a, b]) = tree.children(node) {
            at_end[node] = at_start(tree, flow, a, at_end[a]) + at_start(tree, flow, b, at_end[b]);
        }
    }
    Ok(at_start(tree, flow, tree.root(), at_end[tree.root()]))
}

fn at_start(tree: &MarkedTree, flow: &FlowEvaluator, node: usize, m: Mass) -> Mass {
    let len = tree.branch_length(node);
    if len == 0.0 {
        m
    } else {
        Mass::Finite(flow.flow_unchecked(m, len))
    }
}

/// Closed-form brackets on the root mark of any ultrametric tree of depth `horizon` with the
/// given leaf marks: all leaves merging at the leaves (lower) and all leaves merging at the root
/// (upper).
pub fn degenerate_tree_bounds(marks: &[Mass], horizon: f64, flow: &FlowEvaluator) -> Result<(Mass, Mass)> {
    if marks.is_empty() {
        return Err(domain("no marks"));
    }
    let total = marks.iter().fold(Mass::ZERO, |acc, &m| acc + m);
    let lower = flow.flow_mass(total, horizon)?;
    let mut upper = Mass::ZERO;
    for &m in marks {
        upper = upper + flow.flow_mass(m, horizon)?;
    }
    Ok((lower, upper))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanism::BranchingMechanism;
    use crate::rng::Streams;
    use crate::stats::mean_stderr;

    fn quad() -> FlowEvaluator {
        BranchingMechanism::quadratic(1.0).unwrap().flow()
    }

    #[test]
    fn single_leaf_flows_the_mark() {
        let t = MarkedTree::single(2.0).unwrap();
        let f = propagate_marks(&t, &[Mass::Finite(3.0)], &quad()).unwrap();
        assert!((f.to_f64() - quad().flow(Mass::Finite(3.0), 2.0).unwrap()).abs() < 1e-15);
        let f = propagate_marks(&t, &[Mass::Infinite], &quad()).unwrap();
        assert!((f.to_f64() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn star_tree() {
        let t = MarkedTree::from_nodes(1.0, &[(0.0, Some([1, 2])), (1.0, None), (1.0, None)]).unwrap();
        let f = propagate_marks(&t, &[Mass::Finite(1.0); 2], &quad()).unwrap();
        assert!((f.to_f64() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_malformed_trees() {
        assert!(MarkedTree::from_nodes(1.0, &[(0.5, None)]).is_err());
        assert!(MarkedTree::from_nodes(1.0, &[(0.5, Some([1, 1])), (1.0, None)]).is_err());
        assert!(MarkedTree::from_nodes(1.0, &[(0.5, Some([1, 2])), (0.2, None), (1.0, None)]).is_err());
        assert!(MarkedTree::from_nodes(1.0, &[(1.0, None), (1.0, None)]).is_err());
        let t = MarkedTree::single(1.0).unwrap();
        assert!(propagate_marks(&t, &[Mass::Finite(-1.0)], &quad()).is_err());
        assert!(propagate_marks(&t, &[], &quad()).is_err());
    }

    #[test]
    fn yule_leaf_count_mean() {
        let s = Streams::new(4);
        let mut rng = s.get("yule", 0);
        let counts: Vec<f64> = (0..20_000)
            .map(|_| sample_inhomogeneous_yule(1.0, 1.0, &mut rng).unwrap().leaf_count() as f64)
            .collect();
        let m = mean_stderr(&counts).unwrap();
        assert!((m.mean - 2.0).abs() < 4.0 * m.stderr, "{m:?}");
    }

    #[test]
    fn yule_structure() {
        let s = Streams::new(8);
        let mut rng = s.get("yule", 0);
        for _ in 0..200 {
            let t = sample_inhomogeneous_yule(2.0, 0.3, &mut rng).unwrap();
            assert_eq!(t.node_count(), 2 * t.leaf_count() - 1);
            for i in 0..t.node_count() {
                if let Some([a, b]) = t.children(i) {
                    assert!(t.end(i) < 2.0 && t.end(i) > t.start(i));
                    assert_eq!(t.parent(a), Some(i));
                    assert_eq!(t.parent(b), Some(i));
                } else {
                    assert_eq!(t.end(i), 2.0);
                }
            }
        }
        let t = sample_inhomogeneous_yule(2.0, f64::INFINITY, &mut rng).unwrap();
        assert_eq!(t.leaf_count(), 1);
        assert!(sample_inhomogeneous_yule(1.0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn random_tree_has_requested_leaves() {
        let mut rng = Streams::new(1).get("t", 0);
        let t = random_tree(5, 1.0, &mut rng).unwrap();
        assert_eq!(t.leaf_count(), 5);
        assert_eq!(t.split_times().len(), 4);
    }
}
