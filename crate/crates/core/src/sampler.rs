//! Subgraph instances for contrastive training.
//!
//! An instance is the subgraph induced by a random walk with restart
//! from an anchor node, plus a feature row per node: the leading
//! eigenvectors of the subgraph's normalized Laplacian (positional
//! block), log(1 + degree), and an anchor indicator. Two walks from the
//! same anchor form a positive pair; instances from different anchors
//! act as negatives.

use serde::{Deserialize, Serialize};

use crate::graph::Graph;
use crate::linalg::{jacobi_eigen, normalized_laplacian};
use crate::parallel::par_map;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerParams {
    /// Probability of jumping back to the anchor at each step.
    pub restart_prob: f64,
    /// Number of walk steps per instance.
    pub walk_steps: usize,
    /// Visited-set truncation, in first-visit order.
    pub max_nodes: usize,
    /// Feature width: max_nodes - 2 positional columns would be the
    /// ceiling; anything from 3 up works.
    pub d_feat: usize,
}

impl Default for SamplerParams {
    fn default() -> Self {
        SamplerParams {
            restart_prob: 0.8,
            walk_steps: 256,
            max_nodes: 64,
            d_feat: 32,
        }
    }
}

/// One training example: an induced subgraph with its feature matrix.
/// The anchor always has local id 0.
#[derive(Clone, Debug)]
pub struct Instance {
    pub graph: Graph,
    /// Row-major num_nodes x d_feat.
    pub features: Vec<f64>,
    pub d_feat: usize,
}

/// Nodes visited by a random walk with restart from `anchor`, in
/// first-visit order (anchor first), truncated to `max_nodes`.
pub fn rwr_node_set(g: &Graph, anchor: usize, params: &SamplerParams, rng: &mut Rng) -> Vec<u32> {
    let mut visited = vec![anchor as u32];
    let mut seen = std::collections::HashSet::new();
    seen.insert(anchor as u32);
    let mut pos = anchor;
    for _ in 0..params.walk_steps {
        if visited.len() >= params.max_nodes {
            break;
        }
        if g.degree(pos) == 0 || rng.next_f64() < params.restart_prob {
            pos = anchor;
            continue;
        }
        let ns = g.neighbors(pos);
        pos = ns[rng.below(ns.len())] as usize;
        if seen.insert(pos as u32) {
            visited.push(pos as u32);
        }
    }
    visited
}

/// Feature matrix for a subgraph: columns 0..d_feat-2 hold the
/// eigenvectors of the normalized Laplacian for the smallest
/// eigenvalues (zero-padded when the subgraph has fewer nodes than
/// columns, and zero entirely for an edgeless subgraph), column
/// d_feat-2 is ln(1 + degree), column d_feat-1 marks the anchor.
pub fn build_features(sub: &Graph, anchor_local: usize, d_feat: usize) -> Vec<f64> {
    assert!(d_feat >= 3, "need room for positional, degree and anchor columns");
    let n = sub.num_nodes();
    let k = d_feat - 2;
    let mut feat = vec![0.0; n * d_feat];
    if sub.num_edges() > 0 {
        let l = normalized_laplacian(sub);
        let (_, vecs) = jacobi_eigen(&l, n);
        for i in 0..n {
            for c in 0..k.min(n) {
                feat[i * d_feat + c] = vecs[i * n + c];
            }
        }
    }
    for i in 0..n {
        feat[i * d_feat + d_feat - 2] = (1.0 + sub.degree(i) as f64).ln();
    }
    feat[anchor_local * d_feat + d_feat - 1] = 1.0;
    feat
}

pub fn make_instance(g: &Graph, anchor: usize, params: &SamplerParams, rng: &mut Rng) -> Instance {
    let nodes = rwr_node_set(g, anchor, params, rng);
    let sub = g.induce(&nodes).expect("walk stays in range");
    let features = build_features(&sub, 0, params.d_feat);
    Instance {
        graph: sub,
        features,
        d_feat: params.d_feat,
    }
}

/// Two independent walks from the same anchor.
pub fn positive_pair(
    g: &Graph,
    anchor: usize,
    params: &SamplerParams,
    rng: &mut Rng,
) -> (Instance, Instance) {
    let a = make_instance(g, anchor, params, rng);
    let b = make_instance(g, anchor, params, rng);
    (a, b)
}

/// `count` positive pairs with anchors uniform over the graph's nodes.
/// Pair `i` draws from stream `(seed, tag, i)`, so the result does not
/// depend on the thread count.
pub fn sample_pairs(
    g: &Graph,
    params: &SamplerParams,
    count: usize,
    seed: u64,
    tag: u64,
    threads: usize,
) -> Vec<(Instance, Instance)> {
    par_map(threads, count, |i| {
        let mut rng = Rng::stream(seed, tag, i as u64);
        let anchor = rng.below(g.num_nodes());
        positive_pair(g, anchor, params, &mut rng)
    })
}
