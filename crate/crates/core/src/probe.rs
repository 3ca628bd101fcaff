//! Downstream evaluation with the encoder frozen: embed instances,
//! fit a multinomial logistic head on top, report micro-F1 over
//! repeated random splits.

use serde::{Deserialize, Serialize};

use crate::encoder::{embed_batch, ModelParams, NORM_FLOOR};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::parallel::par_map;
use crate::rng::Rng;
use crate::sampler::{make_instance, SamplerParams};

const TAG_NODE_EMBED: u64 = 0x20;
const TAG_SPLIT: u64 = 0x21;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub lr: f64,
    pub steps: usize,
    /// L2 on the weight matrix only; the bias is left free.
    pub weight_decay: f64,
    pub splits: usize,
    pub test_fraction: f64,
    pub seed: u64,
    pub threads: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            lr: 0.1,
            steps: 500,
            weight_decay: 1e-4,
            splits: 10,
            test_fraction: 0.1,
            seed: 0,
            threads: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub mean_f1: f64,
    pub std_f1: f64,
    pub per_split: Vec<f64>,
}

/// One embedding per node: each node anchors its own walk-sampled
/// instance, seeded by node id so the result is independent of thread
/// count and node visit order.
pub fn embed_nodes(
    params: &ModelParams,
    g: &Graph,
    sp: &SamplerParams,
    seed: u64,
    threads: usize,
) -> Vec<Vec<f64>> {
    let instances = par_map(threads, g.num_nodes(), |v| {
        let mut rng = Rng::stream(seed, TAG_NODE_EMBED, v as u64);
        make_instance(g, v, sp, &mut rng)
    });
    let refs: Vec<_> = instances.iter().collect();
    embed_batch(params, &refs, threads)
        .into_iter()
        .map(|(emb, _)| emb)
        .collect()
}

/// Whole-graph embedding: mean of the node embeddings, renormalized.
pub fn embed_graph(
    params: &ModelParams,
    g: &Graph,
    sp: &SamplerParams,
    seed: u64,
    threads: usize,
) -> Vec<f64> {
    let node_embs = embed_nodes(params, g, sp, seed, threads);
    let d = node_embs[0].len();
    let mut mean = vec![0.0; d];
    for e in &node_embs {
        for (m, x) in mean.iter_mut().zip(e) {
            *m += x;
        }
    }
    let n = node_embs.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_FLOOR);
    mean.iter_mut().for_each(|m| *m /= norm);
    mean
}

/// Multinomial logistic head fit by full-batch gradient descent from a
/// zero start (the objective is convex, so no random init is needed).
/// Returns (weights k x d row-major, biases k).
pub fn train_logistic(
    x: &[&[f64]],
    y: &[usize],
    n_classes: usize,
    cfg: &ProbeConfig,
) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let d = x[0].len();
    let k = n_classes;
    let mut w = vec![0.0; k * d];
    let mut b = vec![0.0; k];
    let mut gw = vec![0.0; k * d];
    let mut gb = vec![0.0; k];
    let mut logits = vec![0.0; k];
    for _ in 0..cfg.steps {
        gw.iter_mut().for_each(|v| *v = 0.0);
        gb.iter_mut().for_each(|v| *v = 0.0);
        for (xi, &yi) in x.iter().zip(y) {
            for c in 0..k {
                let row = &w[c * d..(c + 1) * d];
                logits[c] = b[c] + row.iter().zip(xi.iter()).map(|(a, b)| a * b).sum::<f64>();
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for l in logits.iter_mut() {
                *l = (*l - max).exp();
                z += *l;
            }
            for c in 0..k {
                let p = logits[c] / z;
                let err = p - if c == yi { 1.0 } else { 0.0 };
                gb[c] += err;
                for (gwj, xj) in gw[c * d..(c + 1) * d].iter_mut().zip(xi.iter()) {
                    *gwj += err * xj;
                }
            }
        }
        let inv_n = 1.0 / n as f64;
        for (wj, gwj) in w.iter_mut().zip(&gw) {
            *wj -= cfg.lr * (gwj * inv_n + cfg.weight_decay * *wj);
        }
        for (bj, gbj) in b.iter_mut().zip(&gb) {
            *bj -= cfg.lr * gbj * inv_n;
        }
    }
    (w, b)
}

pub fn predict_logistic(w: &[f64], b: &[f64], xi: &[f64]) -> usize {
    let d = xi.len();
    let k = b.len();
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for c in 0..k {
        let s = b[c] + w[c * d..(c + 1) * d].iter().zip(xi).map(|(a, b)| a * b).sum::<f64>();
        if s > best_score {
            best_score = s;
            best = c;
        }
    }
    best
}

/// Micro-averaged F1 from pooled per-class true/false positives and
/// false negatives.
pub fn micro_f1(pred: &[usize], gold: &[usize], n_classes: usize) -> f64 {
    assert_eq!(pred.len(), gold.len());
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fal_n = vec![0usize; n_classes];
    for (&p, &g) in pred.iter().zip(gold) {
        if p == g {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fal_n[g] += 1;
        }
    }
    let stp: usize = tp.iter().sum();
    let sfp: usize = fp.iter().sum();
    let sfn: usize = fal_n.iter().sum();
    if stp == 0 {
        return 0.0;
    }
    let precision = stp as f64 / (stp + sfp) as f64;
    let recall = stp as f64 / (stp + sfn) as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Draws a train/test split, redrawing (at most 100 times) until the
/// training side covers every class present and the test side is
/// non-empty.
fn draw_split(
    labels: &[usize],
    n_classes: usize,
    test_fraction: f64,
    rng: &mut Rng,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = labels.len();
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    for _ in 0..100 {
        rng.shuffle(&mut idx);
        let (test, train) = idx.split_at(n_test);
        let mut seen = vec![false; n_classes];
        for &i in train {
            seen[labels[i]] = true;
        }
        if (0..n_classes).all(|c| seen[c] || !labels.contains(&c)) {
            let mut train = train.to_vec();
            let mut test = test.to_vec();
            train.sort_unstable();
            test.sort_unstable();
            return Ok((train, test));
        }
    }
    Err(Error::Labels(
        "no train/test split covered every class in 100 draws".into(),
    ))
}

/// Fits the head on repeated random splits of frozen embeddings and
/// reports the micro-F1 spread.
pub fn logistic_probe(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    if embeddings.is_empty() || embeddings.len() != labels.len() {
        return Err(Error::Labels("need one label per embedding".into()));
    }
    let n_classes = labels.iter().max().unwrap() + 1;
    if n_classes < 2 {
        return Err(Error::Labels("need at least two classes".into()));
    }
    let mut per_split = Vec::with_capacity(cfg.splits);
    for s in 0..cfg.splits {
        let mut rng = Rng::stream(cfg.seed, TAG_SPLIT, s as u64);
        let (train, test) = draw_split(labels, n_classes, cfg.test_fraction, &mut rng)?;
        let x_train: Vec<&[f64]> = train.iter().map(|&i| embeddings[i].as_slice()).collect();
        let y_train: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
        let (w, b) = train_logistic(&x_train, &y_train, n_classes, cfg);
        let pred: Vec<usize> = test
            .iter()
            .map(|&i| predict_logistic(&w, &b, &embeddings[i]))
            .collect();
        let gold: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
        per_split.push(micro_f1(&pred, &gold, n_classes));
    }
    let mean_f1 = crate::stats::mean(&per_split);
    let std_f1 = crate::stats::population_variance(&per_split).sqrt();
    Ok(ProbeResult { mean_f1, std_f1, per_split })
}
