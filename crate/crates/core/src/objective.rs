//! Contrastive objective, predictive uncertainty and the anti-forgetting
//! penalty.
//!
//! Training pairs two subgraph instances of the same anchor as query and
//! positive key; the other keys in the batch act as negatives. The
//! temperature-scaled softmax cross-entropy over key similarities is the
//! per-instance loss, and that same loss read off a frozen model is the
//! predictive uncertainty of a sample (averaged over samples, of a
//! graph). The proximal penalty is a diagonal quadratic anchored at the
//! parameters saved when training switched away from the previous graph,
//! weighted by a Fisher estimate (or by ones, which turns it into plain
//! L2) and restricted to the leading layers.

use crate::encoder::{self, ModelParams};
use crate::graph::Graph;
use crate::parallel::par_map;
use crate::sampler::{sample_pairs, Instance, SamplerParams};

/// Softmax cross-entropy over scaled inner products. Row `i` of the
/// logit matrix is query i against every key; the diagonal is the
/// positive. Returns per-instance losses and the exact gradients of
/// their sum with respect to each query and key embedding. The row
/// maximum is subtracted before exponentiation, so extreme logits stay
/// finite.
pub fn info_nce(
    queries: &[Vec<f64>],
    keys: &[Vec<f64>],
    tau: f64,
) -> (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let b = queries.len();
    assert_eq!(b, keys.len(), "query/key count mismatch");
    assert!(b >= 2, "contrastive batch needs at least two pairs");
    let d = queries[0].len();

    let mut losses = vec![0.0; b];
    let mut grad_q = vec![vec![0.0; d]; b];
    let mut grad_k = vec![vec![0.0; d]; b];
    let mut probs = vec![0.0; b];
    for i in 0..b {
        for (j, key) in keys.iter().enumerate() {
            probs[j] = queries[i].iter().zip(key).map(|(a, b)| a * b).sum::<f64>() / tau;
        }
        let max = probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for p in probs.iter_mut() {
            *p = (*p - max).exp();
            denom += *p;
        }
        losses[i] = denom.ln() - probs[i].ln();
        for j in 0..b {
            let g = probs[j] / denom - if i == j { 1.0 } else { 0.0 };
            for c in 0..d {
                grad_q[i][c] += g * keys[j][c] / tau;
                grad_k[j][c] += g * queries[i][c] / tau;
            }
        }
    }
    (losses, grad_q, grad_k)
}

/// Per-instance losses of a batch of positive pairs under a frozen
/// model.
pub fn batch_losses(
    params: &ModelParams,
    pairs: &[(Instance, Instance)],
    tau: f64,
    threads: usize,
) -> Vec<f64> {
    let q: Vec<Vec<f64>> = par_map(threads, pairs.len(), |i| encoder::forward(params, &pairs[i].0).0);
    let k: Vec<Vec<f64>> = par_map(threads, pairs.len(), |i| encoder::forward(params, &pairs[i].1).0);
    info_nce(&q, &k, tau).0
}

/// Uncertainty of one sample: its contrastive loss with `context`
/// supplying the negatives.
pub fn instance_uncertainty(
    params: &ModelParams,
    target: &(Instance, Instance),
    context: &[(Instance, Instance)],
    tau: f64,
) -> f64 {
    let mut q = vec![encoder::forward(params, &target.0).0];
    let mut k = vec![encoder::forward(params, &target.1).0];
    for pair in context {
        q.push(encoder::forward(params, &pair.0).0);
        k.push(encoder::forward(params, &pair.1).0);
    }
    info_nce(&q, &k, tau).0[0]
}

/// Uncertainty of a graph: mean loss over `m` fresh instances, drawn and
/// batched exactly like training batches (negatives come from the same
/// graph). Batch `ceil(m / batch)` full batches are evaluated and the
/// first `m` losses averaged, so `m = 1` reduces to a single instance's
/// loss.
#[allow(clippy::too_many_arguments)]
pub fn graph_uncertainty(
    params: &ModelParams,
    g: &Graph,
    sp: &SamplerParams,
    m: usize,
    batch: usize,
    tau: f64,
    seed: u64,
    threads: usize,
) -> f64 {
    assert!(m >= 1 && batch >= 2);
    let n_batches = m.div_ceil(batch);
    let pairs = sample_pairs(g, sp, n_batches * batch, seed, 0, threads);
    let mut losses = Vec::with_capacity(n_batches * batch);
    for chunk in pairs.chunks(batch) {
        losses.extend(batch_losses(params, chunk, tau, threads));
    }
    losses.truncate(m);
    losses.iter().sum::<f64>() / m as f64
}

/// Diagonal Fisher estimate: the squared gradient of the mean batch
/// loss, averaged over `n_batches` independent batches. Duplicating the
/// batch list leaves the estimate unchanged.
#[allow(clippy::too_many_arguments)]
pub fn fisher_diagonal(
    params: &ModelParams,
    g: &Graph,
    sp: &SamplerParams,
    n_batches: usize,
    batch: usize,
    tau: f64,
    seed: u64,
    threads: usize,
) -> Vec<f64> {
    assert!(n_batches >= 1 && batch >= 2);
    let mut fisher = vec![0.0; params.theta.len()];
    let mut grad = vec![0.0; params.theta.len()];
    for bi in 0..n_batches {
        let pairs = sample_pairs(g, sp, batch, seed, bi as u64 + 1, threads);
        grad.iter_mut().for_each(|x| *x = 0.0);
        batch_gradient(params, &pairs, tau, threads, &mut grad);
        let scale = 1.0 / batch as f64;
        for (f, &gd) in fisher.iter_mut().zip(&grad) {
            let g_mean = gd * scale;
            *f += g_mean * g_mean;
        }
    }
    fisher.iter_mut().for_each(|x| *x /= n_batches as f64);
    fisher
}

/// Gradient of the summed contrastive loss of a batch, accumulated into
/// `grad`. Returns the per-instance losses.
pub fn batch_gradient(
    params: &ModelParams,
    pairs: &[(Instance, Instance)],
    tau: f64,
    threads: usize,
    grad: &mut [f64],
) -> Vec<f64> {
    let q_fwd = par_map(threads, pairs.len(), |i| encoder::forward(params, &pairs[i].0));
    let k_fwd = par_map(threads, pairs.len(), |i| encoder::forward(params, &pairs[i].1));
    let q: Vec<Vec<f64>> = q_fwd.iter().map(|(e, _)| e.clone()).collect();
    let k: Vec<Vec<f64>> = k_fwd.iter().map(|(e, _)| e.clone()).collect();
    let (losses, gq, gk) = info_nce(&q, &k, tau);
    for (i, pair) in pairs.iter().enumerate() {
        encoder::backward(params, &pair.0, &q_fwd[i].1, &gq[i], grad);
        encoder::backward(params, &pair.1, &k_fwd[i].1, &gk[i], grad);
    }
    losses
}

/// The quadratic proximal penalty
/// (lambda / 2) * sum_j mask_j fisher_j (theta_j - anchor_j)^2.
/// `fisher = None` means identity weights (plain L2 toward the anchor).
pub fn proximal_penalty(
    theta: &[f64],
    anchor: &[f64],
    fisher: Option<&[f64]>,
    mask: &[bool],
    lambda: f64,
) -> f64 {
    let mut acc = 0.0;
    for j in 0..theta.len() {
        if !mask[j] {
            continue;
        }
        let w = fisher.map_or(1.0, |f| f[j]);
        let d = theta[j] - anchor[j];
        acc += w * d * d;
    }
    0.5 * lambda * acc
}

/// Gradient of [`proximal_penalty`], accumulated into `grad`.
pub fn proximal_grad(
    theta: &[f64],
    anchor: &[f64],
    fisher: Option<&[f64]>,
    mask: &[bool],
    lambda: f64,
    grad: &mut [f64],
) {
    for j in 0..theta.len() {
        if !mask[j] {
            continue;
        }
        let w = fisher.map_or(1.0, |f| f[j]);
        grad[j] += lambda * w * (theta[j] - anchor[j]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::graph::Graph;
    use crate::rng::Rng;

    fn unit(d: usize, at: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[at] = 1.0;
        v
    }

    fn ring(n: usize) -> Graph {
        let edges: Vec<(u32, u32)> = (0..n as u32).map(|i| (i, (i + 1) % n as u32)).collect();
        Graph::from_edges(n, &edges)
    }

    fn small_setup() -> (ModelParams, SamplerParams, Graph) {
        let cfg = EncoderConfig {
            d_feat: 5,
            hidden: 6,
            layers: 2,
            d_emb: 4,
        };
        let params = ModelParams::init(cfg, &mut Rng::new(3));
        let sp = SamplerParams {
            restart_prob: 0.6,
            walk_steps: 48,
            max_nodes: 8,
            d_feat: 5,
        };
        (params, sp, ring(20))
    }

    #[test]
    fn uniform_logits_give_ln_b() {
        // Identical embeddings make every inner product equal, so the
        // softmax is uniform and each loss is exactly ln B.
        for b in [2usize, 4, 8] {
            let e: Vec<Vec<f64>> = (0..b).map(|_| unit(4, 1)).collect();
            let (losses, _, _) = info_nce(&e, &e, 0.07);
            for l in losses {
                assert!((l - (b as f64).ln()).abs() < 1e-10, "B={b}");
            }
        }
    }

    #[test]
    fn orthonormal_pairs_reference_loss() {
        // Diagonal logit 1, off-diagonal 0 at tau=1 and B=3:
        // loss = ln(1 + 2/e).
        let e: Vec<Vec<f64>> = (0..3).map(|i| unit(3, i)).collect();
        let (losses, _, _) = info_nce(&e, &e, 1.0);
        let want = (1.0 + 2.0 / std::f64::consts::E).ln();
        for l in losses {
            assert!((l - want).abs() < 1e-12);
        }
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let big: Vec<Vec<f64>> = vec![vec![40.0, 0.0], vec![0.0, 40.0], vec![-40.0, 0.0]];
        let (losses, gq, gk) = info_nce(&big, &big, 0.07);
        for l in &losses {
            assert!(l.is_finite());
        }
        for g in gq.iter().chain(&gk) {
            assert!(g.iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn embedding_gradients_match_finite_differences() {
        let mut rng = Rng::new(8);
        let b = 5;
        let d = 6;
        let mut q: Vec<Vec<f64>> = (0..b)
            .map(|_| (0..d).map(|_| rng.next_f64() - 0.5).collect())
            .collect();
        let mut k: Vec<Vec<f64>> = (0..b)
            .map(|_| (0..d).map(|_| rng.next_f64() - 0.5).collect())
            .collect();
        let tau = 0.4;
        let (_, gq, gk) = info_nce(&q, &k, tau);
        let total = |q: &[Vec<f64>], k: &[Vec<f64>]| info_nce(q, k, tau).0.iter().sum::<f64>();
        let h = 1e-6;
        for i in 0..b {
            for c in 0..d {
                let orig = q[i][c];
                q[i][c] = orig + h;
                let up = total(&q, &k);
                q[i][c] = orig - h;
                let down = total(&q, &k);
                q[i][c] = orig;
                let fd = (up - down) / (2.0 * h);
                let rel = (fd - gq[i][c]).abs() / fd.abs().max(gq[i][c].abs()).max(1e-8);
                assert!(rel < 1e-5, "query ({i},{c}): {fd} vs {}", gq[i][c]);

                let orig = k[i][c];
                k[i][c] = orig + h;
                let up = total(&q, &k);
                k[i][c] = orig - h;
                let down = total(&q, &k);
                k[i][c] = orig;
                let fd = (up - down) / (2.0 * h);
                let rel = (fd - gk[i][c]).abs() / fd.abs().max(gk[i][c]).max(1e-8);
                assert!(rel < 1e-5, "key ({i},{c})");
            }
        }
    }

    #[test]
    fn graph_uncertainty_with_m_1_is_single_instance_loss() {
        let (params, sp, g) = small_setup();
        let batch = 4;
        let got = graph_uncertainty(&params, &g, &sp, 1, batch, 0.07, 99, 1);
        let pairs = sample_pairs(&g, &sp, batch, 99, 0, 1);
        let want = instance_uncertainty(&params, &pairs[0], &pairs[1..], 0.07);
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn graph_uncertainty_thread_invariant() {
        let (params, sp, g) = small_setup();
        let a = graph_uncertainty(&params, &g, &sp, 10, 4, 0.07, 5, 1);
        let b = graph_uncertainty(&params, &g, &sp, 10, 4, 0.07, 5, 3);
        assert_eq!(a, b);
    }

    #[test]
    fn fisher_is_nonnegative_and_batch_duplication_invariant() {
        let (params, sp, g) = small_setup();
        let f1 = fisher_diagonal(&params, &g, &sp, 2, 4, 0.07, 7, 1);
        assert!(f1.iter().all(|&x| x >= 0.0));
        assert!(f1.iter().any(|&x| x > 0.0));
        // Mean over batches: averaging a duplicated list changes nothing.
        // Emulated by checking mean of two single-batch estimates equals
        // the two-batch estimate.
        let a = fisher_diagonal(&params, &g, &sp, 1, 4, 0.07, 7, 1);
        let pairs_b = sample_pairs(&g, &sp, 4, 7, 2, 1);
        let mut grad = vec![0.0; params.theta.len()];
        batch_gradient(&params, &pairs_b, 0.07, 1, &mut grad);
        let b: Vec<f64> = grad.iter().map(|g| (g / 4.0) * (g / 4.0)).collect();
        for j in 0..f1.len() {
            let want = 0.5 * (a[j] + b[j]);
            assert!((f1[j] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn penalty_zero_at_anchor_and_masked() {
        let theta = vec![1.0, 2.0, 3.0, 4.0];
        let anchor = theta.clone();
        let mask = vec![true; 4];
        assert_eq!(proximal_penalty(&theta, &anchor, None, &mask, 500.0), 0.0);

        let moved = vec![2.0, 2.0, 3.0, 5.0];
        let half = vec![false, true, true, false];
        // Only masked coordinates count; here both displaced entries are
        // unmasked.
        assert_eq!(proximal_penalty(&moved, &anchor, None, &half, 10.0), 0.0);
        let all = vec![true; 4];
        // (10/2) * (1 + 1) = 10.
        assert!((proximal_penalty(&moved, &anchor, None, &all, 10.0) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn penalty_gradient_is_exact() {
        let mut rng = Rng::new(4);
        let theta: Vec<f64> = (0..20).map(|_| rng.next_f64()).collect();
        let anchor: Vec<f64> = (0..20).map(|_| rng.next_f64()).collect();
        let fisher: Vec<f64> = (0..20).map(|_| rng.next_f64() * 2.0).collect();
        let mask: Vec<bool> = (0..20).map(|i| i % 3 != 0).collect();
        let lambda = 7.5;
        let mut grad = vec![0.0; 20];
        proximal_grad(&theta, &anchor, Some(&fisher), &mask, lambda, &mut grad);
        let mut t = theta.clone();
        let h = 1e-6;
        for j in 0..20 {
            let orig = t[j];
            t[j] = orig + h;
            let up = proximal_penalty(&t, &anchor, Some(&fisher), &mask, lambda);
            t[j] = orig - h;
            let down = proximal_penalty(&t, &anchor, Some(&fisher), &mask, lambda);
            t[j] = orig;
            let fd = (up - down) / (2.0 * h);
            // Central differences are exact for quadratics up to rounding.
            assert!(
                (fd - grad[j]).abs() <= 1e-8 * fd.abs().max(grad[j].abs()).max(1.0),
                "coord {j}: {fd} vs {}",
                grad[j]
            );
        }
    }

    #[test]
    fn identity_fisher_equals_no_fisher() {
        let theta = vec![0.5, -1.0, 2.0];
        let anchor = vec![0.0, 0.0, 0.0];
        let mask = vec![true; 3];
        let ones = vec![1.0; 3];
        let a = proximal_penalty(&theta, &anchor, Some(&ones), &mask, 3.0);
        let b = proximal_penalty(&theta, &anchor, None, &mask, 3.0);
        assert_eq!(a, b);
    }
}
