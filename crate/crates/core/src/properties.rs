//! Structural graph properties and the property-side selection score.
//!
//! Network entropy is the expected information of one random-walk
//! transition: with P_ij = 1/d_i and stationary weights pi, it is
//! -sum_i pi_i sum_j P_ij ln P_ij. Two independent routes compute it.
//! [`network_entropy_general`] estimates pi by power iteration and sums
//! the literal double loop; [`network_entropy_closed`] substitutes the
//! analytic pi_i = d_i / 2|E|, which collapses the sum to
//! (1 / 2|E|) sum_i d_i ln d_i. Each checks the other.
//!
//! All properties are meant for a connected graph; callers pass the
//! largest connected component.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::stats;

/// Closed-form network entropy in nats: (1 / 2|E|) sum_i d_i ln d_i.
/// Degree-1 nodes contribute nothing.
pub fn network_entropy_closed(g: &Graph) -> Result<f64> {
    if g.num_edges() == 0 {
        return Err(Error::EmptyGraph);
    }
    let sum: f64 = (0..g.num_nodes())
        .map(|v| {
            let d = g.degree(v) as f64;
            if d > 0.0 {
                d * d.ln()
            } else {
                0.0
            }
        })
        .sum();
    Ok(sum / (2.0 * g.num_edges() as f64))
}

/// General-form network entropy in nats, with the stationary distribution
/// found numerically.
///
/// Plain power iteration of the walk matrix oscillates on bipartite
/// graphs, so each step averages the current iterate with its image
/// (pi <- (pi + pi P) / 2), which has the same fixed point and always
/// converges. Iteration stops when the fixed-point defect
/// ||pi P - pi||_1 drops below `tol`; the entropy is then the literal
/// double sum -sum_i pi_i sum_j P_ij ln P_ij.
pub fn network_entropy_general_tol(g: &Graph, tol: f64, max_iter: usize) -> Result<f64> {
    if g.num_edges() == 0 {
        return Err(Error::EmptyGraph);
    }
    let n = g.num_nodes();
    let mut pi = vec![1.0 / n as f64; n];
    let mut image = vec![0.0; n];
    let mut converged = false;
    for _ in 0..max_iter {
        image.iter_mut().for_each(|x| *x = 0.0);
        for (i, p) in pi.iter().enumerate() {
            let share = p / g.degree(i) as f64;
            for &j in g.neighbors(i) {
                image[j as usize] += share;
            }
        }
        let defect: f64 = pi.iter().zip(&image).map(|(a, b)| (a - b).abs()).sum();
        for (p, im) in pi.iter_mut().zip(&image) {
            *p = 0.5 * (*p + im);
        }
        let total: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= total);
        if defect < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence(max_iter));
    }
    let mut h = 0.0;
    for (i, pv) in pi.iter().enumerate() {
        let d = g.degree(i) as f64;
        let p = 1.0 / d;
        for _ in g.neighbors(i) {
            h -= pv * p * p.ln();
        }
    }
    Ok(h)
}

pub fn network_entropy_general(g: &Graph) -> Result<f64> {
    network_entropy_general_tol(g, 1e-12, 500_000)
}

/// Scale-free exponent by the discrete maximum-likelihood approximation
/// with the minimum degree pinned at 1:
/// alpha = 1 + n / sum_i ln(d_i / (1 - 0.5)) = 1 + n / sum_i ln(2 d_i).
/// Isolated nodes carry no tail information and are skipped.
pub fn scale_free_exponent(g: &Graph) -> f64 {
    let mut n = 0usize;
    let mut denom = 0.0;
    for v in 0..g.num_nodes() {
        let d = g.degree(v);
        if d >= 1 {
            n += 1;
            denom += (2.0 * d as f64).ln();
        }
    }
    1.0 + n as f64 / denom
}

/// 2|E| / (|V| (|V| - 1)).
pub fn density(g: &Graph) -> Result<f64> {
    let n = g.num_nodes();
    if n < 2 {
        return Err(Error::TooFewNodes { need: 2, have: n });
    }
    Ok(2.0 * g.num_edges() as f64 / (n as f64 * (n as f64 - 1.0)))
}

/// 2|E| / |V|.
pub fn average_degree(g: &Graph) -> f64 {
    2.0 * g.num_edges() as f64 / g.num_nodes() as f64
}

/// Population variance of the degree sequence.
pub fn degree_variance(g: &Graph) -> f64 {
    let degs: Vec<f64> = g.degrees().iter().map(|&d| d as f64).collect();
    stats::population_variance(&degs)
}

/// The five structural descriptors of one graph.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GraphStats {
    pub entropy: f64,
    pub density: f64,
    pub avg_degree: f64,
    pub degree_variance: f64,
    pub alpha: f64,
}

impl GraphStats {
    /// Computes all five on `g`, which should already be a connected
    /// component.
    pub fn compute(g: &Graph) -> Result<GraphStats> {
        Ok(GraphStats {
            entropy: network_entropy_closed(g)?,
            density: density(g)?,
            avg_degree: average_degree(g),
            degree_variance: degree_variance(g),
            alpha: scale_free_exponent(g),
        })
    }
}

/// Per-property z-scores of one graph against a pool.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ZStats {
    pub entropy: f64,
    pub density: f64,
    pub avg_degree: f64,
    pub degree_variance: f64,
    pub alpha: f64,
}

/// Z-normalizes each property across the pool (population std; a
/// property that is constant over the pool maps to zeros).
pub fn z_normalize(pool: &[GraphStats]) -> Vec<ZStats> {
    let column = |f: fn(&GraphStats) -> f64| -> Vec<f64> {
        stats::z_scores(&pool.iter().map(f).collect::<Vec<_>>())
    };
    let e = column(|s| s.entropy);
    let d = column(|s| s.density);
    let a = column(|s| s.avg_degree);
    let v = column(|s| s.degree_variance);
    let al = column(|s| s.alpha);
    (0..pool.len())
        .map(|i| ZStats {
            entropy: e[i],
            density: d[i],
            avg_degree: a[i],
            degree_variance: v[i],
            alpha: al[i],
        })
        .collect()
}

/// Property half of the selection score: the mean of the z-scored
/// descriptors, with the exponent entering negatively (heavier tails
/// mean a smaller exponent, so -z_alpha rewards them).
pub fn property_score(z: &ZStats) -> f64 {
    (z.entropy + z.density + z.avg_degree + z.degree_variance - z.alpha) / 5.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cycle(n: usize) -> Graph {
        let edges: Vec<(u32, u32)> = (0..n as u32).map(|i| (i, (i + 1) % n as u32)).collect();
        Graph::from_edges(n, &edges)
    }

    fn complete(n: usize) -> Graph {
        let mut edges = Vec::new();
        for i in 0..n as u32 {
            for j in i + 1..n as u32 {
                edges.push((i, j));
            }
        }
        Graph::from_edges(n, &edges)
    }

    fn star(leaves: usize) -> Graph {
        let edges: Vec<(u32, u32)> = (1..=leaves as u32).map(|i| (0, i)).collect();
        Graph::from_edges(leaves + 1, &edges)
    }

    const LN_2: f64 = std::f64::consts::LN_2;

    #[test]
    fn entropy_closed_c5_is_ln2() {
        assert!((network_entropy_closed(&cycle(5)).unwrap() - LN_2).abs() < 1e-12);
    }

    #[test]
    fn entropy_closed_k4_is_ln3() {
        assert!((network_entropy_closed(&complete(4)).unwrap() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn entropy_general_matches_on_reference_graphs() {
        assert!((network_entropy_general(&cycle(5)).unwrap() - LN_2).abs() < 1e-10);
        assert!((network_entropy_general(&complete(4)).unwrap() - 3f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn entropy_general_handles_bipartite_oscillation() {
        // Stars and even cycles are bipartite; the plain walk matrix has
        // eigenvalue -1 there.
        let s = star(4);
        let gen = network_entropy_general(&s).unwrap();
        let closed = network_entropy_closed(&s).unwrap();
        assert!((gen - closed).abs() < 1e-9, "star: {gen} vs {closed}");
        // Analytic value: pi_hub = 1/2 contributes ln 4, leaves contribute 0.
        assert!((closed - 0.5 * 4f64.ln()).abs() < 1e-12);

        let c6 = cycle(6);
        assert!(
            (network_entropy_general(&c6).unwrap() - network_entropy_closed(&c6).unwrap()).abs()
                < 1e-9
        );
    }

    #[test]
    fn entropy_rejects_empty() {
        let g = Graph::from_edges(1, &[]);
        assert!(matches!(network_entropy_closed(&g), Err(Error::EmptyGraph)));
        assert!(matches!(network_entropy_general(&g), Err(Error::EmptyGraph)));
    }

    #[test]
    fn alpha_on_c5() {
        // All degrees 2: 1 + 5 / (5 ln 4).
        let expect = 1.0 + 1.0 / 4f64.ln();
        assert!((scale_free_exponent(&cycle(5)) - expect).abs() < 1e-12);
        assert!((expect - 1.721_348).abs() < 1e-6);
    }

    #[test]
    fn basic_descriptors_on_star() {
        // Star with 4 leaves: n=5, m=4 -> avg degree 1.6, density 0.4,
        // degrees [4,1,1,1,1] -> population variance 1.44.
        let s = star(4);
        assert!((average_degree(&s) - 1.6).abs() < 1e-12);
        assert!((density(&s).unwrap() - 0.4).abs() < 1e-12);
        assert!((degree_variance(&s) - 1.44).abs() < 1e-12);
    }

    #[test]
    fn density_needs_two_nodes() {
        let g = Graph::from_edges(1, &[]);
        assert!(matches!(density(&g), Err(Error::TooFewNodes { .. })));
    }

    #[test]
    fn z_normalize_columns() {
        let mk = |x: f64| GraphStats {
            entropy: x,
            density: 2.0 * x,
            avg_degree: -x,
            degree_variance: 5.0,
            alpha: x,
        };
        let z = z_normalize(&[mk(1.0), mk(2.0), mk(3.0)]);
        let r = 1.224_744_871_391_589;
        assert!((z[0].entropy + r).abs() < 1e-12);
        assert!((z[2].entropy - r).abs() < 1e-12);
        assert!((z[0].avg_degree - r).abs() < 1e-12, "sign flips with the column");
        assert_eq!(z[1].degree_variance, 0.0, "constant column maps to zeros");
    }

    #[test]
    fn property_score_mixes_with_negated_alpha() {
        let z = ZStats {
            entropy: 1.0,
            density: 1.0,
            avg_degree: 1.0,
            degree_variance: 1.0,
            alpha: 1.0,
        };
        assert!((property_score(&z) - 0.6).abs() < 1e-12);
        let z2 = ZStats { alpha: -1.0, ..z };
        assert!((property_score(&z2) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn general_equals_closed_on_irregular_graph() {
        // Two triangles joined by a path; mixed degrees, non-bipartite.
        let g = Graph::from_edges(
            7,
            &[(0, 1), (1, 2), (0, 2), (2, 3), (3, 4), (4, 5), (5, 6), (4, 6)],
        );
        let a = network_entropy_general(&g).unwrap();
        let b = network_entropy_closed(&g).unwrap();
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}
