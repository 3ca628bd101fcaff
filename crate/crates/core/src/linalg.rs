//! Dense symmetric eigendecomposition by cyclic Jacobi.
//!
//! The subgraphs fed to the feature builder have at most a few dozen
//! nodes, so a textbook Jacobi sweep is simpler and more predictable
//! than pulling in a LAPACK binding, and it is deterministic bit for
//! bit, which the reproducibility contract cares about.

/// Eigendecomposition of a symmetric matrix given row-major as `a`
/// (length n*n). Returns eigenvalues in ascending order and the matching
/// eigenvectors as columns of a row-major n*n matrix: entry (i, k) is
/// component i of eigenvector k.
///
/// Each eigenvector's sign is fixed so that its largest-magnitude entry
/// (first such index on ties) is positive, making the output unique up
/// to degenerate eigenspaces.
pub fn jacobi_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(a.len(), n * n, "matrix must be n*n");
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let off = |m: &[f64]| -> f64 {
        let mut s = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                s += m[p * n + q] * m[p * n + q];
            }
        }
        s
    };
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().max(1e-300);

    for _sweep in 0..100 {
        if off(&m) <= 1e-28 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[i * n + i]
            .partial_cmp(&m[j * n + j])
            .unwrap()
            .then(i.cmp(&j))
    });
    let values: Vec<f64> = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (k, &src) in order.iter().enumerate() {
        let mut peak = 0usize;
        for i in 1..n {
            if v[i * n + src].abs() > v[peak * n + src].abs() {
                peak = i;
            }
        }
        let flip = if v[peak * n + src] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            vectors[i * n + k] = flip * v[i * n + src];
        }
    }
    (values, vectors)
}

/// Row-major symmetric normalized Laplacian L = I - D^-1/2 A D^-1/2 of a
/// graph. Rows of isolated nodes are zero.
pub fn normalized_laplacian(g: &crate::graph::Graph) -> Vec<f64> {
    let n = g.num_nodes();
    let mut l = vec![0.0; n * n];
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|v| {
            let d = g.degree(v);
            if d > 0 {
                1.0 / (d as f64).sqrt()
            } else {
                0.0
            }
        })
        .collect();
    for i in 0..n {
        if g.degree(i) > 0 {
            l[i * n + i] = 1.0;
        }
        for &j in g.neighbors(i) {
            l[i * n + j as usize] = -inv_sqrt[i] * inv_sqrt[j as usize];
        }
    }
    l
}
