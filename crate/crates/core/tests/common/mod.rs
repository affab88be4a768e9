//! Shared fixtures and naive reference implementations for integration
//! tests. The oracles work on dense matrices with explicit loops and never
//! call into the library's tape.

#![allow(dead_code)]

use gdamn::graph::{Graph, Splits};
use gdamn::tensor::Matrix;
use rand::seq::SliceRandom;
use rand::Rng;

/// Random connected-ish graph with `n` nodes, `c` classes, `d` features; at
/// least one training node per class is not guaranteed, but node 0 is always
/// in the training split.
pub fn random_graph<R: Rng>(rng: &mut R, n: usize, c: usize, d: usize, p_edge: f64) -> Graph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p_edge {
                edges.push((i, j));
            }
        }
    }
    let features = Matrix::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    let mut order: Vec<usize> = (1..n).collect();
    order.shuffle(rng);
    let n_train = (n / 3).max(1);
    let mut train = vec![0];
    train.extend_from_slice(&order[..n_train - 1]);
    let val = order[n_train - 1..n_train - 1 + (n - n_train) / 2].to_vec();
    let test = order[n_train - 1 + (n - n_train) / 2..].to_vec();
    Graph::new(n, c, edges, features, labels, Splits { train, val, test }).unwrap()
}

/// Dense `n × n` weight matrix from per-message weights.
pub fn dense_weights(g: &Graph, values: &[f64]) -> Matrix {
    let adj = g.adjacency();
    let mut a = Matrix::zeros((g.n_nodes(), g.n_nodes()));
    for k in 0..adj.n_messages() {
        a[[adj.dst[k], adj.src[k]]] = values[k];
    }
    a
}

pub fn relu(v: f64) -> f64 {
    v.max(0.0)
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Naive GCN: per layer `h'[i][o] = σ(Σ_j a[i][j] Σ_k h[j][k] W[k][o] + b[o])`,
/// ReLU on all but the last layer.
pub fn naive_gcn(a: &Matrix, input: &Matrix, layers: &[(Matrix, Matrix)]) -> Matrix {
    let n = a.nrows();
    let mut h = input.clone();
    for (l, (w, b)) in layers.iter().enumerate() {
        let mut out = Matrix::zeros((n, w.ncols()));
        for i in 0..n {
            for o in 0..w.ncols() {
                let mut z = b[[0, o]];
                for j in 0..n {
                    if a[[i, j]] == 0.0 {
                        continue;
                    }
                    let mut t = 0.0;
                    for k in 0..w.nrows() {
                        t += h[[j, k]] * w[[k, o]];
                    }
                    z += a[[i, j]] * t;
                }
                out[[i, o]] = if l + 1 < layers.len() { relu(z) } else { z };
            }
        }
        h = out;
    }
    h
}

/// Naive hard attention per undirected edge.
pub fn naive_hard_probs(g: &Graph, y: &Matrix, q: &Matrix) -> Vec<f64> {
    let c = y.ncols();
    let eps = 1e-10;
    g.edges()
        .iter()
        .map(|&(i, j)| {
            let mut s = 0.0;
            for a in 0..c {
                for b in 0..c {
                    s += 0.5
                        * (y[[i, a]] * q[[a, b]] * y[[j, b]] + y[[j, a]] * q[[a, b]] * y[[i, b]]);
                }
            }
            sigmoid(s).clamp(eps, 1.0 - eps)
        })
        .collect()
}

fn guarded_norm(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() + 1e-10).sqrt()
}

/// Naive soft attention as a dense matrix: `support ⊙ exp(−cos(hᵢ, hⱼ))`,
/// row-normalized, with `h = s ⊙ ReLU(X W)`.
pub fn naive_soft(g: &Graph, support: &Matrix, proj: &Matrix, scale: &Matrix) -> Matrix {
    let n = g.n_nodes();
    let x = g.features();
    let m = proj.ncols();
    let h: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..m)
                .map(|o| {
                    let z: f64 = (0..x.ncols()).map(|k| x[[i, k]] * proj[[k, o]]).sum();
                    scale[[0, o]] * relu(z)
                })
                .collect()
        })
        .collect();
    let mut a = Matrix::zeros((n, n));
    for i in 0..n {
        let mut z = 0.0;
        for j in 0..n {
            if support[[i, j]] == 0.0 {
                continue;
            }
            let dot: f64 = h[i].iter().zip(&h[j]).map(|(u, v)| u * v).sum();
            let cos = dot / (guarded_norm(&h[i]) * guarded_norm(&h[j]));
            a[[i, j]] = support[[i, j]] * (-cos).exp();
            z += a[[i, j]];
        }
        for j in 0..n {
            a[[i, j]] /= z;
        }
    }
    a
}

/// Dense support matrix: per-edge values on both directions, 1 on the
/// diagonal.
pub fn dense_support(g: &Graph, per_edge: &[f64]) -> Matrix {
    let n = g.n_nodes();
    let mut s = Matrix::eye(n);
    for (e, &(i, j)) in g.edges().iter().enumerate() {
        s[[i, j]] = per_edge[e];
        s[[j, i]] = per_edge[e];
    }
    s
}

/// Naive Bernoulli KL summed over edges.
pub fn naive_kl(q: &[f64], p: &[f64]) -> f64 {
    let eps = 1e-10;
    q.iter()
        .zip(p)
        .map(|(&q, &p)| {
            let (q, p) = (q.clamp(eps, 1.0 - eps), p.clamp(eps, 1.0 - eps));
            q * q.ln() - q * p.ln() + (1.0 - q) * (1.0 - q).ln() - (1.0 - q) * (1.0 - p).ln()
        })
        .sum()
}

/// Message-ordered values of a dense matrix.
pub fn messages_of(g: &Graph, a: &Matrix) -> Vec<f64> {
    let adj = g.adjacency();
    (0..adj.n_messages())
        .map(|k| a[[adj.dst[k], adj.src[k]]])
        .collect()
}

/// Random row-stochastic matrix with strictly positive entries.
pub fn random_distributions<R: Rng>(rng: &mut R, n: usize, c: usize) -> Matrix {
    let mut y = Matrix::from_shape_fn((n, c), |_| rng.random_range(0.05..1.0));
    for mut row in y.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    y
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// P's logits for a fixed per-edge structure sample, in inference mode.
pub fn naive_p_logits(
    p: &gdamn::models::PNetwork,
    g: &Graph,
    y: &Matrix,
    per_edge: &[f64],
) -> Matrix {
    let support = dense_support(g, per_edge);
    let soft = naive_soft(g, &support, p.store.get(p.proj), p.store.get(p.scale));
    let input = ndarray::concatenate(ndarray::Axis(1), &[y.view(), g.features().view()]).unwrap();
    let layers: Vec<(Matrix, Matrix)> = p
        .gcn
        .layer_params()
        .iter()
        .map(|&(w, b)| (p.store.get(w).clone(), p.store.get(b).clone()))
        .collect();
    naive_gcn(&soft, &input, &layers)
}

pub fn naive_softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let mx = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - mx).exp());
        let s = row.sum();
        row /= s;
    }
    out
}
