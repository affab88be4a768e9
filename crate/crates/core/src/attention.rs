//! Decoupled attention: label-driven hard attention over edges, its structure
//! prior and KL term, binary Gumbel-Softmax edge sampling, feature-driven soft
//! attention, and the fused stable weights.
//!
//! Hard quantities live on undirected edges (one value per edge, so they are
//! symmetric by construction). Soft quantities live on the directed messages
//! of [`Adjacency`], self-loops included.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Adjacency, EdgeWeights, Graph};
use crate::seed::stream_rng;
use crate::tensor::{dropout_mask, Matrix, Tape, Var, EPS};

/// Pseudo-label distributions for every node; labeled rows hold ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelState {
    probs: Matrix,
    labeled: Vec<bool>,
}

impl LabelState {
    /// Builds a state from per-node class distributions and pins the
    /// training nodes to their one-hot labels.
    pub fn from_predictions(g: &Graph, mut probs: Matrix) -> Result<Self> {
        if probs.dim() != (g.n_nodes(), g.n_classes()) {
            return Err(Error::dim(
                "label_state",
                format!(
                    "{:?} for {} nodes × {} classes",
                    probs.dim(),
                    g.n_nodes(),
                    g.n_classes()
                ),
            ));
        }
        let mut labeled = vec![false; g.n_nodes()];
        for &i in &g.splits().train {
            labeled[i] = true;
            let mut row = probs.row_mut(i);
            row.fill(0.0);
            row[g.labels()[i]] = 1.0;
        }
        let state = Self { probs, labeled };
        state.check()?;
        Ok(state)
    }

    /// Uniform distributions on unlabeled nodes.
    pub fn uniform(g: &Graph) -> Result<Self> {
        let c = g.n_classes();
        Self::from_predictions(g, Matrix::from_elem((g.n_nodes(), c), 1.0 / c as f64))
    }

    fn check(&self) -> Result<()> {
        for (i, row) in self.probs.rows().into_iter().enumerate() {
            let s: f64 = row.sum();
            if (s - 1.0).abs() > 1e-9 || row.iter().any(|&v| !(v >= 0.0)) {
                return Err(Error::Contract(format!(
                    "label row {i} is not a distribution (sum {s})"
                )));
            }
        }
        Ok(())
    }

    pub fn probs(&self) -> &Matrix {
        &self.probs
    }

    pub fn is_labeled(&self, i: usize) -> bool {
        self.labeled[i]
    }

    pub fn argmax(&self) -> Vec<usize> {
        argmax_rows(&self.probs)
    }
}

pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (k, &v)| {
                    if v > best.1 {
                        (k, v)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect()
}

fn edge_endpoints(g: &Graph) -> (Arc<[usize]>, Arc<[usize]>) {
    let (a, b): (Vec<usize>, Vec<usize>) = g.edges().iter().copied().unzip();
    (a.into(), b.into())
}

/// Differentiable hard attention: per undirected edge `{i, j}`,
/// `sigmoid((ŷᵢᵀQŷⱼ + ŷⱼᵀQŷᵢ) / 2)` clamped to `[ε, 1 − ε]`. Returns an
/// `n_edges × 1` column.
pub fn hard_probs_var(tape: &mut Tape, g: &Graph, labels: Var, metric: Var) -> Result<Var> {
    let (a, b) = edge_endpoints(g);
    let projected = tape.matmul(labels, metric)?;
    let pa = tape.gather_rows(projected, a.clone())?;
    let pb = tape.gather_rows(projected, b.clone())?;
    let ya = tape.gather_rows(labels, a)?;
    let yb = tape.gather_rows(labels, b)?;
    let ab = tape.row_dot(pa, yb)?;
    let ba = tape.row_dot(pb, ya)?;
    let score = tape.add(ab, ba)?;
    let score = tape.scale(score, 0.5);
    let p = tape.sigmoid(score);
    Ok(tape.clamp(p, EPS, 1.0 - EPS))
}

/// Hard-attention edge probabilities for a fixed metric matrix `Q`.
pub fn hard_attention_probs(g: &Graph, labels: &LabelState, metric: &Matrix) -> Result<Vec<f64>> {
    let c = g.n_classes();
    if metric.dim() != (c, c) {
        return Err(Error::dim(
            "hard_attention_probs",
            format!("Q is {:?}, need {c}×{c}", metric.dim()),
        ));
    }
    let mut tape = Tape::new();
    let y = tape.constant(labels.probs().clone());
    let q = tape.constant(metric.clone());
    let p = hard_probs_var(&mut tape, g, y, q)?;
    Ok(tape.value(p).column(0).to_vec())
}

/// Cosine similarity guarded so that a zero vector scores 0.
pub fn guarded_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = (a.iter().map(|x| x * x).sum::<f64>() + EPS).sqrt();
    let nb = (b.iter().map(|x| x * x).sum::<f64>() + EPS).sqrt();
    dot / (na * nb)
}

/// Label-similarity prior: per edge, `cos(ŷᵢ, ŷⱼ)` clamped to `[ε, 1 − ε]`.
pub fn structure_prior(g: &Graph, labels: &LabelState) -> Vec<f64> {
    let y = labels.probs();
    g.edges()
        .iter()
        .map(|&(i, j)| {
            let c = guarded_cosine(y.row(i).as_slice().unwrap(), y.row(j).as_slice().unwrap());
            c.clamp(EPS, 1.0 - EPS)
        })
        .collect()
}

/// Sum over edges of `KL(Bernoulli(q) ‖ Bernoulli(p))`, natural log.
pub fn kl_bernoulli(posterior: &[f64], prior: &[f64]) -> Result<f64> {
    if posterior.len() != prior.len() {
        return Err(Error::Contract(format!(
            "posterior has {} edges, prior {}",
            posterior.len(),
            prior.len()
        )));
    }
    Ok(posterior
        .iter()
        .zip(prior)
        .map(|(&q, &p)| {
            let (q, p) = (q.clamp(EPS, 1.0 - EPS), p.clamp(EPS, 1.0 - EPS));
            q * (q / p).ln() + (1.0 - q) * ((1.0 - q) / (1.0 - p)).ln()
        })
        .sum())
}

/// Differentiable KL term with a constant prior.
pub fn kl_bernoulli_var(tape: &mut Tape, posterior: Var, prior: &[f64]) -> Result<Var> {
    let (rows, cols) = tape.shape(posterior);
    if cols != 1 || rows != prior.len() {
        return Err(Error::Contract(format!(
            "posterior has shape {:?}, prior {} edges",
            (rows, cols),
            prior.len()
        )));
    }
    let p = Matrix::from_shape_fn((rows, 1), |(k, _)| prior[k].clamp(EPS, 1.0 - EPS));
    let log_p = tape.constant(p.mapv(f64::ln));
    let log_not_p = tape.constant(p.mapv(|v| (1.0 - v).ln()));
    let q = tape.clamp(posterior, EPS, 1.0 - EPS);
    let not_q = tape.scale(q, -1.0);
    let not_q = tape.add_scalar(not_q, 1.0);
    let lq = tape.log(q);
    let lnq = tape.log(not_q);
    let a = tape.sub(lq, log_p)?;
    let a = tape.mul(q, a)?;
    let b = tape.sub(lnq, log_not_p)?;
    let b = tape.mul(not_q, b)?;
    let kl = tape.add(a, b)?;
    Ok(tape.sum(kl))
}

/// Draws the difference of two standard Gumbel variables per edge (a
/// standard logistic variable), the noise of a two-category Gumbel-Softmax.
pub fn gumbel_noise<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let gumbel = |rng: &mut R| {
        let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
        -(-u.ln()).ln()
    };
    (0..n).map(|_| gumbel(rng) - gumbel(rng)).collect()
}

/// Relaxed (or straight-through hard) edge sample from Bernoulli parameters:
/// the "exist" coordinate of a two-category Gumbel-Softmax over `(p, 1 − p)`,
/// i.e. `sigmoid((log p − log(1 − p) + g₁ − g₂) / τ)`.
pub fn gumbel_sample_var(
    tape: &mut Tape,
    probs: Var,
    tau: f64,
    noise: &[f64],
    hard: bool,
) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::Contract(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    if tape.shape(probs) != (noise.len(), 1) {
        return Err(Error::dim("gumbel_sample", "one noise draw per edge"));
    }
    let p = tape.clamp(probs, EPS, 1.0 - EPS);
    let not_p = tape.scale(p, -1.0);
    let not_p = tape.add_scalar(not_p, 1.0);
    let lp = tape.log(p);
    let lnp = tape.log(not_p);
    let logit = tape.sub(lp, lnp)?;
    let g =
        tape.constant(Matrix::from_shape_vec((noise.len(), 1), noise.to_vec()).expect("column"));
    let z = tape.add(logit, g)?;
    let z = tape.scale(z, 1.0 / tau);
    let relaxed = tape.sigmoid(z);
    Ok(if hard {
        tape.straight_through(relaxed)
    } else {
        relaxed
    })
}

/// Samples an edge structure from per-edge probabilities.
pub fn gumbel_sample_structure(probs: &[f64], tau: f64, seed: u64, hard: bool) -> Result<Vec<f64>> {
    let mut rng = stream_rng(seed, 21);
    let noise = gumbel_noise(&mut rng, probs.len());
    let mut tape = Tape::new();
    let p =
        tape.constant(Matrix::from_shape_vec((probs.len(), 1), probs.to_vec()).expect("column"));
    let s = gumbel_sample_var(&mut tape, p, tau, &noise, hard)?;
    Ok(tape.value(s).column(0).to_vec())
}

/// Lifts per-edge values onto messages; self-loops get 1.
pub fn message_support(tape: &mut Tape, adj: &Adjacency, per_edge: Var) -> Result<Var> {
    tape.gather_or(per_edge, adj.edge_of.clone(), 1.0)
}

/// Projected hidden states `s ⊙ ReLU(X Wᵖʳᵒʲ)`.
pub fn projected_hidden(tape: &mut Tape, features: Var, proj: Var, scale: Var) -> Result<Var> {
    let h = tape.matmul(features, proj)?;
    let h = tape.relu(h);
    tape.mul_row(h, scale)
}

/// Per-message negative cosine similarity `δᵢⱼ = −cos(hᵢ, hⱼ)`.
pub fn dissimilarity_var(tape: &mut Tape, adj: &Adjacency, hidden: Var) -> Result<Var> {
    let hi = tape.gather_rows(hidden, adj.dst.clone())?;
    let hj = tape.gather_rows(hidden, adj.src.clone())?;
    let dot = tape.row_dot(hi, hj)?;
    let sq = tape.row_dot(hidden, hidden)?;
    let sq = tape.add_scalar(sq, EPS);
    let norm = tape.sqrt(sq);
    let ni = tape.gather_rows(norm, adj.dst.clone())?;
    let nj = tape.gather_rows(norm, adj.src.clone())?;
    let denom = tape.mul(ni, nj)?;
    let cos = tape.div(dot, denom)?;
    Ok(tape.neg(cos))
}

/// Soft attention over a message support:
/// `A^soft_ij = support_ij exp(δ_ij) / Σ_k support_ik exp(δ_ik)`.
/// With `dropout_keep`, non-self messages are multiplied by the mask before
/// renormalization.
pub fn soft_attention_var(
    tape: &mut Tape,
    adj: &Adjacency,
    support: Var,
    hidden: Var,
    dropout_keep: Option<&Matrix>,
) -> Result<Var> {
    let delta = dissimilarity_var(tape, adj, hidden)?;
    let w = tape.exp(delta);
    let mut w = tape.mul(w, support)?;
    if let Some(mask) = dropout_keep {
        let m = tape.constant(mask.clone());
        w = tape.mul(w, m)?;
    }
    tape.segment_normalize(w, adj.dst.clone())
}

/// Attention-dropout mask over messages; self-loops are always kept.
pub fn attention_dropout_mask<R: Rng + ?Sized>(rng: &mut R, adj: &Adjacency, rate: f64) -> Matrix {
    let mut mask = dropout_mask(rng, (adj.n_messages(), 1), rate);
    for k in 0..adj.n_messages() {
        if adj.is_self_loop(k) {
            mask[[k, 0]] = 1.0;
        }
    }
    mask
}

/// Soft attention with fixed parameters. `support` holds one value per
/// message (self-loops must be nonzero). A positive `dropout` applies seeded
/// attention dropout, as in training.
pub fn soft_attention(
    g: &Graph,
    support: &[f64],
    proj: &Matrix,
    scale: &Matrix,
    dropout: f64,
    seed: u64,
) -> Result<EdgeWeights> {
    let adj = g.adjacency();
    if support.len() != adj.n_messages() {
        return Err(Error::dim(
            "soft_attention",
            "one support value per message",
        ));
    }
    if support.iter().any(|&v| v < 0.0) {
        return Err(Error::Contract("support values must be nonnegative".into()));
    }
    let mut tape = Tape::new();
    let x = tape.constant(g.features().clone());
    let p = tape.constant(proj.clone());
    let s = tape.constant(scale.clone());
    let h = projected_hidden(&mut tape, x, p, s)?;
    let sup = tape
        .constant(Matrix::from_shape_vec((support.len(), 1), support.to_vec()).expect("column"));
    let mask =
        (dropout > 0.0).then(|| attention_dropout_mask(&mut stream_rng(seed, 22), adj, dropout));
    let a = soft_attention_var(&mut tape, adj, sup, h, mask.as_ref())?;
    Ok(EdgeWeights {
        values: tape.value(a).column(0).to_vec(),
    })
}

/// Stable weights: hard probability (1 on self-loops) times soft weight over
/// the original graph, then renormalized per destination node.
pub fn fuse_stable(adj: &Adjacency, hard_probs: &[f64], soft: &EdgeWeights) -> EdgeWeights {
    let mut values: Vec<f64> = (0..adj.n_messages())
        .map(|k| {
            let h = adj.edge_of[k].map_or(1.0, |e| hard_probs[e]);
            h * soft.values[k]
        })
        .collect();
    for i in 0..adj.n_nodes {
        let r = adj.inbox(i);
        // Rows whose hard factors are all 1 are already normalized.
        if r.clone()
            .all(|k| adj.edge_of[k].is_none_or(|e| hard_probs[e] == 1.0))
        {
            continue;
        }
        let z: f64 = values[r.clone()].iter().sum();
        for v in &mut values[r] {
            *v /= z;
        }
    }
    EdgeWeights { values }
}

/// Fused stable weights from fixed attention parameters.
pub fn stable_fusion(
    g: &Graph,
    labels: &LabelState,
    metric: &Matrix,
    proj: &Matrix,
    scale: &Matrix,
) -> Result<EdgeWeights> {
    let hard = hard_attention_probs(g, labels, metric)?;
    let ones = vec![1.0; g.adjacency().n_messages()];
    let soft = soft_attention(g, &ones, proj, scale, 0.0, 0)?;
    Ok(fuse_stable(g.adjacency(), &hard, &soft))
}

/// Class-pair connectivity of a set of message weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Connectivity {
    /// Mean weight per class pair (symmetrized); pairs without edges are 0.
    pub mean: Matrix,
    /// Total weight per class pair (symmetrized).
    pub total: Matrix,
    /// Diagonal-to-off-diagonal sum ratio of `mean`; +∞ when the
    /// off-diagonal sum is zero.
    pub ratio: f64,
    /// Same ratio computed on `total`.
    pub total_ratio: f64,
}

fn diag_ratio(m: &Matrix) -> f64 {
    let diag: f64 = m.diag().sum();
    let off = m.sum() - diag;
    if off == 0.0 {
        f64::INFINITY
    } else {
        diag / off
    }
}

/// Connectivity strength between classes, ignoring self-loops.
pub fn connectivity_strength(
    adj: &Adjacency,
    weights: &EdgeWeights,
    labels: &[usize],
    n_classes: usize,
) -> Result<Connectivity> {
    if weights.values.len() != adj.n_messages() {
        return Err(Error::dim(
            "connectivity_strength",
            "one weight per message",
        ));
    }
    if weights.values.iter().any(|&w| w < 0.0) {
        return Err(Error::Contract("weights must be nonnegative".into()));
    }
    let mut sum = Matrix::zeros((n_classes, n_classes));
    let mut count = Matrix::zeros((n_classes, n_classes));
    for k in 0..adj.n_messages() {
        if adj.is_self_loop(k) {
            continue;
        }
        let (a, b) = (labels[adj.dst[k]], labels[adj.src[k]]);
        sum[[a, b]] += weights.values[k];
        count[[a, b]] += 1.0;
    }
    let sym_sum = (&sum + &sum.t()) / 2.0;
    let sym_count = &count + &count.t();
    let mut mean = Matrix::zeros((n_classes, n_classes));
    for a in 0..n_classes {
        for b in 0..n_classes {
            if sym_count[[a, b]] > 0.0 {
                mean[[a, b]] = 2.0 * sym_sum[[a, b]] / sym_count[[a, b]];
            }
        }
    }
    Ok(Connectivity {
        ratio: diag_ratio(&mean),
        total_ratio: diag_ratio(&sym_sum),
        mean,
        total: sym_sum,
    })
}
