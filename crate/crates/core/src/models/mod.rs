//! GCN propagation, the label propagator (P) and feature propagator (Q)
//! networks, and fixed aggregation-weight schemes.

mod schemes;

use rand::Rng;

use crate::attention::{
    attention_dropout_mask, gumbel_noise, gumbel_sample_var, hard_probs_var, message_support,
    projected_hidden, soft_attention_var, LabelState,
};
use crate::error::{Error, Result};
use crate::graph::{Adjacency, EdgeWeights, Graph};
use crate::tensor::{dropout_mask, kaiming_uniform, Bound, Matrix, ParamId, ParamStore, Tape, Var};

pub use schemes::{
    pr_nr_weights, scheme_names, weight_scheme, Laplacian, Relativity, RelativityMode, Uniform,
    WeightScheme,
};

/// Stack of GCN layers; ReLU between layers, raw logits out.
#[derive(Clone, Debug)]
pub struct GcnStack {
    layers: Vec<(ParamId, ParamId)>,
    pub dropout: f64,
}

impl GcnStack {
    /// Registers layers `dims[0] → dims[1] → … → dims[last]` in `store`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        dims: &[usize],
        dropout: f64,
        prefix: &str,
    ) -> Self {
        assert!(dims.len() >= 2, "a GCN stack needs at least one layer");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let weight = store.add(
                    format!("{prefix}.gcn{l}.weight"),
                    kaiming_uniform(rng, w[0], w[1]),
                );
                let bias = store.add(format!("{prefix}.gcn{l}.bias"), Matrix::zeros((1, w[1])));
                (weight, bias)
            })
            .collect();
        Self { layers, dropout }
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer_params(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    /// Message passing: per layer, `mᵢ = Σ_{j ∈ N(i) ∪ i} αᵢⱼ hⱼ` then
    /// `h = σ(m W + b)`. Inverted dropout hits each layer's input when
    /// `training`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        adj: &Adjacency,
        weights: Var,
        input: Var,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let mut h = input;
        for (l, &(w_id, b_id)) in self.layers.iter().enumerate() {
            if training && self.dropout > 0.0 {
                let mask = dropout_mask(rng, tape.shape(h), self.dropout);
                let m = tape.constant(mask);
                h = tape.mul(h, m)?;
            }
            let (w, b) = (bound.var(w_id), bound.var(b_id));
            let (fan_in, fan_out) = tape.shape(w);
            // Aggregation and the linear map commute; aggregate the narrower side.
            let z = if fan_out < fan_in {
                let t = tape.matmul(h, w)?;
                tape.spmm(weights, t, adj.src.clone(), adj.dst.clone(), adj.n_nodes)?
            } else {
                let m = tape.spmm(weights, h, adj.src.clone(), adj.dst.clone(), adj.n_nodes)?;
                tape.matmul(m, w)?
            };
            let z = tape.add_row(z, b)?;
            h = if l + 1 < self.layers.len() {
                tape.relu(z)
            } else {
                z
            };
            if tape.value(h).iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("GCN layer {l} activation"),
                });
            }
        }
        Ok(h)
    }
}

/// Architecture switches of the label propagator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PVariant {
    /// Learn and sample the edge structure; otherwise every edge is kept.
    pub hard: bool,
    /// Feature-driven soft weights; otherwise uniform over the sampled support.
    pub soft: bool,
}

impl Default for PVariant {
    fn default() -> Self {
        Self {
            hard: true,
            soft: true,
        }
    }
}

/// How the encoder's structure sample is drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleMode {
    /// Binary forward, gradient through the relaxed value.
    StraightThrough,
    /// Continuous relaxation only.
    Relaxed,
}

/// Label propagator: hard attention encoder, soft attention + GCN decoder
/// over `[Ŷ ∥ X]`.
#[derive(Clone, Debug)]
pub struct PNetwork {
    pub store: ParamStore,
    pub gcn: GcnStack,
    pub metric: ParamId,
    pub proj: ParamId,
    pub scale: ParamId,
    pub tau: f64,
    pub attention_dropout: f64,
    pub variant: PVariant,
}

pub struct PForward {
    pub logits: Var,
    /// Per-edge Bernoulli parameters (absent when hard attention is off).
    pub hard_probs: Option<Var>,
    /// Per-edge structure sample (absent when hard attention is off).
    pub hard_sample: Option<Var>,
    /// Per-message soft weights.
    pub soft: Var,
}

impl PNetwork {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        n_classes: usize,
        n_features: usize,
        hidden: &[usize],
        dropout: f64,
        attention_dropout: f64,
        tau: f64,
        variant: PVariant,
    ) -> Self {
        let mut store = ParamStore::new();
        let mut dims = vec![n_classes + n_features];
        dims.extend_from_slice(hidden);
        dims.push(n_classes);
        let gcn = GcnStack::new(&mut store, rng, &dims, dropout, "p");
        let m = hidden
            .first()
            .copied()
            .unwrap_or(n_features)
            .min(n_features)
            .max(1);
        let metric = store.add("p.hard.metric", Matrix::eye(n_classes));
        let proj = store.add("p.soft.proj", kaiming_uniform(rng, n_features, m));
        let scale = store.add("p.soft.scale", Matrix::ones((1, m)));
        Self {
            store,
            gcn,
            metric,
            proj,
            scale,
            tau,
            attention_dropout,
            variant,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        g: &Graph,
        labels: &LabelState,
        training: bool,
        sample: SampleMode,
        rng: &mut R,
    ) -> Result<PForward> {
        let adj = g.adjacency();
        let y = tape.constant(labels.probs().clone());
        let x = tape.constant(g.features().clone());

        let (hard_probs, hard_sample, support) = if self.variant.hard {
            let probs = hard_probs_var(tape, g, y, bound.var(self.metric))?;
            let noise = gumbel_noise(rng, g.n_edges());
            let s = gumbel_sample_var(
                tape,
                probs,
                self.tau,
                &noise,
                sample == SampleMode::StraightThrough,
            )?;
            let support = message_support(tape, adj, s)?;
            (Some(probs), Some(s), support)
        } else {
            let ones = tape.constant(Matrix::ones((adj.n_messages(), 1)));
            (None, None, ones)
        };

        let mask = (training && self.attention_dropout > 0.0)
            .then(|| attention_dropout_mask(rng, adj, self.attention_dropout));
        let soft = if self.variant.soft {
            let h = projected_hidden(tape, x, bound.var(self.proj), bound.var(self.scale))?;
            soft_attention_var(tape, adj, support, h, mask.as_ref())?
        } else {
            let w = match &mask {
                Some(m) => {
                    let m = tape.constant(m.clone());
                    tape.mul(support, m)?
                }
                None => support,
            };
            tape.segment_normalize(w, adj.dst.clone())?
        };

        let input = tape.concat_cols(y, x)?;
        let logits = self
            .gcn
            .forward(tape, bound, adj, soft, input, training, rng)?;
        Ok(PForward {
            logits,
            hard_probs,
            hard_sample,
            soft,
        })
    }

    /// Current hard-attention edge probabilities (all ones when disabled).
    pub fn hard_probs(&self, g: &Graph, labels: &LabelState) -> Result<Vec<f64>> {
        if !self.variant.hard {
            return Ok(vec![1.0; g.n_edges()]);
        }
        crate::attention::hard_attention_probs(g, labels, self.store.get(self.metric))
    }

    /// Soft weights over the original graph, inference mode.
    pub fn soft_weights(&self, g: &Graph) -> Result<EdgeWeights> {
        let ones = vec![1.0; g.adjacency().n_messages()];
        if !self.variant.soft {
            let adj = g.adjacency();
            return Ok(EdgeWeights {
                values: (0..adj.n_messages())
                    .map(|k| 1.0 / adj.inbox(adj.dst[k]).len() as f64)
                    .collect(),
            });
        }
        crate::attention::soft_attention(
            g,
            &ones,
            self.store.get(self.proj),
            self.store.get(self.scale),
            0.0,
            0,
        )
    }

    /// Stable fused weights for the feature propagator.
    pub fn stable_weights(&self, g: &Graph, labels: &LabelState) -> Result<EdgeWeights> {
        let hard = self.hard_probs(g, labels)?;
        let soft = self.soft_weights(g)?;
        Ok(crate::attention::fuse_stable(g.adjacency(), &hard, &soft))
    }
}

/// Feature propagator: a GCN over node features with fixed weights.
#[derive(Clone, Debug)]
pub struct QNetwork {
    pub store: ParamStore,
    pub gcn: GcnStack,
}

impl QNetwork {
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        n_features: usize,
        hidden: &[usize],
        n_classes: usize,
        dropout: f64,
    ) -> Self {
        let mut store = ParamStore::new();
        let mut dims = vec![n_features];
        dims.extend_from_slice(hidden);
        dims.push(n_classes);
        let gcn = GcnStack::new(&mut store, rng, &dims, dropout, "q");
        Self { store, gcn }
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        g: &Graph,
        weights: &EdgeWeights,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let adj = g.adjacency();
        if weights.values.len() != adj.n_messages() {
            return Err(Error::dim("q_forward", "one weight per message"));
        }
        let w = tape.constant(weights.as_column());
        let x = tape.constant(g.features().clone());
        self.gcn.forward(tape, bound, adj, w, x, training, rng)
    }

    /// Class distributions in inference mode.
    pub fn predict(&self, g: &Graph, weights: &EdgeWeights) -> Result<Matrix> {
        let mut tape = Tape::new();
        let bound = self.store.bind_frozen(&mut tape);
        let mut rng = crate::seed::stream_rng(0, 0);
        let logits = self.forward(&mut tape, &bound, g, weights, false, &mut rng)?;
        Ok(crate::tensor::softmax_rows(tape.value(logits)))
    }
}
