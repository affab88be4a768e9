use crate::attention::guarded_cosine;
use crate::error::{Error, Result};
use crate::graph::{laplacian_weights, EdgeWeights, Graph};

/// A fixed (non-learned) source of aggregation weights.
pub trait WeightScheme: Send + Sync {
    fn name(&self) -> &'static str;
    fn weights(&self, g: &Graph) -> Result<EdgeWeights>;
}

pub struct Laplacian;

impl WeightScheme for Laplacian {
    fn name(&self) -> &'static str {
        "laplacian"
    }

    fn weights(&self, g: &Graph) -> Result<EdgeWeights> {
        Ok(laplacian_weights(g))
    }
}

/// Mean aggregation: `1 / (deg(i) + 1)` on every message into `i`.
pub struct Uniform;

impl WeightScheme for Uniform {
    fn name(&self) -> &'static str {
        "uniform"
    }

    fn weights(&self, g: &Graph) -> Result<EdgeWeights> {
        let adj = g.adjacency();
        Ok(EdgeWeights {
            values: (0..adj.n_messages())
                .map(|k| 1.0 / adj.inbox(adj.dst[k]).len() as f64)
                .collect(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RelativityMode {
    /// Weights grow with raw-feature cosine similarity.
    Positive,
    /// Weights grow with raw-feature dissimilarity.
    Negative,
}

pub struct Relativity(pub RelativityMode);

impl WeightScheme for Relativity {
    fn name(&self) -> &'static str {
        match self.0 {
            RelativityMode::Positive => "pr",
            RelativityMode::Negative => "nr",
        }
    }

    fn weights(&self, g: &Graph) -> Result<EdgeWeights> {
        Ok(pr_nr_weights(g, self.0))
    }
}

/// Row softmax of `±cos(xᵢ, xⱼ)` over `N(i) ∪ {i}`; the self-loop scores
/// `±1`.
pub fn pr_nr_weights(g: &Graph, mode: RelativityMode) -> EdgeWeights {
    let adj = g.adjacency();
    let x = g.features();
    let sign = match mode {
        RelativityMode::Positive => 1.0,
        RelativityMode::Negative => -1.0,
    };
    let mut values = vec![0.0; adj.n_messages()];
    for i in 0..adj.n_nodes {
        let r = adj.inbox(i);
        let xi = x.row(i);
        let scores: Vec<f64> = r
            .clone()
            .map(|k| {
                if adj.is_self_loop(k) {
                    sign
                } else {
                    let xj = x.row(adj.src[k]);
                    sign * guarded_cosine(xi.as_slice().unwrap(), xj.as_slice().unwrap())
                }
            })
            .collect();
        let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
        for (k, s) in r.zip(&scores) {
            values[k] = (s - m).exp() / z;
        }
    }
    EdgeWeights { values }
}

const SCHEMES: &[&str] = &["laplacian", "uniform", "pr", "nr"];

pub fn scheme_names() -> &'static [&'static str] {
    SCHEMES
}

/// Looks up a weight scheme by its registered name.
pub fn weight_scheme(name: &str) -> Result<Box<dyn WeightScheme>> {
    Ok(match name {
        "laplacian" | "gcn" => Box::new(Laplacian),
        "uniform" => Box::new(Uniform),
        "pr" => Box::new(Relativity(RelativityMode::Positive)),
        "nr" => Box::new(Relativity(RelativityMode::Negative)),
        other => {
            return Err(Error::config(
                "weights",
                format!("unknown scheme `{other}`; known: {}", SCHEMES.join(", ")),
            ))
        }
    })
}
