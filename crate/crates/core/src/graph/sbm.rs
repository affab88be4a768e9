use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Graph, Splits};
use crate::error::{Error, Result};
use crate::seed::stream_rng;
use crate::tensor::Matrix;

/// Stochastic-block-model generator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbmConfig {
    pub blocks: usize,
    pub nodes_per_block: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub train_per_class: usize,
    pub val_per_class: usize,
}

impl Default for SbmConfig {
    fn default() -> Self {
        Self {
            blocks: 4,
            nodes_per_block: 100,
            p_in: 0.1,
            p_out: 0.02,
            feature_dim: 32,
            feature_noise: 1.0,
            train_per_class: 20,
            val_per_class: 30,
        }
    }
}

impl SbmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks < 2 {
            return Err(Error::config("sbm.blocks", "need at least 2 blocks"));
        }
        for (key, p) in [("sbm.p_in", self.p_in), ("sbm.p_out", self.p_out)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(key, format!("{p} is not a probability")));
            }
        }
        if self.feature_dim < self.blocks {
            return Err(Error::config(
                "sbm.feature_dim",
                "must be at least the block count so class means stay orthogonal",
            ));
        }
        if !(self.feature_noise >= 0.0) {
            return Err(Error::config("sbm.feature_noise", "must be nonnegative"));
        }
        if self.train_per_class == 0 || self.train_per_class > self.nodes_per_block {
            return Err(Error::config(
                "sbm.train_per_class",
                "must be in 1..=nodes_per_block",
            ));
        }
        Ok(())
    }
}

/// Samples an SBM graph. Class `c` has mean feature vector `e_c` (unit norm,
/// mutually orthogonal) plus isotropic Gaussian noise of scale
/// `feature_noise`. Labels are block ids; splits take `train_per_class` and
/// `val_per_class` random nodes per class and leave the rest for testing.
pub fn generate_sbm(cfg: &SbmConfig, seed: u64) -> Result<Graph> {
    cfg.validate()?;
    let n = cfg.blocks * cfg.nodes_per_block;
    let labels: Vec<usize> = (0..n).map(|i| i / cfg.nodes_per_block).collect();

    let mut rng = stream_rng(seed, 1);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if labels[i] == labels[j] {
                cfg.p_in
            } else {
                cfg.p_out
            };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }

    let mut rng = stream_rng(seed, 2);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut features = Matrix::zeros((n, cfg.feature_dim));
    for (i, mut row) in features.rows_mut().into_iter().enumerate() {
        for v in row.iter_mut() {
            *v = cfg.feature_noise * noise.sample(&mut rng);
        }
        row[labels[i]] += 1.0;
    }

    let mut rng = stream_rng(seed, 3);
    let mut splits = Splits::default();
    for c in 0..cfg.blocks {
        let mut members: Vec<usize> =
            (c * cfg.nodes_per_block..(c + 1) * cfg.nodes_per_block).collect();
        members.shuffle(&mut rng);
        let t = cfg.train_per_class;
        let v = (t + cfg.val_per_class).min(members.len());
        splits.train.extend_from_slice(&members[..t]);
        splits.val.extend_from_slice(&members[t..v]);
        splits.test.extend_from_slice(&members[v..]);
    }
    splits.train.sort_unstable();
    splits.val.sort_unstable();
    splits.test.sort_unstable();

    Graph::new(n, cfg.blocks, edges, features, labels, splits)
}
