//! Run configuration: training hyperparameters, the synthetic-graph
//! generator, and the flat `key = value` file format they are read from.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SbmConfig;

/// Training hyperparameters shared by every method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Weight of the label-entropy term in the M-step.
    pub beta: f64,
    /// Weight of the unlabeled cross-entropy in the E-step.
    pub lambda: f64,
    /// Weight of the unlabeled-entropy term during pretraining.
    pub gamma: f64,
    /// Gumbel-Softmax temperature.
    pub tau: f64,
    /// Structure samples averaged for E-step targets.
    pub samples: usize,
    /// Structure samples averaged into E-step weights; 0 uses the stable
    /// fusion instead.
    pub reweight_samples: usize,
    pub lr: f64,
    /// Weight decay of pretraining and the first EM iteration.
    pub weight_decay: f64,
    /// Weight decay of later EM iterations.
    pub weight_decay_later: f64,
    pub dropout: f64,
    pub attention_dropout: f64,
    pub hidden: usize,
    pub epochs: usize,
    pub em_iterations: usize,
    /// Binary structure samples with straight-through gradients; otherwise
    /// relaxed samples.
    pub straight_through: bool,
    /// Learn the hard attention (off: every edge kept).
    pub hard: bool,
    /// Learn the soft attention (off: uniform weights over the support).
    pub soft: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            beta: 0.4,
            lambda: 0.8,
            gamma: 0.5,
            tau: 1.0,
            samples: 5,
            reweight_samples: 0,
            lr: 0.05,
            weight_decay: 5e-4,
            weight_decay_later: 5e-4,
            dropout: 0.5,
            attention_dropout: 0.2,
            hidden: 32,
            epochs: 200,
            em_iterations: 2,
            straight_through: true,
            hard: true,
            soft: true,
        }
    }
}

impl Hyperparams {
    /// Defaults for citation-scale graphs.
    pub fn citation() -> Self {
        Self {
            hidden: 16,
            weight_decay_later: 1e-4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("beta", self.beta),
            ("lambda", self.lambda),
            ("gamma", self.gamma),
            ("weight_decay", self.weight_decay),
            ("weight_decay_later", self.weight_decay_later),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(
                    key,
                    format!("must be a finite value >= 0, got {v}"),
                ));
            }
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::config(
                "tau",
                format!("must be > 0, got {}", self.tau),
            ));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::config("lr", format!("must be > 0, got {}", self.lr)));
        }
        if self.samples == 0 {
            return Err(Error::config("samples", "must be at least 1"));
        }
        for (key, v) in [
            ("dropout", self.dropout),
            ("attention_dropout", self.attention_dropout),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(key, format!("must be in [0, 1), got {v}")));
            }
        }
        if self.hidden == 0 {
            return Err(Error::config("hidden", "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        Ok(())
    }

    /// Weight decay used during EM iteration `iter` (0-based).
    pub fn weight_decay_at(&self, iter: usize) -> f64 {
        if iter == 0 {
            self.weight_decay
        } else {
            self.weight_decay_later
        }
    }
}

/// Everything a command needs besides its graph and seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Registered method name (see `experiments::method_names`).
    pub method: String,
    pub hyper: Hyperparams,
    pub sbm: SbmConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: "gdamn".into(),
            hyper: Hyperparams::default(),
            sbm: SbmConfig::default(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, raw: &str) -> Result<T>
where
    T::Err: Display,
{
    raw.parse()
        .map_err(|e: T::Err| Error::config(key, format!("cannot parse `{raw}`: {e}")))
}

impl RunConfig {
    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let raw = raw.trim();
        let h = &mut self.hyper;
        let s = &mut self.sbm;
        match key {
            "method" => self.method = raw.to_string(),
            "beta" => h.beta = parse_value(key, raw)?,
            "lambda" => h.lambda = parse_value(key, raw)?,
            "gamma" => h.gamma = parse_value(key, raw)?,
            "tau" => h.tau = parse_value(key, raw)?,
            "samples" => h.samples = parse_value(key, raw)?,
            "reweight_samples" => h.reweight_samples = parse_value(key, raw)?,
            "lr" => h.lr = parse_value(key, raw)?,
            "weight_decay" => h.weight_decay = parse_value(key, raw)?,
            "weight_decay_later" => h.weight_decay_later = parse_value(key, raw)?,
            "dropout" => h.dropout = parse_value(key, raw)?,
            "attention_dropout" => h.attention_dropout = parse_value(key, raw)?,
            "hidden" => h.hidden = parse_value(key, raw)?,
            "epochs" => h.epochs = parse_value(key, raw)?,
            "em_iterations" => h.em_iterations = parse_value(key, raw)?,
            "straight_through" => h.straight_through = parse_value(key, raw)?,
            "hard" => h.hard = parse_value(key, raw)?,
            "soft" => h.soft = parse_value(key, raw)?,
            "sbm.blocks" => s.blocks = parse_value(key, raw)?,
            "sbm.nodes_per_block" => s.nodes_per_block = parse_value(key, raw)?,
            "sbm.p_in" => s.p_in = parse_value(key, raw)?,
            "sbm.p_out" => s.p_out = parse_value(key, raw)?,
            "sbm.feature_dim" => s.feature_dim = parse_value(key, raw)?,
            "sbm.feature_noise" => s.feature_noise = parse_value(key, raw)?,
            "sbm.train_per_class" => s.train_per_class = parse_value(key, raw)?,
            "sbm.val_per_class" => s.val_per_class = parse_value(key, raw)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// All fields as `(key, value)` pairs in a fixed order. Floats use the
    /// shortest representation that parses back to the same value.
    pub fn pairs(&self) -> Vec<(String, String)> {
        let h = &self.hyper;
        let s = &self.sbm;
        let mut out: Vec<(&str, String)> = vec![
            ("method", self.method.clone()),
            ("beta", h.beta.to_string()),
            ("lambda", h.lambda.to_string()),
            ("gamma", h.gamma.to_string()),
            ("tau", h.tau.to_string()),
            ("samples", h.samples.to_string()),
            ("reweight_samples", h.reweight_samples.to_string()),
            ("lr", h.lr.to_string()),
            ("weight_decay", h.weight_decay.to_string()),
            ("weight_decay_later", h.weight_decay_later.to_string()),
            ("dropout", h.dropout.to_string()),
            ("attention_dropout", h.attention_dropout.to_string()),
            ("hidden", h.hidden.to_string()),
            ("epochs", h.epochs.to_string()),
            ("em_iterations", h.em_iterations.to_string()),
            ("straight_through", h.straight_through.to_string()),
            ("hard", h.hard.to_string()),
            ("soft", h.soft.to_string()),
        ];
        out.extend([
            ("sbm.blocks", s.blocks.to_string()),
            ("sbm.nodes_per_block", s.nodes_per_block.to_string()),
            ("sbm.p_in", s.p_in.to_string()),
            ("sbm.p_out", s.p_out.to_string()),
            ("sbm.feature_dim", s.feature_dim.to_string()),
            ("sbm.feature_noise", s.feature_noise.to_string()),
            ("sbm.train_per_class", s.train_per_class.to_string()),
            ("sbm.val_per_class", s.val_per_class.to_string()),
        ]);
        out.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        self.sbm.validate()
    }

    /// Parses `key = value` lines on top of `self`. Everything after a `#`
    /// is a comment; blank lines are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(
                    format!("line {}", n + 1),
                    format!("expected `key = value`, got `{line}`"),
                )
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        self.pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
