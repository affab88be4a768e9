//! Variational EM training: entropy-regularized pretraining of the feature
//! propagator Q, then alternating M-steps (label propagator P) and E-steps
//! (Q under the learned weights). Final predictions always come from Q.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    fuse_stable, gumbel_sample_structure, soft_attention, structure_prior, LabelState,
};
use crate::config::Hyperparams;
use crate::error::{Error, Result};
use crate::graph::{laplacian_weights, EdgeWeights, Graph};
use crate::models::{PForward, PNetwork, PVariant, QNetwork, SampleMode};
use crate::seed::{derive, stream_rng};
use crate::tensor::{softmax_rows, Adam, AdamConfig, Matrix, ParamStore, Tape, Var};

/// Metrics recorded after one optimizer step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetric {
    /// Global epoch counter across phases, starting at 1.
    pub epoch: usize,
    /// `pretrain`, `gcn`, `m<k>` or `e<k>` (k counts EM iterations from 1).
    pub phase: String,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
}

/// Fraction of `nodes` whose argmax prediction matches the label; 0 for an
/// empty set.
pub fn accuracy(probs: &Matrix, labels: &[usize], nodes: &[usize]) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    let pred = crate::attention::argmax_rows(probs);
    nodes.iter().filter(|&&i| pred[i] == labels[i]).count() as f64 / nodes.len() as f64
}

fn mean_cross_entropy(probs: &Matrix, labels: &[usize], nodes: &[usize]) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    nodes
        .iter()
        .map(|&i| -probs[[i, labels[i]]].max(f64::MIN_POSITIVE).ln())
        .sum::<f64>()
        / nodes.len() as f64
}

/// Terms of the feature-propagator objective.
#[derive(Clone, Copy, Debug)]
pub struct QObjective<'a> {
    /// Weight of the mean prediction entropy over unlabeled nodes.
    pub gamma: f64,
    /// Soft targets for unlabeled nodes and their weight `λ`.
    pub targets: Option<(&'a Matrix, f64)>,
}

/// Mean labeled cross-entropy, plus `γ` times the mean unlabeled entropy,
/// plus `λ` times the mean unlabeled cross-entropy against the targets.
pub fn q_loss(tape: &mut Tape, logits: Var, g: &Graph, obj: QObjective) -> Result<Var> {
    let (n, c) = (g.n_nodes(), g.n_classes());
    if tape.shape(logits) != (n, c) {
        return Err(Error::dim(
            "q_loss",
            format!("logits {:?} for {n} × {c}", tape.shape(logits)),
        ));
    }
    let train = &g.splits().train;
    let unlabeled = g.unlabeled();
    let log_p = tape.log_softmax_rows(logits);

    let mut picks = Matrix::zeros((n, c));
    for &i in train {
        picks[[i, g.labels()[i]]] = 1.0 / train.len() as f64;
    }
    let picks = tape.constant(picks);
    let ce = tape.mul(log_p, picks)?;
    let ce = tape.sum(ce);
    let mut loss = tape.neg(ce);

    if unlabeled.is_empty() {
        return Ok(loss);
    }
    let u = unlabeled.len() as f64;
    if obj.gamma > 0.0 {
        let mut rows = Matrix::zeros((n, 1));
        for &i in &unlabeled {
            rows[[i, 0]] = obj.gamma / u;
        }
        let rows = tape.constant(rows);
        let p = tape.exp(log_p);
        let plogp = tape.mul(p, log_p)?;
        let plogp = tape.mul_col(plogp, rows)?;
        let ent = tape.sum(plogp);
        loss = tape.sub(loss, ent)?;
    }
    if let Some((targets, lambda)) = obj.targets {
        if targets.dim() != (n, c) {
            return Err(Error::dim("q_loss", "targets must be n × C"));
        }
        if lambda > 0.0 {
            let mut t = Matrix::zeros((n, c));
            for &i in &unlabeled {
                for k in 0..c {
                    t[[i, k]] = lambda * targets[[i, k]] / u;
                }
            }
            let t = tape.constant(t);
            let xe = tape.mul(log_p, t)?;
            let xe = tape.sum(xe);
            loss = tape.sub(loss, xe)?;
        }
    }
    Ok(loss)
}

/// The three summed terms of the label-propagator objective.
#[derive(Clone, Copy, Debug)]
pub struct PLossTerms {
    /// Cross-entropy of P's predictions against the label state, summed over
    /// nodes.
    pub reconstruction: Var,
    /// KL between edge posteriors and the structure prior, summed over edges
    /// (absent without hard attention).
    pub kl: Option<Var>,
    /// Entropy of P's predictions, summed over nodes.
    pub entropy: Var,
    /// `(reconstruction + kl + β · entropy) / n`.
    pub total: Var,
}

pub fn p_loss(
    tape: &mut Tape,
    out: &PForward,
    labels: &LabelState,
    prior: &[f64],
    beta: f64,
) -> Result<PLossTerms> {
    let (n, _) = tape.shape(out.logits);
    let log_p = tape.log_softmax_rows(out.logits);
    let y = tape.constant(labels.probs().clone());
    let ce = tape.mul(log_p, y)?;
    let ce = tape.sum(ce);
    let reconstruction = tape.neg(ce);
    let p = tape.exp(log_p);
    let plogp = tape.mul(p, log_p)?;
    let plogp = tape.sum(plogp);
    let entropy = tape.neg(plogp);

    let mut total = reconstruction;
    let kl = match out.hard_probs {
        Some(probs) => {
            let kl = crate::attention::kl_bernoulli_var(tape, probs, prior)?;
            total = tape.add(total, kl)?;
            Some(kl)
        }
        None => None,
    };
    if beta > 0.0 {
        let weighted = tape.scale(entropy, beta);
        total = tape.add(total, weighted)?;
    }
    let total = tape.scale(total, 1.0 / n as f64);
    Ok(PLossTerms {
        reconstruction,
        kl,
        entropy,
        total,
    })
}

fn check_loss(value: f64, phase: &str, epoch: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged(format!(
            "{phase} loss is {value} at epoch {epoch}"
        )))
    }
}

/// Best-validation checkpoint: higher accuracy wins, ties go to lower loss.
struct Checkpoint {
    key: (f64, f64),
    store: Option<ParamStore>,
}

impl Checkpoint {
    fn new() -> Self {
        Self {
            key: (f64::NEG_INFINITY, f64::NEG_INFINITY),
            store: None,
        }
    }

    fn offer(&mut self, val_accuracy: f64, val_loss: f64, store: &ParamStore) {
        let key = (val_accuracy, -val_loss);
        if key > self.key {
            self.key = key;
            self.store = Some(store.clone());
        }
    }

    fn restore(self, store: &mut ParamStore) {
        if let Some(best) = self.store {
            *store = best;
        }
    }
}

/// Running log shared by all phases of one run.
#[derive(Clone, Debug, Default)]
pub struct History {
    pub epochs: Vec<EpochMetric>,
}

impl History {
    fn push(&mut self, phase: &str, train_loss: f64, val_accuracy: f64, test_accuracy: f64) {
        self.epochs.push(EpochMetric {
            epoch: self.epochs.len() + 1,
            phase: phase.to_string(),
            train_loss,
            val_accuracy,
            test_accuracy,
        });
    }
}

/// Trains Q for `hp.epochs` epochs under fixed `weights`, then restores the
/// best-validation parameters.
#[allow(clippy::too_many_arguments)]
pub fn train_q<R: Rng + ?Sized>(
    q: &mut QNetwork,
    g: &Graph,
    weights: &EdgeWeights,
    obj: QObjective,
    hp: &Hyperparams,
    weight_decay: f64,
    phase: &str,
    rng: &mut R,
    history: &mut History,
) -> Result<()> {
    let mut adam = Adam::new(
        &q.store,
        AdamConfig {
            lr: hp.lr,
            weight_decay,
            ..AdamConfig::default()
        },
    );
    let mut best = Checkpoint::new();
    let splits = g.splits();
    for epoch in 0..hp.epochs {
        let mut tape = Tape::new();
        let bound = q.store.bind(&mut tape);
        let logits = q.forward(&mut tape, &bound, g, weights, true, rng)?;
        let loss = q_loss(&mut tape, logits, g, obj)?;
        let value = tape.item(loss);
        check_loss(value, phase, epoch)?;
        let mut grads = tape.backward(loss)?;
        let grads = q.store.collect_grads(&bound, &mut grads);
        adam.step(&mut q.store, &grads)?;

        let probs = q.predict(g, weights)?;
        let val = accuracy(&probs, g.labels(), &splits.val);
        best.offer(
            val,
            mean_cross_entropy(&probs, g.labels(), &splits.val),
            &q.store,
        );
        history.push(
            phase,
            value,
            val,
            accuracy(&probs, g.labels(), &splits.test),
        );
    }
    log::debug!("{phase}: best val accuracy {:.4}", best.key.0);
    best.restore(&mut q.store);
    Ok(())
}

fn sample_mode(hp: &Hyperparams) -> SampleMode {
    if hp.straight_through {
        SampleMode::StraightThrough
    } else {
        SampleMode::Relaxed
    }
}

/// Averages P's class distributions over `samples` structure samples in
/// inference mode.
pub fn marginal<R: Rng + ?Sized>(
    p: &PNetwork,
    g: &Graph,
    labels: &LabelState,
    samples: usize,
    mode: SampleMode,
    rng: &mut R,
) -> Result<Matrix> {
    let mut acc = Matrix::zeros((g.n_nodes(), g.n_classes()));
    for _ in 0..samples.max(1) {
        let mut tape = Tape::new();
        let bound = p.store.bind_frozen(&mut tape);
        let out = p.forward(&mut tape, &bound, g, labels, false, mode, rng)?;
        acc += &softmax_rows(tape.value(out.logits));
    }
    Ok(acc / samples.max(1) as f64)
}

/// Trains P for `hp.epochs` epochs against `labels` with a fixed structure
/// prior, then restores the best-validation parameters.
#[allow(clippy::too_many_arguments)]
pub fn train_p<R: Rng + ?Sized>(
    p: &mut PNetwork,
    g: &Graph,
    labels: &LabelState,
    prior: &[f64],
    hp: &Hyperparams,
    weight_decay: f64,
    phase: &str,
    eval_seed: u64,
    rng: &mut R,
    history: &mut History,
) -> Result<()> {
    let mut adam = Adam::new(
        &p.store,
        AdamConfig {
            lr: hp.lr,
            weight_decay,
            ..AdamConfig::default()
        },
    );
    let mode = sample_mode(hp);
    let mut best = Checkpoint::new();
    let splits = g.splits();
    for epoch in 0..hp.epochs {
        let mut tape = Tape::new();
        let bound = p.store.bind(&mut tape);
        let out = p.forward(&mut tape, &bound, g, labels, true, mode, rng)?;
        let terms = p_loss(&mut tape, &out, labels, prior, hp.beta)?;
        let value = tape.item(terms.total);
        check_loss(value, phase, epoch)?;
        let mut grads = tape.backward(terms.total)?;
        let grads = p.store.collect_grads(&bound, &mut grads);
        adam.step(&mut p.store, &grads)?;

        // Same noise every epoch so checkpoints are compared on equal footing.
        let probs = marginal(p, g, labels, 1, mode, &mut stream_rng(eval_seed, 13))?;
        let val = accuracy(&probs, g.labels(), &splits.val);
        best.offer(
            val,
            mean_cross_entropy(&probs, g.labels(), &splits.val),
            &p.store,
        );
        history.push(
            phase,
            value,
            val,
            accuracy(&probs, g.labels(), &splits.test),
        );
    }
    best.restore(&mut p.store);
    Ok(())
}

/// Aggregation weights from averaging `samples` binary structure samples:
/// soft attention restricted to the averaged support.
pub fn sampled_weights(
    p: &PNetwork,
    g: &Graph,
    labels: &LabelState,
    samples: usize,
    seed: u64,
) -> Result<EdgeWeights> {
    let hard = p.hard_probs(g, labels)?;
    let mut mean = vec![0.0; hard.len()];
    for s in 0..samples {
        let draw = gumbel_sample_structure(&hard, p.tau, derive(seed, s as u64), true)?;
        for (m, d) in mean.iter_mut().zip(draw) {
            *m += d / samples as f64;
        }
    }
    let adj = g.adjacency();
    let support: Vec<f64> = (0..adj.n_messages())
        .map(|k| adj.edge_of[k].map_or(1.0, |e| mean[e]))
        .collect();
    if !p.variant.soft {
        let mut values = support;
        for i in 0..adj.n_nodes {
            let z: f64 = values[adj.inbox(i)].iter().sum();
            for v in &mut values[adj.inbox(i)] {
                *v /= z;
            }
        }
        return Ok(EdgeWeights { values });
    }
    soft_attention(
        g,
        &support,
        p.store.get(p.proj),
        p.store.get(p.scale),
        0.0,
        0,
    )
}

/// Mutable state carried through the EM loop.
#[derive(Clone, Debug)]
pub struct TrainerState {
    pub labels: LabelState,
    pub q: QNetwork,
    /// Weights Q currently propagates with.
    pub q_weights: EdgeWeights,
    pub p: Option<PNetwork>,
    /// Completed EM iterations.
    pub iteration: usize,
    pub history: History,
}

/// Output of a full training run.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub q: QNetwork,
    pub p: Option<PNetwork>,
    /// Final weights of the feature propagator.
    pub weights: EdgeWeights,
    /// Final class distributions from Q.
    pub probs: Matrix,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub history: Vec<EpochMetric>,
}

/// One seeded EM run on a graph.
#[derive(Clone, Debug)]
pub struct Trainer<'g> {
    pub g: &'g Graph,
    pub hp: Hyperparams,
    pub seed: u64,
}

impl<'g> Trainer<'g> {
    pub fn new(g: &'g Graph, hp: Hyperparams, seed: u64) -> Result<Self> {
        hp.validate()?;
        Ok(Self { g, hp, seed })
    }

    fn fresh_q(&self) -> QNetwork {
        let mut rng = stream_rng(self.seed, 10);
        QNetwork::new(
            &mut rng,
            self.g.n_features(),
            &[self.hp.hidden],
            self.g.n_classes(),
            self.hp.dropout,
        )
    }

    /// Q trained on labeled cross-entropy plus `γ` times the unlabeled
    /// entropy under Laplacian weights; labels initialized from its
    /// predictions.
    pub fn pretrain_q(&self) -> Result<TrainerState> {
        let g = self.g;
        let mut q = self.fresh_q();
        let weights = laplacian_weights(g);
        let mut history = History::default();
        let mut rng = stream_rng(self.seed, 12);
        let obj = QObjective {
            gamma: self.hp.gamma,
            targets: None,
        };
        train_q(
            &mut q,
            g,
            &weights,
            obj,
            &self.hp,
            self.hp.weight_decay,
            "pretrain",
            &mut rng,
            &mut history,
        )?;
        let labels = LabelState::from_predictions(g, q.predict(g, &weights)?)?;
        Ok(TrainerState {
            labels,
            q,
            q_weights: weights,
            p: None,
            iteration: 0,
            history,
        })
    }

    fn phase_rng(&self, state: &TrainerState, phase: u64) -> rand_chacha::ChaCha8Rng {
        stream_rng(derive(self.seed, 2 * state.iteration as u64 + phase), 12)
    }

    /// Refreshes labels from Q, recomputes the structure prior, and trains P.
    pub fn m_step(&self, state: &mut TrainerState) -> Result<()> {
        let g = self.g;
        let hp = &self.hp;
        state.labels = LabelState::from_predictions(g, state.q.predict(g, &state.q_weights)?)?;
        let prior = structure_prior(g, &state.labels);
        if state.p.is_none() {
            let mut rng = stream_rng(self.seed, 11);
            state.p = Some(PNetwork::new(
                &mut rng,
                g.n_classes(),
                g.n_features(),
                &[hp.hidden],
                hp.dropout,
                hp.attention_dropout,
                hp.tau,
                PVariant {
                    hard: hp.hard,
                    soft: hp.soft,
                },
            ));
        }
        let mut rng = self.phase_rng(state, 0);
        let phase = format!("m{}", state.iteration + 1);
        let eval_seed = derive(self.seed, 1000 + state.iteration as u64);
        let p = state.p.as_mut().expect("created above");
        train_p(
            p,
            g,
            &state.labels,
            &prior,
            hp,
            hp.weight_decay_at(state.iteration),
            &phase,
            eval_seed,
            &mut rng,
            &mut state.history,
        )
    }

    /// Annotates unlabeled nodes with P's sample marginal, derives Q's
    /// weights from P, and trains Q against the annotations.
    pub fn e_step(&self, state: &mut TrainerState) -> Result<()> {
        let g = self.g;
        let hp = &self.hp;
        let p = state
            .p
            .as_ref()
            .ok_or_else(|| Error::Contract("E-step requires a completed M-step".into()))?;
        let mut rng = self.phase_rng(state, 1);
        let targets = marginal(p, g, &state.labels, hp.samples, sample_mode(hp), &mut rng)?;
        state.labels = LabelState::from_predictions(g, targets)?;
        state.q_weights = if hp.reweight_samples == 0 {
            let hard = p.hard_probs(g, &state.labels)?;
            let soft = p.soft_weights(g)?;
            fuse_stable(g.adjacency(), &hard, &soft)
        } else {
            let seed = derive(self.seed, 2000 + state.iteration as u64);
            sampled_weights(p, g, &state.labels, hp.reweight_samples, seed)?
        };
        let obj = QObjective {
            gamma: 0.0,
            targets: Some((state.labels.probs(), hp.lambda)),
        };
        let phase = format!("e{}", state.iteration + 1);
        train_q(
            &mut state.q,
            g,
            &state.q_weights,
            obj,
            hp,
            hp.weight_decay_at(state.iteration),
            &phase,
            &mut rng,
            &mut state.history,
        )?;
        state.iteration += 1;
        Ok(())
    }

    /// Pretraining, then `em_iterations` rounds of M- and E-steps; predicts
    /// with Q under its final weights.
    pub fn run(&self) -> Result<RunOutput> {
        let mut state = self.pretrain_q()?;
        for _ in 0..self.hp.em_iterations {
            self.m_step(&mut state)?;
            self.e_step(&mut state)?;
        }
        finish(self.g, state)
    }
}

fn finish(g: &Graph, state: TrainerState) -> Result<RunOutput> {
    let probs = state.q.predict(g, &state.q_weights)?;
    Ok(RunOutput {
        val_accuracy: accuracy(&probs, g.labels(), &g.splits().val),
        test_accuracy: accuracy(&probs, g.labels(), &g.splits().test),
        probs,
        q: state.q,
        p: state.p,
        weights: state.q_weights,
        history: state.history.epochs,
    })
}

/// Plain supervised GCN under fixed weights: labeled cross-entropy only,
/// best-validation checkpoint.
pub fn train_supervised(
    g: &Graph,
    weights: &EdgeWeights,
    hp: &Hyperparams,
    seed: u64,
) -> Result<RunOutput> {
    hp.validate()?;
    let trainer = Trainer::new(g, hp.clone(), seed)?;
    let mut q = trainer.fresh_q();
    let mut history = History::default();
    let mut rng = stream_rng(seed, 12);
    let obj = QObjective {
        gamma: 0.0,
        targets: None,
    };
    train_q(
        &mut q,
        g,
        weights,
        obj,
        hp,
        hp.weight_decay,
        "gcn",
        &mut rng,
        &mut history,
    )?;
    let labels = LabelState::from_predictions(g, q.predict(g, weights)?)?;
    finish(
        g,
        TrainerState {
            labels,
            q,
            q_weights: weights.clone(),
            p: None,
            iteration: 0,
            history,
        },
    )
}
