//! Cross-entropy loss, momentum optimizer with step decay, and the
//! per-fold training loop.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{make_batch_with, LambdaMode, DEFAULT_BATCH_SIZE};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{build_model, Model, ModelSpec};
use crate::scalar::Real;
use crate::tensor::{Gradients, Mode, ParamStore, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub decay_rate: f64,
    /// Epochs between learning-rate decays.
    pub decay_every: usize,
    pub batch_size: usize,
    /// Seeds batch order and dropout.
    pub seed: u64,
    #[serde(default)]
    pub lambda: LambdaMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 0.01,
            momentum: 0.9,
            decay_rate: 0.95,
            decay_every: 10,
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 0,
            lambda: LambdaMode::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return Err(Error::config(format!(
                "decay rate must lie in (0, 1], got {}",
                self.decay_rate
            )));
        }
        if self.decay_every == 0 {
            return Err(Error::config("decay interval must be at least 1 epoch"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        Ok(())
    }

    /// `lr₀ · decay_rate^floor(epoch / decay_every)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.decay_rate.powi((epoch / self.decay_every) as i32)
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    pub velocity: Vec<Tensor<T>>,
    pub lr: f64,
    pub step: usize,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(store: &ParamStore<T>, lr: f64) -> Self {
        Self {
            velocity: store
                .iter()
                .map(|(_, _, t)| Tensor::zeros(t.rows(), t.cols()))
                .collect(),
            lr,
            step: 0,
        }
    }
}

pub fn decay_lr<T: Real>(state: &mut OptimizerState<T>, epoch: usize, config: &TrainConfig) {
    state.lr = config.lr_at(epoch);
}

/// Classical momentum: `v ← μv + g`, `θ ← θ − lr·v`.
pub fn momentum_step<T: Real>(
    store: &mut ParamStore<T>,
    grads: &Gradients<T>,
    state: &mut OptimizerState<T>,
    momentum: f64,
) -> Result<()> {
    if grads.len() != store.len() || state.velocity.len() != store.len() {
        return Err(Error::shape(format!(
            "{} parameters, {} gradients, {} velocities",
            store.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    let mu = T::from_f64_lossy(momentum);
    let lr = T::from_f64_lossy(state.lr);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let g = grads.get(id);
        let v = &mut state.velocity[id.0];
        let p = store.get_mut(id);
        if g.shape() != p.shape() || v.shape() != p.shape() {
            return Err(Error::shape(format!(
                "parameter {} is {:?}, gradient {:?}, velocity {:?}",
                id.0,
                p.shape(),
                g.shape(),
                v.shape()
            )));
        }
        for ((pv, vv), gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vv = mu * *vv + *gv;
            *pv -= lr * *vv;
        }
    }
    state.step += 1;
    Ok(())
}

/// Mean over rows of `-ln max(p[label], 1e-12)`.
pub fn cross_entropy<T: Real>(probs: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.input(probs.clone());
    let l = tape.cross_entropy(p, labels)?;
    Ok(tape.value(l).item()?.to_f64_lossy())
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn argmax_rows<T: Real>(probs: &Tensor<T>) -> Vec<usize> {
    (0..probs.rows())
        .map(|r| {
            let row = probs.row(r);
            let mut best = 0;
            for (c, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy<T: Real>(probs: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    if probs.rows() != labels.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            probs.rows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::param("accuracy of an empty set"));
    }
    let hits = argmax_rows(probs)
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn first_loss(&self) -> Option<f64> {
        self.records.first().map(|r| r.loss)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,train_acc,lr\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{},{},{}", r.epoch, r.loss, r.train_acc, r.lr);
        }
        s
    }
}

/// Trains a fresh model of `spec` on `graphs`. Epochs are numbered from 1
/// in the history; the learning rate of epoch `e` is `lr_at(e - 1)`.
pub fn train_fold<T: Real>(
    graphs: &[&Graph],
    spec: &ModelSpec,
    config: &TrainConfig,
) -> Result<(Model<T>, TrainHistory)> {
    train_fold_observed(graphs, spec, config, |_| {})
}

/// [`train_fold`] with a callback after every epoch.
pub fn train_fold_observed<T: Real>(
    graphs: &[&Graph],
    spec: &ModelSpec,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Model<T>, TrainHistory)> {
    config.validate()?;
    let first = graphs
        .first()
        .ok_or_else(|| Error::param("cannot train on an empty set"))?;
    let mut model = build_model::<T>(spec, first.feature_dim())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = OptimizerState::new(model.params(), config.learning_rate);
    let mut order: Vec<usize> = (0..graphs.len()).collect();
    let mut history = TrainHistory::default();

    for epoch in 0..config.epochs {
        decay_lr(&mut opt, epoch, config);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let members: Vec<&Graph> = chunk.iter().map(|&i| graphs[i]).collect();
            let batch = make_batch_with::<T>(&members, config.lambda)?;
            let mut tape = Tape::new();
            let probs = model.forward(&mut tape, &batch, Mode::Train, &mut rng)?;
            let loss = tape.cross_entropy(probs, &batch.labels)?;
            let value = tape.value(loss).item()?.to_f64_lossy();
            if !value.is_finite() {
                return Err(Error::Training {
                    epoch: epoch + 1,
                    reason: format!("loss became {value}"),
                });
            }
            loss_sum += value * chunk.len() as f64;
            hits += argmax_rows(tape.value(probs))
                .iter()
                .zip(&batch.labels)
                .filter(|(p, l)| p == l)
                .count();
            let grads = tape.backward(loss, model.params())?;
            momentum_step(model.params_mut(), &grads, &mut opt, config.momentum)?;
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            loss: loss_sum / graphs.len() as f64,
            train_acc: hits as f64 / graphs.len() as f64,
            lr: opt.lr,
        };
        log::debug!(
            "epoch {} loss {:.5} acc {:.4} lr {:.6}",
            record.epoch,
            record.loss,
            record.train_acc,
            record.lr
        );
        on_epoch(&record);
        history.records.push(record);
    }
    Ok((model, history))
}

/// Fraction of `graphs` whose eval-mode argmax matches the label.
pub fn evaluate<T: Real>(model: &mut Model<T>, graphs: &[&Graph]) -> Result<f64> {
    evaluate_with(model, graphs, DEFAULT_BATCH_SIZE, LambdaMode::default())
}

pub fn evaluate_with<T: Real>(
    model: &mut Model<T>,
    graphs: &[&Graph],
    batch_size: usize,
    lambda: LambdaMode,
) -> Result<f64> {
    if graphs.is_empty() {
        return Err(Error::param("cannot evaluate on an empty set"));
    }
    let mut hits = 0usize;
    for chunk in graphs.chunks(batch_size.max(1)) {
        let batch = make_batch_with::<T>(chunk, lambda)?;
        let probs = model.predict(&batch)?;
        hits += argmax_rows(&probs)
            .iter()
            .zip(&batch.labels)
            .filter(|(p, l)| p == l)
            .count();
    }
    Ok(hits as f64 / graphs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ParamId;

    #[test]
    fn cross_entropy_examples() {
        let p = Tensor::<f64>::from_f64_rows(&[&[0.0, 1.0]]).unwrap();
        assert_eq!(cross_entropy(&p, &[1]).unwrap(), 0.0);
        let p = Tensor::<f64>::from_f64_rows(&[&[0.5, 0.5]]).unwrap();
        assert!((cross_entropy(&p, &[0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        let p = Tensor::<f64>::from_f64_rows(&[&[0.25, 0.75]]).unwrap();
        assert!((cross_entropy(&p, &[1]).unwrap() + 0.75f64.ln()).abs() < 1e-15);
        assert!(matches!(cross_entropy(&p, &[2]), Err(Error::Parameter(_))));
    }

    fn one_param(v: f64) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::scalar(v));
        (s, id)
    }

    fn const_grad(store: &ParamStore<f64>, g: f64) -> Gradients<f64> {
        let mut tape = Tape::new();
        let w = tape.param(store, ParamId(0));
        let l = tape.scale(w, g);
        let l = tape.sum(l);
        tape.backward(l, store).unwrap()
    }

    #[test]
    fn momentum_examples() {
        let (mut s, id) = one_param(0.0);
        let mut opt = OptimizerState::new(&s, 0.01);
        let g = const_grad(&s, 0.0);
        momentum_step(&mut s, &g, &mut opt, 0.9).unwrap();
        assert_eq!(s.get(id).item().unwrap(), 0.0);

        let (mut s, id) = one_param(0.0);
        let mut opt = OptimizerState::new(&s, 0.01);
        let g = const_grad(&s, 1.0);
        momentum_step(&mut s, &g, &mut opt, 0.9).unwrap();
        assert!((s.get(id).item().unwrap() + 0.01).abs() < 1e-15);
        let g = const_grad(&s, 1.0);
        momentum_step(&mut s, &g, &mut opt, 0.9).unwrap();
        assert!((s.get(id).item().unwrap() + 0.029).abs() < 1e-15);
        assert_eq!(opt.step, 2);
    }

    #[test]
    fn momentum_rejects_mismatched_gradients() {
        let (mut s, _) = one_param(0.0);
        let mut other = ParamStore::new();
        other.add("a", Tensor::zeros(2, 2));
        other.add("b", Tensor::zeros(2, 2));
        let g = Gradients::zeros_like(&other);
        let mut opt = OptimizerState::new(&s, 0.01);
        assert!(matches!(
            momentum_step(&mut s, &g, &mut opt, 0.9),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn decay_schedule() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(0), 0.01);
        assert!((c.lr_at(10) - 0.0095).abs() < 1e-15);
        assert!((c.lr_at(299) - 0.01 * 0.95f64.powi(29)).abs() < 1e-15);
        assert!((c.lr_at(299) - 0.002259).abs() < 5e-7);
    }

    #[test]
    fn accuracy_examples() {
        let p = Tensor::<f64>::from_f64_rows(&[&[0.9, 0.1], &[0.2, 0.8], &[0.5, 0.5], &[0.6, 0.4]])
            .unwrap();
        assert_eq!(accuracy(&p, &[0, 1, 0, 1]).unwrap(), 0.75);
        assert_eq!(accuracy(&p, &[0, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(argmax_rows(&p)[2], 0);
        let empty = Tensor::<f64>::zeros(0, 2);
        assert!(matches!(accuracy(&empty, &[]), Err(Error::Parameter(_))));
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.learning_rate = 0.0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn history_csv_header() {
        let h = TrainHistory {
            records: vec![EpochRecord {
                epoch: 1,
                loss: 0.5,
                train_acc: 1.0,
                lr: 0.01,
            }],
        };
        assert_eq!(h.to_csv(), "epoch,loss,train_acc,lr\n1,0.5,1,0.01\n");
    }
}
