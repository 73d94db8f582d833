//! Loss, optimizers, learning-rate schedule and the training loop.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Network, Param};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Row-wise softmax of `[B, K]` logits.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let k = *logits.shape().last().expect("non-empty shape");
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Tensor::from_vec(logits.shape(), out).expect("same shape")
}

/// Mean softmax cross-entropy over the batch and its gradient with respect
/// to the logits, `(softmax - onehot) / B`.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let (b, k) = match *logits.shape() {
        [b, k] if b == labels.len() => (b, k),
        _ => {
            return Err(Error::ShapeMismatch {
                left: logits.shape().to_vec(),
                right: vec![labels.len()],
                context: "cross_entropy",
            })
        }
    };
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    let inv_b = T::one() / T::from_usize(b).expect("batch size fits");
    let mut grad = logits.data().to_vec();
    let mut loss = T::zero();
    for (row, &label) in grad.chunks_mut(k).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        loss += lse - row[label];
        for v in row.iter_mut() {
            *v = (*v - lse).exp() * inv_b;
        }
        row[label] -= inv_b;
    }
    Ok((loss * inv_b, Tensor::from_vec(logits.shape(), grad)?))
}

/// First and second moment estimates for Adam.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Default for AdamState<T> {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl<T: Scalar> AdamState<T> {
    /// One bias-corrected Adam update of `params` from `grads`.
    pub fn update(&mut self, params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::ShapeMismatch {
                left: vec![params.len()],
                right: vec![grads.len()],
                context: "adam parameter/gradient count",
            });
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                    context: "adam",
                });
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len()) {
            return Err(Error::InvalidConfig(
                "adam state does not match the parameter set".into(),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::from_f64_lossy(self.beta1);
        let b2 = T::from_f64_lossy(self.beta2);
        let c1 = T::from_f64_lossy(1.0 - self.beta1);
        let c2 = T::from_f64_lossy(1.0 - self.beta2);
        let bias1 = T::from_f64_lossy(1.0 - self.beta1.powi(t));
        let bias2 = T::from_f64_lossy(1.0 - self.beta2.powi(t));
        let lr = T::from_f64_lossy(lr);
        let eps = T::from_f64_lossy(self.eps);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = b1 * m[j] + c1 * gj;
                v[j] = b2 * v[j] + c2 * gj * gj;
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Adam => "adam",
            Self::Sgd => "sgd",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(Self::Adam),
            "sgd" => Ok(Self::Sgd),
            other => Err(Error::InvalidConfig(format!(
                "unknown optimizer `{other}` (adam or sgd)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Optimizer<T> {
    Adam(AdamState<T>),
    Sgd,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind) -> Self {
        match kind {
            OptimizerKind::Adam => Self::Adam(AdamState::default()),
            OptimizerKind::Sgd => Self::Sgd,
        }
    }

    /// Applies one update from the gradients stored in `params`.
    pub fn step(&mut self, params: Vec<&mut Param<T>>, lr: f64) -> Result<()> {
        match self {
            Self::Adam(state) => {
                let (mut values, grads): (Vec<&mut Tensor<T>>, Vec<&Tensor<T>>) =
                    params.into_iter().map(|p| (&mut p.value, &p.grad)).unzip();
                state.update(&mut values, &grads, lr)
            }
            Self::Sgd => {
                let lr = T::from_f64_lossy(lr);
                for p in params {
                    for (w, &g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
                        *w -= lr * g;
                    }
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    /// Multiplier applied every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub seed: u64,
    /// Train on a seeded random subset of this many images.
    pub subset_size: Option<usize>,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 100,
            lr0: 1e-4,
            lr_decay: 0.8,
            decay_every: 10,
            seed: 0,
            subset_size: None,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(format!("{what} must be positive")));
        if self.epochs == 0 {
            return bad("epochs");
        }
        if self.batch_size == 0 {
            return bad("batch_size");
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr0");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return bad("lr_decay");
        }
        if self.decay_every == 0 {
            return bad("decay_every");
        }
        if self.subset_size == Some(0) {
            return bad("subset_size");
        }
        Ok(())
    }

    /// Learning rate during zero-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// One-based epoch number.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

pub fn write_epoch_log<W: Write>(mut out: W, records: &[EpochRecord]) -> std::io::Result<()> {
    writeln!(out, "epoch,lr,train_loss,train_acc,val_acc")?;
    for r in records {
        let val = r.val_acc.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{},{}", r.epoch, r.lr, r.train_loss, r.train_acc, val)?;
    }
    Ok(())
}

/// Eval-mode accuracy, processed in chunks of `batch` images.
pub fn accuracy<T: Scalar>(net: &Network<T>, data: &Dataset<T>, batch: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("accuracy".into()));
    }
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let (x, y) = data.batch(chunk)?;
        correct += net.predict(&x)?.iter().zip(&y).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Mini-batch training with a seeded shuffle each epoch. `on_epoch` sees
/// every record as soon as it is complete. The network is left in eval mode.
pub fn train<T: Scalar>(
    net: &mut Network<T>,
    train_set: &Dataset<T>,
    val_set: Option<&Dataset<T>>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset("training set".into()));
    }
    let subset;
    let data = match config.subset_size {
        Some(size) if size < train_set.len() => {
            subset = train_set.subset(size, config.seed)?;
            &subset
        }
        _ => train_set,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optimizer = Optimizer::new(config.optimizer);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        net.train();
        let lr = config.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut seen = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            if chunk.len() < 2 {
                log::debug!("skipping a trailing batch of one image");
                continue;
            }
            let (x, y) = data.batch(chunk)?;
            net.zero_grad();
            let logits = net.forward(&x)?;
            let (loss, grad) = cross_entropy(&logits, &y)?;
            let loss = loss.to_f64_lossy();
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: epoch + 1,
                    batch: b,
                    loss,
                });
            }
            net.backward(&grad)?;
            optimizer.step(net.params_mut(), lr)?;
            loss_sum += loss * chunk.len() as f64;
            correct += logits.argmax_lastaxis().iter().zip(&y).filter(|(p, l)| p == l).count();
            seen += chunk.len();
        }
        net.eval();
        let val_acc = val_set.map(|v| accuracy(net, v, 500)).transpose()?;
        let record = EpochRecord {
            epoch: epoch + 1,
            lr,
            train_loss: loss_sum / seen as f64,
            train_acc: correct as f64 / seen as f64,
            val_acc,
        };
        log::info!(
            "epoch {} lr {:.3e} loss {:.4} train_acc {:.4} val_acc {}",
            record.epoch,
            record.lr,
            record.train_loss,
            record.train_acc,
            val_acc.map_or("-".into(), |v| format!("{v:.4}"))
        );
        on_epoch(&record);
        log.push(record);
    }
    net.eval();
    Ok(log)
}
