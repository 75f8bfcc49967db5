use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{confidence_from_logits, HeadKind, MlpModel};
use super::{ModelError, TrainError, FEATURE_DIM};
use crate::model::ConflictType;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation-loss improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Inverse-frequency class weights in the loss.
    pub class_weighting: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 100,
            patience: 5,
            seed: 0,
            class_weighting: true,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!("learning rate {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(TrainError::Config("batch_size and max_epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Pair features with both heads' labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPairExample {
    features: Vec<f64>,
    type_label: ConflictType,
}

impl LabeledPairExample {
    pub fn new(features: Vec<f64>, type_label: ConflictType) -> Result<Self, ModelError> {
        if features.len() != FEATURE_DIM {
            return Err(ModelError::InputDimension {
                expected: FEATURE_DIM,
                found: features.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        Ok(Self { features, type_label })
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn type_label(&self) -> ConflictType {
        self.type_label
    }

    /// 1 exactly when the type is a conflict.
    pub fn binary_label(&self) -> usize {
        usize::from(self.type_label.is_conflict())
    }

    pub fn label_for(&self, head: HeadKind) -> usize {
        match head {
            HeadKind::Binary => self.binary_label(),
            HeadKind::FourWay => self.type_label.index(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub class_weights: Vec<f64>,
}

/// Per-parameter gradients, laid out like the model's layers.
#[derive(Debug, Clone)]
pub(crate) struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

fn stack(examples: &[&LabeledPairExample]) -> Array2<f64> {
    Array2::from_shape_fn((examples.len(), FEATURE_DIM), |(r, c)| examples[r].features[c])
}

/// Mean class-weighted cross-entropy and, optionally, its gradients.
pub(crate) fn loss_and_gradients(
    model: &MlpModel,
    inputs: &Array2<f64>,
    labels: &[usize],
    class_weights: &[f64],
    with_gradients: bool,
) -> (f64, Option<Gradients>) {
    let n = inputs.nrows() as f64;
    let pre = model.forward_batch(inputs);
    let logits = pre.last().expect("model has layers");
    let mut delta = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for (r, row) in logits.axis_iter(Axis(0)).enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = row.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
        let y = labels[r];
        let w = class_weights[y];
        loss += w * (log_sum - row[y]);
        for (c, l) in row.iter().enumerate() {
            let p = (l - log_sum).exp();
            delta[[r, c]] = w * (p - if c == y { 1.0 } else { 0.0 }) / n;
        }
    }
    loss /= n;
    if !with_gradients {
        return (loss, None);
    }

    let layers = model.layers();
    let mut grad_w = vec![Array2::zeros((0, 0)); layers.len()];
    let mut grad_b = vec![Array1::zeros(0); layers.len()];
    for i in (0..layers.len()).rev() {
        let input_activation = if i == 0 {
            inputs.clone()
        } else {
            pre[i - 1].mapv(|v| v.max(0.0))
        };
        grad_w[i] = delta.t().dot(&input_activation);
        grad_b[i] = delta.sum_axis(Axis(0));
        if i > 0 {
            let mut upstream = delta.dot(&layers[i].weights);
            upstream.zip_mut_with(&pre[i - 1], |d, &z| {
                if z <= 0.0 {
                    *d = 0.0;
                }
            });
            delta = upstream;
        }
    }
    (
        loss,
        Some(Gradients {
            weights: grad_w,
            biases: grad_b,
        }),
    )
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
}

impl Adam {
    fn new(model: &MlpModel, lr: f64) -> Self {
        let zw = || model.layers().iter().map(|l| Array2::zeros(l.weights.raw_dim())).collect();
        let zb = || model.layers().iter().map(|l| Array1::zeros(l.bias.raw_dim())).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m_w: zw(),
            v_w: zw(),
            m_b: zb(),
            v_b: zb(),
        }
    }

    fn update(&mut self, model: &mut MlpModel, grads: &Gradients) {
        self.step += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let lr = self.lr;
        let apply = |param: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *param -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (i, layer) in model.layers_mut().iter_mut().enumerate() {
            ndarray::Zip::from(&mut layer.weights)
                .and(&grads.weights[i])
                .and(&mut self.m_w[i])
                .and(&mut self.v_w[i])
                .for_each(|p, &g, m, v| apply(p, g, m, v));
            ndarray::Zip::from(&mut layer.bias)
                .and(&grads.biases[i])
                .and(&mut self.m_b[i])
                .and(&mut self.v_b[i])
                .for_each(|p, &g, m, v| apply(p, g, m, v));
        }
    }
}

fn accuracy(model: &MlpModel, inputs: &Array2<f64>, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let logits = model.forward_batch(inputs).pop().expect("model has layers");
    let correct = logits
        .axis_iter(Axis(0))
        .zip(labels)
        .filter(|(row, &y)| confidence_from_logits(row.as_slice().expect("contiguous")).0 == y)
        .count();
    correct as f64 / labels.len() as f64
}

/// Trains one head. The first `split.0` examples form the training set and
/// the next `split.1` the validation set; the returned model is the one
/// with the lowest validation loss (earliest on ties).
pub fn train(
    examples: &[LabeledPairExample],
    split: (usize, usize),
    config: &TrainConfig,
    head: HeadKind,
) -> Result<(MlpModel, TrainingLog), TrainError> {
    config.validate()?;
    let (train_count, val_count) = split;
    if train_count == 0 || val_count == 0 || train_count + val_count > examples.len() {
        return Err(TrainError::Split {
            train: train_count,
            val: val_count,
            available: examples.len(),
        });
    }
    let train_set: Vec<&LabeledPairExample> = examples[..train_count].iter().collect();
    let val_set: Vec<&LabeledPairExample> = examples[train_count..train_count + val_count].iter().collect();
    let train_labels: Vec<usize> = train_set.iter().map(|e| e.label_for(head)).collect();
    let val_labels: Vec<usize> = val_set.iter().map(|e| e.label_for(head)).collect();

    let classes = head.classes();
    let mut counts = vec![0usize; classes];
    for &y in &train_labels {
        counts[y] += 1;
    }
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(TrainError::SingleClass);
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(TrainError::MissingClass(missing));
    }
    let class_weights: Vec<f64> = if config.class_weighting {
        counts
            .iter()
            .map(|&c| train_count as f64 / (classes as f64 * c as f64))
            .collect()
    } else {
        vec![1.0; classes]
    };

    let train_x = stack(&train_set);
    let val_x = stack(&val_set);

    let mut model = MlpModel::new(head, config.seed);
    let mut adam = Adam::new(&model, config.learning_rate);
    let mut order: Vec<usize> = (0..train_count).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5eed_5eed_5eed);

    let mut best: Option<(f64, MlpModel, usize)> = None;
    let mut stale = 0;
    let mut log = TrainingLog {
        epochs: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
        class_weights: class_weights.clone(),
    };

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(config.batch_size) {
            let x = Array2::from_shape_fn((batch.len(), FEATURE_DIM), |(r, c)| train_set[batch[r]].features[c]);
            let y: Vec<usize> = batch.iter().map(|&i| train_labels[i]).collect();
            let (loss, grads) = loss_and_gradients(&model, &x, &y, &class_weights, true);
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch });
            }
            adam.update(&mut model, &grads.expect("requested gradients"));
        }
        let (train_loss, _) = loss_and_gradients(&model, &train_x, &train_labels, &class_weights, false);
        let (val_loss, _) = loss_and_gradients(&model, &val_x, &val_labels, &class_weights, false);
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch });
        }
        let val_accuracy = accuracy(&model, &val_x, &val_labels);
        log::debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5} acc {val_accuracy:.4}");
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
        });

        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, model.clone(), epoch));
            stale = 0;
        } else {
            stale += 1;
        }
        if stale >= config.patience {
            log.stopped_early = epoch < config.max_epochs;
            break;
        }
    }

    let (_, best_model, best_epoch) = best.expect("at least one epoch ran");
    log.best_epoch = best_epoch;
    Ok((best_model, log))
}

/// Accuracy and per-class precision/recall/F1 of a head on labeled examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub per_class_f1: Vec<f64>,
    pub per_class_precision: Vec<f64>,
    pub per_class_recall: Vec<f64>,
    pub support: Vec<usize>,
}

pub fn classification_report(
    model: &MlpModel,
    examples: &[LabeledPairExample],
) -> Result<ClassificationReport, ModelError> {
    let head = model.head_kind();
    let k = head.classes();
    let mut confusion = vec![vec![0usize; k]; k];
    for e in examples {
        let (pred, _) = model.predict_with_confidence(e.features())?;
        confusion[e.label_for(head)][pred] += 1;
    }
    let total: usize = confusion.iter().flatten().sum();
    let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
    let mut report = ClassificationReport {
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        per_class_f1: Vec::with_capacity(k),
        per_class_precision: Vec::with_capacity(k),
        per_class_recall: Vec::with_capacity(k),
        support: Vec::with_capacity(k),
    };
    for c in 0..k {
        let tp = confusion[c][c] as f64;
        let predicted: usize = (0..k).map(|r| confusion[r][c]).sum();
        let actual: usize = confusion[c].iter().sum();
        let p = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let r = if actual == 0 { 0.0 } else { tp / actual as f64 };
        report.per_class_precision.push(p);
        report.per_class_recall.push(r);
        report.per_class_f1.push(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) });
        report.support.push(actual);
    }
    Ok(report)
}
