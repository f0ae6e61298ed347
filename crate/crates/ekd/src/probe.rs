//! Downstream evaluation: freeze the student (heads discarded), learn a
//! softmax-weighted sum over its hidden layers feeding a linear
//! classifier, and report paired clean / seen-noise / unseen-noise
//! accuracy.
//!
//! Feature extraction supports several backbones at once by feature-axis
//! concatenation per layer index — that is how an ensemble of
//! independently distilled students is probed as one source.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{DatasetSplit, WaveSample};
use crate::error::{Error, Result};
use crate::model::{forward_states, StudentModel};
use crate::tensor::{Graph, Tensor, TensorId};
use crate::trainer::Adam;

/// Schema version of [`MetricsReport`] files.
pub const REPORT_VERSION: u32 = 1;

/// Probe training budget; held fixed across every compared student so
/// comparisons isolate the upstream training mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    /// Sized so a linear probe on ~256 mean-pooled items fits to
    /// convergence; an underfit probe flattens all model comparisons
    /// toward chance.
    fn default() -> Self {
        ProbeConfig { steps: 1200, batch_size: 16, lr: 0.05, seed: 0 }
    }
}

/// Learned probe: one logit per hidden layer plus an affine classifier
/// over mean-pooled weighted features.
#[derive(Debug, Clone)]
pub struct ProbeModel {
    pub layer_logits: Tensor,
    pub classifier_w: Tensor,
    pub classifier_b: Tensor,
}

/// Extracted features for one sample: all hidden states plus the label.
#[derive(Debug, Clone)]
pub struct FeatureItem {
    pub states: Vec<Tensor>,
    pub label: usize,
}

pub type FeatureSet = Vec<FeatureItem>;

/// Softmax-weighted sum of equally shaped hidden states. Gradients flow
/// into `logits` only: every state is re-inserted as a detached constant,
/// so backbone parameters can never receive probe gradients.
pub fn weighted_sum_features(
    g: &mut Graph,
    states: &[TensorId],
    logits: TensorId,
) -> Result<TensorId> {
    if states.is_empty() {
        return Err(Error::Dimension("weighted sum: no states".into()));
    }
    let shape = g.value(states[0]).shape().to_vec();
    for &s in states {
        if g.value(s).shape() != shape {
            return Err(Error::Dimension(format!(
                "weighted sum: state shape {:?} differs from {:?}",
                g.value(s).shape(),
                shape
            )));
        }
    }
    if g.value(logits).shape() != [states.len()] {
        return Err(Error::Dimension(format!(
            "weighted sum: {} states but logit shape {:?}",
            states.len(),
            g.value(logits).shape()
        )));
    }
    let weights = g.softmax(logits)?;
    let mut acc: Option<TensorId> = None;
    for (i, &s) in states.iter().enumerate() {
        let detached = g.detach(s);
        let frozen = g.constant(&detached);
        let term = g.scale_by(frozen, weights, i)?;
        acc = Some(match acc {
            None => term,
            Some(a) => g.add(a, term)?,
        });
    }
    Ok(acc.expect("non-empty states"))
}

/// Run every backbone on each sample and concatenate their hidden states
/// per layer index. All backbones must have the same layer count.
pub fn extract_features(students: &[&StudentModel], samples: &[WaveSample]) -> Result<FeatureSet> {
    if students.is_empty() {
        return Err(Error::Contract("extract_features: no backbones".into()));
    }
    let n_layers = students[0].encoder.cfg.n_layers;
    if students.iter().any(|s| s.encoder.cfg.n_layers != n_layers) {
        return Err(Error::Contract(
            "all probed backbones must share a layer count".into(),
        ));
    }
    samples
        .iter()
        .map(|w| {
            let mut per_student: Vec<Vec<Tensor>> = Vec::with_capacity(students.len());
            for s in students {
                let mut g = Graph::new();
                let bound = s.encoder.bind(&mut g, false)?;
                let ids = forward_states(&mut g, &s.encoder.cfg, &bound, &w.samples)?;
                per_student.push(ids.iter().map(|&id| g.detach(id)).collect());
            }
            let states = (0..n_layers + 1)
                .map(|l| {
                    if per_student.len() == 1 {
                        Ok(per_student[0][l].detached())
                    } else {
                        concat_cols_tensors(per_student.iter().map(|s| &s[l]))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(FeatureItem { states, label: w.label })
        })
        .collect()
}

fn concat_cols_tensors<'a>(parts: impl Iterator<Item = &'a Tensor>) -> Result<Tensor> {
    let parts: Vec<&Tensor> = parts.collect();
    let t = parts[0].shape()[0];
    let widths: Vec<usize> = parts.iter().map(|p| p.shape()[1]).collect();
    let total: usize = widths.iter().sum();
    let mut data = vec![0.0; t * total];
    let mut offset = 0;
    for (p, &w) in parts.iter().zip(&widths) {
        if p.shape()[0] != t {
            return Err(Error::Dimension(format!(
                "feature concatenation: row counts differ ({t} vs {})",
                p.shape()[0]
            )));
        }
        for r in 0..t {
            data[r * total + offset..r * total + offset + w]
                .copy_from_slice(&p.data()[r * w..(r + 1) * w]);
        }
        offset += w;
    }
    Tensor::new(data, &[t, total])
}

/// Classifier logits (`[1 × n_classes]`) for one feature item under the
/// bound probe parameters.
fn probe_logits(
    g: &mut Graph,
    item: &FeatureItem,
    layer_logits: TensorId,
    w: TensorId,
    b: TensorId,
) -> Result<TensorId> {
    let state_ids: Vec<TensorId> = item.states.iter().map(|s| g.constant(s)).collect();
    let combined = weighted_sum_features(g, &state_ids, layer_logits)?;
    let pooled = g.mean_axis0(combined)?;
    let scores = g.matmul(pooled, w)?;
    g.add_row(scores, b)
}

fn feature_width(features: &FeatureSet) -> usize {
    features[0].states[0].shape()[1]
}

/// Train layer weights and classifier by cross-entropy with Adam on
/// pre-extracted features.
pub fn train_probe_on(features: &FeatureSet, cfg: &ProbeConfig, n_classes: usize) -> Result<ProbeModel> {
    if features.is_empty() {
        return Err(Error::Config("probe training set is empty".into()));
    }
    if n_classes < 2 {
        return Err(Error::Config("probe needs at least 2 classes".into()));
    }
    let first_label = features[0].label;
    if features.iter().all(|f| f.label == first_label) {
        return Err(Error::Config(
            "probe training data contains a single class".into(),
        ));
    }
    if let Some(bad) = features.iter().find(|f| f.label >= n_classes) {
        return Err(Error::Config(format!(
            "label {} out of range for {n_classes} classes",
            bad.label
        )));
    }
    let n_states = features[0].states.len();
    let d = feature_width(features);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 0.02).expect("valid std");
    let mut probe = ProbeModel {
        layer_logits: Tensor::zeros(&[n_states]),
        classifier_w: Tensor::new(
            (0..d * n_classes).map(|_| normal.sample(&mut rng)).collect(),
            &[d, n_classes],
        )?,
        classifier_b: Tensor::zeros(&[n_classes]),
    };
    let mut adam = Adam::new(&[n_states, d * n_classes, n_classes]);

    for step in 0..cfg.steps {
        let idx = crate::trainer::batch_indices(cfg.seed, features.len(), cfg.batch_size, step);
        let mut g = Graph::new();
        let ll = g.leaf(&probe.layer_logits.detached().with_requires_grad(true));
        let w = g.leaf(&probe.classifier_w.detached().with_requires_grad(true));
        let b = g.leaf(&probe.classifier_b.detached().with_requires_grad(true));
        let mut acc: Option<TensorId> = None;
        for &i in &idx {
            let item = &features[i];
            let logits = probe_logits(&mut g, item, ll, w, b)?;
            let ce = g.cross_entropy(logits, &[item.label])?;
            acc = Some(match acc {
                None => ce,
                Some(a) => g.add(a, ce)?,
            });
        }
        let total = acc.expect("non-empty batch");
        let loss = g.scale(total, 1.0 / idx.len() as f64)?;
        g.backward(loss)?;

        let grads: Vec<Vec<f64>> = [ll, w, b]
            .iter()
            .map(|&id| {
                g.grad(id)
                    .map(|s| s.to_vec())
                    .unwrap_or_else(|| vec![0.0; g.value(id).numel()])
            })
            .collect();
        adam.t += 1;
        let t = adam.t;
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let bc1 = 1.0 - b1f64(b1, t);
        let bc2 = 1.0 - b1f64(b2, t);
        for (k, p) in [
            &mut probe.layer_logits,
            &mut probe.classifier_w,
            &mut probe.classifier_b,
        ]
        .into_iter()
        .enumerate()
        {
            for (j, pv) in p.data_mut().iter_mut().enumerate() {
                adam.m[k][j] = b1 * adam.m[k][j] + (1.0 - b1) * grads[k][j];
                adam.v[k][j] = b2 * adam.v[k][j] + (1.0 - b2) * grads[k][j] * grads[k][j];
                let m_hat = adam.m[k][j] / bc1;
                let v_hat = adam.v[k][j] / bc2;
                *pv -= cfg.lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
    Ok(probe)
}

fn b1f64(beta: f64, t: usize) -> f64 {
    beta.powi(t as i32)
}

/// Extract features from `students` and train a probe on them.
pub fn train_probe(
    students: &[&StudentModel],
    train: &[WaveSample],
    cfg: &ProbeConfig,
    n_classes: usize,
) -> Result<ProbeModel> {
    let features = extract_features(students, train)?;
    train_probe_on(&features, cfg, n_classes)
}

/// Fraction of items whose argmax classifier logit matches the label.
pub fn accuracy_on(features: &FeatureSet, probe: &ProbeModel) -> Result<f64> {
    if features.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let mut correct = 0usize;
    for item in features {
        let mut g = Graph::new();
        let ll = g.constant(&probe.layer_logits);
        let w = g.constant(&probe.classifier_w);
        let b = g.constant(&probe.classifier_b);
        let logits = probe_logits(&mut g, item, ll, w, b)?;
        let row = g.value(logits).data();
        let pred = row
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.partial_cmp(b).expect("finite logits"))
            .map(|(i, _)| i)
            .expect("non-empty logits");
        if pred == item.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / features.len() as f64)
}

/// Per-condition accuracies of one report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionMetrics {
    pub clean: f64,
    pub seen_noise: f64,
    pub unseen_noise: f64,
}

/// Seeds that fully determine a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedInfo {
    pub teacher_seeds: Vec<u64>,
    pub student_seed: u64,
    pub data_seed: u64,
    pub probe_seed: u64,
}

/// Parameter accounting: the backbone consumed downstream vs the heads
/// discarded before probing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub backbone: usize,
    pub heads: usize,
}

/// The serialized result of evaluating one trained source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub version: u32,
    pub mode: String,
    pub seeds: SeedInfo,
    pub params: ParamCounts,
    pub metrics: ConditionMetrics,
}

/// Evaluate `students` + `probe` on the three paired eval conditions.
pub fn evaluate(
    students: &[&StudentModel],
    probe: &ProbeModel,
    split: &DatasetSplit,
) -> Result<ConditionMetrics> {
    let clean = accuracy_on(&extract_features(students, &split.eval_clean)?, probe)?;
    let seen_noise = accuracy_on(&extract_features(students, &split.eval_seen_noise)?, probe)?;
    let unseen_noise = accuracy_on(&extract_features(students, &split.eval_unseen_noise)?, probe)?;
    Ok(ConditionMetrics { clean, seen_noise, unseen_noise })
}
