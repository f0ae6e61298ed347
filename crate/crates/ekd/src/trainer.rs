//! Deterministic distillation training loop: Adam with linear warmup and
//! global-norm gradient clipping, per-epoch seeded shuffling, frozen
//! teacher target caching, and a bit-exact checkpoint format.
//!
//! All shuffling is derived statelessly from `(seed, epoch)`, and the
//! epoch is derived from the step counter, so resuming from a checkpoint
//! reproduces the uninterrupted run exactly.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::WaveSample;
use crate::error::{Error, Result};
use crate::model::{
    forward_states, heads_forward, DistillMode, EncoderConfig, StudentModel, TeacherEnsemble,
};
use crate::objectives::{
    build_targets, loss_avg, loss_concat, loss_multi_pred, loss_single, LossNorm,
};
use crate::rng::derive_seed;
use crate::tensor::{Graph, Tensor, TensorId};

/// Fraction of total steps covered by the linear learning-rate warmup.
pub const WARMUP_FRAC: f64 = 0.05;

/// Hyperparameters of one distillation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: DistillMode,
    pub steps: usize,
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default = "default_grad_clip")]
    pub grad_clip_norm: f64,
    pub seed: u64,
    #[serde(default)]
    pub loss_norm: LossNorm,
    /// Teacher used by `single` mode.
    #[serde(default)]
    pub single_teacher_index: usize,
    /// Give every multi-head set identical initial values.
    #[serde(default)]
    pub shared_head_init: bool,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}
fn default_grad_clip() -> f64 {
    1.0
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // lr == 0 is allowed (a recorded no-op run); negative is not
        if self.lr < 0.0 || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be non-negative, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.grad_clip_norm <= 0.0 {
            return Err(Error::Config(format!(
                "grad_clip_norm must be positive, got {}",
                self.grad_clip_norm
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One training step's log entry. `grad_norm` is the pre-clip global norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

/// Adam moment buffers, aligned with the student's canonical parameter
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: usize,
}

impl Adam {
    pub fn new(sizes: &[usize]) -> Self {
        Adam {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }
}

/// Scale `grads` so their global L2 norm does not exceed `limit`;
/// returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Vec<f64>], limit: f64) -> f64 {
    let sq: f64 = grads.iter().flatten().map(|g| g * g).sum();
    let norm = sq.sqrt();
    if norm > limit {
        let scale = limit / norm;
        for g in grads.iter_mut().flatten() {
            *g *= scale;
        }
    }
    norm
}

/// Learning rate at 1-based step `t`: linear warmup over the first
/// `WARMUP_FRAC` of `total_steps`, then constant.
fn lr_at(base_lr: f64, total_steps: usize, t: usize) -> f64 {
    let w = ((total_steps as f64 * WARMUP_FRAC).round() as usize).max(1);
    base_lr * (t as f64 / w as f64).min(1.0)
}

/// Cache of frozen-teacher tap states keyed by waveform generator seed.
/// Valid only for the ensemble it was filled from.
#[derive(Default)]
pub struct TeacherCache {
    map: HashMap<u64, Vec<Vec<Tensor>>>,
}

impl TeacherCache {
    pub fn new() -> Self {
        TeacherCache::default()
    }

    pub fn taps(&mut self, ens: &TeacherEnsemble, w: &WaveSample) -> Result<&Vec<Vec<Tensor>>> {
        if !self.map.contains_key(&w.generator_seed) {
            let taps = ens.forward_taps(&w.samples)?;
            self.map.insert(w.generator_seed, taps);
        }
        Ok(self.map.get(&w.generator_seed).expect("just inserted"))
    }
}

/// A training run in progress: student, optimizer, and history.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub student: StudentModel,
    pub adam: Adam,
    pub step: usize,
    pub loss_history: Vec<f64>,
    pub records: Vec<StepRecord>,
    pub config: TrainConfig,
    pub n_taps: usize,
    pub teacher_d: usize,
    pub m_teachers: usize,
}

/// Build the initial state for `cfg` against `ens`.
pub fn init_state(
    cfg: &TrainConfig,
    student_cfg: &EncoderConfig,
    ens: &TeacherEnsemble,
) -> Result<TrainState> {
    cfg.validate()?;
    if cfg.mode == DistillMode::Single && cfg.single_teacher_index >= ens.m() {
        return Err(Error::Config(format!(
            "single_teacher_index {} out of range for {} teachers",
            cfg.single_teacher_index,
            ens.m()
        )));
    }
    let student = StudentModel::init(
        student_cfg,
        cfg.mode,
        ens.tap_layers.len(),
        ens.cfg.d_model,
        ens.m(),
        cfg.seed,
        cfg.shared_head_init,
    )?;
    let mut sizes = Vec::new();
    student.for_each_param(|_, t| sizes.push(t.numel()));
    Ok(TrainState {
        student,
        adam: Adam::new(&sizes),
        step: 0,
        loss_history: Vec::new(),
        records: Vec::new(),
        config: cfg.clone(),
        n_taps: ens.tap_layers.len(),
        teacher_d: ens.cfg.d_model,
        m_teachers: ens.m(),
    })
}

/// Forward the student on one item and compute the mode loss against the
/// (cached) teacher targets.
/// Distillation loss of one sample given an already-bound student. The
/// public form lets finite-difference checks bind parameters their own
/// way and still reuse the exact training-path loss.
pub fn student_sample_loss(
    g: &mut Graph,
    cfg: &EncoderConfig,
    bound: &crate::model::BoundStudent,
    wave: &WaveSample,
    per_teacher: &[Vec<Tensor>],
    mode: DistillMode,
    norm: LossNorm,
    single_teacher_index: usize,
) -> Result<TensorId> {
    let states = forward_states(g, cfg, &bound.encoder, &wave.samples)?;
    let z = *states.last().expect("at least the projection state");
    let targets = build_targets(mode, per_teacher, single_teacher_index)?;
    match mode {
        DistillMode::Single => {
            let preds = heads_forward(g, z, &bound.head_sets[0])?;
            loss_single(g, &preds, &targets, norm)
        }
        DistillMode::Avg => {
            let preds = heads_forward(g, z, &bound.head_sets[0])?;
            loss_avg(g, &preds, &targets, norm)
        }
        DistillMode::Concat => {
            let preds = heads_forward(g, z, &bound.head_sets[0])?;
            loss_concat(g, &preds, &targets, norm)
        }
        DistillMode::MultiPred => {
            let sets = bound
                .head_sets
                .iter()
                .map(|set| heads_forward(g, z, set))
                .collect::<Result<Vec<_>>>()?;
            loss_multi_pred(g, &sets, &targets, norm)
        }
    }
}

/// Run one optimization step on `batch`. Teachers stay frozen; the
/// returned record carries the batch loss and pre-clip gradient norm.
pub fn distill_step(
    state: &mut TrainState,
    batch: &[&WaveSample],
    ens: &TeacherEnsemble,
    cache: &mut TeacherCache,
) -> Result<StepRecord> {
    if batch.is_empty() {
        return Err(Error::Contract("distill_step: empty batch".into()));
    }
    let mut g = Graph::new();
    let bound = state.student.bind(&mut g, true)?;
    let mut acc: Option<TensorId> = None;
    for wave in batch {
        let per_teacher = cache.taps(ens, wave)?.clone();
        let li = student_sample_loss(
            &mut g,
            &state.student.encoder.cfg,
            &bound,
            wave,
            &per_teacher,
            state.config.mode,
            state.config.loss_norm,
            state.config.single_teacher_index,
        )?;
        acc = Some(match acc {
            None => li,
            Some(a) => g.add(a, li)?,
        });
    }
    let total = acc.expect("non-empty batch");
    let loss = g.scale(total, 1.0 / batch.len() as f64)?;
    g.backward(loss)?;
    let loss_value = g.scalar_value(loss);

    let mut grads: Vec<Vec<f64>> = bound
        .ordered
        .iter()
        .map(|&id| {
            g.grad(id)
                .map(|s| s.to_vec())
                .unwrap_or_else(|| vec![0.0; g.value(id).numel()])
        })
        .collect();
    let grad_norm = clip_global_norm(&mut grads, state.config.grad_clip_norm);

    // Adam update in canonical parameter order.
    state.adam.t += 1;
    let t = state.adam.t;
    let lr_t = lr_at(state.config.lr, state.config.steps, t);
    let (b1, b2, eps) = (state.config.beta1, state.config.beta2, state.config.adam_eps);
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    let (ms, vs) = (&mut state.adam.m, &mut state.adam.v);
    let mut idx = 0;
    state.student.for_each_param_mut(|p| {
        let gbuf = &grads[idx];
        let m = &mut ms[idx];
        let v = &mut vs[idx];
        for (j, pv) in p.data_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + (1.0 - b1) * gbuf[j];
            v[j] = b2 * v[j] + (1.0 - b2) * gbuf[j] * gbuf[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *pv -= lr_t * m_hat / (v_hat.sqrt() + eps);
        }
        idx += 1;
    });

    state.step += 1;
    let record = StepRecord { step: state.step, loss: loss_value, grad_norm };
    state.loss_history.push(loss_value);
    state.records.push(record);
    Ok(record)
}

/// Indices of the batch for `step` (0-based) under stateless per-epoch
/// shuffling.
pub(crate) fn batch_indices(seed: u64, n: usize, batch_size: usize, step: usize) -> Vec<usize> {
    let steps_per_epoch = n.div_ceil(batch_size);
    let epoch = step / steps_per_epoch;
    let pos = step % steps_per_epoch;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xE90C_0000 + epoch as u64));
    perm.shuffle(&mut rng);
    let lo = pos * batch_size;
    let hi = ((pos + 1) * batch_size).min(n);
    perm[lo..hi].to_vec()
}

/// Advance training until `state.step == until`.
pub fn train_steps(
    state: &mut TrainState,
    dataset: &[WaveSample],
    ens: &TeacherEnsemble,
    until: usize,
    cache: &mut TeacherCache,
) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    while state.step < until {
        let idx = batch_indices(state.config.seed, dataset.len(), state.config.batch_size, state.step);
        let batch: Vec<&WaveSample> = idx.iter().map(|&i| &dataset[i]).collect();
        distill_step(state, &batch, ens, cache)?;
    }
    Ok(())
}

/// Full run: initialize, then train for `cfg.steps` steps.
pub fn train(
    cfg: &TrainConfig,
    student_cfg: &EncoderConfig,
    dataset: &[WaveSample],
    ens: &TeacherEnsemble,
) -> Result<TrainState> {
    let mut state = init_state(cfg, student_cfg, ens)?;
    let mut cache = TeacherCache::new();
    train_steps(&mut state, dataset, ens, cfg.steps, &mut cache)?;
    Ok(state)
}

// ── checkpointing ──────────────────────────────────────────────────────

const CKPT_MAGIC: &[u8; 8] = b"EKDCKPT1";
pub const CKPT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ArrayDesc {
    name: String,
    shape: Vec<usize>,
    /// Offset into the payload, in f64 elements.
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    config: TrainConfig,
    student_cfg: EncoderConfig,
    n_taps: usize,
    teacher_d: usize,
    m_teachers: usize,
    step: usize,
    arrays: Vec<ArrayDesc>,
}

/// Serialize the full training state: magic, little-endian u64 header
/// length, JSON header, then all arrays as little-endian f64.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let mut arrays = Vec::new();
    let mut payload: Vec<f64> = Vec::new();
    let push_array = |name: String, shape: Vec<usize>, data: &[f64], payload: &mut Vec<f64>, arrays: &mut Vec<ArrayDesc>| {
        arrays.push(ArrayDesc {
            name,
            shape,
            offset: payload.len(),
            len: data.len(),
        });
        payload.extend_from_slice(data);
    };

    state.student.for_each_param(|name, t| {
        push_array(
            format!("student.{name}"),
            t.shape().to_vec(),
            t.data(),
            &mut payload,
            &mut arrays,
        );
    });
    let mut names = Vec::new();
    state.student.for_each_param(|name, _| names.push(name.to_string()));
    for (name, m) in names.iter().zip(&state.adam.m) {
        push_array(format!("adam.m.{name}"), vec![m.len()], m, &mut payload, &mut arrays);
    }
    for (name, v) in names.iter().zip(&state.adam.v) {
        push_array(format!("adam.v.{name}"), vec![v.len()], v, &mut payload, &mut arrays);
    }
    push_array(
        "history.loss".into(),
        vec![state.loss_history.len()],
        &state.loss_history,
        &mut payload,
        &mut arrays,
    );
    let grad_norms: Vec<f64> = state.records.iter().map(|r| r.grad_norm).collect();
    push_array(
        "history.grad_norm".into(),
        vec![grad_norms.len()],
        &grad_norms,
        &mut payload,
        &mut arrays,
    );

    let header = CheckpointHeader {
        version: CKPT_VERSION,
        config: state.config.clone(),
        student_cfg: state.student.encoder.cfg.clone(),
        n_taps: state.n_taps,
        teacher_d: state.teacher_d,
        m_teachers: state.m_teachers,
        step: state.step,
        arrays,
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");

    let mut bytes = Vec::with_capacity(16 + header_json.len() + payload.len() * 8);
    bytes.extend_from_slice(CKPT_MAGIC);
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for v in &payload {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn find_array<'a>(header: &'a CheckpointHeader, name: &str) -> Result<&'a ArrayDesc> {
    header
        .arrays
        .iter()
        .find(|a| a.name == name)
        .ok_or_else(|| Error::Incompatible(format!("checkpoint is missing array '{name}'")))
}

fn read_array(desc: &ArrayDesc, payload: &[f64]) -> Result<Vec<f64>> {
    let numel: usize = desc.shape.iter().product();
    if numel != desc.len {
        return Err(Error::Incompatible(format!(
            "array '{}': shape {:?} does not hold {} elements",
            desc.name, desc.shape, desc.len
        )));
    }
    let end = desc.offset.checked_add(desc.len).filter(|&e| e <= payload.len());
    let Some(end) = end else {
        return Err(Error::Incompatible(format!(
            "array '{}': range {}..{} exceeds payload of {} values",
            desc.name,
            desc.offset,
            desc.offset + desc.len,
            payload.len()
        )));
    };
    Ok(payload[desc.offset..end].to_vec())
}

/// Load a checkpoint back into a `TrainState`; the inverse of
/// [`save_checkpoint`], bit-exact.
pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: "file shorter than the fixed 16-byte preamble".into(),
        });
    }
    if &bytes[0..8] != CKPT_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "bad magic (not a checkpoint file)".into(),
        });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let payload_start = 16usize.checked_add(header_len).filter(|&p| p <= bytes.len());
    let Some(payload_start) = payload_start else {
        return Err(Error::Parse {
            offset: 8,
            message: format!(
                "declared header length {header_len} exceeds file size {}",
                bytes.len()
            ),
        });
    };
    let header_str = std::str::from_utf8(&bytes[16..payload_start]).map_err(|e| Error::Parse {
        offset: 16 + e.valid_up_to(),
        message: "header is not valid UTF-8".into(),
    })?;
    let header: CheckpointHeader = serde_json::from_str(header_str).map_err(|e| Error::Parse {
        offset: 16 + crate::data::json_byte_offset(header_str, e.line(), e.column()),
        message: format!("header JSON: {e}"),
    })?;
    if header.version != CKPT_VERSION {
        return Err(Error::Incompatible(format!(
            "checkpoint version {} (supported: {})",
            header.version, CKPT_VERSION
        )));
    }
    let payload_bytes = &bytes[payload_start..];
    if payload_bytes.len() % 8 != 0 {
        return Err(Error::Parse {
            offset: payload_start + payload_bytes.len() - payload_bytes.len() % 8,
            message: "payload is not a whole number of f64 values".into(),
        });
    }
    let payload: Vec<f64> = payload_bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();

    // Rebuild the student skeleton, then overwrite every parameter from
    // the payload, verifying names and shapes as we go. An edited header
    // (e.g. a different d_model) surfaces as a shape mismatch.
    let mut student = StudentModel::init(
        &header.student_cfg,
        header.config.mode,
        header.n_taps,
        header.teacher_d,
        header.m_teachers,
        header.config.seed,
        header.config.shared_head_init,
    )?;
    let mut expected: Vec<(String, Vec<usize>)> = Vec::new();
    student.for_each_param(|name, t| expected.push((format!("student.{name}"), t.shape().to_vec())));
    let mut values = Vec::with_capacity(expected.len());
    for (name, shape) in &expected {
        let desc = find_array(&header, name)?;
        if &desc.shape != shape {
            return Err(Error::Incompatible(format!(
                "array '{name}': checkpoint shape {:?} does not match configured shape {shape:?}",
                desc.shape
            )));
        }
        values.push(read_array(desc, &payload)?);
    }
    let mut it = values.into_iter();
    student.for_each_param_mut(|t| {
        let v = it.next().expect("one value list per parameter");
        t.data_mut().copy_from_slice(&v);
    });

    let mut adam = Adam::new(&expected.iter().map(|(_, s)| s.iter().product()).collect::<Vec<usize>>());
    adam.t = header.step;
    for (i, (name, _)) in expected.iter().enumerate() {
        let bare = name.strip_prefix("student.").expect("student prefix");
        let m = read_array(find_array(&header, &format!("adam.m.{bare}"))?, &payload)?;
        let v = read_array(find_array(&header, &format!("adam.v.{bare}"))?, &payload)?;
        if m.len() != adam.m[i].len() || v.len() != adam.v[i].len() {
            return Err(Error::Incompatible(format!(
                "optimizer moments for '{bare}' have the wrong length"
            )));
        }
        adam.m[i] = m;
        adam.v[i] = v;
    }

    let loss_history = read_array(find_array(&header, "history.loss")?, &payload)?;
    let grad_norms = read_array(find_array(&header, "history.grad_norm")?, &payload)?;
    if loss_history.len() != header.step || grad_norms.len() != header.step {
        return Err(Error::Incompatible(format!(
            "history length {} does not match step counter {}",
            loss_history.len(),
            header.step
        )));
    }
    let records = loss_history
        .iter()
        .zip(&grad_norms)
        .enumerate()
        .map(|(i, (&loss, &grad_norm))| StepRecord { step: i + 1, loss, grad_norm })
        .collect();

    Ok(TrainState {
        student,
        adam,
        step: header.step,
        loss_history,
        records,
        config: header.config,
        n_taps: header.n_taps,
        teacher_d: header.teacher_d,
        m_teachers: header.m_teachers,
    })
}
