//! Toy teacher and student networks: a framing front-end, a stack of
//! pre-norm transformer encoder layers with tappable hidden states, and
//! affine prediction heads.
//!
//! Hidden-state indexing: `forward_states` returns `n_layers + 1` states;
//! index 0 is the projected (plus positional) input, index `i ≥ 1` is the
//! residual stream after layer `i`. Tap-layer indices refer to this
//! scheme, so valid taps are `1..=n_layers`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::tensor::{Graph, Tensor, TensorId};

/// Standard deviation of every Gaussian weight initialization.
pub const INIT_STD: f64 = 0.02;

/// Scale applied to the sinusoidal position table. Matches the magnitude
/// of projected frame features under `INIT_STD` weights so positions do
/// not drown out content.
pub const POS_SCALE: f64 = 0.02;

/// Epsilon used by every layer norm in the encoder.
pub const LN_EPS: f64 = 1e-5;

/// Shape of one encoder stack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    /// Frames-per-step window of the front-end, in samples.
    pub window: usize,
    /// Stride of the front-end, in samples.
    pub hop: usize,
}

impl EncoderConfig {
    /// Default teacher shape: 32-wide, 6 layers.
    pub fn teacher_default() -> Self {
        EncoderConfig {
            d_model: 32,
            n_layers: 6,
            n_heads: 4,
            d_ff: 128,
            window: 16,
            hop: 8,
        }
    }

    /// Default student shape: 16-wide, 2 layers.
    pub fn student_default() -> Self {
        EncoderConfig {
            d_model: 16,
            n_layers: 2,
            n_heads: 4,
            d_ff: 64,
            window: 16,
            hop: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model < 2 {
            return Err(Error::Config(format!(
                "d_model must be at least 2, got {}",
                self.d_model
            )));
        }
        if self.n_layers == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return Err(Error::Config(
                "n_layers, n_heads, and d_ff must be positive".into(),
            ));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.hop == 0 || self.window < self.hop {
            return Err(Error::Config(format!(
                "front-end requires window >= hop >= 1, got window {} hop {}",
                self.window, self.hop
            )));
        }
        Ok(())
    }
}

/// Number of frames produced by the front-end for an input of `n` samples,
/// or `None` when the input is shorter than one window.
pub fn frame_count(n: usize, window: usize, hop: usize) -> Option<usize> {
    if n < window {
        None
    } else {
        Some((n - window) / hop + 1)
    }
}

/// Affine map parameters: `y = x · w + b` with `w: [d_in × d_out]`.
#[derive(Debug, Clone)]
pub struct Affine {
    pub w: Tensor,
    pub b: Tensor,
}

impl Affine {
    fn init(rng: &mut ChaCha8Rng, d_in: usize, d_out: usize) -> Self {
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let w = Tensor::new(
            (0..d_in * d_out).map(|_| normal.sample(rng)).collect(),
            &[d_in, d_out],
        )
        .expect("shape matches draw count");
        let b = Tensor::zeros(&[d_out]);
        Affine { w, b }
    }
}

/// Bias-free linear map: `y = x · w`. Used for the key projection,
/// where a bias would shift every attention logit in a row by the same
/// amount — softmax removes row-constant shifts exactly, so such a bias
/// could never receive gradient.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Tensor,
}

impl Linear {
    fn init(rng: &mut ChaCha8Rng, d_in: usize, d_out: usize) -> Self {
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let w = Tensor::new(
            (0..d_in * d_out).map(|_| normal.sample(rng)).collect(),
            &[d_in, d_out],
        )
        .expect("shape matches draw count");
        Linear { w }
    }
}

/// Layer-norm gain/bias pair.
#[derive(Debug, Clone)]
pub struct Norm {
    pub gain: Tensor,
    pub bias: Tensor,
}

impl Norm {
    fn init(d: usize) -> Self {
        Norm {
            gain: Tensor::new(vec![1.0; d], &[d]).expect("unit gain"),
            bias: Tensor::zeros(&[d]),
        }
    }
}

/// One pre-norm transformer encoder layer.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub norm1: Norm,
    pub wq: Affine,
    pub wk: Linear,
    pub wv: Affine,
    pub wo: Affine,
    pub norm2: Norm,
    pub ff1: Affine,
    pub ff2: Affine,
}

/// Encoder stack: framing front-end projection plus transformer layers.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    pub proj: Affine,
    pub layers: Vec<EncoderLayer>,
    frozen: bool,
}

/// Graph-bound affine parameters.
#[derive(Debug, Clone, Copy)]
pub struct BoundAffine {
    pub w: TensorId,
    pub b: TensorId,
}

/// Graph-bound bias-free linear parameters.
#[derive(Debug, Clone, Copy)]
pub struct BoundLinear {
    pub w: TensorId,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundNorm {
    pub gain: TensorId,
    pub bias: TensorId,
}

#[derive(Debug, Clone)]
pub struct BoundLayer {
    pub norm1: BoundNorm,
    pub wq: BoundAffine,
    pub wk: BoundLinear,
    pub wv: BoundAffine,
    pub wo: BoundAffine,
    pub norm2: BoundNorm,
    pub ff1: BoundAffine,
    pub ff2: BoundAffine,
}

/// An encoder's parameters inserted into one graph. `ordered` lists the
/// ids in the same order `for_each_param` visits, so optimizers and
/// checkpoints stay aligned with gradients.
#[derive(Debug, Clone)]
pub struct BoundEncoder {
    pub proj: BoundAffine,
    pub layers: Vec<BoundLayer>,
    pub ordered: Vec<TensorId>,
}

impl Encoder {
    /// Deterministically initialize an encoder from a seed: Gaussian
    /// weights with std `INIT_STD`, zero biases, unit norm gains.
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.d_model;
        let proj = Affine::init(&mut rng, cfg.window, d);
        let layers = (0..cfg.n_layers)
            .map(|_| EncoderLayer {
                norm1: Norm::init(d),
                wq: Affine::init(&mut rng, d, d),
                wk: Linear::init(&mut rng, d, d),
                wv: Affine::init(&mut rng, d, d),
                wo: Affine::init(&mut rng, d, d),
                norm2: Norm::init(d),
                ff1: Affine::init(&mut rng, d, cfg.d_ff),
                ff2: Affine::init(&mut rng, cfg.d_ff, d),
            })
            .collect();
        Ok(Encoder {
            cfg: cfg.clone(),
            proj,
            layers,
            frozen: false,
        })
    }

    /// Permanently mark the encoder as frozen; its parameters can then
    /// only be bound as constants.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Visit every parameter with its canonical name, in canonical order.
    pub fn for_each_param(&self, mut f: impl FnMut(&str, &Tensor)) {
        f("proj.w", &self.proj.w);
        f("proj.b", &self.proj.b);
        for (i, l) in self.layers.iter().enumerate() {
            let mut emit = |suffix: &str, t: &Tensor| f(&format!("layers.{i}.{suffix}"), t);
            emit("norm1.gain", &l.norm1.gain);
            emit("norm1.bias", &l.norm1.bias);
            emit("wq.w", &l.wq.w);
            emit("wq.b", &l.wq.b);
            emit("wk.w", &l.wk.w);
            emit("wv.w", &l.wv.w);
            emit("wv.b", &l.wv.b);
            emit("wo.w", &l.wo.w);
            emit("wo.b", &l.wo.b);
            emit("norm2.gain", &l.norm2.gain);
            emit("norm2.bias", &l.norm2.bias);
            emit("ff1.w", &l.ff1.w);
            emit("ff1.b", &l.ff1.b);
            emit("ff2.w", &l.ff2.w);
            emit("ff2.b", &l.ff2.b);
        }
    }

    /// Mutable visit in the same canonical order as [`Self::for_each_param`].
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut Tensor)) {
        f(&mut self.proj.w);
        f(&mut self.proj.b);
        for l in self.layers.iter_mut() {
            f(&mut l.norm1.gain);
            f(&mut l.norm1.bias);
            f(&mut l.wq.w);
            f(&mut l.wq.b);
            f(&mut l.wk.w);
            f(&mut l.wv.w);
            f(&mut l.wv.b);
            f(&mut l.wo.w);
            f(&mut l.wo.b);
            f(&mut l.norm2.gain);
            f(&mut l.norm2.bias);
            f(&mut l.ff1.w);
            f(&mut l.ff1.b);
            f(&mut l.ff2.w);
            f(&mut l.ff2.b);
        }
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each_param(|_, t| n += t.numel());
        n
    }

    /// SHA-256 over canonical names and little-endian parameter bytes.
    pub fn params_hash(&self) -> String {
        let mut hasher = Sha256::new();
        self.for_each_param(|name, t| {
            hasher.update(name.as_bytes());
            for v in t.data() {
                hasher.update(v.to_le_bytes());
            }
        });
        hex::encode(hasher.finalize())
    }

    /// Insert all parameters into `g`. With `trainable` the leaves carry
    /// `requires_grad`; binding a frozen encoder as trainable is a
    /// contract violation.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<BoundEncoder> {
        if trainable && self.frozen {
            return Err(Error::Contract(
                "cannot bind a frozen encoder with trainable parameters".into(),
            ));
        }
        let mut ordered = Vec::new();
        let mut put = |g: &mut Graph, t: &Tensor| {
            let id = if trainable {
                g.leaf(&t.detached().with_requires_grad(true))
            } else {
                g.constant(t)
            };
            ordered.push(id);
            id
        };
        let proj = BoundAffine {
            w: put(g, &self.proj.w),
            b: put(g, &self.proj.b),
        };
        let layers = self
            .layers
            .iter()
            .map(|l| BoundLayer {
                norm1: BoundNorm {
                    gain: put(g, &l.norm1.gain),
                    bias: put(g, &l.norm1.bias),
                },
                wq: BoundAffine { w: put(g, &l.wq.w), b: put(g, &l.wq.b) },
                wk: BoundLinear { w: put(g, &l.wk.w) },
                wv: BoundAffine { w: put(g, &l.wv.w), b: put(g, &l.wv.b) },
                wo: BoundAffine { w: put(g, &l.wo.w), b: put(g, &l.wo.b) },
                norm2: BoundNorm {
                    gain: put(g, &l.norm2.gain),
                    bias: put(g, &l.norm2.bias),
                },
                ff1: BoundAffine { w: put(g, &l.ff1.w), b: put(g, &l.ff1.b) },
                ff2: BoundAffine { w: put(g, &l.ff2.w), b: put(g, &l.ff2.b) },
            })
            .collect();
        Ok(BoundEncoder { proj, layers, ordered })
    }

    /// Assemble a bound view from parameter ids already inserted into a
    /// graph, consumed in canonical order. Lets external tooling (e.g.
    /// finite-difference checks) control how the leaves were created.
    pub fn bind_ids(&self, ids: &mut std::slice::Iter<'_, TensorId>) -> Result<BoundEncoder> {
        let mut ordered = Vec::new();
        let mut take = |it: &mut std::slice::Iter<'_, TensorId>| -> Result<TensorId> {
            let id = *it
                .next()
                .ok_or_else(|| Error::Contract("too few parameter ids for encoder".into()))?;
            ordered.push(id);
            Ok(id)
        };
        let proj = BoundAffine { w: take(ids)?, b: take(ids)? };
        let mut layers = Vec::with_capacity(self.layers.len());
        for _ in &self.layers {
            layers.push(BoundLayer {
                norm1: BoundNorm { gain: take(ids)?, bias: take(ids)? },
                wq: BoundAffine { w: take(ids)?, b: take(ids)? },
                wk: BoundLinear { w: take(ids)? },
                wv: BoundAffine { w: take(ids)?, b: take(ids)? },
                wo: BoundAffine { w: take(ids)?, b: take(ids)? },
                norm2: BoundNorm { gain: take(ids)?, bias: take(ids)? },
                ff1: BoundAffine { w: take(ids)?, b: take(ids)? },
                ff2: BoundAffine { w: take(ids)?, b: take(ids)? },
            });
        }
        Ok(BoundEncoder { proj, layers, ordered })
    }
}

/// Frame a waveform into a `[t × window]` matrix with stride `hop`.
pub fn frames_tensor(wave: &[f64], window: usize, hop: usize) -> Result<Tensor> {
    let t = frame_count(wave.len(), window, hop).ok_or_else(|| {
        Error::Domain(format!(
            "input too short: {} samples < window {}",
            wave.len(),
            window
        ))
    })?;
    let mut data = Vec::with_capacity(t * window);
    for r in 0..t {
        data.extend_from_slice(&wave[r * hop..r * hop + window]);
    }
    Tensor::new(data, &[t, window])
}

/// Sinusoidal absolute position table `[t × d]`, scaled by `POS_SCALE`.
pub fn position_table(t: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; t * d];
    for row in 0..t {
        for j in 0..d {
            let pair = (j / 2) as f64;
            let rate = (10_000f64).powf(2.0 * pair / d as f64);
            let angle = row as f64 / rate;
            data[row * d + j] = POS_SCALE * if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(data, &[t, d]).expect("shape matches construction")
}

fn affine_apply(g: &mut Graph, x: TensorId, a: &BoundAffine) -> Result<TensorId> {
    let p = g.matmul(x, a.w)?;
    g.add_row(p, a.b)
}

fn attention(g: &mut Graph, x: TensorId, l: &BoundLayer, n_heads: usize) -> Result<TensorId> {
    let d = g.value(x).cols();
    let dh = d / n_heads;
    let q = affine_apply(g, x, &l.wq)?;
    let k = g.matmul(x, l.wk.w)?;
    let v = affine_apply(g, x, &l.wv)?;
    let mut head_outs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scaled = g.scale(scores, 1.0 / (dh as f64).sqrt())?;
        let attn = g.softmax(scaled)?;
        head_outs.push(g.matmul(attn, vh)?);
    }
    let cat = g.concat_cols(&head_outs)?;
    affine_apply(g, cat, &l.wo)
}

fn layer_forward(g: &mut Graph, x: TensorId, l: &BoundLayer, n_heads: usize) -> Result<TensorId> {
    let xn = g.layer_norm(x, l.norm1.gain, l.norm1.bias, LN_EPS)?;
    let att = attention(g, xn, l, n_heads)?;
    let x = g.add(x, att)?;
    let xn2 = g.layer_norm(x, l.norm2.gain, l.norm2.bias, LN_EPS)?;
    let h = affine_apply(g, xn2, &l.ff1)?;
    let h = g.gelu(h)?;
    let h = affine_apply(g, h, &l.ff2)?;
    g.add(x, h)
}

/// Run the encoder on a waveform, returning all `n_layers + 1` hidden
/// states (index 0 = projected input with positions; index i = layer i).
pub fn forward_states(
    g: &mut Graph,
    cfg: &EncoderConfig,
    bound: &BoundEncoder,
    wave: &[f64],
) -> Result<Vec<TensorId>> {
    let frames = frames_tensor(wave, cfg.window, cfg.hop)?;
    let t = frames.shape()[0];
    let frames_id = g.constant(&frames);
    let projected = affine_apply(g, frames_id, &bound.proj)?;
    let pos = g.constant(&position_table(t, cfg.d_model));
    let mut x = g.add(projected, pos)?;
    let mut states = Vec::with_capacity(cfg.n_layers + 1);
    states.push(x);
    for l in &bound.layers {
        x = layer_forward(g, x, l, cfg.n_heads)?;
        states.push(x);
    }
    Ok(states)
}

// ── teacher ensemble ───────────────────────────────────────────────────

/// M frozen encoders sharing one config, plus the tap-layer set.
#[derive(Debug, Clone)]
pub struct TeacherEnsemble {
    pub cfg: EncoderConfig,
    pub teachers: Vec<Encoder>,
    pub tap_layers: Vec<usize>,
    pub seeds: Vec<u64>,
}

/// Build and freeze `seeds.len()` teachers. Duplicate seeds are rejected
/// unless `allow_duplicate_seeds` is set (identical teachers must be an
/// explicit request, not an accident).
pub fn build_teacher_ensemble(
    cfg: &EncoderConfig,
    seeds: &[u64],
    tap_layers: &[usize],
    allow_duplicate_seeds: bool,
) -> Result<TeacherEnsemble> {
    cfg.validate()?;
    if seeds.is_empty() {
        return Err(Error::Config("teacher ensemble needs at least one seed".into()));
    }
    if !allow_duplicate_seeds {
        let mut sorted = seeds.to_vec();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config(
                "duplicate teacher seeds build identical teachers; pass the explicit \
                 duplicate-seeds flag if that is intended"
                    .into(),
            ));
        }
    }
    validate_tap_layers(tap_layers, cfg.n_layers)?;
    let teachers = seeds
        .iter()
        .map(|&s| {
            let mut t = Encoder::init(cfg, s)?;
            t.freeze();
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TeacherEnsemble {
        cfg: cfg.clone(),
        teachers,
        tap_layers: tap_layers.to_vec(),
        seeds: seeds.to_vec(),
    })
}

pub fn validate_tap_layers(tap_layers: &[usize], n_layers: usize) -> Result<()> {
    if tap_layers.is_empty() {
        return Err(Error::Config("tap layer set is empty".into()));
    }
    if tap_layers.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "tap layers must be strictly increasing, got {tap_layers:?}"
        )));
    }
    let last = *tap_layers.last().expect("non-empty");
    let first = *tap_layers.first().expect("non-empty");
    if first < 1 || last > n_layers {
        return Err(Error::Config(format!(
            "tap layers {tap_layers:?} out of range 1..={n_layers}"
        )));
    }
    Ok(())
}

impl TeacherEnsemble {
    pub fn m(&self) -> usize {
        self.teachers.len()
    }

    /// Hash over all member parameter hashes; used by the frozen-teacher
    /// invariant checks.
    pub fn params_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for t in &self.teachers {
            hasher.update(t.params_hash().as_bytes());
        }
        hex::encode(hasher.finalize())
    }

    /// Forward every teacher on `wave` and return the tap-layer hidden
    /// states as detached tensors: `result[m][k]` is teacher `m` at tap
    /// `tap_layers[k]`, shape `[t × d_model]`. No gradients are recorded.
    pub fn forward_taps(&self, wave: &[f64]) -> Result<Vec<Vec<Tensor>>> {
        let mut out = Vec::with_capacity(self.teachers.len());
        for teacher in &self.teachers {
            let mut g = Graph::new();
            let bound = teacher.bind(&mut g, false)?;
            let states = forward_states(&mut g, &self.cfg, &bound, wave)?;
            let taps = self
                .tap_layers
                .iter()
                .map(|&i| g.detach(states[i]))
                .collect();
            out.push(taps);
        }
        Ok(out)
    }
}

// ── student ────────────────────────────────────────────────────────────

/// Which distillation objective a student is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillMode {
    Single,
    Avg,
    Concat,
    MultiPred,
}

impl std::fmt::Display for DistillMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            DistillMode::Single => "single",
            DistillMode::Avg => "avg",
            DistillMode::Concat => "concat",
            DistillMode::MultiPred => "multi_pred",
        };
        f.write_str(s)
    }
}

/// Trainable student: encoder backbone plus one or M sets of prediction
/// heads (one head per tap layer in each set).
#[derive(Debug, Clone)]
pub struct StudentModel {
    pub encoder: Encoder,
    pub head_sets: Vec<Vec<Affine>>,
    pub mode: DistillMode,
}

/// Student parameters bound into a graph. `ordered` covers encoder then
/// head parameters, matching `StudentModel::for_each_param`.
#[derive(Debug, Clone)]
pub struct BoundStudent {
    pub encoder: BoundEncoder,
    pub head_sets: Vec<Vec<BoundAffine>>,
    pub ordered: Vec<TensorId>,
}

impl StudentModel {
    /// Initialize a student for `mode` against an ensemble of `m` teachers
    /// of width `teacher_d` tapped at `n_taps` layers. Head sets draw from
    /// per-set derived seeds; with `shared_head_init` every set starts
    /// from identical values instead.
    pub fn init(
        cfg: &EncoderConfig,
        mode: DistillMode,
        n_taps: usize,
        teacher_d: usize,
        m: usize,
        seed: u64,
        shared_head_init: bool,
    ) -> Result<Self> {
        if n_taps == 0 || m == 0 {
            return Err(Error::Config("student needs n_taps >= 1 and m >= 1".into()));
        }
        let encoder = Encoder::init(cfg, seed)?;
        let (n_sets, d_target) = match mode {
            DistillMode::Single | DistillMode::Avg => (1, teacher_d),
            DistillMode::Concat => (1, teacher_d * m),
            DistillMode::MultiPred => (m, teacher_d),
        };
        let head_sets = (0..n_sets)
            .map(|set| {
                let stream = if shared_head_init { 0 } else { set as u64 };
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x0EAD_5000 + stream));
                (0..n_taps)
                    .map(|_| Affine::init(&mut rng, cfg.d_model, d_target))
                    .collect()
            })
            .collect();
        Ok(StudentModel {
            encoder,
            head_sets,
            mode,
        })
    }

    /// Drop all prediction heads (the downstream protocol uses only the
    /// backbone).
    pub fn discard_heads(&mut self) {
        self.head_sets.clear();
    }

    pub fn backbone_param_count(&self) -> usize {
        self.encoder.param_count()
    }

    pub fn head_param_count(&self) -> usize {
        self.head_sets
            .iter()
            .flatten()
            .map(|a| a.w.numel() + a.b.numel())
            .sum()
    }

    pub fn for_each_param(&self, mut f: impl FnMut(&str, &Tensor)) {
        self.encoder.for_each_param(|name, t| f(&format!("encoder.{name}"), t));
        for (s, set) in self.head_sets.iter().enumerate() {
            for (k, head) in set.iter().enumerate() {
                f(&format!("heads.{s}.{k}.w"), &head.w);
                f(&format!("heads.{s}.{k}.b"), &head.b);
            }
        }
    }

    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut Tensor)) {
        self.encoder.for_each_param_mut(&mut f);
        for set in self.head_sets.iter_mut() {
            for head in set.iter_mut() {
                f(&mut head.w);
                f(&mut head.b);
            }
        }
    }

    /// Hash of the backbone only; head changes must not affect it.
    pub fn backbone_hash(&self) -> String {
        self.encoder.params_hash()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<BoundStudent> {
        let encoder = self.encoder.bind(g, trainable)?;
        let mut ordered = encoder.ordered.clone();
        let head_sets = self
            .head_sets
            .iter()
            .map(|set| {
                set.iter()
                    .map(|a| {
                        let (w, b) = if trainable {
                            (
                                g.leaf(&a.w.detached().with_requires_grad(true)),
                                g.leaf(&a.b.detached().with_requires_grad(true)),
                            )
                        } else {
                            (g.constant(&a.w), g.constant(&a.b))
                        };
                        ordered.push(w);
                        ordered.push(b);
                        BoundAffine { w, b }
                    })
                    .collect()
            })
            .collect();
        Ok(BoundStudent {
            encoder,
            head_sets,
            ordered,
        })
    }

    /// Assemble a bound view from pre-inserted parameter ids in the same
    /// canonical order `for_each_param` visits.
    pub fn bind_ids(&self, ids: &[TensorId]) -> Result<BoundStudent> {
        let mut it = ids.iter();
        let encoder = self.encoder.bind_ids(&mut it)?;
        let mut ordered = encoder.ordered.clone();
        let mut head_sets = Vec::with_capacity(self.head_sets.len());
        for set in &self.head_sets {
            let mut bound_set = Vec::with_capacity(set.len());
            for _ in set {
                let w = *it
                    .next()
                    .ok_or_else(|| Error::Contract("too few parameter ids for heads".into()))?;
                let b = *it
                    .next()
                    .ok_or_else(|| Error::Contract("too few parameter ids for heads".into()))?;
                ordered.push(w);
                ordered.push(b);
                bound_set.push(BoundAffine { w, b });
            }
            head_sets.push(bound_set);
        }
        if it.next().is_some() {
            return Err(Error::Contract(
                "more parameter ids than student parameters".into(),
            ));
        }
        Ok(BoundStudent { encoder, head_sets, ordered })
    }
}

/// Apply one head set to the student's last hidden state `z`, yielding a
/// prediction per tap layer.
pub fn heads_forward(
    g: &mut Graph,
    z: TensorId,
    head_set: &[BoundAffine],
) -> Result<Vec<TensorId>> {
    head_set
        .iter()
        .map(|h| {
            let d_in = g.value(h.w).shape()[0];
            if g.value(z).cols() != d_in {
                return Err(Error::Dimension(format!(
                    "head expects width {d_in}, student state has width {}",
                    g.value(z).cols()
                )));
            }
            affine_apply(g, z, h)
        })
        .collect()
}
