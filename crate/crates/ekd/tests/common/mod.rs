//! Independent scalar-loop reference implementations of the distillation
//! losses. Everything here works on flat `Vec<f64>` buffers with
//! hand-written loops — no tensor ops, no graph, no shared code with the
//! library — so agreement is evidence, not tautology.

/// Stable softplus: ln(1 + e^x) without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Reference per-layer loss over `[t × d]` buffers.
/// `per_feature` selects the 1/d normalization instead of 1/(t·d).
pub fn oracle_layer_loss(pred: &[f64], target: &[f64], t: usize, d: usize, per_feature: bool) -> f64 {
    assert_eq!(pred.len(), t * d);
    assert_eq!(target.len(), t * d);
    let mut l1 = 0.0;
    for i in 0..t * d {
        l1 += (pred[i] - target[i]).abs();
    }
    let norm = if per_feature { 1.0 / d as f64 } else { 1.0 / (t as f64 * d as f64) };

    let mut cos_sum = 0.0;
    for r in 0..t {
        let mut dot = 0.0;
        let mut na = 0.0;
        let mut nb = 0.0;
        for j in 0..d {
            let a = pred[r * d + j];
            let b = target[r * d + j];
            dot += a * b;
            na += a * a;
            nb += b * b;
        }
        cos_sum += dot / (na.sqrt() * nb.sqrt() + 1e-8);
    }
    let cos_mean = cos_sum / t as f64;

    norm * l1 + softplus(-cos_mean)
}

/// Reference single-teacher loss: mean over taps of the layer loss
/// against teacher `index`.
pub fn oracle_loss_single(
    preds: &[Vec<f64>],
    per_teacher: &[Vec<Vec<f64>>],
    index: usize,
    t: usize,
    d: usize,
    per_feature: bool,
) -> f64 {
    let k_taps = preds.len();
    let mut total = 0.0;
    for k in 0..k_taps {
        total += oracle_layer_loss(&preds[k], &per_teacher[index][k], t, d, per_feature);
    }
    total / k_taps as f64
}

/// Reference average-target ensemble loss: mean over taps of the layer
/// loss against the elementwise mean of the teachers.
pub fn oracle_loss_avg(
    preds: &[Vec<f64>],
    per_teacher: &[Vec<Vec<f64>>],
    t: usize,
    d: usize,
    per_feature: bool,
) -> f64 {
    let m = per_teacher.len();
    let k_taps = preds.len();
    let mut total = 0.0;
    for k in 0..k_taps {
        let mut target = vec![0.0; t * d];
        for teacher in per_teacher {
            for (acc, v) in target.iter_mut().zip(&teacher[k]) {
                *acc += v;
            }
        }
        for v in target.iter_mut() {
            *v /= m as f64;
        }
        total += oracle_layer_loss(&preds[k], &target, t, d, per_feature);
    }
    total / k_taps as f64
}

/// Reference concatenated-target ensemble loss: targets are per-tap
/// feature-axis concatenations in teacher declaration order.
pub fn oracle_loss_concat(
    preds: &[Vec<f64>],
    per_teacher: &[Vec<Vec<f64>>],
    t: usize,
    d: usize,
    per_feature: bool,
) -> f64 {
    let m = per_teacher.len();
    let k_taps = preds.len();
    let dm = d * m;
    let mut total = 0.0;
    for k in 0..k_taps {
        let mut target = vec![0.0; t * dm];
        for r in 0..t {
            for (mi, teacher) in per_teacher.iter().enumerate() {
                for j in 0..d {
                    target[r * dm + mi * d + j] = teacher[k][r * d + j];
                }
            }
        }
        total += oracle_layer_loss(&preds[k], &target, t, dm, per_feature);
    }
    total / k_taps as f64
}

/// Reference multi-head ensemble loss: one prediction set per teacher,
/// every (teacher, tap) pair weighted equally.
pub fn oracle_loss_multi_pred(
    pred_sets: &[Vec<Vec<f64>>],
    per_teacher: &[Vec<Vec<f64>>],
    t: usize,
    d: usize,
    per_feature: bool,
) -> f64 {
    let m = per_teacher.len();
    assert_eq!(pred_sets.len(), m);
    let k_taps = per_teacher[0].len();
    let mut total = 0.0;
    for mi in 0..m {
        for k in 0..k_taps {
            total += oracle_layer_loss(&pred_sets[mi][k], &per_teacher[mi][k], t, d, per_feature);
        }
    }
    total / (m * k_taps) as f64
}
