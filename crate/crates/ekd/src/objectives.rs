//! Distillation objectives: the per-layer L1 + cosine loss and the three
//! ensemble reductions over it (averaged targets, concatenated targets,
//! and one prediction-head set per teacher).
//!
//! Targets are always detached constants — gradients flow only into the
//! student side. Reductions are ordered so that the degenerate cases
//! (one teacher, or identical teachers under averaging) are bitwise equal
//! to plain single-teacher distillation, not merely close.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DistillMode;
use crate::tensor::{Graph, Tensor, TensorId};

/// Epsilon added to cosine denominators; all-zero rows contribute a
/// similarity of 0 instead of failing.
pub const EPS_COS: f64 = 1e-8;

/// Greatest lower bound of the layer loss: `−ln σ(1)`, reached when the
/// prediction equals the target exactly.
pub const LOSS_FLOOR: f64 = 0.313_261_687_518_222_8;

/// Upper bound of the cosine term alone: `−ln σ(−1)`.
pub const COS_TERM_CEIL: f64 = 1.313_261_687_518_222_8;

/// How the L1 term is normalized.
///
/// `PerTimestep` divides by `t·d`, making the L1 and cosine terms both
/// per-timestep averages and the loss independent of sequence length.
/// `PerFeature` divides by `d` only (the literal reading of the loss
/// formula); kept for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossNorm {
    PerTimestep,
    PerFeature,
}

impl Default for LossNorm {
    fn default() -> Self {
        LossNorm::PerTimestep
    }
}

/// Mean over timesteps of the per-row cosine similarity between `a` and
/// `b`: `(1/t) Σ_s dot(a_s, b_s) / (‖a_s‖·‖b_s‖ + EPS_COS)`.
pub fn cossim_timestep_avg(g: &mut Graph, a: TensorId, b: TensorId) -> Result<TensorId> {
    if g.value(a).shape() != g.value(b).shape() {
        return Err(Error::Dimension(format!(
            "cosine similarity: shapes {:?} and {:?} differ",
            g.value(a).shape(),
            g.value(b).shape()
        )));
    }
    let prod = g.mul(a, b)?;
    let dots = g.sum_axis1(prod)?;
    let a2 = g.mul(a, a)?;
    let na2 = g.sum_axis1(a2)?;
    let na = g.sqrt(na2)?;
    let b2 = g.mul(b, b)?;
    let nb2 = g.sum_axis1(b2)?;
    let nb = g.sqrt(nb2)?;
    let norm_prod = g.mul(na, nb)?;
    let denom = g.add_scalar(norm_prod, EPS_COS)?;
    let ratios = g.div(dots, denom)?;
    g.mean(ratios)
}

/// Per-layer distillation loss: normalized L1 distance minus the
/// log-sigmoid of the timestep-averaged cosine similarity.
///
/// The caller is responsible for passing the target as a detached
/// constant (see [`build_targets`]); gradients then reach only `h_s`.
pub fn layer_loss(
    g: &mut Graph,
    h_s: TensorId,
    h_t: TensorId,
    norm: LossNorm,
) -> Result<TensorId> {
    let shape = g.value(h_s).shape().to_vec();
    if shape != g.value(h_t).shape() {
        return Err(Error::Dimension(format!(
            "layer loss: prediction {:?} vs target {:?}",
            shape,
            g.value(h_t).shape()
        )));
    }
    let (t, d) = (shape[0], shape[1]);
    let diff = g.sub(h_s, h_t)?;
    let absdiff = g.abs(diff)?;
    let l1_sum = g.sum(absdiff)?;
    let l1_scale = match norm {
        LossNorm::PerTimestep => 1.0 / (t as f64 * d as f64),
        LossNorm::PerFeature => 1.0 / d as f64,
    };
    let l1 = g.scale(l1_sum, l1_scale)?;
    let cs = cossim_timestep_avg(g, h_s, h_t)?;
    let ls = g.log_sigmoid(cs)?;
    let neg_ls = g.scale(ls, -1.0)?;
    g.add(l1, neg_ls)
}

// ── target construction ────────────────────────────────────────────────

/// Distillation targets for one input, already reduced for their mode.
/// All tensors are detached; they enter graphs as constants.
#[derive(Debug, Clone)]
pub enum DistillTargets {
    /// One chosen teacher's tap states, width `d_t`.
    Single { per_tap: Vec<Tensor> },
    /// Elementwise mean over teachers per tap, width `d_t`.
    Avg { per_tap: Vec<Tensor> },
    /// Feature-axis concatenation over teachers per tap, width `d_t·m`.
    Concat { per_tap: Vec<Tensor>, m: usize },
    /// Raw per-teacher tap states, width `d_t` each.
    MultiPred { per_teacher: Vec<Vec<Tensor>> },
}

impl DistillTargets {
    pub fn mode(&self) -> DistillMode {
        match self {
            DistillTargets::Single { .. } => DistillMode::Single,
            DistillTargets::Avg { .. } => DistillMode::Avg,
            DistillTargets::Concat { .. } => DistillMode::Concat,
            DistillTargets::MultiPred { .. } => DistillMode::MultiPred,
        }
    }
}

/// Check that every teacher supplied the same number of taps with
/// identical shapes.
fn validate_ensemble_shapes(per_teacher: &[Vec<Tensor>]) -> Result<()> {
    if per_teacher.is_empty() {
        return Err(Error::Dimension("ensemble targets: no teachers".into()));
    }
    let first = &per_teacher[0];
    if first.is_empty() {
        return Err(Error::Dimension("ensemble targets: no tap layers".into()));
    }
    for (m, taps) in per_teacher.iter().enumerate() {
        if taps.len() != first.len() {
            return Err(Error::Dimension(format!(
                "ensemble targets: teacher {m} has {} taps, expected {}",
                taps.len(),
                first.len()
            )));
        }
        for (k, t) in taps.iter().enumerate() {
            if t.shape() != first[k].shape() {
                return Err(Error::Dimension(format!(
                    "ensemble targets: teacher {m} tap {k} shape {:?} differs from {:?}",
                    t.shape(),
                    first[k].shape()
                )));
            }
        }
    }
    Ok(())
}

/// Elementwise mean per tap layer across teachers (width preserved).
/// Computed as sum-then-scale so that identical inputs reduce exactly.
pub fn aggregate_average(per_teacher: &[Vec<Tensor>]) -> Result<Vec<Tensor>> {
    validate_ensemble_shapes(per_teacher)?;
    let m = per_teacher.len() as f64;
    let n_taps = per_teacher[0].len();
    let mut out = Vec::with_capacity(n_taps);
    for k in 0..n_taps {
        let mut acc = per_teacher[0][k].detached();
        for teacher in &per_teacher[1..] {
            for (a, v) in acc.data_mut().iter_mut().zip(teacher[k].data()) {
                *a += v;
            }
        }
        for a in acc.data_mut() {
            *a *= 1.0 / m;
        }
        out.push(acc);
    }
    Ok(out)
}

/// Feature-axis concatenation per tap layer, in teacher declaration
/// order (width becomes `d_t · m`).
pub fn aggregate_concat(per_teacher: &[Vec<Tensor>]) -> Result<Vec<Tensor>> {
    validate_ensemble_shapes(per_teacher)?;
    let n_taps = per_teacher[0].len();
    let mut out = Vec::with_capacity(n_taps);
    for k in 0..n_taps {
        let t = per_teacher[0][k].shape()[0];
        let widths: Vec<usize> = per_teacher.iter().map(|tea| tea[k].shape()[1]).collect();
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; t * total];
        let mut offset = 0;
        for (teacher, &w) in per_teacher.iter().zip(&widths) {
            let src = teacher[k].data();
            for r in 0..t {
                data[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        out.push(Tensor::new(data, &[t, total])?);
    }
    Ok(out)
}

/// Reduce raw per-teacher tap states into targets for `mode`.
/// `single_index` picks the teacher used by `Single` mode.
pub fn build_targets(
    mode: DistillMode,
    per_teacher: &[Vec<Tensor>],
    single_index: usize,
) -> Result<DistillTargets> {
    validate_ensemble_shapes(per_teacher)?;
    match mode {
        DistillMode::Single => {
            if single_index >= per_teacher.len() {
                return Err(Error::Config(format!(
                    "single-teacher index {single_index} out of range for {} teachers",
                    per_teacher.len()
                )));
            }
            Ok(DistillTargets::Single {
                per_tap: per_teacher[single_index].iter().map(Tensor::detached).collect(),
            })
        }
        DistillMode::Avg => Ok(DistillTargets::Avg {
            per_tap: aggregate_average(per_teacher)?,
        }),
        DistillMode::Concat => Ok(DistillTargets::Concat {
            per_tap: aggregate_concat(per_teacher)?,
            m: per_teacher.len(),
        }),
        DistillMode::MultiPred => Ok(DistillTargets::MultiPred {
            per_teacher: per_teacher
                .iter()
                .map(|taps| taps.iter().map(Tensor::detached).collect())
                .collect(),
        }),
    }
}

// ── ensemble losses ────────────────────────────────────────────────────

fn mean_layer_losses(
    g: &mut Graph,
    preds: &[TensorId],
    targets: &[Tensor],
    norm: LossNorm,
    extra_scale: f64,
) -> Result<TensorId> {
    if preds.len() != targets.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} tap targets",
            preds.len(),
            targets.len()
        )));
    }
    let mut acc: Option<TensorId> = None;
    for (&p, target) in preds.iter().zip(targets) {
        let t_id = g.constant(target);
        let ll = layer_loss(g, p, t_id, norm)?;
        acc = Some(match acc {
            None => ll,
            Some(a) => g.add(a, ll)?,
        });
    }
    let total = acc.expect("at least one tap");
    g.scale(total, extra_scale / targets.len() as f64)
}

/// Single-teacher objective: mean of layer losses over tap layers.
pub fn loss_single(
    g: &mut Graph,
    preds: &[TensorId],
    targets: &DistillTargets,
    norm: LossNorm,
) -> Result<TensorId> {
    let DistillTargets::Single { per_tap } = targets else {
        return Err(Error::Contract(format!(
            "single-mode loss given {} targets",
            targets.mode()
        )));
    };
    mean_layer_losses(g, preds, per_tap, norm, 1.0)
}

/// Averaged-target objective: mean of layer losses against the
/// teacher-mean targets.
pub fn loss_avg(
    g: &mut Graph,
    preds: &[TensorId],
    targets: &DistillTargets,
    norm: LossNorm,
) -> Result<TensorId> {
    let DistillTargets::Avg { per_tap } = targets else {
        return Err(Error::Contract(format!(
            "avg-mode loss given {} targets",
            targets.mode()
        )));
    };
    mean_layer_losses(g, preds, per_tap, norm, 1.0)
}

/// Concatenated-target objective: as `loss_avg` but over widened vectors;
/// prediction widths must equal `d_t · m`.
pub fn loss_concat(
    g: &mut Graph,
    preds: &[TensorId],
    targets: &DistillTargets,
    norm: LossNorm,
) -> Result<TensorId> {
    let DistillTargets::Concat { per_tap, m } = targets else {
        return Err(Error::Contract(format!(
            "concat-mode loss given {} targets",
            targets.mode()
        )));
    };
    for (&p, target) in preds.iter().zip(per_tap.iter()) {
        let expected = target.shape()[1];
        let got = g.value(p).cols();
        if got != expected {
            let d_t = expected / m;
            return Err(Error::Dimension(format!(
                "concat prediction width {got}, expected d_t·m = {d_t}·{m} = {expected}"
            )));
        }
    }
    mean_layer_losses(g, preds, per_tap, norm, 1.0)
}

/// Multi-head objective: one prediction set per teacher, averaged over
/// both teachers and tap layers.
pub fn loss_multi_pred(
    g: &mut Graph,
    pred_sets: &[Vec<TensorId>],
    targets: &DistillTargets,
    norm: LossNorm,
) -> Result<TensorId> {
    let DistillTargets::MultiPred { per_teacher } = targets else {
        return Err(Error::Contract(format!(
            "multi-head loss given {} targets",
            targets.mode()
        )));
    };
    if pred_sets.len() != per_teacher.len() {
        return Err(Error::Contract(format!(
            "{} prediction sets for {} teachers",
            pred_sets.len(),
            per_teacher.len()
        )));
    }
    let m = per_teacher.len();
    let n_taps = per_teacher[0].len();
    let mut acc: Option<TensorId> = None;
    for (set, taps) in pred_sets.iter().zip(per_teacher) {
        if set.len() != taps.len() {
            return Err(Error::Contract(format!(
                "{} predictions for {} tap targets",
                set.len(),
                taps.len()
            )));
        }
        for (&p, target) in set.iter().zip(taps) {
            let t_id = g.constant(target);
            let ll = layer_loss(g, p, t_id, norm)?;
            acc = Some(match acc {
                None => ll,
                Some(a) => g.add(a, ll)?,
            });
        }
    }
    let total = acc.expect("at least one term");
    g.scale(total, 1.0 / (m as f64 * n_taps as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, t: usize, d: usize) -> Tensor {
        Tensor::new((0..t * d).map(|_| rng.random_range(-1.5..1.5)).collect(), &[t, d]).unwrap()
    }

    fn cossim_value(a: &Tensor, b: &Tensor) -> f64 {
        let mut g = Graph::new();
        let ia = g.constant(a);
        let ib = g.constant(b);
        let c = cossim_timestep_avg(&mut g, ia, ib).unwrap();
        g.scalar_value(c)
    }

    fn layer_loss_value(a: &Tensor, b: &Tensor, norm: LossNorm) -> f64 {
        let mut g = Graph::new();
        let ia = g.constant(a);
        let ib = g.constant(b);
        let l = layer_loss(&mut g, ia, ib, norm).unwrap();
        g.scalar_value(l)
    }

    #[test]
    fn cossim_identity_orthogonal_mixed() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5]]).unwrap();
        assert!((cossim_value(&a, &a) - 1.0).abs() < 1e-7);

        let x = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let y = Tensor::from_rows(&[vec![0.0, 1.0]]).unwrap();
        assert!(cossim_value(&x, &y).abs() < 1e-12);

        // row 1 parallel, row 2 orthogonal -> mean 0.5
        let p = Tensor::from_rows(&[vec![2.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let q = Tensor::from_rows(&[vec![5.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!((cossim_value(&p, &q) - 0.5).abs() < 1e-7);
    }

    #[test]
    fn cossim_scale_invariant_loss_is_not() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = rand_mat(&mut rng, 3, 4);
        let b = rand_mat(&mut rng, 3, 4);
        let mut a3 = a.detached();
        for v in a3.data_mut() {
            *v *= 3.0;
        }
        assert!((cossim_value(&a3, &b) - cossim_value(&a, &b)).abs() < 1e-9);
        let l = layer_loss_value(&a, &b, LossNorm::PerTimestep);
        let l3 = layer_loss_value(&a3, &b, LossNorm::PerTimestep);
        assert!((l - l3).abs() > 1e-6, "L1 term must break scale invariance");
    }

    #[test]
    fn zero_rows_contribute_zero_similarity() {
        let z = Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap();
        assert_eq!(cossim_value(&z, &b), 0.0);
    }

    #[test]
    fn layer_loss_anchors() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, -1.0]]).unwrap();
        let ident = layer_loss_value(&a, &a, LossNorm::PerTimestep);
        assert!((ident - LOSS_FLOOR).abs() < 1e-6, "identity case: {ident}");

        let x = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let y = Tensor::from_rows(&[vec![0.0, 1.0]]).unwrap();
        let ortho = layer_loss_value(&x, &y, LossNorm::PerTimestep);
        assert!((ortho - (1.0 + std::f64::consts::LN_2)).abs() < 1e-6, "orthogonal: {ortho}");

        let neg = Tensor::from_rows(&[vec![-1.0, 0.0]]).unwrap();
        let anti = layer_loss_value(&x, &neg, LossNorm::PerTimestep);
        assert!((anti - (1.0 + COS_TERM_CEIL)).abs() < 1e-6, "antiparallel: {anti}");
    }

    #[test]
    fn loss_bounds_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let t = rng.random_range(1..5usize);
            let d = rng.random_range(2..8usize);
            let a = rand_mat(&mut rng, t, d);
            let b = rand_mat(&mut rng, t, d);
            let l = layer_loss_value(&a, &b, LossNorm::PerTimestep);
            assert!(l >= LOSS_FLOOR - 1e-12, "loss {l} below floor");
            // cosine term alone is bounded above
            let cs = cossim_value(&a, &b);
            let cos_term = -(1.0 / (1.0 + (-cs).exp())).ln();
            assert!(cos_term <= COS_TERM_CEIL + 1e-9);
        }
    }

    #[test]
    fn normalization_variants_differ_by_timestep_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = 3;
        let a = rand_mat(&mut rng, t, 4);
        let b = rand_mat(&mut rng, t, 4);
        let cs = cossim_value(&a, &b);
        let cos_term = -(1.0 / (1.0 + (-cs).exp())).ln();
        let per_ts = layer_loss_value(&a, &b, LossNorm::PerTimestep) - cos_term;
        let per_feat = layer_loss_value(&a, &b, LossNorm::PerFeature) - cos_term;
        assert!((per_feat - t as f64 * per_ts).abs() < 1e-9);
    }

    #[test]
    fn aggregate_average_mean_and_symmetry() {
        let t1 = vec![Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap()];
        let t2 = vec![Tensor::from_rows(&[vec![3.0, 4.0]]).unwrap()];
        let avg = aggregate_average(&[t1.clone(), t2.clone()]).unwrap();
        assert_eq!(avg[0].data(), &[2.0, 3.0]);

        let avg_rev = aggregate_average(&[t2.clone(), t1.clone()]).unwrap();
        assert_eq!(avg[0].data(), avg_rev[0].data());

        let single = aggregate_average(&[t1.clone()]).unwrap();
        assert_eq!(single[0].data(), t1[0].data());
    }

    #[test]
    fn aggregate_concat_order_and_width() {
        let t1 = vec![Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap()];
        let t2 = vec![Tensor::from_rows(&[vec![3.0, 4.0]]).unwrap()];
        let cat = aggregate_concat(&[t1.clone(), t2.clone()]).unwrap();
        assert_eq!(cat[0].shape(), &[1, 4]);
        assert_eq!(cat[0].data(), &[1.0, 2.0, 3.0, 4.0]);

        // permuted ensemble = column-block permutation
        let cat_rev = aggregate_concat(&[t2, t1.clone()]).unwrap();
        assert_eq!(cat_rev[0].data(), &[3.0, 4.0, 1.0, 2.0]);

        let single = aggregate_concat(&[t1.clone()]).unwrap();
        assert_eq!(single[0].data(), t1[0].data());

        // d_t = 2, M = 3 -> width 6
        let t3 = vec![Tensor::from_rows(&[vec![5.0, 6.0]]).unwrap()];
        let wide = aggregate_concat(&[
            vec![Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap()],
            vec![Tensor::from_rows(&[vec![3.0, 4.0]]).unwrap()],
            t3,
        ])
        .unwrap();
        assert_eq!(wide[0].shape(), &[1, 6]);
    }

    #[test]
    fn ensemble_shape_mismatch_is_rejected() {
        let t1 = vec![Tensor::zeros(&[2, 4])];
        let t2 = vec![Tensor::zeros(&[2, 3])];
        assert!(matches!(
            aggregate_average(&[t1.clone(), t2.clone()]),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(aggregate_concat(&[t1, t2]), Err(Error::Dimension(_))));
    }

    #[test]
    fn identical_teachers_collapse_to_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let taps: Vec<Tensor> = (0..3).map(|_| rand_mat(&mut rng, 3, 4)).collect();
        let preds_t: Vec<Tensor> = (0..3).map(|_| rand_mat(&mut rng, 3, 4)).collect();
        let per_teacher = vec![taps.clone(), taps.clone()];

        let eval = |targets: &DistillTargets, multi: bool| -> f64 {
            let mut g = Graph::new();
            let preds: Vec<TensorId> = preds_t.iter().map(|p| g.constant(p)).collect();
            let loss = if multi {
                let sets = vec![preds.clone(), preds.clone()];
                loss_multi_pred(&mut g, &sets, targets, LossNorm::PerTimestep).unwrap()
            } else {
                match targets {
                    DistillTargets::Single { .. } => {
                        loss_single(&mut g, &preds, targets, LossNorm::PerTimestep).unwrap()
                    }
                    _ => loss_avg(&mut g, &preds, targets, LossNorm::PerTimestep).unwrap(),
                }
            };
            g.scalar_value(loss)
        };

        let single = build_targets(DistillMode::Single, &per_teacher, 0).unwrap();
        let avg = build_targets(DistillMode::Avg, &per_teacher, 0).unwrap();
        let multi = build_targets(DistillMode::MultiPred, &per_teacher, 0).unwrap();

        let ls = eval(&single, false);
        let la = eval(&avg, false);
        let lm = eval(&multi, true);
        assert!((ls - la).abs() < 1e-10);
        assert!((ls - lm).abs() < 1e-10);
    }

    #[test]
    fn single_teacher_reductions_are_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let taps: Vec<Tensor> = (0..2).map(|_| rand_mat(&mut rng, 2, 3)).collect();
        let preds_t: Vec<Tensor> = (0..2).map(|_| rand_mat(&mut rng, 2, 3)).collect();
        let per_teacher = vec![taps];

        let run = |mode: DistillMode| -> f64 {
            let targets = build_targets(mode, &per_teacher, 0).unwrap();
            let mut g = Graph::new();
            let preds: Vec<TensorId> = preds_t.iter().map(|p| g.constant(p)).collect();
            let loss = match mode {
                DistillMode::Single => loss_single(&mut g, &preds, &targets, LossNorm::PerTimestep),
                DistillMode::Avg => loss_avg(&mut g, &preds, &targets, LossNorm::PerTimestep),
                DistillMode::Concat => loss_concat(&mut g, &preds, &targets, LossNorm::PerTimestep),
                DistillMode::MultiPred => {
                    loss_multi_pred(&mut g, &[preds.clone()], &targets, LossNorm::PerTimestep)
                }
            }
            .unwrap();
            g.scalar_value(loss)
        };

        let base = run(DistillMode::Single);
        assert_eq!(base.to_bits(), run(DistillMode::Avg).to_bits());
        assert_eq!(base.to_bits(), run(DistillMode::Concat).to_bits());
        assert_eq!(base.to_bits(), run(DistillMode::MultiPred).to_bits());
    }

    #[test]
    fn mode_mismatch_is_contract_error() {
        let per_teacher = vec![vec![Tensor::zeros(&[2, 3])]];
        let avg_targets = build_targets(DistillMode::Avg, &per_teacher, 0).unwrap();
        let mut g = Graph::new();
        let p = g.constant(&Tensor::zeros(&[2, 3]));
        assert!(matches!(
            loss_single(&mut g, &[p], &avg_targets, LossNorm::PerTimestep),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            loss_multi_pred(&mut g, &[vec![p]], &avg_targets, LossNorm::PerTimestep),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn concat_width_mismatch_names_expected_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let per_teacher = vec![
            vec![rand_mat(&mut rng, 2, 3)],
            vec![rand_mat(&mut rng, 2, 3)],
        ];
        let targets = build_targets(DistillMode::Concat, &per_teacher, 0).unwrap();
        let mut g = Graph::new();
        // width 3 instead of required 6
        let p = g.constant(&Tensor::zeros(&[2, 3]));
        let err = loss_concat(&mut g, &[p], &targets, LossNorm::PerTimestep).unwrap_err();
        assert!(err.to_string().contains('6'), "message: {err}");
    }

    #[test]
    fn gradients_reach_predictions_not_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pred = rand_mat(&mut rng, 3, 4);
        let target = rand_mat(&mut rng, 3, 4);
        let mut g = Graph::new();
        let p = g.leaf(&pred.detached().with_requires_grad(true));
        let t = g.constant(&target);
        let loss = layer_loss(&mut g, p, t, LossNorm::PerTimestep).unwrap();
        g.backward(loss).unwrap();
        assert!(g.grad(p).is_some());
        assert!(g.grad(t).is_none());
    }

    #[test]
    fn layer_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let pred = rand_mat(&mut rng, 4, 8);
        let target = rand_mat(&mut rng, 4, 8);
        for norm in [LossNorm::PerTimestep, LossNorm::PerFeature] {
            let report = grad_check(
                &[pred.detached()],
                |g, ids| {
                    let t = g.constant(&target);
                    layer_loss(g, ids[0], t, norm)
                },
                1e-5,
            )
            .unwrap();
            assert!(report.max_rel_err < 1e-4, "rel err {}", report.max_rel_err);
        }
    }

    #[test]
    fn ensemble_losses_pass_gradient_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let per_teacher: Vec<Vec<Tensor>> = (0..2)
            .map(|_| (0..2).map(|_| rand_mat(&mut rng, 3, 4)).collect())
            .collect();
        let preds: Vec<Tensor> = (0..2).map(|_| rand_mat(&mut rng, 3, 4)).collect();
        let preds_wide: Vec<Tensor> = (0..2).map(|_| rand_mat(&mut rng, 3, 8)).collect();

        let avg_targets = build_targets(DistillMode::Avg, &per_teacher, 0).unwrap();
        let report = grad_check(
            &preds,
            |g, ids| loss_avg(g, ids, &avg_targets, LossNorm::PerTimestep),
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "avg: {}", report.max_rel_err);

        let cat_targets = build_targets(DistillMode::Concat, &per_teacher, 0).unwrap();
        let report = grad_check(
            &preds_wide,
            |g, ids| loss_concat(g, ids, &cat_targets, LossNorm::PerTimestep),
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "concat: {}", report.max_rel_err);

        let mp_targets = build_targets(DistillMode::MultiPred, &per_teacher, 0).unwrap();
        let four: Vec<Tensor> = (0..4).map(|_| rand_mat(&mut rng, 3, 4)).collect();
        let report = grad_check(
            &four,
            |g, ids| {
                let sets = vec![vec![ids[0], ids[1]], vec![ids[2], ids[3]]];
                loss_multi_pred(g, &sets, &mp_targets, LossNorm::PerTimestep)
            },
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "multi: {}", report.max_rel_err);
    }
}
