//! Central finite-difference validation of reverse-mode gradients.
//!
//! [`grad_check`] runs one analytic backward pass, then perturbs every
//! parameter element by ±eps and compares the central difference against
//! the accumulated gradient under the relative-error metric
//! `|a − n| / max(|a|, |n|, 1e-8)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, TensorId};

/// Floor inside the relative-error denominator; keeps the metric defined
/// when both gradients are (near) zero.
pub const REL_ERR_FLOOR: f64 = 1e-8;

/// Largest step size accepted by [`grad_check`].
pub const MAX_EPS: f64 = 1e-2;

/// Outcome of a finite-difference sweep over a parameter set.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error seen across all parameter elements.
    pub max_rel_err: f64,
    /// `(parameter index, flat element index)` of the worst element.
    pub worst: (usize, usize),
    /// Analytic and numeric gradient at the worst element.
    pub worst_pair: (f64, f64),
    /// Total number of elements checked.
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, threshold: f64) -> bool {
        self.max_rel_err <= threshold
    }
}

/// Shift every parameter element by seeded Gaussian noise.
///
/// Finite differences should be evaluated at a generic point: freshly
/// initialized models sit at a degenerate one (near-zero predictions put
/// cosine-similarity denominators around 1e-3, so third derivatives reach
/// ~1e7 and the eps² truncation term alone exceeds tight thresholds).
/// Spreading the parameters first measures gradient correctness instead
/// of the difference quotient's own ill-conditioning.
pub fn perturb_params(params: &mut [Tensor], seed: u64, std: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std).expect("valid std");
    for p in params.iter_mut() {
        for v in p.data_mut() {
            *v += normal.sample(&mut rng);
        }
    }
}

/// Compare analytic gradients of `f` against central finite differences.
///
/// `f` receives a fresh graph and one leaf id per entry of `params`, and
/// must return a scalar loss node. The analytic pass marks every
/// parameter as differentiable; the numeric passes feed plain constants.
///
/// `eps` must lie in `(0, MAX_EPS]`.
pub fn grad_check<F>(params: &[Tensor], f: F, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[TensorId]) -> Result<TensorId>,
{
    if !(eps > 0.0 && eps <= MAX_EPS) {
        return Err(Error::Domain(format!(
            "grad_check: eps must be in (0, {MAX_EPS}], got {eps}"
        )));
    }
    if params.is_empty() {
        return Err(Error::Contract("grad_check: no parameters supplied".into()));
    }

    // Analytic pass.
    let mut g = Graph::new();
    let ids: Vec<TensorId> = params
        .iter()
        .map(|p| g.leaf(&p.detached().with_requires_grad(true)))
        .collect();
    let loss = f(&mut g, &ids)?;
    if g.value(loss).numel() != 1 {
        return Err(Error::Contract(format!(
            "grad_check: loss must be scalar, got shape {:?}",
            g.value(loss).shape()
        )));
    }
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| {
            g.grad(id)
                .map(|s| s.to_vec())
                .unwrap_or_else(|| vec![0.0; g.value(id).numel()])
        })
        .collect();

    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<TensorId> = ps.iter().map(|p| g.constant(p)).collect();
        let loss = f(&mut g, &ids)?;
        Ok(g.scalar_value(loss))
    };

    let mut work: Vec<Tensor> = params.iter().map(|p| p.detached()).collect();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        worst_pair: (0.0, 0.0),
        checked: 0,
    };
    for pi in 0..params.len() {
        for ei in 0..params[pi].numel() {
            let orig = work[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + eps;
            let f_plus = eval(&work)?;
            work[pi].data_mut()[ei] = orig - eps;
            let f_minus = eval(&work)?;
            work[pi].data_mut()[ei] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let a = analytic[pi][ei];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = (pi, ei);
                report.worst_pair = (a, numeric);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
