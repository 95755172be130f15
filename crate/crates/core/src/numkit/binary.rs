use nalgebra::{DMatrix, DVector};

use super::design::{DesignMatrix, WeightVector};
use super::link::LinkFunction;
use super::linalg::{ensure_full_rank, solve_spd};
use crate::error::{CqivError, Result};

const MAX_ITER: usize = 100;
const GRAD_TOL: f64 = 1e-8;
const SEPARATION_BOUND: f64 = 30.0;

/// Result of a binary-choice maximum likelihood fit.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryFit {
    pub delta: Vec<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
}

/// Weighted log-likelihood `sum_i w_i [t_i ln Λ(s_i'δ) + (1-t_i) ln(1-Λ(s_i'δ))]`
/// and its gradient.
pub fn binary_loglik(
    s: &DesignMatrix,
    t: &[bool],
    link: LinkFunction,
    w: &WeightVector,
    delta: &[f64],
) -> (f64, Vec<f64>) {
    let (ll, g, _) = evaluate(s, t, link, w.as_slice(), delta, false);
    (ll, g.iter().copied().collect())
}

fn evaluate(
    s: &DesignMatrix,
    t: &[bool],
    link: LinkFunction,
    w: &[f64],
    delta: &[f64],
    with_info: bool,
) -> (f64, DVector<f64>, Option<DMatrix<f64>>) {
    let p = s.cols();
    let mut ll = 0.0;
    let mut grad = DVector::zeros(p);
    let mut info = with_info.then(|| DMatrix::zeros(p, p));
    for i in 0..s.rows() {
        if w[i] <= 0.0 {
            continue;
        }
        let row = s.row(i);
        let eta = super::design::dot(row, delta);
        ll += w[i] * link.loglik(eta, t[i]);
        let (g, c) = link.score_and_curvature(eta, t[i]);
        for a in 0..p {
            grad[a] += w[i] * g * row[a];
        }
        if let Some(h) = info.as_mut() {
            let wc = w[i] * c;
            for a in 0..p {
                for b in 0..=a {
                    h[(a, b)] += wc * row[a] * row[b];
                }
            }
        }
    }
    if let Some(h) = info.as_mut() {
        for a in 0..p {
            for b in 0..a {
                h[(b, a)] = h[(a, b)];
            }
        }
    }
    (ll, grad, info)
}

fn max_abs_index(s: &DesignMatrix, w: &[f64], delta: &[f64]) -> f64 {
    (0..s.rows())
        .filter(|&i| w[i] > 0.0)
        .map(|i| super::design::dot(s.row(i), delta).abs())
        .fold(0.0, f64::max)
}

/// A finite maximizer cannot classify every observation strictly correctly;
/// if it appears to, the likelihood is unbounded along `delta`.
fn perfectly_classified(s: &DesignMatrix, t: &[bool], w: &[f64], delta: &[f64]) -> bool {
    (0..s.rows())
        .filter(|&i| w[i] > 0.0)
        .all(|i| {
            let eta = super::design::dot(s.row(i), delta);
            if t[i] {
                eta > 0.0
            } else {
                eta < 0.0
            }
        })
}

/// Weighted probit/logit maximum likelihood by Newton-Raphson with step
/// halving.
pub fn fit_binary_mle(
    s: &DesignMatrix,
    t: &[bool],
    link: LinkFunction,
    w: &WeightVector,
) -> Result<BinaryFit> {
    let n = s.rows();
    if t.len() != n || w.len() != n {
        return Err(CqivError::InvalidArgument(format!(
            "binary regression inputs disagree in length: S has {n} rows, t {}, w {}",
            t.len(),
            w.len()
        )));
    }
    let wv = w.as_slice();
    let (mut ones, mut zeros) = (0usize, 0usize);
    for i in 0..n {
        if wv[i] > 0.0 {
            if t[i] {
                ones += 1;
            } else {
                zeros += 1;
            }
        }
    }
    if ones + zeros == 0 {
        return Err(CqivError::EmptySample);
    }
    if ones == 0 || zeros == 0 {
        return Err(CqivError::DegenerateOutcome);
    }
    ensure_full_rank(s, wv)?;

    let p = s.cols();
    let mut delta = vec![0.0; p];
    let (mut ll, mut grad, mut info) = evaluate(s, t, link, wv, &delta, true);
    for iter in 0..MAX_ITER {
        let gnorm = grad.amax();
        if gnorm < GRAD_TOL {
            if perfectly_classified(s, t, wv, &delta) {
                return Err(CqivError::Separation { bound: SEPARATION_BOUND });
            }
            return Ok(BinaryFit { delta, loglik: ll, iterations: iter, gradient_norm: gnorm });
        }
        let Some(step) = info.take().and_then(|h| solve_spd(h, &grad)) else {
            return Err(CqivError::Convergence { iterations: iter, gradient_norm: gnorm });
        };
        // Inside the quadratic region the likelihood change is below
        // rounding, so the full step is taken without a comparison.
        let local = grad.dot(&step) < 1e-10 * (1.0 + ll.abs());
        let mut factor = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = delta.iter().zip(step.iter()).map(|(d, s)| d + factor * s).collect();
            let (ll_new, g_new, h_new) = evaluate(s, t, link, wv, &cand, true);
            if ll_new.is_finite() && (local || ll_new >= ll) {
                accepted = Some((cand, ll_new, g_new, h_new));
                break;
            }
            factor *= 0.5;
        }
        match accepted {
            Some((cand, ll_new, g_new, h_new)) => {
                if ll_new > ll && max_abs_index(s, wv, &cand) > SEPARATION_BOUND {
                    return Err(CqivError::Separation { bound: SEPARATION_BOUND });
                }
                delta = cand;
                ll = ll_new;
                grad = g_new;
                info = h_new;
            }
            None => {
                // No representable improvement: accept if the Newton
                // decrement says we are at the floating-point optimum.
                let decrement: f64 = grad.dot(&step);
                if decrement.abs() <= 1e-20 * (1.0 + ll.abs()) {
                    return Ok(BinaryFit { delta, loglik: ll, iterations: iter, gradient_norm: gnorm });
                }
                return Err(CqivError::Convergence { iterations: iter, gradient_norm: gnorm });
            }
        }
    }
    let gnorm = grad.amax();
    if gnorm < GRAD_TOL {
        Ok(BinaryFit { delta, loglik: ll, iterations: MAX_ITER, gradient_norm: gnorm })
    } else {
        Err(CqivError::Convergence { iterations: MAX_ITER, gradient_norm: gnorm })
    }
}
