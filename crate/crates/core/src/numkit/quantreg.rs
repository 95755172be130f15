//! Weighted linear quantile regression.
//!
//! The weighted check-loss problem `min_b sum_i w_i rho_u(y_i - x_i'b)` is the
//! linear program whose dual is
//!
//! ```text
//! max_a  y'a   s.t.  X'a = (1 - u) X'1,  0 <= a <= 1
//! ```
//!
//! (after absorbing `w_i >= 0` into the rows). It is solved with a
//! Frisch-Newton primal-dual interior point method with Mehrotra
//! predictor-corrector steps. The approximate interior solution is then
//! pushed onto an optimal vertex: the `p` observations with the smallest
//! residuals form a starting basis and exterior-point descent pivots along
//! edges of the check-loss polyhedron until no edge decreases the objective.
//! The reported coefficients are therefore a basic solution that
//! interpolates `p` observations, like a simplex-based solver would return.

use nalgebra::{DMatrix, DVector};

use super::design::{DesignMatrix, WeightVector};
use super::linalg::{ensure_full_rank, solve_square};
use crate::error::{CqivError, Result};

/// Check (pinball) loss `rho_u(z) = (u - 1{z < 0}) z`.
pub fn check_loss(z: f64, u: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(CqivError::InvalidArgument(format!("check loss at non-finite residual {z}")));
    }
    validate_quantile(u)?;
    Ok(rho(z, u))
}

pub(crate) fn validate_quantile(u: f64) -> Result<()> {
    if u > 0.0 && u < 1.0 {
        Ok(())
    } else {
        Err(CqivError::InvalidArgument(format!("quantile index must lie in (0,1), got {u}")))
    }
}

#[inline]
fn rho(z: f64, u: f64) -> f64 {
    if z < 0.0 {
        (u - 1.0) * z
    } else {
        u * z
    }
}

/// `sum_i w_i rho_u(y_i - x_i'beta)`.
pub fn wqr_objective(x: &DesignMatrix, y: &[f64], u: f64, w: &WeightVector, beta: &[f64]) -> f64 {
    let w = w.as_slice();
    (0..x.rows())
        .filter(|&i| w[i] > 0.0)
        .map(|i| w[i] * rho(y[i] - super::design::dot(x.row(i), beta), u))
        .sum()
}

/// Solver bookkeeping, reported by `solve_wqr_detailed`.
#[derive(Debug, Clone, PartialEq)]
pub struct QrFit {
    pub beta: Vec<f64>,
    pub objective: f64,
    pub ipm_iterations: usize,
    pub pivots: usize,
}

/// Weighted quantile regression coefficients at quantile index `u`.
pub fn solve_wqr(x: &DesignMatrix, y: &[f64], u: f64, w: &WeightVector) -> Result<Vec<f64>> {
    solve_wqr_detailed(x, y, u, w).map(|f| f.beta)
}

pub fn solve_wqr_detailed(
    x: &DesignMatrix,
    y: &[f64],
    u: f64,
    w: &WeightVector,
) -> Result<QrFit> {
    validate_quantile(u)?;
    let n = x.rows();
    if y.len() != n || w.len() != n {
        return Err(CqivError::InvalidArgument(format!(
            "quantile regression inputs disagree in length: X has {n} rows, y {}, w {}",
            y.len(),
            w.len()
        )));
    }
    if let Some(v) = y.iter().find(|v| !v.is_finite()) {
        return Err(CqivError::InvalidArgument(format!("non-finite outcome {v}")));
    }
    let wv = w.as_slice();
    let rows: Vec<usize> = (0..n).filter(|&i| wv[i] > 0.0).collect();
    if rows.is_empty() {
        return Err(CqivError::EmptySample);
    }
    ensure_full_rank(x, wv)?;

    let p = x.cols();
    let m = rows.len();
    let mut xs = Vec::with_capacity(m * p);
    let mut ys = Vec::with_capacity(m);
    for &i in &rows {
        xs.extend(x.row(i).iter().map(|v| wv[i] * v));
        ys.push(wv[i] * y[i]);
    }
    let prob = Problem { xs: &xs, ys: &ys, m, p, u };

    let (ipm_beta, ipm_iterations) = prob.interior_point();
    let ipm_obj = ipm_beta.as_ref().map(|b| prob.objective(b));
    let start = ipm_beta.clone().unwrap_or_else(|| prob.least_squares());
    let polished = prob.polish(&start);

    let (beta, pivots) = match (polished, ipm_beta) {
        (Some((b, piv)), Some(ib)) => {
            let pobj = prob.objective(&b);
            if pobj <= ipm_obj.unwrap() * (1.0 + 1e-12) + 1e-300 {
                (b, piv)
            } else {
                (ib, piv)
            }
        }
        (Some((b, piv)), None) => (b, piv),
        (None, Some(ib)) => (ib, 0),
        (None, None) => {
            return Err(CqivError::Internal(
                "quantile regression solver failed to produce a solution".into(),
            ))
        }
    };
    let objective = prob.objective(&beta);
    Ok(QrFit { beta, objective, ipm_iterations, pivots })
}

struct Problem<'a> {
    xs: &'a [f64],
    ys: &'a [f64],
    m: usize,
    p: usize,
    u: f64,
}

const IPM_MAX_IT: usize = 100;
const IPM_STEP: f64 = 0.9995;

impl Problem<'_> {
    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.xs[i * self.p..(i + 1) * self.p]
    }

    #[inline]
    fn fitted(&self, i: usize, beta: &[f64]) -> f64 {
        self.row(i).iter().zip(beta).map(|(a, b)| a * b).sum()
    }

    fn objective(&self, beta: &[f64]) -> f64 {
        (0..self.m).map(|i| rho(self.ys[i] - self.fitted(i, beta), self.u)).sum()
    }

    fn least_squares(&self) -> Vec<f64> {
        let p = self.p;
        let mut g = vec![0.0; p * p];
        self.gram_into(&vec![1.0; self.m], &mut g);
        let mut b = vec![0.0; p];
        self.xt_into(self.ys, &mut b);
        if cholesky_in_place(&mut g, p) {
            cholesky_solve(&g, p, &mut b);
            b
        } else {
            vec![0.0; p]
        }
    }

    /// `G = sum_i q_i x_i x_i'` into the lower triangle of `g` (row-major).
    fn gram_into(&self, q: &[f64], g: &mut [f64]) {
        let p = self.p;
        g.iter_mut().for_each(|v| *v = 0.0);
        for (r, &qi) in self.xs.chunks_exact(p).zip(q) {
            for a in 0..p {
                let ra = qi * r[a];
                let ga = &mut g[a * p..a * p + a + 1];
                for (gab, rb) in ga.iter_mut().zip(r) {
                    *gab += ra * rb;
                }
            }
        }
    }

    /// `out = sum_i c_i x_i`.
    fn xt_into(&self, c: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (r, &ci) in self.xs.chunks_exact(self.p).zip(c) {
            for (o, xa) in out.iter_mut().zip(r) {
                *o += ci * xa;
            }
        }
    }

    /// Frisch-Newton interior point on the bounded dual. Returns the
    /// coefficient estimate (negated dual multipliers) and iteration count.
    fn interior_point(&self) -> (Option<Vec<f64>>, usize) {
        let (m, p, u) = (self.m, self.p, self.u);
        let scale: f64 = 1.0 + self.ys.iter().map(|v| v.abs()).sum::<f64>();
        let tol = 1e-6 * scale;

        // b = X'a0 with a0 = (1 - u) 1
        let mut bvec = vec![0.0; p];
        self.xt_into(&vec![1.0 - u; m], &mut bvec);
        let mut x = vec![1.0 - u; m];
        let mut s = vec![u; m];
        let mut y: Vec<f64> = self.least_squares().iter().map(|v| -v).collect();
        let mut z = vec![0.0; m];
        let mut w = vec![0.0; m];
        for i in 0..m {
            let mut r = -self.ys[i] - self.fitted(i, &y);
            if r == 0.0 {
                r = 0.001;
            }
            z[i] = r.max(0.0);
            w[i] = z[i] - r;
        }

        let gap = |x: &[f64], y: &[f64], w: &[f64]| -> f64 {
            let cx: f64 = -self.ys.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            let yb: f64 = y.iter().zip(&bvec).map(|(a, b)| a * b).sum();
            cx - yb + w.iter().sum::<f64>()
        };

        let mut it = 0;
        let mut q = vec![0.0; m];
        let mut r = vec![0.0; m];
        let mut tmp = vec![0.0; m];
        let mut dx = vec![0.0; m];
        let mut dz = vec![0.0; m];
        let mut dw = vec![0.0; m];
        let mut xi = vec![0.0; m];
        let mut dxdz = vec![0.0; m];
        let mut dsdw = vec![0.0; m];
        let mut xinv = vec![0.0; m];
        let mut sinv = vec![0.0; m];
        let mut zinv = vec![0.0; m];
        let mut winv = vec![0.0; m];
        let mut g = vec![0.0; p * p];
        let mut rhs = vec![0.0; p];
        let mut dy = vec![0.0; p];
        let mut extra = vec![0.0; p];
        while gap(&x, &y, &w) > tol && it < IPM_MAX_IT {
            it += 1;
            for i in 0..m {
                xinv[i] = 1.0 / x[i];
                sinv[i] = 1.0 / s[i];
                q[i] = 1.0 / (z[i] * xinv[i] + w[i] * sinv[i]);
                r[i] = z[i] - w[i];
                tmp[i] = q[i] * r[i];
            }
            self.gram_into(&q, &mut g);
            if !cholesky_in_place(&mut g, p) {
                break;
            }
            self.xt_into(&tmp, &mut rhs);
            dy.copy_from_slice(&rhs);
            cholesky_solve(&g, p, &mut dy);
            // predictor: -dz/z = dx/x + 1 and -dw/w = 1 - dx/s
            let (mut tp, mut td) = (0.0f64, 0.0f64);
            for i in 0..m {
                dx[i] = q[i] * (self.fitted(i, &dy) - r[i]);
                let a = dx[i] * xinv[i];
                let b = dx[i] * sinv[i];
                dz[i] = -z[i] * (a + 1.0);
                dw[i] = -w[i] * (1.0 - b);
                tp = tp.max(-a).max(b);
                td = td.max(a + 1.0).max(1.0 - b);
            }
            let (mut fp, mut fd) = (step_length(tp), step_length(td));

            if fp.min(fd) < 1.0 {
                let mut mu = 0.0;
                let mut gg = 0.0;
                for i in 0..m {
                    mu += z[i] * x[i] + w[i] * s[i];
                    gg += (z[i] + fd * dz[i]) * (x[i] + fp * dx[i])
                        + (w[i] + fd * dw[i]) * (s[i] - fp * dx[i]);
                }
                mu = mu * (gg / mu).powi(3) / (2.0 * m as f64);

                for i in 0..m {
                    dxdz[i] = dx[i] * dz[i];
                    dsdw[i] = -dx[i] * dw[i];
                    xi[i] = mu * (1.0 / x[i] - 1.0 / s[i]);
                    tmp[i] = q[i] * (dxdz[i] - dsdw[i] - xi[i]);
                }
                self.xt_into(&tmp, &mut extra);
                for (a, b) in rhs.iter_mut().zip(&extra) {
                    *a += b;
                }
                dy.copy_from_slice(&rhs);
                cholesky_solve(&g, p, &mut dy);
                let (mut tp, mut td) = (0.0f64, 0.0f64);
                for i in 0..m {
                    zinv[i] = 1.0 / z[i];
                    winv[i] = 1.0 / w[i];
                }
                for i in 0..m {
                    let (xi_, si_) = (xinv[i], sinv[i]);
                    dx[i] = q[i] * (self.fitted(i, &dy) + xi[i] - r[i] - dxdz[i] + dsdw[i]);
                    dz[i] = mu * xi_ - z[i] - xi_ * z[i] * dx[i] - dxdz[i];
                    dw[i] = mu * si_ - w[i] + si_ * w[i] * dx[i] - dsdw[i];
                    tp = tp.max(-dx[i] * xi_).max(dx[i] * si_);
                    td = td.max(-dz[i] * zinv[i]).max(-dw[i] * winv[i]);
                }
                fp = step_length(tp);
                fd = step_length(td);
            }

            for i in 0..m {
                x[i] += fp * dx[i];
                s[i] -= fp * dx[i];
                w[i] += fd * dw[i];
                z[i] += fd * dz[i];
            }
            for (yk, dk) in y.iter_mut().zip(&dy) {
                *yk += fd * dk;
            }
            if y.iter().any(|v| !v.is_finite()) {
                return (None, it);
            }
        }
        (Some(y.iter().map(|v| -v).collect()), it)
    }

    /// Moves from `beta` to an optimal basic solution.
    fn polish(&self, beta: &[f64]) -> Option<(Vec<f64>, usize)> {
        let (m, p, u) = (self.m, self.p, self.u);
        let mut basis = self.initial_basis(beta)?;
        let max_pivots = 50 * p + m;
        let mut pivots = 0;
        let mut in_basis = vec![false; m];
        let mut a = vec![0.0; m * p];
        let mut res = vec![0.0; m];
        loop {
            in_basis.iter_mut().for_each(|v| *v = false);
            for &h in &basis {
                in_basis[h] = true;
            }
            let bmat = DMatrix::from_fn(p, p, |r, c| self.row(basis[r])[c]);
            let yb = DVector::from_iterator(p, basis.iter().map(|&h| self.ys[h]));
            let beta = solve_square(bmat.clone(), &yb)?;
            let binv = bmat.try_inverse()?;
            let beta: Vec<f64> = beta.iter().copied().collect();
            if pivots >= max_pivots {
                return Some((beta, pivots));
            }

            // a_i = x_i' B^{-1}; residuals off the basis
            for i in 0..m {
                let xi = self.row(i);
                for j in 0..p {
                    let mut acc = 0.0;
                    for k in 0..p {
                        acc += xi[k] * binv[(k, j)];
                    }
                    a[i * p + j] = acc;
                }
                res[i] = if in_basis[i] { 0.0 } else { self.ys[i] - self.fitted(i, &beta) };
            }

            let zero = |i: usize| {
                let fit = self.ys[i] - res[i];
                res[i].abs() <= 1e-11 * (self.ys[i].abs() + fit.abs())
            };

            // Directional derivatives along the 2p edges
            let mut best: Option<(usize, f64, f64)> = None;
            for j in 0..p {
                let mut g = 0.0;
                let mut deg_plus = 0.0;
                let mut deg_minus = 0.0;
                let mut size = 1.0;
                for i in 0..m {
                    if in_basis[i] {
                        continue;
                    }
                    let aij = a[i * p + j];
                    size += aij.abs();
                    if zero(i) {
                        deg_plus += rho(-aij, u);
                        deg_minus += rho(aij, u);
                    } else {
                        let psi = if res[i] < 0.0 { u - 1.0 } else { u };
                        g -= psi * aij;
                    }
                }
                let tol = 1e-11 * size;
                for (sigma, f) in [(1.0, g + deg_plus + (1.0 - u)), (-1.0, -g + deg_minus + u)] {
                    if f < -tol && best.is_none_or(|b| f < b.2) {
                        best = Some((j, sigma, f));
                    }
                }
            }
            let Some((j, sigma, slope0)) = best else {
                return Some((beta, pivots));
            };

            // Exact line search along d = sigma B^{-1} e_j
            let mut bps: Vec<(f64, f64, usize)> = (0..m)
                .filter(|&i| !in_basis[i] && !zero(i))
                .filter_map(|i| {
                    let ai = sigma * a[i * p + j];
                    if ai == 0.0 {
                        return None;
                    }
                    let t = res[i] / ai;
                    (t > 0.0).then_some((t, ai.abs(), i))
                })
                .collect();
            bps.sort_by(|l, r| l.0.total_cmp(&r.0).then(l.2.cmp(&r.2)));
            let mut slope = slope0;
            let mut entering = None;
            for (_, inc, i) in bps {
                slope += inc;
                if slope >= 0.0 {
                    entering = Some(i);
                    break;
                }
            }
            let k = entering?;
            basis[j] = k;
            pivots += 1;
        }
    }

    /// `p` linearly independent observations with the smallest absolute
    /// residuals at `beta`.
    fn initial_basis(&self, beta: &[f64]) -> Option<Vec<usize>> {
        let p = self.p;
        let mut order: Vec<(f64, usize)> =
            (0..self.m).map(|i| ((self.ys[i] - self.fitted(i, beta)).abs(), i)).collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        let head = (4 * p).min(order.len());
        if head < order.len() {
            order.select_nth_unstable_by(head, cmp);
            order[..head].sort_by(cmp);
            if let Some(b) = independent_rows(self, &order[..head]) {
                return Some(b);
            }
        }
        order.sort_by(cmp);
        independent_rows(self, &order)
    }
}

/// The first `p` linearly independent rows in `order`.
fn independent_rows(prob: &Problem<'_>, order: &[(f64, usize)]) -> Option<Vec<usize>> {
    let p = prob.p;
    let mut chosen = Vec::with_capacity(p);
    let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(p);
    for &(_, i) in order {
        let mut v = prob.row(i).to_vec();
        let n0 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n0 == 0.0 {
            continue;
        }
        for _ in 0..2 {
            for q in &ortho {
                let c: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(vi, qi)| *vi -= c * qi);
            }
        }
        let n1 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n1 > 1e-8 * n0 {
            v.iter_mut().for_each(|a| *a /= n1);
            ortho.push(v);
            chosen.push(i);
            if chosen.len() == p {
                return Some(chosen);
            }
        }
    }
    None
}

fn step_length(t: f64) -> f64 {
    if t > 0.0 {
        (IPM_STEP / t).min(1.0)
    } else {
        1.0
    }
}

/// In-place Cholesky of the lower triangle of a row-major `p x p` matrix.
fn cholesky_in_place(g: &mut [f64], p: usize) -> bool {
    for j in 0..p {
        let mut d = g[j * p + j];
        for k in 0..j {
            d -= g[j * p + k] * g[j * p + k];
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        g[j * p + j] = d;
        for i in j + 1..p {
            let mut v = g[i * p + j];
            for k in 0..j {
                v -= g[i * p + k] * g[j * p + k];
            }
            g[i * p + j] = v / d;
        }
    }
    true
}

fn cholesky_solve(l: &[f64], p: usize, b: &mut [f64]) {
    for i in 0..p {
        let mut v = b[i];
        for k in 0..i {
            v -= l[i * p + k] * b[k];
        }
        b[i] = v / l[i * p + i];
    }
    for i in (0..p).rev() {
        let mut v = b[i];
        for k in i + 1..p {
            v -= l[k * p + i] * b[k];
        }
        b[i] = v / l[i * p + i];
    }
}
