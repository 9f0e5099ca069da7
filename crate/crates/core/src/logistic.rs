//! ℓ₁-penalized logistic regression for the propensity link, plus the
//! unpenalized refit used after selection.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lasso::{soft_threshold, LassoFit, PenaltyConfig};
use crate::regression::check_finite;

#[inline]
pub fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^u) without overflow.
#[inline]
fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

fn check_binary(d: &DVector<f64>) -> Result<()> {
    if let Some(i) = d.iter().position(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidArgument(format!("treatment entry {i} is not 0/1")));
    }
    let ones = d.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == d.len() {
        return Err(Error::Separation);
    }
    Ok(())
}

/// Average negative log-likelihood plus (λ/n) Σ Ψ_j |β_j| over penalized columns.
pub fn logistic_objective(
    x: &DMatrix<f64>,
    d: &DVector<f64>,
    coef: &DVector<f64>,
    lambda: f64,
    loadings: &DVector<f64>,
    unpenalized: &[usize],
) -> f64 {
    let n = d.len() as f64;
    let eta = x * coef;
    let nll: f64 = eta.iter().zip(d.iter()).map(|(&u, &di)| softplus(u) - di * u).sum();
    let pen: f64 = (0..coef.len())
        .filter(|j| !unpenalized.contains(j))
        .map(|j| loadings[j] * coef[j].abs())
        .sum();
    nll / n + lambda / n * pen
}

/// Coordinate descent on the penalized logistic objective. Each coordinate
/// takes a Newton step when it lowers the objective and falls back to the
/// quadratic majorizer (curvature E_n[x_j²]/4) otherwise.
pub fn logistic_lasso(
    x: &DMatrix<f64>,
    d: &DVector<f64>,
    lambda: f64,
    loadings: &DVector<f64>,
    unpenalized: &[usize],
    tol: f64,
    max_iter: usize,
) -> Result<LassoFit> {
    let (n, p) = x.shape();
    if d.len() != n {
        return Err(Error::Dimension(format!("X has {n} rows but d has {}", d.len())));
    }
    if loadings.len() != p {
        return Err(Error::Dimension("loadings length".into()));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    check_finite("X", x.as_slice())?;
    check_binary(d)?;
    for j in (0..p).filter(|j| !unpenalized.contains(j)) {
        if !(loadings[j] > 0.0) {
            return Err(Error::InvalidArgument(format!("loading for column {j} must be positive")));
        }
    }
    let nf = n as f64;
    let pen: Vec<f64> = (0..p)
        .map(|j| if unpenalized.contains(&j) { 0.0 } else { lambda * loadings[j] / nf })
        .collect();
    let col_sq: Vec<f64> = (0..p).map(|j| x.column(j).norm_squared() / nf).collect();

    let mut coef: DVector<f64> = DVector::zeros(p);
    let mut eta = DVector::zeros(n);
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    let coord_obj = |eta: &DVector<f64>, col: &nalgebra::DVectorView<f64>, delta: f64| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            let u = eta[i] + delta * col[i];
            s += softplus(u) - d[i] * u;
        }
        s / nf
    };

    while iterations < max_iter {
        let mut max_change = 0.0_f64;
        for j in 0..p {
            if col_sq[j] == 0.0 {
                continue;
            }
            let col = x.column(j);
            let mut grad = 0.0;
            let mut curv = 0.0;
            for i in 0..n {
                let m = logistic(eta[i]);
                grad += col[i] * (m - d[i]);
                curv += col[i] * col[i] * m * (1.0 - m);
            }
            grad /= nf;
            curv /= nf;
            let old = coef[j];
            let base = coord_obj(&eta, &col, 0.0) + pen[j] * old.abs();
            let bound = col_sq[j] / 4.0;

            let mut new = old;
            let newton_curv = curv.max(1e-3 * bound);
            let cand = soft_threshold(newton_curv * old - grad, pen[j]) / newton_curv;
            let cand_obj = coord_obj(&eta, &col, cand - old) + pen[j] * cand.abs();
            if cand_obj <= base {
                new = cand;
            } else {
                let mm = soft_threshold(bound * old - grad, pen[j]) / bound;
                let mm_obj = coord_obj(&eta, &col, mm - old) + pen[j] * mm.abs();
                if mm_obj <= base {
                    new = mm;
                }
            }
            let delta = new - old;
            if delta != 0.0 {
                eta.axpy(delta, &col, 1.0);
                coef[j] = new;
            }
            max_change = max_change.max(delta.abs());
        }
        iterations += 1;
        trace.push(logistic_objective(x, d, &coef, lambda, loadings, unpenalized));
        if max_change < tol {
            converged = true;
            break;
        }
    }
    let support = (0..p).filter(|&j| coef[j] != 0.0).collect();
    Ok(LassoFit {
        coef,
        lambda,
        loadings: loadings.clone(),
        support,
        iterations,
        converged,
        objective_trace: trace,
    })
}

/// Feasible logistic Lasso. The score of the average log-likelihood carries
/// no factor 2, so the penalty level is half the least-squares one; loadings
/// iterate on the residuals d - Λ(x'β̂) starting from d - d̄.
pub fn logistic_feasible(
    x: &DMatrix<f64>,
    d: &DVector<f64>,
    config: &PenaltyConfig,
) -> Result<(DVector<f64>, LassoFit)> {
    let (n, p) = x.shape();
    check_binary(d)?;
    let lambda = config.lambda(n, p.max(1))? / 2.0;
    let dbar = d.mean();
    let mut loadings = moments(x, &d.map(|v| v - dbar));
    let mut fit = logistic_lasso(x, d, lambda, &loadings, &config.unpenalized, config.tol, config.max_iter)?;
    for _ in 0..config.loading_iterations {
        let eta = x * &fit.coef;
        let e = DVector::from_iterator(n, (0..n).map(|i| d[i] - logistic(eta[i])));
        let next = moments(x, &e);
        if (&next - &loadings).amax() <= config.tol {
            break;
        }
        loadings = next;
        fit = logistic_lasso(x, d, lambda, &loadings, &config.unpenalized, config.tol, config.max_iter)?;
    }
    Ok((loadings, fit))
}

fn moments(x: &DMatrix<f64>, e: &DVector<f64>) -> DVector<f64> {
    let (n, p) = x.shape();
    let l = DVector::from_iterator(
        p,
        (0..p).map(|j| {
            let s: f64 = (0..n).map(|i| (x[(i, j)] * e[i]).powi(2)).sum();
            (s / n as f64).sqrt()
        }),
    );
    let floor = 1e-8 * l.max().max(1.0);
    l.map(|v| v.max(floor))
}

/// Unpenalized logistic regression by damped Newton iterations. A tiny ridge
/// term keeps the Hessian invertible under (quasi-)separation.
pub fn logistic_mle(x: &DMatrix<f64>, d: &DVector<f64>, max_iter: usize) -> Result<DVector<f64>> {
    let (n, p) = x.shape();
    check_binary(d)?;
    let ridge = 1e-8;
    let obj = |b: &DVector<f64>| -> f64 {
        let eta = x * b;
        let nll: f64 = eta.iter().zip(d.iter()).map(|(&u, &di)| softplus(u) - di * u).sum();
        nll / n as f64 + 0.5 * ridge * b.norm_squared()
    };
    let mut beta = DVector::zeros(p);
    let mut current = obj(&beta);
    for _ in 0..max_iter {
        let eta = x * &beta;
        let m = eta.map(logistic);
        let w = m.map(|v| v * (1.0 - v));
        let grad = x.tr_mul(&(&m - d)) / n as f64 + &beta * ridge;
        let mut xw = x.clone();
        for i in 0..n {
            xw.row_mut(i).scale_mut(w[i]);
        }
        let hess = x.tr_mul(&xw) / n as f64 + DMatrix::identity(p, p) * ridge;
        let step = match hess.cholesky() {
            Some(ch) => ch.solve(&grad),
            None => break,
        };
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-10 {
            let cand = &beta - &step * t;
            let val = obj(&cand);
            if val <= current {
                beta = cand;
                let improvement = current - val;
                current = val;
                accepted = true;
                if improvement < 1e-14 {
                    return Ok(beta);
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted || grad.amax() < 1e-10 {
            break;
        }
    }
    Ok(beta)
}
