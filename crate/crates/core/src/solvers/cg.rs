//! Matrix-free conjugate gradients for symmetric positive definite systems.

use crate::error::{Error, Result};
use crate::vecops::{all_finite, axpy, dot, norm};

pub const DEFAULT_CG_TOL: f64 = 1e-8;
pub const DEFAULT_CG_MAX_ITERS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// Final relative residual `|rhs - A x| / |rhs|` (absolute when `rhs = 0`).
    pub residual: f64,
    pub converged: bool,
    /// Recursively updated relative residual after each iteration, starting
    /// with the initial guess.
    pub residual_history: Vec<f64>,
}

/// Solves `A x = rhs` where `apply(x, out)` writes `A x` into `out`.
///
/// Stops once the relative residual drops to `tol` or after `max_iters`
/// iterations; the outcome reports which happened.
pub fn cg_solve<F>(mut apply: F, rhs: &[f64], init: &[f64], tol: f64, max_iters: usize) -> Result<CgOutcome>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = rhs.len();
    if init.len() != n {
        return Err(Error::Shape(format!("initial guess has {} entries, rhs {}", init.len(), n)));
    }
    if !all_finite(rhs) || !all_finite(init) {
        return Err(Error::Numerical("non-finite input to conjugate gradients".into()));
    }
    let b_norm = norm(rhs);
    let scale = if b_norm > 0.0 { b_norm } else { 1.0 };

    let mut x = init.to_vec();
    let mut ap = vec![0.0; n];
    apply(&x, &mut ap);
    let mut r: Vec<f64> = rhs.iter().zip(&ap).map(|(b, a)| b - a).collect();
    let mut rs = dot(&r, &r);
    let mut history = vec![rs.sqrt() / scale];
    let mut p = r.clone();
    let mut iterations = 0;

    while rs.sqrt() / scale > tol && iterations < max_iters {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !pap.is_finite() {
            return Err(Error::Numerical(format!("non-finite curvature at CG iteration {iterations}")));
        }
        if pap <= 0.0 {
            // Exhausted directions (or an operator that is not positive definite).
            break;
        }
        let alpha = rs / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rs_new = dot(&r, &r);
        iterations += 1;
        if !rs_new.is_finite() {
            return Err(Error::Numerical(format!("non-finite residual at CG iteration {iterations}")));
        }
        history.push(rs_new.sqrt() / scale);
        let beta = rs_new / rs;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rs = rs_new;
    }

    apply(&x, &mut ap);
    let true_res: Vec<f64> = rhs.iter().zip(&ap).map(|(b, a)| b - a).collect();
    let residual = norm(&true_res) / scale;
    if !residual.is_finite() || !all_finite(&x) {
        return Err(Error::Numerical("conjugate gradients produced non-finite values".into()));
    }
    let converged = history.last().copied().unwrap_or(0.0) <= tol;
    Ok(CgOutcome { solution: x, iterations, residual, converged, residual_history: history })
}
