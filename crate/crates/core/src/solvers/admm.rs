//! Scaled-form ADMM on `E(u, z; b) = 1/2 |A u - f|^2 + gamma/2 |W u - z + b|^2 + sum_l lambda_l |z_l|_1`.
//!
//! The scaled dual `b` relates to the unscaled multiplier `y = gamma * b`,
//! whose update `y <- y + gamma (W u - z)` is the additive dual step.

use super::{
    check_per_level, coupling_term, primal_residual, sparsity_term, CgInit, CgInitContext, CgInitializer,
    DataTerm, SolverTrace, TraceRow, DEFAULT_CG_MAX_ITERS, DEFAULT_CG_TOL,
};
use crate::error::{Error, Result};
use crate::framelet::{analysis_raw, shrink, synthesis_raw, FrameletCoeffs, FrameletSystem, SUBBANDS};
use crate::grid::{ImageGrid, Sinogram};
use crate::projector::ProjectionGeometry;
use crate::solvers::cg_solve;

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmConfig {
    pub lambdas: Vec<f64>,
    /// Single penalty parameter shared by all levels.
    pub gamma: f64,
    pub iters: usize,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    pub cg_init: CgInit,
}

impl AdmmConfig {
    pub fn new(lambdas: Vec<f64>, gamma: f64, iters: usize) -> Self {
        AdmmConfig {
            lambdas,
            gamma,
            iters,
            cg_tol: DEFAULT_CG_TOL,
            cg_max_iters: DEFAULT_CG_MAX_ITERS,
            cg_init: CgInit::WarmStart,
        }
    }

    pub fn validate(&self, levels: usize) -> Result<()> {
        check_per_level("lambda", &self.lambdas, levels, true)?;
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Domain(format!("invalid ADMM gamma {}", self.gamma)));
        }
        if self.iters == 0 {
            return Err(Error::Domain("ADMM needs at least one iteration".into()));
        }
        if !(self.cg_tol > 0.0) || self.cg_max_iters == 0 {
            return Err(Error::Domain("CG tolerance and iteration cap must be positive".into()));
        }
        Ok(())
    }
}

/// Iterate of the ADMM recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub u: ImageGrid,
    pub z: FrameletCoeffs,
    /// Scaled dual variable.
    pub beta: FrameletCoeffs,
    pub gamma: f64,
}

/// Runs ADMM and returns the image plus a trace whose `primal_residual`
/// column is `|W u^k - z^k|`. The objective column evaluates the split
/// objective with `gamma_l = gamma` on every level.
pub fn admm_reconstruct(
    sino: &Sinogram,
    geom: &ProjectionGeometry,
    system: &FrameletSystem,
    cfg: &AdmmConfig,
    u0: Option<&ImageGrid>,
) -> Result<(ImageGrid, SolverTrace)> {
    let (state, trace) = admm_run(sino, geom, system, cfg, u0, &cfg.cg_init)?;
    Ok((state.u, trace))
}

/// Like [`admm_reconstruct`] but returns the full final state.
pub fn admm_run(
    sino: &Sinogram,
    geom: &ProjectionGeometry,
    system: &FrameletSystem,
    cfg: &AdmmConfig,
    u0: Option<&ImageGrid>,
    initializer: &dyn CgInitializer,
) -> Result<(AdmmState, SolverTrace)> {
    let levels = system.levels();
    cfg.validate(levels)?;
    let n = geom.image_size;
    let data = DataTerm::new(sino, geom)?;
    let mut u = match u0 {
        Some(img) if img.size() != n => {
            return Err(Error::Shape(format!("initial image side {} vs geometry {n}", img.size())))
        }
        Some(img) => img.data().to_vec(),
        None if cfg.cg_init == CgInit::Backprojection => data.scaled_backprojection(),
        None => vec![0.0; n * n],
    };
    let gamma = cfg.gamma;
    let gammas = vec![gamma; levels];
    let thresholds: Vec<f64> = cfg.lambdas.iter().map(|l| l / gamma).collect();

    let mut wu = analysis_raw(&u, n, system)?;
    let mut z = wu.clone();
    let mut beta = FrameletCoeffs::zeros(n, levels);

    let objective = |u: &[f64], wu: &FrameletCoeffs, z: &FrameletCoeffs| {
        data.fidelity(u) + sparsity_term(z, system, &cfg.lambdas) + coupling_term(wu, z, &gammas)
    };
    let mut trace = SolverTrace::default();
    trace.rows.push(TraceRow {
        iter: 0,
        objective: objective(&u, &wu, &z),
        primal_residual: primal_residual(&wu, &z),
        cg_iters: 0,
    });

    // The stacked transform is tight, so gamma W^T W = gamma I.
    let apply = |x: &[f64], out: &mut [f64]| data.apply_normal(x, gamma, out);
    for k in 1..=cfg.iters {
        let mut target = z.clone();
        for (t, b) in target.data_mut().iter_mut().zip(beta.data()) {
            *t = gamma * (*t - b);
        }
        let mut rhs = synthesis_raw(&target, system)?;
        for (r, a) in rhs.iter_mut().zip(&data.atf) {
            *r += a;
        }
        let x0 = initializer.initial_guess(&CgInitContext {
            outer_iter: k,
            current: &u,
            rhs: &rhs,
            backprojection: &data.atf,
            apply: &apply,
        });
        let out = cg_solve(apply, &rhs, &x0, cfg.cg_tol, cfg.cg_max_iters)
            .map_err(|e| Error::Numerical(format!("ADMM iteration {k}: {e}")))?;
        u = out.solution;

        wu = analysis_raw(&u, n, system)?;
        for (level, &thr) in thresholds.iter().enumerate() {
            for band in 0..SUBBANDS {
                let penalised = system.is_penalized(band);
                let w = wu.plane(level, band);
                let b = beta.plane(level, band);
                let zp = z.plane_mut(level, band);
                for i in 0..zp.len() {
                    let v = w[i] + b[i];
                    zp[i] = if penalised { shrink(v, thr) } else { v };
                }
            }
        }
        for ((b, w), zv) in beta.data_mut().iter_mut().zip(wu.data()).zip(z.data()) {
            *b += w - zv;
        }
        trace.rows.push(TraceRow {
            iter: k,
            objective: objective(&u, &wu, &z),
            primal_residual: primal_residual(&wu, &z),
            cg_iters: out.iterations,
        });
    }
    let state = AdmmState { u: ImageGrid::new(n, u)?, z, beta, gamma };
    Ok((state, trace))
}
