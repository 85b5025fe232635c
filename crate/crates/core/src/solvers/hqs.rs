//! Half-quadratic splitting: alternate an exact u-step (solved by CG) with a
//! closed-form soft-thresholding z-step.

use super::{
    check_per_level, coupling_term, primal_residual, sparsity_term, CgInit, CgInitContext, CgInitializer,
    DataTerm, SolverTrace, TraceRow, DEFAULT_CG_MAX_ITERS, DEFAULT_CG_TOL,
};
use crate::error::{Error, Result};
use crate::framelet::{analysis_raw, soft_threshold_in_place, synthesis_raw, FrameletCoeffs, FrameletSystem};
use crate::grid::{ImageGrid, Sinogram};
use crate::projector::ProjectionGeometry;
use crate::solvers::cg_solve;

#[derive(Debug, Clone, PartialEq)]
pub struct HqsConfig {
    /// Sparsity weight per framelet level (`lambda_l >= 0`).
    pub lambdas: Vec<f64>,
    /// Coupling weight per framelet level (`gamma_l > 0`).
    pub gammas: Vec<f64>,
    pub outer_iters: usize,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    pub cg_init: CgInit,
}

impl HqsConfig {
    pub fn new(lambdas: Vec<f64>, gammas: Vec<f64>, outer_iters: usize) -> Self {
        HqsConfig {
            lambdas,
            gammas,
            outer_iters,
            cg_tol: DEFAULT_CG_TOL,
            cg_max_iters: DEFAULT_CG_MAX_ITERS,
            cg_init: CgInit::WarmStart,
        }
    }

    /// Same `lambda` and `gamma` on every level.
    pub fn uniform(levels: usize, lambda: f64, gamma: f64, outer_iters: usize) -> Self {
        Self::new(vec![lambda; levels], vec![gamma; levels], outer_iters)
    }

    pub fn validate(&self, levels: usize) -> Result<()> {
        check_per_level("lambda", &self.lambdas, levels, true)?;
        check_per_level("gamma", &self.gammas, levels, false)?;
        if self.outer_iters == 0 {
            return Err(Error::Domain("HQS needs at least one outer iteration".into()));
        }
        if !(self.cg_tol > 0.0) || self.cg_max_iters == 0 {
            return Err(Error::Domain("CG tolerance and iteration cap must be positive".into()));
        }
        Ok(())
    }

    pub fn thresholds(&self) -> Vec<f64> {
        self.lambdas.iter().zip(&self.gammas).map(|(l, g)| l / g).collect()
    }
}

/// HQS with the initialiser named in `cfg`.
pub fn hqs_reconstruct(
    sino: &Sinogram,
    geom: &ProjectionGeometry,
    system: &FrameletSystem,
    cfg: &HqsConfig,
    u0: Option<&ImageGrid>,
) -> Result<(ImageGrid, SolverTrace)> {
    hqs_reconstruct_with(sino, geom, system, cfg, u0, &cfg.cg_init)
}

/// HQS with a caller-supplied CG initialiser.
///
/// Without `u0` the start is the scaled back projection when `cfg.cg_init`
/// is [`CgInit::Backprojection`] and the zero image otherwise; `z0` is the
/// thresholded analysis of the start.
pub fn hqs_reconstruct_with(
    sino: &Sinogram,
    geom: &ProjectionGeometry,
    system: &FrameletSystem,
    cfg: &HqsConfig,
    u0: Option<&ImageGrid>,
    initializer: &dyn CgInitializer,
) -> Result<(ImageGrid, SolverTrace)> {
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
    let thresholds = cfg.thresholds();
    // Each level satisfies W_l^T W_l = I / L, so the regulariser part of the
    // u-step operator is a multiple of the identity.
    let shift: f64 = cfg.gammas.iter().sum::<f64>() / levels as f64;

    let mut wu = analysis_raw(&u, n, system)?;
    let mut z = wu.clone();
    soft_threshold_in_place(&mut z, &thresholds, system.skip_lowpass)?;

    let objective = |u: &[f64], wu: &FrameletCoeffs, z: &FrameletCoeffs| {
        data.fidelity(u) + sparsity_term(z, system, &cfg.lambdas) + coupling_term(wu, z, &cfg.gammas)
    };
    let mut trace = SolverTrace::default();
    trace.rows.push(TraceRow {
        iter: 0,
        objective: objective(&u, &wu, &z),
        primal_residual: primal_residual(&wu, &z),
        cg_iters: 0,
    });

    let apply = |x: &[f64], out: &mut [f64]| data.apply_normal(x, shift, out);
    for k in 1..=cfg.outer_iters {
        let mut weighted = z.clone();
        for (l, g) in cfg.gammas.iter().enumerate() {
            weighted.level_mut(l).iter_mut().for_each(|v| *v *= g);
        }
        let mut rhs = synthesis_raw(&weighted, system)?;
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
            .map_err(|e| Error::Numerical(format!("HQS outer iteration {k}: {e}")))?;
        u = out.solution;

        wu = analysis_raw(&u, n, system)?;
        z = wu.clone();
        soft_threshold_in_place(&mut z, &thresholds, system.skip_lowpass)?;
        trace.rows.push(TraceRow {
            iter: k,
            objective: objective(&u, &wu, &z),
            primal_residual: primal_residual(&wu, &z),
            cg_iters: out.iterations,
        });
    }
    Ok((ImageGrid::new(n, u)?, trace))
}
