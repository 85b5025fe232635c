//! Reconstruction algorithms: SART, conjugate gradients, half-quadratic
//! splitting and ADMM over the framelet-sparsity model
//!
//! ```text
//! min_{u,z} 1/2 |A u - f|^2 + sum_l ( lambda_l |z_l|_1 + gamma_l/2 |W_l u - z_l|^2 )
//! ```

mod admm;
mod cg;
mod hqs;
mod sart;

use std::fs;
use std::path::Path;

pub use admm::{admm_reconstruct, AdmmConfig, AdmmState};
pub use cg::{cg_solve, CgOutcome, DEFAULT_CG_MAX_ITERS, DEFAULT_CG_TOL};
pub use hqs::{hqs_reconstruct, hqs_reconstruct_with, HqsConfig};
pub use sart::{sart, sart_in_place, SART_EPS};

use crate::error::{Error, Result};
use crate::framelet::{analysis_raw, FrameletCoeffs, FrameletSystem};
use crate::grid::{ImageGrid, Sinogram};
use crate::projector::ProjectionGeometry;
use crate::vecops::{dot, l1_norm, norm};

/// How the CG solve of each u-subproblem is started.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CgInit {
    Zeros,
    /// Previous outer iterate.
    WarmStart,
    /// Back projection `A^T f`, scaled by an exact line search.
    Backprojection,
}

impl std::str::FromStr for CgInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zeros" => Ok(CgInit::Zeros),
            "warm_start" | "warm" => Ok(CgInit::WarmStart),
            "backprojection" => Ok(CgInit::Backprojection),
            other => Err(Error::Domain(format!("unknown CG initialisation {other:?}"))),
        }
    }
}

/// Inputs available when choosing a CG starting point.
pub struct CgInitContext<'a> {
    /// Outer iteration, starting at 1.
    pub outer_iter: usize,
    /// Current image estimate.
    pub current: &'a [f64],
    /// Right-hand side of the u-subproblem.
    pub rhs: &'a [f64],
    /// `A^T f`.
    pub backprojection: &'a [f64],
    /// The u-subproblem operator.
    pub apply: &'a dyn Fn(&[f64], &mut [f64]),
}

/// Extension point for CG initialisation, e.g. a learned predictor.
pub trait CgInitializer: Sync {
    fn initial_guess(&self, ctx: &CgInitContext<'_>) -> Vec<f64>;
}

impl CgInitializer for CgInit {
    fn initial_guess(&self, ctx: &CgInitContext<'_>) -> Vec<f64> {
        match self {
            CgInit::Zeros => vec![0.0; ctx.rhs.len()],
            CgInit::WarmStart => ctx.current.to_vec(),
            CgInit::Backprojection => {
                let p = ctx.backprojection;
                let mut bp = vec![0.0; p.len()];
                (ctx.apply)(p, &mut bp);
                let curv = dot(p, &bp);
                let alpha = if curv > 0.0 { dot(ctx.rhs, p) / curv } else { 0.0 };
                p.iter().map(|v| alpha * v).collect()
            }
        }
    }
}

/// The forward operator restricted to a sinogram's angles, plus `A^T f`.
pub(crate) struct DataTerm<'a> {
    geom: &'a ProjectionGeometry,
    sino: &'a Sinogram,
    pub atf: Vec<f64>,
}

impl<'a> DataTerm<'a> {
    pub fn new(sino: &'a Sinogram, geom: &'a ProjectionGeometry) -> Result<Self> {
        if sino.detectors() != geom.detectors {
            return Err(Error::Shape(format!(
                "sinogram has {} detectors, geometry {}",
                sino.detectors(),
                geom.detectors
            )));
        }
        geom.check_angles(sino.angles())?;
        let mut atf = vec![0.0; geom.num_pixels()];
        geom.back_into(sino.data(), sino.angles(), &mut atf);
        Ok(DataTerm { geom, sino, atf })
    }

    pub fn forward(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.sino.data().len()];
        self.geom.forward_into(u, self.sino.angles(), &mut out);
        out
    }

    /// `out = A^T A x + shift * x`
    pub fn apply_normal(&self, x: &[f64], shift: f64, out: &mut [f64]) {
        let ax = self.forward(x);
        self.geom.back_into(&ax, self.sino.angles(), out);
        for (o, xi) in out.iter_mut().zip(x) {
            *o += shift * xi;
        }
    }

    /// `1/2 |A u - f|^2`
    pub fn fidelity(&self, u: &[f64]) -> f64 {
        let au = self.forward(u);
        0.5 * au.iter().zip(self.sino.data()).map(|(a, f)| (a - f).powi(2)).sum::<f64>()
    }

    /// Least-squares optimal multiple of `A^T f`, used as a coarse start.
    pub fn scaled_backprojection(&self) -> Vec<f64> {
        let ap = self.forward(&self.atf);
        let denom = dot(&ap, &ap);
        let alpha = if denom > 0.0 { dot(&self.atf, &self.atf) / denom } else { 0.0 };
        self.atf.iter().map(|v| alpha * v).collect()
    }
}

/// One row of a solver trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub primal_residual: f64,
    pub cg_iters: usize,
}

/// Per-iteration record of an HQS or ADMM run; row 0 describes the start point.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolverTrace {
    pub rows: Vec<TraceRow>,
}

impl SolverTrace {
    pub const CSV_HEADER: &'static str = "iter,objective,primal_residual,cg_iters";

    pub fn objectives(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.objective).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", r.iter, r.objective, r.primal_residual, r.cg_iters));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn check_per_level(name: &str, values: &[f64], levels: usize, allow_zero: bool) -> Result<()> {
    if values.len() != levels {
        return Err(Error::Shape(format!("{} {name} values for {levels} levels", values.len())));
    }
    for v in values {
        let ok = if allow_zero { *v >= 0.0 } else { *v > 0.0 };
        if !(ok && v.is_finite()) {
            return Err(Error::Domain(format!("invalid {name} value {v}")));
        }
    }
    Ok(())
}

/// `sum_l lambda_l |z_l|_1` over the penalised subbands.
fn sparsity_term(z: &FrameletCoeffs, system: &FrameletSystem, lambdas: &[f64]) -> f64 {
    let mut total = 0.0;
    for (level, lambda) in lambdas.iter().enumerate() {
        for band in 0..crate::framelet::SUBBANDS {
            if system.is_penalized(band) {
                total += lambda * l1_norm(z.plane(level, band));
            }
        }
    }
    total
}

/// `sum_l gamma_l/2 |W_l u - z_l|^2`, given `wu = W u`.
fn coupling_term(wu: &FrameletCoeffs, z: &FrameletCoeffs, gammas: &[f64]) -> f64 {
    gammas
        .iter()
        .enumerate()
        .map(|(l, g)| {
            let d: f64 = wu.level(l).iter().zip(z.level(l)).map(|(a, b)| (a - b).powi(2)).sum();
            0.5 * g * d
        })
        .sum()
}

fn primal_residual(wu: &FrameletCoeffs, z: &FrameletCoeffs) -> f64 {
    norm(&crate::vecops::sub(wu.data(), z.data()))
}

/// Value of the sparse-framelet objective at `(u, z)`.
pub fn objective_value(
    u: &ImageGrid,
    z: &FrameletCoeffs,
    sino: &Sinogram,
    geom: &ProjectionGeometry,
    system: &FrameletSystem,
    lambdas: &[f64],
    gammas: &[f64],
) -> Result<f64> {
    let levels = system.levels();
    check_per_level("lambda", lambdas, levels, true)?;
    check_per_level("gamma", gammas, levels, true)?;
    if u.size() != geom.image_size || z.size() != u.size() || z.levels() != levels {
        return Err(Error::Shape("image, coefficients and geometry disagree".into()));
    }
    let data = DataTerm::new(sino, geom)?;
    let wu = analysis_raw(u.data(), u.size(), system)?;
    Ok(data.fidelity(u.data()) + sparsity_term(z, system, lambdas) + coupling_term(&wu, z, gammas))
}

/// A reconstruction operator `f -> u` with fixed hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Reconstructor {
    Sart { iters: usize, relax: f64 },
    Hqs { system: FrameletSystem, cfg: HqsConfig },
    Admm { system: FrameletSystem, cfg: AdmmConfig },
}

impl Reconstructor {
    /// Reconstructs from `sino`. With no measured rows the result is the zero image.
    pub fn reconstruct(&self, sino: &Sinogram, geom: &ProjectionGeometry) -> Result<ImageGrid> {
        if sino.num_rows() == 0 {
            return ImageGrid::zeros(geom.image_size);
        }
        match self {
            Reconstructor::Sart { iters, relax } => sart(sino, geom, *iters, *relax, None),
            Reconstructor::Hqs { system, cfg } => Ok(hqs_reconstruct(sino, geom, system, cfg, None)?.0),
            Reconstructor::Admm { system, cfg } => Ok(admm_reconstruct(sino, geom, system, cfg, None)?.0),
        }
    }
}
