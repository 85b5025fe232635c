//! Simultaneous algebraic reconstruction technique, one angle per sub-iteration.

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, Sinogram};
use crate::projector::ProjectionGeometry;

/// Normalisation sums below this are treated as empty rays/pixels.
pub const SART_EPS: f64 = 1e-12;

/// Runs `iters` SART sweeps over the sinogram rows in ascending angle order:
///
/// ```text
/// u <- u + relax * C_k^-1 A_k^T R_k^-1 (f_k - A_k u)
/// ```
///
/// where `R_k` and `C_k` are the row and column sums of the angle-`k` block.
pub fn sart(
    sino: &Sinogram,
    geom: &ProjectionGeometry,
    iters: usize,
    relax: f64,
    init: Option<&ImageGrid>,
) -> Result<ImageGrid> {
    let mut u = match init {
        Some(img) => {
            if img.size() != geom.image_size {
                return Err(Error::Shape(format!(
                    "initial image side {} does not match geometry {}",
                    img.size(),
                    geom.image_size
                )));
            }
            img.data().to_vec()
        }
        None => vec![0.0; geom.num_pixels()],
    };
    sart_in_place(sino, geom, iters, relax, &mut u, |_, _| {})?;
    ImageGrid::new(geom.image_size, u)
}

/// SART on a raw buffer, calling `after_sweep(iter, &u)` after every sweep.
pub fn sart_in_place(
    sino: &Sinogram,
    geom: &ProjectionGeometry,
    iters: usize,
    relax: f64,
    u: &mut [f64],
    mut after_sweep: impl FnMut(usize, &[f64]),
) -> Result<()> {
    if !(relax > 0.0 && relax < 2.0) {
        return Err(Error::Domain(format!("relaxation {relax} outside (0, 2)")));
    }
    if iters == 0 {
        return Err(Error::Domain("SART needs at least one iteration".into()));
    }
    if sino.num_rows() == 0 {
        return Err(Error::Domain("SART needs at least one measured angle".into()));
    }
    if sino.detectors() != geom.detectors {
        return Err(Error::Shape(format!(
            "sinogram has {} detectors, geometry {}",
            sino.detectors(),
            geom.detectors
        )));
    }
    geom.check_angles(sino.angles())?;
    let d = geom.detectors;
    let npix = geom.num_pixels();

    let blocks: Vec<(Vec<f64>, Vec<f64>)> = sino
        .angles()
        .iter()
        .map(|&k| {
            let mut rows = vec![0.0; d];
            let mut cols = vec![0.0; npix];
            for (m, rs) in rows.iter_mut().enumerate() {
                geom.for_each_ray_weight(k, m, |p, w| {
                    *rs += w;
                    cols[p] += w;
                });
            }
            (rows, cols)
        })
        .collect();

    let mut proj = vec![0.0; d];
    let mut update = vec![0.0; npix];
    for it in 0..iters {
        for (i, &k) in sino.angles().iter().enumerate() {
            let (rows, cols) = &blocks[i];
            geom.project_angle_into(u, k, &mut proj);
            for ((p, f), r) in proj.iter_mut().zip(sino.row(i)).zip(rows) {
                *p = if *r > SART_EPS { (f - *p) / r } else { 0.0 };
            }
            update.iter_mut().for_each(|v| *v = 0.0);
            geom.accumulate_back_angle(&proj, k, &mut update);
            for ((ui, up), c) in u.iter_mut().zip(&update).zip(cols) {
                if *c > SART_EPS {
                    *ui += relax * up / c;
                }
            }
        }
        after_sweep(it, u);
    }
    Ok(())
}
