#![allow(dead_code)]

use ctlab::framelet::{analysis, FrameletSystem};
use ctlab::projector::{forward_project, ProjectionGeometry};
use ctlab::ImageGrid;
use nalgebra::DMatrix;

/// System matrix assembled column by column from unit-pixel projections.
pub fn dense_projector(geom: &ProjectionGeometry, angles: &[usize]) -> DMatrix<f64> {
    let npix = geom.num_pixels();
    let rows = angles.len() * geom.detectors;
    let mut a = DMatrix::zeros(rows, npix);
    for j in 0..npix {
        let mut e = vec![0.0; npix];
        e[j] = 1.0;
        let img = ImageGrid::new(geom.image_size, e).unwrap();
        let col = forward_project(&img, geom, angles).unwrap();
        for (r, v) in col.data().iter().enumerate() {
            a[(r, j)] = *v;
        }
    }
    a
}

/// Dense framelet analysis matrix, rows ordered like `FrameletCoeffs::data`.
pub fn dense_framelet(n: usize, system: &FrameletSystem) -> DMatrix<f64> {
    let npix = n * n;
    let rows = system.levels() * 9 * npix;
    let mut w = DMatrix::zeros(rows, npix);
    for j in 0..npix {
        let mut e = vec![0.0; npix];
        e[j] = 1.0;
        let z = analysis(&ImageGrid::new(n, e).unwrap(), system).unwrap();
        for (r, v) in z.data().iter().enumerate() {
            w[(r, j)] = *v;
        }
    }
    w
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
