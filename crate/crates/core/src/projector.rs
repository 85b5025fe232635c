//! Parallel-beam Radon transform with Joseph's interpolation and its exact adjoint.
//!
//! Angle index `k` maps to `k * 180 / N` degrees. Each ray is traversed one
//! pixel at a time along the axis it is most aligned with; at every step the
//! ray position is linearly interpolated between the two neighbouring pixels
//! on the other axis. The back projection scatters the very same weights, so
//! it is the matrix transpose of the forward operator up to rounding.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, Sinogram, MIN_IMAGE_SIZE};

/// Angles per parallel back-projection chunk. Fixed so that summation order
/// does not depend on the thread count.
const BACKPROJECT_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionGeometry {
    pub image_size: usize,
    /// Number of angles `N` on the grid over `[0, 180)` degrees.
    pub num_angles: usize,
    pub detectors: usize,
    pub detector_spacing: f64,
    pub pixel_spacing: f64,
}

impl ProjectionGeometry {
    /// Geometry with `detectors = image_size` and unit spacings.
    pub fn new(image_size: usize, num_angles: usize) -> Result<Self> {
        Self::with_detectors(image_size, num_angles, image_size)
    }

    pub fn with_detectors(image_size: usize, num_angles: usize, detectors: usize) -> Result<Self> {
        let g = ProjectionGeometry {
            image_size,
            num_angles,
            detectors,
            detector_spacing: 1.0,
            pixel_spacing: 1.0,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < MIN_IMAGE_SIZE {
            return Err(Error::Domain(format!("image size {} too small", self.image_size)));
        }
        if self.num_angles < 2 {
            return Err(Error::Domain(format!("need at least 2 angles, got {}", self.num_angles)));
        }
        if self.detectors < self.image_size {
            return Err(Error::Domain(format!(
                "{} detectors cannot cover an image of side {}",
                self.detectors, self.image_size
            )));
        }
        if !(self.detector_spacing > 0.0 && self.pixel_spacing > 0.0) {
            return Err(Error::Domain("spacings must be positive".into()));
        }
        Ok(())
    }

    pub fn angle_degrees(&self, k: usize) -> f64 {
        k as f64 * 180.0 / self.num_angles as f64
    }

    pub fn angle_radians(&self, k: usize) -> f64 {
        k as f64 * std::f64::consts::PI / self.num_angles as f64
    }

    /// All angle indices `0..N`.
    pub fn all_angles(&self) -> Vec<usize> {
        (0..self.num_angles).collect()
    }

    pub fn num_pixels(&self) -> usize {
        self.image_size * self.image_size
    }

    pub fn check_angles(&self, angles: &[usize]) -> Result<()> {
        if let Some(&a) = angles.iter().find(|&&a| a >= self.num_angles) {
            return Err(Error::Domain(format!(
                "angle index {a} outside [0, {})",
                self.num_angles
            )));
        }
        if angles.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain("angle indices must be strictly increasing".into()));
        }
        Ok(())
    }

    /// Signed detector coordinate of detector `m`.
    fn detector_offset(&self, m: usize) -> f64 {
        (m as f64 - (self.detectors as f64 - 1.0) / 2.0) * self.detector_spacing
    }

    /// Calls `visit(pixel_index, weight)` for every non-zero system-matrix
    /// entry of the ray at angle `k`, detector `m`.
    pub fn for_each_ray_weight(&self, k: usize, m: usize, mut visit: impl FnMut(usize, f64)) {
        let theta = self.angle_radians(k);
        let (sin_t, cos_t) = theta.sin_cos();
        self.trace_ray(sin_t, cos_t, m, &mut visit);
    }

    fn trace_ray(&self, sin_t: f64, cos_t: f64, m: usize, visit: &mut impl FnMut(usize, f64)) {
        let n = self.image_size;
        let ps = self.pixel_spacing;
        let center = (n as f64 - 1.0) / 2.0;
        let s = self.detector_offset(m);
        if s.abs() > n as f64 * ps / 2.0 {
            return;
        }
        // Points on the ray satisfy x cos + y sin = s, with x = (col - c) ps
        // and y = (c - row) ps. The interpolated coordinate is affine in the
        // stepping index.
        if cos_t.abs() >= sin_t.abs() {
            let weight = ps / cos_t.abs();
            let inv = 1.0 / (cos_t * ps);
            let slope = sin_t * ps * inv;
            let base = (s - center * ps * sin_t) * inv + center;
            for row in 0..n {
                let fx = base + row as f64 * slope;
                interpolate(fx, n, weight, |col, w| visit(row * n + col, w));
            }
        } else {
            let weight = ps / sin_t.abs();
            let inv = 1.0 / (sin_t * ps);
            let slope = cos_t * ps * inv;
            let base = center - (s + center * ps * cos_t) * inv;
            for col in 0..n {
                let fy = base + col as f64 * slope;
                interpolate(fy, n, weight, |row, w| visit(row * n + col, w));
            }
        }
    }

    /// Single-angle forward projection into `out` (length `detectors`), sequential.
    pub fn project_angle_into(&self, image: &[f64], k: usize, out: &mut [f64]) {
        let (sin_t, cos_t) = self.angle_radians(k).sin_cos();
        for (m, slot) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            self.trace_ray(sin_t, cos_t, m, &mut |p, w| acc += w * image[p]);
            *slot = acc;
        }
    }

    /// Adds the back projection of one angle's row into `out`, sequential.
    pub fn accumulate_back_angle(&self, row: &[f64], k: usize, out: &mut [f64]) {
        let (sin_t, cos_t) = self.angle_radians(k).sin_cos();
        for (m, &v) in row.iter().enumerate() {
            if v != 0.0 {
                self.trace_ray(sin_t, cos_t, m, &mut |p, w| out[p] += w * v);
            }
        }
    }

    /// Forward projection of a raw pixel buffer into `out` (`angles.len() * detectors`).
    pub fn forward_into(&self, image: &[f64], angles: &[usize], out: &mut [f64]) {
        let d = self.detectors;
        debug_assert_eq!(image.len(), self.num_pixels());
        debug_assert_eq!(out.len(), angles.len() * d);
        if d == 0 {
            return;
        }
        out.par_chunks_mut(d).zip(angles.par_iter()).for_each(|(row, &k)| {
            let (sin_t, cos_t) = self.angle_radians(k).sin_cos();
            for (m, slot) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                self.trace_ray(sin_t, cos_t, m, &mut |p, w| acc += w * image[p]);
                *slot = acc;
            }
        });
    }

    /// Adjoint of [`forward_into`](Self::forward_into); overwrites `out`.
    pub fn back_into(&self, sino: &[f64], angles: &[usize], out: &mut [f64]) {
        let d = self.detectors;
        let npix = self.num_pixels();
        debug_assert_eq!(sino.len(), angles.len() * d);
        debug_assert_eq!(out.len(), npix);
        out.iter_mut().for_each(|v| *v = 0.0);
        if angles.is_empty() || d == 0 {
            return;
        }
        let partials: Vec<Vec<f64>> = angles
            .par_chunks(BACKPROJECT_CHUNK)
            .zip(sino.par_chunks(BACKPROJECT_CHUNK * d))
            .map(|(ks, rows)| {
                let mut acc = vec![0.0; npix];
                for (&k, row) in ks.iter().zip(rows.chunks(d)) {
                    let (sin_t, cos_t) = self.angle_radians(k).sin_cos();
                    for (m, &v) in row.iter().enumerate() {
                        if v != 0.0 {
                            self.trace_ray(sin_t, cos_t, m, &mut |p, w| acc[p] += w * v);
                        }
                    }
                }
                acc
            })
            .collect();
        for part in &partials {
            for (o, p) in out.iter_mut().zip(part) {
                *o += p;
            }
        }
    }
}

/// Splits unit weight between the two pixels bracketing fractional index `f`.
#[inline(always)]
fn interpolate(f: f64, n: usize, weight: f64, mut visit: impl FnMut(usize, f64)) {
    if !(f > -1.0 && f < n as f64) {
        return;
    }
    // Truncation of the shifted value is floor() without a libm call.
    let lo = (f + 1.0) as usize as isize - 1;
    let frac = f - lo as f64;
    if lo >= 0 {
        let w = (1.0 - frac) * weight;
        if w != 0.0 {
            visit(lo as usize, w);
        }
    }
    let hi = (lo + 1) as usize;
    if hi < n && frac != 0.0 {
        visit(hi, frac * weight);
    }
}

fn check_image(image: &ImageGrid, geom: &ProjectionGeometry) -> Result<()> {
    if image.size() != geom.image_size {
        return Err(Error::Shape(format!(
            "image side {} does not match geometry side {}",
            image.size(),
            geom.image_size
        )));
    }
    Ok(())
}

/// Line integrals of `image` at the requested angle indices.
pub fn forward_project(image: &ImageGrid, geom: &ProjectionGeometry, angles: &[usize]) -> Result<Sinogram> {
    check_image(image, geom)?;
    geom.check_angles(angles)?;
    let mut out = vec![0.0; angles.len() * geom.detectors];
    geom.forward_into(image.data(), angles, &mut out);
    Sinogram::noiseless(angles.to_vec(), geom.detectors, out)
}

/// Projection of a single angle.
pub fn project_row(image: &ImageGrid, geom: &ProjectionGeometry, angle: usize) -> Result<Vec<f64>> {
    check_image(image, geom)?;
    geom.check_angles(&[angle])?;
    let mut out = vec![0.0; geom.detectors];
    geom.forward_into(image.data(), &[angle], &mut out);
    Ok(out)
}

fn check_sinogram(sino: &Sinogram, geom: &ProjectionGeometry) -> Result<()> {
    if sino.detectors() != geom.detectors {
        return Err(Error::Shape(format!(
            "sinogram has {} detectors, geometry has {}",
            sino.detectors(),
            geom.detectors
        )));
    }
    geom.check_angles(sino.angles())
}

/// Exact adjoint of [`forward_project`].
pub fn back_project(sino: &Sinogram, geom: &ProjectionGeometry) -> Result<ImageGrid> {
    check_sinogram(sino, geom)?;
    let mut out = vec![0.0; geom.num_pixels()];
    geom.back_into(sino.data(), sino.angles(), &mut out);
    ImageGrid::new(geom.image_size, out)
}

/// Per-ray sums of system-matrix entries, laid out like a sinogram.
pub fn row_sums(geom: &ProjectionGeometry, angles: &[usize]) -> Result<Sinogram> {
    geom.check_angles(angles)?;
    let d = geom.detectors;
    let mut out = vec![0.0; angles.len() * d];
    out.par_chunks_mut(d.max(1)).zip(angles.par_iter()).for_each(|(row, &k)| {
        for (m, slot) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            geom.for_each_ray_weight(k, m, |_, w| acc += w);
            *slot = acc;
        }
    });
    Sinogram::noiseless(angles.to_vec(), d, out)
}

/// Per-pixel sums of system-matrix entries over the given angles.
pub fn col_sums(geom: &ProjectionGeometry, angles: &[usize]) -> Result<ImageGrid> {
    geom.check_angles(angles)?;
    let mut out = vec![0.0; geom.num_pixels()];
    for &k in angles {
        for m in 0..geom.detectors {
            geom.for_each_ray_weight(k, m, |p, w| out[p] += w);
        }
    }
    ImageGrid::new(geom.image_size, out)
}
