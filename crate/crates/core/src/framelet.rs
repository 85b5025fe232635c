//! Undecimated piecewise-linear B-spline framelets with periodic boundary.
//!
//! Each level `l` (dilation `2^(l-1)`) applies the nine tensor products of
//! the 1-D filters
//!
//! ```text
//! h0 = [1, 2, 1] / 4,   h1 = sqrt(2)/4 [1, 0, -1],   h2 = [-1, 2, -1] / 4
//! ```
//!
//! directly to the image. Because `|h0|^2 + |h1|^2 + |h2|^2 = 1` in the
//! Fourier domain, every level on its own is a tight frame. Scaling all
//! levels by `1/sqrt(L)` makes the stacked transform tight as well, so
//! `synthesis(analysis(u)) = u`, and each level satisfies
//! `W_l^T W_l = I / L`.

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

pub const SUBBANDS: usize = 9;

const SQRT2_4: f64 = std::f64::consts::SQRT_2 / 4.0;

/// 1-D filter taps at offsets `-d, 0, +d`.
const FILTERS: [[f64; 3]; 3] = [
    [0.25, 0.5, 0.25],
    [SQRT2_4, 0.0, -SQRT2_4],
    [-0.25, 0.5, -0.25],
];

#[derive(Debug, Clone, PartialEq)]
pub struct FrameletSystem {
    levels: usize,
    /// Leave the low-pass subbands out of the sparsity penalty.
    pub skip_lowpass: bool,
}

impl FrameletSystem {
    pub fn new(levels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::Domain("framelet system needs at least one level".into()));
        }
        Ok(FrameletSystem { levels, skip_lowpass: true })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    fn level_scale(&self) -> f64 {
        1.0 / (self.levels as f64).sqrt()
    }

    fn check_size(&self, size: usize) -> Result<()> {
        let min = 1usize.checked_shl(self.levels as u32).unwrap_or(usize::MAX);
        if size < min {
            return Err(Error::Domain(format!(
                "image side {size} too small for {} levels (need {min})",
                self.levels
            )));
        }
        Ok(())
    }

    /// Whether subband `band` of any level carries the l1 penalty.
    pub fn is_penalized(&self, band: usize) -> bool {
        !(self.skip_lowpass && band == 0)
    }
}

/// Coefficient planes indexed by `(level, subband)`, each `size x size`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameletCoeffs {
    size: usize,
    levels: usize,
    data: Vec<f64>,
}

impl FrameletCoeffs {
    pub fn zeros(size: usize, levels: usize) -> Self {
        FrameletCoeffs { size, levels, data: vec![0.0; levels * SUBBANDS * size * size] }
    }

    pub fn from_vec(size: usize, levels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != levels * SUBBANDS * size * size {
            return Err(Error::Shape(format!(
                "expected {} coefficients, got {}",
                levels * SUBBANDS * size * size,
                data.len()
            )));
        }
        Ok(FrameletCoeffs { size, levels, data })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn plane_len(&self) -> usize {
        self.size * self.size
    }

    /// All nine subbands of one level, contiguous.
    pub fn level(&self, level: usize) -> &[f64] {
        let len = SUBBANDS * self.plane_len();
        &self.data[level * len..(level + 1) * len]
    }

    pub fn level_mut(&mut self, level: usize) -> &mut [f64] {
        let len = SUBBANDS * self.plane_len();
        &mut self.data[level * len..(level + 1) * len]
    }

    pub fn plane(&self, level: usize, band: usize) -> &[f64] {
        let p = self.plane_len();
        let start = (level * SUBBANDS + band) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, level: usize, band: usize) -> &mut [f64] {
        let p = self.plane_len();
        let start = (level * SUBBANDS + band) * p;
        &mut self.data[start..start + p]
    }

    pub fn same_shape(&self, other: &FrameletCoeffs) -> bool {
        self.size == other.size && self.levels == other.levels
    }
}

/// Periodic correlation along one axis with the filter dilated by `dil`.
/// `vertical` filters along rows (index step `n`), otherwise along columns.
fn filter_axis(src: &[f64], dst: &mut [f64], n: usize, taps: &[f64; 3], dil: usize, vertical: bool, adjoint: bool) {
    let d = dil % n;
    for r in 0..n {
        for c in 0..n {
            let mut acc = 0.0;
            for (p, &h) in taps.iter().enumerate() {
                if h == 0.0 {
                    continue;
                }
                // Correlation reads at offset (p-1)d, its adjoint at -(p-1)d.
                let forward = (p == 2) != adjoint;
                let shift = if p == 1 { 0 } else if forward { d } else { n - d };
                let (rr, cc) = if vertical { ((r + shift) % n, c) } else { (r, (c + shift) % n) };
                acc += h * src[rr * n + cc];
            }
            dst[r * n + c] = acc;
        }
    }
}

/// Framelet analysis `W u`.
pub fn analysis(image: &ImageGrid, system: &FrameletSystem) -> Result<FrameletCoeffs> {
    let n = image.size();
    system.check_size(n)?;
    analysis_raw(image.data(), n, system)
}

pub(crate) fn analysis_raw(image: &[f64], n: usize, system: &FrameletSystem) -> Result<FrameletCoeffs> {
    system.check_size(n)?;
    let scale = system.level_scale();
    let mut out = FrameletCoeffs::zeros(n, system.levels);
    let mut vert = vec![0.0; n * n];
    for level in 0..system.levels {
        let dil = 1usize << level;
        for (a, ha) in FILTERS.iter().enumerate() {
            filter_axis(image, &mut vert, n, ha, dil, true, false);
            for (b, hb) in FILTERS.iter().enumerate() {
                let plane = out.plane_mut(level, a * 3 + b);
                filter_axis(&vert, plane, n, hb, dil, false, false);
                plane.iter_mut().for_each(|v| *v *= scale);
            }
        }
    }
    Ok(out)
}

/// Framelet synthesis `W^T z`, the exact adjoint of [`analysis`].
pub fn synthesis(coeffs: &FrameletCoeffs, system: &FrameletSystem) -> Result<ImageGrid> {
    let data = synthesis_raw(coeffs, system)?;
    ImageGrid::new(coeffs.size, data)
}

pub(crate) fn synthesis_raw(coeffs: &FrameletCoeffs, system: &FrameletSystem) -> Result<Vec<f64>> {
    if coeffs.levels != system.levels {
        return Err(Error::Shape(format!(
            "coefficients have {} levels, system has {}",
            coeffs.levels, system.levels
        )));
    }
    let n = coeffs.size;
    system.check_size(n)?;
    let scale = system.level_scale();
    let mut out = vec![0.0; n * n];
    let mut horiz = vec![0.0; n * n];
    let mut sum_b = vec![0.0; n * n];
    let mut vert = vec![0.0; n * n];
    for level in 0..system.levels {
        let dil = 1usize << level;
        for (a, ha) in FILTERS.iter().enumerate() {
            sum_b.iter_mut().for_each(|v| *v = 0.0);
            for (b, hb) in FILTERS.iter().enumerate() {
                filter_axis(coeffs.plane(level, a * 3 + b), &mut horiz, n, hb, dil, false, true);
                for (s, h) in sum_b.iter_mut().zip(&horiz) {
                    *s += h;
                }
            }
            filter_axis(&sum_b, &mut vert, n, ha, dil, true, true);
            for (o, v) in out.iter_mut().zip(&vert) {
                *o += scale * v;
            }
        }
    }
    Ok(out)
}

/// `sign(x) * max(|x| - beta, 0)`
pub fn shrink(x: f64, beta: f64) -> f64 {
    if x > beta {
        x - beta
    } else if x < -beta {
        x + beta
    } else {
        0.0
    }
}

/// Soft-thresholds every level with its own threshold. Low-pass subbands are
/// copied through unchanged when `skip_lowpass` is set.
pub fn soft_threshold(coeffs: &FrameletCoeffs, thresholds: &[f64], skip_lowpass: bool) -> Result<FrameletCoeffs> {
    let mut out = coeffs.clone();
    soft_threshold_in_place(&mut out, thresholds, skip_lowpass)?;
    Ok(out)
}

pub fn soft_threshold_in_place(coeffs: &mut FrameletCoeffs, thresholds: &[f64], skip_lowpass: bool) -> Result<()> {
    if thresholds.len() != coeffs.levels {
        return Err(Error::Shape(format!(
            "{} thresholds for {} levels",
            thresholds.len(),
            coeffs.levels
        )));
    }
    if let Some(b) = thresholds.iter().find(|b| !(**b >= 0.0)) {
        return Err(Error::Domain(format!("threshold {b} must be non-negative")));
    }
    for (level, &beta) in thresholds.iter().enumerate() {
        let first = if skip_lowpass { 1 } else { 0 };
        for band in first..SUBBANDS {
            for v in coeffs.plane_mut(level, band) {
                *v = shrink(*v, beta);
            }
        }
    }
    Ok(())
}
