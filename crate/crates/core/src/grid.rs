//! Image and sinogram containers, quality metrics and on-disk formats.
//!
//! Images and sinograms are stored in the TGRID binary format: the ASCII
//! magic `TGRD`, little-endian `u32` width and height, then `width * height`
//! little-endian `f64` values in row-major order. A sinogram is a TGRID with
//! `width = detectors` and `height = rows`, plus a sidecar text file holding
//! one `angle,sigma` line per row.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Smallest admissible image side length.
pub const MIN_IMAGE_SIZE: usize = 8;

/// PSNR value reported for a zero mean-squared error.
pub const PSNR_CAP_DB: f64 = 99.0;

const TGRID_MAGIC: &[u8; 4] = b"TGRD";
const TGRID_HEADER_LEN: usize = 12;

/// Square row-major image with finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    size: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn new(size: usize, data: Vec<f64>) -> Result<Self> {
        if size < MIN_IMAGE_SIZE {
            return Err(Error::Domain(format!(
                "image size {size} below minimum {MIN_IMAGE_SIZE}"
            )));
        }
        if data.len() != size * size {
            return Err(Error::Shape(format!(
                "image of side {size} needs {} values, got {}",
                size * size,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite pixel at index {i}")));
        }
        Ok(ImageGrid { size, data })
    }

    pub fn zeros(size: usize) -> Result<Self> {
        Self::new(size, vec![0.0; size * size])
    }

    /// Builds an image by evaluating `f(row, col)` at every pixel.
    pub fn from_fn(size: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(size * size);
        for r in 0..size {
            for c in 0..size {
                data.push(f(r, c));
            }
        }
        Self::new(size, data)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.size + col]
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Writes the image as a TGRID file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_tgrid(path, self.size, self.size, &self.data)
    }

    /// Reads a TGRID file holding a square image.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (width, height, data) = read_tgrid(path)?;
        if width != height {
            return Err(Error::format(
                path,
                format!("image must be square, found {width}x{height}"),
            ));
        }
        Self::new(width, data).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Angle-major matrix of line integrals; rows are kept sorted by angle index.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    angles: Vec<usize>,
    detectors: usize,
    data: Vec<f64>,
    sigmas: Vec<f64>,
}

impl Sinogram {
    pub fn new(angles: Vec<usize>, detectors: usize, data: Vec<f64>, sigmas: Vec<f64>) -> Result<Self> {
        if data.len() != angles.len() * detectors {
            return Err(Error::Shape(format!(
                "{} rows of {} detectors need {} values, got {}",
                angles.len(),
                detectors,
                angles.len() * detectors,
                data.len()
            )));
        }
        if sigmas.len() != angles.len() {
            return Err(Error::Shape(format!(
                "{} rows but {} noise sigmas",
                angles.len(),
                sigmas.len()
            )));
        }
        if angles.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain("angle indices must be strictly increasing".into()));
        }
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Domain("noise sigmas must be finite and non-negative".into()));
        }
        Ok(Sinogram { angles, detectors, data, sigmas })
    }

    /// A sinogram with no rows.
    pub fn empty(detectors: usize) -> Self {
        Sinogram { angles: Vec::new(), detectors, data: Vec::new(), sigmas: Vec::new() }
    }

    /// Noise-free sinogram with zero sigmas.
    pub fn noiseless(angles: Vec<usize>, detectors: usize, data: Vec<f64>) -> Result<Self> {
        let sigmas = vec![0.0; angles.len()];
        Self::new(angles, detectors, data, sigmas)
    }

    pub fn angles(&self) -> &[usize] {
        &self.angles
    }

    pub fn detectors(&self) -> usize {
        self.detectors
    }

    pub fn num_rows(&self) -> usize {
        self.angles.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.detectors..(i + 1) * self.detectors]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.detectors..(i + 1) * self.detectors]
    }

    /// Position of `angle` among the rows, if present.
    pub fn row_index(&self, angle: usize) -> Option<usize> {
        self.angles.binary_search(&angle).ok()
    }

    /// Inserts a row keeping angle order. Fails if the angle is already present.
    pub fn insert_row(&mut self, angle: usize, row: &[f64], sigma: f64) -> Result<()> {
        if row.len() != self.detectors {
            return Err(Error::Shape(format!(
                "row has {} values, sinogram has {} detectors",
                row.len(),
                self.detectors
            )));
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::Domain(format!("invalid row sigma {sigma}")));
        }
        let pos = match self.angles.binary_search(&angle) {
            Ok(_) => return Err(Error::Domain(format!("angle {angle} already measured"))),
            Err(p) => p,
        };
        self.angles.insert(pos, angle);
        self.sigmas.insert(pos, sigma);
        let at = pos * self.detectors;
        self.data.splice(at..at, row.iter().copied());
        Ok(())
    }

    /// Writes the TGRID payload at `path` and the angle sidecar next to it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_tgrid(path, self.detectors, self.angles.len(), &self.data)?;
        let mut text = String::new();
        for (a, s) in self.angles.iter().zip(&self.sigmas) {
            text.push_str(&format!("{a},{s}\n"));
        }
        let side = sinogram_sidecar_path(path);
        fs::write(&side, text).map_err(|e| Error::io(&side, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (width, height, data) = read_tgrid(path)?;
        let side = sinogram_sidecar_path(path);
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let mut angles = Vec::new();
        let mut sigmas = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (a, s) = line
                .split_once(',')
                .ok_or_else(|| Error::format(&side, format!("line {}: expected angle,sigma", lineno + 1)))?;
            let a: usize = a
                .trim()
                .parse()
                .map_err(|_| Error::format(&side, format!("line {}: bad angle {a:?}", lineno + 1)))?;
            let s: f64 = s
                .trim()
                .parse()
                .map_err(|_| Error::format(&side, format!("line {}: bad sigma {s:?}", lineno + 1)))?;
            angles.push(a);
            sigmas.push(s);
        }
        if angles.len() != height {
            return Err(Error::format(
                &side,
                format!("sidecar lists {} rows, payload has {height}", angles.len()),
            ));
        }
        Sinogram::new(angles, width, data, sigmas).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Sidecar path holding the angle list of a sinogram stored at `path`.
pub fn sinogram_sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".angles");
    PathBuf::from(s)
}

/// Reconstruction quality summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityReport {
    pub mse: f64,
    pub psnr: f64,
    pub runtime_ms: f64,
}

impl QualityReport {
    pub fn from_images(reference: &ImageGrid, candidate: &ImageGrid, runtime_ms: f64) -> Result<Self> {
        let mse = mse(reference, candidate)?;
        Ok(QualityReport { mse, psnr: psnr_from_mse(mse), runtime_ms })
    }
}

pub fn mse_values(reference: &[f64], candidate: &[f64]) -> Result<f64> {
    if reference.len() != candidate.len() {
        return Err(Error::Shape(format!(
            "cannot compare {} values with {}",
            reference.len(),
            candidate.len()
        )));
    }
    if reference.is_empty() {
        return Err(Error::Shape("cannot compare empty inputs".into()));
    }
    let sum: f64 = reference.iter().zip(candidate).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / reference.len() as f64)
}

pub fn mse(reference: &ImageGrid, candidate: &ImageGrid) -> Result<f64> {
    if reference.size() != candidate.size() {
        return Err(Error::Shape(format!(
            "image sizes differ: {} vs {}",
            reference.size(),
            candidate.size()
        )));
    }
    mse_values(reference.data(), candidate.data())
}

/// `10 log10(1 / mse)` with a peak of 1, capped at [`PSNR_CAP_DB`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
}

pub fn psnr_values(reference: &[f64], candidate: &[f64]) -> Result<f64> {
    mse_values(reference, candidate).map(psnr_from_mse)
}

/// Peak signal-to-noise ratio in dB with the peak fixed to 1.0.
///
/// Values are not clipped, so reconstructions overshooting `[0, 1]` are
/// penalised like any other error.
pub fn psnr(reference: &ImageGrid, candidate: &ImageGrid) -> Result<f64> {
    mse(reference, candidate).map(psnr_from_mse)
}

pub fn write_tgrid(path: impl AsRef<Path>, width: usize, height: usize, values: &[f64]) -> Result<()> {
    let path = path.as_ref();
    if values.len() != width * height {
        return Err(Error::Shape(format!(
            "{width}x{height} grid needs {} values, got {}",
            width * height,
            values.len()
        )));
    }
    let w = u32::try_from(width).map_err(|_| Error::Domain(format!("width {width} too large")))?;
    let h = u32::try_from(height).map_err(|_| Error::Domain(format!("height {height} too large")))?;
    let mut buf = Vec::with_capacity(TGRID_HEADER_LEN + 8 * values.len());
    buf.extend_from_slice(TGRID_MAGIC);
    buf.extend_from_slice(&w.to_le_bytes());
    buf.extend_from_slice(&h.to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Reads a TGRID file, returning `(width, height, values)`.
pub fn read_tgrid(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f64>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < TGRID_HEADER_LEN {
        return Err(Error::format(path, "truncated header"));
    }
    if &bytes[0..4] != TGRID_MAGIC {
        return Err(Error::format(path, "bad magic, expected TGRD"));
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::format(path, "dimensions overflow"))?;
    let payload = &bytes[TGRID_HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::format(
            path,
            format!("payload is {} bytes, header implies {expected}", payload.len()),
        ));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((width, height, values))
}

/// Maps pixel values linearly onto 8-bit gray levels. A constant image maps to 128.
pub fn to_gray_levels(grid: &ImageGrid) -> Vec<u8> {
    let lo = grid.min_value();
    let hi = grid.max_value();
    let range = hi - lo;
    if !(range > 0.0) {
        return vec![128; grid.len()];
    }
    grid.data()
        .iter()
        .map(|v| ((v - lo) / range * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Writes a binary (P5) 8-bit PGM.
pub fn export_pgm(grid: &ImageGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = format!("P5\n{} {}\n255\n", grid.size(), grid.size()).into_bytes();
    buf.extend(to_gray_levels(grid));
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}
