//! Synthetic ground-truth images and reproducible labelled datasets.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, Sinogram};
use crate::projector::{forward_project, ProjectionGeometry};

pub const MIN_PHANTOM_SIZE: usize = 16;

/// Header line of a dataset manifest.
pub const MANIFEST_HEADER: &str = "id,image_path,sino_path,label,seed";

/// Ellipse in normalised coordinates `[-1, 1]^2`, angle in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub intensity: f64,
    pub semi_x: f64,
    pub semi_y: f64,
    pub center_x: f64,
    pub center_y: f64,
    pub angle: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let dx = x - self.center_x;
        let dy = y - self.center_y;
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.semi_x).powi(2) + (v / self.semi_y).powi(2) <= 1.0
    }
}

// Modified Shepp-Logan (Toft) table: intensity, a, b, x0, y0, phi (degrees).
const SHEPP_LOGAN: [[f64; 6]; 10] = [
    [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
    [-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0],
    [-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0],
    [-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0],
    [0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0],
    [0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0],
    [0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0],
    [0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0],
    [0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0],
    [0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0],
];

/// Rasterises ellipses at pixel centres, zeroes everything outside the
/// inscribed disk and clamps to `[0, 1]`.
pub fn render_ellipses(size: usize, ellipses: &[Ellipse]) -> Result<ImageGrid> {
    let half = size as f64 / 2.0;
    let c = (size as f64 - 1.0) / 2.0;
    ImageGrid::from_fn(size, |row, col| {
        let x = (col as f64 - c) / half;
        let y = (c - row as f64) / half;
        if x * x + y * y > 1.0 {
            return 0.0;
        }
        let v: f64 = ellipses.iter().filter(|e| e.contains(x, y)).map(|e| e.intensity).sum();
        v.clamp(0.0, 1.0)
    })
}

/// Modified Shepp-Logan phantom normalised so that its maximum is 1.
pub fn shepp_logan(size: usize) -> Result<ImageGrid> {
    check_size(size)?;
    let ellipses: Vec<Ellipse> = SHEPP_LOGAN
        .iter()
        .map(|r| Ellipse {
            intensity: r[0],
            semi_x: r[1],
            semi_y: r[2],
            center_x: r[3],
            center_y: r[4],
            angle: r[5].to_radians(),
        })
        .collect();
    let img = render_ellipses(size, &ellipses)?;
    let max = img.max_value();
    if max <= 0.0 {
        return Ok(img);
    }
    let data = img.into_data().into_iter().map(|v| (v / max).clamp(0.0, 1.0)).collect();
    ImageGrid::new(size, data)
}

fn check_size(size: usize) -> Result<()> {
    if size < MIN_PHANTOM_SIZE {
        return Err(Error::Domain(format!("phantom size {size} below {MIN_PHANTOM_SIZE}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhantomKind {
    SheppLogan,
    RandomEllipses,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub size: usize,
    pub kind: PhantomKind,
    /// Inclusive range of the number of random ellipses.
    pub num_ellipses: (usize, usize),
    pub seed: u64,
}

impl PhantomSpec {
    pub fn random_ellipses(size: usize, num_ellipses: (usize, usize), seed: u64) -> Self {
        PhantomSpec { size, kind: PhantomKind::RandomEllipses, num_ellipses, seed }
    }

    pub fn shepp_logan(size: usize) -> Self {
        PhantomSpec { size, kind: PhantomKind::SheppLogan, num_ellipses: (0, 0), seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        check_size(self.size)?;
        if self.num_ellipses.0 > self.num_ellipses.1 {
            return Err(Error::Domain(format!(
                "ellipse range [{}, {}] is empty",
                self.num_ellipses.0, self.num_ellipses.1
            )));
        }
        Ok(())
    }

    /// Renders the phantom and its class label (the ellipse count; 0 for Shepp-Logan).
    pub fn generate(&self) -> Result<(ImageGrid, u32)> {
        match self.kind {
            PhantomKind::SheppLogan => Ok((shepp_logan(self.size)?, 0)),
            PhantomKind::RandomEllipses => random_ellipse_phantom(self),
        }
    }
}

/// Body disk underlying every random phantom.
const BODY: Ellipse =
    Ellipse { intensity: 0.1, semi_x: 0.9, semi_y: 0.9, center_x: 0.0, center_y: 0.0, angle: 0.0 };

/// Seeded random-ellipse phantom.
///
/// The ellipse count is uniform over the configured range and becomes the label.
/// Centres lie within radius 0.55 and semi-axes in `[0.08, 0.25]`, so every
/// ellipse stays inside the body disk; intensities are uniform in `[0.3, 0.6]`.
pub fn random_ellipse_phantom(spec: &PhantomSpec) -> Result<(ImageGrid, u32)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (lo, hi) = spec.num_ellipses;
    let count = rng.random_range(lo..=hi);
    let mut ellipses = vec![BODY];
    for _ in 0..count {
        let r = 0.55 * rng.random::<f64>().sqrt();
        let phi = rng.random::<f64>() * std::f64::consts::TAU;
        ellipses.push(Ellipse {
            intensity: rng.random_range(0.3..=0.6),
            semi_x: rng.random_range(0.08..=0.25),
            semi_y: rng.random_range(0.08..=0.25),
            center_x: r * phi.cos(),
            center_y: r * phi.sin(),
            angle: rng.random::<f64>() * std::f64::consts::PI,
        });
    }
    let img = render_ellipses(spec.size, &ellipses)?;
    Ok((img, count as u32))
}

/// Additive Gaussian noise on every sinogram entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub sigma: f64,
}

impl NoiseModel {
    pub const NONE: NoiseModel = NoiseModel { sigma: 0.0 };

    /// Adds seeded noise to every row of `sino` and records the sigma per row.
    pub fn apply(&self, sino: &Sinogram, seed: u64) -> Result<Sinogram> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Domain(format!("noise sigma {} invalid", self.sigma)));
        }
        let mut data = sino.data().to_vec();
        if self.sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1);
            let normal = Normal::new(0.0, self.sigma).map_err(|e| Error::Domain(e.to_string()))?;
            for v in &mut data {
                *v += normal.sample(&mut rng);
            }
        }
        Sinogram::new(sino.angles().to_vec(), sino.detectors(), data, vec![self.sigma; sino.num_rows()])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: usize,
    /// Relative to the manifest directory.
    pub image_path: PathBuf,
    pub sino_path: PathBuf,
    pub label: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn path_in(dir: &Path) -> PathBuf {
        dir.join("manifest.csv")
    }

    pub fn write(&self) -> Result<PathBuf> {
        let mut text = String::from(MANIFEST_HEADER);
        text.push('\n');
        for e in &self.entries {
            text.push_str(&format!(
                "{},{},{},{},{}\n",
                e.id,
                e.image_path.display(),
                e.sino_path.display(),
                e.label,
                e.seed
            ));
        }
        let path = Self::path_in(&self.root);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Reads `manifest.csv`; `path` may name the file or its directory.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = if path.is_dir() { Self::path_in(path) } else { path.to_path_buf() };
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (i == 0 && line == MANIFEST_HEADER) {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let bad = |what: &str| Error::format(&file, format!("line {}: {what}", i + 1));
            if fields.len() != 5 {
                return Err(bad("expected 5 fields"));
            }
            entries.push(ManifestEntry {
                id: fields[0].parse().map_err(|_| bad("bad id"))?,
                image_path: PathBuf::from(fields[1]),
                sino_path: PathBuf::from(fields[2]),
                label: fields[3].parse().map_err(|_| bad("bad label"))?,
                seed: fields[4].parse().map_err(|_| bad("bad seed"))?,
            });
        }
        Ok(Manifest { root, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Loads every image and sinogram listed in the manifest.
    pub fn load_samples(&self) -> Result<Vec<Sample>> {
        self.entries
            .iter()
            .map(|e| {
                Ok(Sample {
                    id: e.id,
                    image: Some(ImageGrid::load(self.root.join(&e.image_path))?),
                    sino: Sinogram::load(self.root.join(&e.sino_path))?,
                    label: e.label,
                    seed: e.seed,
                })
            })
            .collect()
    }
}

/// One dataset item held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    /// Ground truth; absent for measurement-only data.
    pub image: Option<ImageGrid>,
    pub sino: Sinogram,
    pub label: u32,
    pub seed: u64,
}

/// Generates phantoms and their (noisy) sinograms in memory.
pub fn generate_samples(
    specs: &[PhantomSpec],
    geom: &ProjectionGeometry,
    noise: NoiseModel,
    angles: &[usize],
) -> Result<Vec<Sample>> {
    specs
        .par_iter()
        .enumerate()
        .map(|(id, spec)| {
            if spec.size != geom.image_size {
                return Err(Error::Shape(format!(
                    "phantom size {} differs from geometry size {}",
                    spec.size, geom.image_size
                )));
            }
            let (image, label) = spec.generate()?;
            let clean = forward_project(&image, geom, angles)?;
            let sino = noise.apply(&clean, spec.seed)?;
            Ok(Sample { id, image: Some(image), sino, label, seed: spec.seed })
        })
        .collect()
}

/// Writes a dataset under `out_dir` (`images/`, `sinos/`, `manifest.csv`).
pub fn generate_dataset(
    specs: &[PhantomSpec],
    geom: &ProjectionGeometry,
    noise: NoiseModel,
    angles: &[usize],
    out_dir: impl AsRef<Path>,
) -> Result<Manifest> {
    let root = out_dir.as_ref().to_path_buf();
    for sub in ["images", "sinos"] {
        let d = root.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let samples = generate_samples(specs, geom, noise, angles)?;
    let entries = samples
        .par_iter()
        .map(|s| {
            let image_path = PathBuf::from(format!("images/{:04}.tgrd", s.id));
            let sino_path = PathBuf::from(format!("sinos/{:04}.tgrd", s.id));
            if let Some(img) = &s.image {
                img.save(root.join(&image_path))?;
            }
            s.sino.save(root.join(&sino_path))?;
            Ok(ManifestEntry { id: s.id, image_path, sino_path, label: s.label, seed: s.seed })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest { root, entries };
    manifest.write()?;
    Ok(manifest)
}

/// Derives per-sample seeds from a master seed (SplitMix64 steps).
pub fn derive_seeds(master: u64, count: usize) -> Vec<u64> {
    let mut state = master;
    (0..count)
        .map(|_| {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^ (z >> 31)
        })
        .collect()
}
