//! Task-driven evaluation: sensing, reconstruction and classification chained
//! into one pipeline, scored by classification accuracy next to PSNR.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{psnr, ImageGrid, Sinogram};
use crate::phantom::{derive_seeds, Sample};
use crate::projector::{project_row, ProjectionGeometry};
use crate::scanmdp::{run_episode, EpisodeConfig, ImageScorer, Mdp, ScanEnv, ScanPolicy};
use crate::solvers::Reconstructor;

/// Side of the block-average feature grid.
pub const FEATURE_SIDE: usize = 8;
pub const FEATURE_DIM: usize = FEATURE_SIDE * FEATURE_SIDE;

pub const TASK_REPORT_HEADER: &str = "sample_id,true_label,pred_label,margin,psnr";

/// Block averages of `image` on an 8x8 grid, row-major.
pub fn features(image: &ImageGrid) -> Result<Vec<f64>> {
    let n = image.size();
    if n % FEATURE_SIDE != 0 {
        return Err(Error::Shape(format!("image side {n} is not a multiple of {FEATURE_SIDE}")));
    }
    let b = n / FEATURE_SIDE;
    let mut out = vec![0.0; FEATURE_DIM];
    for r in 0..n {
        for c in 0..n {
            out[(r / b) * FEATURE_SIDE + c / b] += image.get(r, c);
        }
    }
    let area = (b * b) as f64;
    out.iter_mut().for_each(|v| *v /= area);
    Ok(out)
}

/// Nearest-centroid classifier in block-feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    /// Class labels in ascending order.
    labels: Vec<u32>,
    centroids: Vec<Vec<f64>>,
}

impl Classifier {
    pub fn from_centroids(mut classes: Vec<(u32, Vec<f64>)>) -> Result<Self> {
        classes.sort_by_key(|(l, _)| *l);
        if classes.len() < 2 {
            return Err(Error::Domain("a classifier needs at least two classes".into()));
        }
        if classes.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Domain("duplicate class label".into()));
        }
        if classes.iter().any(|(_, c)| c.len() != FEATURE_DIM) {
            return Err(Error::Shape(format!("centroids must have {FEATURE_DIM} entries")));
        }
        let (labels, centroids) = classes.into_iter().unzip();
        Ok(Classifier { labels, centroids })
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn centroid(&self, label: u32) -> Option<&[f64]> {
        self.labels.iter().position(|&l| l == label).map(|i| self.centroids[i].as_slice())
    }

    /// Label of the nearest centroid and the gap to the runner-up distance.
    /// Equidistant classes resolve to the lowest label.
    pub fn classify_features(&self, f: &[f64]) -> Result<(u32, f64)> {
        if f.len() != FEATURE_DIM {
            return Err(Error::Shape(format!("feature vector has {} entries", f.len())));
        }
        let dists: Vec<f64> = self
            .centroids
            .iter()
            .map(|c| c.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .collect();
        let mut best = 0;
        for i in 1..dists.len() {
            if dists[i] < dists[best] {
                best = i;
            }
        }
        let runner_up = dists
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != best)
            .map(|(_, d)| *d)
            .fold(f64::INFINITY, f64::min);
        Ok((self.labels[best], runner_up - dists[best]))
    }

    pub fn classify(&self, image: &ImageGrid) -> Result<(u32, f64)> {
        self.classify_features(&features(image)?)
    }
}

/// Fits one centroid per entry of `classes` from labelled images.
pub fn train_classifier(images: &[ImageGrid], labels: &[u32], classes: &[u32]) -> Result<Classifier> {
    if images.len() != labels.len() {
        return Err(Error::Shape(format!("{} images but {} labels", images.len(), labels.len())));
    }
    let feats = images.iter().map(features).collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(classes.len());
    for &class in classes {
        let members: Vec<&Vec<f64>> = feats.iter().zip(labels).filter(|(_, &l)| l == class).map(|(f, _)| f).collect();
        if members.is_empty() {
            return Err(Error::Domain(format!("no training sample for class {class}")));
        }
        let mut c = vec![0.0; FEATURE_DIM];
        for f in &members {
            for (ci, fi) in c.iter_mut().zip(f.iter()) {
                *ci += fi;
            }
        }
        c.iter_mut().for_each(|v| *v /= members.len() as f64);
        out.push((class, c));
    }
    if let Some(l) = labels.iter().find(|l| !classes.contains(l)) {
        return Err(Error::Domain(format!("label {l} is not among the classes")));
    }
    Classifier::from_centroids(out)
}

/// Signed task score: the margin when the label is right, minus it otherwise.
#[derive(Debug, Clone)]
pub struct TaskScorer {
    pub classifier: Arc<Classifier>,
    pub label: u32,
}

impl ImageScorer for TaskScorer {
    fn score(&self, image: &ImageGrid) -> Result<f64> {
        let (pred, margin) = self.classifier.classify(image)?;
        Ok(if pred == self.label { margin } else { -margin })
    }
}

/// Scorer for the task-driven scanning reward of an image with `label`.
pub fn task_reward_adapter(classifier: Arc<Classifier>, label: u32) -> TaskScorer {
    TaskScorer { classifier, label }
}

/// How measurements are acquired.
#[derive(Clone)]
pub enum SensingPlan {
    /// Fixed `(angle, dose fraction)` list.
    Fixed(Vec<(usize, f64)>),
    /// Angles and doses chosen online by a scanning policy. Ground truth and
    /// seed of the template are replaced per sample.
    Policy { policy: Arc<dyn ScanPolicy>, template: EpisodeConfig },
}

impl std::fmt::Debug for SensingPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SensingPlan::Fixed(v) => f.debug_tuple("Fixed").field(v).finish(),
            SensingPlan::Policy { policy, .. } => write!(f, "Policy({})", policy.name()),
        }
    }
}

impl SensingPlan {
    /// `views` equispaced angles sharing `budget` equally.
    pub fn uniform(num_angles: usize, views: usize, budget: f64) -> Self {
        let views = views.min(num_angles);
        if views == 0 {
            return SensingPlan::Fixed(Vec::new());
        }
        SensingPlan::Fixed((0..views).map(|i| (i * num_angles / views, budget / views as f64)).collect())
    }

    pub fn validate(&self, geom: &ProjectionGeometry) -> Result<()> {
        if let SensingPlan::Fixed(list) = self {
            let mut angles: Vec<usize> = list.iter().map(|(a, _)| *a).collect();
            angles.sort_unstable();
            if angles.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Domain("sensing plan repeats an angle".into()));
            }
            geom.check_angles(&angles)?;
            if list.iter().any(|(_, d)| !(*d > 0.0 && d.is_finite())) {
                return Err(Error::Domain("sensing plan doses must be positive".into()));
            }
            let total: f64 = list.iter().map(|(_, d)| d).sum();
            if total > 1.0 + 1e-12 {
                return Err(Error::Domain(format!("sensing plan uses dose {total} > 1")));
            }
        }
        Ok(())
    }

    pub fn total_dose(&self) -> Option<f64> {
        match self {
            SensingPlan::Fixed(list) => Some(list.iter().map(|(_, d)| d).sum()),
            SensingPlan::Policy { .. } => None,
        }
    }

    /// Simulated measurements of `truth` with noise `sigma0 / sqrt(dose)` per row.
    pub fn measure(&self, truth: &ImageGrid, geom: &ProjectionGeometry, sigma0: f64, seed: u64) -> Result<Sinogram> {
        match self {
            SensingPlan::Fixed(list) => {
                let mut order = list.clone();
                order.sort_by_key(|(a, _)| *a);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut sino = Sinogram::empty(geom.detectors);
                for (angle, dose) in order {
                    let mut row = project_row(truth, geom, angle)?;
                    let sigma = if sigma0 > 0.0 { sigma0 / dose.sqrt() } else { 0.0 };
                    for v in &mut row {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *v += sigma * z;
                    }
                    sino.insert_row(angle, &row, sigma)?;
                }
                Ok(sino)
            }
            SensingPlan::Policy { policy, template } => {
                let cfg = EpisodeConfig { ground_truth: truth.clone(), seed, ..template.clone() };
                let mut env = ScanEnv::new(cfg)?;
                run_episode(&mut env, policy.as_ref(), seed ^ 0x5bd1_e995)?;
                Ok(env.state().collected.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskRow {
    pub sample_id: usize,
    pub true_label: u32,
    /// `None` if the sample failed.
    pub pred_label: Option<u32>,
    pub margin: f64,
    pub psnr: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskReport {
    pub rows: Vec<TaskRow>,
    pub correct: usize,
    /// Samples that completed.
    pub evaluated: usize,
    pub failed: usize,
    pub mean_margin: f64,
    pub mean_psnr: f64,
}

impl TaskReport {
    fn from_rows(rows: Vec<TaskRow>) -> Self {
        let ok: Vec<&TaskRow> = rows.iter().filter(|r| r.pred_label.is_some()).collect();
        let correct = ok.iter().filter(|r| r.pred_label == Some(r.true_label)).count();
        let mean = |f: &dyn Fn(&TaskRow) -> f64| {
            if ok.is_empty() { f64::NAN } else { ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64 }
        };
        TaskReport {
            correct,
            evaluated: ok.len(),
            failed: rows.len() - ok.len(),
            mean_margin: mean(&|r| r.margin),
            mean_psnr: mean(&|r| r.psnr),
            rows,
        }
    }

    pub fn accuracy(&self) -> f64 {
        if self.evaluated == 0 { f64::NAN } else { self.correct as f64 / self.evaluated as f64 }
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{TASK_REPORT_HEADER}\n");
        for r in &self.rows {
            let pred = r.pred_label.map_or(String::from("failed"), |p| p.to_string());
            let _ = writeln!(out, "{},{},{},{},{}", r.sample_id, r.true_label, pred, r.margin, r.psnr);
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Measures, reconstructs and classifies every sample. Per-sample failures
/// are recorded in the report rather than aborting the run.
pub fn pipeline_eval(
    plan: &SensingPlan,
    recon: &Reconstructor,
    classifier: &Classifier,
    samples: &[Sample],
    geom: &ProjectionGeometry,
    sigma0: f64,
    seed: u64,
) -> Result<TaskReport> {
    plan.validate(geom)?;
    if !(sigma0 >= 0.0 && sigma0.is_finite()) {
        return Err(Error::Domain(format!("sigma0 {sigma0} must be finite and >= 0")));
    }
    let rows = samples
        .par_iter()
        .map(|s| {
            let run = || -> Result<(u32, f64, f64)> {
                let truth =
                    s.image.as_ref().ok_or_else(|| Error::Domain(format!("sample {} has no ground truth", s.id)))?;
                let noise_seed = derive_seeds(seed ^ s.seed, 1)[0];
                let sino = plan.measure(truth, geom, sigma0, noise_seed)?;
                let image = recon.reconstruct(&sino, geom)?;
                let (pred, margin) = classifier.classify(&image)?;
                Ok((pred, margin, psnr(truth, &image)?))
            };
            match run() {
                Ok((pred, margin, q)) => TaskRow {
                    sample_id: s.id,
                    true_label: s.label,
                    pred_label: Some(pred),
                    margin,
                    psnr: q,
                    error: None,
                },
                Err(e) => TaskRow {
                    sample_id: s.id,
                    true_label: s.label,
                    pred_label: None,
                    margin: f64::NAN,
                    psnr: f64::NAN,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(TaskReport::from_rows(rows))
}

/// Pairs `(i, j)` whose PSNR ordering and accuracy ordering strictly disagree.
pub fn ordering_disagreements(reports: &[TaskReport]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..reports.len() {
        for j in i + 1..reports.len() {
            let dp = reports[i].mean_psnr - reports[j].mean_psnr;
            let da = reports[i].accuracy() - reports[j].accuracy();
            if dp * da < 0.0 {
                out.push((i, j));
            }
        }
    }
    out
}
