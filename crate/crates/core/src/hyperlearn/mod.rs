//! Fitting reconstruction hyperparameters to a dataset.
//!
//! The parameter vector is `theta = (ln lambda_1..L, ln gamma_1..L)` of an
//! HQS reconstructor. The search evaluates the baseline, a log-spaced grid
//! centred on it, then runs Nelder-Mead from the grid winner, and returns the
//! best point seen.

mod nelder_mead;

pub use nelder_mead::{nelder_mead, NelderMeadResult};

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::framelet::FrameletSystem;
use crate::grid::{psnr_from_mse, ImageGrid, QualityReport};
use crate::phantom::Sample;
use crate::projector::{forward_project, ProjectionGeometry};
use crate::solvers::{hqs_reconstruct, HqsConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LearnMode {
    /// Compare reconstructions with ground-truth images.
    Supervised,
    /// Compare re-projected reconstructions with the measurements.
    Unsupervised,
}

/// Per-sample loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    /// Mean squared error.
    Mse,
    /// `10 log10(MSE)`, capped like PSNR. In supervised mode the mean loss is
    /// exactly minus the mean PSNR.
    LogMse,
}

impl std::str::FromStr for LearnMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supervised" => Ok(LearnMode::Supervised),
            "unsupervised" => Ok(LearnMode::Unsupervised),
            other => Err(Error::Domain(format!("unknown learning mode {other:?}"))),
        }
    }
}

impl std::str::FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(Loss::Mse),
            "log_mse" | "logmse" => Ok(Loss::LogMse),
            other => Err(Error::Domain(format!("unknown loss {other:?}"))),
        }
    }
}

impl Loss {
    fn score(self, mse: f64) -> f64 {
        match self {
            Loss::Mse => mse,
            Loss::LogMse => -psnr_from_mse(mse),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnConfig {
    pub mode: LearnMode,
    pub loss: Loss,
    /// Ridge weight on `|theta|^2`.
    pub reg_weight: f64,
    /// Grid points per dimension; 1 keeps the baseline only.
    pub grid_points: usize,
    /// Half-width of the grid in natural-log units.
    pub grid_span: f64,
    /// Nelder-Mead evaluation budget; 0 disables the local phase.
    pub nm_max_evals: usize,
    pub seed: u64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            mode: LearnMode::Supervised,
            loss: Loss::Mse,
            reg_weight: 0.0,
            grid_points: 3,
            grid_span: std::f64::consts::LN_10,
            nm_max_evals: 40,
            seed: 0,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.reg_weight >= 0.0 && self.reg_weight.is_finite()) {
            return Err(Error::Domain(format!("reg_weight {} must be >= 0", self.reg_weight)));
        }
        if self.grid_points == 0 {
            return Err(Error::Domain("grid_points must be at least 1".into()));
        }
        if !(self.grid_span >= 0.0 && self.grid_span.is_finite()) {
            return Err(Error::Domain(format!("grid_span {} invalid", self.grid_span)));
        }
        Ok(())
    }
}

/// Log-space hyperparameters of an HQS reconstructor.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    pub log_lambdas: Vec<f64>,
    pub log_gammas: Vec<f64>,
}

impl Theta {
    pub fn from_config(cfg: &HqsConfig) -> Result<Self> {
        if cfg.lambdas.iter().chain(&cfg.gammas).any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Domain("log-space search needs strictly positive lambda and gamma".into()));
        }
        Ok(Theta {
            log_lambdas: cfg.lambdas.iter().map(|v| v.ln()).collect(),
            log_gammas: cfg.gammas.iter().map(|v| v.ln()).collect(),
        })
    }

    fn from_vec(v: &[f64]) -> Self {
        let l = v.len() / 2;
        Theta { log_lambdas: v[..l].to_vec(), log_gammas: v[l..].to_vec() }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.log_lambdas.iter().chain(&self.log_gammas).copied().collect()
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.log_lambdas.iter().map(|v| v.exp()).collect()
    }

    pub fn gammas(&self) -> Vec<f64> {
        self.log_gammas.iter().map(|v| v.exp()).collect()
    }

    /// `base` with lambda and gamma replaced.
    pub fn apply_to(&self, base: &HqsConfig) -> HqsConfig {
        HqsConfig { lambdas: self.lambdas(), gammas: self.gammas(), ..base.clone() }
    }

    pub fn norm_sq(&self) -> f64 {
        self.to_vec().iter().map(|v| v * v).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchPhase {
    Baseline,
    Grid,
    NelderMead,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchRecord {
    pub eval_id: usize,
    pub phase: SearchPhase,
    pub theta: Theta,
    pub objective: f64,
    /// NaN when ground truth is unavailable or the solver failed.
    pub mean_psnr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchLog {
    pub records: Vec<SearchRecord>,
}

impl SearchLog {
    pub fn to_csv(&self) -> String {
        let levels = self.records.first().map_or(0, |r| r.theta.log_lambdas.len());
        let mut out = String::from("eval_id");
        for l in 1..=levels {
            out.push_str(&format!(",lambda_{l}"));
        }
        for l in 1..=levels {
            out.push_str(&format!(",gamma_{l}"));
        }
        out.push_str(",objective,mean_psnr\n");
        for r in &self.records {
            out.push_str(&r.eval_id.to_string());
            for v in r.theta.lambdas().iter().chain(&r.theta.gammas()) {
                out.push_str(&format!(",{v:e}"));
            }
            out.push_str(&format!(",{:e},{}\n", r.objective, r.mean_psnr));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Record with the smallest objective; ties go to the earliest.
    pub fn best(&self) -> Option<&SearchRecord> {
        self.records.iter().fold(None, |best: Option<&SearchRecord>, r| match best {
            Some(b) if b.objective <= r.objective || r.objective.is_nan() => Some(b),
            _ => Some(r),
        })
    }

    fn best_in(&self, phase: SearchPhase) -> Option<&SearchRecord> {
        let subset = SearchLog { records: self.records.iter().filter(|r| r.phase == phase).cloned().collect() };
        subset.best().and_then(|b| self.records.iter().find(|r| r.eval_id == b.eval_id))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub best: Theta,
    pub best_objective: f64,
    /// Best point of the grid phase (the Nelder-Mead start).
    pub grid_winner: Theta,
    pub log: SearchLog,
}

impl FitResult {
    pub fn config(&self, base: &HqsConfig) -> HqsConfig {
        self.best.apply_to(base)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleEvaluation {
    pub id: usize,
    /// Against ground truth; `None` for measurement-only samples.
    pub quality: Option<QualityReport>,
    /// `|A F(f) - f|_2`.
    pub data_consistency: f64,
    /// `|A F(f) - f|^2` divided by the number of measurements.
    pub data_mse: f64,
}

impl SampleEvaluation {
    /// Equality on everything except wall-clock runtime.
    pub fn same_result(&self, other: &SampleEvaluation) -> bool {
        let q = match (&self.quality, &other.quality) {
            (Some(a), Some(b)) => a.mse.to_bits() == b.mse.to_bits() && a.psnr.to_bits() == b.psnr.to_bits(),
            (None, None) => true,
            _ => false,
        };
        q && self.id == other.id
            && self.data_consistency.to_bits() == other.data_consistency.to_bits()
            && self.data_mse.to_bits() == other.data_mse.to_bits()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub samples: Vec<SampleEvaluation>,
    /// Mean over samples with ground truth; NaN if there are none.
    pub mean_psnr: f64,
    pub mean_mse: f64,
    pub mean_data_consistency: f64,
}

/// Reconstructs every sample with `cfg` and scores the results.
pub fn evaluate_reconstructor(
    samples: &[Sample],
    geom: &ProjectionGeometry,
    system: &FrameletSystem,
    cfg: &HqsConfig,
) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Domain("cannot evaluate on an empty dataset".into()));
    }
    let per_sample = samples
        .par_iter()
        .map(|s| evaluate_sample(s, geom, system, cfg))
        .collect::<Result<Vec<_>>>()?;
    let with_truth: Vec<&QualityReport> = per_sample.iter().filter_map(|s| s.quality.as_ref()).collect();
    let mean = |xs: &mut dyn Iterator<Item = f64>, count: usize| {
        if count == 0 { f64::NAN } else { xs.sum::<f64>() / count as f64 }
    };
    Ok(Evaluation {
        mean_psnr: mean(&mut with_truth.iter().map(|q| q.psnr), with_truth.len()),
        mean_mse: mean(&mut with_truth.iter().map(|q| q.mse), with_truth.len()),
        mean_data_consistency: mean(&mut per_sample.iter().map(|s| s.data_consistency), per_sample.len()),
        samples: per_sample,
    })
}

fn evaluate_sample(
    sample: &Sample,
    geom: &ProjectionGeometry,
    system: &FrameletSystem,
    cfg: &HqsConfig,
) -> Result<SampleEvaluation> {
    let start = Instant::now();
    let recon = if sample.sino.num_rows() == 0 {
        ImageGrid::zeros(geom.image_size)?
    } else {
        hqs_reconstruct(&sample.sino, geom, system, cfg, None)?.0
    };
    let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    let reproj = forward_project(&recon, geom, sample.sino.angles())?;
    let residual_sq: f64 =
        reproj.data().iter().zip(sample.sino.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    let count = sample.sino.data().len().max(1);
    let quality = match &sample.image {
        Some(truth) => Some(QualityReport::from_images(truth, &recon, runtime_ms)?),
        None => None,
    };
    Ok(SampleEvaluation {
        id: sample.id,
        quality,
        data_consistency: residual_sq.sqrt(),
        data_mse: residual_sq / count as f64,
    })
}

/// Objective and mean PSNR at one parameter point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointScore {
    pub objective: f64,
    pub mean_psnr: f64,
}

/// Empirical training objective at `theta`. Solver failures score +infinity.
pub fn score_theta(
    samples: &[Sample],
    geom: &ProjectionGeometry,
    system: &FrameletSystem,
    base: &HqsConfig,
    learn: &LearnConfig,
    theta: &Theta,
) -> PointScore {
    let failed = PointScore { objective: f64::INFINITY, mean_psnr: f64::NAN };
    let eval = match evaluate_reconstructor(samples, geom, system, &theta.apply_to(base)) {
        Ok(e) => e,
        Err(_) => return failed,
    };
    let mut total = 0.0;
    for s in &eval.samples {
        let mse = match (learn.mode, &s.quality) {
            (LearnMode::Supervised, Some(q)) => q.mse,
            (LearnMode::Supervised, None) => return failed,
            (LearnMode::Unsupervised, _) => s.data_mse,
        };
        total += learn.loss.score(mse);
    }
    let objective = total / eval.samples.len() as f64 + learn.reg_weight * theta.norm_sq();
    PointScore { objective: if objective.is_nan() { f64::INFINITY } else { objective }, mean_psnr: eval.mean_psnr }
}

/// Grid of `points` log-spaced values per dimension around `center`, in
/// lexicographic order with the first dimension varying slowest.
pub fn log_grid(center: &[f64], points: usize, span: f64) -> Vec<Vec<f64>> {
    let offsets: Vec<f64> = if points <= 1 {
        vec![0.0]
    } else {
        (0..points).map(|i| span * (2.0 * i as f64 / (points - 1) as f64 - 1.0)).collect()
    };
    let mut out = vec![Vec::new()];
    for c in center {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                offsets.iter().map(move |o| {
                    let mut p = prefix.clone();
                    p.push(c + o);
                    p
                })
            })
            .collect();
    }
    out
}

/// Fits `(lambda_l, gamma_l)` on `samples`.
pub fn fit_hyperparameters(
    samples: &[Sample],
    geom: &ProjectionGeometry,
    system: &FrameletSystem,
    base: &HqsConfig,
    learn: &LearnConfig,
) -> Result<FitResult> {
    if samples.is_empty() {
        return Err(Error::Domain("cannot fit on an empty dataset".into()));
    }
    learn.validate()?;
    base.validate(system.levels())?;
    if learn.mode == LearnMode::Supervised && samples.iter().any(|s| s.image.is_none()) {
        return Err(Error::Domain("supervised fitting needs ground-truth images".into()));
    }
    let base_theta = Theta::from_config(base)?;
    let center = base_theta.to_vec();

    let mut search = Search { log: SearchLog::default(), cache: HashMap::new() };
    let score = |v: &[f64]| score_theta(samples, geom, system, base, learn, &Theta::from_vec(v));

    search.record(SearchPhase::Baseline, &center, score(&center));

    let grid: Vec<Vec<f64>> =
        log_grid(&center, learn.grid_points, learn.grid_span).into_iter().filter(|p| !search.seen(p)).collect();
    let scores: Vec<PointScore> = grid.par_iter().map(|p| score(p)).collect();
    for (p, s) in grid.iter().zip(scores) {
        search.record(SearchPhase::Grid, p, s);
    }
    let grid_winner = search
        .log
        .best_in(SearchPhase::Grid)
        .filter(|g| g.objective < search.log.records[0].objective)
        .unwrap_or(&search.log.records[0])
        .theta
        .clone();

    if learn.nm_max_evals > 0 {
        let start = grid_winner.to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(learn.seed);
        let base_step = if learn.grid_points > 1 {
            2.0 * learn.grid_span / (learn.grid_points - 1) as f64
        } else {
            learn.grid_span.max(0.5)
        };
        let steps: Vec<f64> = start
            .iter()
            .map(|_| if rng.random::<bool>() { base_step * 0.5 } else { -base_step * 0.5 })
            .collect();
        let mut nm_search = |v: &[f64]| {
            if let Some(s) = search.cached(v) {
                return s;
            }
            let s = score(v);
            search.record(SearchPhase::NelderMead, v, s);
            s.objective
        };
        nelder_mead(&mut nm_search, &start, &steps, learn.nm_max_evals, 1e-10);
    }

    let best = search.log.best().expect("baseline is always recorded").clone();
    Ok(FitResult { best: best.theta, best_objective: best.objective, grid_winner, log: search.log })
}

struct Search {
    log: SearchLog,
    cache: HashMap<Vec<u64>, f64>,
}

impl Search {
    fn key(v: &[f64]) -> Vec<u64> {
        v.iter().map(|x| x.to_bits()).collect()
    }

    fn seen(&self, v: &[f64]) -> bool {
        self.cache.contains_key(&Self::key(v))
    }

    fn cached(&self, v: &[f64]) -> Option<f64> {
        self.cache.get(&Self::key(v)).copied()
    }

    fn record(&mut self, phase: SearchPhase, v: &[f64], s: PointScore) {
        self.cache.insert(Self::key(v), s.objective);
        self.log.records.push(SearchRecord {
            eval_id: self.log.records.len(),
            phase,
            theta: Theta::from_vec(v),
            objective: s.objective,
            mean_psnr: s.mean_psnr,
        });
    }
}
