//! Adaptive scanning as a Markov decision process.
//!
//! At each step the agent picks an unvisited projection angle and a fraction
//! of the total dose budget. The environment measures that angle with noise
//! `sigma0 / sqrt(dose)`, reconstructs from every row collected so far with a
//! few SART sweeps, and pays the improvement in reconstruction quality.

mod episode;
mod policy;
mod reinforce;

pub use episode::{
    evaluate_policy, run_episode, Episode, EpisodeSummary, PolicySummary, StepRecord, TRAJECTORY_HEADER,
};
pub use policy::{
    GreedyOraclePolicy, RandomPolicy, ScanPolicy, SoftmaxParams, SoftmaxPolicy, UniformPolicy,
};
pub use reinforce::{reinforce_train, ReinforceConfig, ToyBandit, TrainOutcome, RETURN_CURVE_HEADER};

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::grid::{psnr, ImageGrid, Sinogram};
use crate::projector::ProjectionGeometry;
use crate::solvers::sart;

/// Dose fractions an action may request, as fractions of the total budget.
pub const DOSE_MENU: [f64; 3] = [0.02, 0.05, 0.10];

/// Remaining dose at or below this ends the episode.
pub const DOSE_EXHAUSTED: f64 = 1e-9;

pub const DEFAULT_SART_ITERS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ScanAction {
    pub angle: usize,
    /// Index into [`DOSE_MENU`].
    pub dose_bin: usize,
}

impl ScanAction {
    pub fn new(angle: usize, dose_bin: usize) -> Self {
        ScanAction { angle, dose_bin }
    }

    pub fn dose_fraction(&self) -> f64 {
        DOSE_MENU[self.dose_bin]
    }
}

/// Scores a reconstruction for the task-driven reward.
pub trait ImageScorer: Send + Sync {
    fn score(&self, image: &ImageGrid) -> Result<f64>;
}

#[derive(Clone)]
pub enum RewardMode {
    /// Change in PSNR against the ground truth.
    Psnr,
    /// Change in a task score of the reconstruction.
    TaskScore(Arc<dyn ImageScorer>),
}

impl fmt::Debug for RewardMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RewardMode::Psnr => f.write_str("Psnr"),
            RewardMode::TaskScore(_) => f.write_str("TaskScore(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeConfig {
    pub geom: ProjectionGeometry,
    pub ground_truth: ImageGrid,
    /// Noise standard deviation of a row measured with the whole budget.
    pub sigma0: f64,
    pub sart_iters: usize,
    pub sart_relax: f64,
    pub max_steps: usize,
    pub reward_mode: RewardMode,
    pub seed: u64,
}

impl EpisodeConfig {
    pub fn new(geom: ProjectionGeometry, ground_truth: ImageGrid, sigma0: f64, max_steps: usize, seed: u64) -> Self {
        EpisodeConfig {
            geom,
            ground_truth,
            sigma0,
            sart_iters: DEFAULT_SART_ITERS,
            sart_relax: 1.0,
            max_steps,
            reward_mode: RewardMode::Psnr,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geom.validate()?;
        if self.ground_truth.size() != self.geom.image_size {
            return Err(Error::Shape(format!(
                "ground truth side {} vs geometry {}",
                self.ground_truth.size(),
                self.geom.image_size
            )));
        }
        if !(self.sigma0 >= 0.0 && self.sigma0.is_finite()) {
            return Err(Error::Domain(format!("sigma0 {} must be finite and >= 0", self.sigma0)));
        }
        if self.sart_iters == 0 || !(self.sart_relax > 0.0 && self.sart_relax < 2.0) {
            return Err(Error::Domain("SART needs >= 1 iteration and relaxation in (0, 2)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanState {
    /// Rows measured so far, in angle order.
    pub collected: Sinogram,
    /// Dose applied at each angle.
    pub dose_spent: Vec<f64>,
    pub dose_rest: f64,
    pub step: usize,
    pub visited: Vec<bool>,
    pub max_steps: usize,
}

impl ScanState {
    pub fn new(num_angles: usize, detectors: usize, max_steps: usize) -> Self {
        ScanState {
            collected: Sinogram::empty(detectors),
            dose_spent: vec![0.0; num_angles],
            dose_rest: 1.0,
            step: 0,
            visited: vec![false; num_angles],
            max_steps,
        }
    }

    pub fn num_angles(&self) -> usize {
        self.visited.len()
    }

    pub fn has_unvisited(&self) -> bool {
        self.visited.iter().any(|v| !v)
    }

    /// Terminal when dose is used up, the step limit is hit, or no angle is left.
    pub fn is_terminal(&self) -> bool {
        self.dose_rest <= DOSE_EXHAUSTED || self.step >= self.max_steps || !self.has_unvisited()
    }

    pub fn total_dose_spent(&self) -> f64 {
        self.dose_spent.iter().sum()
    }

    /// Checks `action` against the state and returns the dose actually applied.
    fn applied_dose(&self, action: ScanAction) -> Result<f64> {
        if self.is_terminal() {
            return Err(Error::State("episode is already done".into()));
        }
        if action.angle >= self.num_angles() {
            return Err(Error::Domain(format!("angle {} out of range", action.angle)));
        }
        if action.dose_bin >= DOSE_MENU.len() {
            return Err(Error::Domain(format!("dose bin {} out of range", action.dose_bin)));
        }
        if self.visited[action.angle] {
            return Err(Error::Domain(format!("angle {} already visited", action.angle)));
        }
        Ok(action.dose_fraction().min(self.dose_rest))
    }

    fn record_dose(&mut self, angle: usize, dose: f64) {
        self.dose_spent[angle] = dose;
        self.visited[angle] = true;
        self.step += 1;
        // Recomputed from the ledger so conservation holds to rounding.
        self.dose_rest = 1.0 - self.total_dose_spent();
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    pub applied_dose: f64,
    /// PSNR of the reconstruction after the step.
    pub psnr: f64,
}

/// A sequential decision problem over (angle, dose) actions.
pub trait Mdp {
    fn state(&self) -> &ScanState;
    fn step(&mut self, action: ScanAction) -> Result<StepOutcome>;

    fn is_done(&self) -> bool {
        self.state().is_terminal()
    }
}

/// The CT scanning environment.
#[derive(Debug, Clone)]
pub struct ScanEnv {
    cfg: Arc<EpisodeConfig>,
    state: ScanState,
    rng: ChaCha8Rng,
    recon: ImageGrid,
    psnr: f64,
    score: f64,
    initial_psnr: f64,
}

impl ScanEnv {
    pub fn new(cfg: EpisodeConfig) -> Result<Self> {
        cfg.validate()?;
        let zero = ImageGrid::zeros(cfg.geom.image_size)?;
        let initial_psnr = psnr(&cfg.ground_truth, &zero)?;
        let score = match &cfg.reward_mode {
            RewardMode::Psnr => initial_psnr,
            RewardMode::TaskScore(s) => s.score(&zero)?,
        };
        Ok(ScanEnv {
            state: ScanState::new(cfg.geom.num_angles, cfg.geom.detectors, cfg.max_steps),
            rng: noise_rng(cfg.seed),
            recon: zero,
            psnr: initial_psnr,
            score,
            initial_psnr,
            cfg: Arc::new(cfg),
        })
    }

    /// Back to the empty scan, with the noise stream restarted from the seed.
    pub fn reset(&mut self) -> &ScanState {
        let zero = ImageGrid::zeros(self.cfg.geom.image_size).expect("validated size");
        self.score = match &self.cfg.reward_mode {
            RewardMode::Psnr => self.initial_psnr,
            RewardMode::TaskScore(s) => s.score(&zero).unwrap_or(0.0),
        };
        self.state = ScanState::new(self.cfg.geom.num_angles, self.cfg.geom.detectors, self.cfg.max_steps);
        self.rng = noise_rng(self.cfg.seed);
        self.recon = zero;
        self.psnr = self.initial_psnr;
        &self.state
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.cfg
    }

    /// Current reconstruction `I_t`.
    pub fn reconstruction(&self) -> &ImageGrid {
        &self.recon
    }

    pub fn current_psnr(&self) -> f64 {
        self.psnr
    }

    /// PSNR of the zero image, the reference for the first reward.
    pub fn initial_psnr(&self) -> f64 {
        self.initial_psnr
    }

    /// Actions that are legal in the current state.
    pub fn valid_actions(&self) -> Vec<ScanAction> {
        valid_actions(&self.state)
    }
}

impl Mdp for ScanEnv {
    fn state(&self) -> &ScanState {
        &self.state
    }

    fn step(&mut self, action: ScanAction) -> Result<StepOutcome> {
        let dose = self.state.applied_dose(action)?;
        let cfg = &self.cfg;
        let mut row = crate::projector::project_row(&cfg.ground_truth, &cfg.geom, action.angle)?;
        let sigma = if cfg.sigma0 > 0.0 { cfg.sigma0 / dose.sqrt() } else { 0.0 };
        for v in &mut row {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            *v += sigma * z;
        }
        self.state.collected.insert_row(action.angle, &row, sigma)?;
        self.state.record_dose(action.angle, dose);

        let recon = sart(&self.state.collected, &cfg.geom, cfg.sart_iters, cfg.sart_relax, None)?;
        let new_psnr = psnr(&cfg.ground_truth, &recon)?;
        let new_score = match &cfg.reward_mode {
            RewardMode::Psnr => new_psnr,
            RewardMode::TaskScore(s) => s.score(&recon)?,
        };
        let reward = new_score - self.score;
        self.score = new_score;
        self.psnr = new_psnr;
        self.recon = recon;
        Ok(StepOutcome { reward, done: self.state.is_terminal(), applied_dose: dose, psnr: new_psnr })
    }
}

fn noise_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    rng
}

/// Unvisited angles crossed with every dose bin, angle-major.
pub fn valid_actions(state: &ScanState) -> Vec<ScanAction> {
    (0..state.num_angles())
        .filter(|&k| !state.visited[k])
        .flat_map(|k| (0..DOSE_MENU.len()).map(move |d| ScanAction::new(k, d)))
        .collect()
}
