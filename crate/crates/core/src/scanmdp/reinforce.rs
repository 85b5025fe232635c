use std::collections::VecDeque;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Mdp, ScanAction, ScanState, SoftmaxParams, StepOutcome};
use crate::error::{Error, Result};

pub const RETURN_CURVE_HEADER: &str = "episode,return,moving_avg";

#[derive(Debug, Clone, PartialEq)]
pub struct ReinforceConfig {
    pub episodes: usize,
    pub lr: f64,
    /// Number of previous episode returns averaged into the baseline.
    pub baseline_window: usize,
    pub seed: u64,
}

impl ReinforceConfig {
    pub fn new(episodes: usize, lr: f64, seed: u64) -> Self {
        ReinforceConfig { episodes, lr, baseline_window: 100, seed }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: SoftmaxParams,
    pub returns: Vec<f64>,
    /// Trailing mean of `returns` over the baseline window, current episode included.
    pub moving_avg: Vec<f64>,
}

impl TrainOutcome {
    pub fn return_curve_csv(&self) -> String {
        let mut out = format!("{RETURN_CURVE_HEADER}\n");
        for (i, (r, m)) in self.returns.iter().zip(&self.moving_avg).enumerate() {
            let _ = writeln!(out, "{i},{r},{m}");
        }
        out
    }

    pub fn write_return_curve(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.return_curve_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Episodic REINFORCE with a moving-average baseline.
///
/// `make_env(i)` supplies a fresh environment for episode `i`. After each
/// episode the weights move by `lr * sum_t grad log pi(a_t|s_t) (G_t - b)`,
/// where `b` averages the returns of the previous `baseline_window` episodes.
pub fn reinforce_train<E: Mdp>(
    mut make_env: impl FnMut(usize) -> Result<E>,
    params0: SoftmaxParams,
    cfg: &ReinforceConfig,
) -> Result<TrainOutcome> {
    if cfg.episodes == 0 {
        return Err(Error::Domain("training needs at least one episode".into()));
    }
    if !(cfg.lr >= 0.0 && cfg.lr.is_finite()) {
        return Err(Error::Domain(format!("learning rate {} must be finite and >= 0", cfg.lr)));
    }
    params0.validate()?;
    let mut params = params0;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let window = cfg.baseline_window.max(1);
    let mut recent: VecDeque<f64> = VecDeque::with_capacity(window);
    let mut returns = Vec::with_capacity(cfg.episodes);
    let mut moving_avg = Vec::with_capacity(cfg.episodes);

    for episode in 0..cfg.episodes {
        let mut env = make_env(episode)?;
        let mut grads: Vec<Vec<f64>> = Vec::new();
        let mut rewards: Vec<f64> = Vec::new();
        while !env.is_done() {
            let action = params.sample(env.state(), &mut rng)?;
            grads.push(params.grad_log_prob(env.state(), action)?);
            rewards.push(env.step(action)?.reward);
        }
        let total: f64 = rewards.iter().sum();
        let baseline = if recent.is_empty() { 0.0 } else { recent.iter().sum::<f64>() / recent.len() as f64 };

        if cfg.lr != 0.0 && !grads.is_empty() {
            let mut update = vec![0.0; params.weights.len()];
            let mut to_go = total;
            for (g, r) in grads.iter().zip(&rewards) {
                let advantage = to_go - baseline;
                for (u, gi) in update.iter_mut().zip(g) {
                    *u += gi * advantage;
                }
                to_go -= r;
            }
            if let Some(i) = update.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite policy gradient in episode {episode} at weight {i} (return {total}, baseline {baseline})"
                )));
            }
            for (w, u) in params.weights.iter_mut().zip(&update) {
                *w += cfg.lr * u;
            }
        }

        if recent.len() == window {
            recent.pop_front();
        }
        recent.push_back(total);
        returns.push(total);
        moving_avg.push(recent.iter().sum::<f64>() / recent.len() as f64);
    }
    Ok(TrainOutcome { params, returns, moving_avg })
}

/// A one-shot bandit over angles with fixed per-angle rewards.
#[derive(Debug, Clone)]
pub struct ToyBandit {
    rewards: Vec<f64>,
    state: ScanState,
}

impl ToyBandit {
    /// `rewards[k]` is paid for choosing angle `k`, whatever the dose.
    pub fn new(rewards: Vec<f64>, max_steps: usize) -> Self {
        let n = rewards.len();
        ToyBandit { rewards, state: ScanState::new(n, 1, max_steps) }
    }
}

impl Mdp for ToyBandit {
    fn state(&self) -> &ScanState {
        &self.state
    }

    fn step(&mut self, action: ScanAction) -> Result<StepOutcome> {
        let dose = self.state.applied_dose(action)?;
        self.state.record_dose(action.angle, dose);
        Ok(StepOutcome {
            reward: self.rewards[action.angle],
            done: self.state.is_terminal(),
            applied_dose: dose,
            psnr: f64::NAN,
        })
    }
}
