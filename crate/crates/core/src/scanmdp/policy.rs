use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{valid_actions, Mdp, ScanAction, ScanEnv, ScanState, DOSE_MENU};
use crate::error::{Error, Result};

/// Chooses the next action for a scanning episode.
pub trait ScanPolicy: Send + Sync {
    fn name(&self) -> String;
    fn act(&self, env: &ScanEnv, rng: &mut ChaCha8Rng) -> Result<ScanAction>;
}

/// Equispaced angles at one fixed dose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniformPolicy {
    pub steps: usize,
}

impl UniformPolicy {
    pub fn new(steps: usize) -> Self {
        UniformPolicy { steps: steps.max(1) }
    }

    /// Largest menu dose not above `1 / steps`, else the smallest.
    pub fn dose_bin(&self) -> usize {
        let share = 1.0 / self.steps as f64;
        (0..DOSE_MENU.len()).rev().find(|&d| DOSE_MENU[d] <= share).unwrap_or(0)
    }

    /// Angle planned for step `i` out of `num_angles`.
    pub fn planned_angle(&self, i: usize, num_angles: usize) -> usize {
        let s = self.steps.min(num_angles);
        i * num_angles / s
    }
}

impl ScanPolicy for UniformPolicy {
    fn name(&self) -> String {
        format!("uniform-{}", self.steps)
    }

    fn act(&self, env: &ScanEnv, _rng: &mut ChaCha8Rng) -> Result<ScanAction> {
        let state = env.state();
        let n = state.num_angles();
        let i = state.step;
        let mut angle = if i < self.steps.min(n) { self.planned_angle(i, n) } else { n };
        if angle >= n || state.visited[angle] {
            angle = (0..n)
                .find(|&k| !state.visited[k])
                .ok_or_else(|| Error::Domain("no unvisited angle left".into()))?;
        }
        Ok(ScanAction::new(angle, self.dose_bin()))
    }
}

/// Uniformly random unvisited angle and dose bin.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RandomPolicy;

impl ScanPolicy for RandomPolicy {
    fn name(&self) -> String {
        "random".into()
    }

    fn act(&self, env: &ScanEnv, rng: &mut ChaCha8Rng) -> Result<ScanAction> {
        let state = env.state();
        let open: Vec<usize> = (0..state.num_angles()).filter(|&k| !state.visited[k]).collect();
        if open.is_empty() {
            return Err(Error::Domain("no unvisited angle left".into()));
        }
        let angle = open[rng.random_range(0..open.len())];
        let dose_bin = rng.random_range(0..DOSE_MENU.len());
        Ok(ScanAction::new(angle, dose_bin))
    }
}

/// One-step lookahead with access to the ground truth: simulates every legal
/// action on a copy of the environment and takes the best realised reward.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GreedyOraclePolicy;

impl ScanPolicy for GreedyOraclePolicy {
    fn name(&self) -> String {
        "greedy-oracle".into()
    }

    fn act(&self, env: &ScanEnv, _rng: &mut ChaCha8Rng) -> Result<ScanAction> {
        let mut best: Option<(f64, ScanAction)> = None;
        for action in env.valid_actions() {
            let mut trial = env.clone();
            let reward = trial.step(action)?.reward;
            if best.is_none_or(|(r, _)| reward > r) {
                best = Some((reward, action));
            }
        }
        best.map(|(_, a)| a).ok_or_else(|| Error::Domain("no unvisited angle left".into()))
    }
}

/// Weights of the linear softmax policy.
///
/// The logit of angle `k` with dose bin `d` is
///
/// ```text
/// ( sum_m V[d][m] visited[k+m] + sum_m C[d][m] dose[k+m]
///   + r[d] dose_rest + s[d] t/T + b[k][d] ) / temperature
/// ```
///
/// with angle offsets taken cyclically, so the mask and dose maps enter
/// through kernels shared by all angles.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxParams {
    num_angles: usize,
    pub weights: Vec<f64>,
    pub temperature: f64,
}

impl SoftmaxParams {
    pub fn zeros(num_angles: usize) -> Self {
        let nd = DOSE_MENU.len();
        SoftmaxParams { num_angles, weights: vec![0.0; nd * (3 * num_angles + 2)], temperature: 1.0 }
    }

    pub fn num_angles(&self) -> usize {
        self.num_angles
    }

    /// Plain-text form: `num_angles`, `temperature` and comma-separated `weights` lines.
    pub fn to_text(&self) -> String {
        let w: Vec<String> = self.weights.iter().map(|v| format!("{v:e}")).collect();
        format!("num_angles = {}\ntemperature = {:e}\nweights = {}\n", self.num_angles, self.temperature, w.join(","))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut fields = std::collections::HashMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Domain(format!("policy line {line:?} lacks '='")))?;
            fields.insert(k.trim(), v.trim());
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| Error::Domain(format!("policy file lacks {k}")));
        let bad = |k: &str| Error::Domain(format!("policy field {k} is malformed"));
        let num_angles: usize = get("num_angles")?.parse().map_err(|_| bad("num_angles"))?;
        let mut params = SoftmaxParams::zeros(num_angles);
        params.temperature = get("temperature")?.parse().map_err(|_| bad("temperature"))?;
        params.weights = get("weights")?
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| bad("weights")))
            .collect::<Result<_>>()?;
        params.validate()?;
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_text(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    fn visited_kernel(&self, d: usize) -> usize {
        d * self.num_angles
    }

    fn dose_kernel(&self, d: usize) -> usize {
        (DOSE_MENU.len() + d) * self.num_angles
    }

    fn rest_weight(&self, d: usize) -> usize {
        2 * DOSE_MENU.len() * self.num_angles + d
    }

    fn time_weight(&self, d: usize) -> usize {
        2 * DOSE_MENU.len() * self.num_angles + DOSE_MENU.len() + d
    }

    fn bias(&self, k: usize, d: usize) -> usize {
        2 * DOSE_MENU.len() * self.num_angles + 2 * DOSE_MENU.len() + k * DOSE_MENU.len() + d
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numerical("policy weights are not finite".into()));
        }
        let expected = DOSE_MENU.len() * (3 * self.num_angles + 2);
        if self.weights.len() != expected {
            return Err(Error::Shape(format!("{} policy weights, expected {expected}", self.weights.len())));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Domain(format!("temperature {} must be positive", self.temperature)));
        }
        Ok(())
    }

    fn check_state(&self, state: &ScanState) -> Result<()> {
        if state.num_angles() != self.num_angles {
            return Err(Error::Shape(format!(
                "policy for {} angles, state has {}",
                self.num_angles,
                state.num_angles()
            )));
        }
        if !state.has_unvisited() {
            return Err(Error::Domain("all angles visited".into()));
        }
        Ok(())
    }

    fn time_feature(state: &ScanState) -> f64 {
        state.step as f64 / state.max_steps.max(1) as f64
    }

    fn logit(&self, state: &ScanState, k: usize, d: usize) -> f64 {
        let n = self.num_angles;
        let w = &self.weights;
        let (vk, dk) = (self.visited_kernel(d), self.dose_kernel(d));
        let mut z = 0.0;
        for m in 0..n {
            let j = (k + m) % n;
            if state.visited[j] {
                z += w[vk + m] + w[dk + m] * state.dose_spent[j];
            }
        }
        z += w[self.rest_weight(d)] * state.dose_rest;
        z += w[self.time_weight(d)] * Self::time_feature(state);
        z += w[self.bias(k, d)];
        z / self.temperature
    }

    /// Legal actions with their probabilities.
    pub fn distribution(&self, state: &ScanState) -> Result<Vec<(ScanAction, f64)>> {
        self.check_state(state)?;
        let actions = valid_actions(state);
        let logits: Vec<f64> = actions.iter().map(|a| self.logit(state, a.angle, a.dose_bin)).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        Ok(actions.into_iter().zip(exps).map(|(a, e)| (a, e / total)).collect())
    }

    /// Probability of every (angle, dose bin) pair; visited angles get exactly 0.
    pub fn probabilities(&self, state: &ScanState) -> Result<Vec<Vec<f64>>> {
        let mut p = vec![vec![0.0; DOSE_MENU.len()]; self.num_angles];
        for (a, q) in self.distribution(state)? {
            p[a.angle][a.dose_bin] = q;
        }
        Ok(p)
    }

    pub fn log_prob(&self, state: &ScanState, action: ScanAction) -> Result<f64> {
        let dist = self.distribution(state)?;
        dist.iter()
            .find(|(a, _)| *a == action)
            .map(|(_, p)| p.ln())
            .ok_or_else(|| Error::Domain(format!("action {action:?} is not legal here")))
    }

    pub fn sample(&self, state: &ScanState, rng: &mut ChaCha8Rng) -> Result<ScanAction> {
        let dist = self.distribution(state)?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (a, p) in &dist {
            acc += p;
            if u < acc {
                return Ok(*a);
            }
        }
        Ok(dist.last().expect("at least one legal action").0)
    }

    /// Most probable action; ties go to the first in angle-major order.
    pub fn argmax(&self, state: &ScanState) -> Result<ScanAction> {
        let dist = self.distribution(state)?;
        let mut best = dist[0];
        for d in &dist[1..] {
            if d.1 > best.1 {
                best = *d;
            }
        }
        Ok(best.0)
    }

    /// Gradient of `log pi(action | state)` with respect to `weights`.
    pub fn grad_log_prob(&self, state: &ScanState, action: ScanAction) -> Result<Vec<f64>> {
        let dist = self.distribution(state)?;
        if !dist.iter().any(|(a, _)| *a == action) {
            return Err(Error::Domain(format!("action {action:?} is not legal here")));
        }
        let n = self.num_angles;
        let t = Self::time_feature(state);
        let mut g = vec![0.0; self.weights.len()];
        for (a, p) in dist {
            let c = (if a == action { 1.0 } else { 0.0 } - p) / self.temperature;
            if c == 0.0 {
                continue;
            }
            let (k, d) = (a.angle, a.dose_bin);
            let (vk, dk) = (self.visited_kernel(d), self.dose_kernel(d));
            for m in 0..n {
                let j = (k + m) % n;
                if state.visited[j] {
                    g[vk + m] += c;
                    g[dk + m] += c * state.dose_spent[j];
                }
            }
            g[self.rest_weight(d)] += c * state.dose_rest;
            g[self.time_weight(d)] += c * t;
            g[self.bias(k, d)] += c;
        }
        Ok(g)
    }
}

/// A softmax policy that either samples or plays its most probable action.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    pub params: SoftmaxParams,
    pub greedy_decode: bool,
}

impl ScanPolicy for SoftmaxPolicy {
    fn name(&self) -> String {
        if self.greedy_decode { "softmax-argmax".into() } else { "softmax".into() }
    }

    fn act(&self, env: &ScanEnv, rng: &mut ChaCha8Rng) -> Result<ScanAction> {
        if self.greedy_decode {
            self.params.argmax(env.state())
        } else {
            self.params.sample(env.state(), rng)
        }
    }
}
