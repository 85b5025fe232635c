use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{EpisodeConfig, Mdp, ScanEnv, ScanPolicy};
use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::phantom::derive_seeds;

pub const TRAJECTORY_HEADER: &str = "episode,step,angle,dose,reward,psnr";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// 1-based step number.
    pub step: usize,
    pub angle: usize,
    /// Dose actually applied.
    pub dose: f64,
    pub reward: f64,
    pub psnr: f64,
    pub dose_rest: f64,
    pub dose_spent_total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub steps: Vec<StepRecord>,
    pub initial_psnr: f64,
    pub final_psnr: f64,
    pub total_return: f64,
}

impl Episode {
    /// Trajectory rows tagged with `episode`, without header.
    pub fn csv_rows(&self, episode: usize) -> String {
        let mut out = String::new();
        for s in &self.steps {
            let _ = writeln!(out, "{episode},{},{},{},{},{}", s.step, s.angle, s.dose, s.reward, s.psnr);
        }
        out
    }
}

/// Plays `policy` on `env` from its current state until the episode ends.
/// `policy_seed` drives the policy's own randomness.
pub fn run_episode(env: &mut ScanEnv, policy: &dyn ScanPolicy, policy_seed: u64) -> Result<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(policy_seed);
    let initial_psnr = env.current_psnr();
    let mut steps = Vec::new();
    let mut total_return = 0.0;
    while !env.is_done() {
        let action = policy.act(env, &mut rng)?;
        let out = env.step(action)?;
        total_return += out.reward;
        let state = env.state();
        steps.push(StepRecord {
            step: state.step,
            angle: action.angle,
            dose: out.applied_dose,
            reward: out.reward,
            psnr: out.psnr,
            dose_rest: state.dose_rest,
            dose_spent_total: state.total_dose_spent(),
        });
    }
    Ok(Episode { steps, initial_psnr, final_psnr: env.current_psnr(), total_return })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub image: usize,
    pub repeat: usize,
    pub seed: u64,
    pub episode: Episode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySummary {
    pub policy: String,
    pub mean_final_psnr: f64,
    pub std_final_psnr: f64,
    pub mean_return: f64,
    pub episodes: Vec<EpisodeSummary>,
}

impl PolicySummary {
    pub fn trajectory_csv(&self) -> String {
        let mut out = format!("{TRAJECTORY_HEADER}\n");
        for (i, e) in self.episodes.iter().enumerate() {
            out.push_str(&e.episode.csv_rows(i));
        }
        out
    }

    pub fn write_trajectories(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.trajectory_csv()).map_err(|e| Error::io(path, e))
    }

    /// Per-episode table: image, repeat, seed, steps, dose used, return, final PSNR.
    pub fn table_csv(&self) -> String {
        let mut out = String::from("image,repeat,seed,steps,dose_used,return,final_psnr\n");
        for e in &self.episodes {
            let dose: f64 = e.episode.steps.iter().map(|s| s.dose).sum();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                e.image,
                e.repeat,
                e.seed,
                e.episode.steps.len(),
                dose,
                e.episode.total_return,
                e.episode.final_psnr
            );
        }
        out
    }
}

/// Runs `episodes_per_image` seeded episodes on every test image. Each
/// `(image, repeat)` pair gets the same environment seed for every policy.
pub fn evaluate_policy(
    policy: &dyn ScanPolicy,
    images: &[ImageGrid],
    template: &EpisodeConfig,
    episodes_per_image: usize,
    seed: u64,
) -> Result<PolicySummary> {
    if images.is_empty() || episodes_per_image == 0 {
        return Err(Error::Domain("policy evaluation needs at least one image and episode".into()));
    }
    let seeds = derive_seeds(seed, images.len() * episodes_per_image);
    let jobs: Vec<(usize, usize, u64)> = (0..images.len())
        .flat_map(|i| (0..episodes_per_image).map(move |r| (i, r)))
        .zip(seeds)
        .map(|((i, r), s)| (i, r, s))
        .collect();
    let episodes = jobs
        .par_iter()
        .map(|&(image, repeat, seed)| {
            let cfg = EpisodeConfig { ground_truth: images[image].clone(), seed, ..template.clone() };
            let mut env = ScanEnv::new(cfg)?;
            let episode = run_episode(&mut env, policy, seed ^ 0x5bd1_e995)?;
            Ok(EpisodeSummary { image, repeat, seed, episode })
        })
        .collect::<Result<Vec<_>>>()?;
    let count = episodes.len() as f64;
    let mean = episodes.iter().map(|e| e.episode.final_psnr).sum::<f64>() / count;
    let var = episodes.iter().map(|e| (e.episode.final_psnr - mean).powi(2)).sum::<f64>() / count;
    Ok(PolicySummary {
        policy: policy.name(),
        mean_final_psnr: mean,
        std_final_psnr: var.sqrt(),
        mean_return: episodes.iter().map(|e| e.episode.total_return).sum::<f64>() / count,
        episodes,
    })
}
