//! `ctlab`: command-line front end for data generation, reconstruction,
//! hyperparameter fitting, scanning policies and task evaluation.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use settings::Settings;

#[derive(Parser, Debug)]
#[command(name = "ctlab", version, about = "Desk-scale tomography experiments on synthetic phantoms")]
struct Cli {
    /// Output directory; created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Flat `key = value` settings file. Flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate phantoms, noisy sinograms and a manifest.
    GenData(GenDataArgs),
    /// Reconstruct one sinogram with SART, HQS or ADMM.
    Recon(ReconArgs),
    /// Fit HQS hyperparameters on a dataset.
    FitHyper(FitHyperArgs),
    /// Train a softmax scanning policy with REINFORCE.
    TrainPolicy(TrainPolicyArgs),
    /// Run scanning episodes with a baseline or trained policy.
    EvalPolicy(EvalPolicyArgs),
    /// Measure, reconstruct and classify under uniform sensing plans.
    TaskEval(TaskEvalArgs),
    /// Draw an SVG line chart from a CSV curve.
    Plot(PlotArgs),
}

/// Builds the override list from optional flag fields; keys are the field names.
macro_rules! overrides {
    ($args:expr; $($field:ident),* $(,)?) => {
        vec![$((stringify!($field), $args.$field.as_ref().map(|v| v.to_string()))),*]
    };
}

/// Reconstruction flags shared by recon, fit-hyper and task-eval.
#[derive(Args, Debug, Default)]
struct SolverArgs {
    /// sart, hqs or admm.
    #[arg(long)]
    algo: Option<String>,
    /// Framelet levels.
    #[arg(long)]
    levels: Option<usize>,
    /// Sparsity weight; one value or one per level, comma-separated.
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<String>,
    /// Coupling weight; one value or one per level (ADMM uses one).
    #[arg(long, allow_negative_numbers = true)]
    gamma: Option<String>,
    /// Outer iterations (SART sweeps for sart).
    #[arg(long)]
    iters: Option<usize>,
    /// SART relaxation.
    #[arg(long, allow_negative_numbers = true)]
    relax: Option<f64>,
    /// zeros, warm or backprojection.
    #[arg(long)]
    cg_init: Option<String>,
    #[arg(long)]
    cg_tol: Option<f64>,
    #[arg(long)]
    cg_max_iters: Option<usize>,
}

impl SolverArgs {
    fn overrides(&self) -> Vec<(&'static str, Option<String>)> {
        overrides!(self; algo, levels, lambda, gamma, iters, relax, cg_init, cg_tol, cg_max_iters)
    }
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// Number of samples.
    #[arg(long)]
    n: Option<usize>,
    /// Image side length.
    #[arg(long)]
    size: Option<usize>,
    /// Number of projection angles.
    #[arg(long)]
    angles: Option<usize>,
    /// Geometry as SIZE:ANGLES; replaces --size and --angles.
    #[arg(long)]
    geom: Option<String>,
    /// Sinogram noise standard deviation.
    #[arg(long, allow_negative_numbers = true)]
    sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// ellipses or shepp_logan.
    #[arg(long)]
    phantom: Option<String>,
    #[arg(long)]
    min_ellipses: Option<usize>,
    #[arg(long)]
    max_ellipses: Option<usize>,
}

#[derive(Args, Debug)]
struct ReconArgs {
    /// Input sinogram (.tgrd with its angle sidecar).
    #[arg(long)]
    sino: Option<String>,
    /// Geometry as SIZE:ANGLES.
    #[arg(long)]
    geom: Option<String>,
    /// Optional ground truth image for PSNR.
    #[arg(long)]
    truth: Option<String>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug)]
struct FitHyperArgs {
    /// Dataset directory or manifest.csv.
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    geom: Option<String>,
    /// supervised or unsupervised.
    #[arg(long)]
    mode: Option<String>,
    /// mse or log_mse.
    #[arg(long)]
    loss: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    reg_weight: Option<f64>,
    #[arg(long)]
    grid_points: Option<usize>,
    /// Grid half-width in natural-log units.
    #[arg(long, allow_negative_numbers = true)]
    grid_span: Option<f64>,
    #[arg(long)]
    nm_evals: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    solver: SolverArgs,
}

/// Scanning environment flags shared by train-policy and eval-policy.
#[derive(Args, Debug)]
struct ScanArgs {
    /// Dataset whose ground-truth images drive the episodes.
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    geom: Option<String>,
    /// Noise level of a row measured with the whole dose budget.
    #[arg(long, allow_negative_numbers = true)]
    sigma0: Option<f64>,
    /// Maximum scanning steps per episode.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ScanArgs {
    fn overrides(&self) -> Vec<(&'static str, Option<String>)> {
        overrides!(self; data, geom, sigma0, steps, seed)
    }
}

#[derive(Args, Debug)]
struct TrainPolicyArgs {
    #[command(flatten)]
    scan: ScanArgs,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    lr: Option<f64>,
    #[arg(long)]
    baseline_window: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    temperature: Option<f64>,
}

#[derive(Args, Debug)]
struct EvalPolicyArgs {
    #[command(flatten)]
    scan: ScanArgs,
    /// uniform, random, greedy or softmax.
    #[arg(long)]
    policy: Option<String>,
    /// Weights written by train-policy; required for softmax.
    #[arg(long)]
    policy_file: Option<String>,
    /// argmax or sample (softmax only).
    #[arg(long)]
    decode: Option<String>,
    /// Episodes per image.
    #[arg(long)]
    episodes: Option<usize>,
}

#[derive(Args, Debug)]
struct TaskEvalArgs {
    /// Dataset used to fit the classifier.
    #[arg(long)]
    train: Option<String>,
    /// Dataset that is scanned and classified.
    #[arg(long)]
    test: Option<String>,
    #[arg(long)]
    geom: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    sigma0: Option<f64>,
    /// Number of equispaced views; comma-separated list.
    #[arg(long)]
    views: Option<String>,
    /// Dose budgets; comma-separated list.
    #[arg(long)]
    budgets: Option<String>,
    /// recon (full-budget reconstructions) or truth (clean images).
    #[arg(long)]
    classifier_from: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// CSV whose first column is x and remaining columns are series.
    #[arg(long)]
    curve: Option<String>,
    #[arg(long)]
    title: Option<String>,
    /// SVG file name inside the output directory.
    #[arg(long)]
    output: Option<String>,
}

fn settings(cli: &Cli) -> anyhow::Result<Settings> {
    let config = cli.config.as_deref();
    let (name, ov) = match &cli.command {
        Command::GenData(a) => (
            "gen-data",
            overrides!(a; n, size, angles, geom, sigma, seed, phantom, min_ellipses, max_ellipses),
        ),
        Command::Recon(a) => ("recon", [overrides!(a; sino, geom, truth), a.solver.overrides()].concat()),
        Command::FitHyper(a) => (
            "fit-hyper",
            [
                overrides!(a; data, geom, mode, loss, reg_weight, grid_points, grid_span, nm_evals, seed),
                a.solver.overrides(),
            ]
            .concat(),
        ),
        Command::TrainPolicy(a) => (
            "train-policy",
            [a.scan.overrides(), overrides!(a; episodes, lr, baseline_window, temperature)].concat(),
        ),
        Command::EvalPolicy(a) => {
            ("eval-policy", [a.scan.overrides(), overrides!(a; policy, policy_file, decode, episodes)].concat())
        }
        Command::TaskEval(a) => (
            "task-eval",
            [overrides!(a; train, test, geom, sigma0, views, budgets, classifier_from, seed), a.solver.overrides()]
                .concat(),
        ),
        Command::Plot(a) => ("plot", overrides!(a; curve, title, output)),
    };
    Settings::new(name, config, ov)
}

fn run(cli: &Cli) -> anyhow::Result<String> {
    let mut s = settings(cli)?;
    match &cli.command {
        Command::GenData(_) => commands::gen_data(&mut s, &cli.out),
        Command::Recon(_) => commands::recon(&mut s, &cli.out),
        Command::FitHyper(_) => commands::fit_hyper(&mut s, &cli.out),
        Command::TrainPolicy(_) => commands::train_policy(&mut s, &cli.out),
        Command::EvalPolicy(_) => commands::eval_policy(&mut s, &cli.out),
        Command::TaskEval(_) => commands::task_eval(&mut s, &cli.out),
        Command::Plot(_) => commands::plot(&mut s, &cli.out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            // Library errors already embed their source, so skip causes that repeat.
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg.push_str(": ");
                    msg.push_str(&c);
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
