//! One function per subcommand. Each reads its settings, writes the resolved
//! echo and its outputs under `out`, and returns a one-line summary.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use ctlab::framelet::FrameletSystem;
use ctlab::grid::export_pgm;
use ctlab::hyperlearn::{fit_hyperparameters, LearnConfig, LearnMode, Loss};
use ctlab::phantom::{derive_seeds, generate_dataset, Manifest, NoiseModel, PhantomSpec, Sample};
use ctlab::plot::plot_csv;
use ctlab::scanmdp::{
    evaluate_policy, reinforce_train, EpisodeConfig, GreedyOraclePolicy, RandomPolicy, ReinforceConfig, ScanEnv,
    ScanPolicy, SoftmaxParams, SoftmaxPolicy, UniformPolicy,
};
use ctlab::solvers::{
    admm_reconstruct, hqs_reconstruct, sart_in_place, AdmmConfig, CgInit, HqsConfig, Reconstructor,
};
use ctlab::taskpipe::{ordering_disagreements, pipeline_eval, train_classifier, SensingPlan};
use ctlab::{psnr, ImageGrid, ProjectionGeometry, Sinogram};

use crate::settings::Settings;

/// Parses `SIZE:ANGLES`.
pub fn parse_geom(text: &str) -> Result<ProjectionGeometry> {
    let (size, angles) = text.split_once(':').ok_or_else(|| anyhow!("geometry {text:?} is not SIZE:ANGLES"))?;
    let size: usize = size.trim().parse().map_err(|_| anyhow!("bad image size in geometry {text:?}"))?;
    let angles: usize = angles.trim().parse().map_err(|_| anyhow!("bad angle count in geometry {text:?}"))?;
    Ok(ProjectionGeometry::new(size, angles)?)
}

fn geometry(s: &mut Settings) -> Result<ProjectionGeometry> {
    parse_geom(&s.require::<String>("geom")?)
}

/// Validates the settings, creates `out` and writes the echo.
fn prepare(s: &Settings, out: &Path) -> Result<()> {
    s.finish()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    s.write_echo(out)
}

/// One value broadcast to every level, or exactly one value per level.
fn per_level(s: &mut Settings, key: &str, default: &str, levels: usize) -> Result<Vec<f64>> {
    let values: Vec<f64> = s.list(key, default)?;
    match values.len() {
        1 => Ok(vec![values[0]; levels]),
        n if n == levels => Ok(values),
        n => bail!("{key} has {n} values for {levels} levels"),
    }
}

fn cg_settings(s: &mut Settings) -> Result<(CgInit, f64, usize)> {
    let init: CgInit = s.get("cg_init", "warm".to_string())?.parse()?;
    Ok((init, s.get("cg_tol", ctlab::solvers::DEFAULT_CG_TOL)?, s.get("cg_max_iters", ctlab::solvers::DEFAULT_CG_MAX_ITERS)?))
}

fn hqs_settings(s: &mut Settings, default_iters: usize) -> Result<(FrameletSystem, HqsConfig)> {
    let levels = s.get("levels", 2usize)?;
    let system = FrameletSystem::new(levels)?;
    let lambdas = per_level(s, "lambda", "0.01", levels)?;
    let gammas = per_level(s, "gamma", "1", levels)?;
    let mut cfg = HqsConfig::new(lambdas, gammas, s.get("iters", default_iters)?);
    (cfg.cg_init, cfg.cg_tol, cfg.cg_max_iters) = cg_settings(s)?;
    cfg.validate(levels)?;
    Ok((system, cfg))
}

fn reconstructor(s: &mut Settings, default_iters: usize) -> Result<Reconstructor> {
    let algo: String = s.get("algo", "hqs".to_string())?;
    match algo.as_str() {
        "sart" => Ok(Reconstructor::Sart { iters: s.get("iters", default_iters)?, relax: s.get("relax", 1.0)? }),
        "hqs" => {
            let (system, cfg) = hqs_settings(s, default_iters)?;
            Ok(Reconstructor::Hqs { system, cfg })
        }
        "admm" => {
            let levels = s.get("levels", 2usize)?;
            let system = FrameletSystem::new(levels)?;
            let lambdas = per_level(s, "lambda", "0.01", levels)?;
            let mut cfg = AdmmConfig::new(lambdas, s.get("gamma", 1.0)?, s.get("iters", default_iters)?);
            (cfg.cg_init, cfg.cg_tol, cfg.cg_max_iters) = cg_settings(s)?;
            cfg.validate(levels)?;
            Ok(Reconstructor::Admm { system, cfg })
        }
        other => bail!("unknown algorithm {other:?} (expected sart, hqs or admm)"),
    }
}

fn load_samples(path: &str) -> Result<Vec<Sample>> {
    let samples = Manifest::read(path)?.load_samples()?;
    if samples.is_empty() {
        bail!("dataset {path} is empty");
    }
    Ok(samples)
}

fn ground_truths(samples: &[Sample], path: &str) -> Result<Vec<ImageGrid>> {
    samples
        .iter()
        .map(|s| s.image.clone().ok_or_else(|| anyhow!("sample {} in {path} has no ground truth", s.id)))
        .collect()
}

fn check_image_size(images: &[ImageGrid], geom: &ProjectionGeometry) -> Result<()> {
    if let Some(img) = images.iter().find(|i| i.size() != geom.image_size) {
        bail!("dataset image side {} does not match geometry size {}", img.size(), geom.image_size);
    }
    Ok(())
}

fn fmt_list(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",")
}

pub fn gen_data(s: &mut Settings, out: &Path) -> Result<String> {
    let count: usize = s.get("n", 20)?;
    let geom = match s.opt::<String>("geom")? {
        Some(g) => parse_geom(&g)?,
        None => ProjectionGeometry::new(s.get("size", 64)?, s.get("angles", 180)?)?,
    };
    let sigma: f64 = s.get("sigma", 0.0)?;
    let seed: u64 = s.get("seed", 0)?;
    let kind: String = s.get("phantom", "ellipses".to_string())?;
    let seeds = derive_seeds(seed, count);
    let specs: Vec<PhantomSpec> = match kind.as_str() {
        "ellipses" => {
            let range = (s.get("min_ellipses", 1)?, s.get("max_ellipses", 4)?);
            seeds.into_iter().map(|sd| PhantomSpec::random_ellipses(geom.image_size, range, sd)).collect()
        }
        "shepp_logan" => {
            seeds.into_iter().map(|sd| PhantomSpec { seed: sd, ..PhantomSpec::shepp_logan(geom.image_size) }).collect()
        }
        other => bail!("unknown phantom {other:?} (expected ellipses or shepp_logan)"),
    };
    prepare(s, out)?;
    let manifest = generate_dataset(&specs, &geom, NoiseModel { sigma }, &geom.all_angles(), out)?;
    Ok(format!(
        "gen-data: {} samples ({}x{}, {} angles, sigma {sigma}) -> {}",
        manifest.len(),
        geom.image_size,
        geom.image_size,
        geom.num_angles,
        out.display()
    ))
}

/// SART with a per-sweep data-misfit trace.
fn sart_traced(sino: &Sinogram, geom: &ProjectionGeometry, iters: usize, relax: f64) -> Result<(ImageGrid, String)> {
    let mut u = vec![0.0; geom.num_pixels()];
    let mut trace = String::from("iter,data_misfit\n");
    let mut proj = vec![0.0; sino.data().len()];
    sart_in_place(sino, geom, iters, relax, &mut u, |it, cur| {
        geom.forward_into(cur, sino.angles(), &mut proj);
        let misfit: f64 = proj.iter().zip(sino.data()).map(|(p, f)| 0.5 * (p - f) * (p - f)).sum();
        trace.push_str(&format!("{},{misfit}\n", it + 1));
    })?;
    Ok((ImageGrid::new(geom.image_size, u)?, trace))
}

pub fn recon(s: &mut Settings, out: &Path) -> Result<String> {
    let sino_path: String = s.require("sino")?;
    let geom = geometry(s)?;
    let truth_path: Option<String> = s.opt("truth")?;
    let method = reconstructor(s, 10)?;
    prepare(s, out)?;
    let sino = Sinogram::load(&sino_path)?;
    let truth = truth_path.as_deref().map(ImageGrid::load).transpose()?;
    let (image, trace) = match &method {
        Reconstructor::Sart { iters, relax } => sart_traced(&sino, &geom, *iters, *relax)?,
        Reconstructor::Hqs { system, cfg } => {
            let (u, t) = hqs_reconstruct(&sino, &geom, system, cfg, None)?;
            (u, t.to_csv())
        }
        Reconstructor::Admm { system, cfg } => {
            let (u, t) = admm_reconstruct(&sino, &geom, system, cfg, None)?;
            (u, t.to_csv())
        }
    };
    image.save(out.join("recon.tgrd"))?;
    export_pgm(&image, out.join("recon.pgm"))?;
    let trace_path = out.join("trace.csv");
    fs::write(&trace_path, trace).with_context(|| format!("writing {}", trace_path.display()))?;
    let quality = match &truth {
        Some(t) => format!(", PSNR {:.2} dB", psnr(t, &image)?),
        None => String::new(),
    };
    let algo = match method {
        Reconstructor::Sart { .. } => "sart",
        Reconstructor::Hqs { .. } => "hqs",
        Reconstructor::Admm { .. } => "admm",
    };
    Ok(format!("recon: {algo} on {} rows{quality} -> {}", sino.num_rows(), out.display()))
}

pub fn fit_hyper(s: &mut Settings, out: &Path) -> Result<String> {
    let data: String = s.require("data")?;
    let geom = geometry(s)?;
    let (system, base) = hqs_settings(s, 5)?;
    let defaults = LearnConfig::default();
    let learn = LearnConfig {
        mode: s.get("mode", "supervised".to_string())?.parse::<LearnMode>()?,
        loss: s.get("loss", "mse".to_string())?.parse::<Loss>()?,
        reg_weight: s.get("reg_weight", defaults.reg_weight)?,
        grid_points: s.get("grid_points", defaults.grid_points)?,
        grid_span: s.get("grid_span", defaults.grid_span)?,
        nm_max_evals: s.get("nm_evals", defaults.nm_max_evals)?,
        seed: s.get("seed", defaults.seed)?,
    };
    learn.validate()?;
    prepare(s, out)?;
    let samples = load_samples(&data)?;
    let fit = fit_hyperparameters(&samples, &geom, &system, &base, &learn)?;
    fit.log.write_csv(out.join("search_log.csv"))?;
    let best = fit.config(&base);
    let best_text = format!(
        "levels = {}\nlambda = {}\ngamma = {}\nobjective = {}\n",
        system.levels(),
        fmt_list(&best.lambdas),
        fmt_list(&best.gammas),
        fit.best_objective
    );
    let best_path = out.join("best.txt");
    fs::write(&best_path, best_text).with_context(|| format!("writing {}", best_path.display()))?;
    Ok(format!(
        "fit-hyper: {} evaluations, best objective {:.6e}, lambda [{}], gamma [{}] -> {}",
        fit.log.records.len(),
        fit.best_objective,
        fmt_list(&best.lambdas),
        fmt_list(&best.gammas),
        out.display()
    ))
}

/// Scanning template plus the images that drive the episodes.
fn scan_setup(s: &mut Settings) -> Result<(EpisodeConfig, Vec<ImageGrid>, u64)> {
    let data: String = s.require("data")?;
    let geom = geometry(s)?;
    let sigma0: f64 = s.get("sigma0", 0.1)?;
    let steps: usize = s.get("steps", 20)?;
    let seed: u64 = s.get("seed", 0)?;
    let images = ground_truths(&load_samples(&data)?, &data)?;
    check_image_size(&images, &geom)?;
    let template = EpisodeConfig::new(geom, images[0].clone(), sigma0, steps, seed);
    template.validate()?;
    Ok((template, images, seed))
}

pub fn train_policy(s: &mut Settings, out: &Path) -> Result<String> {
    let (template, images, seed) = scan_setup(s)?;
    let mut cfg = ReinforceConfig::new(s.get("episodes", 1000)?, s.get("lr", 0.02)?, seed);
    cfg.baseline_window = s.get("baseline_window", cfg.baseline_window)?;
    let mut params = SoftmaxParams::zeros(template.geom.num_angles);
    params.temperature = s.get("temperature", 1.0)?;
    params.validate()?;
    prepare(s, out)?;
    let env_seeds = derive_seeds(seed ^ 0x9e37_79b9, cfg.episodes);
    let outcome = reinforce_train(
        |i| {
            ScanEnv::new(EpisodeConfig {
                ground_truth: images[i % images.len()].clone(),
                seed: env_seeds[i],
                ..template.clone()
            })
        },
        params,
        &cfg,
    )?;
    outcome.params.save(out.join("policy.txt"))?;
    outcome.write_return_curve(out.join("returns.csv"))?;
    let last = outcome.moving_avg.last().copied().unwrap_or(f64::NAN);
    Ok(format!(
        "train-policy: {} episodes on {} images, final moving-average return {last:.4} dB -> {}",
        cfg.episodes,
        images.len(),
        out.display()
    ))
}

pub fn eval_policy(s: &mut Settings, out: &Path) -> Result<String> {
    let (template, images, seed) = scan_setup(s)?;
    let episodes: usize = s.get("episodes", 5)?;
    let kind: String = s.get("policy", "uniform".to_string())?;
    let policy: Box<dyn ScanPolicy> = match kind.as_str() {
        "uniform" => Box::new(UniformPolicy::new(template.max_steps)),
        "random" => Box::new(RandomPolicy),
        "greedy" => Box::new(GreedyOraclePolicy),
        "softmax" => {
            let path: String = s.require("policy_file")?;
            let decode: String = s.get("decode", "argmax".to_string())?;
            let greedy_decode = match decode.as_str() {
                "argmax" => true,
                "sample" => false,
                other => bail!("unknown decode {other:?} (expected argmax or sample)"),
            };
            let params = SoftmaxParams::load(&path)?;
            if params.num_angles() != template.geom.num_angles {
                bail!("policy has {} angles, geometry has {}", params.num_angles(), template.geom.num_angles);
            }
            Box::new(SoftmaxPolicy { params, greedy_decode })
        }
        other => bail!("unknown policy {other:?} (expected uniform, random, greedy or softmax)"),
    };
    prepare(s, out)?;
    let summary = evaluate_policy(policy.as_ref(), &images, &template, episodes, seed)?;
    summary.write_trajectories(out.join("trajectories.csv"))?;
    let table = out.join("episodes.csv");
    fs::write(&table, summary.table_csv()).with_context(|| format!("writing {}", table.display()))?;
    Ok(format!(
        "eval-policy: {} over {} episodes, final PSNR {:.3} +- {:.3} dB, mean return {:.3} dB -> {}",
        summary.policy,
        summary.episodes.len(),
        summary.mean_final_psnr,
        summary.std_final_psnr,
        summary.mean_return,
        out.display()
    ))
}

pub fn task_eval(s: &mut Settings, out: &Path) -> Result<String> {
    let train_path: String = s.require("train")?;
    let test_path: String = s.require("test")?;
    let geom = geometry(s)?;
    let sigma0: f64 = s.get("sigma0", 0.1)?;
    let views: Vec<usize> = s.list("views", "30")?;
    let budgets: Vec<f64> = s.list("budgets", "0.2,0.5,1")?;
    let source: String = s.get("classifier_from", "recon".to_string())?;
    let seed: u64 = s.get("seed", 0)?;
    let method = reconstructor(s, 5)?;
    if !matches!(source.as_str(), "recon" | "truth") {
        bail!("unknown classifier_from {source:?} (expected recon or truth)");
    }
    let plans: Vec<(usize, f64, SensingPlan)> = views
        .iter()
        .flat_map(|&v| budgets.iter().map(move |&b| (v, b, SensingPlan::uniform(geom.num_angles, v, b))))
        .collect();
    for (_, _, p) in &plans {
        p.validate(&geom)?;
    }
    prepare(s, out)?;

    let train = load_samples(&train_path)?;
    let truths = ground_truths(&train, &train_path)?;
    check_image_size(&truths, &geom)?;
    let features_from = if source == "truth" {
        truths
    } else {
        let full = SensingPlan::uniform(geom.num_angles, *views.iter().max().unwrap_or(&geom.num_angles), 1.0);
        truths
            .iter()
            .zip(&train)
            .map(|(t, smp)| Ok(method.reconstruct(&full.measure(t, &geom, sigma0, smp.seed)?, &geom)?))
            .collect::<Result<Vec<_>>>()?
    };
    let labels: Vec<u32> = train.iter().map(|smp| smp.label).collect();
    let mut classes = labels.clone();
    classes.sort_unstable();
    classes.dedup();
    let classifier = Arc::new(train_classifier(&features_from, &labels, &classes)?);

    let test = load_samples(&test_path)?;
    let mut reports = Vec::new();
    let mut table = String::from("plan,views,budget,accuracy,correct,evaluated,failed,mean_psnr,mean_margin\n");
    for (i, (v, b, plan)) in plans.iter().enumerate() {
        let report = pipeline_eval(plan, &method, &classifier, &test, &geom, sigma0, seed)?;
        report.write_csv(out.join(format!("plan_{i}.csv")))?;
        table.push_str(&format!(
            "{i},{v},{b},{},{},{},{},{},{}\n",
            report.accuracy(),
            report.correct,
            report.evaluated,
            report.failed,
            report.mean_psnr,
            report.mean_margin
        ));
        reports.push(report);
    }
    let table_path = out.join("plans.csv");
    fs::write(&table_path, table).with_context(|| format!("writing {}", table_path.display()))?;
    let pairs = ordering_disagreements(&reports);
    let mut text = String::from("plan_a,plan_b\n");
    for (a, b) in &pairs {
        text.push_str(&format!("{a},{b}\n"));
    }
    let pairs_path = out.join("disagreements.csv");
    fs::write(&pairs_path, text).with_context(|| format!("writing {}", pairs_path.display()))?;
    let acc: Vec<String> = reports.iter().map(|r| format!("{}/{}", r.correct, r.evaluated)).collect();
    Ok(format!(
        "task-eval: {} plans, accuracy [{}], {} PSNR/accuracy disagreements -> {}",
        plans.len(),
        acc.join(" "),
        pairs.len(),
        out.display()
    ))
}

pub fn plot(s: &mut Settings, out: &Path) -> Result<String> {
    let curve: String = s.require("curve")?;
    let stem = Path::new(&curve).file_stem().and_then(|x| x.to_str()).unwrap_or("curve").to_string();
    let title: String = s.get("title", stem.clone())?;
    let output: String = s.get("output", format!("{stem}.svg"))?;
    prepare(s, out)?;
    let target = out.join(&output);
    let series = plot_csv(&curve, &target, &title)?;
    Ok(format!("plot: {series} series from {curve} -> {}", target.display()))
}
