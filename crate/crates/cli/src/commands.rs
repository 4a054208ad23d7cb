use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use camtraj::benchmark::{benchmark_filter, benchmark_queries, benchmark_spec};
use camtraj::costs::{pose_cost, PoseObjective, PromptTargets, TrajectoryObjective, flatten_weights};
use camtraj::metrics::{evaluate_trajectory, reports_csv, reports_table};
use camtraj::optimize::{adam_run, sgld_run, AdamConfig, Objective, RunResult, SgldConfig, TRANSLATION_LR_PER_EXTENT};
use camtraj::renderer::{CameraPose, ViewDistribution};
use camtraj::scene::{build_synthetic_scene, load_scene, object_centroid, save_scene, CameraIntrinsics, GaussianCloud, SceneFormat, SyntheticSpec};
use camtraj::semantics::{ground_all, QuerySet};
use camtraj::trajectory::{init_weights, BasisKind, BasisSpec, InitOptions, TrajectoryDocument, TrajectoryModel};
use camtraj::write_atomic;
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::artifacts::{trace_csv, write_frame_pair, PoseDocument};
use crate::config::RunConfig;
use crate::error::CliError;

/// World direction from an object toward the initial camera.
const INIT_DIRECTION: [f64; 3] = [0.0, -1.0, 1.0];
/// Half-width of the orientation noise on SGLD starting poses (radians).
const SGLD_AIM_JITTER: f64 = 0.2;

fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Validation(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    Ok(write_atomic(path, text.as_bytes())?)
}

fn optimization_camera(stored: &CameraIntrinsics, cfg: &RunConfig) -> Result<CameraIntrinsics, CliError> {
    Ok(stored.resized(cfg.width, cfg.height)?)
}

fn labels_from(queries: Option<&Path>) -> Result<Option<Vec<String>>, CliError> {
    Ok(match queries {
        Some(p) => Some(QuerySet::load(p)?.labels),
        None => None,
    })
}

/// A copy of `cloud` whose channel `j` is the original channel `order[j]`.
fn reorder_channels(cloud: &GaussianCloud, order: &[usize]) -> Result<GaussianCloud, CliError> {
    if order.iter().copied().eq(0..cloud.prompt_count()) {
        return Ok(cloud.clone());
    }
    let flags = order.iter().map(|&i| cloud.channel_flags(i)).collect::<Result<Vec<_>, _>>()?;
    let mut out = cloud.clone();
    for (j, f) in flags.iter().enumerate() {
        out = out.with_channel(j, f, order.len())?;
    }
    Ok(out)
}

pub struct SynthArgs {
    pub spec: Option<PathBuf>,
    pub benchmark: bool,
    pub seed: u64,
    pub out: PathBuf,
    pub binary: bool,
    pub queries_out: Option<PathBuf>,
    pub config_out: Option<PathBuf>,
    pub config: Option<PathBuf>,
}

pub fn synth(a: &SynthArgs) -> Result<String, CliError> {
    let cfg = load_config(a.config.as_deref())?;
    let spec: SyntheticSpec = match (&a.spec, a.benchmark) {
        (Some(path), false) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
            toml::from_str(&text).map_err(|e| CliError::Validation(format!("invalid scene spec {}: {e}", path.display())))?
        }
        (None, true) => benchmark_spec(),
        _ => return Err(CliError::Usage("pass exactly one of --spec and --benchmark".into())),
    };
    let cloud = build_synthetic_scene(&spec, a.seed)?;
    let k = CameraIntrinsics::default().resized(cfg.width, cfg.height)?;
    let format = if a.binary { SceneFormat::Binary } else { SceneFormat::Text };
    save_scene(&cloud, &k, &a.out, format)?;
    if let Some(q) = &a.queries_out {
        if !a.benchmark {
            return Err(CliError::Usage("--queries-out needs --benchmark".into()));
        }
        benchmark_queries().save(q)?;
    }
    if let Some(c) = &a.config_out {
        let f = if a.benchmark { benchmark_filter(&spec) } else { cfg.filter };
        let mut text = String::from("# grounding filter for this scene\n");
        let _ = writeln!(text, "percentile = {}", f.percentile);
        let _ = writeln!(text, "dbscan_eps = {}", f.dbscan_eps.map_or("auto".into(), |e| e.to_string()));
        let _ = writeln!(text, "dbscan_min_pts = {}", f.dbscan_min_pts);
        write_text(c, &text)?;
    }
    Ok(format!("wrote {} Gaussians to {}\n", cloud.len(), a.out.display()))
}

pub struct GroundArgs {
    pub scene: PathBuf,
    pub queries: PathBuf,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
}

pub fn ground(a: &GroundArgs) -> Result<String, CliError> {
    let cfg = load_config(a.config.as_deref())?;
    let (cloud, k) = load_scene(&a.scene)?;
    let queries = QuerySet::load(&a.queries)?;
    if queries.dim() != cloud.embedding_dim() {
        return Err(CliError::Validation(format!(
            "query dimension {} does not match scene embedding dimension {}",
            queries.dim(),
            cloud.embedding_dim()
        )));
    }
    let grounded = ground_all(&cloud, &queries, &cfg.filter)?;
    save_scene(&grounded, &k, &a.out, SceneFormat::Text)?;
    let mut s = String::from("prompt  label           count   centroid                      radius\n");
    for (i, label) in queries.labels.iter().enumerate() {
        let count = grounded.channel_flags(i)?.iter().filter(|f| **f).count();
        let (c, r) = object_centroid(&grounded, i)?;
        let _ = writeln!(s, "{i:<6}  {label:<14}  {count:>5}   ({:>7.3}, {:>7.3}, {:>7.3})   {r:.3}", c.x, c.y, c.z);
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Pose,
    Trajectory,
    Sgld,
}

pub struct OptimizeArgs {
    pub scene: PathBuf,
    pub queries: Option<PathBuf>,
    pub mode: Mode,
    pub out: PathBuf,
    pub seed: u64,
    pub config: Option<PathBuf>,
}

pub fn optimize(a: &OptimizeArgs) -> Result<String, CliError> {
    let cfg = load_config(a.config.as_deref())?;
    let (cloud, stored_k) = load_scene(&a.scene)?;
    let labels = labels_from(a.queries.as_deref())?;
    let k = optimization_camera(&stored_k, &cfg)?;
    let render_k = stored_k.resized(cfg.render_width, cfg.render_height)?;
    ensure_dir(&a.out)?;
    match a.mode {
        Mode::Trajectory => {
            let order = cfg.prompt_indices(labels.as_deref(), cloud.prompt_count())?;
            let cloud = reorder_channels(&cloud, &order)?;
            optimize_trajectory(&cloud, &k, &render_k, &cfg, a.seed, &a.out)
        }
        Mode::Pose | Mode::Sgld => {
            let prompt = cfg.pose_prompt(labels.as_deref(), cloud.prompt_count())?;
            if a.mode == Mode::Pose {
                optimize_pose(&cloud, prompt, &k, &render_k, &cfg, a.seed, &a.out)
            } else {
                optimize_sgld(&cloud, prompt, &k, &render_k, &cfg, a.seed, &a.out)
            }
        }
    }
}

fn basis_for(cfg: &RunConfig, prompts: usize) -> Result<BasisSpec, CliError> {
    let base = BasisSpec::default_for(cfg.basis, prompts)?;
    let size = cfg.basis_size.unwrap_or(base.size);
    Ok(match cfg.basis {
        BasisKind::Rbf => match cfg.rbf_sigma {
            Some(s) => BasisSpec::rbf_with_sigma(size, s)?,
            None => BasisSpec::rbf(size)?,
        },
        BasisKind::Waypoint => BasisSpec::waypoint(size)?,
        BasisKind::Polynomial => BasisSpec::polynomial(size)?,
    })
}

fn translation_lr(cfg: &RunConfig, targets: &PromptTargets) -> f64 {
    cfg.translation_lr.unwrap_or(TRANSLATION_LR_PER_EXTENT * targets.extent())
}

fn adam(cfg: &RunConfig, mut base: AdamConfig) -> AdamConfig {
    base.beta1 = cfg.beta1;
    base.beta2 = cfg.beta2;
    base.eps = cfg.adam_eps;
    base
}

fn write_keyframes(
    dir: &Path,
    cloud: &GaussianCloud,
    model: &TrajectoryModel,
    prompts: usize,
    keyframes: usize,
    k: &CameraIntrinsics,
) -> Result<(), CliError> {
    for j in 0..keyframes {
        let t = (j as f64 + 0.5) / keyframes as f64;
        let pose = model.eval_pose(t)?;
        write_frame_pair(dir, j, t, cloud, &pose, k, TrajectoryModel::prompt_at(t, prompts))?;
    }
    Ok(())
}

fn optimize_trajectory(
    cloud: &GaussianCloud,
    k: &CameraIntrinsics,
    render_k: &CameraIntrinsics,
    cfg: &RunConfig,
    seed: u64,
    out: &Path,
) -> Result<String, CliError> {
    let n = cloud.prompt_count();
    if n == 0 {
        return Err(CliError::Validation("scene has no prompt channels; run `ground` first".into()));
    }
    let targets = PromptTargets::from_cloud(cloud, n)?;
    let basis = basis_for(cfg, n)?;
    let pairs: Vec<(Vector3<f64>, f64)> = targets.centroids.iter().copied().zip(targets.object_radii.iter().copied()).collect();
    let init = init_weights(
        &basis,
        &pairs,
        &InitOptions {
            direction: Vector3::from(INIT_DIRECTION),
            distance_factor: cfg.init_distance_factor,
            jitter: cfg.init_jitter,
            seed,
            ..InitOptions::default()
        },
    )?;
    let iterations = cfg.iterations.unwrap_or(200);
    let adam_cfg = adam(cfg, AdamConfig::for_trajectory(cfg.rotation_lr, translation_lr(cfg, &targets), basis.size, iterations));
    let objective = TrajectoryObjective { cloud, intrinsics: *k, basis: basis.clone(), targets, config: cfg.cost.clone() };
    let run = adam_run(&objective, &flatten_weights(&init.weights), &adam_cfg, |_, _, _| {})?;
    let model = objective.model(&run.params)?;
    let doc = TrajectoryDocument { model, prompt_count: n };
    doc.save(out.join("trajectory.txt"), cfg.eval.keyframes)?;
    write_text(&out.join("trace.csv"), &trace_csv(&run.trace))?;
    write_keyframes(out, cloud, &doc.model, n, cfg.eval.keyframes, render_k)?;
    Ok(summary(&run, "trajectory", out))
}

fn summary(run: &RunResult, what: &str, out: &Path) -> String {
    let first = run.trace.first().map_or(f64::NAN, |e| e.value);
    let last = run.trace.last().map_or(f64::NAN, |e| e.value);
    format!("{what}: {} iterations, cost {first:.5} -> {last:.5}; outputs in {}\n", run.trace.len(), out.display())
}

/// Look-at pose from the default direction, perturbed by `init_jitter`.
fn initial_pose(cloud: &GaussianCloud, prompt: usize, cfg: &RunConfig, seed: u64) -> Result<Vec<f64>, CliError> {
    let (c, r) = object_centroid(cloud, prompt)?;
    let eye = c + Vector3::from(INIT_DIRECTION).normalize() * cfg.init_distance_factor * r.max(1e-3);
    let mut p = CameraPose::look_at(eye, c, Vector3::z())?.params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in p.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += cfg.init_jitter * z;
    }
    Ok(p.as_slice().to_vec())
}

fn final_cost(objective: &dyn Objective, params: &[f64], iterations: usize) -> Result<f64, CliError> {
    Ok(objective.value(params, iterations)?)
}

fn optimize_pose(
    cloud: &GaussianCloud,
    prompt: usize,
    k: &CameraIntrinsics,
    render_k: &CameraIntrinsics,
    cfg: &RunConfig,
    seed: u64,
    out: &Path,
) -> Result<String, CliError> {
    let objective = PoseObjective::new(cloud, *k, prompt, cfg.cost.clone())?;
    let (_, r) = object_centroid(cloud, prompt)?;
    let iterations = cfg.iterations.unwrap_or(400);
    let trans_lr = cfg.translation_lr.unwrap_or(TRANSLATION_LR_PER_EXTENT * 2.0 * r);
    let run = adam_run(&objective, &initial_pose(cloud, prompt, cfg, seed)?, &adam(cfg, AdamConfig::for_pose(cfg.rotation_lr, trans_lr, iterations)), |_, _, _| {})?;
    let pose = CameraPose::from_params(&run.params);
    let cost = final_cost(&objective, &run.params, iterations)?;
    let doc = PoseDocument { prompt, poses: vec![(pose, cost)] };
    write_text(&out.join("pose.txt"), &doc.to_text())?;
    write_text(&out.join("trace.csv"), &trace_csv(&run.trace))?;
    write_frame_pair(out, 0, 0.0, cloud, &pose, render_k, prompt)?;
    Ok(summary(&run, "pose", out))
}

fn optimize_sgld(
    cloud: &GaussianCloud,
    prompt: usize,
    k: &CameraIntrinsics,
    render_k: &CameraIntrinsics,
    cfg: &RunConfig,
    seed: u64,
    out: &Path,
) -> Result<String, CliError> {
    let objective = PoseObjective::new(cloud, *k, prompt, cfg.cost.clone())?;
    let (c, r) = object_centroid(cloud, prompt)?;
    let near = cfg.init_distance_factor * r.max(1e-3);
    let views = ViewDistribution::ring(near, 2.0 * near, SGLD_AIM_JITTER);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inits: Vec<Vec<f64>> = (0..cfg.sgld_batch)
        .map(|_| views.sample(&mut rng, &c).map(|p| p.params().as_slice().to_vec()))
        .collect::<Result<_, _>>()?;
    let temperature = match cfg.sgld_temperature {
        Some(t) => t,
        None => {
            let costs = inits
                .iter()
                .map(|p| pose_cost(cloud, &CameraPose::from_params(p), k, prompt, &cfg.cost, cfg.cost.prior_weight, false))
                .collect::<Result<Vec<_>, _>>()?;
            1e-4 * (costs.iter().map(|c| c.breakdown.total).sum::<f64>() / costs.len() as f64).abs()
        }
    };
    let iterations = cfg.iterations.unwrap_or(200);
    let (rs, ts) = (cfg.sgld_rotation_scale, cfg.sgld_translation_scale);
    let sgld = SgldConfig {
        step_size: cfg.sgld_step,
        temperature,
        iterations,
        seed,
        scale: vec![rs, rs, rs, ts, ts, ts],
    };
    let runs = sgld_run(&objective, &inits, &sgld)?;
    let mut poses = Vec::with_capacity(runs.len());
    for (m, run) in runs.iter().enumerate() {
        let pose = CameraPose::from_params(&run.params);
        poses.push((pose, final_cost(&objective, &run.params, iterations)?));
        write_text(&out.join(format!("trace_{m:03}.csv")), &trace_csv(&run.trace))?;
        write_frame_pair(out, m, 0.0, cloud, &pose, render_k, prompt)?;
    }
    write_text(&out.join("poses.txt"), &PoseDocument { prompt, poses }.to_text())?;
    Ok(format!(
        "sgld: {} members x {iterations} iterations at temperature {temperature:.3e}; outputs in {}\n",
        runs.len(),
        out.display()
    ))
}

pub struct EvalArgs {
    pub scene: PathBuf,
    pub queries: Option<PathBuf>,
    pub trajectories: Vec<PathBuf>,
    pub labels: Vec<String>,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
}

pub fn eval(a: &EvalArgs) -> Result<String, CliError> {
    let cfg = load_config(a.config.as_deref())?;
    if a.trajectories.is_empty() {
        return Err(CliError::Usage("at least one --trajectory is required".into()));
    }
    if !a.labels.is_empty() && a.labels.len() != a.trajectories.len() {
        return Err(CliError::Usage("give one --label per --trajectory, or none".into()));
    }
    let (cloud, stored_k) = load_scene(&a.scene)?;
    let labels = labels_from(a.queries.as_deref())?;
    let k = optimization_camera(&stored_k, &cfg)?;
    let order = cfg.prompt_indices(labels.as_deref(), cloud.prompt_count())?;
    let mut reports = Vec::new();
    for (i, path) in a.trajectories.iter().enumerate() {
        let doc = TrajectoryDocument::load(path)?;
        let channels: Vec<usize> = if cfg.prompts.is_empty() { (0..doc.prompt_count).collect() } else { order.clone() };
        if channels.len() != doc.prompt_count {
            return Err(CliError::Validation(format!(
                "{} was optimized for {} prompts but {} are configured",
                path.display(),
                doc.prompt_count,
                channels.len()
            )));
        }
        for &c in &channels {
            if c >= cloud.prompt_count() {
                let name = labels.as_ref().and_then(|l| l.get(c)).map_or(String::new(), |l| format!(" ({l})"));
                return Err(CliError::Validation(format!(
                    "prompt {c}{name} has no channel in {}; run `ground` first",
                    a.scene.display()
                )));
            }
        }
        let view = reorder_channels(&cloud, &channels)?;
        let report = evaluate_trajectory(&view, &doc.model, &k, doc.prompt_count, &cfg.eval)?;
        let label = a.labels.get(i).cloned().unwrap_or_else(|| doc.model.basis.kind.name().to_string());
        reports.push((label, report));
    }
    dedupe_labels(&mut reports);
    ensure_dir(&a.out)?;
    write_text(&a.out.join("report.csv"), &reports_csv(&reports))?;
    let table = reports_table(&reports);
    write_text(&a.out.join("report.txt"), &table)?;
    Ok(table)
}

fn dedupe_labels<T>(reports: &mut [(String, T)]) {
    let names: Vec<String> = reports.iter().map(|(l, _)| l.clone()).collect();
    for (i, (label, _)) in reports.iter_mut().enumerate() {
        if names.iter().filter(|n| *n == label).count() > 1 {
            let nth = names[..i].iter().filter(|n| **n == names[i]).count() + 1;
            *label = format!("{label}-{nth}");
        }
    }
}

pub struct RenderArgs {
    pub scene: PathBuf,
    pub queries: Option<PathBuf>,
    pub trajectory: Option<PathBuf>,
    pub pose: Option<PathBuf>,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
}

pub fn render(a: &RenderArgs) -> Result<String, CliError> {
    let cfg = load_config(a.config.as_deref())?;
    let (cloud, stored_k) = load_scene(&a.scene)?;
    let render_k = stored_k.resized(cfg.render_width, cfg.render_height)?;
    ensure_dir(&a.out)?;
    match (&a.trajectory, &a.pose) {
        (Some(path), None) => {
            let labels = labels_from(a.queries.as_deref())?;
            let doc = TrajectoryDocument::load(path)?;
            let order = if cfg.prompts.is_empty() {
                (0..doc.prompt_count).collect()
            } else {
                cfg.prompt_indices(labels.as_deref(), cloud.prompt_count())?
            };
            let view = reorder_channels(&cloud, &order)?;
            view.check_channel(doc.prompt_count.saturating_sub(1))?;
            write_keyframes(&a.out, &view, &doc.model, doc.prompt_count, cfg.eval.keyframes, &render_k)?;
            Ok(format!("rendered {} keyframes to {}\n", cfg.eval.keyframes, a.out.display()))
        }
        (None, Some(path)) => {
            let doc = PoseDocument::load(path)?;
            cloud.check_channel(doc.prompt)?;
            for (i, (pose, _)) in doc.poses.iter().enumerate() {
                write_frame_pair(&a.out, i, 0.0, &cloud, pose, &render_k, doc.prompt)?;
            }
            Ok(format!("rendered {} poses to {}\n", doc.poses.len(), a.out.display()))
        }
        _ => Err(CliError::Usage("pass exactly one of --trajectory and --pose".into())),
    }
}
