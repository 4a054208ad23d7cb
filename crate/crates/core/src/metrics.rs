//! Evaluation of optimized poses and trajectories: framing errors,
//! occlusion IoU and log dimensionless jerk.

use std::fmt::Write as _;

use crate::costs::{cost_tce, cost_tre};
use crate::error::{Error, Result};
use crate::renderer::{render_channel, CameraPose, Channel, RenderedImage};
use crate::scene::{CameraIntrinsics, GaussianCloud};
use crate::trajectory::TrajectoryModel;

/// IoU of two masks binarized at `threshold`; 1 when both are empty.
pub fn iou(a: &RenderedImage, b: &RenderedImage, threshold: f64) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch(format!(
            "masks are {}×{} and {}×{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.data.iter().step_by(a.stride).zip(b.data.iter().step_by(b.stride)) {
        let (p, q) = (*x >= threshold, *y >= threshold);
        inter += (p && q) as usize;
        union += (p || q) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// IoU between the mask rendered with the whole cloud and the mask of the
/// flagged Gaussians rendered alone; low values mean the object is hidden.
pub fn occlusion_iou(
    cloud: &GaussianCloud,
    pose: &CameraPose,
    k: &CameraIntrinsics,
    channel_index: usize,
    threshold: f64,
) -> Result<f64> {
    let full = render_channel(cloud, pose, k, Channel::Mask(channel_index))?;
    let alone = render_channel(&cloud.select_channel(channel_index)?, pose, k, Channel::Mask(channel_index))?;
    iou(&full, &alone, threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LdjComponent {
    Positional,
    Angular,
}

/// `ln(∫‖x'''‖² dt / v_peak²)` over `t ∈ [0, 1]` on an `m`-point grid, for
/// the translation or rotation-vector part of the trajectory. A trajectory
/// that never moves gives `-∞`.
pub fn ldj(model: &TrajectoryModel, component: LdjComponent, m: usize) -> Result<f64> {
    if m < 32 {
        return Err(Error::Invalid(format!("LDJ grid needs at least 32 samples, got {m}")));
    }
    let offset = match component {
        LdjComponent::Angular => 0,
        LdjComponent::Positional => 3,
    };
    let part = |v: &nalgebra::Vector6<f64>| v.fixed_rows::<3>(offset).norm();
    let velocity = model.derivative_grid(1, m)?;
    let v_peak = velocity.iter().map(part).fold(0.0, f64::max);
    if v_peak == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let jerk: Vec<f64> = model.derivative_grid(3, m)?.iter().map(|j| part(j).powi(2)).collect();
    let h = 1.0 / (m - 1) as f64;
    let integral = h * (jerk.iter().sum::<f64>() - 0.5 * (jerk[0] + jerk[m - 1]));
    Ok((integral / (v_peak * v_peak)).ln())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub keyframes: usize,
    pub threshold: f64,
    pub ldj_grid: usize,
    pub target_ratio: f64,
    /// Per-pixel centroid regularizer, as in the costs.
    pub mask_epsilon: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { keyframes: 9, threshold: 0.5, ldj_grid: 512, target_ratio: 0.25, mask_epsilon: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyframeMetrics {
    pub t: f64,
    pub prompt: usize,
    pub tce: f64,
    pub tre: f64,
    pub iou: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PromptMetrics {
    pub tce: f64,
    pub tre: f64,
    pub iou: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryReport {
    pub per_prompt: Vec<PromptMetrics>,
    pub keyframes: Vec<KeyframeMetrics>,
    pub ldj_angular: f64,
    pub ldj_positional: f64,
}

impl TrajectoryReport {
    fn mean_of(&self, f: impl Fn(&KeyframeMetrics) -> f64) -> f64 {
        self.keyframes.iter().map(f).sum::<f64>() / self.keyframes.len().max(1) as f64
    }

    pub fn mean_tce(&self) -> f64 {
        self.mean_of(|k| k.tce)
    }

    pub fn mean_tre(&self) -> f64 {
        self.mean_of(|k| k.tre)
    }

    pub fn mean_iou(&self) -> f64 {
        self.mean_of(|k| k.iou)
    }

    pub fn sample_count(&self) -> usize {
        self.keyframes.len()
    }
}

/// Scores one pose against prompt `channel_index`.
pub fn evaluate_pose(
    cloud: &GaussianCloud,
    pose: &CameraPose,
    k: &CameraIntrinsics,
    channel_index: usize,
    config: &EvalConfig,
) -> Result<(f64, f64, f64)> {
    let mask = render_channel(cloud, pose, k, Channel::Mask(channel_index))?;
    let tce = cost_tce(&mask, config.mask_epsilon * mask.pixel_count() as f64);
    let tre = cost_tre(&mask, config.target_ratio);
    let alone = render_channel(&cloud.select_channel(channel_index)?, pose, k, Channel::Mask(channel_index))?;
    Ok((tce, tre, iou(&mask, &alone, config.threshold)?))
}

/// Evaluates `K` keyframes at `t = (k+½)/K`, each against the prompt of its
/// interval, plus both jerk measures.
pub fn evaluate_trajectory(
    cloud: &GaussianCloud,
    model: &TrajectoryModel,
    k: &CameraIntrinsics,
    prompt_count: usize,
    config: &EvalConfig,
) -> Result<TrajectoryReport> {
    if prompt_count == 0 || config.keyframes == 0 {
        return Err(Error::Invalid("evaluation needs at least one prompt and one keyframe".into()));
    }
    for i in 0..prompt_count {
        cloud.check_channel(i)?;
    }
    let mut keyframes = Vec::with_capacity(config.keyframes);
    for j in 0..config.keyframes {
        let t = (j as f64 + 0.5) / config.keyframes as f64;
        let prompt = TrajectoryModel::prompt_at(t, prompt_count);
        let pose = CameraPose::from_params(model.eval_params(t)?.as_slice());
        let (tce, tre, iou) = evaluate_pose(cloud, &pose, k, prompt, config)?;
        keyframes.push(KeyframeMetrics { t, prompt, tce, tre, iou });
    }
    let mut per_prompt = vec![PromptMetrics::default(); prompt_count];
    for kf in &keyframes {
        let p = &mut per_prompt[kf.prompt];
        p.tce += kf.tce;
        p.tre += kf.tre;
        p.iou += kf.iou;
        p.samples += 1;
    }
    for p in &mut per_prompt {
        if p.samples > 0 {
            let n = p.samples as f64;
            p.tce /= n;
            p.tre /= n;
            p.iou /= n;
        }
    }
    Ok(TrajectoryReport {
        per_prompt,
        keyframes,
        ldj_angular: ldj(model, LdjComponent::Angular, config.ldj_grid)?,
        ldj_positional: ldj(model, LdjComponent::Positional, config.ldj_grid)?,
    })
}

fn fmt_metric(v: f64) -> String {
    if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v:.4}")
    }
}

/// One row per prompt plus a `mean` row for every labeled report.
pub fn reports_csv(reports: &[(String, TrajectoryReport)]) -> String {
    let mut s = String::from("method,prompt,tce,tre,iou,ldj_angular,ldj_positional,keyframes\n");
    for (label, r) in reports {
        for (i, p) in r.per_prompt.iter().enumerate() {
            let _ = writeln!(
                s,
                "{label},{i},{},{},{},{},{},{}",
                fmt_metric(p.tce),
                fmt_metric(p.tre),
                fmt_metric(p.iou),
                fmt_metric(r.ldj_angular),
                fmt_metric(r.ldj_positional),
                p.samples
            );
        }
        let _ = writeln!(
            s,
            "{label},mean,{},{},{},{},{},{}",
            fmt_metric(r.mean_tce()),
            fmt_metric(r.mean_tre()),
            fmt_metric(r.mean_iou()),
            fmt_metric(r.ldj_angular),
            fmt_metric(r.ldj_positional),
            r.sample_count()
        );
    }
    s
}

/// Aligned comparison table; `*` marks the best value in each column
/// (lowest, except IoU where highest wins).
pub fn reports_table(reports: &[(String, TrajectoryReport)]) -> String {
    let columns: [(&str, fn(&TrajectoryReport) -> f64, bool); 5] = [
        ("TCE", TrajectoryReport::mean_tce, false),
        ("TRE", TrajectoryReport::mean_tre, false),
        ("IoU", TrajectoryReport::mean_iou, true),
        ("LDJ ang", |r| r.ldj_angular, false),
        ("LDJ pos", |r| r.ldj_positional, false),
    ];
    let width = reports.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(6);
    let mut s = format!("{:<width$}", "method");
    for (name, _, _) in &columns {
        let _ = write!(s, "  {name:>10}");
    }
    s.push('\n');
    let best: Vec<f64> = columns
        .iter()
        .map(|(_, f, higher)| {
            let vals = reports.iter().map(|(_, r)| f(r));
            if *higher {
                vals.fold(f64::NEG_INFINITY, f64::max)
            } else {
                vals.fold(f64::INFINITY, f64::min)
            }
        })
        .collect();
    for (label, r) in reports {
        let _ = write!(s, "{label:<width$}");
        for ((_, f, _), b) in columns.iter().zip(&best) {
            let v = f(r);
            let mark = if reports.len() > 1 && v == *b { "*" } else { " " };
            let _ = write!(s, "  {:>9}{mark}", fmt_metric(v));
        }
        s.push('\n');
    }
    s
}
