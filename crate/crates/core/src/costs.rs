//! Photogenic framing costs of a camera pose and of a whole trajectory.

use nalgebra::{DMatrix, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::optimize::{Evaluation, Objective};
use crate::renderer::{
    render_channel, render_mask_with_pose_gradient, rotvec_jacobians, CameraPose, Channel, MaskFunctional,
    RenderedImage,
};
use crate::scene::{object_centroid, CameraIntrinsics, GaussianCloud};
use crate::trajectory::{basis_eval, TrajectoryModel};

/// Which terms take part in the cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostTerms {
    pub tce: bool,
    pub tre: bool,
    pub upright: bool,
    pub prior: bool,
}

impl CostTerms {
    pub const ALL: CostTerms = CostTerms { tce: true, tre: true, upright: true, prior: true };
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostConfig {
    /// Desired fraction of the image covered by the object.
    pub target_ratio: f64,
    /// Prior distance threshold; `None` uses three times the object radius.
    pub prior_radius: Option<f64>,
    /// Prior weight at iteration 0.
    pub prior_weight: f64,
    /// Per-iteration multiplicative decay of the prior weight.
    pub prior_decay: f64,
    pub samples_per_interval: usize,
    /// Mask-centroid regularizer per pixel (scaled by `W·H`).
    pub mask_epsilon: f64,
    pub terms: CostTerms,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig {
            target_ratio: 0.25,
            prior_radius: None,
            prior_weight: 1.0,
            prior_decay: 0.99,
            samples_per_interval: 8,
            mask_epsilon: 1e-6,
            terms: CostTerms::ALL,
        }
    }
}

impl CostConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.target_ratio > 0.0
            && self.target_ratio < 1.0
            && self.prior_radius.is_none_or(|r| r > 0.0)
            && self.prior_weight >= 0.0
            && self.prior_decay > 0.0
            && self.prior_decay <= 1.0
            && self.samples_per_interval >= 1
            && self.mask_epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("invalid cost configuration {self:?}")))
        }
    }

    /// Prior weight after `iteration` decay steps.
    pub fn prior_weight_at(&self, iteration: usize) -> f64 {
        self.prior_weight * self.prior_decay.powi(iteration as i32)
    }

    pub fn radius_for(&self, object_radius: f64) -> f64 {
        self.prior_radius.unwrap_or(3.0 * object_radius.max(1e-3))
    }
}

/// Per-term values. When neither TCE nor TRE is enabled no mask is
/// rendered and `tce`, `tre` and `mask_area` are NaN.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostBreakdown {
    pub tce: f64,
    pub tre: f64,
    pub upright: f64,
    pub prior: f64,
    /// Prior weight in effect.
    pub alpha: f64,
    pub total: f64,
    /// Mean mask value.
    pub mask_area: f64,
}

impl CostBreakdown {
    fn scaled_sum(parts: &[(f64, CostBreakdown)]) -> CostBreakdown {
        let mut out = CostBreakdown::default();
        for (w, b) in parts {
            out.tce += w * b.tce;
            out.tre += w * b.tre;
            out.upright += w * b.upright;
            out.prior += w * b.prior;
            out.alpha += w * b.alpha;
            out.total += w * b.total;
            out.mask_area += w * b.mask_area;
        }
        out
    }
}

/// Soft centroid `Σ v·m(v) / (Σ m(v) + ε)` in pixel coordinates, taking
/// pixel centers at `+0.5`.
pub fn mask_centroid(mask: &RenderedImage, eps: f64) -> (f64, f64) {
    let (mut sx, mut sy, mut area) = (0.0, 0.0, 0.0);
    for y in 0..mask.height {
        for x in 0..mask.width {
            let m = mask.value(x, y);
            sx += (x as f64 + 0.5) * m;
            sy += (y as f64 + 0.5) * m;
            area += m;
        }
    }
    (sx / (area + eps), sy / (area + eps))
}

fn mask_epsilon(mask: &RenderedImage, per_pixel: f64) -> f64 {
    per_pixel * mask.pixel_count() as f64
}

/// Distance of the normalized centroid from the image center; each
/// coordinate is divided by its own image extent.
pub fn cost_tce(mask: &RenderedImage, eps: f64) -> f64 {
    let (cx, cy) = mask_centroid(mask, eps);
    let u = cx / mask.width as f64 - 0.5;
    let v = cy / mask.height as f64 - 0.5;
    (u * u + v * v).sqrt()
}

pub fn cost_tre(mask: &RenderedImage, target_ratio: f64) -> f64 {
    (mask.mean_value() - target_ratio).abs()
}

/// `−⟨e_z, Rᵀ e_x⟩`: lowest when the camera x axis points up.
pub fn cost_upright(pose: &CameraPose) -> f64 {
    -pose.rotation()[(0, 2)]
}

fn upright_gradient(pose: &CameraPose) -> [f64; 6] {
    let d = rotvec_jacobians(&pose.rotvec);
    [-d[0][(0, 2)], -d[1][(0, 2)], -d[2][(0, 2)], 0.0, 0.0, 0.0]
}

/// `max(r, ‖c − o‖) − ⟨forward, (o − c)/‖o − c‖⟩`.
pub fn cost_prior(pose: &CameraPose, object: &Vector3<f64>, radius: f64) -> Result<f64> {
    Ok(prior_with_gradient(pose, object, radius)?.0)
}

fn prior_with_gradient(pose: &CameraPose, object: &Vector3<f64>, radius: f64) -> Result<(f64, [f64; 6])> {
    let r = pose.rotation();
    let c = -(r.transpose() * pose.translation);
    let f = r.row(2).transpose();
    let diff = object - c;
    let dist = diff.norm();
    if dist < 1e-12 {
        return Err(Error::CameraAtObject);
    }
    let u = diff / dist;
    let align = f.dot(&u);
    let value = radius.max(dist) - align;

    // gradients with respect to the camera center and forward axis
    let mut gc = (f - u * align) / dist;
    if dist > radius {
        gc -= u;
    }
    let gf = -u;

    let mut grad = [0.0; 6];
    let gt = -(r * gc);
    grad[3..].copy_from_slice(gt.as_slice());
    for (k, dr) in rotvec_jacobians(&pose.rotvec).iter().enumerate() {
        let dc = -(dr.transpose() * pose.translation);
        let df = dr.row(2).transpose();
        grad[k] = gc.dot(&dc) + gf.dot(&df);
    }
    Ok((value, grad))
}

/// Weighted TCE + TRE of a mask, with the per-pixel adjoint.
struct FramingFunctional {
    tce_weight: f64,
    tre_weight: f64,
    target_ratio: f64,
    eps_per_pixel: f64,
}

impl FramingFunctional {
    fn terms(&self, mask: &RenderedImage) -> (f64, f64, Vec<f64>) {
        let (w, h) = (mask.width as f64, mask.height as f64);
        let eps = mask_epsilon(mask, self.eps_per_pixel);
        let (cx, cy) = mask_centroid(mask, eps);
        let area: f64 = mask.data.iter().step_by(mask.stride).sum();
        let u = cx / w - 0.5;
        let v = cy / h - 0.5;
        let tce = (u * u + v * v).sqrt();
        let mean = area / mask.pixel_count() as f64;
        let tre = (mean - self.target_ratio).abs();

        let mut adjoint = vec![0.0; mask.pixel_count()];
        let denom = area + eps;
        let tre_slope = self.tre_weight * (mean - self.target_ratio).signum() / mask.pixel_count() as f64;
        for y in 0..mask.height {
            for x in 0..mask.width {
                let mut g = tre_slope;
                if tce > 0.0 {
                    let dcx = (x as f64 + 0.5 - cx) / denom;
                    let dcy = (y as f64 + 0.5 - cy) / denom;
                    g += self.tce_weight * (u * dcx / w + v * dcy / h) / tce;
                }
                adjoint[y * mask.width + x] = g;
            }
        }
        (tce, tre, adjoint)
    }
}

impl MaskFunctional for FramingFunctional {
    fn evaluate(&self, mask: &RenderedImage) -> (f64, Vec<f64>) {
        let (tce, tre, adjoint) = self.terms(mask);
        (self.tce_weight * tce + self.tre_weight * tre, adjoint)
    }
}

/// Cost of one pose framing the object in `channel_index`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseCost {
    pub breakdown: CostBreakdown,
    pub gradient: Option<[f64; 6]>,
}

/// Object centroid and prior radius for each prompt channel.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTargets {
    pub centroids: Vec<Vector3<f64>>,
    pub object_radii: Vec<f64>,
}

impl PromptTargets {
    pub fn from_cloud(cloud: &GaussianCloud, prompt_count: usize) -> Result<Self> {
        let mut centroids = Vec::with_capacity(prompt_count);
        let mut object_radii = Vec::with_capacity(prompt_count);
        for i in 0..prompt_count {
            let (c, r) = object_centroid(cloud, i)?;
            centroids.push(c);
            object_radii.push(r);
        }
        Ok(PromptTargets { centroids, object_radii })
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    /// Mean object diameter, the length scale translation steps are set by.
    pub fn extent(&self) -> f64 {
        2.0 * self.object_radii.iter().sum::<f64>() / self.object_radii.len().max(1) as f64
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }
}

/// Renders mask `channel_index` once and assembles
/// `tce + tre + upright + α·prior`, skipping disabled terms.
pub fn pose_cost(
    cloud: &GaussianCloud,
    pose: &CameraPose,
    k: &CameraIntrinsics,
    channel_index: usize,
    config: &CostConfig,
    alpha: f64,
    with_gradient: bool,
) -> Result<PoseCost> {
    let (centroid, radius) = object_centroid(cloud, channel_index)?;
    pose_cost_at(cloud, pose, k, channel_index, &centroid, config.radius_for(radius), config, alpha, with_gradient)
}

#[allow(clippy::too_many_arguments)]
fn pose_cost_at(
    cloud: &GaussianCloud,
    pose: &CameraPose,
    k: &CameraIntrinsics,
    channel_index: usize,
    centroid: &Vector3<f64>,
    prior_radius: f64,
    config: &CostConfig,
    alpha: f64,
    with_gradient: bool,
) -> Result<PoseCost> {
    let terms = config.terms;
    let framing = FramingFunctional {
        tce_weight: if terms.tce { 1.0 } else { 0.0 },
        tre_weight: if terms.tre { 1.0 } else { 0.0 },
        target_ratio: config.target_ratio,
        eps_per_pixel: config.mask_epsilon,
    };
    let mut grad = [0.0; 6];
    let mut b = CostBreakdown { alpha, ..Default::default() };
    if terms.tce || terms.tre {
        let (mask, mask_grad) = if with_gradient {
            let g = render_mask_with_pose_gradient(cloud, pose, k, channel_index, &framing)?;
            (g.mask, Some(g.gradient))
        } else {
            (render_channel(cloud, pose, k, Channel::Mask(channel_index))?, None)
        };
        if let Some(g) = mask_grad {
            grad = g;
        }
        (b.tce, b.tre, _) = framing.terms(&mask);
        b.mask_area = mask.mean_value();
    } else {
        // nothing is rendered
        b.tce = f64::NAN;
        b.tre = f64::NAN;
        b.mask_area = f64::NAN;
    }
    b.upright = cost_upright(pose);
    let (prior, prior_grad) = prior_with_gradient(pose, centroid, prior_radius)?;
    b.prior = prior;

    let mut total = 0.0;
    if terms.tce {
        total += b.tce;
    }
    if terms.tre {
        total += b.tre;
    }
    if terms.upright {
        total += b.upright;
        if with_gradient {
            for (g, u) in grad.iter_mut().zip(upright_gradient(pose)) {
                *g += u;
            }
        }
    }
    if terms.prior {
        total += alpha * prior;
        if with_gradient {
            for (g, p) in grad.iter_mut().zip(prior_grad) {
                *g += alpha * p;
            }
        }
    }
    b.total = total;
    Ok(PoseCost { breakdown: b, gradient: with_gradient.then_some(grad) })
}

/// Trajectory objective value with its weight gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryCost {
    pub value: f64,
    /// Quadrature-weighted mean of the per-sample breakdowns.
    pub breakdown: CostBreakdown,
    pub gradient: Option<DMatrix<f64>>,
}

/// Midpoint-rule sample times: interval `i` of `n` gets `S` samples.
pub fn sample_times(prompt_count: usize, samples_per_interval: usize) -> Vec<(usize, f64)> {
    let (n, s) = (prompt_count, samples_per_interval);
    (0..n)
        .flat_map(|i| (0..s).map(move |j| (i, (i as f64 + (j as f64 + 0.5) / s as f64) / n as f64)))
        .collect()
}

/// `(1/(nS)) Σ L(Φ_w(t_s))` with prompt `i` active on `[i/n, (i+1)/n]`.
pub fn trajectory_cost(
    cloud: &GaussianCloud,
    model: &TrajectoryModel,
    k: &CameraIntrinsics,
    targets: &PromptTargets,
    config: &CostConfig,
    alpha: f64,
    with_gradient: bool,
) -> Result<TrajectoryCost> {
    let n = targets.len();
    if n == 0 {
        return Err(Error::Invalid("trajectory cost needs at least one prompt".into()));
    }
    let samples = sample_times(n, config.samples_per_interval);
    let weight = 1.0 / samples.len() as f64;
    let per_sample: Vec<(PoseCost, Vec<f64>)> = samples
        .par_iter()
        .map(|&(i, t)| {
            let params = model.eval_params(t)?;
            let pose = CameraPose::from_params(params.as_slice());
            let radius = config.radius_for(targets.object_radii[i]);
            let c = pose_cost_at(cloud, &pose, k, i, &targets.centroids[i], radius, config, alpha, with_gradient)?;
            Ok((c, basis_eval(&model.basis, t)?))
        })
        .collect::<Result<_>>()?;

    let mut value = 0.0;
    let mut parts = Vec::with_capacity(per_sample.len());
    let mut gradient = with_gradient.then(|| DMatrix::zeros(6, model.basis.size));
    for (cost, psi) in &per_sample {
        value += weight * cost.breakdown.total;
        parts.push((weight, cost.breakdown));
        if let (Some(gm), Some(g)) = (gradient.as_mut(), cost.gradient) {
            for j in 0..6 {
                for (col, p) in psi.iter().enumerate() {
                    gm[(j, col)] += weight * g[j] * p;
                }
            }
        }
    }
    Ok(TrajectoryCost { value, breakdown: CostBreakdown::scaled_sum(&parts), gradient })
}

/// Single-pose objective over `[r, t]` with the prior weight decaying per
/// iteration.
pub struct PoseObjective<'a> {
    pub cloud: &'a GaussianCloud,
    pub intrinsics: CameraIntrinsics,
    pub channel_index: usize,
    pub config: CostConfig,
    centroid: Vector3<f64>,
    prior_radius: f64,
}

impl<'a> PoseObjective<'a> {
    pub fn new(cloud: &'a GaussianCloud, intrinsics: CameraIntrinsics, channel_index: usize, config: CostConfig) -> Result<Self> {
        config.validate()?;
        let (centroid, radius) = object_centroid(cloud, channel_index)?;
        let prior_radius = config.radius_for(radius);
        Ok(PoseObjective { cloud, intrinsics, channel_index, config, centroid, prior_radius })
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.centroid
    }

    pub fn prior_radius(&self) -> f64 {
        self.prior_radius
    }
}

impl Objective for PoseObjective<'_> {
    fn evaluate(&self, params: &[f64], iteration: usize) -> Result<Evaluation> {
        let pose = CameraPose::from_params(params);
        let alpha = self.config.prior_weight_at(iteration);
        let c = pose_cost_at(
            self.cloud,
            &pose,
            &self.intrinsics,
            self.channel_index,
            &self.centroid,
            self.prior_radius,
            &self.config,
            alpha,
            true,
        )?;
        Ok(Evaluation {
            value: c.breakdown.total,
            gradient: c.gradient.unwrap_or_default().to_vec(),
            terms: Some(c.breakdown),
        })
    }
}

/// Trajectory objective over the flattened weights (row-major `6 × N`).
pub struct TrajectoryObjective<'a> {
    pub cloud: &'a GaussianCloud,
    pub intrinsics: CameraIntrinsics,
    pub basis: crate::trajectory::BasisSpec,
    pub targets: PromptTargets,
    pub config: CostConfig,
}

impl TrajectoryObjective<'_> {
    pub fn model(&self, params: &[f64]) -> Result<TrajectoryModel> {
        TrajectoryModel::new(self.basis.clone(), DMatrix::from_row_slice(6, self.basis.size, params))
    }
}

/// Row-major flattening of a weight matrix.
pub fn flatten_weights(w: &DMatrix<f64>) -> Vec<f64> {
    (0..w.nrows()).flat_map(|j| w.row(j).iter().copied().collect::<Vec<_>>()).collect()
}

impl Objective for TrajectoryObjective<'_> {
    fn evaluate(&self, params: &[f64], iteration: usize) -> Result<Evaluation> {
        let model = self.model(params)?;
        let alpha = self.config.prior_weight_at(iteration);
        let c = trajectory_cost(self.cloud, &model, &self.intrinsics, &self.targets, &self.config, alpha, true)?;
        let grad = c.gradient.map(|g| flatten_weights(&g)).unwrap_or_default();
        Ok(Evaluation { value: c.value, gradient: grad, terms: Some(c.breakdown) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimize::{finite_difference_gradient, relative_error};
    use crate::scene::Gaussian;
    use crate::trajectory::{BasisSpec, TrajectoryModel};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn mask(w: usize, h: usize, data: Vec<f64>) -> RenderedImage {
        let mut m = RenderedImage::zeros(w, h, 1, Channel::Mask(0));
        m.data = data;
        m
    }

    #[test]
    fn centroid_examples() {
        let mut d = vec![0.0; 32 * 32];
        d[20 * 32 + 10] = 1.0;
        assert_eq!(mask_centroid(&mask(32, 32, d), 0.0), (10.5, 20.5));
        let (cx, cy) = mask_centroid(&mask(40, 30, vec![0.7; 1200]), 0.0);
        assert!((cx - 20.0).abs() < 1e-12 && (cy - 15.0).abs() < 1e-12);
    }

    #[test]
    fn centroid_matches_summation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f64> = (0..24 * 16).map(|_| rng.random::<f64>()).collect();
        let m = mask(24, 16, data.clone());
        let eps = 1e-3;
        let (mut sx, mut sy, mut a) = (0.0, 0.0, 0.0);
        for (p, v) in data.iter().enumerate() {
            sx += ((p % 24) as f64 + 0.5) * v;
            sy += ((p / 24) as f64 + 0.5) * v;
            a += v;
        }
        let (cx, cy) = mask_centroid(&m, eps);
        assert!((cx - sx / (a + eps)).abs() < 1e-9 && (cy - sy / (a + eps)).abs() < 1e-9);
    }

    #[test]
    fn tce_examples() {
        assert!(cost_tce(&mask(10, 10, vec![1.0; 100]), 1e-9) < 1e-9);
        let mut d = vec![0.0; 100];
        d[0] = 1.0;
        // centroid at the pixel center (0.5, 0.5) of a 10×10 image, near the corner
        let got = cost_tce(&mask(10, 10, d), 0.0);
        assert!((got - (2.0f64 * 0.45 * 0.45).sqrt()).abs() < 1e-12);
        // a large image puts the corner pixel center at the corner
        let mut d = vec![0.0; 1_000_000];
        d[0] = 1.0;
        assert!((cost_tce(&mask(1000, 1000, d), 0.0) - FRAC_1_SQRT_2).abs() < 1e-3);
    }

    #[test]
    fn tre_examples() {
        let mut d = vec![0.0; 100];
        d[..25].iter_mut().for_each(|v| *v = 1.0);
        assert!(cost_tre(&mask(10, 10, d), 0.25).abs() < 1e-12);
        assert_eq!(cost_tre(&mask(10, 10, vec![0.0; 100]), 0.25), 0.25);
        assert_eq!(cost_tre(&mask(10, 10, vec![0.5; 100]), 0.25), 0.25);
    }

    #[test]
    fn upright_examples() {
        let up = CameraPose::look_at(Vector3::new(0.0, -3.0, 0.0), Vector3::zeros(), Vector3::z()).unwrap();
        assert!((cost_upright(&up) + 1.0).abs() < 1e-12);
        let level = CameraPose::look_at(Vector3::new(0.0, -3.0, 0.0), Vector3::zeros(), Vector3::x()).unwrap();
        assert!(cost_upright(&level).abs() < 1e-12);
        let pose = CameraPose::new(Vector3::new(0.3, -1.1, 0.4), Vector3::new(1.0, 2.0, 3.0));
        let col = pose.rotation().transpose() * Vector3::x();
        assert!((cost_upright(&pose) + col.z).abs() < 1e-12);
    }

    #[test]
    fn prior_examples() {
        let o = Vector3::new(0.5, 0.2, 0.1);
        let r = 2.0;
        let facing = CameraPose::look_at(o + Vector3::new(0.0, -r, 0.0), o, Vector3::z()).unwrap();
        assert!((cost_prior(&facing, &o, r).unwrap() - (r - 1.0)).abs() < 1e-12);
        let eye = o + Vector3::new(0.0, -2.0 * r, 0.0);
        let away = CameraPose::look_at(eye, eye + (eye - o), Vector3::z()).unwrap();
        assert!((cost_prior(&away, &o, r).unwrap() - (2.0 * r + 1.0)).abs() < 1e-12);
        let at = CameraPose::look_at(o, o + Vector3::x(), Vector3::z()).unwrap();
        let res = cost_prior(&at, &o, r);
        assert!(matches!(res, Err(Error::CameraAtObject)), "{res:?}");
    }

    #[test]
    fn analytic_gradients_of_pose_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let o = Vector3::new(0.2, -0.1, 0.3);
        for _ in 0..20 {
            let p: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let pose = CameraPose::from_params(&p);
            let fd = finite_difference_gradient(|x| Ok(cost_upright(&CameraPose::from_params(x))), &p, 1e-4).unwrap();
            assert!(relative_error(&upright_gradient(&pose), &fd, 1e-9) < 1e-6);
            for radius in [0.5, 10.0] {
                let fd = finite_difference_gradient(|x| cost_prior(&CameraPose::from_params(x), &o, radius), &p, 1e-4).unwrap();
                let (_, g) = prior_with_gradient(&pose, &o, radius).unwrap();
                assert!(relative_error(&g, &fd, 1e-9) < 1e-6);
            }
        }
    }

    #[test]
    fn prior_distance_gradient_vanishes_inside_ball() {
        let o = Vector3::zeros();
        let pose = CameraPose::look_at(Vector3::new(0.0, -1.0, 0.0), o, Vector3::z()).unwrap();
        let (_, g) = prior_with_gradient(&pose, &o, 3.0).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-9));
    }

    fn blob_cloud() -> GaussianCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gs = (0..80)
            .map(|i| Gaussian {
                mean: [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)],
                scale: [0.08; 3],
                rotation: [1.0, 0.0, 0.0, 0.0],
                opacity: 0.8,
                color: [0.5; 3],
                embedding: vec![1.0],
                channels: vec![i < 50],
            })
            .collect();
        GaussianCloud::new(gs, 1, 1).unwrap()
    }

    #[test]
    fn facing_camera_has_small_tce() {
        let cloud = blob_cloud();
        let (c, _) = object_centroid(&cloud, 0).unwrap();
        let pose = CameraPose::look_at(c + Vector3::new(0.0, -2.0, 1.0), c, Vector3::z()).unwrap();
        let cost = pose_cost(&cloud, &pose, &CameraIntrinsics::default(), 0, &CostConfig::default(), 1.0, false).unwrap();
        assert!(cost.breakdown.tce < 0.05, "{:?}", cost.breakdown);
    }

    #[test]
    fn total_assembles_terms() {
        let cloud = blob_cloud();
        let pose = CameraPose::look_at(Vector3::new(0.3, -2.0, 1.0), Vector3::zeros(), Vector3::z()).unwrap();
        let k = CameraIntrinsics::default();
        let b = pose_cost(&cloud, &pose, &k, 0, &CostConfig::default(), 0.7, false).unwrap().breakdown;
        assert!((b.total - (b.tce + b.tre + b.upright + 0.7 * b.prior)).abs() < 1e-12);
        // without the prior, moving the object's reference point changes nothing
        let cfg = CostConfig { prior_radius: Some(0.1), ..Default::default() };
        let a0 = pose_cost_at(&cloud, &pose, &k, 0, &Vector3::zeros(), 0.1, &cfg, 0.0, false).unwrap();
        let a1 = pose_cost_at(&cloud, &pose, &k, 0, &Vector3::new(5.0, 1.0, 0.0), 0.1, &cfg, 0.0, false).unwrap();
        assert_eq!(a0.breakdown.total, a1.breakdown.total);
    }

    #[test]
    fn pose_cost_gradient_matches_finite_differences() {
        let cloud = blob_cloud();
        let k = CameraIntrinsics::default();
        let cfg = CostConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5 {
            let eye = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-2.5..-1.5), rng.random_range(0.5..1.5));
            let target = Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), 0.0);
            let p = CameraPose::look_at(eye, target, Vector3::z()).unwrap().params();
            let analytic = pose_cost(&cloud, &CameraPose::from_params(p.as_slice()), &k, 0, &cfg, 0.6, true)
                .unwrap()
                .gradient
                .unwrap();
            let fd = finite_difference_gradient(
                |x| Ok(pose_cost(&cloud, &CameraPose::from_params(x), &k, 0, &cfg, 0.6, false)?.breakdown.total),
                p.as_slice(),
                1e-4,
            )
            .unwrap();
            assert!(relative_error(&analytic, &fd, 1e-9) < 1e-3, "{analytic:?} vs {fd:?}");
        }
    }

    #[test]
    fn constant_trajectory_equals_pose_cost() {
        let cloud = blob_cloud();
        let k = CameraIntrinsics::default();
        let cfg = CostConfig { samples_per_interval: 3, ..Default::default() };
        let pose = CameraPose::look_at(Vector3::new(0.1, -2.0, 1.0), Vector3::zeros(), Vector3::z()).unwrap();
        let w = DMatrix::from_column_slice(6, 1, pose.params().as_slice());
        let model = TrajectoryModel::new(BasisSpec::waypoint(1).unwrap(), w).unwrap();
        let targets = PromptTargets::from_cloud(&cloud, 1).unwrap();
        let j = trajectory_cost(&cloud, &model, &k, &targets, &cfg, 0.5, false).unwrap();
        let single = pose_cost(&cloud, &pose, &k, 0, &cfg, 0.5, false).unwrap();
        assert!((j.value - single.breakdown.total).abs() < 1e-12);
    }

    #[test]
    fn one_sample_is_midpoint_pose_cost() {
        let cloud = blob_cloud();
        let k = CameraIntrinsics::default();
        let cfg = CostConfig { samples_per_interval: 1, ..Default::default() };
        let targets = PromptTargets::from_cloud(&cloud, 1).unwrap();
        let model = crate::trajectory::init_weights(
            &BasisSpec::rbf(3).unwrap(),
            &[(targets.centroids[0], 0.5)],
            &Default::default(),
        )
        .unwrap();
        let j = trajectory_cost(&cloud, &model, &k, &targets, &cfg, 1.0, false).unwrap();
        let mid = CameraPose::from_params(model.eval_params(0.5).unwrap().as_slice());
        assert!((j.value - pose_cost(&cloud, &mid, &k, 0, &cfg, 1.0, false).unwrap().breakdown.total).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn term_ranges(data in prop::collection::vec(0.0f64..=1.0, 64), ratio in 0.01f64..0.99, r in prop::array::uniform3(-3.0f64..3.0)) {
            let m = mask(8, 8, data);
            let tce = cost_tce(&m, 1e-6 * 64.0);
            prop_assert!((0.0..=FRAC_1_SQRT_2 + 1e-12).contains(&tce));
            let tre = cost_tre(&m, ratio);
            prop_assert!(tre >= 0.0 && tre <= ratio.max(1.0 - ratio) + 1e-12);
            let u = cost_upright(&CameraPose::new(Vector3::from(r), Vector3::zeros()));
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&u));
        }
    }
}
