//! Front-to-back alpha compositing and its pose gradient for mask renders.

use nalgebra::Vector2;
use rayon::prelude::*;

use super::camera::CameraPose;
use super::image::{Channel, RenderedImage};
use super::project::{project_splat, PoseFrame, ScreenSplat, WorldGaussian};
use crate::error::{Error, Result};
use crate::scene::{CameraIntrinsics, GaussianCloud};

const TILE: usize = 4;

/// Compositing numerics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSettings {
    /// Contributions with α at or below this are skipped, and the rest are
    /// shifted down by it so α stays continuous across the cutoff.
    pub alpha_min: f64,
    /// α is clamped to this value.
    pub alpha_max: f64,
    /// A pixel stops compositing once its transmittance drops below this.
    pub transmittance_min: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings { alpha_min: 1e-5, alpha_max: 0.999, transmittance_min: 1e-6 }
    }
}

/// A differentiable reduction of a rendered mask to a scalar.
pub trait MaskFunctional {
    /// Returns the value and `∂value/∂mask[pixel]` for every pixel.
    fn evaluate(&self, mask: &RenderedImage) -> (f64, Vec<f64>);
}

/// Value and pose gradient of a mask functional.
#[derive(Debug, Clone)]
pub struct MaskGradient {
    pub value: f64,
    /// Derivative with respect to `[r_x, r_y, r_z, x, y, z]`.
    pub gradient: [f64; 6],
    pub mask: RenderedImage,
    /// Mean mask value; zero means the functional saw an empty mask and its
    /// gradient carries no information.
    pub mask_area: f64,
}

struct Frame {
    splats: Vec<ScreenSplat>,
    /// Per splat, the exponent below which α falls under `alpha_min`.
    cutoffs: Vec<f64>,
    values: Vec<f64>,
    stride: usize,
    tiles: Vec<Vec<u32>>,
    tiles_x: usize,
    width: usize,
    height: usize,
}

fn channel_stride(cloud: &GaussianCloud, channel: Channel) -> Result<usize> {
    Ok(match channel {
        Channel::Color => 3,
        Channel::Feature => cloud.embedding_dim(),
        Channel::Mask(i) => {
            cloud.check_channel(i)?;
            1
        }
    })
}

fn prepare(
    cloud: &GaussianCloud,
    pose: &CameraPose,
    k: &CameraIntrinsics,
    channel: Channel,
    settings: &RenderSettings,
    with_tangents: bool,
) -> Result<Frame> {
    k.validate()?;
    let stride = channel_stride(cloud, channel)?;
    let frame = PoseFrame::new(pose);
    let (width, height) = (k.width as usize, k.height as usize);

    let mut visible: Vec<(usize, ScreenSplat, [usize; 4])> = Vec::new();
    for (i, g) in cloud.gaussians().iter().enumerate() {
        let wg = WorldGaussian::from(g);
        if wg.opacity < settings.alpha_min {
            continue;
        }
        let Some(s) = project_splat(&wg, &frame, k, false) else { continue };
        // pixels whose centers can reach α >= alpha_min
        let level = 2.0 * (wg.opacity / settings.alpha_min).ln();
        let (hx, hy) = ((level * s.cov.m11).sqrt(), (level * s.cov.m22).sqrt());
        let x0 = (s.mean.x - hx - 0.5).ceil().max(0.0);
        let x1 = (s.mean.x + hx - 0.5).floor().min(width as f64 - 1.0);
        let y0 = (s.mean.y - hy - 0.5).ceil().max(0.0);
        let y1 = (s.mean.y + hy - 0.5).floor().min(height as f64 - 1.0);
        if !(x0 <= x1 && y0 <= y1) {
            continue;
        }
        // tangents only for splats that reach the image
        let s = if with_tangents { project_splat(&wg, &frame, k, true).unwrap_or(s) } else { s };
        visible.push((i, s, [x0 as usize, x1 as usize, y0 as usize, y1 as usize]));
    }
    visible.sort_by(|a, b| a.1.depth.total_cmp(&b.1.depth).then(a.0.cmp(&b.0)));

    let tiles_x = width.div_ceil(TILE);
    let tiles_y = height.div_ceil(TILE);
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    let mut splats = Vec::with_capacity(visible.len());
    let mut cutoffs = Vec::with_capacity(visible.len());
    let mut values = Vec::with_capacity(visible.len() * stride);
    for (slot, (i, s, [x0, x1, y0, y1])) in visible.into_iter().enumerate() {
        let g = &cloud.gaussians()[i];
        match channel {
            Channel::Color => values.extend(g.color.iter().map(|&c| c as f64)),
            Channel::Feature => values.extend(g.embedding.iter().map(|&c| c as f64)),
            Channel::Mask(c) => values.push(if g.channels[c] { 1.0 } else { 0.0 }),
        }
        for ty in y0 / TILE..=y1 / TILE {
            for tx in x0 / TILE..=x1 / TILE {
                tiles[ty * tiles_x + tx].push(slot as u32);
            }
        }
        cutoffs.push((settings.alpha_min / s.opacity).ln());
        splats.push(s);
    }
    if let Channel::Mask(_) = channel {
        // splats behind a tile's deepest flagged splat cannot change its mask
        for list in &mut tiles {
            let keep = list.iter().rposition(|&slot| values[slot as usize] != 0.0).map_or(0, |p| p + 1);
            list.truncate(keep);
        }
    }
    Ok(Frame { splats, cutoffs, values, stride, tiles, tiles_x, width, height })
}

struct Contribution {
    /// Position in the tile list.
    pos: usize,
    slot: u32,
    alpha: f64,
    raw: f64,
    transmittance: f64,
    clamped: bool,
    d: Vector2<f64>,
}

/// Composites one pixel; `trace` receives the contributing splats in order.
fn composite_pixel(
    frame: &Frame,
    list: &[u32],
    px: Vector2<f64>,
    settings: &RenderSettings,
    out: &mut [f64],
    mut trace: Option<&mut Vec<Contribution>>,
) {
    let mut t = 1.0;
    for (pos, &slot) in list.iter().enumerate() {
        let s = &frame.splats[slot as usize];
        let d = px - s.mean;
        let [a, b, c] = s.conic;
        let power = -0.5 * (a * d.x * d.x + c * d.y * d.y) - b * d.x * d.y;
        if power > 0.0 || power < frame.cutoffs[slot as usize] {
            continue;
        }
        let raw = s.opacity * power.exp();
        if raw <= settings.alpha_min {
            continue;
        }
        // shifted so α is continuous where a splat enters the skip region
        let shifted = raw - settings.alpha_min;
        let clamped = shifted > settings.alpha_max;
        let alpha = if clamped { settings.alpha_max } else { shifted };
        let vals = &frame.values[slot as usize * frame.stride..(slot as usize + 1) * frame.stride];
        for (o, v) in out.iter_mut().zip(vals) {
            *o += v * alpha * t;
        }
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(Contribution { pos, slot, alpha, raw, transmittance: t, clamped, d });
        }
        t *= 1.0 - alpha;
        if t < settings.transmittance_min {
            break;
        }
    }
}

fn tile_pixels(frame: &Frame, tile: usize) -> impl Iterator<Item = (usize, usize)> {
    let (tx, ty) = (tile % frame.tiles_x, tile / frame.tiles_x);
    let xs = tx * TILE..((tx + 1) * TILE).min(frame.width);
    let ys = ty * TILE..((ty + 1) * TILE).min(frame.height);
    ys.flat_map(move |y| xs.clone().map(move |x| (x, y)))
}

fn render_frame(frame: &Frame, channel: Channel, settings: &RenderSettings) -> RenderedImage {
    let tiles: Vec<Vec<(usize, Vec<f64>)>> = (0..frame.tiles.len())
        .into_par_iter()
        .map(|tile| {
            tile_pixels(frame, tile)
                .map(|(x, y)| {
                    let mut v = vec![0.0; frame.stride];
                    let px = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                    composite_pixel(frame, &frame.tiles[tile], px, settings, &mut v, None);
                    (y * frame.width + x, v)
                })
                .collect()
        })
        .collect();
    let mut img = RenderedImage::zeros(frame.width, frame.height, frame.stride, channel);
    for (p, v) in tiles.into_iter().flatten() {
        img.data[p * frame.stride..(p + 1) * frame.stride].copy_from_slice(&v);
    }
    img
}

/// Renders a channel with default numerics.
pub fn render_channel(
    cloud: &GaussianCloud,
    pose: &CameraPose,
    k: &CameraIntrinsics,
    channel: Channel,
) -> Result<RenderedImage> {
    render_channel_with(cloud, pose, k, channel, &RenderSettings::default())
}

pub fn render_channel_with(
    cloud: &GaussianCloud,
    pose: &CameraPose,
    k: &CameraIntrinsics,
    channel: Channel,
    settings: &RenderSettings,
) -> Result<RenderedImage> {
    let frame = prepare(cloud, pose, k, channel, settings, false)?;
    Ok(render_frame(&frame, channel, settings))
}

/// Renders mask `channel_index`, evaluates `functional` on it and returns the
/// exact pose gradient with the depth order held fixed.
pub fn render_mask_with_pose_gradient(
    cloud: &GaussianCloud,
    pose: &CameraPose,
    k: &CameraIntrinsics,
    channel_index: usize,
    functional: &dyn MaskFunctional,
) -> Result<MaskGradient> {
    render_mask_with_pose_gradient_with(cloud, pose, k, channel_index, functional, &RenderSettings::default())
}

pub fn render_mask_with_pose_gradient_with(
    cloud: &GaussianCloud,
    pose: &CameraPose,
    k: &CameraIntrinsics,
    channel_index: usize,
    functional: &dyn MaskFunctional,
    settings: &RenderSettings,
) -> Result<MaskGradient> {
    let channel = Channel::Mask(channel_index);
    let frame = prepare(cloud, pose, k, channel, settings, true)?;
    let mask = render_frame(&frame, channel, settings);
    let (value, adjoint) = functional.evaluate(&mask);
    if adjoint.len() != mask.pixel_count() {
        return Err(Error::DimensionMismatch("functional adjoint size".into()));
    }

    let partials: Vec<[f64; 6]> = (0..frame.tiles.len())
        .into_par_iter()
        .map(|tile| {
            let list = &frame.tiles[tile];
            // per-splat accumulators of ∂F/∂(mean.x, mean.y, conic a, b, c)
            let mut acc = vec![[0.0f64; 5]; list.len()];
            let mut trace = Vec::new();
            let mut scratch = [0.0];
            for (x, y) in tile_pixels(&frame, tile) {
                let g = adjoint[y * frame.width + x];
                if g == 0.0 {
                    continue;
                }
                trace.clear();
                scratch[0] = 0.0;
                let px = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                composite_pixel(&frame, list, px, settings, &mut scratch, Some(&mut trace));
                let mut suffix = 0.0;
                for c in trace.iter().rev() {
                    let b = frame.values[c.slot as usize];
                    let d_alpha = b * c.transmittance - suffix / (1.0 - c.alpha);
                    suffix += b * c.alpha * c.transmittance;
                    if c.clamped {
                        continue;
                    }
                    let s = &frame.splats[c.slot as usize];
                    let [qa, qb, qc] = s.conic;
                    let w = g * d_alpha * c.raw;
                    let a = &mut acc[c.pos];
                    a[0] += w * (qa * c.d.x + qb * c.d.y);
                    a[1] += w * (qb * c.d.x + qc * c.d.y);
                    a[2] += -0.5 * w * c.d.x * c.d.x;
                    a[3] += -w * c.d.x * c.d.y;
                    a[4] += -0.5 * w * c.d.y * c.d.y;
                }
            }
            let mut grad = [0.0; 6];
            for (pos, &slot) in list.iter().enumerate() {
                let a = &acc[pos];
                if a.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let s = &frame.splats[slot as usize];
                for (dir, gd) in grad.iter_mut().enumerate() {
                    let dm = s.dmean[dir];
                    let dq = s.dconic[dir];
                    *gd += a[0] * dm.x + a[1] * dm.y + a[2] * dq[0] + a[3] * dq[1] + a[4] * dq[2];
                }
            }
            grad
        })
        .collect();
    let mut gradient = [0.0; 6];
    for p in &partials {
        for (g, v) in gradient.iter_mut().zip(p) {
            *g += v;
        }
    }
    let mask_area = mask.mean_value();
    Ok(MaskGradient { value, gradient, mask, mask_area })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::renderer::project::project_gaussian;
    use crate::scene::Gaussian;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gaussian(mean: [f32; 3], sigma: f32, opacity: f32, flag: bool) -> Gaussian {
        Gaussian {
            mean,
            scale: [sigma; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity,
            color: [0.2, 0.5, 0.9],
            embedding: vec![1.0, 0.0],
            channels: vec![flag],
        }
    }

    /// Composites every projected Gaussian with no skipping or early exit.
    fn naive_mask(cloud: &GaussianCloud, pose: &CameraPose, k: &CameraIntrinsics) -> Vec<f64> {
        let mut proj: Vec<(usize, _)> = cloud
            .gaussians()
            .iter()
            .enumerate()
            .filter_map(|(i, g)| project_gaussian(g, pose, k).map(|p| (i, p)))
            .collect();
        proj.sort_by(|a, b| a.1.depth.partial_cmp(&b.1.depth).unwrap().then(a.0.cmp(&b.0)));
        let mut out = Vec::new();
        for y in 0..k.height {
            for x in 0..k.width {
                let v = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                let (mut acc, mut t) = (0.0, 1.0);
                for (i, p) in &proj {
                    let d = v - p.mean2d;
                    let e = (-0.5 * d.dot(&(p.cov2d.try_inverse().unwrap() * d))).exp();
                    let alpha = (p.opacity * e).min(0.999);
                    let b = if cloud.gaussians()[*i].channels[0] { 1.0 } else { 0.0 };
                    acc += b * alpha * t;
                    t *= 1.0 - alpha;
                }
                out.push(acc);
            }
        }
        out
    }

    #[test]
    fn huge_opaque_gaussian_saturates_at_clamp() {
        let cloud = GaussianCloud::new(vec![gaussian([0.0, 0.0, 2.0], 50.0, 1.0, true)], 2, 1).unwrap();
        let img = render_channel(&cloud, &CameraPose::identity(), &CameraIntrinsics::default(), Channel::Mask(0)).unwrap();
        for v in img.data {
            assert!((v - 0.999).abs() < 1e-3);
        }
    }

    #[test]
    fn two_layer_expansion() {
        // Huge footprints: α ≈ opacity at the image center.
        let cloud = GaussianCloud::new(
            vec![gaussian([0.0, 0.0, 3.0], 50.0, 0.5, false), gaussian([0.0, 0.0, 2.0], 50.0, 0.5, true)],
            2,
            1,
        )
        .unwrap();
        let img = render_channel(&cloud, &CameraPose::identity(), &CameraIntrinsics::default(), Channel::Mask(0)).unwrap();
        assert!((img.value(32, 32) - 0.5).abs() < 1e-4);
        let color = render_channel(&cloud, &CameraPose::identity(), &CameraIntrinsics::default(), Channel::Color).unwrap();
        assert!((color.pixel(32, 32)[2] - 0.75 * 0.9).abs() < 1e-3);
    }

    #[test]
    fn unpopulated_mask_channel_errors() {
        let cloud = GaussianCloud::new(vec![gaussian([0.0, 0.0, 2.0], 0.1, 1.0, true)], 2, 1).unwrap();
        let r = render_channel(&cloud, &CameraPose::identity(), &CameraIntrinsics::default(), Channel::Mask(3));
        assert!(matches!(r, Err(Error::UnpopulatedChannel { index: 3, .. })));
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> GaussianCloud {
        let gs = (0..n)
            .map(|_| {
                gaussian(
                    [rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), rng.random_range(1.5..3.5)],
                    rng.random_range(0.05..0.3),
                    rng.random_range(0.1..1.0),
                    rng.random_bool(0.5),
                )
            })
            .collect();
        GaussianCloud::new(gs, 2, 1).unwrap()
    }

    #[test]
    fn permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cloud = random_cloud(&mut rng, 30);
        let mut gs = cloud.gaussians().to_vec();
        gs.reverse();
        let rev = GaussianCloud::new(gs, 2, 1).unwrap();
        let k = CameraIntrinsics::default();
        let a = render_channel(&cloud, &CameraPose::identity(), &k, Channel::Mask(0)).unwrap();
        let b = render_channel(&rev, &CameraPose::identity(), &k, Channel::Mask(0)).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn mask_values_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cloud = random_cloud(&mut rng, 40);
        let pose = CameraPose::new(Vector3::new(0.05, -0.03, 0.2), Vector3::new(0.1, 0.0, 0.2));
        let img = render_channel(&cloud, &pose, &CameraIntrinsics::default(), Channel::Mask(0)).unwrap();
        assert!(img.data.iter().all(|&v| (0.0..=1.0).contains(&v) && v.is_finite()));
    }

    #[test]
    fn matches_naive_oracle_at_one_pixel_cluster() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cloud = random_cloud(&mut rng, 20);
        let k = CameraIntrinsics::default();
        let pose = CameraPose::identity();
        let slow = naive_mask(&cloud, &pose, &k);
        let fast = render_channel(&cloud, &pose, &k, Channel::Mask(0)).unwrap();
        let worst = fast.data.iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-3, "max deviation {worst}");
    }

    struct Weighted(Vec<f64>);

    impl MaskFunctional for Weighted {
        fn evaluate(&self, mask: &RenderedImage) -> (f64, Vec<f64>) {
            (mask.data.iter().zip(&self.0).map(|(m, w)| m * w).sum(), self.0.clone())
        }
    }

    #[test]
    fn pose_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let k = CameraIntrinsics::default();
        let mut worst: f64 = 0.0;
        for _ in 0..10 {
            let cloud = random_cloud(&mut rng, 60);
            let weights: Vec<f64> = (0..k.pixel_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let f = Weighted(weights);
            let base: Vec<f64> = (0..6).map(|_| rng.random_range(-0.1..0.1)).collect();
            let pose = CameraPose::from_params(&base);
            let st = RenderSettings::default();
            let g = render_mask_with_pose_gradient_with(&cloud, &pose, &k, 0, &f, &st).unwrap();
            let h = 1e-4;
            let mut fd = [0.0; 6];
            for d in 0..6 {
                let (mut p, mut m) = (base.clone(), base.clone());
                p[d] += h;
                m[d] -= h;
                let vp = f.evaluate(&render_channel_with(&cloud, &CameraPose::from_params(&p), &k, Channel::Mask(0), &st).unwrap()).0;
                let vm = f.evaluate(&render_channel_with(&cloud, &CameraPose::from_params(&m), &k, Channel::Mask(0), &st).unwrap()).0;
                fd[d] = (vp - vm) / (2.0 * h);
            }
            let diff: f64 = fd.iter().zip(&g.gradient).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = fd.iter().map(|a| a * a).sum::<f64>().sqrt();
            worst = worst.max(diff / norm);
        }
        assert!(worst < 1e-3, "worst relative error {worst}");
    }
}
