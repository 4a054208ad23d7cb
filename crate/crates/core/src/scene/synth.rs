//! Procedural desk-scale scenes: ellipsoidal object blobs plus background
//! clutter, fully determined by the descriptor list and a seed.

use nalgebra::{UnitQuaternion, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{norm_f64, Gaussian, GaussianCloud, EMBEDDING_RENORM_TOL};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct ObjectDescriptor {
    #[serde(default)]
    pub label: String,
    pub center: [f32; 3],
    /// Ellipsoid half-axes the Gaussian means are drawn from.
    pub extent: [f32; 3],
    pub gaussian_count: usize,
    /// `None` marks a prop (e.g. an occluder) carrying the background embedding.
    #[serde(default)]
    pub embedding: Option<Vec<f32>>,
    pub color: [f32; 3],
    #[serde(default)]
    pub opacity: Option<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
pub struct Region {
    pub min: [f32; 3],
    pub max: [f32; 3],
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct SyntheticSpec {
    pub objects: Vec<ObjectDescriptor>,
    #[serde(default)]
    pub clutter_count: usize,
    /// Defaults to the object bounds grown by the largest extent plus one unit.
    #[serde(default)]
    pub clutter_region: Option<Region>,
    /// Base standard deviation of clutter Gaussians.
    #[serde(default)]
    pub clutter_scale: Option<f32>,
    #[serde(default)]
    pub background_embedding: Option<Vec<f32>>,
}

impl SyntheticSpec {
    /// Ground-truth descriptor index of every Gaussian the builder emits, in
    /// emission order; `None` for clutter.
    pub fn membership(&self) -> Vec<Option<usize>> {
        self.objects
            .iter()
            .enumerate()
            .flat_map(|(i, o)| std::iter::repeat_n(Some(i), o.gaussian_count))
            .chain(std::iter::repeat_n(None, self.clutter_count))
            .collect()
    }

    pub fn embedding_dim(&self) -> Option<usize> {
        self.objects.iter().find_map(|o| o.embedding.as_ref().map(Vec::len))
    }

    fn background(&self, dim: usize) -> Result<Vec<f32>> {
        if let Some(b) = &self.background_embedding {
            return unit(b, dim, "background embedding");
        }
        // First coordinate axis with a substantial component orthogonal to
        // every object embedding.
        let embeddings: Vec<Vec<f64>> = self
            .objects
            .iter()
            .filter_map(|o| o.embedding.as_ref())
            .map(|e| e.iter().map(|&v| v as f64).collect())
            .collect();
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for e in &embeddings {
            let r = residual(e, &basis);
            let n = dot(&r, &r).sqrt();
            if n > 1e-9 {
                basis.push(r.iter().map(|v| v / n).collect());
            }
        }
        for axis in 0..dim {
            let mut e = vec![0.0; dim];
            e[axis] = 1.0;
            let r = residual(&e, &basis);
            let n = dot(&r, &r).sqrt();
            if n > 0.3 {
                return Ok(r.iter().map(|v| (v / n) as f32).collect());
            }
        }
        Err(Error::Invalid(
            "embedding dimension too small for a distinct background embedding".into(),
        ))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn residual(v: &[f64], basis: &[Vec<f64>]) -> Vec<f64> {
    let mut r = v.to_vec();
    for b in basis {
        let d = dot(&r, b);
        r.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
    }
    r
}

fn unit(v: &[f32], dim: usize, what: &str) -> Result<Vec<f32>> {
    if v.len() != dim {
        return Err(Error::Invalid(format!("{what} has {} entries, expected {dim}", v.len())));
    }
    let n = norm_f64(v);
    if (n - 1.0).abs() > EMBEDDING_RENORM_TOL {
        return Err(Error::Invalid(format!("{what} is not unit norm ({n})")));
    }
    Ok(v.iter().map(|&x| (x as f64 / n) as f32).collect())
}

fn random_rotation(rng: &mut ChaCha8Rng) -> [f32; 4] {
    let v = Vector4::<f64>::from_fn(|_, _| StandardNormal.sample(rng));
    let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::from_vector(v));
    // from_vector takes (i, j, k, w)
    let out = [q.w, q.i, q.j, q.k];
    let n = out.iter().map(|x| x * x).sum::<f64>().sqrt();
    out.map(|x| (x / n) as f32)
}

fn sample_in_ellipsoid(rng: &mut ChaCha8Rng, center: [f32; 3], extent: [f32; 3]) -> [f32; 3] {
    loop {
        let u = Vector3::<f64>::from_fn(|_, _| rng.random_range(-1.0..=1.0));
        if u.norm_squared() <= 1.0 {
            return [0, 1, 2].map(|k| (center[k] as f64 + u[k] * extent[k] as f64) as f32);
        }
    }
}

/// Builds the scene. Objects come first, in descriptor order, followed by
/// `clutter_count` background Gaussians.
pub fn build_synthetic_scene(spec: &SyntheticSpec, seed: u64) -> Result<GaussianCloud> {
    let dim = spec
        .embedding_dim()
        .ok_or_else(|| Error::Invalid("scene needs at least one object with an embedding".into()))?;
    for o in &spec.objects {
        if o.extent.iter().any(|&e| e <= 0.0 || !e.is_finite()) {
            return Err(Error::Invalid(format!("object {:?} has a non-positive extent", o.label)));
        }
        if o.gaussian_count == 0 {
            return Err(Error::Invalid(format!("object {:?} has no Gaussians", o.label)));
        }
    }
    let background = spec.background(dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gaussians = Vec::with_capacity(spec.membership().len());
    let mut base_scales = Vec::new();

    for o in &spec.objects {
        let embedding = match &o.embedding {
            Some(e) => unit(e, dim, &format!("embedding of {:?}", o.label))?,
            None => background.clone(),
        };
        let cube_root = (o.gaussian_count as f64).cbrt();
        let base = o.extent.map(|e| 0.5 * e as f64 / cube_root);
        base_scales.extend(base);
        for _ in 0..o.gaussian_count {
            let opacity = o.opacity.unwrap_or(0.9) as f64 + rng.random_range(-0.05..0.05);
            gaussians.push(Gaussian {
                mean: sample_in_ellipsoid(&mut rng, o.center, o.extent),
                scale: base.map(|b| (b * rng.random_range(0.8..1.2)) as f32),
                rotation: random_rotation(&mut rng),
                opacity: opacity.clamp(0.0, 1.0) as f32,
                color: o.color.map(|c| (c as f64 + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0) as f32),
                embedding: embedding.clone(),
                channels: vec![],
            });
        }
    }

    if spec.clutter_count > 0 {
        let region = spec.clutter_region.unwrap_or_else(|| {
            let grow = spec
                .objects
                .iter()
                .flat_map(|o| o.extent)
                .fold(0.0f32, f32::max)
                + 1.0;
            let mut lo = [f32::INFINITY; 3];
            let mut hi = [f32::NEG_INFINITY; 3];
            for o in &spec.objects {
                for k in 0..3 {
                    lo[k] = lo[k].min(o.center[k] - grow);
                    hi[k] = hi[k].max(o.center[k] + grow);
                }
            }
            Region { min: lo, max: hi }
        });
        let clutter_scale = spec.clutter_scale.map(|s| s as f64).unwrap_or_else(|| {
            1.5 * base_scales.iter().sum::<f64>() / base_scales.len() as f64
        });
        for _ in 0..spec.clutter_count {
            let mean = [0, 1, 2].map(|k| {
                let (a, b) = (region.min[k] as f64, region.max[k] as f64);
                if b > a { rng.random_range(a..b) as f32 } else { a as f32 }
            });
            let gray = rng.random_range(0.2..0.8);
            gaussians.push(Gaussian {
                mean,
                scale: [0; 3].map(|_| (clutter_scale * rng.random_range(0.5..1.5)) as f32),
                rotation: random_rotation(&mut rng),
                opacity: rng.random_range(0.3..0.9) as f32,
                color: [gray as f32, (gray * 0.9) as f32, (gray * 0.8) as f32],
                embedding: background.clone(),
                channels: vec![],
            });
        }
    }
    GaussianCloud::new(gaussians, dim, 0)
}
