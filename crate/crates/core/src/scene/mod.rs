//! Gaussian scene model: primitives, the cloud container, camera intrinsics,
//! scene files and synthetic scene construction.
//!
//! Scene attributes are stored as `f32` (the on-disk precision) and widened
//! to `f64` whenever they enter the numerics.

mod io;
mod synth;

use nalgebra::{Matrix3, UnitQuaternion, Vector3, Quaternion};

use crate::error::{Error, Result};

pub use io::{load_scene, save_scene, read_scene, write_scene, SceneFormat};
pub use synth::{build_synthetic_scene, ObjectDescriptor, SyntheticSpec, Region};

/// Tolerance on unit norms (quaternions, embeddings).
pub const UNIT_NORM_TOL: f64 = 1e-6;
/// Embeddings further than this from unit norm are rejected on load.
pub const EMBEDDING_RENORM_TOL: f64 = 1e-3;

/// One anisotropic 3D Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: [f32; 3],
    /// Positive per-axis standard deviations.
    pub scale: [f32; 3],
    /// Unit quaternion, `(w, x, y, z)`.
    pub rotation: [f32; 4],
    pub opacity: f32,
    pub color: [f32; 3],
    /// Unit-norm semantic feature.
    pub embedding: Vec<f32>,
    /// One flag per prompt.
    pub channels: Vec<bool>,
}

impl Gaussian {
    pub fn mean_f64(&self) -> Vector3<f64> {
        Vector3::new(self.mean[0] as f64, self.mean[1] as f64, self.mean[2] as f64)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let [w, x, y, z] = self.rotation.map(|v| v as f64);
        UnitQuaternion::new_normalize(Quaternion::new(w, x, y, z))
            .to_rotation_matrix()
            .into_inner()
    }

    /// Σ = R S Sᵀ Rᵀ.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation_matrix();
        let s = Matrix3::from_diagonal(&Vector3::new(
            (self.scale[0] as f64).powi(2),
            (self.scale[1] as f64).powi(2),
            (self.scale[2] as f64).powi(2),
        ));
        let sigma = r * s * r.transpose();
        (sigma + sigma.transpose()) * 0.5
    }

    pub fn embedding_f64(&self) -> Vec<f64> {
        self.embedding.iter().map(|&v| v as f64).collect()
    }

    pub fn channel(&self, index: usize) -> bool {
        self.channels.get(index).copied().unwrap_or(false)
    }

    fn validate(&mut self, index: usize, dim: usize, prompts: usize) -> Result<()> {
        let bad = |message: String| Error::InvalidGaussian { index, message };
        let all_finite = self
            .mean
            .iter()
            .chain(&self.scale)
            .chain(&self.rotation)
            .chain(std::iter::once(&self.opacity))
            .chain(&self.color)
            .chain(&self.embedding)
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(bad("non-finite attribute".into()));
        }
        if let Some(s) = self.scale.iter().find(|&&s| s <= 0.0) {
            return Err(bad(format!("scale {s} is not positive")));
        }
        let qn = norm_f64(&self.rotation);
        if (qn - 1.0).abs() > UNIT_NORM_TOL {
            return Err(bad(format!("quaternion norm {qn} is not 1")));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(bad(format!("opacity {} outside [0, 1]", self.opacity)));
        }
        if self.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(bad("color outside [0, 1]".into()));
        }
        if self.embedding.len() != dim {
            return Err(bad(format!(
                "embedding has {} entries, expected {dim}",
                self.embedding.len()
            )));
        }
        if self.channels.len() != prompts {
            return Err(bad(format!(
                "{} channel flags, expected {prompts}",
                self.channels.len()
            )));
        }
        let en = norm_f64(&self.embedding);
        if (en - 1.0).abs() > EMBEDDING_RENORM_TOL {
            return Err(bad(format!("embedding norm {en} is not 1")));
        }
        if (en - 1.0).abs() > UNIT_NORM_TOL {
            for v in &mut self.embedding {
                *v = (*v as f64 / en) as f32;
            }
        }
        Ok(())
    }
}

pub(crate) fn norm_f64(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt()
}

/// Pinhole intrinsics. Image x points right, y down; pixel `(i, j)` covers
/// `[i, i+1) × [j, j+1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(width: u32, height: u32, fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = CameraIntrinsics { width, height, fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    /// Square-pixel camera with the principal point at the image center.
    pub fn with_fov(width: u32, height: u32, horizontal_fov: f64) -> Result<Self> {
        let fx = width as f64 / (2.0 * (horizontal_fov / 2.0).tan());
        Self::new(width, height, fx, fx, width as f64 / 2.0, height as f64 / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(Error::Invalid(format!(
                "image size {}x{} below 8x8",
                self.width, self.height
            )));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::Invalid("focal lengths must be positive".into()));
        }
        Ok(())
    }

    /// Same field of view at another resolution.
    pub fn resized(&self, width: u32, height: u32) -> Result<Self> {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self::new(width, height, self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

impl Default for CameraIntrinsics {
    /// 64×64, 60° horizontal field of view.
    fn default() -> Self {
        CameraIntrinsics::with_fov(64, 64, 60f64.to_radians()).unwrap()
    }
}

/// An immutable collection of Gaussians sharing one embedding dimension and
/// one set of prompt channels.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud {
    gaussians: Vec<Gaussian>,
    embedding_dim: usize,
    prompt_count: usize,
}

impl GaussianCloud {
    /// Validates every Gaussian. Embeddings within 1e-3 of unit norm are
    /// renormalized.
    pub fn new(mut gaussians: Vec<Gaussian>, embedding_dim: usize, prompt_count: usize) -> Result<Self> {
        for (i, g) in gaussians.iter_mut().enumerate() {
            g.validate(i, embedding_dim, prompt_count)?;
        }
        Ok(GaussianCloud { gaussians, embedding_dim, prompt_count })
    }

    pub fn gaussians(&self) -> &[Gaussian] {
        &self.gaussians
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn prompt_count(&self) -> usize {
        self.prompt_count
    }

    pub fn check_channel(&self, index: usize) -> Result<()> {
        if index >= self.prompt_count {
            return Err(Error::UnpopulatedChannel { index, available: self.prompt_count });
        }
        Ok(())
    }

    pub fn channel_flags(&self, index: usize) -> Result<Vec<bool>> {
        self.check_channel(index)?;
        Ok(self.gaussians.iter().map(|g| g.channels[index]).collect())
    }

    /// Returns a cloud with `prompt_count` channels where channel `index`
    /// holds `flags`. Existing channels are kept; new ones start cleared.
    pub fn with_channel(&self, index: usize, flags: &[bool], prompt_count: usize) -> Result<Self> {
        if flags.len() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} flags for {} Gaussians",
                flags.len(),
                self.len()
            )));
        }
        if index >= prompt_count {
            return Err(Error::Invalid(format!("channel {index} >= prompt count {prompt_count}")));
        }
        let gaussians = self
            .gaussians
            .iter()
            .zip(flags)
            .map(|(g, &f)| {
                let mut g = g.clone();
                g.channels.resize(prompt_count, false);
                g.channels[index] = f;
                g
            })
            .collect();
        Ok(GaussianCloud { gaussians, embedding_dim: self.embedding_dim, prompt_count })
    }

    /// The sub-cloud of Gaussians flagged in channel `index`, order kept.
    pub fn select_channel(&self, index: usize) -> Result<Self> {
        self.check_channel(index)?;
        Ok(GaussianCloud {
            gaussians: self.gaussians.iter().filter(|g| g.channels[index]).cloned().collect(),
            embedding_dim: self.embedding_dim,
            prompt_count: self.prompt_count,
        })
    }

    /// Axis-aligned bounds of all means, or `None` for an empty cloud.
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let mut it = self.gaussians.iter().map(Gaussian::mean_f64);
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), m| (lo.inf(&m), hi.sup(&m))))
    }
}

/// Opacity-weighted centroid of the Gaussians flagged in a channel together
/// with the largest distance from it to any flagged mean.
pub fn object_centroid(cloud: &GaussianCloud, channel_index: usize) -> Result<(Vector3<f64>, f64)> {
    cloud.check_channel(channel_index)?;
    let flagged: Vec<&Gaussian> = cloud.gaussians().iter().filter(|g| g.channels[channel_index]).collect();
    if flagged.is_empty() {
        return Err(Error::EmptyChannel(channel_index));
    }
    let total: f64 = flagged.iter().map(|g| g.opacity as f64).sum();
    let centroid = if total > 0.0 {
        flagged.iter().map(|g| g.mean_f64() * g.opacity as f64).sum::<Vector3<f64>>() / total
    } else {
        flagged.iter().map(|g| g.mean_f64()).sum::<Vector3<f64>>() / flagged.len() as f64
    };
    let radius = flagged
        .iter()
        .map(|g| (g.mean_f64() - centroid).norm())
        .fold(0.0, f64::max);
    Ok((centroid, radius))
}
