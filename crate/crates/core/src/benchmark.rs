//! The three-object desk benchmark: a mug, a book and a plant, each with a
//! thin occluding panel between it and the default viewing direction, over
//! a thin layer of desk clutter below them.
//!
//! Embeddings are one-hot in an 8-dimensional space: objects use axes 0–2,
//! the background axis 3 and the canonical phrases axes 4 and 5.

use nalgebra::Vector3;

use crate::error::Result;
use crate::renderer::ViewDistribution;
use crate::scene::{build_synthetic_scene, CameraIntrinsics, GaussianCloud, ObjectDescriptor, Region, SyntheticSpec};
use crate::semantics::{ground_all, FilterConfig, QuerySet};

pub const EMBEDDING_DIM: usize = 8;
pub const OBJECT_GAUSSIANS: usize = 250;
pub const OCCLUDER_GAUSSIANS: usize = 150;
pub const CLUTTER_GAUSSIANS: usize = 400;
pub const LABELS: [&str; 3] = ["mug", "book", "plant"];

pub const OBJECT_CENTERS: [[f32; 3]; 3] = [[-0.8, 0.0, 0.15], [0.0, 0.35, 0.15], [0.8, 0.0, 0.15]];
const OBJECT_EXTENTS: [[f32; 3]; 3] = [[0.1, 0.1, 0.12], [0.14, 0.1, 0.05], [0.09, 0.09, 0.14]];
const OBJECT_COLORS: [[f32; 3]; 3] = [[0.85, 0.2, 0.15], [0.2, 0.35, 0.8], [0.2, 0.7, 0.25]];

/// Distance from each object to its panels along the viewing direction.
const OCCLUDER_OFFSET: f64 = 0.2;
/// Sideways (+x) shift of the panels, so that the default view of each
/// object is only partly blocked.
const OCCLUDER_SHIFT: f64 = 0.08;

fn one_hot(axis: usize) -> Vec<f32> {
    let mut v = vec![0.0; EMBEDDING_DIM];
    v[axis] = 1.0;
    v
}

fn one_hot_f64(axis: usize) -> Vec<f64> {
    one_hot(axis).into_iter().map(f64::from).collect()
}

/// Default viewing direction from an object toward the camera.
pub fn default_view_direction() -> Vector3<f64> {
    Vector3::new(0.0, -1.0, 1.0).normalize()
}

pub fn benchmark_spec() -> SyntheticSpec {
    let mut objects = Vec::new();
    for i in 0..3 {
        objects.push(ObjectDescriptor {
            label: LABELS[i].into(),
            center: OBJECT_CENTERS[i],
            extent: OBJECT_EXTENTS[i],
            gaussian_count: OBJECT_GAUSSIANS,
            embedding: Some(one_hot(i)),
            color: OBJECT_COLORS[i],
            opacity: Some(0.9),
        });
    }
    // A raised panel in the default view direction and a low one at object
    // height on the same side, both thin along the line of sight.
    let raised = default_view_direction();
    let low = Vector3::new(0.0, -1.0, 0.0);
    for (i, c) in OBJECT_CENTERS.iter().enumerate() {
        for (name, d) in [("raised", raised), ("low", low)] {
            let shift = Vector3::new(OCCLUDER_SHIFT, 0.0, 0.0);
            let center = [0, 1, 2].map(|k| (c[k] as f64 + OCCLUDER_OFFSET * d[k] + shift[k]) as f32);
            objects.push(ObjectDescriptor {
                label: format!("{name}-panel-{}", LABELS[i]),
                center,
                extent: [0.12, 0.015, 0.12],
                gaussian_count: OCCLUDER_GAUSSIANS,
                embedding: None,
                color: [0.55, 0.5, 0.45],
                opacity: Some(0.95),
            });
        }
    }
    SyntheticSpec {
        objects,
        clutter_count: CLUTTER_GAUSSIANS,
        clutter_region: Some(Region { min: [-1.4, -1.0, -0.12], max: [1.4, 1.0, -0.1] }),
        clutter_scale: Some(0.04),
        background_embedding: Some(one_hot(3)),
    }
}

/// One query per object plus the two canonical phrases.
pub fn benchmark_queries() -> QuerySet {
    QuerySet::new(
        LABELS.iter().map(|s| s.to_string()).collect(),
        (0..3).map(one_hot_f64).collect(),
        vec![one_hot_f64(4), one_hot_f64(5)],
    )
    .expect("benchmark queries are unit vectors")
}

/// Keeps exactly one object's worth of Gaussians per query. The clustering
/// radius is wide enough that sparse blob edges are not dropped as noise,
/// yet far below the spacing between objects.
pub fn benchmark_filter(spec: &SyntheticSpec) -> FilterConfig {
    let total = spec.membership().len();
    FilterConfig {
        percentile: OBJECT_GAUSSIANS as f64 / total as f64,
        dbscan_eps: Some(0.1),
        ..FilterConfig::default()
    }
}

/// Grounded benchmark scene with its 64×64 optimization camera.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub spec: SyntheticSpec,
    pub queries: QuerySet,
    pub cloud: GaussianCloud,
    pub intrinsics: CameraIntrinsics,
}

impl Benchmark {
    pub fn build(seed: u64) -> Result<Self> {
        let spec = benchmark_spec();
        let queries = benchmark_queries();
        let raw = build_synthetic_scene(&spec, seed)?;
        let cloud = ground_all(&raw, &queries, &benchmark_filter(&spec))?;
        Ok(Benchmark { spec, queries, cloud, intrinsics: CameraIntrinsics::default() })
    }
}

/// Views from the side the occluding panels face, so that many start
/// partially occluded.
pub fn occluded_side_views() -> ViewDistribution {
    let b = -std::f64::consts::FRAC_PI_2;
    ViewDistribution { distance: (0.6, 1.2), elevation: (0.5, 1.0), bearing: (b - 0.6, b + 0.6), aim_jitter: 0.1 }
}

/// Views from every bearing, well outside the prior radius.
pub fn distant_views() -> ViewDistribution {
    ViewDistribution { distance: (1.0, 2.0), elevation: (0.2, 1.2), bearing: (0.0, std::f64::consts::TAU), aim_jitter: 0.5 }
}
