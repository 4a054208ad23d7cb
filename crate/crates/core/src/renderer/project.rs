//! EWA projection of 3D Gaussians to screen-space ellipses, with forward-mode
//! tangents of the projected mean and conic with respect to the six pose
//! parameters.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use super::camera::{rotvec_jacobians, CameraPose};
use crate::scene::{CameraIntrinsics, Gaussian};

/// Gaussians at or closer than this camera-frame depth are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Isotropic screen-space dilation added to every projected covariance (px²).
pub const COV2D_DILATION: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected2D {
    pub mean2d: Vector2<f64>,
    /// Dilated screen-space covariance, pixels².
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
    pub opacity: f64,
}

/// The pose-independent parts of a Gaussian, widened to `f64`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct WorldGaussian {
    pub mean: Vector3<f64>,
    pub cov: Matrix3<f64>,
    pub opacity: f64,
}

impl From<&Gaussian> for WorldGaussian {
    fn from(g: &Gaussian) -> Self {
        WorldGaussian { mean: g.mean_f64(), cov: g.covariance(), opacity: g.opacity as f64 }
    }
}

/// Pose rotation and its derivatives, shared by every Gaussian of a frame.
pub(crate) struct PoseFrame {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub drot: [Matrix3<f64>; 3],
}

impl PoseFrame {
    pub fn new(pose: &CameraPose) -> Self {
        PoseFrame {
            rotation: pose.rotation(),
            translation: pose.translation,
            drot: rotvec_jacobians(&pose.rotvec),
        }
    }
}

/// Screen-space ellipse plus (optionally) its pose tangents.
#[derive(Debug, Clone)]
pub(crate) struct ScreenSplat {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
    /// Inverse covariance as (a, b, c) of [[a, b], [b, c]].
    pub conic: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
    /// d mean / d pose_k.
    pub dmean: [Vector2<f64>; 6],
    /// d conic / d pose_k.
    pub dconic: [[f64; 3]; 6],
}

/// Half-width of the Jacobian evaluation window, in multiples of the
/// frustum half-extent. Gaussians far outside the view are linearized at
/// the window edge so their footprints stay bounded.
pub const FRUSTUM_GUARD: f64 = 1.3;

/// Camera-frame point the perspective Jacobian is evaluated at: `p` with
/// `x/z` and `y/z` clamped to the guard window, plus flags for which axis
/// was clamped (and to which side).
fn jacobian_point(p: &Vector3<f64>, k: &CameraIntrinsics) -> (Vector3<f64>, [f64; 2]) {
    let lim = [
        FRUSTUM_GUARD * (k.width as f64 / 2.0) / k.fx,
        FRUSTUM_GUARD * (k.height as f64 / 2.0) / k.fy,
    ];
    let mut out = *p;
    let mut side = [0.0; 2];
    for a in 0..2 {
        let ratio = p[a] / p.z;
        if ratio > lim[a] {
            out[a] = lim[a] * p.z;
            side[a] = lim[a];
        } else if ratio < -lim[a] {
            out[a] = -lim[a] * p.z;
            side[a] = -lim[a];
        }
    }
    (out, side)
}

fn perspective_jacobian(p: &Vector3<f64>, k: &CameraIntrinsics) -> Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    Matrix2x3::new(
        k.fx * iz,
        0.0,
        -k.fx * p.x * iz * iz,
        0.0,
        k.fy * iz,
        -k.fy * p.y * iz * iz,
    )
}

pub(crate) fn project_splat(
    g: &WorldGaussian,
    frame: &PoseFrame,
    k: &CameraIntrinsics,
    with_tangents: bool,
) -> Option<ScreenSplat> {
    let r = &frame.rotation;
    let pc = r * g.mean + frame.translation;
    if pc.z <= NEAR_PLANE {
        return None;
    }
    let (pj, clamped) = jacobian_point(&pc, k);
    let jac = perspective_jacobian(&pj, k);
    let cov_cam = r * g.cov * r.transpose();
    let cov2d = jac * cov_cam * jac.transpose() + Matrix2::identity() * COV2D_DILATION;
    let cov2d = (cov2d + cov2d.transpose()) * 0.5;
    let det = cov2d.m11 * cov2d.m22 - cov2d.m12 * cov2d.m21;
    if !(det > 0.0) {
        return None;
    }
    let q = Matrix2::new(cov2d.m22, -cov2d.m12, -cov2d.m21, cov2d.m11) / det;
    let iz = 1.0 / pc.z;
    let mean = Vector2::new(k.fx * pc.x * iz + k.cx, k.fy * pc.y * iz + k.cy);

    let mut dmean = [Vector2::zeros(); 6];
    let mut dconic = [[0.0; 3]; 6];
    if with_tangents {
        for dir in 0..6 {
            let (dpc, dr) = if dir < 3 {
                (frame.drot[dir] * g.mean, Some(frame.drot[dir]))
            } else {
                (Vector3::ith(dir - 3, 1.0), None)
            };
            dmean[dir] = Vector2::new(
                k.fx * (dpc.x * pc.z - pc.x * dpc.z) * iz * iz,
                k.fy * (dpc.y * pc.z - pc.y * dpc.z) * iz * iz,
            );
            let iz2 = iz * iz;
            let iz3 = iz2 * iz;
            // a clamped coordinate follows the window edge, i.e. only depth
            let dpx = if clamped[0] != 0.0 { clamped[0] * dpc.z } else { dpc.x };
            let dpy = if clamped[1] != 0.0 { clamped[1] * dpc.z } else { dpc.y };
            let djac = Matrix2x3::new(
                -k.fx * dpc.z * iz2,
                0.0,
                -k.fx * (dpx * iz2 - 2.0 * pj.x * dpc.z * iz3),
                0.0,
                -k.fy * dpc.z * iz2,
                -k.fy * (dpy * iz2 - 2.0 * pj.y * dpc.z * iz3),
            );
            let n = djac * cov_cam * jac.transpose();
            let mut dcov = n + n.transpose();
            if let Some(dr) = dr {
                let m = dr * g.cov * r.transpose();
                dcov += jac * (m + m.transpose()) * jac.transpose();
            }
            let dq = -(q * dcov * q);
            dconic[dir] = [dq.m11, 0.5 * (dq.m12 + dq.m21), dq.m22];
        }
    }
    Some(ScreenSplat {
        mean,
        cov: cov2d,
        conic: [q.m11, 0.5 * (q.m12 + q.m21), q.m22],
        depth: pc.z,
        opacity: g.opacity,
        dmean,
        dconic,
    })
}

/// Projects one Gaussian; `None` when it lies at or behind the near plane.
pub fn project_gaussian(g: &Gaussian, pose: &CameraPose, k: &CameraIntrinsics) -> Option<Projected2D> {
    let frame = PoseFrame::new(pose);
    project_splat(&WorldGaussian::from(g), &frame, k, false).map(|s| Projected2D {
        mean2d: s.mean,
        cov2d: s.cov,
        depth: s.depth,
        opacity: s.opacity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iso(mean: [f32; 3], sigma: f32) -> Gaussian {
        Gaussian {
            mean,
            scale: [sigma; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity: 0.8,
            color: [1.0; 3],
            embedding: vec![1.0],
            channels: vec![],
        }
    }

    #[test]
    fn on_axis_hits_principal_point() {
        let k = CameraIntrinsics::new(64, 48, 50.0, 60.0, 32.0, 24.0).unwrap();
        let p = project_gaussian(&iso([0.0, 0.0, 3.0], 0.1), &CameraPose::identity(), &k).unwrap();
        assert!((p.mean2d - Vector2::new(32.0, 24.0)).norm() < 1e-12);
        assert!((p.depth - 3.0).abs() < 1e-12);
    }

    #[test]
    fn behind_camera_is_culled() {
        let k = CameraIntrinsics::default();
        assert!(project_gaussian(&iso([0.0, 0.0, -1.0], 0.1), &CameraPose::identity(), &k).is_none());
        assert!(project_gaussian(&iso([0.0, 0.0, 0.005], 0.1), &CameraPose::identity(), &k).is_none());
    }

    #[test]
    fn isotropic_on_axis_covariance() {
        let k = CameraIntrinsics::new(64, 64, 50.0, 70.0, 32.0, 32.0).unwrap();
        let (sigma, d) = (0.25f64, 4.0f64);
        let p = project_gaussian(&iso([0.0, 0.0, d as f32], sigma as f32), &CameraPose::identity(), &k).unwrap();
        let want = Matrix2::new(
            (50.0 * sigma / d).powi(2) + COV2D_DILATION,
            0.0,
            0.0,
            (70.0 * sigma / d).powi(2) + COV2D_DILATION,
        );
        assert!((p.cov2d - want).norm() < 1e-9);
    }

    fn check_tangents(mean: [f32; 3]) {
        let k = CameraIntrinsics::default();
        let mut g = iso(mean, 0.2);
        g.scale = [0.1, 0.3, 0.2];
        let n = (0.9f32 * 0.9 + 0.3 * 0.3 + 0.2 * 0.2 + 0.1 * 0.1).sqrt();
        g.rotation = [0.9 / n, 0.3 / n, -0.2 / n, 0.1 / n];
        let wg = WorldGaussian::from(&g);
        let base = [0.1, -0.2, 0.05, 0.1, 0.2, 0.3];
        let frame = PoseFrame::new(&CameraPose::from_params(&base));
        let s = project_splat(&wg, &frame, &k, true).unwrap();
        let h = 1e-6;
        for dir in 0..6 {
            let mut plus = base;
            let mut minus = base;
            plus[dir] += h;
            minus[dir] -= h;
            let sp = project_splat(&wg, &PoseFrame::new(&CameraPose::from_params(&plus)), &k, false).unwrap();
            let sm = project_splat(&wg, &PoseFrame::new(&CameraPose::from_params(&minus)), &k, false).unwrap();
            let fd_mean = (sp.mean - sm.mean) / (2.0 * h);
            assert!((fd_mean - s.dmean[dir]).norm() < 1e-5 * (1.0 + fd_mean.norm()));
            for c in 0..3 {
                let fd = (sp.conic[c] - sm.conic[c]) / (2.0 * h);
                assert!((fd - s.dconic[dir][c]).abs() < 1e-6 * (1.0 + fd.abs()), "dir {dir} c {c}: {fd} vs {}", s.dconic[dir][c]);
            }
        }
    }

    #[test]
    fn tangents_match_central_differences() {
        check_tangents([0.3, -0.2, 2.5]);
    }

    #[test]
    fn tangents_match_central_differences_outside_the_guard_window() {
        check_tangents([3.0, -0.2, 1.0]);
        check_tangents([0.2, -2.5, 1.2]);
    }

    #[test]
    fn off_frustum_gaussian_near_the_camera_stays_off_screen() {
        let k = CameraIntrinsics::default();
        let p = project_gaussian(&iso([-0.7, 0.0, 0.02], 0.05), &CameraPose::identity(), &k).unwrap();
        // 3-sigma extent along x cannot reach the left image edge
        let reach = p.mean2d.x + 3.0 * p.cov2d.m11.sqrt();
        assert!(reach < 0.0, "reach {reach}");
    }
}
