//! Camera poses as rotation vector + translation of the world→camera
//! transform, and the rotation-vector exponential map with its derivatives.

use std::f64::consts::TAU;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3, Vector6};

use rand::Rng;

use crate::error::{Error, Result};

/// World→camera rigid transform `x_c = R(rotvec) x_w + translation`.
///
/// The camera looks along its +z axis; image x follows camera +x and image y
/// follows camera +y.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub rotvec: Vector3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraPose {
    /// Builds a pose with the rotation angle wrapped into `[0, 2π)`.
    pub fn new(rotvec: Vector3<f64>, translation: Vector3<f64>) -> Self {
        CameraPose { rotvec: wrap_rotvec(rotvec), translation }
    }

    /// Pose from `[r_x, r_y, r_z, x, y, z]` without wrapping the angle.
    /// Optimizer iterates use this so derivatives stay with respect to the
    /// raw parameters; the rotation is the same either way.
    pub fn from_params(p: &[f64]) -> Self {
        CameraPose {
            rotvec: Vector3::new(p[0], p[1], p[2]),
            translation: Vector3::new(p[3], p[4], p[5]),
        }
    }

    pub fn params(&self) -> Vector6<f64> {
        Vector6::new(
            self.rotvec.x,
            self.rotvec.y,
            self.rotvec.z,
            self.translation.x,
            self.translation.y,
            self.translation.z,
        )
    }

    pub fn canonical(&self) -> Self {
        Self::new(self.rotvec, self.translation)
    }

    pub fn identity() -> Self {
        CameraPose { rotvec: Vector3::zeros(), translation: Vector3::zeros() }
    }

    /// World→camera rotation.
    pub fn rotation(&self) -> Matrix3<f64> {
        rotvec_to_matrix(&self.rotvec)
    }

    /// Camera center in world coordinates, `-Rᵀ t`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation().transpose() * self.translation)
    }

    /// Optical axis (camera +z) in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation().row(2).transpose()
    }

    /// Camera +x axis in world coordinates.
    pub fn x_axis(&self) -> Vector3<f64> {
        self.rotation().row(0).transpose()
    }

    /// Camera at `eye` looking at `target`, with its +x axis as close to
    /// `up` as possible.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self> {
        let f = target - eye;
        if f.norm() < 1e-12 {
            return Err(Error::Invalid("look_at: eye and target coincide".into()));
        }
        let f = f.normalize();
        let mut x = up - f * up.dot(&f);
        if x.norm() < 1e-9 {
            let alt = if f.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
            x = alt - f * alt.dot(&f);
        }
        let x = x.normalize();
        let y = f.cross(&x);
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), f.transpose()]);
        let rotvec = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r)).scaled_axis();
        let r = rotvec_to_matrix(&rotvec);
        Ok(CameraPose { rotvec, translation: -(r * eye) })
    }
}

/// Wraps the rotation angle into `[0, 2π)` without changing the rotation.
pub fn wrap_rotvec(r: Vector3<f64>) -> Vector3<f64> {
    let theta = r.norm();
    if theta < TAU {
        return r;
    }
    r * (theta.rem_euclid(TAU) / theta)
}

pub(crate) fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// sin θ / θ, (1 − cos θ) / θ², and their θ-derivatives divided by θ.
fn rodrigues_coefficients(theta: f64) -> (f64, f64, f64, f64) {
    let t2 = theta * theta;
    if theta < 1e-2 {
        let a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0 - t2 * t2 * t2 / 5040.0;
        let b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0 - t2 * t2 * t2 / 40320.0;
        let da = -1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0;
        let db = -1.0 / 12.0 + t2 / 180.0 - t2 * t2 / 6720.0;
        (a, b, da, db)
    } else {
        let (s, c) = theta.sin_cos();
        let half = (theta / 2.0).sin();
        let a = s / theta;
        let b = 2.0 * half * half / t2;
        let da = (theta * c - s) / (t2 * theta);
        let db = (theta * s - 4.0 * half * half) / (t2 * t2);
        (a, b, da, db)
    }
}

/// Rodrigues map `R = I + A[r]× + B[r]×²`.
pub fn rotvec_to_matrix(r: &Vector3<f64>) -> Matrix3<f64> {
    let (a, b, _, _) = rodrigues_coefficients(r.norm());
    let k = skew(r);
    Matrix3::identity() + k * a + k * k * b
}

/// `∂R/∂r_k` for k = 0, 1, 2.
pub fn rotvec_jacobians(r: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let (a, b, da, db) = rodrigues_coefficients(r.norm());
    let k = skew(r);
    let k2 = k * k;
    std::array::from_fn(|i| {
        let e = skew(&Vector3::ith(i, 1.0));
        e * a + (e * k + k * e) * b + (k * da + k2 * db) * r[i]
    })
}

/// Ranges random initial cameras are drawn from, relative to a target.
/// Angles are radians; bearing is measured in the horizontal plane from the
/// world x axis and elevation above the horizontal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewDistribution {
    pub distance: (f64, f64),
    pub elevation: (f64, f64),
    pub bearing: (f64, f64),
    /// Maximum per-axis perturbation of the look-at orientation.
    pub aim_jitter: f64,
}

impl ViewDistribution {
    /// Every bearing, moderate elevation, between `near` and `far` from the
    /// target.
    pub fn ring(near: f64, far: f64, aim_jitter: f64) -> Self {
        ViewDistribution { distance: (near, far), elevation: (0.3, 1.0), bearing: (0.0, std::f64::consts::TAU), aim_jitter }
    }

    pub fn sample(&self, rng: &mut impl Rng, target: &Vector3<f64>) -> Result<CameraPose> {
        let draw = |rng: &mut dyn rand::RngCore, (lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..hi) } else { lo };
        let bearing = draw(rng, self.bearing);
        let elev = draw(rng, self.elevation);
        let dist = draw(rng, self.distance);
        let dir = Vector3::new(elev.cos() * bearing.cos(), elev.cos() * bearing.sin(), elev.sin());
        let eye = target + dist * dir;
        let aim = CameraPose::look_at(eye, *target, Vector3::z())?;
        if self.aim_jitter == 0.0 {
            return Ok(aim);
        }
        let j = self.aim_jitter;
        let offset = Vector3::from_fn(|_, _| rng.random_range(-j..=j));
        let r = rotvec_to_matrix(&offset) * aim.rotation();
        let rotvec = UnitQuaternion::from_matrix(&r).scaled_axis();
        Ok(CameraPose::new(rotvec, -(rotvec_to_matrix(&rotvec) * eye)))
    }
}
