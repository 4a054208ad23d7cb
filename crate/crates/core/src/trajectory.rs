//! Continuous-time camera trajectories: each of the six pose parameters is a
//! weighted sum of basis functions of normalized time `t ∈ [0, 1]`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::io_util::{fmt_f64, write_atomic};
use crate::renderer::CameraPose;

/// Samples on the uniform grid used to differentiate waypoint paths.
pub const WAYPOINT_DERIVATIVE_GRID: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    Rbf,
    Waypoint,
    Polynomial,
}

impl BasisKind {
    pub fn name(self) -> &'static str {
        match self {
            BasisKind::Rbf => "rbf",
            BasisKind::Waypoint => "waypoint",
            BasisKind::Polynomial => "polynomial",
        }
    }
}

impl std::str::FromStr for BasisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rbf" => Ok(BasisKind::Rbf),
            "waypoint" | "waypoints" => Ok(BasisKind::Waypoint),
            "polynomial" | "poly" => Ok(BasisKind::Polynomial),
            other => Err(Error::Invalid(format!("unknown basis kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasisSpec {
    pub kind: BasisKind,
    pub size: usize,
    /// RBF width; unused by the other kinds.
    pub sigma: f64,
    /// RBF centers or waypoint interval centers; empty for polynomials.
    pub centers: Vec<f64>,
}

fn interval_centers(n: usize) -> Vec<f64> {
    (1..=n).map(|i| (i as f64 - 0.5) / n as f64).collect()
}

impl BasisSpec {
    /// `n` Gaussians centered on `n` equal intervals, width `1/(2n)`.
    pub fn rbf(n: usize) -> Result<Self> {
        Self::rbf_with_sigma(n, 0.5 / n.max(1) as f64)
    }

    pub fn rbf_with_sigma(n: usize, sigma: f64) -> Result<Self> {
        let spec = BasisSpec { kind: BasisKind::Rbf, size: n, sigma, centers: interval_centers(n) };
        spec.validate()?;
        Ok(spec)
    }

    /// Piecewise-constant pose on `m` equal intervals.
    pub fn waypoint(m: usize) -> Result<Self> {
        let spec = BasisSpec { kind: BasisKind::Waypoint, size: m, sigma: 0.0, centers: interval_centers(m) };
        spec.validate()?;
        Ok(spec)
    }

    /// Monomials of degree `0..n`.
    pub fn polynomial(n: usize) -> Result<Self> {
        let spec = BasisSpec { kind: BasisKind::Polynomial, size: n, sigma: 0.0, centers: Vec::new() };
        spec.validate()?;
        Ok(spec)
    }

    /// Defaults: `4n` RBFs, 100 waypoints, 6 monomials.
    pub fn default_for(kind: BasisKind, prompt_count: usize) -> Result<Self> {
        match kind {
            BasisKind::Rbf => Self::rbf(4 * prompt_count.max(1)),
            BasisKind::Waypoint => Self::waypoint(100),
            BasisKind::Polynomial => Self::polynomial(6),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::Invalid("basis size must be at least 1".into()));
        }
        match self.kind {
            BasisKind::Rbf | BasisKind::Waypoint => {
                if self.centers.len() != self.size {
                    return Err(Error::Invalid(format!(
                        "{} centers for {} basis functions",
                        self.centers.len(),
                        self.size
                    )));
                }
                if self.centers.iter().any(|c| !(0.0..=1.0).contains(c))
                    || self.centers.windows(2).any(|w| w[1] <= w[0])
                {
                    return Err(Error::Invalid("centers must be strictly increasing in [0, 1]".into()));
                }
                if self.kind == BasisKind::Rbf && !(self.sigma > 0.0 && self.sigma.is_finite()) {
                    return Err(Error::Invalid(format!("RBF width must be positive, got {}", self.sigma)));
                }
            }
            BasisKind::Polynomial => {}
        }
        Ok(())
    }

    /// Index of the waypoint interval containing `t` (right-closed at 1).
    fn waypoint_index(&self, t: f64) -> usize {
        ((t * self.size as f64).floor() as usize).min(self.size - 1)
    }

    /// `d^order Ψ / dt^order` at `t`; waypoints only support order 0 here.
    fn eval_order(&self, t: f64, order: usize) -> Vec<f64> {
        match self.kind {
            BasisKind::Rbf => self
                .centers
                .iter()
                .map(|&c| {
                    let u = (t - c) / self.sigma;
                    let psi = (-0.5 * u * u).exp();
                    // Hermite polynomials: dᵏ/dtᵏ e^{-u²/2} = (-1)ᵏ Heₖ(u) e^{-u²/2} / σᵏ
                    let he = match order {
                        0 => 1.0,
                        1 => -u,
                        2 => u * u - 1.0,
                        _ => -(u * u * u - 3.0 * u),
                    };
                    he * psi / self.sigma.powi(order as i32)
                })
                .collect(),
            BasisKind::Polynomial => (0..self.size)
                .map(|i| {
                    if i < order {
                        0.0
                    } else {
                        let falling: f64 = (i - order + 1..=i).map(|k| k as f64).product();
                        falling * t.powi((i - order) as i32)
                    }
                })
                .collect(),
            BasisKind::Waypoint => {
                let mut v = vec![0.0; self.size];
                if order == 0 {
                    v[self.waypoint_index(t)] = 1.0;
                }
                v
            }
        }
    }
}

fn check_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::TimeOutOfRange(t))
    }
}

/// The basis vector `Ψ(t)`.
pub fn basis_eval(spec: &BasisSpec, t: f64) -> Result<Vec<f64>> {
    check_time(t)?;
    Ok(spec.eval_order(t, 0))
}

/// Basis functions plus a `6 × N` weight matrix (row j drives pose entry j).
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryModel {
    pub basis: BasisSpec,
    pub weights: DMatrix<f64>,
}

impl TrajectoryModel {
    pub fn new(basis: BasisSpec, weights: DMatrix<f64>) -> Result<Self> {
        basis.validate()?;
        if weights.nrows() != 6 || weights.ncols() != basis.size {
            return Err(Error::DimensionMismatch(format!(
                "weights are {}×{}, expected 6×{}",
                weights.nrows(),
                weights.ncols(),
                basis.size
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Invalid("non-finite trajectory weight".into()));
        }
        Ok(TrajectoryModel { basis, weights })
    }

    pub fn zeros(basis: BasisSpec) -> Result<Self> {
        let n = basis.size;
        Self::new(basis, DMatrix::zeros(6, n))
    }

    /// Raw pose parameters `[r, t]` at time `t`, with no angle wrapping.
    pub fn eval_params(&self, t: f64) -> Result<Vector6<f64>> {
        let psi = basis_eval(&self.basis, t)?;
        Ok(Vector6::from_iterator((0..6).map(|j| {
            self.weights.row(j).iter().zip(&psi).map(|(w, p)| w * p).sum::<f64>()
        })))
    }

    pub fn eval_pose(&self, t: f64) -> Result<CameraPose> {
        let p = self.eval_params(t)?;
        Ok(CameraPose::new(Vector3::new(p[0], p[1], p[2]), Vector3::new(p[3], p[4], p[5])))
    }

    /// `order`-th time derivative of the six pose parameters.
    pub fn eval_derivatives(&self, t: f64, order: usize) -> Result<Vector6<f64>> {
        check_time(t)?;
        if order > 3 {
            return Err(Error::DerivativeOrder(order));
        }
        if order == 0 {
            return self.eval_params(t);
        }
        if self.basis.kind == BasisKind::Waypoint {
            let grid = self.derivative_grid(order, WAYPOINT_DERIVATIVE_GRID)?;
            return Ok(interpolate_grid(&grid, t));
        }
        let psi = self.basis.eval_order(t, order);
        Ok(Vector6::from_iterator((0..6).map(|j| {
            self.weights.row(j).iter().zip(&psi).map(|(w, p)| w * p).sum::<f64>()
        })))
    }

    /// Derivative of the given order sampled at `m` uniform times `j/(m-1)`.
    ///
    /// Smooth bases are differentiated analytically; waypoint paths are
    /// sampled and differentiated with repeated central differences.
    pub fn derivative_grid(&self, order: usize, m: usize) -> Result<Vec<Vector6<f64>>> {
        if order > 3 {
            return Err(Error::DerivativeOrder(order));
        }
        if m < 2 {
            return Err(Error::Invalid("derivative grid needs at least 2 samples".into()));
        }
        let times = (0..m).map(|j| j as f64 / (m - 1) as f64);
        if self.basis.kind != BasisKind::Waypoint || order == 0 {
            return times
                .map(|t| {
                    let psi = self.basis.eval_order(t, order);
                    Ok(Vector6::from_iterator((0..6).map(|j| {
                        self.weights.row(j).iter().zip(&psi).map(|(w, p)| w * p).sum::<f64>()
                    })))
                })
                .collect();
        }
        let mut samples = self.derivative_grid(0, m)?;
        let step = 1.0 / (m - 1) as f64;
        for _ in 0..order {
            samples = central_differences(&samples, step);
        }
        Ok(samples)
    }

    /// Partition of `[0, 1]` into `n` prompt intervals; returns the prompt
    /// active at `t`.
    pub fn prompt_at(t: f64, n: usize) -> usize {
        ((t * n as f64).floor() as usize).min(n.saturating_sub(1))
    }
}

fn central_differences(v: &[Vector6<f64>], step: f64) -> Vec<Vector6<f64>> {
    let m = v.len();
    (0..m)
        .map(|j| {
            if j == 0 {
                (v[1] - v[0]) / step
            } else if j == m - 1 {
                (v[m - 1] - v[m - 2]) / step
            } else {
                (v[j + 1] - v[j - 1]) / (2.0 * step)
            }
        })
        .collect()
}

fn interpolate_grid(grid: &[Vector6<f64>], t: f64) -> Vector6<f64> {
    let x = t * (grid.len() - 1) as f64;
    let j = (x.floor() as usize).min(grid.len() - 2);
    let f = x - j as f64;
    grid[j] * (1.0 - f) + grid[j + 1] * f
}

/// Where the initial trajectory puts the camera relative to each object.
#[derive(Debug, Clone, PartialEq)]
pub struct InitOptions {
    /// World direction from object to camera (normalized internally).
    pub direction: Vector3<f64>,
    /// Camera distance in multiples of the object radius.
    pub distance_factor: f64,
    /// World direction the camera x axis should follow.
    pub up: Vector3<f64>,
    /// Standard deviation of Gaussian noise added to the fitted weights.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for InitOptions {
    fn default() -> Self {
        InitOptions {
            direction: Vector3::new(0.0, -1.0, 1.0),
            distance_factor: 4.0,
            up: Vector3::z(),
            jitter: 0.0,
            seed: 0,
        }
    }
}

/// Fits weights so the camera visits a look-at pose for each object.
///
/// `targets[i]` is the centroid and radius of the object for prompt `i`.
/// The fit is least squares against the piecewise-constant target path on a
/// dense grid; when the basis has at least as many functions as there are
/// prompts, the poses at interval centers are matched exactly.
pub fn init_weights(
    spec: &BasisSpec,
    targets: &[(Vector3<f64>, f64)],
    options: &InitOptions,
) -> Result<TrajectoryModel> {
    spec.validate()?;
    let n = targets.len();
    if n == 0 {
        return Err(Error::Invalid("at least one prompt is required".into()));
    }
    if options.direction.norm() < 1e-12 {
        return Err(Error::Invalid("initial viewing direction is zero".into()));
    }
    let dir = options.direction.normalize();
    let mut poses: Vec<Vector6<f64>> = Vec::with_capacity(n);
    for (centroid, radius) in targets {
        let eye = centroid + dir * (options.distance_factor * radius.max(1e-3));
        let mut p = CameraPose::look_at(eye, *centroid, options.up)?.params();
        // keep consecutive rotation vectors on the same branch
        if let Some(prev) = poses.last() {
            let r = Vector3::new(p[0], p[1], p[2]);
            let prev_r = Vector3::new(prev[0], prev[1], prev[2]);
            let theta = r.norm();
            if theta > 1e-9 {
                let alt = r * ((theta - std::f64::consts::TAU) / theta);
                if (alt - prev_r).norm() < (r - prev_r).norm() {
                    p.fixed_rows_mut::<3>(0).copy_from(&alt);
                }
            }
        }
        poses.push(p);
    }

    let size = spec.size;
    let samples = (8 * size).max(32 * n);
    let mut design = DMatrix::zeros(samples, size);
    let mut target = DMatrix::zeros(samples, 6);
    for s in 0..samples {
        let t = (s as f64 + 0.5) / samples as f64;
        let psi = spec.eval_order(t, 0);
        design.row_mut(s).copy_from_slice(&psi);
        target.row_mut(s).copy_from(&poses[TrajectoryModel::prompt_at(t, n)].transpose());
    }
    let gram = design.transpose() * &design;
    let rhs = design.transpose() * &target;

    let constraints = if size >= n { n } else { 0 };
    let dim = size + constraints;
    let mut kkt = DMatrix::zeros(dim, dim);
    let mut b = DMatrix::zeros(dim, 6);
    kkt.view_mut((0, 0), (size, size)).copy_from(&gram);
    b.view_mut((0, 0), (size, 6)).copy_from(&rhs);
    for (i, pose) in poses.iter().enumerate().take(constraints) {
        let t = (i as f64 + 0.5) / n as f64;
        let psi = DVector::from_vec(spec.eval_order(t, 0));
        kkt.view_mut((size + i, 0), (1, size)).copy_from(&psi.transpose());
        kkt.view_mut((0, size + i), (size, 1)).copy_from(&psi);
        b.row_mut(size + i).copy_from(&pose.transpose());
    }
    let svd = kkt.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-12 * smax) {
        return Err(Error::SingularBasis(format!(
            "{} basis of size {size} cannot fit {n} prompt poses",
            spec.kind.name()
        )));
    }
    let solution = svd
        .solve(&b, 0.0)
        .map_err(|e| Error::SingularBasis(e.to_string()))?;
    let mut weights = solution.view((0, 0), (size, 6)).transpose();

    if options.jitter > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        for w in weights.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *w += options.jitter * z;
        }
    }
    TrajectoryModel::new(spec.clone(), weights)
}

/// A trajectory together with the prompt count it was optimized for.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDocument {
    pub model: TrajectoryModel,
    pub prompt_count: usize,
}

const TRAJ_MAGIC: &str = "SPLATTRAJ v1";

impl TrajectoryDocument {
    /// Text form with weights and `keyframes` poses sampled at `(k+½)/K`.
    pub fn to_text(&self, keyframes: usize) -> Result<String> {
        let b = &self.model.basis;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{TRAJ_MAGIC} basis={} size={} sigma={} prompts={}",
            b.kind.name(),
            b.size,
            fmt_f64(b.sigma),
            self.prompt_count
        );
        let centers: Vec<String> = b.centers.iter().map(|&c| fmt_f64(c)).collect();
        let _ = writeln!(s, "centers {}", centers.join(" "));
        for j in 0..6 {
            let row: Vec<String> = self.model.weights.row(j).iter().map(|&w| fmt_f64(w)).collect();
            let _ = writeln!(s, "w{j} {}", row.join(" "));
        }
        let _ = writeln!(s, "keyframes {keyframes}");
        for k in 0..keyframes {
            let t = (k as f64 + 0.5) / keyframes as f64;
            let p = self.model.eval_pose(t)?;
            let _ = writeln!(
                s,
                "{} {} {} {} {} {} {}",
                fmt_f64(t),
                fmt_f64(p.rotvec.x),
                fmt_f64(p.rotvec.y),
                fmt_f64(p.rotvec.z),
                fmt_f64(p.translation.x),
                fmt_f64(p.translation.y),
                fmt_f64(p.translation.z)
            );
        }
        Ok(s)
    }

    /// Parses the header, centers and weights; keyframe lines are derived
    /// data and are not read back.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let (_, header) = lines.next().ok_or_else(|| Error::parse_line(1, "empty trajectory document"))?;
        let rest = header
            .strip_prefix(TRAJ_MAGIC)
            .ok_or_else(|| Error::parse_line(1, format!("expected `{TRAJ_MAGIC}` header")))?;
        let (mut kind, mut size, mut sigma, mut prompts) = (None, None, None, None);
        for field in rest.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::parse_line(1, format!("malformed header field `{field}`")))?;
            let bad = |_| Error::parse_line(1, format!("bad value in `{field}`"));
            match key {
                "basis" => kind = Some(value.parse::<BasisKind>().map_err(|e| Error::parse_line(1, e.to_string()))?),
                "size" => size = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "sigma" => sigma = Some(value.parse::<f64>().map_err(|e| bad(e.to_string()))?),
                "prompts" => prompts = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                _ => return Err(Error::parse_line(1, format!("unknown header field `{key}`"))),
            }
        }
        let missing = |k: &str| Error::parse_line(1, format!("header lacks `{k}`"));
        let kind = kind.ok_or_else(|| missing("basis"))?;
        let size = size.ok_or_else(|| missing("size"))?;
        let sigma = sigma.ok_or_else(|| missing("sigma"))?;
        let prompt_count = prompts.ok_or_else(|| missing("prompts"))?;

        let mut numbers = |tag: &str| -> Result<Vec<f64>> {
            let (no, line) = lines.next().ok_or_else(|| Error::parse_line(0, format!("missing `{tag}` line")))?;
            let body = line
                .strip_prefix(tag)
                .ok_or_else(|| Error::parse_line(no, format!("expected `{tag}`")))?;
            body.split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| Error::parse_line(no, format!("bad number `{v}`"))))
                .collect()
        };
        let centers = numbers("centers")?;
        let mut weights = DMatrix::zeros(6, size);
        for j in 0..6 {
            let row = numbers(&format!("w{j}"))?;
            if row.len() != size {
                return Err(Error::DimensionMismatch(format!("w{j} has {} entries, expected {size}", row.len())));
            }
            weights.row_mut(j).copy_from_slice(&row);
        }
        let basis = BasisSpec { kind, size, sigma, centers };
        Ok(TrajectoryDocument { model: TrajectoryModel::new(basis, weights)?, prompt_count })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>, keyframes: usize) -> Result<()> {
        write_atomic(path.as_ref(), self.to_text(keyframes)?.as_bytes())
    }
}
