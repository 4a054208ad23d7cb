//! Adam, stochastic gradient Langevin dynamics and the central-difference
//! gradient used to check every analytic gradient in the crate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::costs::CostBreakdown;
use crate::error::{Error, Result};

/// One objective evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: Vec<f64>,
    /// Per-term values when the objective is a photogenic cost.
    pub terms: Option<CostBreakdown>,
}

impl Evaluation {
    pub fn plain(value: f64, gradient: Vec<f64>) -> Self {
        Evaluation { value, gradient, terms: None }
    }
}

/// A differentiable scalar function of a parameter vector. `iteration`
/// lets objectives carry schedules such as a decaying term weight.
pub trait Objective: Sync {
    fn evaluate(&self, params: &[f64], iteration: usize) -> Result<Evaluation>;

    fn value(&self, params: &[f64], iteration: usize) -> Result<f64> {
        Ok(self.evaluate(params, iteration)?.value)
    }
}

impl<F> Objective for F
where
    F: Fn(&[f64]) -> (f64, Vec<f64>) + Sync,
{
    fn evaluate(&self, params: &[f64], _iteration: usize) -> Result<Evaluation> {
        let (v, g) = self(params);
        Ok(Evaluation::plain(v, g))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub value: f64,
    pub terms: Option<CostBreakdown>,
}

fn check_finite(eval: &Evaluation, iteration: usize, dim: usize) -> Result<()> {
    if !eval.value.is_finite() {
        return Err(Error::NonFinite { what: "objective value", iteration });
    }
    if eval.gradient.len() != dim {
        return Err(Error::DimensionMismatch(format!(
            "gradient has {} entries, parameters {dim}",
            eval.gradient.len()
        )));
    }
    if eval.gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite { what: "gradient", iteration });
    }
    Ok(())
}

/// Default Adam step for rotation-vector entries (radians).
pub const ROTATION_LR: f64 = 0.01;
/// Default Adam step for translation entries, per unit of scene extent.
pub const TRANSLATION_LR_PER_EXTENT: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub iterations: usize,
    /// Per-parameter multipliers of the learning rate, cycled if shorter
    /// than the parameter vector. Empty means all ones.
    pub scale: Vec<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1.0, beta1: 0.9, beta2: 0.999, eps: 1e-8, iterations: 400, scale: Vec::new() }
    }
}

impl AdamConfig {
    /// Rotation entries step by `rotation_lr`, translation entries by
    /// `translation_lr`, for parameters laid out as `[r, t]` blocks of six.
    pub fn for_pose(rotation_lr: f64, translation_lr: f64, iterations: usize) -> Self {
        AdamConfig {
            learning_rate: 1.0,
            iterations,
            scale: vec![rotation_lr, rotation_lr, rotation_lr, translation_lr, translation_lr, translation_lr],
            ..Default::default()
        }
    }

    /// Same per-block steps for a row-major `6 × n` weight matrix whose
    /// first three rows are rotation and last three translation.
    pub fn for_trajectory(rotation_lr: f64, translation_lr: f64, n: usize, iterations: usize) -> Self {
        AdamConfig {
            learning_rate: 1.0,
            iterations,
            scale: (0..6 * n).map(|i| if i < 3 * n { rotation_lr } else { translation_lr }).collect(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.eps > 0.0
            && self.scale.iter().all(|s| *s > 0.0 && s.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("invalid Adam configuration {self:?}")))
        }
    }
}

fn scale_at(scale: &[f64], i: usize) -> f64 {
    if scale.is_empty() {
        1.0
    } else {
        scale[i % scale.len()]
    }
}

/// Result of an optimizer run; `trace[k]` is the objective at the
/// parameters entering iteration `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub params: Vec<f64>,
    pub trace: Vec<TraceEntry>,
}

impl RunResult {
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.trace
            .iter()
            .map(|e| {
                best = best.min(e.value);
                best
            })
            .collect()
    }
}

/// Adam with bias correction; `callback` sees each iteration's parameters
/// and evaluation before the update.
pub fn adam_run(
    objective: &dyn Objective,
    init: &[f64],
    config: &AdamConfig,
    mut callback: impl FnMut(usize, &[f64], &Evaluation),
) -> Result<RunResult> {
    config.validate()?;
    let dim = init.len();
    let mut x = init.to_vec();
    let mut m = vec![0.0; dim];
    let mut v = vec![0.0; dim];
    let mut trace = Vec::with_capacity(config.iterations);
    for k in 0..config.iterations {
        let eval = objective.evaluate(&x, k)?;
        check_finite(&eval, k, dim)?;
        callback(k, &x, &eval);
        trace.push(TraceEntry { iteration: k, value: eval.value, terms: eval.terms });
        let step = (k + 1) as i32;
        let c1 = 1.0 - config.beta1.powi(step);
        let c2 = 1.0 - config.beta2.powi(step);
        for i in 0..dim {
            let g = eval.gradient[i];
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
            let lr = config.learning_rate * scale_at(&config.scale, i);
            x[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + config.eps);
        }
    }
    Ok(RunResult { params: x, trace })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgldConfig {
    pub step_size: f64,
    pub temperature: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Per-parameter multipliers of the step size (cycled; empty = ones).
    /// The noise is scaled consistently so the stationary density is
    /// unchanged.
    pub scale: Vec<f64>,
}

impl Default for SgldConfig {
    fn default() -> Self {
        SgldConfig { step_size: 1e-3, temperature: 0.0, iterations: 200, seed: 0, scale: Vec::new() }
    }
}

impl SgldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.step_size > 0.0 && self.temperature >= 0.0 && self.scale.iter().all(|s| *s > 0.0) {
            Ok(())
        } else {
            Err(Error::Invalid(format!("invalid SGLD configuration {self:?}")))
        }
    }
}

/// Per-member random stream, independent of how members are scheduled.
pub fn member_rng(seed: u64, member: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(member as u64 + 1);
    rng
}

/// Langevin dynamics `θ ← θ − η∇L + √(2ηT) ξ` run independently on each
/// batch member.
pub fn sgld_run(objective: &dyn Objective, init_batch: &[Vec<f64>], config: &SgldConfig) -> Result<Vec<RunResult>> {
    config.validate()?;
    init_batch
        .par_iter()
        .enumerate()
        .map(|(member, init)| {
            let mut rng = member_rng(config.seed, member);
            let mut x = init.clone();
            let mut trace = Vec::with_capacity(config.iterations);
            for k in 0..config.iterations {
                let eval = objective.evaluate(&x, k)?;
                check_finite(&eval, k, x.len())?;
                trace.push(TraceEntry { iteration: k, value: eval.value, terms: eval.terms });
                for (i, xi) in x.iter_mut().enumerate() {
                    let eta = config.step_size * scale_at(&config.scale, i);
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *xi += -eta * eval.gradient[i] + (2.0 * eta * config.temperature).sqrt() * z;
                }
            }
            Ok(RunResult { params: x, trace })
        })
        .collect()
}

/// Central differences `(f(x + h e_k) − f(x − h e_k)) / 2h`.
pub fn finite_difference_gradient(f: impl Fn(&[f64]) -> Result<f64>, params: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut x = params.to_vec();
    (0..params.len())
        .map(|k| {
            x[k] = params[k] + h;
            let plus = f(&x)?;
            x[k] = params[k] - h;
            let minus = f(&x)?;
            x[k] = params[k];
            if !(plus.is_finite() && minus.is_finite()) {
                return Err(Error::NonFinite { what: "finite-difference sample", iteration: k });
            }
            Ok((plus - minus) / (2.0 * h))
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or 0 when both vectors are below `floor`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale <= floor {
        0.0
    } else {
        diff / scale
    }
}
