//! `key = value` run configuration shared by every subcommand.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are an
//! error so typos do not silently fall back to defaults.

use std::path::Path;

use camtraj::costs::{CostConfig, CostTerms};
use camtraj::metrics::EvalConfig;
use camtraj::semantics::FilterConfig;
use camtraj::trajectory::BasisKind;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Prompt order as query labels or channel indices; empty means all
    /// channels in stored order.
    pub prompts: Vec<String>,
    /// Channel optimized in `pose` and `sgld` modes.
    pub prompt: String,
    pub basis: BasisKind,
    /// `None` uses the basis default for the prompt count.
    pub basis_size: Option<usize>,
    pub rbf_sigma: Option<f64>,
    pub cost: CostConfig,
    pub iterations: Option<usize>,
    pub rotation_lr: f64,
    /// `None` derives the step from the object sizes.
    pub translation_lr: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub init_distance_factor: f64,
    pub init_jitter: f64,
    pub sgld_batch: usize,
    pub sgld_step: f64,
    /// `None` uses `1e-4 · |mean initial cost|`.
    pub sgld_temperature: Option<f64>,
    pub sgld_rotation_scale: f64,
    pub sgld_translation_scale: f64,
    pub width: u32,
    pub height: u32,
    pub render_width: u32,
    pub render_height: u32,
    pub eval: EvalConfig,
    pub filter: FilterConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            prompts: Vec::new(),
            prompt: "0".into(),
            basis: BasisKind::Rbf,
            basis_size: None,
            rbf_sigma: None,
            cost: CostConfig::default(),
            iterations: None,
            rotation_lr: camtraj::optimize::ROTATION_LR,
            translation_lr: None,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            init_distance_factor: 4.0,
            init_jitter: 0.01,
            sgld_batch: 20,
            sgld_step: 5e-3,
            sgld_temperature: None,
            sgld_rotation_scale: 1.0,
            sgld_translation_scale: 1.0,
            width: 64,
            height: 64,
            render_width: 128,
            render_height: 128,
            eval: EvalConfig::default(),
            filter: FilterConfig::default(),
        }
    }
}

fn parse_terms(value: &str) -> Result<CostTerms, String> {
    let mut t = CostTerms { tce: false, tre: false, upright: false, prior: false };
    for name in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match name {
            "tce" => t.tce = true,
            "tre" => t.tre = true,
            "upright" => t.upright = true,
            "prior" => t.prior = true,
            "all" => t = CostTerms::ALL,
            other => return Err(format!("unknown cost term `{other}`")),
        }
    }
    Ok(t)
}

fn list(value: &str) -> Vec<String> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut c = RunConfig::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Validation(format!("config line {}: expected key = value", no + 1)))?;
            c.set(key.trim(), value.trim())
                .map_err(|m| CliError::Validation(format!("config line {}: {m}", no + 1)))?;
        }
        c.validate()?;
        Ok(c)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("`{key}`: cannot parse `{v}`"))
        }
        fn opt<T: std::str::FromStr>(key: &str, v: &str) -> Result<Option<T>, String> {
            if v == "auto" { Ok(None) } else { num(key, v).map(Some) }
        }
        match key {
            "prompts" => self.prompts = list(value),
            "prompt" => self.prompt = value.to_string(),
            "basis" => self.basis = value.parse().map_err(|e: camtraj::Error| e.to_string())?,
            "basis_size" => self.basis_size = opt(key, value)?,
            "rbf_sigma" => self.rbf_sigma = opt(key, value)?,
            "target_ratio" => self.cost.target_ratio = num(key, value)?,
            "prior_radius" => self.cost.prior_radius = opt(key, value)?,
            "prior_weight" => self.cost.prior_weight = num(key, value)?,
            "prior_decay" => self.cost.prior_decay = num(key, value)?,
            "samples_per_interval" => self.cost.samples_per_interval = num(key, value)?,
            "mask_epsilon" => {
                self.cost.mask_epsilon = num(key, value)?;
                self.eval.mask_epsilon = self.cost.mask_epsilon;
            }
            "terms" => self.cost.terms = parse_terms(value)?,
            "iterations" => self.iterations = opt(key, value)?,
            "rotation_lr" => self.rotation_lr = num(key, value)?,
            "translation_lr" => self.translation_lr = opt(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "adam_eps" => self.adam_eps = num(key, value)?,
            "init_distance_factor" => self.init_distance_factor = num(key, value)?,
            "init_jitter" => self.init_jitter = num(key, value)?,
            "sgld_batch" => self.sgld_batch = num(key, value)?,
            "sgld_step" => self.sgld_step = num(key, value)?,
            "sgld_temperature" => self.sgld_temperature = opt(key, value)?,
            "sgld_rotation_scale" => self.sgld_rotation_scale = num(key, value)?,
            "sgld_translation_scale" => self.sgld_translation_scale = num(key, value)?,
            "width" => self.width = num(key, value)?,
            "height" => self.height = num(key, value)?,
            "render_width" => self.render_width = num(key, value)?,
            "render_height" => self.render_height = num(key, value)?,
            "keyframes" => self.eval.keyframes = num(key, value)?,
            "iou_threshold" => self.eval.threshold = num(key, value)?,
            "ldj_grid" => self.eval.ldj_grid = num(key, value)?,
            "percentile" => self.filter.percentile = num(key, value)?,
            "dbscan_eps" => self.filter.dbscan_eps = opt(key, value)?,
            "dbscan_min_pts" => self.filter.dbscan_min_pts = num(key, value)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        if key == "target_ratio" {
            self.eval.target_ratio = self.cost.target_ratio;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.cost.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        let bad = |m: &str| Err(CliError::Validation(m.to_string()));
        if self.sgld_batch == 0 {
            return bad("sgld_batch must be at least 1");
        }
        if self.eval.keyframes == 0 {
            return bad("keyframes must be at least 1");
        }
        if self.eval.ldj_grid < 32 {
            return bad("ldj_grid must be at least 32");
        }
        if !(self.init_distance_factor > 0.0) || self.init_jitter < 0.0 {
            return bad("init_distance_factor must be positive and init_jitter non-negative");
        }
        if self.translation_lr.is_some_and(|v| !(v > 0.0)) || !(self.rotation_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        Ok(())
    }

    /// Resolves `prompts` against the query labels, if any, to channel
    /// indices below `available`.
    pub fn prompt_indices(&self, labels: Option<&[String]>, available: usize) -> Result<Vec<usize>, CliError> {
        if self.prompts.is_empty() {
            return Ok((0..available).collect());
        }
        self.prompts.iter().map(|p| resolve_prompt(p, labels, available)).collect()
    }

    pub fn pose_prompt(&self, labels: Option<&[String]>, available: usize) -> Result<usize, CliError> {
        resolve_prompt(&self.prompt, labels, available)
    }
}

fn resolve_prompt(p: &str, labels: Option<&[String]>, available: usize) -> Result<usize, CliError> {
    let index = match p.parse::<usize>() {
        Ok(i) => i,
        Err(_) => labels
            .and_then(|l| l.iter().position(|x| x == p))
            .ok_or_else(|| CliError::Validation(format!("unknown prompt `{p}` (pass --queries to use labels)")))?,
    };
    if index >= available {
        return Err(CliError::Validation(format!(
            "prompt {index} out of range: the scene has {available} channels"
        )));
    }
    Ok(index)
}
