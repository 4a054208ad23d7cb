//! Files the commands write besides scenes and trajectories: cost traces,
//! pose documents and keyframe images.

use std::fmt::Write as _;
use std::path::Path;

use camtraj::optimize::TraceEntry;
use camtraj::renderer::{render_channel, CameraPose, Channel};
use camtraj::scene::{CameraIntrinsics, GaussianCloud};
use camtraj::write_atomic;

use crate::error::CliError;

pub const TRACE_HEADER: &str = "iteration,tce,tre,upright,prior,alpha,total";

/// One CSV row per optimizer iteration. Terms the cost did not evaluate
/// are written as `NaN`.
pub fn trace_csv(trace: &[TraceEntry]) -> String {
    let mut s = format!("{TRACE_HEADER}\n");
    for e in trace {
        match &e.terms {
            Some(b) => {
                let _ = writeln!(s, "{},{},{},{},{},{},{}", e.iteration, b.tce, b.tre, b.upright, b.prior, b.alpha, b.total);
            }
            None => {
                let _ = writeln!(s, "{},NaN,NaN,NaN,NaN,NaN,{}", e.iteration, e.value);
            }
        }
    }
    s
}

const POSE_MAGIC: &str = "SPLATPOSE v1";

/// Optimized poses for one prompt channel, each with its final cost.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseDocument {
    pub prompt: usize,
    pub poses: Vec<(CameraPose, f64)>,
}

impl PoseDocument {
    /// Header `SPLATPOSE v1 prompt=<i> poses=<k>`, then one line per pose:
    /// `rx ry rz tx ty tz cost`.
    pub fn to_text(&self) -> String {
        let mut s = format!("{POSE_MAGIC} prompt={} poses={}\n", self.prompt, self.poses.len());
        for (p, cost) in &self.poses {
            let v = p.params();
            let _ = writeln!(s, "{:?} {:?} {:?} {:?} {:?} {:?} {:?}", v[0], v[1], v[2], v[3], v[4], v[5], cost);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let bad = |m: String| CliError::Validation(format!("pose document: {m}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let rest = header.strip_prefix(POSE_MAGIC).ok_or_else(|| bad(format!("expected `{POSE_MAGIC}` header")))?;
        let (mut prompt, mut count) = (None, None);
        for field in rest.split_whitespace() {
            let (k, v) = field.split_once('=').ok_or_else(|| bad(format!("malformed field `{field}`")))?;
            let v: usize = v.parse().map_err(|_| bad(format!("bad integer in `{field}`")))?;
            match k {
                "prompt" => prompt = Some(v),
                "poses" => count = Some(v),
                _ => return Err(bad(format!("unknown field `{k}`"))),
            }
        }
        let prompt = prompt.ok_or_else(|| bad("header lacks `prompt`".into()))?;
        let count = count.ok_or_else(|| bad("header lacks `poses`".into()))?;
        let poses = lines
            .map(|l| {
                let v: Vec<f64> = l
                    .split_whitespace()
                    .map(|x| x.parse().map_err(|_| bad(format!("bad number `{x}`"))))
                    .collect::<Result<_, _>>()?;
                if v.len() != 7 {
                    return Err(bad(format!("pose line has {} values, expected 7", v.len())));
                }
                Ok((CameraPose::from_params(&v[..6]), v[6]))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if poses.len() != count {
            return Err(bad(format!("header announces {count} poses, found {}", poses.len())));
        }
        Ok(PoseDocument { prompt, poses })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// Writes `frame_<idx>_<t>.pgm` (mask of `prompt`) and `.ppm` (color).
pub fn write_frame_pair(
    dir: &Path,
    index: usize,
    t: f64,
    cloud: &GaussianCloud,
    pose: &CameraPose,
    k: &CameraIntrinsics,
    prompt: usize,
) -> Result<(), CliError> {
    let stem = format!("frame_{index:03}_{t:.4}");
    let mask = render_channel(cloud, pose, k, Channel::Mask(prompt))?;
    write_atomic(&dir.join(format!("{stem}.pgm")), &mask.to_pgm())?;
    let color = render_channel(cloud, pose, k, Channel::Color)?;
    write_atomic(&dir.join(format!("{stem}.ppm")), &color.to_ppm())?;
    Ok(())
}
