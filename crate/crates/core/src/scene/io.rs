//! `SPLATSCENE v1` files.
//!
//! ```text
//! SPLATSCENE v1 count=<N> dim=<D> prompts=<n> format=text|binary camera=W,H,fx,fy,cx,cy
//! ```
//!
//! followed by one record per Gaussian: mean(3) scale(3) quaternion(4)
//! opacity(1) color(3) embedding(D) channels(n). Text records are one line of
//! whitespace-separated decimals; binary records are little-endian `f32`
//! packed back to back after the header's newline.

use std::path::Path;

use super::{CameraIntrinsics, Gaussian, GaussianCloud};
use crate::error::{Error, Location, Result};
use crate::io_util::write_atomic;

const MAGIC: &str = "SPLATSCENE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SceneFormat {
    #[default]
    Text,
    Binary,
}

struct Header {
    count: usize,
    dim: usize,
    prompts: usize,
    format: SceneFormat,
    camera: CameraIntrinsics,
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<(GaussianCloud, CameraIntrinsics)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_scene(&bytes)
}

pub fn save_scene(
    cloud: &GaussianCloud,
    intrinsics: &CameraIntrinsics,
    path: impl AsRef<Path>,
    format: SceneFormat,
) -> Result<()> {
    write_atomic(path.as_ref(), &write_scene(cloud, intrinsics, format))
}

pub fn write_scene(cloud: &GaussianCloud, k: &CameraIntrinsics, format: SceneFormat) -> Vec<u8> {
    let mut out = format!(
        "{MAGIC} v1 count={} dim={} prompts={} format={} camera={},{},{},{},{},{}\n",
        cloud.len(),
        cloud.embedding_dim(),
        cloud.prompt_count(),
        match format {
            SceneFormat::Text => "text",
            SceneFormat::Binary => "binary",
        },
        k.width,
        k.height,
        k.fx,
        k.fy,
        k.cx,
        k.cy
    )
    .into_bytes();
    for g in cloud.gaussians() {
        match format {
            SceneFormat::Text => {
                let mut fields: Vec<String> = record_floats(g).map(|v| v.to_string()).collect();
                fields.extend(g.channels.iter().map(|&b| if b { "1" } else { "0" }.to_string()));
                out.extend_from_slice(fields.join(" ").as_bytes());
                out.push(b'\n');
            }
            SceneFormat::Binary => {
                for v in record_floats(g) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                for &b in &g.channels {
                    out.extend_from_slice(&(if b { 1.0f32 } else { 0.0 }).to_le_bytes());
                }
            }
        }
    }
    out
}

fn record_floats(g: &Gaussian) -> impl Iterator<Item = f32> + '_ {
    g.mean
        .iter()
        .chain(&g.scale)
        .chain(&g.rotation)
        .chain(std::iter::once(&g.opacity))
        .chain(&g.color)
        .chain(&g.embedding)
        .copied()
}

pub fn read_scene(bytes: &[u8]) -> Result<(GaussianCloud, CameraIntrinsics)> {
    let header_end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .unwrap_or(bytes.len());
    let header_line = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::parse_line(1, "header is not UTF-8"))?;
    let header = parse_header(header_line)?;
    let body = bytes.get(header_end + 1..).unwrap_or(&[]);
    let width = 14 + header.dim + header.prompts;

    let records: Vec<Vec<f32>> = match header.format {
        SceneFormat::Text => {
            let text = std::str::from_utf8(body).map_err(|e| Error::Parse {
                location: Location::ByteOffset(header_end + 1 + e.valid_up_to()),
                message: "record data is not UTF-8".into(),
            })?;
            let mut records = Vec::with_capacity(header.count);
            for (i, line) in text.lines().enumerate() {
                let lineno = i + 2;
                if line.trim().is_empty() {
                    continue;
                }
                let values = line
                    .split_whitespace()
                    .map(|tok| {
                        tok.parse::<f32>()
                            .map_err(|_| Error::parse_line(lineno, format!("bad number {tok:?}")))
                    })
                    .collect::<Result<Vec<f32>>>()?;
                if values.len() != width {
                    return Err(Error::parse_line(
                        lineno,
                        format!("expected {width} fields, found {}", values.len()),
                    ));
                }
                records.push(values);
            }
            if records.len() != header.count {
                return Err(Error::parse_line(
                    records.len() + 2,
                    format!("header declares {} records, found {}", header.count, records.len()),
                ));
            }
            records
        }
        SceneFormat::Binary => {
            let record_bytes = width * 4;
            if body.len() != header.count * record_bytes {
                return Err(Error::Parse {
                    location: Location::ByteOffset(header_end + 1 + body.len().min(header.count * record_bytes)),
                    message: format!(
                        "expected {} bytes of records, found {}",
                        header.count * record_bytes,
                        body.len()
                    ),
                });
            }
            body.chunks_exact(record_bytes)
                .map(|chunk| {
                    chunk
                        .chunks_exact(4)
                        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                        .collect()
                })
                .collect()
        }
    };

    let mut gaussians = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let channels = r[14 + header.dim..]
            .iter()
            .map(|&v| {
                if v == 0.0 {
                    Ok(false)
                } else if v == 1.0 {
                    Ok(true)
                } else {
                    Err(Error::InvalidGaussian { index: i, message: format!("channel flag {v} is not 0 or 1") })
                }
            })
            .collect::<Result<Vec<bool>>>()?;
        gaussians.push(Gaussian {
            mean: [r[0], r[1], r[2]],
            scale: [r[3], r[4], r[5]],
            rotation: [r[6], r[7], r[8], r[9]],
            opacity: r[10],
            color: [r[11], r[12], r[13]],
            embedding: r[14..14 + header.dim].to_vec(),
            channels,
        });
    }
    Ok((GaussianCloud::new(gaussians, header.dim, header.prompts)?, header.camera))
}

fn parse_header(line: &str) -> Result<Header> {
    let mut tokens = line.split_whitespace();
    if tokens.next() != Some(MAGIC) {
        return Err(Error::parse_line(1, format!("missing {MAGIC} magic")));
    }
    if tokens.next() != Some("v1") {
        return Err(Error::parse_line(1, "unsupported version"));
    }
    let (mut count, mut dim, mut prompts) = (None, None, None);
    let mut format = SceneFormat::Text;
    let mut camera = CameraIntrinsics::default();
    for tok in tokens {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| Error::parse_line(1, format!("expected key=value, found {tok:?}")))?;
        let int = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::parse_line(1, format!("bad integer for {key}: {v:?}")))
        };
        match key {
            "count" => count = Some(int(value)?),
            "dim" => dim = Some(int(value)?),
            "prompts" => prompts = Some(int(value)?),
            "format" => {
                format = match value {
                    "text" => SceneFormat::Text,
                    "binary" => SceneFormat::Binary,
                    other => return Err(Error::parse_line(1, format!("unknown format {other:?}"))),
                }
            }
            "camera" => camera = parse_camera(value)?,
            other => return Err(Error::parse_line(1, format!("unknown header field {other:?}"))),
        }
    }
    let missing = |k: &str| Error::parse_line(1, format!("header missing {k}="));
    Ok(Header {
        count: count.ok_or_else(|| missing("count"))?,
        dim: dim.ok_or_else(|| missing("dim"))?,
        prompts: prompts.ok_or_else(|| missing("prompts"))?,
        format,
        camera,
    })
}

fn parse_camera(value: &str) -> Result<CameraIntrinsics> {
    let parts: Vec<&str> = value.split(',').collect();
    if parts.len() != 6 {
        return Err(Error::parse_line(1, "camera= needs W,H,fx,fy,cx,cy"));
    }
    let dims = |s: &str| s.parse::<u32>().map_err(|_| Error::parse_line(1, format!("bad camera size {s:?}")));
    let real = |s: &str| s.parse::<f64>().map_err(|_| Error::parse_line(1, format!("bad camera value {s:?}")));
    CameraIntrinsics::new(
        dims(parts[0])?,
        dims(parts[1])?,
        real(parts[2])?,
        real(parts[3])?,
        real(parts[4])?,
        real(parts[5])?,
    )
    .map_err(|e| Error::parse_line(1, e.to_string()))
}
