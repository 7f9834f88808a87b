//! Trace files: one CSV per QP rung (`frame_index,frame_type,size_bytes`)
//! and a TOML ladder manifest naming them.

use std::fs;
use std::path::{Path, PathBuf};

use qoesim_core::traces::{ContentProfile, Frame, FrameType, VariantLadder, VideoTrace, QP_MIN};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderManifest {
    pub content: String,
    pub frame_rate: u32,
    pub gop_length: u32,
    pub variants: Vec<VariantFile>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantFile {
    pub qp: u8,
    pub file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct FrameRow {
    frame_index: u32,
    frame_type: FrameType,
    size_bytes: u32,
}

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn read_trace(path: &Path, qp: u8, gop_length: u32) -> Result<VideoTrace> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| parse_err(path, e.to_string()))?;
    let mut frames = Vec::new();
    for (k, row) in rdr.deserialize::<FrameRow>().enumerate() {
        let row = row.map_err(|e| parse_err(path, e.to_string()))?;
        if row.frame_index as usize != k {
            return Err(parse_err(
                path,
                format!("frame_index {} out of order, expected {k}", row.frame_index),
            ));
        }
        let expect = if row.frame_index % gop_length == 0 {
            FrameType::I
        } else {
            FrameType::P
        };
        if row.frame_type != expect {
            return Err(parse_err(
                path,
                format!(
                    "frame {k} is {:?}, GoP structure needs {expect:?}",
                    row.frame_type
                ),
            ));
        }
        frames.push(Frame {
            index: row.frame_index,
            frame_type: row.frame_type,
            size_bytes: row.size_bytes,
        });
    }
    Ok(VideoTrace { qp, frames })
}

pub fn write_trace(path: &Path, trace: &VideoTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for f in &trace.frames {
        w.serialize(FrameRow {
            frame_index: f.index,
            frame_type: f.frame_type,
            size_bytes: f.size_bytes,
        })?;
    }
    w.flush().map_err(Error::io(path))?;
    Ok(())
}

/// Loads a ladder from its manifest. Fields the files do not carry
/// (resolution, burstiness, ...) come from `base`; the QP=2 rate is measured.
pub fn read_ladder(manifest_path: &Path, base: &ContentProfile) -> Result<VariantLadder> {
    let text = fs::read_to_string(manifest_path).map_err(Error::io(manifest_path))?;
    let m: LadderManifest =
        toml::from_str(&text).map_err(|e| parse_err(manifest_path, e.to_string()))?;
    if m.frame_rate == 0 || m.gop_length == 0 {
        return Err(parse_err(
            manifest_path,
            "frame_rate and gop_length must be positive",
        ));
    }
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut variants = Vec::with_capacity(m.variants.len());
    for v in &m.variants {
        variants.push(read_trace(&dir.join(&v.file), v.qp, m.gop_length)?);
    }
    let frames = variants.first().map_or(0, |v| v.len());
    if let Some(v) = variants.iter().find(|v| v.len() != frames) {
        return Err(parse_err(
            manifest_path,
            format!(
                "QP {} has {} frames, QP {} has {frames}",
                v.qp,
                v.len(),
                variants[0].qp
            ),
        ));
    }
    let qp2_rate = variants
        .iter()
        .find(|v| v.qp == QP_MIN)
        .map(|v| v.mean_rate(m.frame_rate));
    let mut content = base.clone();
    content.name = m.content;
    content.frame_rate = m.frame_rate;
    content.gop_length = m.gop_length;
    content.frames = frames as u32;
    if let Some(r) = qp2_rate {
        content.base_rate_qp2 = r;
    }
    Ok(VariantLadder::from_traces(content, variants)?)
}

/// Writes every rung plus `ladder.toml` into `dir`; returns the manifest path.
pub fn write_ladder(dir: &Path, ladder: &VariantLadder) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let name = &ladder.content.name;
    let mut files = Vec::new();
    for v in ladder.variants() {
        let file = format!("{name}_qp{:02}.csv", v.qp);
        write_trace(&dir.join(&file), v)?;
        files.push(VariantFile { qp: v.qp, file });
    }
    let manifest = LadderManifest {
        content: name.clone(),
        frame_rate: ladder.content.frame_rate,
        gop_length: ladder.content.gop_length,
        variants: files,
    };
    let path = dir.join("ladder.toml");
    let text = toml::to_string(&manifest).map_err(|e| Error::Other(e.to_string()))?;
    fs::write(&path, text).map_err(Error::io(&path))?;
    Ok(path)
}
