//! Motion/audio CSV files and raw-pose JSON.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::audio::AudioSequence;
use super::motion::{MotionSequence, RawPoseSequence};
use super::skeleton::{Skeleton, AUDIO_DIM, FPS, LAYOUT_VERSION, MOTION_DIM, N_JOINTS};
use crate::error::{Error, Result};

pub const MOTION_HEADER: &str = "fps,joints,layout_version";

fn write_rows(out: &mut String, data: &[f64], width: usize) {
    for row in data.chunks(width) {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            // `{}` prints the shortest representation that parses back exactly
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
}

fn parse_rows<'a>(
    path: &Path,
    lines: impl Iterator<Item = (usize, &'a str)>,
    width: usize,
) -> Result<Vec<f64>> {
    let mut data = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let before = data.len();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                message: format!("line {}: cannot parse {field:?} as a number", lineno + 1),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    message: format!("line {}: non-finite value {field}", lineno + 1),
                });
            }
            data.push(v);
        }
        let got = data.len() - before;
        if got != width {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                message: format!("line {}: expected {width} columns, found {got}", lineno + 1),
            });
        }
    }
    if data.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: "no frames".into(),
        });
    }
    Ok(data)
}

pub fn motion_to_csv(m: &MotionSequence) -> String {
    let mut out = format!("{MOTION_HEADER}\n{},{N_JOINTS},{LAYOUT_VERSION}\n", FPS as u32);
    write_rows(&mut out, m.frames(), MOTION_DIM);
    out
}

pub fn write_motion_csv(path: &Path, m: &MotionSequence) -> Result<()> {
    fs::write(path, motion_to_csv(m)).map_err(|e| Error::io(path, e))
}

pub fn read_motion_csv(path: &Path, style: &str) -> Result<MotionSequence> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    match lines.next() {
        Some((_, h)) if h.trim() == MOTION_HEADER => {}
        other => {
            return Err(parse_err(format!(
                "expected header {MOTION_HEADER:?}, found {:?}",
                other.map(|(_, l)| l).unwrap_or("")
            )))
        }
    }
    let meta = lines
        .next()
        .map(|(_, l)| l.trim().to_string())
        .unwrap_or_default();
    let fields: Vec<&str> = meta.split(',').map(str::trim).collect();
    let ok = fields.len() == 3
        && fields[0].parse::<f64>().ok() == Some(FPS)
        && fields[1].parse::<usize>().ok() == Some(N_JOINTS)
        && fields[2].parse::<u32>().ok() == Some(LAYOUT_VERSION);
    if !ok {
        return Err(parse_err(format!(
            "unsupported metadata {meta:?}, expected \"{},{N_JOINTS},{LAYOUT_VERSION}\"",
            FPS as u32
        )));
    }
    let data = parse_rows(path, lines, MOTION_DIM)?;
    MotionSequence::new(data, style).map_err(|e| parse_err(e.to_string()))
}

pub fn audio_to_csv(a: &AudioSequence) -> String {
    let mut out = String::new();
    write_rows(&mut out, a.frames(), AUDIO_DIM);
    out
}

pub fn write_audio_csv(path: &Path, a: &AudioSequence) -> Result<()> {
    fs::write(path, audio_to_csv(a)).map_err(|e| Error::io(path, e))
}

pub fn read_audio_csv(path: &Path) -> Result<AudioSequence> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let data = parse_rows(path, text.lines().enumerate(), AUDIO_DIM)?;
    AudioSequence::new(data).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Skeleton plus pose sequence, as stored in a raw-pose JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPoseFile {
    pub skeleton: Skeleton,
    #[serde(flatten)]
    pub pose: RawPoseSequence,
}

pub fn read_raw_pose_json(path: &Path) -> Result<RawPoseFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: RawPoseFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    file.skeleton.validate()?;
    file.pose.validate()?;
    Ok(file)
}

pub fn write_raw_pose_json(path: &Path, file: &RawPoseFile) -> Result<()> {
    let text = serde_json::to_string_pretty(file)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
