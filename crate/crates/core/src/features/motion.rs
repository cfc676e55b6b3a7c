//! Raw pose sequences and their 63-dim frame encoding.

use serde::{Deserialize, Serialize};

use super::quat::{expmap_decode, expmap_encode, wrap_angle, Quat};
use super::skeleton::*;
use crate::error::{ensure, Error, Result};

/// Per-frame root position and joint rotations. The root rotation is the
/// hip's world orientation; every other rotation is local to its parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPoseSequence {
    pub fps: f64,
    pub root_position: Vec<[f64; 3]>,
    pub joint_rotations: Vec<Vec<Quat>>,
}

impl RawPoseSequence {
    pub fn n_frames(&self) -> usize {
        self.root_position.len()
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.fps.is_finite() && self.fps > 0.0, "fps must be positive, got {}", self.fps);
        let t = self.root_position.len();
        ensure!(t >= 2, "pose sequence needs at least 2 frames, got {t}");
        ensure!(
            self.joint_rotations.len() == t,
            "{} rotation frames for {t} root positions",
            self.joint_rotations.len()
        );
        for (i, rots) in self.joint_rotations.iter().enumerate() {
            ensure!(rots.len() == N_JOINTS, "frame {i} has {} joints, expected {N_JOINTS}", rots.len());
            for (j, q) in rots.iter().enumerate() {
                ensure!(q.is_unit(), "frame {i} joint {j}: quaternion is not unit-norm");
            }
            ensure!(
                self.root_position[i].iter().all(|v| v.is_finite()),
                "frame {i}: non-finite root position"
            );
        }
        Ok(())
    }

    pub fn heading(&self, t: usize) -> f64 {
        self.joint_rotations[t][0].heading()
    }
}

/// A `T × 63` motion matrix at 30 fps with its style label.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    frames: Vec<f64>,
    style: String,
}

impl MotionSequence {
    pub fn new(frames: Vec<f64>, style: impl Into<String>) -> Result<Self> {
        ensure!(
            !frames.is_empty() && frames.len() % MOTION_DIM == 0,
            "motion data length {} is not a positive multiple of {MOTION_DIM}",
            frames.len()
        );
        if let Some(i) = frames.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "motion frame {} dim {} is not finite",
                i / MOTION_DIM,
                i % MOTION_DIM
            )));
        }
        Ok(Self {
            frames,
            style: style.into(),
        })
    }

    pub fn fps(&self) -> f64 {
        FPS
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len() / MOTION_DIM
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.frames[t * MOTION_DIM..(t + 1) * MOTION_DIM]
    }

    pub fn frames(&self) -> &[f64] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<f64> {
        self.frames
    }

    pub fn style(&self) -> &str {
        &self.style
    }

    pub fn with_style(mut self, style: impl Into<String>) -> Self {
        self.style = style.into();
        self
    }

    /// Frames `start .. start + len`.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        ensure!(
            len > 0 && start + len <= self.n_frames(),
            "window {start}..{} exceeds {} frames",
            start + len,
            self.n_frames()
        );
        Ok(Self {
            frames: self.frames[start * MOTION_DIM..(start + len) * MOTION_DIM].to_vec(),
            style: self.style.clone(),
        })
    }
}

/// Planar placement used to start integrating root deltas.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RootSeed {
    pub x: f64,
    pub z: f64,
    pub heading: f64,
}

fn forward_axis(theta: f64) -> [f64; 2] {
    [theta.sin(), theta.cos()]
}

fn lateral_axis(theta: f64) -> [f64; 2] {
    [theta.cos(), -theta.sin()]
}

/// Encodes a 30 fps pose sequence into 63-dim frames.
pub fn encode_motion(raw: &RawPoseSequence, skel: &Skeleton, style: &str) -> Result<MotionSequence> {
    skel.validate()?;
    raw.validate()?;
    ensure!(
        (raw.fps - FPS).abs() < 1e-9,
        "encode_motion expects {FPS} fps, got {} (resample first)",
        raw.fps
    );
    let t_len = raw.n_frames();
    let mut frames = vec![0.0; t_len * MOTION_DIM];
    for t in 0..t_len {
        let f = &mut frames[t * MOTION_DIM..(t + 1) * MOTION_DIM];
        for j in 1..N_JOINTS {
            let e = expmap_encode(&raw.joint_rotations[t][j])?;
            for (dim, comp) in joint_slots(j) {
                f[dim] = e[comp];
            }
        }
        let p = raw.root_position[t];
        f[DIM_VERTICAL] = p[1];
        if t > 0 {
            let prev = raw.root_position[t - 1];
            let theta_prev = raw.heading(t - 1);
            let d = [p[0] - prev[0], p[2] - prev[2]];
            let fw = forward_axis(theta_prev);
            let lat = lateral_axis(theta_prev);
            f[DIM_FORWARD] = d[0] * fw[0] + d[1] * fw[1];
            f[DIM_LATERAL] = d[0] * lat[0] + d[1] * lat[1];
            f[DIM_HEADING] = wrap_angle(raw.heading(t) - theta_prev);
        }
    }
    MotionSequence::new(frames, style)
}

/// Integrates the root deltas of `m` from `seed` and rebuilds a 30 fps pose
/// sequence. The root orientation is reconstructed as a pure yaw and the
/// dropped wrist component as zero.
pub fn decode_motion(m: &MotionSequence, skel: &Skeleton, seed: RootSeed) -> Result<RawPoseSequence> {
    skel.validate()?;
    let t_len = m.n_frames();
    let mut root_position = Vec::with_capacity(t_len);
    let mut joint_rotations = Vec::with_capacity(t_len);
    let (mut x, mut z, mut theta) = (seed.x, seed.z, seed.heading);
    for t in 0..t_len {
        let f = m.frame(t);
        let fw = forward_axis(theta);
        let lat = lateral_axis(theta);
        x += f[DIM_FORWARD] * fw[0] + f[DIM_LATERAL] * lat[0];
        z += f[DIM_FORWARD] * fw[1] + f[DIM_LATERAL] * lat[1];
        theta = wrap_angle(theta + f[DIM_HEADING]);
        root_position.push([x, f[DIM_VERTICAL], z]);
        let mut rots = Vec::with_capacity(N_JOINTS);
        rots.push(Quat::from_yaw(theta));
        for j in 1..N_JOINTS {
            let mut e = [0.0; 3];
            for (dim, comp) in joint_slots(j) {
                e[comp] = f[dim];
            }
            rots.push(expmap_decode(e));
        }
        joint_rotations.push(rots);
    }
    Ok(RawPoseSequence {
        fps: FPS,
        root_position,
        joint_rotations,
    })
}

/// Downsamples to `target_fps` with linear interpolation of positions and
/// slerp of rotations at timestamps `k / target_fps`.
pub fn resample(raw: &RawPoseSequence, target_fps: f64) -> Result<RawPoseSequence> {
    raw.validate()?;
    ensure!(
        target_fps > 0.0 && raw.fps >= target_fps,
        "resample only downsamples ({} fps -> {target_fps} fps requested)",
        raw.fps
    );
    let n_src = raw.n_frames();
    let duration = (n_src - 1) as f64 / raw.fps;
    let n_out = (duration * target_fps + 1e-9).floor() as usize + 1;
    let mut root_position = Vec::with_capacity(n_out);
    let mut joint_rotations = Vec::with_capacity(n_out);
    for k in 0..n_out {
        let pos = k as f64 * raw.fps / target_fps;
        let i = (pos.floor() as usize).min(n_src - 1);
        let frac = pos - i as f64;
        if frac.abs() < 1e-12 || i + 1 >= n_src {
            root_position.push(raw.root_position[i]);
            joint_rotations.push(raw.joint_rotations[i].clone());
            continue;
        }
        let (a, b) = (raw.root_position[i], raw.root_position[i + 1]);
        root_position.push([
            a[0] + frac * (b[0] - a[0]),
            a[1] + frac * (b[1] - a[1]),
            a[2] + frac * (b[2] - a[2]),
        ]);
        joint_rotations.push(
            raw.joint_rotations[i]
                .iter()
                .zip(&raw.joint_rotations[i + 1])
                .map(|(qa, qb)| qa.slerp(qb, frac))
                .collect(),
        );
    }
    Ok(RawPoseSequence {
        fps: target_fps,
        root_position,
        joint_rotations,
    })
}
