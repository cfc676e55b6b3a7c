//! Style domains, the synthetic two-style benchmark, dataset files and
//! unpaired batch sampling.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use cycledance_autodiff::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::features::audio::WINDOW;
use crate::features::io::{read_audio_csv, read_motion_csv, write_audio_csv, write_motion_csv};
use crate::features::quat::{expmap_decode, Quat};
use crate::features::skeleton::{AUDIO_DIM, FPS, MOTION_DIM, N_JOINTS};
use crate::features::{encode_motion, extract_audio_features, AudioSequence, MotionSequence, RawPoseSequence, Skeleton};
use crate::metrics::acceleration_magnitude;

pub const SAMPLE_RATE: f64 = 16000.0;
/// Shortest clip accepted for training; the longest curriculum stage fits.
pub const MIN_CLIP_FRAMES: usize = 128;
pub const MANIFEST: &str = "manifest.json";

/// Joints driven by each of the five synthetic joint groups: torso, left
/// arm, right arm, left leg, right leg.
const GROUPS: [[usize; 4]; 5] = [[1, 2, 3, 4], [5, 6, 7, 8], [9, 10, 11, 12], [13, 14, 15, 16], [17, 18, 19, 20]];
const LATENT: usize = 1;
const VOCAB: usize = 3;
/// Latent coordinate of each key pose.
const KEY_LEVELS: [f64; VOCAB] = [-1.4, 0.0, 1.4];
const BASIS_SEED: u64 = 0x5EED_B0D7;
/// Frames a step-hold transition takes.
const HIT_FRAMES: f64 = 3.0;

/// One paired motion/music clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub name: String,
    pub motion: MotionSequence,
    pub audio: AudioSequence,
}

impl Clip {
    pub fn new(name: impl Into<String>, motion: MotionSequence, audio: AudioSequence) -> Result<Self> {
        let name = name.into();
        ensure!(
            motion.n_frames() == audio.n_frames(),
            "clip {name}: motion has {} frames but audio has {}",
            motion.n_frames(),
            audio.n_frames()
        );
        Ok(Self { name, motion, audio })
    }

    pub fn n_frames(&self) -> usize {
        self.motion.n_frames()
    }
}

/// The clips of one style. `label` is `X` or `Y`; `name` is the display
/// name such as `BJ`.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleDomain {
    pub label: String,
    pub name: String,
    pub clips: Vec<Clip>,
}

impl StyleDomain {
    pub fn min_frames(&self) -> usize {
        self.clips.iter().map(Clip::n_frames).min().unwrap_or(0)
    }

    pub fn pairs(&self) -> Vec<(MotionSequence, AudioSequence)> {
        self.clips.iter().map(|c| (c.motion.clone(), c.audio.clone())).collect()
    }

    pub fn motions(&self) -> Vec<MotionSequence> {
        self.clips.iter().map(|c| c.motion.clone()).collect()
    }
}

/// Parameters of one synthetic dance style.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticStyleSpec {
    pub name: String,
    pub tempo_bpm: f64,
    /// Probability that a beat uses a step-hold transition instead of a
    /// smooth one.
    pub jerkiness: f64,
    /// Sway frequency in Hz for each joint group.
    pub base_frequencies: [f64; 5],
    /// Key-pose scale for each joint group.
    pub amplitude: [f64; 5],
    pub sway: f64,
    /// Forward root speed in meters per second.
    pub travel_speed: f64,
    pub seed: u64,
}

impl SyntheticStyleSpec {
    /// Flowing style at a slow tempo.
    pub fn smooth(seed: u64) -> Self {
        Self {
            name: "BJ".into(),
            tempo_bpm: 72.0,
            jerkiness: 0.0,
            base_frequencies: [0.25, 0.5, 0.5, 0.25, 0.25],
            amplitude: [1.0, 1.0, 1.0, 1.0, 1.0],
            sway: 0.3,
            travel_speed: 0.3,
            seed,
        }
    }

    /// Locking-like style: faster tempo, step-hold transitions.
    pub fn jerky(seed: u64) -> Self {
        Self {
            name: "LC".into(),
            tempo_bpm: 140.0,
            jerkiness: 1.0,
            base_frequencies: [0.5, 1.0, 1.0, 0.5, 0.5],
            amplitude: [0.9, 1.15, 1.15, 0.9, 0.9],
            sway: 0.15,
            travel_speed: 0.15,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.tempo_bpm.is_finite() && self.tempo_bpm > 0.0,
            "style {}: tempo must be positive",
            self.name
        );
        ensure!(
            (0.0..=1.0).contains(&self.jerkiness),
            "style {}: jerkiness {} outside [0, 1]",
            self.name,
            self.jerkiness
        );
        ensure!(
            self.base_frequencies.iter().chain(&self.amplitude).all(|v| v.is_finite() && *v >= 0.0)
                && self.sway.is_finite()
                && self.travel_speed.is_finite(),
            "style {}: frequencies and amplitudes must be finite and non-negative",
            self.name
        );
        ensure!(!self.name.is_empty(), "style name must not be empty");
        Ok(())
    }

    pub fn beat_frames(&self) -> f64 {
        FPS * 60.0 / self.tempo_bpm
    }
}

/// Exp-map basis per joint group: `12 × LATENT`, shared by every style.
fn pose_basis() -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(BASIS_SEED);
    (0..GROUPS.len())
        .map(|_| (0..12 * LATENT).map(|_| rng.random_range(-0.35..0.35)).collect())
        .collect()
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Latent trajectory `[T][groups][LATENT]` through per-beat key poses.
fn latent_trajectory(spec: &SyntheticStyleSpec, rng: &mut ChaCha8Rng, t_len: usize) -> Vec<[[f64; LATENT]; 5]> {
    let period = spec.beat_frames();
    // whole-frame offsets keep every clip on the same sub-frame beat phase
    let offset = rng.random_range(0..period.floor() as usize) as f64;
    let n_beats = ((t_len as f64 - offset) / period).ceil() as usize + 2;
    let mut keys: Vec<[[f64; LATENT]; 5]> = Vec::with_capacity(n_beats);
    // each joint group walks a line of three key poses, one step per beat:
    // from the middle pose in a random direction, from an end back to the
    // middle. Every step has the same size, so transition statistics are
    // stable across clips.
    let mut current: [usize; 5] = std::array::from_fn(|_| rng.random_range(0..VOCAB));
    for _ in 0..n_beats {
        let mut k = [[0.0; LATENT]; 5];
        for (g, row) in k.iter_mut().enumerate() {
            current[g] = match current[g] {
                0 | 2 => 1,
                _ => if rng.random::<bool>() { 0 } else { 2 },
            };
            row[0] = spec.amplitude[g] * KEY_LEVELS[current[g]];
        }
        keys.push(k);
    }
    let step_hold: Vec<bool> = (0..n_beats).map(|_| rng.random::<f64>() < spec.jerkiness).collect();
    let phases: [f64; 5] = std::array::from_fn(|_| rng.random_range(0.0..2.0 * PI));
    (0..t_len)
        .map(|t| {
            // beat b spans [offset + (b-1) P, offset + b P); beat 0 precedes the offset
            let pos = (t as f64 - offset) / period + 1.0;
            let b = pos.floor().max(0.0) as usize;
            let u = pos - b as f64;
            let w = if step_hold[b] {
                smoothstep(u * period / HIT_FRAMES)
            } else {
                0.5 - 0.5 * (PI * u).cos()
            };
            let mut z = [[0.0; LATENT]; 5];
            for g in 0..5 {
                for d in 0..LATENT {
                    z[g][d] = keys[b][g][d] + w * (keys[b + 1][g][d] - keys[b][g][d]);
                }
                let f = spec.base_frequencies[g];
                z[g][0] += spec.sway * (2.0 * PI * f * t as f64 / FPS + phases[g]).sin();
            }
            z
        })
        .collect()
}

fn synth_pose(spec: &SyntheticStyleSpec, rng: &mut ChaCha8Rng, t_len: usize) -> RawPoseSequence {
    let basis = pose_basis();
    let z = latent_trajectory(spec, rng, t_len);
    let heading0 = rng.random_range(-PI..PI);
    let turn_phase = rng.random_range(0.0..2.0 * PI);
    let mut pos = [rng.random_range(-1.0..1.0), 0.0, rng.random_range(-1.0..1.0)];
    let step = spec.travel_speed / FPS;
    let mut root_position = Vec::with_capacity(t_len);
    let mut joint_rotations = Vec::with_capacity(t_len);
    for (t, zt) in z.iter().enumerate() {
        let theta = heading0 + 0.5 * (2.0 * PI * t as f64 / (FPS * 8.0) + turn_phase).sin();
        if t > 0 {
            pos[0] += step * theta.sin();
            pos[2] += step * theta.cos();
        }
        pos[1] = 0.9 + 0.03 * zt[0][0] + 0.02 * zt[3][0].min(zt[4][0]);
        root_position.push(pos);
        let mut rots = vec![Quat::IDENTITY; N_JOINTS];
        rots[0] = Quat::from_yaw(theta);
        for (g, joints) in GROUPS.iter().enumerate() {
            for (k, &j) in joints.iter().enumerate() {
                let mut e = [0.0; 3];
                for (c, ec) in e.iter_mut().enumerate() {
                    let row = &basis[g][(3 * k + c) * LATENT..(3 * k + c + 1) * LATENT];
                    *ec = row.iter().zip(&zt[g]).map(|(a, b)| a * b).sum();
                }
                let angle = (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt();
                if angle > 3.0 {
                    e.iter_mut().for_each(|v| *v *= 3.0 / angle);
                }
                rots[j] = expmap_decode(e);
            }
        }
        joint_rotations.push(rots);
    }
    RawPoseSequence {
        fps: FPS,
        root_position,
        joint_rotations,
    }
}

/// Click on every beat plus a chord that changes every four beats.
fn synth_audio(spec: &SyntheticStyleSpec, rng: &mut ChaCha8Rng, n_samples: usize, beat_offset: f64) -> Vec<f64> {
    let beat_samples = spec.beat_frames() / FPS * SAMPLE_RATE;
    let mut s = vec![0.0; n_samples];
    let click_len = 400usize;
    let mut beat = 0usize;
    loop {
        let start = (beat_offset / FPS * SAMPLE_RATE + beat as f64 * beat_samples).round() as usize;
        if start >= n_samples {
            break;
        }
        let accent = if beat % 4 == 0 { 1.0 } else { 0.6 };
        for i in 0..click_len.min(n_samples - start) {
            let env = (-(i as f64) / 80.0).exp();
            s[start + i] += accent * env * (2.0 * PI * 1800.0 * i as f64 / SAMPLE_RATE).sin();
        }
        beat += 1;
    }
    let bar = 4.0 * beat_samples;
    let n_bars = (n_samples as f64 / bar).ceil() as usize + 1;
    let chords: Vec<[f64; 3]> = (0..n_bars)
        .map(|_| {
            let root = rng.random_range(0..12) as f64;
            let f = |semi: f64| 220.0 * 2f64.powf((root + semi) / 12.0);
            [f(0.0), f(4.0), f(7.0)]
        })
        .collect();
    for (i, v) in s.iter_mut().enumerate() {
        let c = &chords[(i as f64 / bar) as usize];
        let t = i as f64 / SAMPLE_RATE;
        *v += 0.1 * c.iter().map(|f| (2.0 * PI * f * t).sin()).sum::<f64>();
    }
    s
}

fn synth_clip(spec: &SyntheticStyleSpec, label: &str, index: usize, t_len: usize) -> Result<Clip> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let raw = synth_pose(spec, &mut rng, t_len);
    let motion = encode_motion(&raw, &Skeleton::standard(), &spec.name)?;
    // the beat grid of the motion starts `offset` frames in; recover it from
    // the same stream so clicks and key poses line up
    let mut beat_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    beat_rng.set_stream(index as u64);
    let offset = beat_rng.random_range(0..spec.beat_frames().floor() as usize) as f64;
    let mut audio_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xA0D1_0000);
    audio_rng.set_stream(index as u64);
    let n_samples = ((t_len as f64) * SAMPLE_RATE / FPS).ceil() as usize;
    let samples = synth_audio(spec, &mut audio_rng, n_samples.max(WINDOW), offset);
    let audio = extract_audio_features(&samples, SAMPLE_RATE)?.window(0, t_len)?;
    Clip::new(format!("clip_{index}_{label}"), motion, audio)
}

/// Generates `n_clips` clips of `clip_seconds` for each of two styles.
pub fn generate_synthetic(
    spec_x: &SyntheticStyleSpec,
    spec_y: &SyntheticStyleSpec,
    n_clips: usize,
    clip_seconds: f64,
) -> Result<(StyleDomain, StyleDomain)> {
    ensure!(n_clips >= 1, "n_clips must be at least 1");
    ensure!(clip_seconds >= 2.0, "clip_seconds must be at least 2, got {clip_seconds}");
    spec_x.validate()?;
    spec_y.validate()?;
    let t_len = (clip_seconds * FPS).floor() as usize;
    let make = |spec: &SyntheticStyleSpec, label: &str| -> Result<StyleDomain> {
        let clips = (0..n_clips)
            .map(|k| synth_clip(spec, label, k, t_len))
            .collect::<Result<Vec<_>>>()?;
        Ok(StyleDomain {
            label: label.into(),
            name: spec.name.clone(),
            clips,
        })
    };
    Ok((make(spec_x, "X")?, make(spec_y, "Y")?))
}

/// Summary of a domain's acceleration-magnitude distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccelStats {
    pub median: f64,
    pub p99: f64,
    /// `p99 / median`; large for heavy-tailed (jerky) motion.
    pub tail_ratio: f64,
}

pub fn accel_stats(domain: &StyleDomain) -> Result<AccelStats> {
    let mut s = Vec::new();
    for c in &domain.clips {
        s.extend(acceleration_magnitude(&c.motion)?);
    }
    ensure!(!s.is_empty(), "domain {} has no frames", domain.label);
    s.sort_by(f64::total_cmp);
    let q = |p: f64| s[((s.len() - 1) as f64 * p).round() as usize];
    let (median, p99) = (q(0.5), q(0.99));
    Ok(AccelStats {
        median,
        p99,
        tail_ratio: if median > 0.0 { p99 / median } else { f64::INFINITY },
    })
}

fn clip_index(name: &str) -> Option<usize> {
    name.strip_prefix("clip_")?.split(['_', '.']).next()?.parse().ok()
}

/// Writes `dir/clip_<k>.motion.csv` and `dir/clip_<k>.audio.csv`.
pub fn save_domain(dir: &Path, domain: &StyleDomain) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (k, c) in domain.clips.iter().enumerate() {
        write_motion_csv(&dir.join(format!("clip_{k}.motion.csv")), &c.motion)?;
        write_audio_csv(&dir.join(format!("clip_{k}.audio.csv")), &c.audio)?;
    }
    Ok(())
}

/// Loads every `clip_<k>.motion.csv` / `clip_<k>.audio.csv` pair of a
/// `domain_<label>` directory in index order.
pub fn load_domain(dir: &Path) -> Result<StyleDomain> {
    let label = dir
        .file_name()
        .and_then(|n| n.to_str())
        .and_then(|n| n.strip_prefix("domain_"))
        .ok_or_else(|| Error::invalid(format!("{}: directory name must be domain_<label>", dir.display())))?
        .to_string();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut motion_files: Vec<(usize, PathBuf)> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        if let Some(stem) = name.strip_suffix(".motion.csv") {
            let k = clip_index(stem)
                .ok_or_else(|| Error::invalid(format!("{}: expected clip_<k>.motion.csv", path.display())))?;
            motion_files.push((k, path.clone()));
        }
    }
    ensure!(!motion_files.is_empty(), "{}: no clip_<k>.motion.csv files", dir.display());
    motion_files.sort();
    let mut clips = Vec::with_capacity(motion_files.len());
    for (k, mpath) in motion_files {
        let apath = dir.join(format!("clip_{k}.audio.csv"));
        let motion = read_motion_csv(&mpath, &label)?;
        let audio = read_audio_csv(&apath)?;
        ensure!(
            motion.n_frames() == audio.n_frames(),
            "{} has {} frames but {} has {}",
            mpath.display(),
            motion.n_frames(),
            apath.display(),
            audio.n_frames()
        );
        clips.push(Clip::new(format!("clip_{k}"), motion, audio)?);
    }
    Ok(StyleDomain {
        name: label.clone(),
        label,
        clips,
    })
}

/// Dataset manifest: generation settings and per-domain display names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub clips: usize,
    pub seconds: f64,
    pub eval_clips: usize,
    pub spec_x: SyntheticStyleSpec,
    pub spec_y: SyntheticStyleSpec,
    pub eval_spec_x: SyntheticStyleSpec,
    pub eval_spec_y: SyntheticStyleSpec,
    pub accel_x: AccelStats,
    pub accel_y: AccelStats,
}

/// Training and held-out evaluation domains of a dataset directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: StyleDomain,
    pub y: StyleDomain,
    pub eval_x: Option<StyleDomain>,
    pub eval_y: Option<StyleDomain>,
}

/// Loads `root/domain_X`, `root/domain_Y` and, when present,
/// `root/eval/domain_X` and `root/eval/domain_Y`. Display names come from
/// the manifest when there is one.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let mut x = load_domain(&root.join("domain_X"))?;
    let mut y = load_domain(&root.join("domain_Y"))?;
    let eval_dir = root.join("eval");
    let (mut eval_x, mut eval_y) = if eval_dir.is_dir() {
        (
            Some(load_domain(&eval_dir.join("domain_X"))?),
            Some(load_domain(&eval_dir.join("domain_Y"))?),
        )
    } else {
        (None, None)
    };
    let manifest_path = root.join(MANIFEST);
    if manifest_path.is_file() {
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: manifest_path.clone(),
            message: e.to_string(),
        })?;
        for (d, name) in [
            (Some(&mut x), &m.spec_x.name),
            (Some(&mut y), &m.spec_y.name),
            (eval_x.as_mut(), &m.spec_x.name),
            (eval_y.as_mut(), &m.spec_y.name),
        ] {
            if let Some(d) = d {
                d.name = name.clone();
            }
        }
    }
    Ok(Dataset { x, y, eval_x, eval_y })
}

/// Writes a complete synthetic dataset: training domains, held-out
/// evaluation domains and the manifest.
pub fn write_synthetic_dataset(root: &Path, seed: u64, clips: usize, seconds: f64, eval_clips: usize) -> Result<DatasetManifest> {
    let spec_x = SyntheticStyleSpec::smooth(seed);
    let spec_y = SyntheticStyleSpec::jerky(seed.wrapping_add(1));
    let eval_spec_x = SyntheticStyleSpec::smooth(seed.wrapping_add(2));
    let eval_spec_y = SyntheticStyleSpec::jerky(seed.wrapping_add(3));
    let (x, y) = generate_synthetic(&spec_x, &spec_y, clips, seconds)?;
    save_domain(&root.join("domain_X"), &x)?;
    save_domain(&root.join("domain_Y"), &y)?;
    if eval_clips > 0 {
        let (ex, ey) = generate_synthetic(&eval_spec_x, &eval_spec_y, eval_clips, seconds)?;
        save_domain(&root.join("eval").join("domain_X"), &ex)?;
        save_domain(&root.join("eval").join("domain_Y"), &ey)?;
    }
    let manifest = DatasetManifest {
        seed,
        clips,
        seconds,
        eval_clips,
        accel_x: accel_stats(&x)?,
        accel_y: accel_stats(&y)?,
        spec_x,
        spec_y,
        eval_spec_x,
        eval_spec_y,
    };
    let path = root.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// A stacked minibatch from one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `[B, L, 63]`.
    pub motion: Tensor,
    /// `[B, L, 35]`.
    pub music: Tensor,
    /// `(clip index, window start)` per batch entry.
    pub windows: Vec<(usize, usize)>,
}

fn draw(domain: &StyleDomain, batch: usize, clip_len: usize, rng: &mut ChaCha8Rng) -> Result<Batch> {
    let mut motion = Vec::with_capacity(batch * clip_len * MOTION_DIM);
    let mut music = Vec::with_capacity(batch * clip_len * AUDIO_DIM);
    let mut windows = Vec::with_capacity(batch);
    for _ in 0..batch {
        let i = rng.random_range(0..domain.clips.len());
        let c = &domain.clips[i];
        let start = rng.random_range(0..=c.n_frames() - clip_len);
        motion.extend_from_slice(&c.motion.frames()[start * MOTION_DIM..(start + clip_len) * MOTION_DIM]);
        music.extend_from_slice(&c.audio.frames()[start * AUDIO_DIM..(start + clip_len) * AUDIO_DIM]);
        windows.push((i, start));
    }
    Ok(Batch {
        motion: Tensor::new(vec![batch, clip_len, MOTION_DIM], motion)?,
        music: Tensor::new(vec![batch, clip_len, AUDIO_DIM], music)?,
        windows,
    })
}

/// Independent uniform clip and window draws from each domain; all of X's
/// draws come first, then Y's.
pub fn sample_unpaired_batch(
    x: &StyleDomain,
    y: &StyleDomain,
    batch: usize,
    clip_len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Batch, Batch)> {
    ensure!(batch >= 1, "batch size must be at least 1");
    ensure!(!x.clips.is_empty() && !y.clips.is_empty(), "both domains need at least one clip");
    ensure!(clip_len > 0 && clip_len % 4 == 0, "clip length {clip_len} must be a positive multiple of 4");
    let shortest = x.min_frames().min(y.min_frames());
    ensure!(
        clip_len <= shortest,
        "clip length {clip_len} exceeds the shortest clip ({shortest} frames)"
    );
    Ok((draw(x, batch, clip_len, rng)?, draw(y, batch, clip_len, rng)?))
}

/// Repeats the last frame until the length is a multiple of `multiple` and
/// at least 16. Returns the padded clip and the original length.
pub fn pad_to_multiple(
    motion: &MotionSequence,
    audio: Option<&AudioSequence>,
    multiple: usize,
) -> Result<(MotionSequence, Option<AudioSequence>, usize)> {
    ensure!(multiple > 0, "multiple must be positive");
    let t = motion.n_frames();
    if let Some(a) = audio {
        ensure!(a.n_frames() == t, "music has {} frames, motion has {t}", a.n_frames());
    }
    let target = t.max(16).div_ceil(multiple) * multiple;
    let extend = |data: &[f64], width: usize| -> Vec<f64> {
        let mut out = data.to_vec();
        let last = data[data.len() - width..].to_vec();
        for _ in t..target {
            out.extend_from_slice(&last);
        }
        out
    };
    let m = MotionSequence::new(extend(motion.frames(), MOTION_DIM), motion.style())?;
    let a = audio
        .map(|a| AudioSequence::new(extend(a.frames(), AUDIO_DIM)))
        .transpose()?;
    Ok((m, a, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_names_parse() {
        assert_eq!(clip_index("clip_12"), Some(12));
        assert_eq!(clip_index("clip_3_X"), Some(3));
        assert_eq!(clip_index("take_3"), None);
    }

    #[test]
    fn padding_repeats_the_last_frame() {
        let m = MotionSequence::new((0..18 * MOTION_DIM).map(|v| v as f64).collect(), "X").unwrap();
        let (p, a, len) = pad_to_multiple(&m, None, 4).unwrap();
        assert_eq!((p.n_frames(), len), (20, 18));
        assert!(a.is_none());
        assert_eq!(p.frame(19), m.frame(17));
        let short = m.window(0, 5).unwrap();
        assert_eq!(pad_to_multiple(&short, None, 4).unwrap().0.n_frames(), 16);
    }

    #[test]
    fn degenerate_specs_are_rejected() {
        let mut s = SyntheticStyleSpec::smooth(1);
        s.tempo_bpm = 0.0;
        assert!(s.validate().is_err());
        let mut s = SyntheticStyleSpec::jerky(1);
        s.jerkiness = 1.5;
        assert!(s.validate().is_err());
    }
}
