//! Motion Fréchet distance (transfer strength) and pose Fréchet distance
//! (content preservation).

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::features::audio::AudioSequence;
use crate::features::skeleton::{DIM_FORWARD, DIM_LATERAL, MOTION_DIM};
use crate::features::MotionSequence;

/// Diagonal regularizer added to every fitted covariance.
pub const COV_EPS: f64 = 1e-6;
pub const KINEMATIC_DIM: usize = 2 * MOTION_DIM;

/// Unnormalized first and second differences of a motion sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicFeatures {
    /// `(T-1) × 63`, row `i` is `x[i+1] - x[i]`.
    pub velocities: Vec<f64>,
    /// `(T-2) × 63`, row `i` is `x[i+2] - 2 x[i+1] + x[i]`.
    pub accelerations: Vec<f64>,
}

pub fn kinematic_features(m: &MotionSequence) -> Result<KinematicFeatures> {
    let t_len = m.n_frames();
    ensure!(t_len >= 3, "kinematic features need at least 3 frames, got {t_len}");
    let x = m.frames();
    let d = MOTION_DIM;
    let velocities = (0..(t_len - 1) * d).map(|k| x[k + d] - x[k]).collect();
    let accelerations = (0..(t_len - 2) * d)
        .map(|k| x[k + 2 * d] - 2.0 * x[k + d] + x[k])
        .collect();
    Ok(KinematicFeatures {
        velocities,
        accelerations,
    })
}

/// Mean and covariance of a sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFit {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub n: usize,
}

impl GaussianFit {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>, n: usize) -> Result<Self> {
        let d = mean.len();
        ensure!(d > 0, "Gaussian dimension must be positive");
        ensure!(
            covariance.nrows() == d && covariance.ncols() == d,
            "covariance is {}x{}, expected {d}x{d}",
            covariance.nrows(),
            covariance.ncols()
        );
        for i in 0..d {
            for j in 0..i {
                ensure!(
                    (covariance[(i, j)] - covariance[(j, i)]).abs() <= 1e-12 * (1.0 + covariance[(i, j)].abs()),
                    "covariance is not symmetric at ({i}, {j})"
                );
            }
        }
        Ok(Self {
            mean,
            covariance,
            n,
        })
    }

    /// Fits rows of a row-major `n × dim` sample matrix, using the unbiased
    /// covariance plus `COV_EPS · I`.
    pub fn fit(samples: &[f64], dim: usize) -> Result<Self> {
        ensure!(dim > 0 && samples.len() % dim == 0, "sample buffer is not a multiple of {dim}");
        let n = samples.len() / dim;
        ensure!(n >= 1, "cannot fit a Gaussian to zero samples");
        let x = DMatrix::from_row_slice(n, dim, samples);
        let mean: DVector<f64> = x.row_mean().transpose();
        let mut centered = x;
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
        let mut cov = centered.transpose() * &centered / denom;
        cov = (&cov + cov.transpose()) * 0.5;
        for i in 0..dim {
            cov[(i, i)] += COV_EPS;
        }
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("covariance has non-finite entries".into()));
        }
        Ok(Self {
            mean,
            covariance: cov,
            n,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Symmetric PSD square root; eigenvalues below `-tol` are an error,
/// the rest are clamped at zero.
fn psd_sqrt(m: &DMatrix<f64>, what: &str) -> Result<(DMatrix<f64>, f64)> {
    let eig = SymmetricEigen::new(m.clone());
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let mut trace_sqrt = 0.0;
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < -1e-9 * scale {
            return Err(Error::Numeric(format!("{what} is not positive semi-definite (eigenvalue {v})")));
        }
        *v = v.max(0.0).sqrt();
        trace_sqrt += *v;
    }
    let q = &eig.eigenvectors;
    let root = q * DMatrix::from_diagonal(&roots) * q.transpose();
    Ok((root, trace_sqrt))
}

/// Fréchet (2-Wasserstein) distance between two Gaussians:
/// `sqrt(|μ1-μ2|² + tr(Σ1 + Σ2 - 2 (Σ1^½ Σ2 Σ1^½)^½))`.
pub fn frechet_distance(f1: &GaussianFit, f2: &GaussianFit) -> Result<f64> {
    ensure!(
        f1.dim() == f2.dim(),
        "frechet_distance: dimension mismatch ({} vs {})",
        f1.dim(),
        f2.dim()
    );
    if f1.mean == f2.mean && f1.covariance == f2.covariance {
        return Ok(0.0);
    }
    let dmu = &f1.mean - &f2.mean;
    let (s1, _) = psd_sqrt(&f1.covariance, "first covariance")?;
    psd_sqrt(&f2.covariance, "second covariance")?;
    let mut inner = &s1 * &f2.covariance * &s1;
    inner = (&inner + inner.transpose()) * 0.5;
    let (_, tr_cross) = psd_sqrt(&inner, "covariance product")?;
    let d2 = dmu.norm_squared() + f1.covariance.trace() + f2.covariance.trace() - 2.0 * tr_cross;
    if !d2.is_finite() {
        return Err(Error::Numeric("Fréchet distance is not finite".into()));
    }
    Ok(d2.max(0.0).sqrt())
}

/// Pooled `(v_i, a_i)` rows of all sequences, 126 dims each, one row per
/// interior frame.
pub fn kinematic_samples(set: &[MotionSequence]) -> Result<Vec<f64>> {
    let per: Vec<Vec<f64>> = set
        .par_iter()
        .map(|m| {
            let k = kinematic_features(m)?;
            let n = m.n_frames() - 2;
            let mut rows = Vec::with_capacity(n * KINEMATIC_DIM);
            for i in 0..n {
                rows.extend_from_slice(&k.velocities[i * MOTION_DIM..(i + 1) * MOTION_DIM]);
                rows.extend_from_slice(&k.accelerations[i * MOTION_DIM..(i + 1) * MOTION_DIM]);
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    Ok(per.concat())
}

/// Motion Fréchet distance between the pooled kinematic features of two
/// sets of sequences.
pub fn mfd(true_motions: &[MotionSequence], generated: &[MotionSequence]) -> Result<f64> {
    ensure!(!true_motions.is_empty(), "mfd: empty reference set");
    ensure!(!generated.is_empty(), "mfd: empty generated set");
    let a = GaussianFit::fit(&kinematic_samples(true_motions)?, KINEMATIC_DIM)?;
    let b = GaussianFit::fit(&kinematic_samples(generated)?, KINEMATIC_DIM)?;
    frechet_distance(&a, &b)
}

/// Hip-centered key poses of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyPoseSet {
    /// `K × 63`.
    pub frames: Vec<f64>,
    pub indices: Vec<usize>,
}

impl KeyPoseSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Mean absolute acceleration per pose index; entry `i` belongs to pose
/// `i + 1`.
pub fn acceleration_magnitude(m: &MotionSequence) -> Result<Vec<f64>> {
    let k = kinematic_features(m)?;
    Ok(k.accelerations
        .chunks(MOTION_DIM)
        .map(|a| a.iter().map(|v| v.abs()).sum::<f64>() / MOTION_DIM as f64)
        .collect())
}

/// Zeroes the ground-plane root features of a frame.
pub fn hip_center(frame: &mut [f64]) {
    frame[DIM_FORWARD] = 0.0;
    frame[DIM_LATERAL] = 0.0;
}

fn keyframe_indices(m: &MotionSequence, min_gap: usize) -> Result<Vec<usize>> {
    let s = acceleration_magnitude(m)?;
    let mut maxima: Vec<usize> = (1..s.len().saturating_sub(1))
        .filter(|&i| s[i] > s[i - 1] && s[i] > s[i + 1])
        .collect();
    if min_gap > 1 {
        let mut order = maxima.clone();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
        let mut kept: Vec<usize> = Vec::new();
        for i in order {
            if kept.iter().all(|&k| k.abs_diff(i) >= min_gap) {
                kept.push(i);
            }
        }
        kept.sort_unstable();
        maxima = kept;
    }
    Ok(maxima.into_iter().map(|i| i + 1).collect())
}

fn collect_keyframes(m: &MotionSequence, min_gap: usize) -> Result<KeyPoseSet> {
    let indices = keyframe_indices(m, min_gap)?;
    let mut frames = Vec::with_capacity(indices.len() * MOTION_DIM);
    for &i in &indices {
        let start = frames.len();
        frames.extend_from_slice(m.frame(i));
        hip_center(&mut frames[start..]);
    }
    Ok(KeyPoseSet { frames, indices })
}

/// Poses at strict local maxima of the mean absolute acceleration. With
/// `min_gap > 1`, weaker maxima closer than `min_gap` frames to a stronger
/// one are suppressed.
pub fn extract_keyframes(m: &MotionSequence, min_gap: usize) -> Result<KeyPoseSet> {
    let set = collect_keyframes(m, min_gap)?;
    ensure!(!set.is_empty(), "no keyframes: acceleration has no strict local maximum");
    Ok(set)
}

fn key_pose_samples(set: &[MotionSequence], min_gap: usize) -> Result<Vec<f64>> {
    let per: Vec<KeyPoseSet> = set
        .par_iter()
        .map(|m| collect_keyframes(m, min_gap))
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flat_map(|k| k.frames).collect())
}

/// Pose Fréchet distance between the key-pose distributions of two sets.
/// Each set must yield at least 64 key poses (dimension + 1).
pub fn pfd(source: &[MotionSequence], generated: &[MotionSequence], min_gap: usize) -> Result<f64> {
    ensure!(!source.is_empty() && !generated.is_empty(), "pfd: empty motion set");
    let a = key_pose_samples(source, min_gap)?;
    let b = key_pose_samples(generated, min_gap)?;
    for (name, s) in [("source", &a), ("generated", &b)] {
        let k = s.len() / MOTION_DIM;
        ensure!(
            k > MOTION_DIM,
            "pfd: {name} set yields {k} key poses, need at least {}",
            MOTION_DIM + 1
        );
    }
    frechet_distance(&GaussianFit::fit(&a, MOTION_DIM)?, &GaussianFit::fit(&b, MOTION_DIM)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "x2y")]
    XToY,
    #[serde(rename = "y2x")]
    YToX,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::XToY, Direction::YToX];

    /// Display name such as `BJ2LC` built from the domain labels.
    pub fn name(self, label_x: &str, label_y: &str) -> String {
        match self {
            Direction::XToY => format!("{label_x}2{label_y}"),
            Direction::YToX => format!("{label_y}2{label_x}"),
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x2y" => Ok(Direction::XToY),
            "y2x" => Ok(Direction::YToX),
            other => Err(Error::invalid(format!("unknown direction {other:?}, expected x2y or y2x"))),
        }
    }
}

/// Anything that maps a motion clip into the other style.
pub trait Transfer: Sync {
    fn transfer(&self, motion: &MotionSequence, music: Option<&AudioSequence>, direction: Direction)
        -> Result<MotionSequence>;
}

/// Returns its input unchanged.
pub struct Passthrough;

impl Transfer for Passthrough {
    fn transfer(&self, motion: &MotionSequence, _: Option<&AudioSequence>, _: Direction) -> Result<MotionSequence> {
        Ok(motion.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub direction: String,
    pub metric: String,
    pub value: f64,
    pub n_clips: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config_hash: String,
    pub rows: Vec<ReportRow>,
}

impl MetricsReport {
    pub fn value(&self, direction: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.direction == direction && r.metric == metric)
            .map(|r| r.value)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# config_hash={}\ndirection,metric,value,n_clips\n", self.config_hash);
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.direction, r.metric, r.value, r.n_clips).unwrap();
        }
        out
    }
}

/// A held-out clip set for one style.
pub struct EvalDomain<'a> {
    pub label: &'a str,
    pub clips: &'a [(MotionSequence, AudioSequence)],
}

/// Transfers every clip of the source domain per direction and reports MFD
/// against the target domain's real clips and PFD against the source clips.
pub fn evaluate(
    model: &dyn Transfer,
    x: &EvalDomain,
    y: &EvalDomain,
    directions: &[Direction],
    config_hash: &str,
    min_gap: usize,
) -> Result<MetricsReport> {
    let mut rows = Vec::new();
    for &dir in directions {
        let (src, tgt) = match dir {
            Direction::XToY => (x, y),
            Direction::YToX => (y, x),
        };
        ensure!(!src.clips.is_empty(), "no evaluation clips for style {}", src.label);
        ensure!(!tgt.clips.is_empty(), "no evaluation clips for style {}", tgt.label);
        let transferred: Vec<MotionSequence> = src
            .clips
            .par_iter()
            .map(|(m, a)| model.transfer(m, Some(a), dir))
            .collect::<Result<_>>()?;
        let sources: Vec<MotionSequence> = src.clips.iter().map(|(m, _)| m.clone()).collect();
        let targets: Vec<MotionSequence> = tgt.clips.iter().map(|(m, _)| m.clone()).collect();
        let name = dir.name(x.label, y.label);
        rows.push(ReportRow {
            direction: name.clone(),
            metric: "MFD".into(),
            value: mfd(&targets, &transferred)?,
            n_clips: transferred.len(),
        });
        rows.push(ReportRow {
            direction: name,
            metric: "PFD".into(),
            value: pfd(&sources, &transferred, min_gap)?,
            n_clips: transferred.len(),
        });
    }
    Ok(MetricsReport {
        config_hash: config_hash.to_string(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(rows: &[Vec<f64>]) -> MotionSequence {
        let mut data = Vec::new();
        for r in rows {
            let mut f = vec![0.0; MOTION_DIM];
            f[..r.len()].copy_from_slice(r);
            data.extend(f);
        }
        MotionSequence::new(data, "X").unwrap()
    }

    fn diag_fit(mean: &[f64], sd: &[f64]) -> GaussianFit {
        GaussianFit::new(
            DVector::from_row_slice(mean),
            DMatrix::from_diagonal(&DVector::from_iterator(sd.len(), sd.iter().map(|s| s * s))),
            1,
        )
        .unwrap()
    }

    #[test]
    fn kinematics_of_simple_sequences() {
        let ramp = seq(&(0..5).map(|i| vec![3.0 * i as f64]).collect::<Vec<_>>());
        let k = kinematic_features(&ramp).unwrap();
        assert!(k.velocities.chunks(MOTION_DIM).all(|v| v[0] == 3.0));
        assert!(k.accelerations.iter().all(|&a| a == 0.0));

        let quad = seq(&(0..6).map(|i| vec![(i * i) as f64]).collect::<Vec<_>>());
        let k = kinematic_features(&quad).unwrap();
        assert!(k.accelerations.chunks(MOTION_DIM).all(|a| a[0] == 2.0));

        assert!(kinematic_features(&seq(&[vec![1.0], vec![2.0]])).is_err());
    }

    #[test]
    fn closed_form_frechet() {
        let a = diag_fit(&[0.0], &[1.0]);
        let b = diag_fit(&[1.0], &[1.0]);
        assert!((frechet_distance(&a, &b).unwrap() - 1.0).abs() < 1e-10);
        let a = diag_fit(&[1.0, 0.0, 0.0], &[1.0, 2.0, 3.0]);
        let b = diag_fit(&[0.0, 0.0, 0.0], &[2.0, 2.0, 1.0]);
        assert!((frechet_distance(&a, &b).unwrap() - 6f64.sqrt()).abs() < 1e-10);
        assert_eq!(frechet_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        assert!(frechet_distance(&diag_fit(&[0.0], &[1.0]), &diag_fit(&[0.0, 0.0], &[1.0, 1.0])).is_err());
    }

    #[test]
    fn keyframes_of_a_known_curve() {
        // accelerations on dim 0: s = [0, 1, 0, 2, 0]
        let acc = [0.0, 1.0, 0.0, 2.0, 0.0];
        let mut x = vec![0.0, 0.0];
        for a in acc {
            let n = x.len();
            x.push(a * MOTION_DIM as f64 + 2.0 * x[n - 1] - x[n - 2]);
        }
        let m = seq(&x.iter().map(|&v| vec![v]).collect::<Vec<_>>());
        let k = extract_keyframes(&m, 0).unwrap();
        assert_eq!(k.indices, vec![2, 4]);
    }

    #[test]
    fn constant_sequence_has_no_keyframes() {
        let m = seq(&vec![vec![0.5, 1.0]; 10]);
        assert!(extract_keyframes(&m, 0).is_err());
    }

    #[test]
    fn min_gap_keeps_the_stronger_peak() {
        let s = [0.0, 1.0, 0.0, 2.0, 0.0, 0.5, 0.0];
        let mut x = vec![0.0, 0.0];
        for a in s {
            let n = x.len();
            x.push(a * MOTION_DIM as f64 + 2.0 * x[n - 1] - x[n - 2]);
        }
        let m = seq(&x.iter().map(|&v| vec![v]).collect::<Vec<_>>());
        assert_eq!(extract_keyframes(&m, 0).unwrap().indices, vec![2, 4, 6]);
        assert_eq!(extract_keyframes(&m, 3).unwrap().indices, vec![4]);
    }

    #[test]
    fn report_csv_shape() {
        let r = MetricsReport {
            config_hash: "abc".into(),
            rows: vec![ReportRow {
                direction: "X2Y".into(),
                metric: "MFD".into(),
                value: 0.5,
                n_clips: 3,
            }],
        };
        assert_eq!(r.to_csv(), "# config_hash=abc\ndirection,metric,value,n_clips\nX2Y,MFD,0.5,3\n");
    }
}
