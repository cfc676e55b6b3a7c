//! Motion and audio feature pipelines.

pub mod audio;
pub mod io;
pub mod motion;
pub mod quat;
pub mod skeleton;

pub use audio::{extract_audio_features, AudioSequence};
pub use motion::{decode_motion, encode_motion, resample, MotionSequence, RawPoseSequence, RootSeed};
pub use quat::{expmap_decode, expmap_encode, Quat};
pub use skeleton::{Skeleton, AUDIO_DIM, FPS, MOTION_DIM, N_JOINTS};
