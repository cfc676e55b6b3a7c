//! Unpaired dance style transfer between two motion styles.
//!
//! A pair of generators maps 63-dim motion sequences (optionally conditioned
//! on 35-dim music features) from one style to the other. They are trained
//! with adversarial, cycle-consistency, identity and two-step adversarial
//! losses, and evaluated with Fréchet distances over kinematic features
//! (MFD) and key poses (PFD).

pub mod data;
pub mod error;
pub mod features;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod training;

pub use error::{Error, Result};
