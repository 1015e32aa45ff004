//! Targeted adversarial attacks on autoregressive speech-translation models.
pub mod attack_perturb;
pub mod audio;
pub mod error;
pub mod evaluation;
pub mod hashing;
pub mod music_attack;
pub mod optim;
pub mod ota_channel;
pub mod stmodel;
pub mod tco;
pub mod testbed;

pub use error::{Error, Result};
