//! Per-purpose seed derivation.
//!
//! Every random stream in a run is seeded by
//! `u64_le(SHA-256("{master}:{purpose}:{index}")[0..8])`, so any single
//! iteration, epoch or pair draw can be replayed from the master seed alone.

use sha2::{Digest, Sha256};

pub const TRAIN: &str = "train-init";
pub const EPOCH_PAIRS: &str = "epoch-pairs";
pub const VALIDATION: &str = "validation";
pub const SPLIT: &str = "split";
pub const EVAL_PAIRS: &str = "eval-pairs";
pub const HOLDOUT: &str = "holdout";
pub const STREAM: &str = "stream";

pub fn derive(master: u64, purpose: &str, index: u64) -> u64 {
    let digest = Sha256::digest(format!("{master}:{purpose}:{index}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}
