//! Zero-shot relevance ranking with instruction-following language models,
//! and distillation of expensive pairwise rankings into a cheap pointwise
//! scorer.

pub mod backend;
pub mod corpus;
pub mod distill;
pub mod eval;
pub mod prompts;
pub mod rankers;
pub mod synth;

use sha2::{Digest, Sha256};

/// Seed for one pipeline stage, derived from the run's root seed so stages
/// draw independent streams.
pub fn stage_seed(root: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(stage.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}
