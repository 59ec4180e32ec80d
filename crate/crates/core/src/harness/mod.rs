//! Synthetic scenes, noisy candidates, end-to-end suppression comparisons,
//! latency benchmarking and file formats.

pub mod bench;
pub mod candidates;
pub mod io;
pub mod pipeline;
pub mod scene;

pub use candidates::{candidate_hash, gen_candidates, CandidateGenSpec};
pub use pipeline::{ModeRun, ScoreRegime, SuppressionMode};
pub use scene::{gen_scene, SceneKind, SceneSpec};

/// Independent child seed for `(stream, index)` under a run seed
/// (splitmix64 finaliser over the combined words).
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z =
        seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Build a rayon pool honouring `POLAR_KIT_THREADS` when set.
pub fn thread_pool() -> crate::Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("POLAR_KIT_THREADS") {
        let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            crate::Error::InvalidInput(format!("POLAR_KIT_THREADS must be a positive integer, got {v:?}"))
        })?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| crate::Error::InvalidInput(format!("thread pool: {e}")))
}
