//! Synthetic data, training, evaluation and the pieces the command line uses.

pub mod bench;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod pipeline;
pub mod scene;
pub mod train;

pub use bench::Benchmark;
pub use config::{Fraction, InputEncoding, TrainConfig};
pub use dataset::{generate_views, make_sample, Dataset, SceneData, ViewSettings};
pub use eval::{evaluate, infer_cloud, EvalReport, Inference};
pub use pipeline::{prepare_sample, sample_loss, LossOptions, PreparedSample};
pub use scene::{generate_scene, ObjectSpec, SceneSpec, Shape};
pub use train::{train, EpochLog, TrainOutcome};

/// Thread pool capped by `WEAKSEG_THREADS` (default: rayon's choice).
pub fn thread_pool() -> rayon::ThreadPool {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var("WEAKSEG_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        b = b.num_threads(n);
    }
    b.build().expect("thread pool")
}

/// Mixes a base seed with stream identifiers (splitmix64 finalizer).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut h = base ^ 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h = h.wrapping_add(p.wrapping_add(0x9E37_79B9_7F4A_7C15));
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}
