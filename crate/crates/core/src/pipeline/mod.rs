//! End-to-end orchestration: synthetic data, configuration, checkpoints,
//! training, retrieval, reranking, evaluation and the ablation driver.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod run;
pub mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use dataset::{generate_synthetic, DatasetBundle, Split, SyntheticWorld};
pub use run::{ablation_run, encode_split, rerank_both, run_eval, AblationTable, Encoded};
pub use train::{init_checkpoint, run_train, TrainOutcome};

/// Independent random stream `stream` of run seed `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
