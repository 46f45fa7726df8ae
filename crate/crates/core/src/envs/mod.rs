//! Data-generating environments: the synthetic contextual bandit, the
//! classification-file-to-bandit transform, the ModelWin / ModelFail tabular
//! simulators, and exact dynamic-programming oracles for true policy values.
//!
//! All generators are pure functions of `(config, seed)`.

pub mod classification;
pub mod io;
pub mod synthetic;
pub mod tabular;

pub use classification::{
    classification_to_bandit, random_target_policy, read_labeled_table, synthetic_labeled_table,
    target_value_on_table, train_base_policy, LabeledTable,
};
pub use io::{read_dataset_csv, write_dataset_csv};
pub use synthetic::{
    gen_synthetic_cb, LoggingKind, RewardMean, SyntheticCbConfig, SyntheticCbEnv,
};
pub use tabular::{tabular_logging_family, tabular_target, TabularMdp};

use rand::Rng;

/// Derives an independent stream seed from a base seed; used to keep
/// coefficient draws, data draws, and replicate draws decoupled.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Samples an index from a probability vector by inverse transform.
pub(crate) fn sample_index<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random_range(0.0..1.0);
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
