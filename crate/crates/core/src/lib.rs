//! Task saliency of pre-trained embedding dimensions.
//!
//! The crate scores how much each dimension of an embedding sequence carries
//! information about valence, activation and dominance labels, selects
//! low-dimensional subspaces from those scores (or projects with PCA), and
//! measures the downstream effect with a small time-convolutional GRU regressor
//! trained under a concordance correlation loss.
//!
//! Modules:
//! - [`corpus`]: EMB1 embedding files, manifests, pooling, synthetic corpora.
//! - [`saliency`]: CCS / MIS scoring, ranking, masks and the PCA baseline.
//! - [`metrics`]: concordance correlation, the combined loss, per-bin MSE.
//! - [`model`]: the TC-GRU regressor, exact gradients and the training loop.
//! - [`degrade`]: feature-space noise injection at a target SNR.

pub mod corpus;
pub mod degrade;
pub mod metrics;
pub mod model;
pub mod saliency;

pub use corpus::{
    AffectLabels, Corpus, CorpusError, EmbeddingSequence, LabelMatrix, PooledMatrix, Split,
    SyntheticSpec, Utterance, UtteranceRecord, VarianceProfile,
};
pub use metrics::{CccBreakdown, LossWeights, MetricsError};
pub use model::{ModelConfig, ModelError, RegressorModel, TrainConfig, TrainHistory};

pub use saliency::{Method, PcaProjection, SaliencyError, SaliencyScores, SelectionMask};

/// 64-bit FNV-1a over a byte string.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derives a component seed from a global seed and a component name.
///
/// The name hash is xor-ed into the seed and the result goes through one
/// SplitMix64 finalizer, so nearby seeds and names give unrelated streams.
pub fn derive_seed(seed: u64, component: &str) -> u64 {
    let mut z = seed ^ fnv1a(component.as_bytes());
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_known_vectors() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn derived_seeds_differ_by_component() {
        assert_ne!(derive_seed(1, "train"), derive_seed(1, "pca"));
        assert_ne!(derive_seed(1, "train"), derive_seed(2, "train"));
        assert_eq!(derive_seed(9, "x"), derive_seed(9, "x"));
    }
}
