//! Interpretable founder-success prediction with probabilistic logic policies.
//!
//! A policy is a short list of weighted IF-THEN rules over founder traits.
//! Policies are proposed by a language model, checked against mined
//! association rules and calibrated on data, then scored by exact or sampled
//! probabilistic inference.

pub mod dataset;
pub mod evaluation;
pub mod inference;
pub mod llm;
pub mod policy;
pub mod statistics;
pub mod training;

pub use dataset::{FounderRecord, PartitionSpec, Vocabulary};
pub use evaluation::{MetricsReport, Thresholds};
pub use inference::{InferenceConfig, InferenceResult, ProbProgram};
pub use llm::{CompletionProvider, MockProvider};
pub use policy::{Direction, Literal, Policy, Rule};

/// Derives an independent child seed for a named stage.
pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(master ^ splitmix64(h ^ splitmix64(index)))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
