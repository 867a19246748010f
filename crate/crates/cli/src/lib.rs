//! Experiment runner and acceptance suite for `slab-core`.

pub mod config;
pub mod criteria;
pub mod experiments;

pub use config::{ExperimentConfig, ExperimentKind};
pub use experiments::{run, write_outputs, RunOutput, RunRecord, Table};

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce5_e9b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of task number `task` under `master`: mix(master ⊕ mix(task)).
/// Tasks draw from their own stream, so results do not depend on scheduling.
pub fn stream_seed(master: u64, task: u64) -> u64 {
    mix(master ^ mix(task))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_seeds_are_distinct_and_stable() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|t| stream_seed(1, t)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_eq!(stream_seed(1, 0), stream_seed(1, 0));
        assert_ne!(stream_seed(1, 0), stream_seed(2, 0));
    }
}
