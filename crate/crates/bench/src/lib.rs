//! Shared inputs for the benchmarks.

use lpskit_core::dataset::{fuse, split_train_test};
use lpskit_core::simulate::{generate_campaign, preset};
use lpskit_core::{RangingDataset, SitePlan};

/// Training split of a shipped preset, one dataset per gateway.
pub fn preset_training(name: &str, seed: u64) -> (SitePlan, Vec<RangingDataset>) {
    let sf = preset(name).expect("preset parses").expect("preset exists");
    let mut sc = sf.scenario.clone();
    sc.seed = seed;
    let (raw, map) = generate_campaign(&sc).expect("campaign");
    let train = fuse(&raw, &sc.plan, &map)
        .expect("fuse")
        .iter()
        .map(|ds| split_train_test(ds, &sf.holdout).expect("split").0)
        .collect();
    (sc.plan, train)
}
