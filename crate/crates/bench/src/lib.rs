//! Benchmark fixtures.

use mmdp_detect_core::model::TransitionSystem;
use mmdp_detect_core::scenarios::random::{random_family, random_ts, RandomSpec};
use mmdp_detect_core::{bi_apd, gen_grid, gen_recsys, DetectionPolicy, GridSpec, Mmdp, RecSysSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random transition system with `n` states, up to 3 actions and 3 successors.
pub fn transition_system(n: usize, seed: u64) -> TransitionSystem {
    random_ts(&mut ChaCha8Rng::seed_from_u64(seed), n, 3, 3)
}

/// Random two-model family with sparse rows.
pub fn binary_family(n: usize, seed: u64) -> Mmdp {
    let spec = RandomSpec {
        max_support: 2,
        ..RandomSpec::new(n, 3)
    };
    random_family(&mut ChaCha8Rng::seed_from_u64(seed), 2, &spec)
}

pub fn grid(spec: &GridSpec) -> Mmdp {
    gen_grid(spec).expect("built-in grid layouts are valid")
}

/// The ten-item, six-type recommendation instance.
pub fn recsys() -> Mmdp {
    gen_recsys(&RecSysSpec::new(10, 6, 0)).expect("valid spec")
}

/// Grid model and its synthesized policy.
pub fn grid_with_policy() -> (Mmdp, DetectionPolicy) {
    let m = grid(&GridSpec::scaled_5x5());
    let policy = bi_apd(&m, m.initial())
        .expect("binary family")
        .policy
        .expect("the 5x5 grid is detectable");
    (m, policy)
}
