//! Shared fixtures for the benchmarks.

use lsda_core::{
    gen_population, simulate_trace, FreqDist, MixConfig, ProfileDist, Trace, UserPopulation,
};

/// Population and trace for an `n`-user system observed for `rho` rounds.
pub fn fixture(
    n: usize,
    friends: usize,
    config: &MixConfig,
    rho: usize,
) -> (UserPopulation, Trace) {
    let pop =
        gen_population(n, friends, ProfileDist::Zipf, FreqDist::Uniform, 7).expect("population");
    let trace = simulate_trace(&pop, config, rho, 8).expect("trace");
    (pop, trace)
}
