//! Shared fixtures for the benchmarks.

use stirring_core::kmc::{init, EventMode, InitialLaw, SamplerChoice, SimParams, SimState};
use stirring_core::stats::Preset;
use stirring_core::{RateFamily, Torus};

/// A replica on the one-dimensional torus of size `n` at density ½.
pub fn replica(n: usize, rates: RateFamily, sampler: SamplerChoice, mode: EventMode) -> SimState {
    let torus = Torus::new(rates.dim(), n).expect("torus");
    let a = stirring_core::kmc::default_a_n(n);
    let mut p = SimParams::new(torus, 0.5, a, rates).expect("params");
    p.sampler = sampler;
    p.event_mode = mode;
    init(p, &InitialLaw::Bernoulli { rho: 0.5 }, 1, 0).expect("init")
}

pub fn ssep_replica(n: usize, sampler: SamplerChoice) -> SimState {
    replica(n, RateFamily::ssep(1), sampler, EventMode::Effective)
}

pub fn speed_change_replica(n: usize) -> SimState {
    replica(
        n,
        Preset::SpeedChange.rates(),
        SamplerChoice::Tree,
        EventMode::Null,
    )
}
