//! Shared inputs for the benchmarks.

use fleetgame_core::ctmc::FindRates;
use fleetgame_core::network::generate_synthetic;
use fleetgame_core::{PiMatrix, Scenario};

pub fn scenario(zones: usize, taxis: u32) -> Scenario {
    generate_synthetic(zones, taxis, 1, 1.0).expect("valid synthetic parameters")
}

/// Find rates equal to the arrival rates, split by the destination matrix.
pub fn arrival_find_rates(s: &Scenario) -> PiMatrix {
    FindRates { pi_k: s.mu.clone() }.split(&s.gamma)
}
