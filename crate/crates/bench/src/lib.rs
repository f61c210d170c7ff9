//! Fixtures shared by the solver benchmarks.

use wiet_core::channel::generate_instance;
use wiet_core::schemes::energy_margin;
use wiet_core::{ChannelSet, GenConfig};

/// Two-user instance whose symmetric targets sit at `load` times the largest
/// level the simultaneous schemes can serve.
pub fn fixture(nt: usize, seed: u64, load: f64) -> ChannelSet {
    let cs = generate_instance(&GenConfig::new(2, nt, 1.0, 10.0, seed)).expect("valid generator settings");
    let unit = cs.clone().with_energy(vec![1.0, 1.0]).expect("valid targets");
    let beta = energy_margin(&unit).expect("margin").map_or(1.0, |m| m.beta);
    cs.with_energy(vec![load * beta; 2]).expect("valid targets")
}

/// Midpoint of the feasible TDMA time-fraction interval.
pub fn mid_alpha(cs: &ChannelSet) -> f64 {
    let (lo, hi) = wiet_core::channel::feasible_alpha_interval(cs).expect("TDMA-feasible fixture");
    0.5 * (lo + hi)
}
