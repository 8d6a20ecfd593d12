//! Fixtures shared by the benchmarks.

use nsmimo::grid::ComplexGrid;
use nsmimo::model::{sample_scenario, uplink_pilot_observation, Noise, SystemConfig};
use nsmimo::Scenario;

/// A random `L`-path scenario on an `M = N = size` array and its noisy pilots.
pub fn fixture(size: usize, s: usize, paths: usize, snr_db: f64, seed: u64) -> (Scenario, ComplexGrid) {
    let sc = sample_scenario(&SystemConfig::new(size, size, s), paths..=paths, seed)
        .expect("valid fixture config");
    let y = uplink_pilot_observation(&sc, snr_db, Noise::Draw(0));
    (sc, y)
}
