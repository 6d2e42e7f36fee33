//! Fixtures shared by the benchmarks.

use adaptest_core::calibration::ResponseMatrix;
use adaptest_core::simulation::{generate_population, run_campaign, BehaviorConfig, PopulationConfig};
use adaptest_core::{Item, ItemBank, ItemParams, ResponseLog, SessionConfig};

/// One section of `n` items with difficulties evenly spread over [-3, 3]
/// and discriminations cycling through 0.6..1.5.
pub fn spread_bank(section: u32, n: u32) -> ItemBank {
    let items = (0..n).map(|i| {
        let b = -3.0 + 6.0 * i as f64 / (n - 1).max(1) as f64;
        let a = 0.6 + 0.1 * (i % 10) as f64;
        Item::new(section * 10_000 + i, section, ItemParams::new(a, b).expect("valid params"))
    });
    ItemBank::new(items).expect("valid bank")
}

pub fn campaign_log(bank: &ItemBank, section: u32, examinees: usize, k: usize, seed: u64) -> ResponseLog {
    let population = generate_population(&PopulationConfig::standard(examinees, seed)).expect("population");
    let session = SessionConfig::new(k, section, seed).expect("session config");
    run_campaign(bank, &population, &session, &BehaviorConfig::default()).expect("campaign")
}

pub fn campaign_matrix(examinees: usize, k: usize, seed: u64) -> ResponseMatrix {
    let bank = spread_bank(1, 60);
    ResponseMatrix::from_log_first_answers(&campaign_log(&bank, 1, examinees, k, seed), Some(&bank))
}
