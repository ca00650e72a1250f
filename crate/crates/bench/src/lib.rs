//! Shared inputs for the criterion benches.

use mcs_core::harness::{generate, GeneratorConfig};
use mcs_core::{Bid, Instance, Rational};

/// Desk-scale instance with `n` users and budget `budget`.
pub fn instance(n: usize, budget: i64, seed: u64) -> (Instance, Vec<Bid>) {
    let cfg = GeneratorConfig {
        n,
        budget: Rational::from_integer(budget),
        seed,
        ..GeneratorConfig::desk()
    };
    generate(&cfg).expect("bench config is valid")
}
