//! Budgeted crowdsensing scheduling mechanisms in exact arithmetic.
//!
//! An owner with budget `G` buys sensing time from users who each serve one
//! task during a private availability window at a private per-slot cost.
//! [`greedy`] builds the approximate schedule, [`offline`] and [`online`]
//! wrap it into truthful randomized mechanisms, [`oracle`] holds the
//! independent ground truth used by the test suites and [`harness`] drives
//! seeded experiments.

pub mod error;
pub mod greedy;
pub mod harness;
pub mod model;
pub mod offline;
pub mod online;
pub mod oracle;
pub mod rational;

pub use error::{McsError, Result};
pub use greedy::{approx_mcs, greedy_value, GreedyOutcome, GreedyTrace};
pub use model::{
    revenue, utility, validate_instance, Bid, Instance, Outcome, Schedule, Slot, Task, UserProfile,
    ValidationIssue, Window,
};
pub use offline::{cal_payment, offline_mechanism, Branch, BranchSelector, PaymentBreakdown};
pub use online::{
    randomized_online, sampling_mechanism, secretary_mechanism, Arrival, ArrivalOrder,
    ArrivalStream, Decision, OnlineBranch, SamplingStream, SecretaryStream,
};
pub use oracle::{
    brute_force_opt, partition_instance, payment_integral_oracle, truthfulness_sweep,
};
pub use rational::Rational;
