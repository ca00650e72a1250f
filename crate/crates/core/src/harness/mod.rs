//! Seeded instance generation and experiment drivers.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{McsError, Result};
use crate::model::{Bid, Instance, Task, UserProfile, Window};
use crate::rational::Rational;

pub mod experiment;
pub mod small;

pub use experiment::{
    run_experiment, ExperimentConfig, ExperimentKind, ExperimentResult, ExperimentRow,
};

/// Random instance parameters. Costs and unit values are `k / 1000` with `k`
/// uniform on the given integer ranges.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n: usize,
    pub m: usize,
    pub budget: Rational,
    /// Window lengths are uniform on `1..=max_window`; also the instance's lambda.
    pub max_window: u32,
    /// Window starts are uniform on `0..=max_start`.
    pub max_start: i64,
    pub cost_milli: (i64, i64),
    pub value_milli: (i64, i64),
    pub seed: u64,
}

impl GeneratorConfig {
    /// Desk-scale defaults.
    pub fn desk() -> Self {
        GeneratorConfig {
            n: 100,
            m: 10,
            budget: Rational::from_integer(100),
            max_window: 10,
            max_start: 100,
            cost_milli: (100, 1100),
            value_milli: (100, 1100),
            seed: 0,
        }
    }

    /// Full-size defaults.
    pub fn full() -> Self {
        GeneratorConfig {
            n: 1000,
            m: 100,
            budget: Rational::from_integer(1000),
            ..GeneratorConfig::desk()
        }
    }

    pub fn check(&self) -> Result<()> {
        let bad = |msg: &str| Err(McsError::Config(msg.to_string()));
        if self.n == 0 || self.m == 0 {
            return bad("n and m must be positive");
        }
        if !self.budget.is_positive() {
            return bad("budget must be positive");
        }
        if self.max_window == 0 {
            return bad("max_window must be at least 1");
        }
        if self.max_start < 0 {
            return bad("max_start must be non-negative");
        }
        for (lo, hi) in [self.cost_milli, self.value_milli] {
            if lo <= 0 || hi < lo {
                return bad("cost and value ranges must be positive and non-empty");
            }
        }
        Ok(())
    }
}

fn milli<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (i64, i64)) -> Rational {
    Rational::new(rng.random_range(lo..=hi), 1000)
}

/// Draws an instance from `rng`. Task values come first, then users one by
/// one, so instances that differ only in `n` share a user prefix.
pub fn generate_with<R: Rng + ?Sized>(cfg: &GeneratorConfig, rng: &mut R) -> Instance {
    let tasks = (0..cfg.m)
        .map(|id| Task {
            id,
            unit_value: milli(rng, cfg.value_milli),
        })
        .collect();
    let users = (0..cfg.n)
        .map(|id| {
            let task = rng.random_range(0..cfg.m);
            let true_cost = milli(rng, cfg.cost_milli);
            let start = rng.random_range(0..=cfg.max_start);
            let len = rng.random_range(1..=cfg.max_window) as i64;
            UserProfile {
                id,
                task,
                true_cost,
                true_window: Window::new(start, start + len),
            }
        })
        .collect();
    Instance {
        budget: cfg.budget.clone(),
        lambda: cfg.max_window,
        tasks,
        users,
    }
}

/// Instance and truthful bids, deterministic in `cfg.seed`.
pub fn generate(cfg: &GeneratorConfig) -> Result<(Instance, Vec<Bid>)> {
    cfg.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let inst = generate_with(cfg, &mut rng);
    let bids = inst.truthful_bids();
    Ok((inst, bids))
}

/// Independent generator for stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Many small users whose windows never overlap within a task and whose
/// total cost fits the budget, so the optimum schedules everyone fully and
/// `OPT = sum mu_i |T_i|` by construction.
pub fn disjoint_instance<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    m: usize,
    max_len: u32,
) -> Instance {
    let tasks: Vec<Task> = (0..m)
        .map(|id| Task {
            id,
            unit_value: Rational::new(rng.random_range(500..=1000), 1000),
        })
        .collect();
    let mut next_start = vec![0i64; m];
    let mut total_cost = Rational::zero();
    let users: Vec<UserProfile> = (0..n)
        .map(|id| {
            let task = rng.random_range(0..m);
            let len = rng.random_range(1..=max_len) as i64;
            let start = next_start[task] + rng.random_range(0..=2);
            next_start[task] = start + len;
            let true_cost = Rational::new(rng.random_range(100..=1100), 1000);
            total_cost += &true_cost * (len as usize);
            UserProfile {
                id,
                task,
                true_cost,
                true_window: Window::new(start, start + len),
            }
        })
        .collect();
    Instance {
        budget: total_cost + Rational::one(),
        lambda: max_len,
        tasks,
        users,
    }
}

/// `sum mu_i |T_i|`: the optimum of a [`disjoint_instance`].
pub fn disjoint_opt(instance: &Instance) -> Rational {
    (0..instance.n())
        .map(|i| instance.value_of(i) * instance.users[i].true_window.len())
        .sum()
}
