//! Tiny random instances for exhaustive checks.
//!
//! Costs, values and budgets come from coarse grids so that ratio ties and
//! exact floor boundaries show up often.

use rand::Rng;

use crate::model::{Instance, Task, UserProfile, Window};
use crate::rational::Rational;

#[derive(Clone, Debug)]
pub struct SmallConfig {
    pub max_users: usize,
    pub max_tasks: usize,
    pub max_lambda: u32,
    /// Cap on `sum |T_i|`.
    pub max_total_slots: usize,
    pub max_start: i64,
    /// Budgets are `k/2` for `k` in `1..=max_budget_halves`.
    pub max_budget_halves: i64,
}

impl Default for SmallConfig {
    fn default() -> Self {
        SmallConfig {
            max_users: 6,
            max_tasks: 3,
            max_lambda: 4,
            max_total_slots: 16,
            max_start: 3,
            max_budget_halves: 40,
        }
    }
}

pub fn random_small_instance<R: Rng + ?Sized>(rng: &mut R, cfg: &SmallConfig) -> Instance {
    let n = rng.random_range(1..=cfg.max_users.min(cfg.max_total_slots).max(1));
    let m = rng.random_range(1..=cfg.max_tasks.max(1));
    let lambda = rng.random_range(1..=cfg.max_lambda.max(1));
    let tasks = (0..m)
        .map(|id| Task {
            id,
            unit_value: Rational::new(rng.random_range(1..=4), 2),
        })
        .collect();
    let mut left = cfg.max_total_slots;
    let users = (0..n)
        .map(|id| {
            // keep one slot for each user still to come
            let room = left - (n - id - 1);
            let len = rng.random_range(1..=lambda as usize).min(room) as i64;
            left -= len as usize;
            let start = rng.random_range(0..=cfg.max_start);
            UserProfile {
                id,
                task: rng.random_range(0..m),
                true_cost: Rational::new(rng.random_range(1..=8), 4),
                true_window: Window::new(start, start + len),
            }
        })
        .collect();
    Instance {
        budget: Rational::new(rng.random_range(1..=cfg.max_budget_halves), 2),
        lambda,
        tasks,
        users,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn respects_bounds_and_validates() {
        let cfg = SmallConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let inst = random_small_instance(&mut rng, &cfg);
            assert!(inst.validate().is_ok());
            assert!(inst.n() <= 6);
            let total: usize = inst.users.iter().map(|u| u.true_window.len()).sum();
            assert!(total <= 16);
        }
    }
}
