//! Greedy budgeted schedule construction.
//!
//! Users are visited in suppression order (highest value-to-cost ratio
//! first). Each visited user receives the earliest `q` still-uncovered slots
//! of their declared window, where
//!
//! ```text
//! q = min(|Z|, floor(G / (2d) - R / mu))
//! ```
//!
//! and `R` is the revenue collected so far. The cap acts as a potential
//! function: it keeps the cost-based payments under `G / 2` and makes every
//! winner's ratio at least `2R / G`. The pass stops at the first user who
//! cannot take their whole uncovered window.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::{McsError, Result};
use crate::model::{revenue, Bid, Instance, Priority, Schedule, Slot, Window};
use crate::rational::Rational;

/// A user as seen by the greedy pass.
#[derive(Clone, Debug)]
pub struct Candidate {
    pub index: usize,
    pub task: usize,
    pub value: Rational,
    pub cost: Rational,
    pub window: Window,
}

impl Candidate {
    pub fn priority(&self) -> Priority<'_> {
        Priority::new(&self.value, &self.cost, self.index)
    }
}

pub fn candidates(instance: &Instance, bids: &[Bid]) -> Vec<Candidate> {
    bids.iter()
        .enumerate()
        .map(|(i, b)| Candidate {
            index: i,
            task: instance.users[i].task,
            value: instance.value_of(i).clone(),
            cost: b.cost.clone(),
            window: b.window,
        })
        .collect()
}

/// One effective iteration: a user received a non-empty schedule.
#[derive(Clone, Debug, Serialize)]
pub struct GreedyStep {
    pub user: usize,
    pub uncovered: Vec<Slot>,
    pub q: i64,
    pub allocated: Vec<Slot>,
    pub revenue_before: Rational,
    pub revenue_after: Rational,
    pub removed: Vec<usize>,
}

/// The iteration that ended the pass, if it did not end by exhausting users.
#[derive(Clone, Debug, Serialize)]
pub struct ExitProbe {
    pub user: usize,
    pub uncovered: usize,
    pub q: i64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct GreedyTrace {
    pub steps: Vec<GreedyStep>,
    pub exit: Option<ExitProbe>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GreedyOutcome {
    pub schedules: Schedule,
    /// Winners in selection order.
    pub winners: Vec<usize>,
    /// Naive payments `d_i * |y_i|`.
    pub cost_payments: Vec<Rational>,
    pub revenue: Rational,
    /// Every user, highest priority first.
    pub order: Vec<usize>,
    pub trace: GreedyTrace,
}

impl GreedyOutcome {
    /// Revenue accumulated before winner `user` was scheduled.
    pub fn revenue_before(&self, user: usize) -> Option<&Rational> {
        self.trace
            .steps
            .iter()
            .find(|s| s.user == user)
            .map(|s| &s.revenue_before)
    }
}

/// `q = min(|Z|, floor(G/(2d) - R/mu))`, saturated into `i64`.
pub fn allocation_cap(
    budget: &Rational,
    cost: &Rational,
    value: &Rational,
    revenue: &Rational,
    uncovered: usize,
) -> i64 {
    let two = Rational::from_integer(2);
    let raw = budget / &(&two * cost) - revenue / value;
    raw.floor_i64().min(uncovered as i64)
}

/// Runs the greedy pass over `cands`. Schedules are indexed by
/// `Candidate::index` in a vector of length `n`.
pub fn run_greedy(budget: &Rational, cands: &[Candidate], n: usize) -> GreedyOutcome {
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| cands[b].priority().cmp(&cands[a].priority()));

    let mut active = vec![true; cands.len()];
    let mut by_task: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (k, c) in cands.iter().enumerate() {
        by_task.entry(c.task).or_default().push(k);
    }
    let mut covered: BTreeMap<usize, BTreeSet<Slot>> = BTreeMap::new();
    let mut schedules = Schedule::empty(n);
    let mut winners = Vec::new();
    let mut trace = GreedyTrace::default();
    let mut revenue = Rational::zero();
    let mut cursor = 0;

    loop {
        // max over the remaining users; the order is static, so this is the
        // first still-active entry
        while cursor < order.len() && !active[order[cursor]] {
            cursor += 1;
        }
        let Some(&k) = order.get(cursor) else { break };
        let c = &cands[k];
        let task_cover = covered.entry(c.task).or_default();
        let z: Vec<Slot> = c
            .window
            .slots()
            .filter(|t| !task_cover.contains(t))
            .collect();
        if z.is_empty() {
            active[k] = false;
            trace.warnings.push(format!(
                "user {} selected with a fully covered window; removed",
                c.index
            ));
            continue;
        }
        let q = allocation_cap(budget, &c.cost, &c.value, &revenue, z.len());
        if q > 0 {
            let allocated: Vec<Slot> = z[..q as usize].to_vec();
            task_cover.extend(allocated.iter().copied());
            let before = revenue.clone();
            revenue += &c.value * (q as usize);
            schedules.set(c.index, allocated.iter().copied().collect());
            winners.push(c.index);

            let mut removed = Vec::new();
            for &other in &by_task[&c.task] {
                if active[other] && cands[other].window.slots().all(|t| task_cover.contains(&t)) {
                    active[other] = false;
                    removed.push(cands[other].index);
                }
            }
            trace.steps.push(GreedyStep {
                user: c.index,
                uncovered: z.clone(),
                q,
                allocated,
                revenue_before: before,
                revenue_after: revenue.clone(),
                removed,
            });
        }
        if q < z.len() as i64 {
            trace.exit = Some(ExitProbe {
                user: c.index,
                uncovered: z.len(),
                q,
            });
            break;
        }
    }

    let mut cost_payments = vec![Rational::zero(); n];
    for c in cands {
        let len = schedules.len_of(c.index);
        if len > 0 {
            cost_payments[c.index] = &c.cost * len;
        }
    }
    GreedyOutcome {
        schedules,
        winners,
        cost_payments,
        revenue,
        order: order.iter().map(|&k| cands[k].index).collect(),
        trace,
    }
}

fn check_bids(instance: &Instance, bids: &[Bid]) -> Result<()> {
    if bids.len() != instance.n() {
        return Err(McsError::BidCount {
            expected: instance.n(),
            got: bids.len(),
        });
    }
    Ok(())
}

/// Greedy schedule, winners in selection order, cost payments and trace.
pub fn approx_mcs(instance: &Instance, bids: &[Bid]) -> Result<GreedyOutcome> {
    check_bids(instance, bids)?;
    let out = run_greedy(&instance.budget, &candidates(instance, bids), instance.n());
    debug_assert_eq!(out.revenue, revenue(instance, &out.schedules));
    Ok(out)
}

/// Revenue of the greedy schedule.
pub fn greedy_value(instance: &Instance, bids: &[Bid]) -> Result<Rational> {
    Ok(approx_mcs(instance, bids)?.revenue)
}

/// `|y_i|` when user `i` alone changes its declared bid to `bid`.
pub fn allocation_len_with(instance: &Instance, bids: &[Bid], i: usize, bid: &Bid) -> usize {
    let mut cands = candidates(instance, bids);
    cands[i].cost = bid.cost.clone();
    cands[i].window = bid.window;
    run_greedy(&instance.budget, &cands, instance.n())
        .schedules
        .len_of(i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::small::{random_small_instance, SmallConfig};
    use crate::model::fixtures::{e1, slots, user};
    use crate::model::Task;
    use crate::rational::q;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn e1_greedy_trace() {
        let inst = e1();
        let out = approx_mcs(&inst, &inst.truthful_bids()).unwrap();
        assert_eq!(out.schedules.of(0), &slots(&[0, 1]));
        assert_eq!(out.schedules.of(1), &slots(&[]));
        assert_eq!(out.schedules.of(2), &slots(&[0]));
        assert_eq!(out.winners, vec![0, 2]);
        assert_eq!(out.revenue, q("5"));
        assert_eq!(out.cost_payments, vec![q("2"), q("0"), q("1")]);
        // A3 (index 2) outranks A2 (index 1) on the 1 == 1 ratio tie
        let exit = out.trace.exit.as_ref().unwrap();
        assert_eq!((exit.user, exit.uncovered, exit.q), (2, 4, 1));
        assert_eq!(out.trace.steps[0].removed, vec![0]);
        assert!(out.trace.warnings.is_empty());
    }

    #[test]
    fn single_cheap_user_takes_full_window() {
        let inst = Instance {
            budget: q("100"),
            lambda: 5,
            tasks: vec![Task {
                id: 0,
                unit_value: q("1"),
            }],
            users: vec![user(0, 0, "1", 3, 8)],
        };
        let out = approx_mcs(&inst, &inst.truthful_bids()).unwrap();
        assert_eq!(out.schedules.of(0), &slots(&[3, 4, 5, 6, 7]));
        assert!(out.trace.exit.is_none());
    }

    #[test]
    fn greedy_value_examples() {
        let inst = e1();
        assert_eq!(greedy_value(&inst, &inst.truthful_bids()).unwrap(), q("5"));

        // first pick is too expensive for even one slot
        let mut pricey = e1();
        for u in &mut pricey.users {
            u.true_cost = q("6");
        }
        assert_eq!(
            greedy_value(&pricey, &pricey.truthful_bids()).unwrap(),
            q("0")
        );

        // A3 alone with G = 10 gets all four slots
        let solo = Instance {
            budget: q("10"),
            lambda: 4,
            tasks: vec![Task {
                id: 0,
                unit_value: q("1"),
            }],
            users: vec![user(0, 0, "1", 0, 4)],
        };
        assert_eq!(greedy_value(&solo, &solo.truthful_bids()).unwrap(), q("4"));
    }

    #[test]
    fn rejects_wrong_bid_count() {
        let inst = e1();
        assert!(matches!(
            approx_mcs(&inst, &inst.truthful_bids()[..2]),
            Err(McsError::BidCount {
                expected: 3,
                got: 2
            })
        ));
    }

    #[test]
    fn loop_guard_removes_user_with_nothing_uncovered() {
        // unreachable from validated input; an empty window forces |Z| = 0
        let cands = vec![
            Candidate {
                index: 0,
                task: 0,
                value: q("1"),
                cost: q("1"),
                window: Window::new(0, 2),
            },
            Candidate {
                index: 1,
                task: 0,
                value: q("5"),
                cost: q("1"),
                window: Window::new(3, 3),
            },
        ];
        let out = run_greedy(&q("100"), &cands, 2);
        assert_eq!(out.winners, vec![0]);
        assert_eq!(out.trace.warnings.len(), 1);
        assert!(out.trace.exit.is_none());
    }

    fn ratio(c: &Rational, v: &Rational) -> Rational {
        v / c
    }

    fn small(seed: u64) -> (Instance, Vec<Bid>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_small_instance(&mut rng, &SmallConfig::default());
        let bids = inst.truthful_bids();
        (inst, bids)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn trace_invariants(seed in any::<u64>()) {
            let (inst, bids) = small(seed);
            let out = approx_mcs(&inst, &bids).unwrap();
            let g = &inst.budget;
            let two = Rational::from_integer(2);

            // cost payments bounded by G/2
            let total: Rational = out.cost_payments.iter().sum();
            prop_assert!(total <= g / &two);

            // revenue non-decreasing; budget potential; ratios monotone
            let mut prev_ratio: Option<Rational> = None;
            let mut prev_rev = Rational::zero();
            for step in &out.trace.steps {
                prop_assert!(step.revenue_after >= prev_rev);
                prev_rev = step.revenue_after.clone();
                let r = ratio(&bids[step.user].cost, inst.value_of(step.user));
                prop_assert!(r >= &(&two * &step.revenue_after) / g);
                if let Some(p) = &prev_ratio {
                    prop_assert!(p >= &r);
                }
                prev_ratio = Some(r);
            }
            prop_assert_eq!(&out.revenue, &revenue(&inst, &out.schedules));
            prop_assert!(out.schedules.is_consistent(&inst, &bids));
            let bound = inst.n() + bids.iter().map(|b| b.window.len()).sum::<usize>();
            prop_assert!(out.trace.steps.len() <= bound);
            prop_assert!(out.trace.warnings.is_empty());
        }

        #[test]
        fn raising_cost_never_grows_allocation(seed in any::<u64>(), who in 0usize..6) {
            let (inst, bids) = small(seed);
            let i = who % inst.n();
            let mut last = usize::MAX;
            for k in 1..=30 {
                let cost = &bids[i].cost * Rational::new(k, 10);
                let len = allocation_len_with(&inst, &bids, i, &bids[i].with_cost(cost));
                prop_assert!(len <= last);
                last = len;
            }
        }

        #[test]
        fn shrinking_window_never_grows_allocation(seed in any::<u64>(), who in 0usize..6) {
            let (inst, bids) = small(seed);
            let i = who % inst.n();
            let w = bids[i].window;
            let full = allocation_len_with(&inst, &bids, i, &bids[i]);
            for s in w.start..w.end {
                for e in (s + 1)..=w.end {
                    let sub = Bid { cost: bids[i].cost.clone(), window: Window::new(s, e) };
                    prop_assert!(allocation_len_with(&inst, &bids, i, &sub) <= full);
                    // nested windows too
                    if s > w.start {
                        let wider = Bid { cost: bids[i].cost.clone(), window: Window::new(s - 1, e) };
                        prop_assert!(
                            allocation_len_with(&inst, &bids, i, &sub)
                                <= allocation_len_with(&inst, &bids, i, &wider)
                        );
                    }
                }
            }
        }
    }
}
