//! Online mechanisms for users arriving in random order.
//!
//! Both mechanisms are exposed as streams: the owner opens a session knowing
//! the user count and budget, then feeds one arrival at a time and receives
//! an irrevocable decision. The batch functions replay an [`ArrivalOrder`]
//! through the same streams.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{McsError, Result};
use crate::greedy::{run_greedy, Candidate};
use crate::model::{Bid, Instance, Outcome, Slot, Window};
use crate::rational::Rational;

/// `e` bracketed by partial sums of `sum 1/k!`: returns `(lo, hi)` with
/// `lo < e < hi`, using `terms + 1` terms.
pub fn e_bounds(terms: u32) -> (Rational, Rational) {
    let mut sum = Rational::zero();
    let mut term = Rational::one();
    for k in 0..=terms {
        if k > 0 {
            term = term / Rational::from_integer(k as i64);
        }
        sum += &term;
    }
    // tail after term n is below term_n / n
    let tail = &term / Rational::from_integer(terms.max(1) as i64);
    let hi = &sum + &tail;
    (sum, hi)
}

/// Exact `floor(n / e)`.
pub fn floor_n_over_e(n: usize) -> usize {
    let n_r = Rational::from_integer(n as i64);
    let mut terms = 20;
    loop {
        let (lo, hi) = e_bounds(terms);
        let a = (&n_r / &hi).floor_i64();
        let b = (&n_r / &lo).floor_i64();
        if a == b {
            return a as usize;
        }
        terms += 10;
    }
}

/// A permutation of user indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct ArrivalOrder(Vec<usize>);

impl ArrivalOrder {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let n = order.len();
        let mut seen = vec![false; n];
        for &i in &order {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(McsError::BadOrder(n));
            }
        }
        Ok(ArrivalOrder(order))
    }

    pub fn identity(n: usize) -> Self {
        ArrivalOrder((0..n).collect())
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut v: Vec<usize> = (0..n).collect();
        v.shuffle(rng);
        ArrivalOrder(v)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<usize>> for ArrivalOrder {
    type Error = McsError;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        ArrivalOrder::new(v)
    }
}

impl From<ArrivalOrder> for Vec<usize> {
    fn from(o: ArrivalOrder) -> Self {
        o.0
    }
}

/// One user's bid as it reaches the owner.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arrival {
    pub id: usize,
    pub task: usize,
    /// Per-slot value of the user's task.
    pub value: Rational,
    pub cost: Rational,
    pub start: Slot,
    pub end: Slot,
}

impl Arrival {
    pub fn of(instance: &Instance, bids: &[Bid], i: usize) -> Self {
        Arrival {
            id: i,
            task: instance.users[i].task,
            value: instance.value_of(i).clone(),
            cost: bids[i].cost.clone(),
            start: bids[i].window.start,
            end: bids[i].window.end,
        }
    }

    pub fn window(&self) -> Window {
        Window::new(self.start, self.end)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub id: usize,
    pub slots: Vec<Slot>,
    pub payment: Rational,
}

impl Decision {
    fn reject(id: usize) -> Self {
        Decision {
            id,
            slots: Vec::new(),
            payment: Rational::zero(),
        }
    }
}

/// An online session: decisions are made per arrival and never revisited.
pub trait ArrivalStream {
    fn feed(&mut self, arrival: &Arrival) -> Decision;
}

/// Threshold-based secretary selection.
#[derive(Clone, Debug)]
pub struct SecretaryStream {
    observe: usize,
    seen: usize,
    alpha: Rational,
    budget: Rational,
}

impl SecretaryStream {
    pub fn open(n: usize, budget: Rational) -> Self {
        SecretaryStream {
            observe: floor_n_over_e(n),
            seen: 0,
            alpha: Rational::zero(),
            budget,
        }
    }

    pub fn threshold(&self) -> &Rational {
        &self.alpha
    }

    pub fn remaining_budget(&self) -> &Rational {
        &self.budget
    }
}

impl ArrivalStream for SecretaryStream {
    fn feed(&mut self, a: &Arrival) -> Decision {
        self.seen += 1;
        if self.seen <= self.observe {
            if a.cost <= self.budget {
                self.alpha = self.alpha.clone().max(a.value.clone());
            }
            return Decision::reject(a.id);
        }
        if a.value >= self.alpha && a.cost <= self.budget && self.budget.is_positive() {
            let payment = std::mem::replace(&mut self.budget, Rational::zero());
            return Decision {
                id: a.id,
                slots: vec![a.start],
                payment,
            };
        }
        Decision::reject(a.id)
    }
}

/// Sample-then-price mechanism.
#[derive(Clone, Debug)]
pub struct SamplingStream {
    sample_size: usize,
    seen: usize,
    budget: Rational,
    remaining: Rational,
    sample: Vec<Candidate>,
    sample_revenue: Option<Rational>,
    covered: BTreeMap<usize, BTreeSet<Slot>>,
}

impl SamplingStream {
    pub fn open(n: usize, budget: Rational, sample_size: usize) -> Result<Self> {
        if sample_size > n {
            return Err(McsError::BadSampleSize { xi: sample_size, n });
        }
        let mut s = SamplingStream {
            sample_size,
            seen: 0,
            remaining: budget.clone(),
            budget,
            sample: Vec::new(),
            sample_revenue: None,
            covered: BTreeMap::new(),
        };
        if sample_size == 0 {
            s.sample_revenue = Some(Rational::zero());
        }
        Ok(s)
    }

    /// Greedy revenue of the sample, once the sample is complete.
    pub fn sample_revenue(&self) -> Option<&Rational> {
        self.sample_revenue.as_ref()
    }

    pub fn remaining_budget(&self) -> &Rational {
        &self.remaining
    }

    /// True when the sample was worthless and every later arrival is rejected.
    pub fn is_degenerate(&self) -> bool {
        self.sample_revenue.as_ref().is_some_and(Rational::is_zero)
    }

    /// Posted per-slot price for a user of value `value`.
    pub fn price(&self, value: &Rational) -> Option<Rational> {
        let r = self.sample_revenue.as_ref()?;
        if r.is_zero() {
            return None;
        }
        Some(Rational::from_integer(5) * &self.budget * value / r)
    }
}

impl ArrivalStream for SamplingStream {
    fn feed(&mut self, a: &Arrival) -> Decision {
        self.seen += 1;
        if self.seen <= self.sample_size {
            self.sample.push(Candidate {
                index: a.id,
                task: a.task,
                value: a.value.clone(),
                cost: a.cost.clone(),
                window: a.window(),
            });
            if self.seen == self.sample_size {
                let n = self.sample.iter().map(|c| c.index + 1).max().unwrap_or(0);
                let out = run_greedy(&self.budget, &self.sample, n);
                self.sample_revenue = Some(out.revenue);
            }
            return Decision::reject(a.id);
        }
        let Some(eta) = self.price(&a.value) else {
            return Decision::reject(a.id);
        };
        let cover = self.covered.entry(a.task).or_default();
        let free: Vec<Slot> = a.window().slots().filter(|t| !cover.contains(t)).collect();
        let charge = &eta * free.len();
        if a.cost <= eta && charge <= self.remaining && !free.is_empty() {
            cover.extend(free.iter().copied());
            self.remaining -= &charge;
            return Decision {
                id: a.id,
                slots: free,
                payment: charge,
            };
        }
        Decision::reject(a.id)
    }
}

fn replay<S: ArrivalStream>(
    instance: &Instance,
    bids: &[Bid],
    order: &ArrivalOrder,
    stream: &mut S,
) -> Result<Outcome> {
    if bids.len() != instance.n() {
        return Err(McsError::BidCount {
            expected: instance.n(),
            got: bids.len(),
        });
    }
    if order.len() != instance.n() {
        return Err(McsError::BadOrder(instance.n()));
    }
    let mut outcome = Outcome::empty(instance.n());
    for &i in order.as_slice() {
        let d = stream.feed(&Arrival::of(instance, bids, i));
        if !d.slots.is_empty() {
            outcome.schedules.set(i, d.slots.into_iter().collect());
            outcome.payments[i] = d.payment;
            outcome.winners.push(i);
        }
    }
    Ok(outcome)
}

pub fn secretary_mechanism(
    instance: &Instance,
    bids: &[Bid],
    order: &ArrivalOrder,
) -> Result<Outcome> {
    let mut s = SecretaryStream::open(instance.n(), instance.budget.clone());
    replay(instance, bids, order, &mut s)
}

/// Result of the sampling branch with the sample's greedy revenue.
#[derive(Clone, Debug)]
pub struct SamplingRun {
    pub outcome: Outcome,
    pub sample_revenue: Rational,
    pub degenerate: bool,
}

pub fn sampling_mechanism(
    instance: &Instance,
    bids: &[Bid],
    order: &ArrivalOrder,
    sample_size: usize,
) -> Result<SamplingRun> {
    let mut s = SamplingStream::open(instance.n(), instance.budget.clone(), sample_size)?;
    let outcome = replay(instance, bids, order, &mut s)?;
    Ok(SamplingRun {
        outcome,
        sample_revenue: s.sample_revenue().cloned().unwrap_or_else(Rational::zero),
        degenerate: s.is_degenerate(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "branch")]
pub enum OnlineBranch {
    Sampling { xi: usize },
    Secretary,
}

/// `Binomial(n, 1/2)` as the popcount of `n` fair bits.
pub fn binomial_half<R: Rng + ?Sized>(n: usize, rng: &mut R) -> usize {
    let mut left = n;
    let mut count = 0;
    while left > 0 {
        let take = left.min(64);
        let mut bits = rng.next_u64();
        if take < 64 {
            bits &= (1u64 << take) - 1;
        }
        count += bits.count_ones() as usize;
        left -= take;
    }
    count
}

impl OnlineBranch {
    /// Fair coin; on the sampling side also draws the sample size.
    pub fn draw<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        if rng.random_bool(0.5) {
            OnlineBranch::Sampling {
                xi: binomial_half(n, rng),
            }
        } else {
            OnlineBranch::Secretary
        }
    }
}

pub fn randomized_online(
    instance: &Instance,
    bids: &[Bid],
    order: &ArrivalOrder,
    branch: OnlineBranch,
) -> Result<Outcome> {
    match branch {
        OnlineBranch::Sampling { xi } => Ok(sampling_mechanism(instance, bids, order, xi)?.outcome),
        OnlineBranch::Secretary => secretary_mechanism(instance, bids, order),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::{e1, slots};
    use crate::model::Task;
    use crate::rational::q;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn floor_n_over_e_small_values() {
        let expected = [0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 4];
        for (n, &k) in expected.iter().enumerate() {
            assert_eq!(floor_n_over_e(n), k, "n = {n}");
        }
        assert_eq!(floor_n_over_e(1000), 367);
        assert_eq!(floor_n_over_e(5000), 1839);
        // agrees with the 16-digit constant away from its ambiguity band
        let approx = q("2.718281828459045");
        for n in (0..200_000usize).step_by(997) {
            let k = (Rational::from_integer(n as i64) / &approx).floor_i64() as usize;
            assert_eq!(floor_n_over_e(n), k);
        }
    }

    #[test]
    fn e_bounds_bracket_e() {
        let (lo, hi) = e_bounds(20);
        assert!(lo < q("2.7182818284590453") && q("2.7182818284590452") < hi);
    }

    #[test]
    fn order_must_be_a_permutation() {
        assert!(ArrivalOrder::new(vec![2, 0, 1]).is_ok());
        assert!(ArrivalOrder::new(vec![0, 0, 1]).is_err());
        assert!(ArrivalOrder::new(vec![0, 3, 1]).is_err());
    }

    fn e1_order() -> ArrivalOrder {
        ArrivalOrder::new(vec![2, 0, 1]).unwrap()
    }

    #[test]
    fn e1_secretary() {
        let inst = e1();
        let out = secretary_mechanism(&inst, &inst.truthful_bids(), &e1_order()).unwrap();
        assert_eq!(out.winners, vec![0]);
        assert_eq!(out.schedules.of(0), &slots(&[0]));
        assert_eq!(out.payments, vec![q("10"), q("0"), q("0")]);
        assert_eq!(out.revenue(&inst), q("2"));
    }

    #[test]
    fn secretary_without_observation_takes_first_affordable() {
        let mut inst = e1();
        inst.users.truncate(2);
        inst.users[1].true_cost = q("1");
        let bids = inst.truthful_bids();
        for order in [vec![0, 1], vec![1, 0]] {
            let out = secretary_mechanism(&inst, &bids, &ArrivalOrder::new(order.clone()).unwrap())
                .unwrap();
            assert_eq!(out.winners, vec![order[0]]);
        }
    }

    #[test]
    fn nobody_affordable_nobody_wins() {
        let mut inst = e1();
        for u in &mut inst.users {
            u.true_cost = q("11");
        }
        let out = secretary_mechanism(&inst, &inst.truthful_bids(), &e1_order()).unwrap();
        assert!(out.winners.is_empty());
        assert_eq!(out.revenue(&inst), q("0"));
    }

    #[test]
    fn e1_sampling_with_one_sample() {
        let inst = e1();
        let run = sampling_mechanism(&inst, &inst.truthful_bids(), &e1_order(), 1).unwrap();
        assert_eq!(run.sample_revenue, q("4"));
        assert!(run.outcome.winners.is_empty());
        assert_eq!(run.outcome.revenue(&inst), q("0"));
    }

    #[test]
    fn sampling_price_formula() {
        // sample revenue 100, G = 10, value 1, one free slot, cost 0.4
        let mut s = SamplingStream::open(2, q("10"), 1).unwrap();
        s.sample_revenue = Some(q("100"));
        s.seen = 1;
        let d = s.feed(&Arrival {
            id: 1,
            task: 0,
            value: q("1"),
            cost: q("0.4"),
            start: 0,
            end: 1,
        });
        assert_eq!(d.payment, q("0.5"));
        assert_eq!(d.slots, vec![0]);
        assert_eq!(s.remaining_budget(), &q("9.5"));
    }

    #[test]
    fn full_sample_rejects_everyone() {
        let inst = e1();
        let run = sampling_mechanism(&inst, &inst.truthful_bids(), &e1_order(), 3).unwrap();
        assert!(run.outcome.winners.is_empty());
        assert!(sampling_mechanism(&inst, &inst.truthful_bids(), &e1_order(), 4).is_err());
    }

    #[test]
    fn worthless_sample_is_degenerate() {
        let inst = e1();
        let run = sampling_mechanism(&inst, &inst.truthful_bids(), &e1_order(), 0).unwrap();
        assert!(run.degenerate);
        assert!(run.outcome.winners.is_empty());
    }

    #[test]
    fn forced_branches_match_the_direct_runs() {
        let inst = e1();
        let bids = inst.truthful_bids();
        let sec = randomized_online(&inst, &bids, &e1_order(), OnlineBranch::Secretary).unwrap();
        assert_eq!(sec, secretary_mechanism(&inst, &bids, &e1_order()).unwrap());
        let samp =
            randomized_online(&inst, &bids, &e1_order(), OnlineBranch::Sampling { xi: 1 }).unwrap();
        assert_eq!(samp.revenue(&inst), q("0"));
    }

    #[test]
    fn sampling_allocations_never_overlap_and_respect_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let users = (0..40)
            .map(|i| {
                crate::model::fixtures::user(i, i % 3, "0.01", (i % 7) as i64, (i % 7) as i64 + 3)
            })
            .collect();
        let inst = Instance {
            budget: q("50"),
            lambda: 3,
            tasks: (0..3)
                .map(|id| Task {
                    id,
                    unit_value: q("1"),
                })
                .collect(),
            users,
        };
        let bids = inst.truthful_bids();
        let mut winners_seen = 0;
        for _ in 0..50 {
            let order = ArrivalOrder::random(inst.n(), &mut rng);
            let xi = binomial_half(inst.n(), &mut rng);
            let run = sampling_mechanism(&inst, &bids, &order, xi).unwrap();
            assert!(run.outcome.total_payment() <= inst.budget);
            assert!(run.outcome.schedules.is_consistent(&inst, &bids));
            winners_seen += run.outcome.winners.len();
        }
        assert!(winners_seen > 0);
    }

    #[test]
    fn binomial_draw_stays_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut total = 0;
        for _ in 0..2000 {
            let x = binomial_half(100, &mut rng);
            assert!(x <= 100);
            total += x;
        }
        let mean = total as f64 / 2000.0;
        assert!((mean - 50.0).abs() < 1.0, "mean {mean}");
        assert_eq!(binomial_half(0, &mut rng), 0);
    }
}
