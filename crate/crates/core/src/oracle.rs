//! Independent ground truth: exact optimum by search, the threshold payment
//! by re-running the greedy pass at substituted costs, deviation sweeps,
//! partition instances and analysis constants.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::error::{McsError, Result};
use crate::greedy::{allocation_len_with, approx_mcs, candidates, GreedyOutcome};
use crate::model::{utility, Bid, Instance, Schedule, Slot, Task, UserProfile, Window};
use crate::offline::{branch_b, cal_payment};
use crate::online::{
    e_bounds, sampling_mechanism, secretary_mechanism, ArrivalOrder, SamplingStream,
};
use crate::rational::Rational;

/// Default bound on `sum |T_i|` for [`brute_force_opt`].
pub const DEFAULT_SEARCH_LIMIT: usize = 24;

#[derive(Clone, Debug, Serialize)]
pub struct OptResult {
    pub value: Rational,
    pub schedule: Schedule,
    /// Total cost `sum d_i |y_i|` of the schedule.
    pub cost: Rational,
}

/// A distinct `(task, slot)` pair with its cheapest covering user.
#[derive(Clone, Debug)]
struct Item {
    user: usize,
    slot: Slot,
    value: Rational,
    cost: Rational,
}

fn items(instance: &Instance, bids: &[Bid]) -> Vec<Item> {
    let mut best: std::collections::BTreeMap<(usize, Slot), usize> = Default::default();
    for (i, b) in bids.iter().enumerate() {
        let task = instance.users[i].task;
        for t in b.window.slots() {
            best.entry((task, t))
                .and_modify(|j| {
                    if bids[i].cost < bids[*j].cost {
                        *j = i;
                    }
                })
                .or_insert(i);
        }
    }
    best.into_iter()
        .map(|((_, slot), user)| Item {
            user,
            slot,
            value: instance.value_of(user).clone(),
            cost: bids[user].cost.clone(),
        })
        .collect()
}

fn search_space(bids: &[Bid]) -> usize {
    bids.iter().map(|b| b.window.len()).sum()
}

/// Exact optimum with payments charged at cost, over the true profiles.
pub fn brute_force_opt(instance: &Instance) -> Result<OptResult> {
    brute_force_opt_with(instance, &instance.truthful_bids(), DEFAULT_SEARCH_LIMIT)
}

/// Exact optimum for declared `bids`, refusing when `sum |T_i| > limit`.
///
/// A slot of a task is worth the same whoever senses it and only the
/// cheapest user able to cover it can be in some optimum, so the search is a
/// 0/1 knapsack over distinct `(task, slot)` pairs, solved by depth-first
/// branch and bound with the fractional relaxation as the bound.
pub fn brute_force_opt_with(instance: &Instance, bids: &[Bid], limit: usize) -> Result<OptResult> {
    let slots = search_space(bids);
    if slots > limit {
        return Err(McsError::SearchSpaceTooLarge { slots, limit });
    }
    let mut items = items(instance, bids);
    items.sort_by(|a, b| Rational::cmp_ratio(&b.value, &b.cost, &a.value, &a.cost));

    struct Search<'a> {
        items: &'a [Item],
        best: Rational,
        best_pick: Vec<bool>,
        pick: Vec<bool>,
    }

    impl Search<'_> {
        fn bound(&self, k: usize, room: &Rational) -> Rational {
            let mut room = room.clone();
            let mut extra = Rational::zero();
            for it in &self.items[k..] {
                if it.cost <= room {
                    room -= &it.cost;
                    extra += &it.value;
                } else {
                    extra += &it.value * &room / &it.cost;
                    break;
                }
            }
            extra
        }

        fn go(&mut self, k: usize, room: Rational, value: Rational) {
            if value > self.best {
                self.best = value.clone();
                self.best_pick = self.pick.clone();
            }
            if k == self.items.len() || &value + &self.bound(k, &room) <= self.best {
                return;
            }
            let it = &self.items[k];
            if it.cost <= room {
                self.pick[k] = true;
                let (c, v) = (it.cost.clone(), it.value.clone());
                self.go(k + 1, &room - &c, &value + &v);
                self.pick[k] = false;
            }
            self.go(k + 1, room, value);
        }
    }

    let mut s = Search {
        items: &items,
        best: Rational::zero(),
        best_pick: vec![false; items.len()],
        pick: vec![false; items.len()],
    };
    s.go(0, instance.budget.clone(), Rational::zero());

    let mut per_user = vec![BTreeSet::new(); instance.n()];
    let mut cost = Rational::zero();
    for (it, &taken) in items.iter().zip(&s.best_pick) {
        if taken {
            per_user[it.user].insert(it.slot);
            cost += &it.cost;
        }
    }
    let mut schedule = Schedule::empty(instance.n());
    for (i, set) in per_user.into_iter().enumerate() {
        schedule.set(i, set);
    }
    Ok(OptResult {
        value: s.best,
        schedule,
        cost,
    })
}

/// Optimum by enumerating every subset of `(user, slot)` pairs. Only for
/// cross-checking [`brute_force_opt`] on tiny instances.
pub fn exhaustive_opt(instance: &Instance, limit: usize) -> Result<Rational> {
    let bids = instance.truthful_bids();
    let pairs: Vec<(usize, Slot)> = bids
        .iter()
        .enumerate()
        .flat_map(|(i, b)| b.window.slots().map(move |t| (i, t)))
        .collect();
    if pairs.len() > limit.min(30) {
        return Err(McsError::SearchSpaceTooLarge {
            slots: pairs.len(),
            limit,
        });
    }
    let mut best = Rational::zero();
    for mask in 0u64..(1u64 << pairs.len()) {
        let mut cost = Rational::zero();
        let mut covered = BTreeSet::new();
        for (k, &(i, t)) in pairs.iter().enumerate() {
            if mask >> k & 1 == 1 {
                cost += &bids[i].cost;
                covered.insert((instance.users[i].task, t));
            }
        }
        if cost > instance.budget {
            continue;
        }
        let value: Rational = covered
            .iter()
            .map(|(task, _)| instance.tasks[*task].unit_value.clone())
            .sum();
        best = best.max(value);
    }
    Ok(best)
}

fn trace_revenues(out: &GreedyOutcome, into: &mut BTreeSet<Rational>) {
    into.insert(Rational::zero());
    into.insert(out.revenue.clone());
    for s in &out.trace.steps {
        into.insert(s.revenue_before.clone());
        into.insert(s.revenue_after.clone());
    }
}

/// Costs at which the greedy order or user `i`'s allocation cap can change:
/// ratio ties with every other user and the cap edges
/// `G mu_i / (2 (k mu_i + R))` for the given revenues.
fn candidate_costs(
    instance: &Instance,
    bids: &[Bid],
    i: usize,
    revenues: &BTreeSet<Rational>,
    kmax: usize,
) -> BTreeSet<Rational> {
    let mu = instance.value_of(i);
    let g = &instance.budget;
    let mut out = BTreeSet::new();
    for (j, b) in bids.iter().enumerate() {
        if j != i {
            out.insert(mu * &b.cost / instance.value_of(j));
        }
    }
    for r in revenues {
        for k in 1..=kmax {
            let denom = Rational::from_integer(2) * (mu * k + r);
            out.insert(g * mu / denom);
        }
    }
    out
}

/// Threshold payment of user `i` computed numerically:
/// `d_i |y_i| + integral over (d_i, G/2] of |y_i(v)| dv`, where `|y_i(v)|`
/// comes from re-running the greedy pass with `i`'s cost set to `v`.
///
/// The integrand is piecewise constant between candidate breakpoints. Each
/// piece is sampled at its midpoint and near both ends, and any disagreement
/// is reported as [`McsError::OracleStep`].
pub fn payment_integral_oracle(instance: &Instance, bids: &[Bid], i: usize) -> Result<Rational> {
    let base = approx_mcs(instance, bids)?;
    let len = base.schedules.len_of(i);
    if len == 0 {
        return Ok(Rational::zero());
    }
    let d = &bids[i].cost;
    let half = &instance.budget / Rational::from_integer(2);
    let alloc =
        |v: &Rational| allocation_len_with(instance, bids, i, &bids[i].with_cost(v.clone()));

    for probe in [&half * Rational::new(1001, 1000), instance.budget.clone()] {
        if alloc(&probe) != 0 {
            return Err(McsError::Invariant(format!(
                "user {i} still scheduled at cost {probe} above G/2"
            )));
        }
    }
    if *d >= half {
        return Ok(d * len);
    }

    let inside = |v: &Rational| v > d && *v < half;
    let kmax = bids[i].window.len();
    let mut points: BTreeSet<Rational> = candidate_costs(instance, bids, i, &BTreeSet::new(), 0)
        .into_iter()
        .filter(|v| inside(v))
        .collect();
    points.insert(d.clone());
    points.insert(half.clone());

    // revenue ahead of i is fixed between ratio ties; collect it from one
    // run per interval
    let mut revenues = BTreeSet::new();
    trace_revenues(&base, &mut revenues);
    let ratio_points: Vec<Rational> = points.iter().cloned().collect();
    for w in ratio_points.windows(2) {
        let mid = (&w[0] + &w[1]) / Rational::from_integer(2);
        let mut c = candidates(instance, bids);
        c[i].cost = mid;
        let out = crate::greedy::run_greedy(&instance.budget, &c, instance.n());
        trace_revenues(&out, &mut revenues);
    }
    points.extend(
        candidate_costs(instance, bids, i, &revenues, kmax)
            .into_iter()
            .filter(|v| inside(v)),
    );

    let pts: Vec<Rational> = points.into_iter().collect();
    let mut integral = Rational::zero();
    for w in pts.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let width = b - a;
        let eps = &width / Rational::from_integer(1000);
        let mid = (a + b) / Rational::from_integer(2);
        let h = alloc(&mid);
        if alloc(&(a + &eps)) != h || alloc(&(b - &eps)) != h {
            return Err(McsError::OracleStep {
                from: a.to_string(),
                to: b.to_string(),
            });
        }
        integral += &width * h;
    }
    Ok(d * len + integral)
}

/// A deterministic mechanism branch whose incentives are swept.
#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "snake_case", tag = "mechanism")]
pub enum SweepTarget {
    OfflineA,
    OfflineB,
    Secretary { order: Vec<usize> },
    Sampling { order: Vec<usize>, xi: usize },
}

impl SweepTarget {
    fn deviates_windows(&self) -> bool {
        matches!(self, SweepTarget::OfflineA | SweepTarget::OfflineB)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DeviationGrid {
    /// Deviating costs as multiples of the true cost.
    pub cost_factors: Vec<Rational>,
    /// Add each breakpoint `c` and `c (1 +- 1/1000)`.
    pub breakpoints: bool,
    /// Window endpoints range over the true ones `+- radius` (offline only).
    pub window_radius: i64,
}

impl Default for DeviationGrid {
    fn default() -> Self {
        DeviationGrid {
            cost_factors: (1..=30).map(|k| Rational::new(k, 10)).collect(),
            breakpoints: true,
            window_radius: 2,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepReport {
    pub user: usize,
    pub target: SweepTarget,
    pub truthful_utility: Rational,
    pub best_utility: Rational,
    pub best_bid: Bid,
    /// `best_utility - truthful_utility`; positive means a profitable lie.
    pub max_gain: Rational,
    pub evaluated: usize,
}

/// `(slots, payment)` of user `i` under `bids`.
fn run_target(
    instance: &Instance,
    bids: &[Bid],
    i: usize,
    target: &SweepTarget,
) -> Result<(BTreeSet<Slot>, Rational)> {
    let out = match target {
        SweepTarget::OfflineA => {
            let g = approx_mcs(instance, bids)?;
            if g.schedules.len_of(i) == 0 {
                return Ok((BTreeSet::new(), Rational::zero()));
            }
            let (p, _) = cal_payment(instance, bids, &g, i)?;
            return Ok((g.schedules.of(i).clone(), p));
        }
        SweepTarget::OfflineB => branch_b(instance, bids),
        SweepTarget::Secretary { order } => {
            secretary_mechanism(instance, bids, &ArrivalOrder::new(order.clone())?)?
        }
        SweepTarget::Sampling { order, xi } => {
            sampling_mechanism(instance, bids, &ArrivalOrder::new(order.clone())?, *xi)?.outcome
        }
    };
    Ok((out.schedules.of(i).clone(), out.payments[i].clone()))
}

/// Costs near which user `i`'s outcome may change under `target`.
pub fn breakpoint_costs(
    instance: &Instance,
    bids: &[Bid],
    i: usize,
    target: &SweepTarget,
) -> Result<BTreeSet<Rational>> {
    let g = approx_mcs(instance, bids)?;
    let mut revenues = BTreeSet::new();
    trace_revenues(&g, &mut revenues);
    let mut out = candidate_costs(instance, bids, i, &revenues, instance.lambda as usize);
    out.insert(instance.budget.clone());
    out.insert(&instance.budget / Rational::from_integer(2));
    out.insert(bids[i].cost.clone());
    if let SweepTarget::Sampling { order, xi } = target {
        let order = ArrivalOrder::new(order.clone())?;
        let mut s = SamplingStream::open(instance.n(), instance.budget.clone(), *xi)?;
        for &j in order.as_slice().iter().take(*xi) {
            use crate::online::{Arrival, ArrivalStream};
            s.feed(&Arrival::of(instance, bids, j));
        }
        if let Some(eta) = s.price(instance.value_of(i)) {
            out.insert(eta);
        }
    }
    Ok(out)
}

fn deviation_costs(
    instance: &Instance,
    bids: &[Bid],
    i: usize,
    target: &SweepTarget,
    grid: &DeviationGrid,
) -> Result<BTreeSet<Rational>> {
    let truth = &instance.users[i].true_cost;
    let mut costs: BTreeSet<Rational> = grid.cost_factors.iter().map(|f| truth * f).collect();
    if grid.breakpoints {
        let (lo, hi) = (Rational::new(999, 1000), Rational::new(1001, 1000));
        for c in breakpoint_costs(instance, bids, i, target)? {
            costs.insert(&c * &lo);
            costs.insert(&c * &hi);
            costs.insert(c);
        }
    }
    costs.retain(Rational::is_positive);
    Ok(costs)
}

fn deviation_windows(profile: &UserProfile, lambda: u32, radius: i64) -> Vec<Window> {
    let w = profile.true_window;
    let mut out = Vec::new();
    for s in (w.start - radius)..=(w.start + radius) {
        for e in (w.end - radius)..=(w.end + radius) {
            let cand = Window::new(s, e);
            if s < e && cand.len() <= lambda as usize {
                out.push(cand);
            }
        }
    }
    out
}

/// Sweeps user `i`'s deviations from the truthful bid, holding all other
/// bids at `bids`. Windows deviate only for the offline branches.
pub fn truthfulness_sweep(
    instance: &Instance,
    bids: &[Bid],
    i: usize,
    target: &SweepTarget,
    grid: &DeviationGrid,
) -> Result<SweepReport> {
    let profile = &instance.users[i];
    let truthful = profile.truthful_bid();
    let mut trial = bids.to_vec();
    trial[i] = truthful.clone();
    let (slots, pay) = run_target(instance, &trial, i, target)?;
    let truthful_utility = utility(profile, &truthful, &slots, &pay);

    let costs = deviation_costs(instance, &trial, i, target, grid)?;
    let windows = if target.deviates_windows() {
        deviation_windows(profile, instance.lambda, grid.window_radius)
    } else {
        vec![profile.true_window]
    };

    let mut best_utility = truthful_utility.clone();
    let mut best_bid = truthful.clone();
    let mut evaluated = 0;
    for w in &windows {
        for c in &costs {
            let bid = Bid {
                cost: c.clone(),
                window: *w,
            };
            trial[i] = bid.clone();
            let (slots, pay) = run_target(instance, &trial, i, target)?;
            let u = utility(profile, &bid, &slots, &pay);
            evaluated += 1;
            if u > best_utility {
                best_utility = u;
                best_bid = bid;
            }
        }
    }
    Ok(SweepReport {
        user: i,
        target: target.clone(),
        max_gain: &best_utility - &truthful_utility,
        truthful_utility,
        best_utility,
        best_bid,
        evaluated,
    })
}

/// One user per integer: user `i` alone serves task `i` for one slot with
/// value and cost `a_i`; the budget is half the total.
pub fn partition_instance(values: &[u64]) -> Result<Instance> {
    if values.is_empty() || values.contains(&0) {
        return Err(McsError::Config("partition needs positive integers".into()));
    }
    let total: u64 = values.iter().sum();
    let tasks = values
        .iter()
        .enumerate()
        .map(|(id, &a)| Task {
            id,
            unit_value: Rational::from_integer(a as i64),
        })
        .collect();
    let users = values
        .iter()
        .enumerate()
        .map(|(id, &a)| UserProfile {
            id,
            task: id,
            true_cost: Rational::from_integer(a as i64),
            true_window: Window::new(0, 1),
        })
        .collect();
    Ok(Instance {
        budget: Rational::new(total as i64, 2),
        lambda: 1,
        tasks,
        users,
    })
}

/// Subset-sum check: can `values` be split into two equal-sum halves?
pub fn has_perfect_partition(values: &[u64]) -> bool {
    let total: u64 = values.iter().sum();
    if total % 2 == 1 {
        return false;
    }
    let target = (total / 2) as usize;
    let mut reach = vec![false; target + 1];
    reach[0] = true;
    for &a in values {
        let a = a as usize;
        for s in (a..=target).rev() {
            reach[s] = reach[s] || reach[s - a];
        }
    }
    reach[target]
}

/// Lower bound on `(1 - 1/e) / (7 lambda)`, using a lower bound on `e`.
pub fn revenue_bound_constant(lambda: u32) -> Rational {
    let e_lo = Rational::from_big(2718281828459045u64.into(), 1_000_000_000_000_000u64.into());
    (Rational::one() - e_lo.recip()) / Rational::from_integer(7 * lambda as i64)
}

/// `(e - 1) / (4e) - epsilon`, evaluated with `e` rounded down so the
/// threshold is a lower bound.
fn approx_condition_factor(epsilon: &Rational) -> Rational {
    let (e_lo, _) = e_bounds(30);
    (&e_lo - Rational::one()) / (Rational::from_integer(4) * &e_lo) - epsilon
}

/// `3/28 (1 - 1/e)` with `e` rounded down.
pub fn default_epsilon() -> Rational {
    let (e_lo, _) = e_bounds(30);
    Rational::new(3, 28) * (Rational::one() - e_lo.recip())
}

/// `max mu_i |T_i|` over users with `d_i <= G`.
pub fn big_lambda(instance: &Instance, bids: &[Bid]) -> Rational {
    bids.iter()
        .enumerate()
        .filter(|(_, b)| b.cost <= instance.budget)
        .map(|(i, b)| instance.value_of(i) * b.window.len())
        .max()
        .unwrap_or_else(Rational::zero)
}

/// `(Delta_1, Delta_2)`: optimal value carried by the first `xi` arrivals
/// and by the rest.
pub fn deltas(
    instance: &Instance,
    opt: &Schedule,
    order: &ArrivalOrder,
    xi: usize,
) -> (Rational, Rational) {
    let mut d1 = Rational::zero();
    let mut d2 = Rational::zero();
    for (pos, &i) in order.as_slice().iter().enumerate() {
        let v = instance.value_of(i) * opt.len_of(i);
        if pos < xi {
            d1 += v;
        } else {
            d2 += v;
        }
    }
    (d1, d2)
}

/// Greedy order with the cap `(G - spent) / d_j` in place of the potential
/// cap. Only used for analysis.
pub fn budget_cap_variant(instance: &Instance, bids: &[Bid]) -> Rational {
    let mut order: Vec<usize> = (0..instance.n()).collect();
    let cands = candidates(instance, bids);
    order.sort_by(|&a, &b| cands[b].priority().cmp(&cands[a].priority()));
    let mut covered: Vec<BTreeSet<Slot>> = vec![BTreeSet::new(); instance.m()];
    let mut spent = Rational::zero();
    let mut revenue = Rational::zero();
    for &j in &order {
        let c = &cands[j];
        let z: Vec<Slot> = c
            .window
            .slots()
            .filter(|t| !covered[c.task].contains(t))
            .collect();
        if z.is_empty() {
            continue;
        }
        let q = ((&instance.budget - &spent) / &c.cost)
            .floor_i64()
            .clamp(0, z.len() as i64) as usize;
        covered[c.task].extend(z[..q].iter().copied());
        spent += &c.cost * q;
        revenue += &c.value * q;
        if q < z.len() {
            break;
        }
    }
    revenue
}

#[derive(Clone, Debug, Serialize)]
pub struct AnalysisReport {
    pub opt_value: Rational,
    pub opt_schedule: Schedule,
    pub greedy_value: Rational,
    pub variant_value: Rational,
    pub big_lambda: Rational,
    pub lambda: u32,
    pub epsilon: Rational,
    /// `Lambda <= ((e-1)/(4e) - epsilon) OPT`.
    pub approximation_condition: bool,
    /// `Lambda >= OPT / 150`: the large-user regime of the online analysis.
    pub large_user_regime: bool,
    pub delta1: Option<Rational>,
    pub delta2: Option<Rational>,
}

/// Analysis constants for `instance` under `bids` (truthful if `None`),
/// with `(order, xi)` filling the Delta split when given.
pub fn analyze(
    instance: &Instance,
    bids: Option<&[Bid]>,
    split: Option<(&ArrivalOrder, usize)>,
    epsilon: Option<Rational>,
) -> Result<AnalysisReport> {
    let truthful = instance.truthful_bids();
    let bids = bids.unwrap_or(&truthful);
    let opt = brute_force_opt(instance)?;
    let big = big_lambda(instance, bids);
    let epsilon = epsilon.unwrap_or_else(default_epsilon);
    let approximation_condition = big <= approx_condition_factor(&epsilon) * &opt.value;
    let large_user_regime = big >= &opt.value / Rational::from_integer(150);
    let (delta1, delta2) = match split {
        Some((order, xi)) => {
            let (a, b) = deltas(instance, &opt.schedule, order, xi);
            (Some(a), Some(b))
        }
        None => (None, None),
    };
    Ok(AnalysisReport {
        greedy_value: approx_mcs(instance, bids)?.revenue,
        variant_value: budget_cap_variant(instance, bids),
        opt_value: opt.value,
        opt_schedule: opt.schedule,
        big_lambda: big,
        lambda: instance.lambda,
        epsilon,
        approximation_condition,
        large_user_regime,
        delta1,
        delta2,
    })
}
