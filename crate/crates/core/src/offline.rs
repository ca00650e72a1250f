//! Randomized truthful offline mechanism.
//!
//! With probability one half the owner runs the greedy schedule and pays
//! every winner a threshold payment
//!
//! ```text
//! p_i = d_i |y_i| + integral from d_i to infinity of |y_i(v)| dv
//! ```
//!
//! where `y_i(v)` is the greedy allocation had user `i` declared cost `v`.
//! Otherwise the single most valuable affordable user is paid the whole
//! budget for one slot. Payments are post-paid: a winner who does not finish
//! their slots, or whose declared window ends outside their true window, is
//! not paid.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{McsError, Result};
use crate::greedy::{allocation_cap, approx_mcs, GreedyOutcome};
use crate::model::{Bid, Instance, Outcome, Slot, UserProfile};
use crate::rational::Rational;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    /// Greedy schedule with threshold payments.
    A,
    /// Single best user paid the whole budget.
    B,
}

impl Branch {
    /// Fair coin: `o <= 1/2` selects branch A.
    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Branch {
        if rng.random_bool(0.5) {
            Branch::A
        } else {
            Branch::B
        }
    }
}

/// One constant-height stretch of `|y_i(v)|`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PaymentStep {
    pub from: Rational,
    pub to: Rational,
    pub height: u64,
    pub area: Rational,
}

/// An interval `(gamma_1, gamma_2]` over which the users scheduled ahead of
/// the winner do not change.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PaymentPiece {
    pub gamma1: Rational,
    /// `None` stands for an unbounded upper end (no revenue ahead yet and no
    /// suppressed user left).
    pub gamma2: Option<Rational>,
    pub uncovered: usize,
    pub revenue_ahead: Rational,
    pub steps: Vec<PaymentStep>,
    pub area: Rational,
}

/// Audit record of a threshold payment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PaymentBreakdown {
    pub user: usize,
    pub base: Rational,
    pub pieces: Vec<PaymentPiece>,
    pub total: Rational,
}

/// `integral over (lo, hi] of min(z, floor(G/(2v) - revenue/value)) dv` as
/// explicit steps. Requires the integrand to be non-negative on the range.
///
/// The integrand is at least `k` exactly when `v <= G / (2(k + revenue/value))`,
/// so the step edges sit at those points.
fn integrate_cap(
    budget: &Rational,
    value: &Rational,
    revenue_ahead: &Rational,
    z: usize,
    lo: &Rational,
    hi: Option<&Rational>,
) -> Vec<PaymentStep> {
    let two = Rational::from_integer(2);
    let offset = revenue_ahead / value;
    let edge = |k: usize| budget / &(&two * &(Rational::from_integer(k as i64) + &offset));
    // |y(v)| = 0 past G/2 whatever the revenue ahead
    let top = match hi {
        Some(h) => h.clone().min(edge(1)),
        None => edge(1),
    };
    debug_assert!(top <= budget / &two);
    let mut steps = Vec::new();
    // edges k+1 at or above the top contribute nothing
    let first = (budget / &(&two * &top) - &offset)
        .floor_i64()
        .clamp(1, z as i64) as usize;
    let mut upper = top;
    for k in first..=z {
        let lower = if k == z {
            lo.clone()
        } else {
            edge(k + 1).max(lo.clone())
        };
        if upper <= *lo {
            break;
        }
        if lower < upper {
            let height = if k == z { z } else { k };
            let area = (&upper - &lower) * Rational::from_integer(height as i64);
            steps.push(PaymentStep {
                from: lower.clone(),
                to: upper.clone(),
                height: height as u64,
                area,
            });
        }
        upper = lower.min(upper);
    }
    steps.reverse();
    steps
}

/// Threshold payment of greedy winner `winner`, computed piece by piece.
///
/// `context` must be the greedy outcome for `(instance, bids)`.
pub fn cal_payment(
    instance: &Instance,
    bids: &[Bid],
    context: &GreedyOutcome,
    winner: usize,
) -> Result<(Rational, PaymentBreakdown)> {
    let pos = context
        .winners
        .iter()
        .position(|&w| w == winner)
        .ok_or(McsError::NotAWinner(winner))?;
    let budget = &instance.budget;
    let two = Rational::from_integer(2);
    let mu_i = instance.value_of(winner);
    let d_i = &bids[winner].cost;
    let task_i = instance.users[winner].task;
    let window_i = bids[winner].window;

    // slots covered and revenue collected before the winner's turn
    let mut covered: Vec<BTreeSet<Slot>> = vec![BTreeSet::new(); instance.m()];
    let mut r_ahead = Rational::zero();
    for &w in &context.winners[..pos] {
        let len = context.schedules.len_of(w);
        covered[instance.users[w].task].extend(context.schedules.of(w).iter().copied());
        r_ahead += instance.value_of(w) * len;
    }
    // the suppression order is fixed, so the max of what is left is its head
    let rank = context
        .order
        .iter()
        .position(|&j| j == winner)
        .expect("winner is ranked");
    let suppressed = &context.order[rank + 1..];
    let mut head = 0;

    let base = d_i * context.schedules.len_of(winner);
    let mut total = base.clone();
    let mut pieces = Vec::new();
    let mut k = winner;
    let mut theta = suppressed.len() as i64;

    while theta >= 0 {
        let z1 = window_i
            .slots()
            .filter(|t| !covered[task_i].contains(t))
            .count();
        let gamma1 = mu_i / instance.value_of(k) * &bids[k].cost;
        // revenue ahead only grows, so past the first cap edge every later
        // piece integrates zero
        if gamma1 >= mu_i * budget / (&two * &(mu_i + &r_ahead)) {
            break;
        }
        let mut gamma2 = if r_ahead.is_zero() {
            None
        } else {
            Some(mu_i * budget / (&two * &r_ahead))
        };
        let next = suppressed.get(head).copied();
        if let Some(j) = next {
            let tie = mu_i / instance.value_of(j) * &bids[j].cost;
            gamma2 = Some(match gamma2 {
                Some(g) => g.min(tie),
                None => tie,
            });
        }
        let in_range = gamma2.as_ref().is_none_or(|g2| *g2 >= gamma1);
        if z1 > 0 && in_range {
            let steps = integrate_cap(budget, mu_i, &r_ahead, z1, &gamma1, gamma2.as_ref());
            let area: Rational = steps.iter().map(|s| &s.area).sum();
            total += &area;
            pieces.push(PaymentPiece {
                gamma1,
                gamma2,
                uncovered: z1,
                revenue_ahead: r_ahead.clone(),
                steps,
                area,
            });
        } else {
            break;
        }
        if let Some(j) = next {
            let task_j = instance.users[j].task;
            let z2: Vec<Slot> = bids[j]
                .window
                .slots()
                .filter(|t| !covered[task_j].contains(t))
                .collect();
            let q = allocation_cap(
                budget,
                &bids[j].cost,
                instance.value_of(j),
                &r_ahead,
                z2.len(),
            );
            if q > 0 {
                covered[task_j].extend(z2[..q as usize].iter().copied());
                r_ahead += instance.value_of(j) * (q as usize);
            }
            if q < z2.len() as i64 {
                break;
            }
            k = j;
            head += 1;
            theta = (suppressed.len() - head + 1) as i64;
        }
        theta -= 1;
    }

    let breakdown = PaymentBreakdown {
        user: winner,
        base,
        pieces,
        total: total.clone(),
    };
    Ok((total, breakdown))
}

/// Greedy schedule with threshold payments, plus one breakdown per winner.
pub fn branch_a(instance: &Instance, bids: &[Bid]) -> Result<(Outcome, Vec<PaymentBreakdown>)> {
    let greedy = approx_mcs(instance, bids)?;
    let mut payments = vec![Rational::zero(); instance.n()];
    let mut breakdowns = Vec::with_capacity(greedy.winners.len());
    for &w in &greedy.winners {
        let (p, b) = cal_payment(instance, bids, &greedy, w)?;
        payments[w] = p;
        breakdowns.push(b);
    }
    let outcome = Outcome {
        schedules: greedy.schedules,
        payments,
        winners: greedy.winners,
    };
    Ok((outcome, breakdowns))
}

/// Most valuable user with `d <= G`, smallest index on ties.
pub fn best_affordable(instance: &Instance, bids: &[Bid]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, b) in bids.iter().enumerate() {
        if b.cost > instance.budget {
            continue;
        }
        if best.is_none_or(|j| instance.value_of(i) > instance.value_of(j)) {
            best = Some(i);
        }
    }
    best
}

/// Earliest declared slot to the best affordable user, paid `G`.
pub fn branch_b(instance: &Instance, bids: &[Bid]) -> Outcome {
    let mut outcome = Outcome::empty(instance.n());
    if let Some(j) = best_affordable(instance, bids) {
        outcome
            .schedules
            .set(j, [bids[j].window.start].into_iter().collect());
        outcome.payments[j] = instance.budget.clone();
        outcome.winners.push(j);
    }
    outcome
}

pub fn offline_mechanism(instance: &Instance, bids: &[Bid], branch: Branch) -> Result<Outcome> {
    if bids.len() != instance.n() {
        return Err(McsError::BidCount {
            expected: instance.n(),
            got: bids.len(),
        });
    }
    match branch {
        Branch::A => Ok(branch_a(instance, bids)?.0),
        Branch::B => Ok(branch_b(instance, bids)),
    }
}

/// How the branch is chosen: fixed by the caller, or by a fair coin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchSelector {
    Explicit(Branch),
    FairCoin,
}

impl BranchSelector {
    pub fn resolve<R: Rng + ?Sized>(self, rng: &mut R) -> Branch {
        match self {
            BranchSelector::Explicit(b) => b,
            BranchSelector::FairCoin => Branch::draw(rng),
        }
    }
}

/// Resolves `selector` (drawing from `rng` if it is a coin) and runs the branch.
pub fn randomized_offline<R: Rng + ?Sized>(
    instance: &Instance,
    bids: &[Bid],
    selector: BranchSelector,
    rng: &mut R,
) -> Result<(Branch, Outcome)> {
    let branch = selector.resolve(rng);
    Ok((branch, offline_mechanism(instance, bids, branch)?))
}

/// Revenue averaged over the fair coin: `(R_A + R_B) / 2`.
pub fn expected_offline_revenue(instance: &Instance, bids: &[Bid]) -> Result<Rational> {
    let a = approx_mcs(instance, bids)?.revenue;
    let b = branch_b(instance, bids).revenue(instance);
    Ok((a + b) / Rational::from_integer(2))
}

/// Final post-paid settlement. `completed[i]` reports whether user `i`
/// sensed over all of `y_i`.
pub fn settle(
    outcome: &Outcome,
    bids: &[Bid],
    completed: &[bool],
    profiles: &[UserProfile],
) -> Vec<Rational> {
    outcome
        .payments
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let truth = profiles[i].true_window;
            let end = bids[i].window.end;
            let available = truth.start <= end && end <= truth.end;
            let slots = outcome.schedules.of(i);
            let done = completed.get(i).copied().unwrap_or(false)
                && slots.iter().all(|&t| truth.contains(t));
            if slots.is_empty() || (available && done) {
                p.clone()
            } else {
                Rational::zero()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::{e1, slots};
    use crate::model::{outcome_utility, Bid};
    use crate::rational::q;

    fn e1_greedy() -> (Instance, Vec<Bid>, GreedyOutcome) {
        let inst = e1();
        let bids = inst.truthful_bids();
        let g = approx_mcs(&inst, &bids).unwrap();
        (inst, bids, g)
    }

    #[test]
    fn e1_payment_for_a1() {
        let (inst, bids, g) = e1_greedy();
        let (p, b) = cal_payment(&inst, &bids, &g, 0).unwrap();
        assert_eq!(p, q("4"));
        assert_eq!(b.base, q("2"));
        assert_eq!(b.pieces[0].gamma1, q("1"));
        assert_eq!(b.pieces[0].gamma2, Some(q("2")));
        assert_eq!(b.pieces[0].area, q("2"));
        assert_eq!(b.total, q("4"));
    }

    #[test]
    fn e1_payment_for_a3() {
        let (inst, bids, g) = e1_greedy();
        let (p, b) = cal_payment(&inst, &bids, &g, 2).unwrap();
        assert_eq!(p, q("1"));
        assert!(b.pieces.iter().all(|piece| piece.area.is_zero()));
    }

    #[test]
    fn non_winner_payment_is_an_error() {
        let (inst, bids, g) = e1_greedy();
        assert!(matches!(
            cal_payment(&inst, &bids, &g, 1),
            Err(McsError::NotAWinner(1))
        ));
    }

    #[test]
    fn e1_branches() {
        let inst = e1();
        let bids = inst.truthful_bids();
        let a = offline_mechanism(&inst, &bids, Branch::A).unwrap();
        assert_eq!(a.payments, vec![q("4"), q("0"), q("1")]);
        assert_eq!(a.total_payment(), q("5"));

        let b = offline_mechanism(&inst, &bids, Branch::B).unwrap();
        assert_eq!(b.winners, vec![0]);
        assert_eq!(b.schedules.of(0), &slots(&[0]));
        assert_eq!(b.payments[0], q("10"));

        // (5 + 2) / 2
        assert_eq!(expected_offline_revenue(&inst, &bids).unwrap(), q("3.5"));
    }

    #[test]
    fn branch_b_with_nobody_affordable_is_empty() {
        let mut inst = e1();
        for u in &mut inst.users {
            u.true_cost = q("11");
        }
        let out = branch_b(&inst, &inst.truthful_bids());
        assert!(out.winners.is_empty());
        assert_eq!(out.total_payment(), q("0"));
    }

    #[test]
    fn bidding_inside_the_flat_region_keeps_utility() {
        let inst = e1();
        let truth = inst.truthful_bids();
        let u_truth = outcome_utility(
            &inst,
            0,
            &truth[0],
            &offline_mechanism(&inst, &truth, Branch::A).unwrap(),
        );
        assert_eq!(u_truth, q("2"));
        let mut bids = truth.clone();
        bids[0] = truth[0].with_cost(q("1.5"));
        let out = offline_mechanism(&inst, &bids, Branch::A).unwrap();
        assert_eq!(out.payments[0], q("4"));
        assert_eq!(outcome_utility(&inst, 0, &bids[0], &out), q("2"));
        bids[0] = truth[0].with_cost(q("2.5"));
        let out = offline_mechanism(&inst, &bids, Branch::A).unwrap();
        assert_eq!(outcome_utility(&inst, 0, &bids[0], &out), q("0"));
    }

    #[test]
    fn integral_stops_at_half_budget() {
        // nothing ahead, no suppressed users: |y(v)| = min(3, floor(5/v))
        let steps = integrate_cap(&q("10"), &q("1"), &q("0"), 3, &q("1"), None);
        let area: Rational = steps.iter().map(|s| &s.area).sum();
        // 3 on (1, 5/3], 2 on (5/3, 5/2], 1 on (5/2, 5]
        let expected = q("2/3") * q("3") + (q("5/2") - q("5/3")) * q("2") + q("5/2");
        assert_eq!(area, expected);
        assert_eq!(steps.last().unwrap().to, q("5"));
        assert_eq!(
            steps.iter().map(|s| s.height).collect::<Vec<_>>(),
            vec![3, 2, 1]
        );
    }

    #[test]
    fn settlement_voids_unavailable_or_incomplete_winners() {
        let inst = e1();
        let bids = inst.truthful_bids();
        let out = offline_mechanism(&inst, &bids, Branch::A).unwrap();
        assert_eq!(
            settle(&out, &bids, &[true, true, true], &inst.users),
            out.payments
        );

        let mut late = bids.clone();
        late[0] = Bid::new(q("1"), 0, 3);
        let out_late = offline_mechanism(&inst, &late, Branch::A).unwrap();
        assert!(out_late.payments[0].is_positive());
        let paid = settle(&out_late, &late, &[true, true, true], &inst.users);
        assert_eq!(paid[0], q("0"));

        let paid = settle(&out, &bids, &[false, true, true], &inst.users);
        assert_eq!(paid[0], q("0"));
        assert_eq!(paid[2], q("1"));
    }
}
