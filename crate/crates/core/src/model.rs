//! Domain types for the crowdsensing scheduling problem: tasks, users, bids,
//! schedules and outcomes, together with revenue and utility accounting and
//! the suppression order used by every greedy pass.
//!
//! Time is discrete. Slot `t` stands for the unit interval `[t, t+1)` and a
//! window `[s, e)` contains the `e - s` slots `s, s+1, ..., e-1`.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{McsError, Result};
use crate::rational::Rational;

pub type Slot = i64;

/// Half-open integer availability window `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub start: Slot,
    pub end: Slot,
}

impl Window {
    pub fn new(start: Slot, end: Slot) -> Self {
        Window { start, end }
    }

    pub fn len(&self) -> usize {
        (self.end - self.start).max(0) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, slot: Slot) -> bool {
        self.start <= slot && slot < self.end
    }

    pub fn is_within(&self, other: &Window) -> bool {
        other.start <= self.start && self.end <= other.end
    }

    pub fn slots(&self) -> impl Iterator<Item = Slot> {
        self.start..self.end
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: usize,
    pub unit_value: Rational,
}

/// A user's private type: the task they can perform, their true per-slot
/// cost and their true availability.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "UserRecord", into = "UserRecord")]
pub struct UserProfile {
    pub id: usize,
    pub task: usize,
    pub true_cost: Rational,
    pub true_window: Window,
}

#[derive(Serialize, Deserialize)]
struct UserRecord {
    id: usize,
    task: usize,
    cost: Rational,
    start: Slot,
    end: Slot,
}

impl From<UserRecord> for UserProfile {
    fn from(r: UserRecord) -> Self {
        UserProfile {
            id: r.id,
            task: r.task,
            true_cost: r.cost,
            true_window: Window::new(r.start, r.end),
        }
    }
}

impl From<UserProfile> for UserRecord {
    fn from(u: UserProfile) -> Self {
        UserRecord {
            id: u.id,
            task: u.task,
            cost: u.true_cost,
            start: u.true_window.start,
            end: u.true_window.end,
        }
    }
}

impl UserProfile {
    pub fn truthful_bid(&self) -> Bid {
        Bid {
            cost: self.true_cost.clone(),
            window: self.true_window,
        }
    }
}

/// Declared per-slot cost and declared window.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "BidRecord", into = "BidRecord")]
pub struct Bid {
    pub cost: Rational,
    pub window: Window,
}

#[derive(Serialize, Deserialize)]
struct BidRecord {
    cost: Rational,
    start: Slot,
    end: Slot,
}

impl From<BidRecord> for Bid {
    fn from(r: BidRecord) -> Self {
        Bid {
            cost: r.cost,
            window: Window::new(r.start, r.end),
        }
    }
}

impl From<Bid> for BidRecord {
    fn from(b: Bid) -> Self {
        BidRecord {
            cost: b.cost,
            start: b.window.start,
            end: b.window.end,
        }
    }
}

impl Bid {
    pub fn new(cost: Rational, start: Slot, end: Slot) -> Self {
        Bid {
            cost,
            window: Window::new(start, end),
        }
    }

    pub fn with_cost(&self, cost: Rational) -> Self {
        Bid {
            cost,
            window: self.window,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub budget: Rational,
    pub lambda: u32,
    pub tasks: Vec<Task>,
    pub users: Vec<UserProfile>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum IssueKind {
    NonPositiveBudget,
    ZeroLambda,
    NoUsers,
    TaskIdMismatch,
    NonPositiveValue,
    UserIdMismatch,
    UnknownTask,
    NonPositiveCost,
    EmptyWindow,
    WindowTooLong,
    BidCount,
}

/// One failed invariant, tagged with the offending user or task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    #[serde(flatten)]
    pub kind: IssueKind,
    pub user: Option<usize>,
    pub task: Option<usize>,
    pub message: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.user, self.task) {
            (Some(u), _) => write!(f, "user {u}: {}", self.message),
            (None, Some(t)) => write!(f, "task {t}: {}", self.message),
            (None, None) => f.write_str(&self.message),
        }
    }
}

fn window_issues(
    issues: &mut Vec<ValidationIssue>,
    user: usize,
    cost: &Rational,
    window: &Window,
    lambda: u32,
) {
    let issue = |kind, message: String| ValidationIssue {
        kind,
        user: Some(user),
        task: None,
        message,
    };
    if !cost.is_positive() {
        issues.push(issue(
            IssueKind::NonPositiveCost,
            format!("non-positive cost {cost}"),
        ));
    }
    if window.is_empty() {
        issues.push(issue(
            IssueKind::EmptyWindow,
            format!("empty window {window}"),
        ));
    } else if window.len() > lambda as usize {
        issues.push(issue(
            IssueKind::WindowTooLong,
            format!("window {window} longer than lambda = {lambda}"),
        ));
    }
}

impl Instance {
    /// Checks every type invariant and returns all violations at once.
    pub fn validate(&self) -> std::result::Result<(), Vec<ValidationIssue>> {
        let mut issues = Vec::new();
        let global = |kind, message: &str| ValidationIssue {
            kind,
            user: None,
            task: None,
            message: message.to_string(),
        };
        if !self.budget.is_positive() {
            issues.push(global(IssueKind::NonPositiveBudget, "non-positive budget"));
        }
        if self.lambda == 0 {
            issues.push(global(IssueKind::ZeroLambda, "lambda must be at least 1"));
        }
        if self.users.is_empty() {
            issues.push(global(IssueKind::NoUsers, "instance has no users"));
        }
        for (i, task) in self.tasks.iter().enumerate() {
            if task.id != i {
                issues.push(ValidationIssue {
                    kind: IssueKind::TaskIdMismatch,
                    user: None,
                    task: Some(i),
                    message: format!("task at position {i} has id {}", task.id),
                });
            }
            if !task.unit_value.is_positive() {
                issues.push(ValidationIssue {
                    kind: IssueKind::NonPositiveValue,
                    user: None,
                    task: Some(i),
                    message: format!("non-positive unit value {}", task.unit_value),
                });
            }
        }
        for (i, user) in self.users.iter().enumerate() {
            if user.id != i {
                issues.push(ValidationIssue {
                    kind: IssueKind::UserIdMismatch,
                    user: Some(i),
                    task: None,
                    message: format!("user at position {i} has id {}", user.id),
                });
            }
            if user.task >= self.tasks.len() {
                issues.push(ValidationIssue {
                    kind: IssueKind::UnknownTask,
                    user: Some(i),
                    task: Some(user.task),
                    message: format!("unknown task {}", user.task),
                });
            }
            window_issues(
                &mut issues,
                i,
                &user.true_cost,
                &user.true_window,
                self.lambda,
            );
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(issues)
        }
    }

    /// Validates a declared bid vector against this instance.
    pub fn validate_bids(&self, bids: &[Bid]) -> std::result::Result<(), Vec<ValidationIssue>> {
        let mut issues = Vec::new();
        if bids.len() != self.users.len() {
            issues.push(ValidationIssue {
                kind: IssueKind::BidCount,
                user: None,
                task: None,
                message: format!("expected {} bids, got {}", self.users.len(), bids.len()),
            });
        }
        for (i, bid) in bids.iter().enumerate() {
            window_issues(&mut issues, i, &bid.cost, &bid.window, self.lambda);
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(issues)
        }
    }

    pub fn n(&self) -> usize {
        self.users.len()
    }

    pub fn m(&self) -> usize {
        self.tasks.len()
    }

    /// Per-slot value of user `i` to the owner.
    pub fn value_of(&self, i: usize) -> &Rational {
        &self.tasks[self.users[i].task].unit_value
    }

    pub fn truthful_bids(&self) -> Vec<Bid> {
        self.users.iter().map(UserProfile::truthful_bid).collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }
}

/// Returns `Ok` or a [`McsError::Invalid`] carrying every issue found.
pub fn validate_instance(instance: &Instance) -> Result<()> {
    instance.validate().map_err(McsError::Invalid)
}

/// Per-user sets of allocated slots.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schedule {
    slots: Vec<BTreeSet<Slot>>,
}

impl Schedule {
    pub fn empty(n: usize) -> Self {
        Schedule {
            slots: vec![BTreeSet::new(); n],
        }
    }

    pub fn n(&self) -> usize {
        self.slots.len()
    }

    pub fn of(&self, i: usize) -> &BTreeSet<Slot> {
        &self.slots[i]
    }

    pub fn len_of(&self, i: usize) -> usize {
        self.slots[i].len()
    }

    pub fn set(&mut self, i: usize, slots: BTreeSet<Slot>) {
        self.slots[i] = slots;
    }

    pub fn iter(&self) -> impl Iterator<Item = &BTreeSet<Slot>> {
        self.slots.iter()
    }

    /// Union of all slots held by users assigned to `task`.
    pub fn covered(&self, instance: &Instance, task: usize) -> BTreeSet<Slot> {
        self.slots
            .iter()
            .enumerate()
            .filter(|(j, _)| instance.users[*j].task == task)
            .flat_map(|(_, s)| s.iter().copied())
            .collect()
    }

    /// True when no two users of the same task share a slot and every
    /// allocation lies inside the matching declared window.
    pub fn is_consistent(&self, instance: &Instance, bids: &[Bid]) -> bool {
        let mut seen = vec![BTreeSet::new(); instance.m()];
        for (i, slots) in self.slots.iter().enumerate() {
            let task = instance.users[i].task;
            for &t in slots {
                if !bids[i].window.contains(t) || !seen[task].insert(t) {
                    return false;
                }
            }
        }
        true
    }
}

/// Schedules, payments and the ordered winner list of one mechanism run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub schedules: Schedule,
    pub payments: Vec<Rational>,
    pub winners: Vec<usize>,
}

impl Outcome {
    pub fn empty(n: usize) -> Self {
        Outcome {
            schedules: Schedule::empty(n),
            payments: vec![Rational::zero(); n],
            winners: Vec::new(),
        }
    }

    pub fn total_payment(&self) -> Rational {
        self.payments.iter().sum()
    }

    pub fn revenue(&self, instance: &Instance) -> Rational {
        revenue(instance, &self.schedules)
    }
}

/// `sum over tasks of unit_value * |union of that task's allocated slots|`.
pub fn revenue(instance: &Instance, schedule: &Schedule) -> Rational {
    let mut covered = vec![BTreeSet::new(); instance.m()];
    for (i, slots) in schedule.iter().enumerate() {
        covered[instance.users[i].task].extend(slots.iter().copied());
    }
    covered
        .iter()
        .zip(&instance.tasks)
        .map(|(slots, task)| &task.unit_value * slots.len())
        .sum()
}

/// Declared window minus every slot already held by a user of the same task.
pub fn uncovered(
    window: &Window,
    task: usize,
    instance: &Instance,
    schedule: &Schedule,
) -> BTreeSet<Slot> {
    let covered = schedule.covered(instance, task);
    window.slots().filter(|t| !covered.contains(t)).collect()
}

/// True when the post-paid rule withholds payment: the allocation leaves the
/// true window, or the declared window ends outside it.
pub fn payment_voided(profile: &UserProfile, bid: &Bid, slots: &BTreeSet<Slot>) -> bool {
    let truth = profile.true_window;
    let end_ok = truth.start <= bid.window.end && bid.window.end <= truth.end;
    let inside = slots.iter().all(|&t| truth.contains(t));
    !(end_ok && inside)
}

/// Payment minus true cost of the allocated slots. A voided payment yields
/// utility zero: the user is not paid and does not sense.
pub fn utility(
    profile: &UserProfile,
    bid: &Bid,
    slots: &BTreeSet<Slot>,
    payment: &Rational,
) -> Rational {
    if slots.is_empty() {
        return payment.clone();
    }
    if payment_voided(profile, bid, slots) {
        return Rational::zero();
    }
    payment - &profile.true_cost * slots.len()
}

/// Utility of user `i` in `outcome`, produced for a bid vector containing `bid`.
pub fn outcome_utility(instance: &Instance, i: usize, bid: &Bid, outcome: &Outcome) -> Rational {
    utility(
        &instance.users[i],
        bid,
        outcome.schedules.of(i),
        &outcome.payments[i],
    )
}

/// Key of the suppression order: higher value-to-cost ratio ranks higher,
/// equal ratios rank the larger index higher.
#[derive(Clone, Debug)]
pub struct Priority<'a> {
    pub value: &'a Rational,
    pub cost: &'a Rational,
    pub index: usize,
}

impl<'a> Priority<'a> {
    pub fn new(value: &'a Rational, cost: &'a Rational, index: usize) -> Self {
        Priority { value, cost, index }
    }
}

impl Ord for Priority<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        Rational::cmp_ratio(self.value, self.cost, other.value, other.cost)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Priority<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Priority<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Priority<'_> {}

/// `a ≺ b`: `b` suppresses `a`.
pub fn suppressed_by(a: &Priority<'_>, b: &Priority<'_>) -> bool {
    a < b
}

/// The unique maximal element under the suppression order.
pub fn max_by_order<'a, I>(users: I) -> Option<Priority<'a>>
where
    I: IntoIterator<Item = Priority<'a>>,
{
    users.into_iter().max()
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use crate::rational::q;

    /// Three users, two tasks, budget 10.
    /// A1 = user 0 (task 0, cost 1, [0,2)), A2 = user 1 (task 0, cost 2, [1,3)),
    /// A3 = user 2 (task 1, cost 1, [0,4)).
    pub fn e1() -> Instance {
        Instance {
            budget: q("10"),
            lambda: 4,
            tasks: vec![
                Task {
                    id: 0,
                    unit_value: q("2"),
                },
                Task {
                    id: 1,
                    unit_value: q("1"),
                },
            ],
            users: vec![
                user(0, 0, "1", 0, 2),
                user(1, 0, "2", 1, 3),
                user(2, 1, "1", 0, 4),
            ],
        }
    }

    pub fn user(id: usize, task: usize, cost: &str, start: Slot, end: Slot) -> UserProfile {
        UserProfile {
            id,
            task,
            true_cost: q(cost),
            true_window: Window::new(start, end),
        }
    }

    pub fn slots(items: &[Slot]) -> BTreeSet<Slot> {
        items.iter().copied().collect()
    }
}
