//! Sweep experiments over random instances, emitted as CSV.
//!
//! Trial `t` of every sweep point uses the same two random streams (one for
//! the instance, one for the mechanisms), so neighbouring points differ only
//! in the swept parameter.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate_with, stream_rng, GeneratorConfig};
use crate::error::{McsError, Result};
use crate::model::{outcome_utility, utility, Bid, Instance, Outcome};
use crate::offline::{branch_a, branch_b};
use crate::online::{binomial_half, sampling_mechanism, secretary_mechanism, ArrivalOrder};
use crate::rational::Rational;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    RevenueVsUsers,
    RevenueVsBudget,
    RevenueVsTasks,
    PaymentVsBudget,
    IrScatter,
    UtilitySweep,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::RevenueVsUsers,
        ExperimentKind::RevenueVsBudget,
        ExperimentKind::RevenueVsTasks,
        ExperimentKind::PaymentVsBudget,
        ExperimentKind::IrScatter,
        ExperimentKind::UtilitySweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::RevenueVsUsers => "revenue-vs-users",
            ExperimentKind::RevenueVsBudget => "revenue-vs-budget",
            ExperimentKind::RevenueVsTasks => "revenue-vs-tasks",
            ExperimentKind::PaymentVsBudget => "payment-vs-budget",
            ExperimentKind::IrScatter => "ir-scatter",
            ExperimentKind::UtilitySweep => "utility-sweep",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = McsError;
    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| McsError::Config(format!("unknown experiment kind {s:?}")))
    }
}

fn ints(v: impl IntoIterator<Item = i64>) -> Vec<Rational> {
    v.into_iter().map(Rational::from_integer).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Values of the swept parameter: `n`, `G`, `m`, or the bid-to-cost
    /// factor for `utility-sweep`. `ir-scatter` sweeps `n`.
    pub sweep: Vec<Rational>,
    pub trials: usize,
    pub seed: u64,
    pub base: GeneratorConfig,
}

impl ExperimentConfig {
    pub fn desk(kind: ExperimentKind) -> Self {
        let base = GeneratorConfig::desk();
        let sweep = match kind {
            ExperimentKind::RevenueVsUsers => ints([10, 25, 50, 75, 100, 150, 200]),
            ExperimentKind::RevenueVsBudget | ExperimentKind::PaymentVsBudget => {
                ints([20, 50, 80, 110, 140, 170, 200])
            }
            ExperimentKind::RevenueVsTasks => ints([2, 4, 6, 8, 10, 15, 20]),
            ExperimentKind::IrScatter => ints([base.n as i64]),
            ExperimentKind::UtilitySweep => (1..=30).map(|k| Rational::new(k, 10)).collect(),
        };
        ExperimentConfig {
            kind,
            sweep,
            trials: 100,
            seed: 0,
            base,
        }
    }

    pub fn full(kind: ExperimentKind) -> Self {
        let base = GeneratorConfig::full();
        let sweep = match kind {
            ExperimentKind::RevenueVsUsers => {
                ints((500..=1000).step_by(100).chain((2000..=5000).step_by(1000)))
            }
            ExperimentKind::RevenueVsBudget | ExperimentKind::PaymentVsBudget => {
                ints((200..=1000).step_by(100).chain([1500, 2000]))
            }
            ExperimentKind::RevenueVsTasks => ints((20..=200).step_by(20)),
            ExperimentKind::IrScatter => ints([base.n as i64]),
            ExperimentKind::UtilitySweep => (1..=30).map(|k| Rational::new(k, 10)).collect(),
        };
        ExperimentConfig {
            kind,
            sweep,
            trials: 100,
            seed: 0,
            base,
        }
    }

    fn point(&self, param: &Rational) -> Result<GeneratorConfig> {
        let mut cfg = self.base.clone();
        let as_count = |p: &Rational| -> Result<usize> {
            if !p.is_positive() || p.denom() != &1.into() {
                return Err(McsError::Config(format!(
                    "sweep value {p} is not a positive integer"
                )));
            }
            Ok(p.floor_i64() as usize)
        };
        match self.kind {
            ExperimentKind::RevenueVsUsers | ExperimentKind::IrScatter => cfg.n = as_count(param)?,
            ExperimentKind::RevenueVsBudget | ExperimentKind::PaymentVsBudget => {
                cfg.budget = param.clone()
            }
            ExperimentKind::RevenueVsTasks => cfg.m = as_count(param)?,
            ExperimentKind::UtilitySweep => {
                if !param.is_positive() {
                    return Err(McsError::Config(format!(
                        "bid factor {param} must be positive"
                    )));
                }
            }
        }
        cfg.check()?;
        Ok(cfg)
    }
}

/// One CSV row. For `ir-scatter` a row is one winner: `param` is the true
/// cost of its slots, `mean_revenue` its utility and both payment columns
/// its payment. For `utility-sweep` the revenue columns hold the utility of
/// the tracked user.
#[derive(Clone, Debug, Serialize)]
pub struct ExperimentRow {
    pub param: Rational,
    pub mechanism: String,
    pub mean_revenue: Rational,
    pub std_revenue: f64,
    pub mean_payment: Rational,
    pub max_payment: Rational,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentResult {
    pub kind: ExperimentKind,
    pub rows: Vec<ExperimentRow>,
    /// Budget or IR violations seen in truthful runs, in trial order.
    pub violations: Vec<String>,
}

pub const CSV_HEADER: &str =
    "param,mechanism,mean_revenue,std_revenue,mean_payment,max_payment,trials,seed";

impl ExperimentResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6},{},{}\n",
                r.param,
                r.mechanism,
                r.mean_revenue.to_f64(),
                r.std_revenue,
                r.mean_payment.to_f64(),
                r.max_payment.to_f64(),
                r.trials,
                r.seed
            ));
        }
        out
    }

    /// `(param, mean_revenue)` of one mechanism, in sweep order.
    pub fn series(&self, mechanism: &str) -> Vec<(Rational, Rational)> {
        self.rows
            .iter()
            .filter(|r| r.mechanism == mechanism)
            .map(|r| (r.param.clone(), r.mean_revenue.clone()))
            .collect()
    }
}

/// Number of strict decreases along `values`.
pub fn inversions(values: &[Rational]) -> usize {
    values.windows(2).filter(|w| w[1] < w[0]).count()
}

/// Revenue, payment and largest realizable total payment of one run.
#[derive(Clone, Debug)]
struct Sample {
    revenue: Rational,
    payment: Rational,
    max_payment: Rational,
}

impl Sample {
    fn of(instance: &Instance, out: &Outcome) -> Self {
        let payment = out.total_payment();
        Sample {
            revenue: out.revenue(instance),
            max_payment: payment.clone(),
            payment,
        }
    }
}

/// Budget feasibility and IR of a truthful run.
fn audit(instance: &Instance, bids: &[Bid], out: &Outcome, name: &str, issues: &mut Vec<String>) {
    if out.total_payment() > instance.budget {
        issues.push(format!(
            "{name}: total payment {} exceeds budget {}",
            out.total_payment(),
            instance.budget
        ));
    }
    for (i, bid) in bids.iter().enumerate() {
        let u = outcome_utility(instance, i, bid, out);
        if u.is_negative() {
            issues.push(format!("{name}: truthful user {i} has utility {u}"));
        }
    }
}

/// Random draws of the online mechanisms for one trial.
struct OnlineDraw {
    order: ArrivalOrder,
    xi: usize,
    sampling_branch: bool,
}

impl OnlineDraw {
    fn new<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        // coin first: its draw then does not depend on n
        let sampling_branch = rng.random_bool(0.5);
        let order = ArrivalOrder::random(n, rng);
        let xi = binomial_half(n, rng);
        OnlineDraw {
            order,
            xi,
            sampling_branch,
        }
    }
}

const MECHANISMS: [&str; 6] = [
    "offline",
    "online",
    "offline_a",
    "offline_b",
    "secretary",
    "sampling",
];

struct Runs {
    a: Outcome,
    b: Outcome,
    secretary: Outcome,
    sampling: Outcome,
}

fn run_all(instance: &Instance, bids: &[Bid], draw: &OnlineDraw) -> Result<Runs> {
    let runs = Runs {
        a: branch_a(instance, bids)?.0,
        b: branch_b(instance, bids),
        secretary: secretary_mechanism(instance, bids, &draw.order)?,
        sampling: sampling_mechanism(instance, bids, &draw.order, draw.xi)?.outcome,
    };
    Ok(runs)
}

type Trial<T> = (T, Vec<String>);

fn revenue_trial(instance: &Instance, draw: &OnlineDraw) -> Result<Trial<Vec<Sample>>> {
    let bids = instance.truthful_bids();
    let r = run_all(instance, &bids, draw)?;
    let mut issues = Vec::new();
    for (name, out) in [
        ("offline_a", &r.a),
        ("offline_b", &r.b),
        ("secretary", &r.secretary),
        ("sampling", &r.sampling),
    ] {
        audit(instance, &bids, out, name, &mut issues);
    }
    let (a, b) = (Sample::of(instance, &r.a), Sample::of(instance, &r.b));
    let (sec, samp) = (
        Sample::of(instance, &r.secretary),
        Sample::of(instance, &r.sampling),
    );
    let half = Rational::new(1, 2);
    let offline = Sample {
        revenue: (&a.revenue + &b.revenue) * &half,
        payment: (&a.payment + &b.payment) * &half,
        max_payment: a.payment.clone().max(b.payment.clone()),
    };
    let online = if draw.sampling_branch {
        samp.clone()
    } else {
        sec.clone()
    };
    Ok((vec![offline, online, a, b, sec, samp], issues))
}

fn aggregate(param: &Rational, mechanism: &str, samples: &[Sample], seed: u64) -> ExperimentRow {
    let k = samples.len().max(1);
    let kq = Rational::from_integer(k as i64);
    let mean_revenue: Rational = samples.iter().map(|s| &s.revenue).sum::<Rational>() / &kq;
    let var: Rational = samples
        .iter()
        .map(|s| {
            let d = &s.revenue - &mean_revenue;
            &d * &d
        })
        .sum::<Rational>()
        / &kq;
    ExperimentRow {
        param: param.clone(),
        mechanism: mechanism.to_string(),
        mean_revenue,
        std_revenue: var.to_f64().sqrt(),
        mean_payment: samples.iter().map(|s| &s.payment).sum::<Rational>() / &kq,
        max_payment: samples
            .iter()
            .map(|s| s.max_payment.clone())
            .max()
            .unwrap_or_else(Rational::zero),
        trials: samples.len(),
        seed,
    }
}

fn trial_input(cfg: &GeneratorConfig, seed: u64, trial: usize) -> (Instance, OnlineDraw) {
    let mut inst_rng = stream_rng(seed, 2 * trial as u64);
    let mut mech_rng = stream_rng(seed, 2 * trial as u64 + 1);
    let instance = generate_with(cfg, &mut inst_rng);
    let draw = OnlineDraw::new(instance.n(), &mut mech_rng);
    (instance, draw)
}

fn note(issues: Vec<String>, param: &Rational, trial: usize, into: &mut Vec<String>) {
    into.extend(
        issues
            .into_iter()
            .map(|m| format!("param {param}, trial {trial}: {m}")),
    );
}

fn revenue_rows(
    cfg: &ExperimentConfig,
    violations: &mut Vec<String>,
) -> Result<Vec<ExperimentRow>> {
    let mut rows = Vec::new();
    for param in &cfg.sweep {
        let point = cfg.point(param)?;
        let per_trial: Vec<Trial<Vec<Sample>>> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| {
                let (instance, draw) = trial_input(&point, cfg.seed, t);
                revenue_trial(&instance, &draw)
            })
            .collect::<Result<_>>()?;
        let per_trial: Vec<Vec<Sample>> = per_trial
            .into_iter()
            .enumerate()
            .map(|(t, (samples, issues))| {
                note(issues, param, t, violations);
                samples
            })
            .collect();
        for (k, name) in MECHANISMS.iter().enumerate() {
            let samples: Vec<Sample> = per_trial.iter().map(|v| v[k].clone()).collect();
            rows.push(aggregate(param, name, &samples, cfg.seed));
        }
    }
    Ok(rows)
}

fn ir_rows(cfg: &ExperimentConfig, violations: &mut Vec<String>) -> Result<Vec<ExperimentRow>> {
    let mut rows = Vec::new();
    for param in &cfg.sweep {
        let point = cfg.point(param)?;
        let per_trial: Vec<Trial<Vec<ExperimentRow>>> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| -> Result<Trial<Vec<ExperimentRow>>> {
                let (instance, draw) = trial_input(&point, cfg.seed, t);
                let bids = instance.truthful_bids();
                let r = run_all(&instance, &bids, &draw)?;
                let mut out = Vec::new();
                let mut issues = Vec::new();
                for (name, o) in [
                    ("offline_a", &r.a),
                    ("offline_b", &r.b),
                    ("secretary", &r.secretary),
                    ("sampling", &r.sampling),
                ] {
                    audit(&instance, &bids, o, name, &mut issues);
                    for &w in &o.winners {
                        let cost = &instance.users[w].true_cost * o.schedules.len_of(w);
                        out.push(ExperimentRow {
                            param: cost,
                            mechanism: name.to_string(),
                            mean_revenue: outcome_utility(&instance, w, &bids[w], o),
                            std_revenue: 0.0,
                            mean_payment: o.payments[w].clone(),
                            max_payment: o.payments[w].clone(),
                            trials: 1,
                            seed: cfg.seed,
                        });
                    }
                }
                Ok((out, issues))
            })
            .collect::<Result<_>>()?;
        for (t, (trial_rows, issues)) in per_trial.into_iter().enumerate() {
            note(issues, param, t, violations);
            rows.extend(trial_rows);
        }
    }
    Ok(rows)
}

/// Tracks the first greedy winner of each trial and sweeps its declared
/// cost as a multiple of its true cost, window held truthful.
fn utility_rows(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRow>> {
    const NAMES: [&str; 4] = ["offline_a", "offline_b", "secretary", "sampling"];
    let point = cfg.base.clone();
    point.check()?;
    for p in &cfg.sweep {
        cfg.point(p)?;
    }
    // per trial: per sweep value: per mechanism (utility, payment)
    let per_trial: Vec<Option<Vec<Vec<Sample>>>> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| -> Result<Option<Vec<Vec<Sample>>>> {
            let (instance, draw) = trial_input(&point, cfg.seed, t);
            let truthful = instance.truthful_bids();
            let greedy = crate::greedy::approx_mcs(&instance, &truthful)?;
            let Some(&who) = greedy.winners.first() else {
                return Ok(None);
            };
            let profile = &instance.users[who];
            let mut per_param = Vec::with_capacity(cfg.sweep.len());
            for factor in &cfg.sweep {
                let mut bids = truthful.clone();
                bids[who] = truthful[who].with_cost(&profile.true_cost * factor);
                let r = run_all(&instance, &bids, &draw)?;
                let samples = [&r.a, &r.b, &r.secretary, &r.sampling]
                    .iter()
                    .map(|o| {
                        let pay = o.payments[who].clone();
                        Sample {
                            revenue: utility(profile, &bids[who], o.schedules.of(who), &pay),
                            max_payment: pay.clone(),
                            payment: pay,
                        }
                    })
                    .collect();
                per_param.push(samples);
            }
            Ok(Some(per_param))
        })
        .collect::<Result<_>>()?;
    let tracked: Vec<&Vec<Vec<Sample>>> = per_trial.iter().flatten().collect();
    let mut rows = Vec::new();
    for (p, param) in cfg.sweep.iter().enumerate() {
        for (k, name) in NAMES.iter().enumerate() {
            let samples: Vec<Sample> = tracked.iter().map(|t| t[p][k].clone()).collect();
            rows.push(aggregate(param, name, &samples, cfg.seed));
        }
    }
    Ok(rows)
}

/// Runs `cfg.trials` trials per sweep point. Every truthful run is audited
/// for budget feasibility and individual rationality; violations are
/// collected in [`ExperimentResult::violations`].
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    if cfg.trials == 0 {
        return Err(McsError::Config("trials must be positive".into()));
    }
    if cfg.sweep.is_empty() {
        return Err(McsError::Config("empty sweep".into()));
    }
    let mut violations = Vec::new();
    let rows = match cfg.kind {
        ExperimentKind::RevenueVsUsers
        | ExperimentKind::RevenueVsBudget
        | ExperimentKind::RevenueVsTasks
        | ExperimentKind::PaymentVsBudget => revenue_rows(cfg, &mut violations)?,
        ExperimentKind::IrScatter => ir_rows(cfg, &mut violations)?,
        ExperimentKind::UtilitySweep => utility_rows(cfg)?,
    };
    Ok(ExperimentResult {
        kind: cfg.kind,
        rows,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::q;

    fn tiny(kind: ExperimentKind) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::desk(kind);
        cfg.trials = 4;
        cfg.base.n = 20;
        cfg.base.m = 3;
        cfg
    }

    #[test]
    fn kinds_round_trip() {
        for k in ExperimentKind::ALL {
            assert_eq!(k.name().parse::<ExperimentKind>().unwrap(), k);
        }
        assert!("revenue".parse::<ExperimentKind>().is_err());
    }

    #[test]
    fn csv_is_reproducible() {
        let mut cfg = tiny(ExperimentKind::RevenueVsBudget);
        cfg.sweep = vec![q("20"), q("60")];
        let a = run_experiment(&cfg).unwrap().to_csv();
        let b = run_experiment(&cfg).unwrap().to_csv();
        assert_eq!(a, b);
        let mut lines = a.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        assert_eq!(lines.count(), 2 * MECHANISMS.len());
    }

    #[test]
    fn payments_stay_under_budget() {
        let mut cfg = tiny(ExperimentKind::PaymentVsBudget);
        cfg.sweep = vec![q("5"), q("30")];
        let res = run_experiment(&cfg).unwrap();
        for r in &res.rows {
            assert!(r.max_payment <= r.param, "{r:?}");
        }
    }

    #[test]
    fn ir_rows_have_non_negative_utility() {
        let mut cfg = tiny(ExperimentKind::IrScatter);
        cfg.sweep = vec![q("30")];
        let res = run_experiment(&cfg).unwrap();
        assert!(!res.rows.is_empty());
        assert!(res.rows.iter().all(|r| !r.mean_revenue.is_negative()));
    }

    #[test]
    fn utility_sweep_peaks_at_truth() {
        let mut cfg = tiny(ExperimentKind::UtilitySweep);
        cfg.sweep = vec![q("0.5"), q("1"), q("2")];
        let res = run_experiment(&cfg).unwrap();
        for name in ["offline_a", "offline_b", "secretary", "sampling"] {
            let s = res.series(name);
            let truth = &s[1].1;
            assert!(s.iter().all(|(_, u)| u <= truth), "{name}: {s:?}");
        }
    }

    #[test]
    fn rejects_bad_sweeps() {
        let mut cfg = tiny(ExperimentKind::RevenueVsUsers);
        cfg.sweep = vec![q("2.5")];
        assert!(run_experiment(&cfg).is_err());
        cfg.sweep = vec![];
        assert!(run_experiment(&cfg).is_err());
        cfg.sweep = vec![q("5")];
        cfg.trials = 0;
        assert!(run_experiment(&cfg).is_err());
    }

    #[test]
    fn inversion_count() {
        assert_eq!(inversions(&[q("1"), q("2"), q("1.5"), q("3"), q("2")]), 2);
        assert_eq!(inversions(&[]), 0);
    }
}
