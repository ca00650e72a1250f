use std::fs;
use std::io::{self, BufRead, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use mcs_core::harness::{
    generate, run_experiment, stream_rng, ExperimentConfig, ExperimentKind, GeneratorConfig,
};
use mcs_core::model::outcome_utility;
use mcs_core::offline::{branch_a, randomized_offline};
use mcs_core::online::binomial_half;
use mcs_core::oracle::{
    analyze, brute_force_opt_with, DeviationGrid, SweepTarget, DEFAULT_SEARCH_LIMIT,
};
use mcs_core::{
    approx_mcs, cal_payment, partition_instance, payment_integral_oracle, sampling_mechanism,
    secretary_mechanism, truthfulness_sweep, validate_instance, Arrival, ArrivalOrder,
    ArrivalStream, Bid, Branch, BranchSelector, Instance, OnlineBranch, Outcome, Rational,
    SamplingStream, SecretaryStream,
};

/// Exit status for invariant violations; plain errors exit with 1.
const VIOLATION: u8 = 2;

#[derive(Parser)]
#[command(
    name = "mcs",
    version,
    about = "Crowdsensing scheduling mechanisms and oracles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Input {
    /// Instance JSON; `-` reads stdin.
    #[arg(long, short)]
    instance: PathBuf,
    /// Bids JSON (array of {cost, start, end}); truthful when omitted.
    #[arg(long)]
    bids: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Check an instance (and bids) for structural problems.
    Validate(Input),
    /// Draw a random instance.
    Generate {
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        m: usize,
        #[arg(long, default_value = "100")]
        budget: Rational,
        #[arg(long, default_value_t = 10)]
        max_window: u32,
        #[arg(long, default_value_t = 100)]
        max_start: i64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the offline mechanism.
    SolveOffline {
        #[command(flatten)]
        input: Input,
        #[arg(long, value_enum, default_value_t = BranchArg::Coin)]
        branch: BranchArg,
        /// Seed for the branch coin.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Include per-winner payment breakdowns (branch A).
        #[arg(long)]
        explain: bool,
    },
    /// Run an online mechanism over a seeded random arrival order.
    SolveOnline {
        #[command(flatten)]
        input: Input,
        #[arg(long, value_enum, default_value_t = MechArg::Coin)]
        mech: MechArg,
        #[arg(long, default_value_t = 0)]
        order_seed: u64,
        /// Explicit arrival order, comma separated; overrides --order-seed.
        #[arg(long, value_delimiter = ',')]
        order: Option<Vec<usize>>,
        /// Sample size for the sampling mechanism; Binomial(n, 1/2) when omitted.
        #[arg(long)]
        xi: Option<usize>,
    },
    /// Ground-truth computations.
    #[command(subcommand)]
    Oracle(OracleCommand),
    /// Print the hard instance built from a partition input.
    GenPartition {
        #[arg(value_delimiter = ',', required = true)]
        values: Vec<u64>,
    },
    /// Run an experiment family and write CSV.
    Experiment {
        #[arg(value_parser = parse_kind)]
        kind: ExperimentKind,
        /// Swept values, comma separated; desk defaults when omitted.
        #[arg(long, value_delimiter = ',')]
        sweep: Option<Vec<Rational>>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Use the full-size generator defaults and sweeps.
        #[arg(long)]
        full_scale: bool,
    },
    /// JSON-lines online session on stdin/stdout.
    Stream,
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Exact optimum by exhaustive search.
    Opt {
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value_t = DEFAULT_SEARCH_LIMIT)]
        limit: usize,
    },
    /// Threshold payment from re-running the greedy at substituted costs,
    /// compared with the piecewise computation.
    Payment {
        #[command(flatten)]
        input: Input,
        /// Winner to price; every winner when omitted.
        #[arg(long)]
        user: Option<usize>,
    },
    /// Search for profitable misreports.
    Sweep {
        #[command(flatten)]
        input: Input,
        #[arg(long, value_enum, default_value_t = TargetArg::OfflineA)]
        target: TargetArg,
        /// User to sweep; every user when omitted.
        #[arg(long)]
        user: Option<usize>,
        #[arg(long, default_value_t = 0)]
        order_seed: u64,
        #[arg(long)]
        xi: Option<usize>,
    },
    /// Optimum, greedy value and analysis constants.
    Analyze {
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value_t = 0)]
        order_seed: u64,
        #[arg(long)]
        xi: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BranchArg {
    A,
    B,
    Coin,
}

#[derive(Clone, Copy, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
enum MechArg {
    Secretary,
    Sampling,
    Coin,
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    OfflineA,
    OfflineB,
    Secretary,
    Sampling,
}

fn parse_kind(s: &str) -> Result<ExperimentKind, String> {
    s.parse().map_err(|e: mcs_core::McsError| e.to_string())
}

fn read_source(path: &Path) -> anyhow::Result<String> {
    if path.as_os_str() == "-" {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s)?;
        Ok(s)
    } else {
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
    }
}

impl Input {
    /// Parsed instance without validation.
    fn raw(&self) -> anyhow::Result<Instance> {
        Instance::from_json(&read_source(&self.instance)?).context("parsing instance")
    }

    fn raw_bids(&self, instance: &Instance) -> anyhow::Result<Vec<Bid>> {
        match &self.bids {
            Some(p) => Ok(serde_json::from_str(&read_source(p)?).context("parsing bids")?),
            None => Ok(instance.truthful_bids()),
        }
    }

    /// Validated instance and bids.
    fn load(&self) -> anyhow::Result<(Instance, Vec<Bid>)> {
        let inst = self.raw()?;
        validate_instance(&inst)?;
        let bids = self.raw_bids(&inst)?;
        inst.validate_bids(&bids)
            .map_err(mcs_core::McsError::Invalid)?;
        Ok((inst, bids))
    }
}

fn emit<T: Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

/// Budget, consistency and (for truthful bids) individual rationality.
fn audit(instance: &Instance, bids: &[Bid], outcome: &Outcome) -> Vec<String> {
    let mut issues = Vec::new();
    if !outcome.schedules.is_consistent(instance, bids) {
        issues.push("schedule overlaps or leaves a declared window".to_string());
    }
    let total = outcome.total_payment();
    if total > instance.budget {
        issues.push(format!(
            "total payment {total} exceeds budget {}",
            instance.budget
        ));
    }
    if bids == instance.truthful_bids().as_slice() {
        for (i, bid) in bids.iter().enumerate() {
            let u = outcome_utility(instance, i, bid, outcome);
            if u.is_negative() {
                issues.push(format!("user {i} has negative utility {u}"));
            }
        }
    }
    issues
}

fn order_for(n: usize, explicit: Option<Vec<usize>>, seed: u64) -> anyhow::Result<ArrivalOrder> {
    Ok(match explicit {
        Some(o) => ArrivalOrder::new(o)?,
        None => ArrivalOrder::random(n, &mut stream_rng(seed, 0)),
    })
}

fn run(cli: Cli) -> anyhow::Result<Vec<String>> {
    let mut violations = Vec::new();
    match cli.command {
        Command::Validate(input) => {
            let inst = input.raw()?;
            let mut issues = inst.validate().err().unwrap_or_default();
            if issues.is_empty() {
                let bids = input.raw_bids(&inst)?;
                issues = inst.validate_bids(&bids).err().unwrap_or_default();
            }
            emit(&json!({ "valid": issues.is_empty(), "issues": issues }))?;
            violations.extend(issues.iter().map(ToString::to_string));
        }
        Command::Generate {
            n,
            m,
            budget,
            max_window,
            max_start,
            seed,
        } => {
            let cfg = GeneratorConfig {
                n,
                m,
                budget,
                max_window,
                max_start,
                seed,
                ..GeneratorConfig::desk()
            };
            println!("{}", generate(&cfg)?.0.to_json());
        }
        Command::SolveOffline {
            input,
            branch,
            seed,
            explain,
        } => {
            let (inst, bids) = input.load()?;
            let selector = match branch {
                BranchArg::A => BranchSelector::Explicit(Branch::A),
                BranchArg::B => BranchSelector::Explicit(Branch::B),
                BranchArg::Coin => BranchSelector::FairCoin,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (chosen, outcome) = randomized_offline(&inst, &bids, selector, &mut rng)?;
            let breakdowns = match (chosen, explain) {
                (Branch::A, true) => Some(branch_a(&inst, &bids)?.1),
                _ => None,
            };
            violations = audit(&inst, &bids, &outcome);
            emit(&json!({
                "branch": chosen,
                "revenue": outcome.revenue(&inst),
                "total_payment": outcome.total_payment(),
                "outcome": outcome,
                "breakdowns": breakdowns,
            }))?;
        }
        Command::SolveOnline {
            input,
            mech,
            order_seed,
            order,
            xi,
        } => {
            let (inst, bids) = input.load()?;
            let n = inst.n();
            let order = order_for(n, order, order_seed)?;
            let mut rng = stream_rng(order_seed, 1);
            let branch = match mech {
                MechArg::Secretary => OnlineBranch::Secretary,
                MechArg::Sampling => OnlineBranch::Sampling {
                    xi: xi.unwrap_or_else(|| binomial_half(n, &mut rng)),
                },
                MechArg::Coin => match OnlineBranch::draw(n, &mut rng) {
                    OnlineBranch::Sampling { xi: drawn } => OnlineBranch::Sampling {
                        xi: xi.unwrap_or(drawn),
                    },
                    s => s,
                },
            };
            let (outcome, sample) = match branch {
                OnlineBranch::Secretary => (secretary_mechanism(&inst, &bids, &order)?, None),
                OnlineBranch::Sampling { xi } => {
                    let run = sampling_mechanism(&inst, &bids, &order, xi)?;
                    let sample =
                        json!({ "revenue": run.sample_revenue, "degenerate": run.degenerate });
                    (run.outcome, Some(sample))
                }
            };
            violations = audit(&inst, &bids, &outcome);
            emit(&json!({
                "branch": branch,
                "order": order.as_slice(),
                "sample": sample,
                "revenue": outcome.revenue(&inst),
                "total_payment": outcome.total_payment(),
                "outcome": outcome,
            }))?;
        }
        Command::Oracle(cmd) => violations = oracle(cmd)?,
        Command::GenPartition { values } => println!("{}", partition_instance(&values)?.to_json()),
        Command::Experiment {
            kind,
            sweep,
            trials,
            seed,
            out,
            full_scale,
        } => {
            let mut cfg = if full_scale {
                ExperimentConfig::full(kind)
            } else {
                ExperimentConfig::desk(kind)
            };
            if let Some(s) = sweep {
                cfg.sweep = s;
            }
            cfg.trials = trials;
            cfg.seed = seed;
            let result = run_experiment(&cfg)?;
            let csv = result.to_csv();
            match out {
                Some(p) => {
                    fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?
                }
                None => print!("{csv}"),
            }
            violations = result.violations;
        }
        Command::Stream => violations = stream(io::stdin().lock(), io::stdout().lock())?,
    }
    Ok(violations)
}

fn oracle(cmd: OracleCommand) -> anyhow::Result<Vec<String>> {
    let mut violations = Vec::new();
    match cmd {
        OracleCommand::Opt { input, limit } => {
            let (inst, bids) = input.load()?;
            emit(&brute_force_opt_with(&inst, &bids, limit)?)?;
        }
        OracleCommand::Payment { input, user } => {
            let (inst, bids) = input.load()?;
            let greedy = approx_mcs(&inst, &bids)?;
            let users = match user {
                Some(u) => vec![u],
                None => greedy.winners.clone(),
            };
            let mut rows = Vec::new();
            for i in users {
                let (piecewise, _) = cal_payment(&inst, &bids, &greedy, i)?;
                let reference = payment_integral_oracle(&inst, &bids, i)?;
                if piecewise != reference {
                    violations.push(format!(
                        "user {i}: piecewise {piecewise} != oracle {reference}"
                    ));
                }
                rows.push(json!({ "user": i, "piecewise": piecewise, "oracle": reference, "equal": piecewise == reference }));
            }
            emit(&rows)?;
        }
        OracleCommand::Sweep {
            input,
            target,
            user,
            order_seed,
            xi,
        } => {
            let (inst, bids) = input.load()?;
            let n = inst.n();
            let order: Vec<usize> = ArrivalOrder::random(n, &mut stream_rng(order_seed, 0)).into();
            let target = match target {
                TargetArg::OfflineA => SweepTarget::OfflineA,
                TargetArg::OfflineB => SweepTarget::OfflineB,
                TargetArg::Secretary => SweepTarget::Secretary { order },
                TargetArg::Sampling => SweepTarget::Sampling {
                    order,
                    xi: xi.unwrap_or_else(|| binomial_half(n, &mut stream_rng(order_seed, 1))),
                },
            };
            let users: Vec<usize> = user.map_or_else(|| (0..n).collect(), |u| vec![u]);
            let grid = DeviationGrid::default();
            let mut reports = Vec::new();
            for i in users {
                if i >= n {
                    bail!("user {i} out of range (n = {n})");
                }
                let r = truthfulness_sweep(&inst, &bids, i, &target, &grid)?;
                if r.max_gain.is_positive() {
                    violations.push(format!(
                        "user {i} gains {} by bidding {:?}",
                        r.max_gain, r.best_bid
                    ));
                }
                reports.push(r);
            }
            emit(&reports)?;
        }
        OracleCommand::Analyze {
            input,
            order_seed,
            xi,
        } => {
            let (inst, bids) = input.load()?;
            let n = inst.n();
            let order = ArrivalOrder::random(n, &mut stream_rng(order_seed, 0));
            let xi = xi.unwrap_or_else(|| binomial_half(n, &mut stream_rng(order_seed, 1)));
            emit(&analyze(&inst, Some(&bids), Some((&order, xi)), None)?)?;
        }
    }
    Ok(violations)
}

#[derive(Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum Request {
    Open {
        n: usize,
        budget: Rational,
        #[serde(default = "default_mech")]
        mech: MechArg,
        xi: Option<usize>,
        #[serde(default)]
        seed: u64,
    },
    Feed(Arrival),
    Close,
}

fn default_mech() -> MechArg {
    MechArg::Secretary
}

#[derive(Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Response {
    Opened {
        n: usize,
        branch: OnlineBranch,
    },
    Decision(mcs_core::Decision),
    Closed {
        total_payment: Rational,
        remaining_budget: Rational,
    },
    Error {
        message: String,
    },
}

struct Session {
    stream: Box<dyn ArrivalStream>,
    budget: Rational,
    paid: Rational,
    fed: usize,
    n: usize,
}

/// Serves one JSON request per input line and answers with one JSON line.
/// Returns the invariant violations seen; malformed input is an error.
fn stream(input: impl BufRead, mut out: impl Write) -> anyhow::Result<Vec<String>> {
    let mut session: Option<Session> = None;
    let mut violations = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = |out: &mut dyn Write, r: &Response| -> anyhow::Result<()> {
            writeln!(out, "{}", serde_json::to_string(r)?)?;
            out.flush()?;
            Ok(())
        };
        let fail = |out: &mut dyn Write, message: String| -> anyhow::Result<Vec<String>> {
            reply(
                out,
                &Response::Error {
                    message: message.clone(),
                },
            )?;
            bail!("line {}: {message}", lineno + 1)
        };
        let req: Request = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => return fail(&mut out, format!("bad request: {e}")),
        };
        match req {
            Request::Open {
                n,
                budget,
                mech,
                xi,
                seed,
            } => {
                if !budget.is_positive() {
                    return fail(&mut out, "budget must be positive".into());
                }
                let mut rng = stream_rng(seed, 1);
                let branch = match mech {
                    MechArg::Secretary => OnlineBranch::Secretary,
                    MechArg::Sampling => OnlineBranch::Sampling {
                        xi: xi.unwrap_or_else(|| binomial_half(n, &mut rng)),
                    },
                    MechArg::Coin => OnlineBranch::draw(n, &mut rng),
                };
                let stream: Box<dyn ArrivalStream> = match branch {
                    OnlineBranch::Secretary => Box::new(SecretaryStream::open(n, budget.clone())),
                    OnlineBranch::Sampling { xi } => {
                        match SamplingStream::open(n, budget.clone(), xi) {
                            Ok(s) => Box::new(s),
                            Err(e) => return fail(&mut out, e.to_string()),
                        }
                    }
                };
                session = Some(Session {
                    stream,
                    budget,
                    paid: Rational::zero(),
                    fed: 0,
                    n,
                });
                reply(&mut out, &Response::Opened { n, branch })?;
            }
            Request::Feed(arrival) => {
                let Some(s) = session.as_mut() else {
                    return fail(&mut out, "feed before open".into());
                };
                if s.fed == s.n {
                    return fail(&mut out, format!("more than {} arrivals", s.n));
                }
                if arrival.end <= arrival.start
                    || !arrival.cost.is_positive()
                    || !arrival.value.is_positive()
                {
                    return fail(
                        &mut out,
                        format!("malformed arrival for user {}", arrival.id),
                    );
                }
                let d = s.stream.feed(&arrival);
                s.fed += 1;
                s.paid += &d.payment;
                if s.paid > s.budget {
                    violations.push(format!("payments {} exceed budget {}", s.paid, s.budget));
                }
                if !d.slots.is_empty() && d.payment < &arrival.cost * d.slots.len() {
                    violations.push(format!("user {} paid below declared cost", d.id));
                }
                reply(&mut out, &Response::Decision(d))?;
            }
            Request::Close => {
                let Some(s) = session.take() else {
                    return fail(&mut out, "close before open".into());
                };
                let remaining = &s.budget - &s.paid;
                reply(
                    &mut out,
                    &Response::Closed {
                        total_payment: s.paid,
                        remaining_budget: remaining,
                    },
                )?;
            }
        }
    }
    Ok(violations)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(v) if v.is_empty() => ExitCode::SUCCESS,
        Ok(v) => {
            for issue in &v {
                eprintln!("invariant violated: {issue}");
            }
            ExitCode::from(VIOLATION)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
