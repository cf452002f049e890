//! The `fleetgame` command line: scenario generation, chain and policy
//! solving, simulation and policy comparison. Every run writes its artifacts
//! and a replayable `manifest.json` into `--out-dir`.

pub mod artifacts;
pub mod error;
pub mod series;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fleetgame_core::ctmc::{cruising_stationary, queue_find_rates, stationary_distribution, system_efficiency};
use fleetgame_core::network::{generate_synthetic, load_scenario};
use fleetgame_core::simulator::{compare_policies, greedy_baseline, simulate, ComparisonReport, SimConfig};
use fleetgame_core::solver::{best_response_regret, PlannerConfig, PolicyBody};
use fleetgame_core::{value_iteration, AnonState, Facility, FacilitySpace, Mode, Policy, Scenario, SolverConfig};
use serde::{Deserialize, Serialize};

use artifacts::{csv_bytes, Artifacts, RunManifest};
use error::CliError;
use series::{emit_series, metrics_rows, SeriesKind};

#[derive(Debug, Parser)]
#[command(name = "fleetgame", version, about = "Taxi fleet cruising models, game solvers and simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic scenario.
    Synth(SynthArgs),
    /// Stationary distributions, find rates and efficiency of the single-taxi chain.
    SolveCtmc(CtmcArgs),
    /// Finite-horizon equilibrium or optimal policy, with a regret report.
    SolvePolicy(PolicyArgs),
    /// Simulate a policy and emit metrics and series.
    Simulate(SimulateArgs),
    /// Greedy, equilibrium and optimal policies over common seeds.
    Compare(CompareArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct Output {
    /// Directory for artifacts and the manifest.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub zones: usize,
    #[arg(long)]
    pub taxis: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Demand scale: total arrivals are 0.03 x intensity x taxis per minute.
    #[arg(long, default_value_t = 1.0)]
    pub intensity: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub output: Output,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CtmcArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub output: Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMode {
    Nash,
    Opt,
}

impl From<SolveMode> for Mode {
    fn from(m: SolveMode) -> Mode {
        match m {
            SolveMode::Nash => Mode::Nash,
            SolveMode::Opt => Mode::Opt,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SolverArgs {
    /// Most (state, step) backups done exactly before planning online.
    #[arg(long, default_value_t = 1_000_000)]
    pub budget: u64,
    /// Fail instead of planning online when the exact budget is exceeded.
    #[arg(long)]
    pub exact_only: bool,
    /// Sampled next states per node of the online planner.
    #[arg(long, default_value_t = 2)]
    pub width: usize,
    #[arg(long, default_value_t = 0)]
    pub planner_seed: u64,
    /// Iteration cap of the equilibrium solvers.
    #[arg(long, default_value_t = 100_000)]
    pub max_iter: usize,
}

impl SolverArgs {
    fn config(&self) -> Result<SolverConfig, CliError> {
        if self.width == 0 {
            return Err(CliError::Invalid("--width must be >= 1".into()));
        }
        let mut cfg = SolverConfig::default();
        cfg.nash.max_iter = self.max_iter;
        Ok(SolverConfig {
            budget: u128::from(self.budget),
            sampling: (!self.exact_only).then(|| PlannerConfig {
                width: self.width,
                seed: self.planner_seed,
                max_iter: self.max_iter.min(PlannerConfig::default().max_iter),
                ..PlannerConfig::default()
            }),
            nash: cfg.nash,
        })
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PolicyArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, value_enum)]
    pub mode: SolveMode,
    #[arg(long)]
    pub horizon: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub output: Output,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// `greedy` or a policy JSON file.
    #[arg(long)]
    pub policy: String,
    /// Simulated minutes.
    #[arg(long, default_value_t = 1440)]
    pub horizon: usize,
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write every event to events.csv.
    #[arg(long)]
    pub events: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub output: Output,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CompareArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value_t = 1440)]
    pub horizon: usize,
    #[arg(long, default_value_t = 30)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Look-ahead steps of the replanning policies.
    #[arg(long, default_value_t = 2)]
    pub lookahead: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub output: Output,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub output: Output,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::SolveCtmc(_) => "solve-ctmc",
            Command::SolvePolicy(_) => "solve-policy",
            Command::Simulate(_) => "simulate",
            Command::Compare(_) => "compare",
            Command::Replay(_) => "replay",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Command::Synth(a) => Some(a.seed),
            Command::Simulate(a) => Some(a.seed),
            Command::Compare(a) => Some(a.seed),
            Command::SolvePolicy(a) => Some(a.solver.planner_seed),
            _ => None,
        }
    }

    fn out_dir_mut(&mut self) -> &mut PathBuf {
        match self {
            Command::Synth(a) => &mut a.output.out_dir,
            Command::SolveCtmc(a) => &mut a.output.out_dir,
            Command::SolvePolicy(a) => &mut a.output.out_dir,
            Command::Simulate(a) => &mut a.output.out_dir,
            Command::Compare(a) => &mut a.output.out_dir,
            Command::Replay(a) => &mut a.output.out_dir,
        }
    }
}

/// Runs a command, writing its artifacts and manifest. Returns the manifest
/// and a short human-readable summary.
pub fn run(cmd: &Command) -> Result<(RunManifest, String), CliError> {
    let started = Instant::now();
    if let Command::Replay(a) = cmd {
        let mut inner = RunManifest::load(&a.manifest)?.config;
        if matches!(inner, Command::Replay(_)) {
            return Err(CliError::Invalid("a replay manifest cannot be replayed".into()));
        }
        *inner.out_dir_mut() = a.output.out_dir.clone();
        return run(&inner);
    }
    let mut art = Artifacts::default();
    let (summary, out_dir) = match cmd {
        Command::Synth(a) => (synth(a, &mut art)?, &a.output.out_dir),
        Command::SolveCtmc(a) => (solve_ctmc(a, &mut art)?, &a.output.out_dir),
        Command::SolvePolicy(a) => (solve_policy(a, &mut art)?, &a.output.out_dir),
        Command::Simulate(a) => (run_simulate(a, &mut art)?, &a.output.out_dir),
        Command::Compare(a) => (run_compare(a, &mut art)?, &a.output.out_dir),
        Command::Replay(_) => unreachable!("handled above"),
    };
    let manifest = art.commit(out_dir, cmd, started)?;
    Ok((manifest, summary))
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serialisable");
    s.push('\n');
    s.into_bytes()
}

fn synth(a: &SynthArgs, art: &mut Artifacts) -> Result<String, CliError> {
    let s = generate_synthetic(a.zones, a.taxis, a.seed, a.intensity)?;
    art.add("scenario.json", s.to_json() + "\n");
    Ok(format!("scenario: {} zones, {} taxis, {} edges", s.n_zones(), s.n_taxis, s.graph.edges().len()))
}

#[derive(Serialize)]
struct Labelled {
    facility: String,
    probability: f64,
}

#[derive(Serialize)]
struct CtmcReport {
    zones: Vec<String>,
    theta: Vec<Labelled>,
    phi: Vec<f64>,
    pi_k: Vec<f64>,
    pi: Vec<Vec<f64>>,
    efficiency: f64,
}

fn solve_ctmc(a: &CtmcArgs, art: &mut Artifacts) -> Result<String, CliError> {
    let s = load_scenario(&a.scenario)?;
    let phi = cruising_stationary(&s)?;
    let rates = queue_find_rates(&s, &phi)?;
    let pi = rates.split(&s.gamma);
    let theta = stationary_distribution(&s, &pi)?;
    let efficiency = system_efficiency(&theta);
    let sp = FacilitySpace::new(s.n_zones());
    let report = CtmcReport {
        zones: s.graph.zones().to_vec(),
        theta: sp
            .iter()
            .map(|f| Labelled {
                facility: sp.label(f, &s.graph),
                probability: theta.theta[sp.index(f)],
            })
            .collect(),
        phi: phi.phi,
        pi_k: rates.pi_k,
        pi: pi.pi,
        efficiency,
    };
    art.add("ctmc.json", json(&report));
    Ok(format!("efficiency {efficiency:.6}"))
}

/// Taxis spread round-robin over the cruising facilities.
fn spread_start(s: &Scenario) -> AnonState {
    let n = s.n_zones();
    let agents: Vec<Facility> = (0..s.n_taxis as usize).map(|i| Facility::Cruise(i % n)).collect();
    AnonState::from_agents(FacilitySpace::new(n), &agents)
}

#[derive(Serialize)]
struct RegretReport {
    start: Vec<u32>,
    horizon: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    per_agent: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_regret: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    skipped: Option<String>,
}

fn solve_policy(a: &PolicyArgs, art: &mut Artifacts) -> Result<String, CliError> {
    let s = load_scenario(&a.scenario)?;
    let p = value_iteration(&s, a.horizon, a.mode.into(), &a.solver.config()?)?;
    let start = spread_start(&s);
    let report = if matches!(p.body, PolicyBody::Online { .. }) {
        RegretReport {
            start: start.counts().to_vec(),
            horizon: a.horizon,
            per_agent: None,
            max_regret: None,
            skipped: Some("state space exceeds the exact budget; the policy plans online".into()),
        }
    } else {
        let r = best_response_regret(&p, &s, a.horizon, &start)?;
        let max = r.iter().cloned().fold(0.0, f64::max);
        RegretReport {
            start: start.counts().to_vec(),
            horizon: a.horizon,
            per_agent: Some(r),
            max_regret: Some(max),
            skipped: None,
        }
    };
    let summary = match report.max_regret {
        Some(m) => format!("{} policy, horizon {}, max regret {m:.3e}", p.mode, p.horizon),
        None => format!("{} policy, horizon {}, online", p.mode, p.horizon),
    };
    art.add("policy.json", p.to_json() + "\n");
    art.add("regret.json", json(&report));
    Ok(summary)
}

fn load_policy(spec: &str, s: &Scenario) -> Result<Policy, CliError> {
    if spec == "greedy" {
        return Ok(greedy_baseline(s));
    }
    let p = Policy::load(Path::new(spec))?;
    if p.n_zones != s.n_zones() {
        return Err(CliError::Invalid(format!(
            "policy built for {} zones, scenario has {}",
            p.n_zones,
            s.n_zones()
        )));
    }
    Ok(p)
}

#[derive(Serialize)]
struct EventRow {
    replication: usize,
    minute: usize,
    zone: String,
    kind: fleetgame_core::simulator::EventKind,
    taxi: Option<usize>,
    passenger: Option<u64>,
    queue_len: usize,
}

fn run_simulate(a: &SimulateArgs, art: &mut Artifacts) -> Result<String, CliError> {
    let s = load_scenario(&a.scenario)?;
    let policy = load_policy(&a.policy, &s)?;
    let name = if a.policy == "greedy" { "greedy".to_string() } else { policy.mode.to_string() };
    let cfg = SimConfig {
        scenario: s.clone(),
        horizon: a.horizon,
        policy,
        seed: a.seed,
        replications: a.reps,
        event_log: a.events,
    };
    let mut runs = simulate(&cfg)?;
    let zones = s.graph.zones();
    if a.events {
        let rows: Vec<EventRow> = runs
            .iter()
            .flat_map(|m| {
                m.events.iter().flatten().map(move |e| EventRow {
                    replication: m.replication,
                    minute: e.minute,
                    zone: zones[e.zone].clone(),
                    kind: e.kind,
                    taxi: e.taxi,
                    passenger: e.passenger,
                    queue_len: e.queue_len,
                })
            })
            .collect();
        art.add("events.csv", csv_bytes(&rows));
        runs.iter_mut().for_each(|m| m.events = None);
    }
    art.add("metrics.csv", csv_bytes(&metrics_rows(&name, &runs)));
    let by_policy = vec![(name, runs)];
    art.add("cruising.csv", emit_series(&by_policy, SeriesKind::Cruising, zones));
    art.add("zone_series.csv", emit_series(&by_policy, SeriesKind::ZoneSeries, zones));
    let runs = &by_policy[0].1;
    let mean = runs.iter().map(|m| m.cruising_minutes).sum::<f64>() / runs.len() as f64;
    Ok(format!("{} replication(s), mean cruising {mean:.1} taxi-minutes", runs.len()))
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    policy: &'a str,
    metric: &'a str,
    mean: f64,
    stderr: f64,
}

#[derive(Serialize)]
struct PairedRow<'a> {
    a: &'a str,
    b: &'a str,
    metric: &'a str,
    mean_diff: f64,
    stderr: f64,
}

fn run_compare(a: &CompareArgs, art: &mut Artifacts) -> Result<String, CliError> {
    let s = load_scenario(&a.scenario)?;
    let solver = a.solver.config()?;
    let nash = value_iteration(&s, a.lookahead, Mode::Nash, &solver)?;
    let opt = value_iteration(&s, a.lookahead, Mode::Opt, &solver)?;
    let policies = [
        ("greedy".to_string(), greedy_baseline(&s)),
        ("nash".to_string(), nash),
        ("opt".to_string(), opt),
    ];
    let report = compare_policies(&s, a.horizon, a.reps, a.seed, &policies)?;
    write_comparison(&report, s.graph.zones(), art);

    let mut lines = Vec::new();
    for p in &report.policies {
        lines.push(format!(
            "{:<6} cruising {:.1} ± {:.1} taxi-minutes",
            p.policy, p.cruising_minutes.mean, p.cruising_minutes.stderr
        ));
    }
    Ok(lines.join("\n"))
}

fn write_comparison(report: &ComparisonReport, zones: &[String], art: &mut Artifacts) {
    let mut summary = Vec::new();
    for p in &report.policies {
        for (metric, st) in [
            ("cruising_minutes", p.cruising_minutes),
            ("trips_served", p.trips_served),
            ("mean_wait", p.mean_wait),
        ] {
            summary.push(SummaryRow {
                policy: &p.policy,
                metric,
                mean: st.mean,
                stderr: st.stderr,
            });
        }
    }
    art.add("summary.csv", csv_bytes(&summary));
    let paired: Vec<PairedRow> = report
        .paired
        .iter()
        .map(|d| PairedRow {
            a: &d.a,
            b: &d.b,
            metric: &d.metric,
            mean_diff: d.diff.mean,
            stderr: d.diff.stderr,
        })
        .collect();
    art.add("paired.csv", csv_bytes(&paired));
    let metrics: Vec<_> = report.policies.iter().flat_map(|p| metrics_rows(&p.policy, &p.runs)).collect();
    art.add("metrics.csv", csv_bytes(&metrics));
    let by_policy: Vec<_> = report.policies.iter().map(|p| (p.policy.clone(), p.runs.clone())).collect();
    art.add("cruising.csv", emit_series(&by_policy, SeriesKind::Cruising, zones));
    art.add("zone_series.csv", emit_series(&by_policy, SeriesKind::ZoneSeries, zones));
}
