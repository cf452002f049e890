//! Minute-by-minute fleet simulation with per-zone FIFO passenger queues.
//!
//! Each step, in order: passengers arrive (Poisson per zone); queued
//! passengers are matched head-first to uniformly random cruising taxis in
//! their zone; unmatched cruisers follow the policy; taxis that were delivering
//! at the start of the step finish with probability `1 - exp(-ρh)`; taxis that
//! were resting return with probability `1 - exp(-σ'h)`. The policy is
//! consulted on the state at the start of the step.
//!
//! Streams: replication `r` draws arrivals from `derive_seed(seed, r, 1)` and
//! everything else from `derive_seed(seed, r, 2)`, so different policies see
//! identical passengers and replication `r` does not depend on how many
//! replications run.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Scenario;
use crate::rng::derive_seed;
use crate::scg::{actions_at, sample_index, Action, AnonState, Facility, FacilitySpace, Kernel};
use crate::solver::{Mode, Policy, PolicyBody, StagePlay, StagePolicy, ZoneStrategy};

/// Minutes per reporting interval of the zone series.
pub const SERIES_INTERVAL: usize = 30;

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub scenario: Scenario,
    /// Simulated minutes.
    pub horizon: usize,
    pub policy: Policy,
    pub seed: u64,
    pub replications: usize,
    /// Record every event.
    pub event_log: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Arrival,
    Pickup,
    Dropoff,
    Move,
    BreakStart,
    BreakEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub minute: usize,
    pub zone: usize,
    pub kind: EventKind,
    pub taxi: Option<usize>,
    /// Passenger id for arrivals and pickups.
    pub passenger: Option<u64>,
    /// Queue length in `zone` after the event.
    pub queue_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneInterval {
    pub zone: usize,
    pub interval: usize,
    pub trips: u64,
    /// Mean number of cruising taxis in the zone over the interval's minutes.
    pub cruising_taxis: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub replication: usize,
    pub cruising_minutes: f64,
    pub occupied_minutes: f64,
    pub rest_minutes: f64,
    pub trips_served: u64,
    pub arrivals: u64,
    /// Mean queueing time of served passengers, minutes.
    pub mean_wait: f64,
    /// Passengers still queued at the end.
    pub unserved: u64,
    /// Cruising taxi-minutes per reporting interval.
    pub cruising_by_interval: Vec<f64>,
    pub zone_series: Vec<ZoneInterval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events: Option<Vec<Event>>,
}

/// Policy of drivers following the cruising chain: from `C_k`, move to `l`
/// with probability `(1 - exp(-Λ_k h)) λ_kl / Λ_k`, otherwise stay.
pub fn greedy_baseline(s: &Scenario) -> Policy {
    let h = s.step_minutes;
    let zones = (0..s.n_zones())
        .map(|k| {
            let actions = actions_at(Facility::Cruise(k), &s.graph);
            let total = s.lambda_out(k);
            let go = -(-total * h).exp_m1();
            let probs = actions
                .iter()
                .map(|a| match a {
                    Action::MoveTo(l) if total > 0.0 => go * s.lambda[k][*l] / total,
                    Action::MoveTo(_) => 0.0,
                    _ => 1.0 - go,
                })
                .collect();
            ZoneStrategy { actions, probs }
        })
        .collect();
    Policy::new(Mode::Greedy, 1, s.n_zones(), PolicyBody::Stationary { zones })
}

fn check(cfg: &SimConfig) -> Result<usize> {
    cfg.scenario.validate()?;
    if cfg.horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be >= 1".into()));
    }
    if cfg.replications == 0 {
        return Err(Error::InvalidArgument("replications must be >= 1".into()));
    }
    if cfg.scenario.n_taxis == 0 {
        return Err(Error::InvalidArgument("simulation needs at least one taxi".into()));
    }
    let h = cfg.scenario.step_minutes;
    let steps = cfg.horizon as f64 / h;
    if (steps - steps.round()).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "horizon {} is not a multiple of the step {h}",
            cfg.horizon
        )));
    }
    Ok(steps.round() as usize)
}

/// Runs every replication.
pub fn simulate(cfg: &SimConfig) -> Result<Vec<SimMetrics>> {
    check(cfg)?;
    (0..cfg.replications).map(|r| simulate_replication(cfg, r)).collect()
}

/// Runs replication `rep` alone.
pub fn simulate_replication(cfg: &SimConfig, rep: usize) -> Result<SimMetrics> {
    let steps = check(cfg)?;
    let s = &cfg.scenario;
    let h = s.step_minutes;
    let n = s.n_zones();
    let sp = FacilitySpace::new(n);
    let kernel = Kernel::new(s);
    let mut arr_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, rep as u64, 1));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, rep as u64, 2));
    let poisson: Vec<Option<Poisson<f64>>> = s
        .mu
        .iter()
        .map(|&m| (m * h > 0.0).then(|| Poisson::new(m * h).expect("positive rate")))
        .collect();
    let lookahead = cfg.policy.horizon.max(1);

    let mut taxis: Vec<Facility> = (0..s.n_taxis as usize).map(|i| Facility::Cruise(i % n)).collect();
    let mut queues: Vec<VecDeque<(u64, usize)>> = vec![VecDeque::new(); n];
    let mut next_passenger = 0u64;
    let n_intervals = (cfg.horizon).div_ceil(SERIES_INTERVAL);
    let mut trips_iv = vec![vec![0u64; n_intervals]; n];
    let mut cruise_iv = vec![vec![0.0f64; n_intervals]; n];
    let mut minutes_iv = vec![0.0f64; n_intervals];
    let mut cruising_by_interval = vec![0.0f64; n_intervals];
    let (mut cruising, mut occupied, mut rest) = (0.0, 0.0, 0.0);
    let (mut trips, mut wait_total) = (0u64, 0.0f64);
    let mut events = cfg.event_log.then(Vec::new);
    let mut hint: Option<StagePlay> = None;
    let log = |events: &mut Option<Vec<Event>>, e: Event| {
        if let Some(v) = events {
            v.push(e);
        }
    };

    for step in 0..steps {
        let minute = (step as f64 * h) as usize;
        let iv = (minute / SERIES_INTERVAL).min(n_intervals - 1);
        minutes_iv[iv] += h;

        let counts = {
            let mut c = vec![0u32; sp.len()];
            for &f in &taxis {
                c[sp.index(f)] += 1;
            }
            c
        };
        for (f, &c) in counts.iter().enumerate() {
            let m = f64::from(c) * h;
            match sp.facility(f) {
                Facility::Cruise(k) => {
                    cruising += m;
                    cruising_by_interval[iv] += m;
                    cruise_iv[k][iv] += m;
                }
                Facility::Occupied(..) => occupied += m,
                Facility::Rest(_) => rest += m,
            }
        }
        let state = AnonState::new(counts);
        let play = if state.counts()[..n].iter().any(|&c| c > 0) {
            Some(cfg.policy.stage_hinted(s, &state, lookahead, hint.as_ref())?)
        } else {
            None
        };

        // 1. arrivals
        for k in 0..n {
            if let Some(p) = &poisson[k] {
                let a = p.sample(&mut arr_rng) as u64;
                for _ in 0..a {
                    queues[k].push_back((next_passenger, minute));
                    log(&mut events, Event {
                        minute,
                        zone: k,
                        kind: EventKind::Arrival,
                        taxi: None,
                        passenger: Some(next_passenger),
                        queue_len: queues[k].len(),
                    });
                    next_passenger += 1;
                }
            }
        }

        // 2. matching
        let start = taxis.clone();
        let mut idle: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, f) in start.iter().enumerate() {
            if let Facility::Cruise(k) = f {
                idle[*k].push(i);
            }
        }
        let mut matched = vec![false; taxis.len()];
        for k in 0..n {
            while !queues[k].is_empty() && !idle[k].is_empty() {
                let (pid, t_arr) = queues[k].pop_front().expect("nonempty");
                let j = rng.random_range(0..idle[k].len());
                let taxi = idle[k].swap_remove(j);
                let dest: Vec<(usize, f64)> = s.gamma[k].iter().cloned().enumerate().collect();
                let l = sample_index(&dest, &mut rng);
                taxis[taxi] = Facility::Occupied(k, l);
                matched[taxi] = true;
                trips += 1;
                trips_iv[k][iv] += 1;
                wait_total += (minute - t_arr) as f64;
                log(&mut events, Event {
                    minute,
                    zone: k,
                    kind: EventKind::Pickup,
                    taxi: Some(taxi),
                    passenger: Some(pid),
                    queue_len: queues[k].len(),
                });
            }
        }

        // 3. policy moves and breaks for unmatched cruisers
        if let Some(play) = &play {
            let facs: Vec<usize> = start.iter().map(|&f| sp.index(f)).collect();
            let cruisers: Vec<usize> = (0..taxis.len()).filter(|&i| start[i].is_cruise()).collect();
            let cf: Vec<usize> = cruisers.iter().map(|&i| facs[i]).collect();
            let actions = play.sample_actions(&cf, &mut rng)?;
            for (&i, a) in cruisers.iter().zip(actions) {
                if matched[i] {
                    continue;
                }
                let Facility::Cruise(k) = start[i] else { unreachable!() };
                match a {
                    Action::MoveTo(l) => {
                        taxis[i] = Facility::Cruise(l);
                        log(&mut events, Event {
                            minute,
                            zone: l,
                            kind: EventKind::Move,
                            taxi: Some(i),
                            passenger: None,
                            queue_len: queues[l].len(),
                        });
                    }
                    Action::Stay => {
                        if rng.random::<f64>() < kernel.break_prob(k) {
                            taxis[i] = Facility::Rest(k);
                            log(&mut events, Event {
                                minute,
                                zone: k,
                                kind: EventKind::BreakStart,
                                taxi: Some(i),
                                passenger: None,
                                queue_len: queues[k].len(),
                            });
                        }
                    }
                    Action::Continue => {
                        return Err(Error::IllegalAction(format!("continue at {}", start[i])));
                    }
                }
            }
            hint = Some(play.clone());
        }

        // 4-5. deliveries and returns for taxis busy at the start of the step
        for (i, &f) in start.iter().enumerate() {
            match f {
                Facility::Occupied(k, l) => {
                    if rng.random::<f64>() < kernel.delivery_prob(k, l) {
                        taxis[i] = Facility::Cruise(l);
                        log(&mut events, Event {
                            minute,
                            zone: l,
                            kind: EventKind::Dropoff,
                            taxi: Some(i),
                            passenger: None,
                            queue_len: queues[l].len(),
                        });
                    }
                }
                Facility::Rest(k) => {
                    if rng.random::<f64>() < kernel.rest_exit_prob(k) {
                        taxis[i] = Facility::Cruise(k);
                        log(&mut events, Event {
                            minute,
                            zone: k,
                            kind: EventKind::BreakEnd,
                            taxi: Some(i),
                            passenger: None,
                            queue_len: queues[k].len(),
                        });
                    }
                }
                Facility::Cruise(_) => {}
            }
        }
    }

    let zone_series = (0..n)
        .flat_map(|k| {
            let trips_iv = &trips_iv;
            let cruise_iv = &cruise_iv;
            let minutes_iv = &minutes_iv;
            (0..n_intervals).map(move |i| ZoneInterval {
                zone: k,
                interval: i,
                trips: trips_iv[k][i],
                cruising_taxis: if minutes_iv[i] > 0.0 { cruise_iv[k][i] / minutes_iv[i] } else { 0.0 },
            })
        })
        .collect();
    Ok(SimMetrics {
        replication: rep,
        cruising_minutes: cruising,
        occupied_minutes: occupied,
        rest_minutes: rest,
        trips_served: trips,
        arrivals: next_passenger,
        mean_wait: if trips > 0 { wait_total / trips as f64 } else { 0.0 },
        unserved: queues.iter().map(|q| q.len() as u64).sum(),
        cruising_by_interval,
        zone_series,
        events,
    })
}

/// Mean and standard error of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub stderr: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Stat {
        let k = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / k;
        let stderr = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
        } else {
            0.0
        };
        Stat { mean, stderr }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: String,
    pub cruising_minutes: Stat,
    pub trips_served: Stat,
    pub mean_wait: Stat,
    pub runs: Vec<SimMetrics>,
}

/// Paired difference `a - b` of a metric over common-seed replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDiff {
    pub a: String,
    pub b: String,
    pub metric: String,
    pub diff: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub horizon: usize,
    pub replications: usize,
    pub seed: u64,
    pub policies: Vec<PolicySummary>,
    pub paired: Vec<PairedDiff>,
}

fn metric(m: &SimMetrics, name: &str) -> f64 {
    match name {
        "cruising_minutes" => m.cruising_minutes,
        "trips_served" => m.trips_served as f64,
        "mean_wait" => m.mean_wait,
        _ => unreachable!("unknown metric"),
    }
}

/// Runs every named policy over the same replication seeds and reports
/// per-policy statistics and all pairwise paired differences.
pub fn compare_policies(
    s: &Scenario,
    horizon: usize,
    reps: usize,
    seed: u64,
    policies: &[(String, Policy)],
) -> Result<ComparisonReport> {
    if reps < 2 {
        return Err(Error::InvalidArgument("compare needs at least 2 replications".into()));
    }
    let mut summaries = Vec::new();
    for (name, p) in policies {
        let cfg = SimConfig {
            scenario: s.clone(),
            horizon,
            policy: p.clone(),
            seed,
            replications: reps,
            event_log: false,
        };
        let runs = simulate(&cfg)?;
        let col = |k: &str| Stat::of(&runs.iter().map(|m| metric(m, k)).collect::<Vec<_>>());
        summaries.push(PolicySummary {
            policy: name.clone(),
            cruising_minutes: col("cruising_minutes"),
            trips_served: col("trips_served"),
            mean_wait: col("mean_wait"),
            runs,
        });
    }
    let mut paired = Vec::new();
    for i in 0..summaries.len() {
        for j in i + 1..summaries.len() {
            for name in ["cruising_minutes", "trips_served", "mean_wait"] {
                let d: Vec<f64> = summaries[i]
                    .runs
                    .iter()
                    .zip(&summaries[j].runs)
                    .map(|(a, b)| metric(a, name) - metric(b, name))
                    .collect();
                paired.push(PairedDiff {
                    a: summaries[i].policy.clone(),
                    b: summaries[j].policy.clone(),
                    metric: name.into(),
                    diff: Stat::of(&d),
                });
            }
        }
    }
    Ok(ComparisonReport {
        horizon,
        replications: reps,
        seed,
        policies: summaries,
        paired,
    })
}

/// Greedy, equilibrium and optimal policies compared over common seeds. The
/// equilibrium and optimal policies replan every step with `lookahead` steps.
pub fn compare(
    s: &Scenario,
    horizon: usize,
    reps: usize,
    seed: u64,
    lookahead: usize,
    solver: &crate::solver::SolverConfig,
) -> Result<ComparisonReport> {
    let nash = crate::solver::value_iteration(s, lookahead, Mode::Nash, solver)?;
    let opt = crate::solver::value_iteration(s, lookahead, Mode::Opt, solver)?;
    compare_policies(
        s,
        horizon,
        reps,
        seed,
        &[
            ("greedy".into(), greedy_baseline(s)),
            ("nash".into(), nash),
            ("opt".into(), opt),
        ],
    )
}
