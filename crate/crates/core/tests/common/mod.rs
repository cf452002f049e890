//! Independent oracles. Everything here is written from the model's formulas
//! directly and shares no code with the library beyond its data types.
#![allow(dead_code)]

use std::collections::HashMap;

use fleetgame_core::scg::{Action, Facility, FacilitySpace};
use fleetgame_core::solver::{Mode, Policy, StageEntry};
use fleetgame_core::{AnonState, PiMatrix, Scenario, ZoneGraph};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Strongly connected random graph: a ring plus random chords.
pub fn random_graph(r: &mut ChaCha8Rng, n: usize) -> ZoneGraph {
    let mut edges = Vec::new();
    if n > 1 {
        for k in 0..n {
            edges.push((k, (k + 1) % n));
        }
        for k in 0..n {
            for l in 0..n {
                if k != l && (k + 1) % n != l && r.random::<f64>() < 0.4 {
                    edges.push((k, l));
                }
            }
        }
    }
    ZoneGraph::new((0..n).map(|k| format!("z{k}")).collect(), edges).unwrap()
}

/// Random valid scenario with one-minute steps.
pub fn random_scenario(seed: u64, n: usize, taxis: u32) -> Scenario {
    let mut r = rng(seed);
    let graph = random_graph(&mut r, n);
    let mut lambda = vec![vec![0.0; n]; n];
    for &(k, l) in graph.edges() {
        lambda[k][l] = r.random_range(0.05..1.0);
    }
    let mut gamma = vec![vec![0.0; n]; n];
    for row in gamma.iter_mut() {
        for g in row.iter_mut() {
            *g = r.random_range(0.05..1.0);
        }
        let t: f64 = row.iter().sum();
        row.iter_mut().for_each(|g| *g /= t);
    }
    let s = Scenario {
        graph,
        mu: (0..n).map(|_| r.random_range(0.1..2.0)).collect(),
        lambda,
        rho: (0..n).map(|_| (0..n).map(|_| r.random_range(0.05..1.0)).collect()).collect(),
        sigma: (0..n).map(|_| r.random_range(0.0..0.2)).collect(),
        sigma_prime: (0..n).map(|_| r.random_range(0.05..0.5)).collect(),
        gamma,
        n_taxis: taxis,
        step_minutes: 1.0,
    };
    s.validate().unwrap();
    s
}

pub fn random_pi(seed: u64, n: usize) -> PiMatrix {
    let mut r = rng(seed);
    PiMatrix::new((0..n).map(|_| (0..n).map(|_| r.random_range(0.01..0.5)).collect()).collect()).unwrap()
}

pub fn one_zone(mu: f64, rho: f64, sigma: f64, sigma_prime: f64) -> Scenario {
    Scenario {
        graph: ZoneGraph::new(vec!["a".into()], vec![]).unwrap(),
        mu: vec![mu],
        lambda: vec![vec![0.0]],
        rho: vec![vec![rho]],
        sigma: vec![sigma],
        sigma_prime: vec![sigma_prime],
        gamma: vec![vec![1.0]],
        n_taxis: 1,
        step_minutes: 1.0,
    }
}

// ---------------------------------------------------------------- kernel

pub fn actions(s: &Scenario, f: Facility) -> Vec<Action> {
    match f {
        Facility::Cruise(k) => {
            let mut v = vec![Action::Stay];
            for l in 0..s.n_zones() {
                if l != k && s.graph.edges().contains(&(k, l)) {
                    v.push(Action::MoveTo(l));
                }
            }
            v
        }
        _ => vec![Action::Continue],
    }
}

/// One agent's next-facility distribution; `count` agents share `f`.
pub fn transition(s: &Scenario, f: Facility, a: Action, count: u32) -> Vec<(Facility, f64)> {
    let h = s.step_minutes;
    let n = s.n_zones();
    match f {
        Facility::Cruise(k) => {
            let p = (s.mu[k] * h / f64::from(count.max(1))).min(1.0);
            let mut out: Vec<(Facility, f64)> = (0..n).map(|l| (Facility::Occupied(k, l), p * s.gamma[k][l])).collect();
            match a {
                Action::Stay => {
                    let keep = (-s.sigma[k] * h).exp();
                    out.push((Facility::Cruise(k), (1.0 - p) * keep));
                    out.push((Facility::Rest(k), (1.0 - p) * (1.0 - keep)));
                }
                Action::MoveTo(l) => out.push((Facility::Cruise(l), 1.0 - p)),
                Action::Continue => panic!("continue while cruising"),
            }
            out
        }
        Facility::Occupied(k, l) => {
            let d = 1.0 - (-s.rho[k][l] * h).exp();
            vec![(Facility::Cruise(l), d), (Facility::Occupied(k, l), 1.0 - d)]
        }
        Facility::Rest(k) => {
            let d = 1.0 - (-s.sigma_prime[k] * h).exp();
            vec![(Facility::Cruise(k), d), (Facility::Rest(k), 1.0 - d)]
        }
    }
}

pub fn reward(s: &Scenario, f: Facility, count: u32) -> f64 {
    match f {
        Facility::Cruise(k) => (s.mu[k] * s.step_minutes / f64::from(count)).min(1.0),
        Facility::Occupied(..) => 1.0,
        Facility::Rest(_) => 0.0,
    }
}

pub fn all_facilities(n: usize) -> Vec<Facility> {
    let mut v: Vec<Facility> = (0..n).map(Facility::Cruise).collect();
    for k in 0..n {
        for l in 0..n {
            v.push(Facility::Occupied(k, l));
        }
    }
    v.extend((0..n).map(Facility::Rest));
    v
}

/// Joint next-state distribution for per-agent facilities and pure actions.
pub fn joint(s: &Scenario, agents: &[Facility], acts: &[Action]) -> Vec<(Vec<Facility>, f64)> {
    let mut out = vec![(Vec::new(), 1.0)];
    for (&f, &a) in agents.iter().zip(acts) {
        let c = agents.iter().filter(|&&g| g == f).count() as u32;
        let d = transition(s, f, a, c);
        let mut next = Vec::new();
        for (prefix, p) in &out {
            for &(g, q) in &d {
                if q > 0.0 {
                    let mut v: Vec<Facility> = prefix.clone();
                    v.push(g);
                    next.push((v, p * q));
                }
            }
        }
        out = next;
    }
    out
}

pub fn rewards_at(s: &Scenario, agents: &[Facility]) -> Vec<f64> {
    agents
        .iter()
        .map(|&f| reward(s, f, agents.iter().filter(|&&g| g == f).count() as u32))
        .collect()
}

/// Every pure joint action.
pub fn joint_actions(s: &Scenario, agents: &[Facility]) -> Vec<Vec<Action>> {
    let mut out = vec![Vec::new()];
    for &f in agents {
        let a = actions(s, f);
        out = out
            .into_iter()
            .flat_map(|p: Vec<Action>| {
                a.iter().map(move |&x| {
                    let mut q = p.clone();
                    q.push(x);
                    q
                })
            })
            .collect();
    }
    out
}

pub fn anon(n: usize, agents: &[Facility]) -> AnonState {
    AnonState::from_agents(FacilitySpace::new(n), agents)
}

// ---------------------------------------------------------------- single agent

/// Optimal finite-horizon values of one taxi, indexed like `all_facilities`.
pub fn mdp_values(s: &Scenario, horizon: usize) -> Vec<Vec<f64>> {
    let facs = all_facilities(s.n_zones());
    let idx: HashMap<Facility, usize> = facs.iter().enumerate().map(|(i, &f)| (f, i)).collect();
    let mut v = vec![vec![0.0; facs.len()]];
    for t in 1..=horizon {
        let prev = &v[t - 1];
        let cur = facs
            .iter()
            .map(|&f| {
                actions(s, f)
                    .into_iter()
                    .map(|a| {
                        transition(s, f, a, 1)
                            .into_iter()
                            .map(|(g, p)| p * (reward(s, g, 1) + prev[idx[&g]]))
                            .sum::<f64>()
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        v.push(cur);
    }
    v
}

// ---------------------------------------------------------------- per-agent engine

/// Per-agent action distributions of a stored stage entry. Exact assignments
/// are dealt to agents at a facility in agent order.
pub fn agent_mixes(s: &Scenario, entry: &StageEntry, agents: &[Facility]) -> Vec<Vec<(Action, f64)>> {
    let sp = FacilitySpace::new(s.n_zones());
    let mut dealt: HashMap<usize, usize> = HashMap::new();
    agents
        .iter()
        .map(|&f| {
            let fi = sp.index(f);
            let play = entry.plays.iter().find(|p| p.facility == fi).expect("play for facility");
            match &play.counts {
                Some(c) => {
                    let k = dealt.entry(fi).or_insert(0);
                    let mut acc = 0;
                    let mut pick = None;
                    for (j, &cj) in c.iter().enumerate() {
                        acc += cj as usize;
                        if *k < acc {
                            pick = Some(j);
                            break;
                        }
                    }
                    *k += 1;
                    vec![(play.actions[pick.unwrap()], 1.0)]
                }
                None => play.actions.iter().cloned().zip(play.probs.iter().cloned()).collect(),
            }
        })
        .collect()
}

/// Per-agent evaluation of a tabulated policy over joint per-agent states.
pub struct PerAgent<'a> {
    pub s: &'a Scenario,
    pub policy: &'a Policy,
    memo: HashMap<(Vec<Facility>, usize), Vec<f64>>,
    /// Largest per-agent stage regret seen, by tier-exactness.
    pub max_stage_regret: f64,
}

impl<'a> PerAgent<'a> {
    pub fn new(s: &'a Scenario, policy: &'a Policy) -> Self {
        PerAgent {
            s,
            policy,
            memo: HashMap::new(),
            max_stage_regret: 0.0,
        }
    }

    fn q(&mut self, agents: &[Facility], acts: &[Action], t: usize) -> Vec<f64> {
        let mut q = vec![0.0; agents.len()];
        for (next, p) in joint(self.s, agents, acts) {
            let r = rewards_at(self.s, &next);
            let cont = self.values(&next, t - 1);
            for i in 0..agents.len() {
                q[i] += p * (r[i] + cont[i]);
            }
        }
        q
    }

    /// Per-agent values when everyone follows the policy, with values of
    /// agents sharing a facility averaged (dealing is uniformly random).
    pub fn values(&mut self, agents: &[Facility], t: usize) -> Vec<f64> {
        if t == 0 {
            return vec![0.0; agents.len()];
        }
        let key = (agents.to_vec(), t);
        if let Some(v) = self.memo.get(&key) {
            return v.clone();
        }
        let n = self.s.n_zones();
        let entry = self
            .policy
            .entry(&anon(n, agents), t)
            .unwrap_or_else(|| panic!("no entry for {agents:?} at t={t}"))
            .clone();
        let mixes = agent_mixes(self.s, &entry, agents);
        let all = joint_actions(self.s, agents);
        let qs: Vec<(Vec<Action>, Vec<f64>)> = all.iter().map(|a| (a.clone(), self.q(agents, a, t))).collect();
        let prob = |a: &[Action], skip: Option<usize>| -> f64 {
            a.iter()
                .enumerate()
                .filter(|(i, _)| Some(*i) != skip)
                .map(|(i, x)| mixes[i].iter().find(|(y, _)| y == x).map_or(0.0, |(_, p)| *p))
                .product()
        };
        let mut v = vec![0.0; agents.len()];
        for (a, q) in &qs {
            let p = prob(a, None);
            for i in 0..agents.len() {
                v[i] += p * q[i];
            }
        }
        if self.policy.mode == Mode::Nash {
            for i in 0..agents.len() {
                let mut best = f64::NEG_INFINITY;
                for ai in actions(self.s, agents[i]) {
                    let dev: f64 = qs.iter().filter(|(a, _)| a[i] == ai).map(|(a, q)| prob(a, Some(i)) * q[i]).sum();
                    best = best.max(dev);
                }
                self.max_stage_regret = self.max_stage_regret.max(best - v[i]);
            }
        }
        let mut avg = v.clone();
        for i in 0..agents.len() {
            let same: Vec<usize> = (0..agents.len()).filter(|&j| agents[j] == agents[i]).collect();
            avg[i] = same.iter().map(|&j| v[j]).sum::<f64>() / same.len() as f64;
        }
        self.memo.insert(key, avg.clone());
        avg
    }
}

/// Maximum total expected utility over all joint policies, by exhaustive
/// per-agent backward induction.
pub fn opt_welfare(s: &Scenario, agents: &[Facility], t: usize, memo: &mut HashMap<(Vec<Facility>, usize), f64>) -> f64 {
    if t == 0 {
        return 0.0;
    }
    if let Some(v) = memo.get(&(agents.to_vec(), t)) {
        return *v;
    }
    let mut best = f64::NEG_INFINITY;
    for a in joint_actions(s, agents) {
        let mut w = 0.0;
        for (next, p) in joint(s, agents, &a) {
            w += p * (rewards_at(s, &next).iter().sum::<f64>() + opt_welfare(s, &next, t - 1, memo));
        }
        best = best.max(w);
    }
    memo.insert((agents.to_vec(), t), best);
    best
}

// ---------------------------------------------------------------- deviations

/// Regret of each agent against a tabulated policy, with the other agents
/// drawing from the policy's per-facility marginals independently. The
/// deviator's policy tree is searched exhaustively: its choice at every
/// reachable node is free, so the search maximises branch by branch.
pub fn deviation_regret(s: &Scenario, p: &Policy, agents: &[Facility], horizon: usize) -> Vec<f64> {
    (0..agents.len())
        .map(|i| dev_value(s, p, agents, i, horizon, true) - dev_value(s, p, agents, i, horizon, false))
        .collect()
}

fn marginals(s: &Scenario, p: &Policy, agents: &[Facility], t: usize) -> Vec<Vec<(Action, f64)>> {
    let sp = FacilitySpace::new(s.n_zones());
    let e = p.entry(&anon(s.n_zones(), agents), t).expect("entry");
    agents
        .iter()
        .map(|&f| {
            let play = e.plays.iter().find(|q| q.facility == sp.index(f)).unwrap();
            play.actions.iter().cloned().zip(play.probs.iter().cloned()).collect()
        })
        .collect()
}

fn dev_value(s: &Scenario, p: &Policy, agents: &[Facility], i: usize, t: usize, deviate: bool) -> f64 {
    if t == 0 {
        return 0.0;
    }
    let mix = marginals(s, p, agents, t);
    let own: Vec<(Action, f64)> = if deviate {
        actions(s, agents[i]).into_iter().map(|a| (a, 1.0)).collect()
    } else {
        mix[i].clone()
    };
    let mut per_action = Vec::new();
    for &(ai, wi) in &own {
        let mut v = 0.0;
        for a in joint_actions(s, agents) {
            if a[i] != ai {
                continue;
            }
            let pr: f64 = (0..agents.len())
                .filter(|&j| j != i)
                .map(|j| mix[j].iter().find(|(x, _)| *x == a[j]).map_or(0.0, |(_, q)| *q))
                .product();
            if pr == 0.0 {
                continue;
            }
            for (next, q) in joint(s, agents, &a) {
                let r = rewards_at(s, &next)[i];
                v += pr * q * (r + dev_value(s, p, &next, i, t - 1, deviate));
            }
        }
        per_action.push((v, wi));
    }
    if deviate {
        per_action.iter().map(|(v, _)| *v).fold(f64::NEG_INFINITY, f64::max)
    } else {
        per_action.iter().map(|(v, w)| v * w).sum()
    }
}

// ---------------------------------------------------------------- ctmc

/// Fraction of time a single taxi spends in each facility, simulating the
/// continuous-time chain event by event.
pub fn gillespie(s: &Scenario, pi: &PiMatrix, minutes: f64, seed: u64) -> Vec<f64> {
    let n = s.n_zones();
    let facs = all_facilities(n);
    let idx: HashMap<Facility, usize> = facs.iter().enumerate().map(|(i, &f)| (f, i)).collect();
    let out: Vec<Vec<(usize, f64)>> = facs
        .iter()
        .map(|&f| match f {
            Facility::Cruise(k) => {
                let mut v: Vec<(usize, f64)> = (0..n)
                    .filter(|&l| s.graph.edges().contains(&(k, l)))
                    .map(|l| (idx[&Facility::Cruise(l)], s.lambda[k][l]))
                    .collect();
                v.extend((0..n).map(|l| (idx[&Facility::Occupied(k, l)], pi.pi[k][l])));
                v.push((idx[&Facility::Rest(k)], s.sigma[k]));
                v.into_iter().filter(|x| x.1 > 0.0).collect()
            }
            Facility::Occupied(k, l) => vec![(idx[&Facility::Cruise(l)], s.rho[k][l])],
            Facility::Rest(k) => vec![(idx[&Facility::Cruise(k)], s.sigma_prime[k])],
        })
        .collect();
    let mut r = rng(seed);
    let mut time = vec![0.0; facs.len()];
    let mut state = 0usize;
    let mut clock = 0.0;
    while clock < minutes {
        let total: f64 = out[state].iter().map(|x| x.1).sum();
        let hold = Exp::new(total).unwrap().sample(&mut r).min(minutes - clock);
        time[state] += hold;
        clock += hold;
        let mut u = r.random::<f64>() * total;
        let mut next = out[state].last().unwrap().0;
        for &(j, rate) in &out[state] {
            if u < rate {
                next = j;
                break;
            }
            u -= rate;
        }
        state = next;
    }
    time.iter().map(|t| t / minutes).collect()
}

/// Left null vector of the cruising generator from a dense SVD, normalised.
pub fn dense_phi(s: &Scenario) -> Vec<f64> {
    let n = s.n_zones();
    let mut q = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        for l in 0..n {
            if k != l {
                q[(k, l)] = s.lambda[k][l];
                q[(k, k)] -= s.lambda[k][l];
            }
        }
    }
    let svd = q.transpose().svd(false, true);
    let v_t = svd.v_t.unwrap();
    let (j, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    let v: Vec<f64> = v_t.row(j).iter().cloned().collect();
    let t: f64 = v.iter().sum();
    v.iter().map(|x| x / t).collect()
}
