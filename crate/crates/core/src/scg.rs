//! The taxi stochastic congestion game.
//!
//! Facilities are the states of the single-taxi Markov chain: cruising in a
//! zone, delivering between two zones, or resting. A game state is anonymous:
//! only the number of agents per facility matters. One step of the game is
//! `step_minutes` long; the kernel turns per-minute rates into per-step
//! probabilities with `1 - exp(-rate * step)`.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Scenario, ZoneGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Facility {
    Cruise(usize),
    Occupied(usize, usize),
    Rest(usize),
}

impl Facility {
    pub fn is_cruise(self) -> bool {
        matches!(self, Facility::Cruise(_))
    }

    pub fn is_occupied(self) -> bool {
        matches!(self, Facility::Occupied(..))
    }
}

impl fmt::Display for Facility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Facility::Cruise(k) => write!(f, "C{k}"),
            Facility::Occupied(k, l) => write!(f, "O{k}_{l}"),
            Facility::Rest(k) => write!(f, "W{k}"),
        }
    }
}

/// Dense indexing of the facility set: `C_k` first, then `O_kl` row-major,
/// then `W_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FacilitySpace {
    n_zones: usize,
}

impl FacilitySpace {
    pub fn new(n_zones: usize) -> Self {
        FacilitySpace { n_zones }
    }

    pub fn n_zones(&self) -> usize {
        self.n_zones
    }

    pub fn len(&self) -> usize {
        self.n_zones * self.n_zones + 2 * self.n_zones
    }

    pub fn is_empty(&self) -> bool {
        self.n_zones == 0
    }

    pub fn index(&self, f: Facility) -> usize {
        let n = self.n_zones;
        match f {
            Facility::Cruise(k) => k,
            Facility::Occupied(k, l) => n + k * n + l,
            Facility::Rest(k) => n + n * n + k,
        }
    }

    pub fn facility(&self, i: usize) -> Facility {
        let n = self.n_zones;
        if i < n {
            Facility::Cruise(i)
        } else if i < n + n * n {
            let j = i - n;
            Facility::Occupied(j / n, j % n)
        } else {
            Facility::Rest(i - n - n * n)
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Facility> + '_ {
        (0..self.len()).map(|i| self.facility(i))
    }

    /// Human-readable label using zone identifiers.
    pub fn label(&self, f: Facility, g: &ZoneGraph) -> String {
        let z = g.zones();
        match f {
            Facility::Cruise(k) => format!("C[{}]", z[k]),
            Facility::Occupied(k, l) => format!("O[{}>{}]", z[k], z[l]),
            Facility::Rest(k) => format!("W[{}]", z[k]),
        }
    }
}

/// Anonymous game state: number of agents in each facility.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AnonState {
    counts: Vec<u32>,
}

impl AnonState {
    pub fn new(counts: Vec<u32>) -> Self {
        AnonState { counts }
    }

    pub fn from_agents(space: FacilitySpace, agents: &[Facility]) -> Self {
        let mut counts = vec![0; space.len()];
        for &f in agents {
            counts[space.index(f)] += 1;
        }
        AnonState { counts }
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn count(&self, i: usize) -> u32 {
        self.counts[i]
    }

    pub fn n(&self) -> u32 {
        self.counts.iter().sum()
    }

    /// Canonical agent list: facility indices ascending, one entry per agent.
    pub fn agent_indices(&self) -> Vec<usize> {
        self.counts
            .iter()
            .enumerate()
            .flat_map(|(i, &c)| std::iter::repeat_n(i, c as usize))
            .collect()
    }

    pub fn agents(&self, space: FacilitySpace) -> Vec<Facility> {
        self.agent_indices().into_iter().map(|i| space.facility(i)).collect()
    }

    /// Indices of facilities holding at least one agent.
    pub fn occupied_facilities(&self) -> impl Iterator<Item = usize> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    /// Keep cruising in the current zone.
    Stay,
    /// Attempt to move to the given adjacent zone.
    MoveTo(usize),
    /// The only action while delivering or resting.
    Continue,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Stay => write!(f, "stay"),
            Action::MoveTo(l) => write!(f, "move:{l}"),
            Action::Continue => write!(f, "continue"),
        }
    }
}

/// Legal actions at a facility, `Stay` first and moves by ascending target.
pub fn actions_at(f: Facility, g: &ZoneGraph) -> Vec<Action> {
    match f {
        Facility::Cruise(k) => std::iter::once(Action::Stay)
            .chain(g.successors(k).iter().map(|&l| Action::MoveTo(l)))
            .collect(),
        Facility::Occupied(..) | Facility::Rest(_) => vec![Action::Continue],
    }
}

fn check_legal(f: Facility, a: Action, g: &ZoneGraph) -> Result<()> {
    let ok = match (f, a) {
        (Facility::Cruise(_), Action::Stay) => true,
        (Facility::Cruise(k), Action::MoveTo(l)) => l < g.n_zones() && g.has_edge(k, l),
        (Facility::Occupied(..) | Facility::Rest(_), Action::Continue) => true,
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::IllegalAction(format!("{a} at {f}")))
    }
}

/// Per-step transition probabilities precomputed from a scenario.
#[derive(Debug, Clone)]
pub struct Kernel<'a> {
    scenario: &'a Scenario,
    space: FacilitySpace,
    stay_no_break: Vec<f64>,
    deliver: Vec<Vec<f64>>,
    rest_exit: Vec<f64>,
}

impl<'a> Kernel<'a> {
    pub fn new(s: &'a Scenario) -> Self {
        let h = s.step_minutes;
        let n = s.n_zones();
        Kernel {
            scenario: s,
            space: FacilitySpace::new(n),
            stay_no_break: s.sigma.iter().map(|r| (-r * h).exp()).collect(),
            deliver: s
                .rho
                .iter()
                .map(|row| row.iter().map(|r| -(-r * h).exp_m1()).collect())
                .collect(),
            rest_exit: s.sigma_prime.iter().map(|r| -(-r * h).exp_m1()).collect(),
        }
    }

    pub fn scenario(&self) -> &'a Scenario {
        self.scenario
    }

    pub fn space(&self) -> FacilitySpace {
        self.space
    }

    /// Probability that one of `count` cruisers in zone `k` finds a passenger
    /// this step. A count of zero is treated as a lone cruiser.
    pub fn find_prob(&self, k: usize, count: u32) -> f64 {
        let c = count.max(1) as f64;
        (self.scenario.mu[k] * self.scenario.step_minutes / c).min(1.0)
    }

    pub fn delivery_prob(&self, k: usize, l: usize) -> f64 {
        self.deliver[k][l]
    }

    pub fn rest_exit_prob(&self, k: usize) -> f64 {
        self.rest_exit[k]
    }

    pub fn break_prob(&self, k: usize) -> f64 {
        1.0 - self.stay_no_break[k]
    }

    /// Next-facility distribution (by facility index) for an agent at facility
    /// index `f` taking `a` when `count` agents share its facility. Entries
    /// with zero probability are omitted.
    pub fn transition(&self, f: usize, a: Action, count: u32) -> Result<Vec<(usize, f64)>> {
        let fac = self.space.facility(f);
        check_legal(fac, a, &self.scenario.graph)?;
        Ok(self.transition_unchecked(fac, a, count))
    }

    pub(crate) fn transition_unchecked(&self, fac: Facility, a: Action, count: u32) -> Vec<(usize, f64)> {
        let sp = self.space;
        let mut out = Vec::new();
        let push = |out: &mut Vec<(usize, f64)>, f: Facility, p: f64| {
            if p > 0.0 {
                out.push((sp.index(f), p));
            }
        };
        match (fac, a) {
            (Facility::Cruise(k), a) => {
                let p = self.find_prob(k, count);
                for (l, &g) in self.scenario.gamma[k].iter().enumerate() {
                    push(&mut out, Facility::Occupied(k, l), p * g);
                }
                match a {
                    Action::MoveTo(l) => push(&mut out, Facility::Cruise(l), 1.0 - p),
                    _ => {
                        let keep = self.stay_no_break[k];
                        push(&mut out, Facility::Cruise(k), (1.0 - p) * keep);
                        push(&mut out, Facility::Rest(k), (1.0 - p) * (1.0 - keep));
                    }
                }
            }
            (Facility::Occupied(k, l), _) => {
                let q = self.deliver[k][l];
                push(&mut out, Facility::Cruise(l), q);
                push(&mut out, Facility::Occupied(k, l), 1.0 - q);
            }
            (Facility::Rest(k), _) => {
                let q = self.rest_exit[k];
                push(&mut out, Facility::Cruise(k), q);
                push(&mut out, Facility::Rest(k), 1.0 - q);
            }
        }
        out
    }

    /// Reward to each agent in facility index `f` when `count` agents occupy it.
    pub fn reward(&self, f: usize, count: u32) -> f64 {
        match self.space.facility(f) {
            Facility::Cruise(k) => self.find_prob(k, count),
            Facility::Occupied(..) => 1.0,
            Facility::Rest(_) => 0.0,
        }
    }
}

/// Next-facility distribution for one agent; see [`Kernel::transition`].
pub fn agent_transition(
    f: Facility,
    a: Action,
    state: &AnonState,
    s: &Scenario,
) -> Result<Vec<(Facility, f64)>> {
    let k = Kernel::new(s);
    let i = k.space().index(f);
    let count = state.count(i);
    if count == 0 {
        return Err(Error::InvalidArgument(format!(
            "state has no agent at {f} to act"
        )));
    }
    Ok(k
        .transition(i, a, count)?
        .into_iter()
        .map(|(j, p)| (k.space().facility(j), p))
        .collect())
}

/// Per-facility rewards at a state.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRewards {
    pub rewards: Vec<f64>,
}

impl StageRewards {
    /// Reward of an agent at facility index `f`.
    pub fn agent_reward(&self, f: usize) -> f64 {
        self.rewards[f]
    }
}

pub fn stage_rewards(state: &AnonState, s: &Scenario) -> StageRewards {
    let k = Kernel::new(s);
    StageRewards {
        rewards: state
            .counts()
            .iter()
            .enumerate()
            .map(|(f, &c)| k.reward(f, c))
            .collect(),
    }
}

pub(crate) fn sample_index<R: Rng + ?Sized>(dist: &[(usize, f64)], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(i, p) in dist {
        acc += p;
        if u < acc {
            return i;
        }
    }
    dist.last().expect("nonempty distribution").0
}

/// Draws every agent's next facility independently from the kernel, using
/// pre-transition counts. `agents` holds facility indices and `actions` is
/// aligned with it.
pub fn sample_agents<R: Rng + ?Sized>(
    kernel: &Kernel<'_>,
    counts: &[u32],
    agents: &[usize],
    actions: &[Action],
    rng: &mut R,
) -> Result<Vec<usize>> {
    if agents.len() != actions.len() {
        return Err(Error::InvalidArgument(format!(
            "{} actions for {} agents",
            actions.len(),
            agents.len()
        )));
    }
    agents
        .iter()
        .zip(actions)
        .map(|(&f, &a)| {
            let dist = kernel.transition(f, a, counts[f])?;
            Ok(sample_index(&dist, rng))
        })
        .collect()
}

/// One joint step from an anonymous state. `joint` is aligned with
/// [`AnonState::agent_indices`].
pub fn sample_joint_transition<R: Rng + ?Sized>(
    state: &AnonState,
    joint: &[Action],
    s: &Scenario,
    rng: &mut R,
) -> Result<AnonState> {
    let kernel = Kernel::new(s);
    let agents = state.agent_indices();
    let next = sample_agents(&kernel, state.counts(), &agents, joint, rng)?;
    let mut counts = vec![0; state.counts().len()];
    for f in next {
        counts[f] += 1;
    }
    Ok(AnonState::new(counts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_dest(sigma: f64) -> Scenario {
        // zone 0 has out-edges to 1 and 2; destinations split 0.6/0.4 over 1 and 2.
        let g = ZoneGraph::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![(0, 1), (0, 2), (1, 0), (2, 0)],
        )
        .unwrap();
        let mut lambda = vec![vec![0.0; 3]; 3];
        for &(k, l) in g.edges() {
            lambda[k][l] = 0.1;
        }
        Scenario {
            graph: g,
            mu: vec![1.0, 0.5, 0.5],
            lambda,
            rho: vec![vec![0.2; 3]; 3],
            sigma: vec![sigma; 3],
            sigma_prime: vec![0.5; 3],
            gamma: vec![vec![0.0, 0.6, 0.4], vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]],
            n_taxis: 2,
            step_minutes: 1.0,
        }
    }

    fn dist_of(v: Vec<(Facility, f64)>) -> std::collections::BTreeMap<Facility, f64> {
        v.into_iter().collect()
    }

    fn state_with(space: FacilitySpace, agents: &[Facility]) -> AnonState {
        AnonState::from_agents(space, agents)
    }

    #[test]
    fn facility_index_roundtrip() {
        let sp = FacilitySpace::new(3);
        assert_eq!(sp.len(), 15);
        for i in 0..sp.len() {
            assert_eq!(sp.index(sp.facility(i)), i);
        }
    }

    #[test]
    fn action_sets() {
        let s = two_dest(0.0);
        assert_eq!(actions_at(Facility::Cruise(0), &s.graph).len(), 3);
        assert_eq!(actions_at(Facility::Occupied(0, 1), &s.graph), vec![Action::Continue]);
        let one = ZoneGraph::new(vec!["x".into()], vec![]).unwrap();
        assert_eq!(actions_at(Facility::Cruise(0), &one), vec![Action::Stay]);
    }

    #[test]
    fn stay_transition_without_breaks() {
        let s = two_dest(0.0);
        let sp = FacilitySpace::new(3);
        let st = state_with(sp, &[Facility::Cruise(0), Facility::Cruise(0)]);
        let d = dist_of(agent_transition(Facility::Cruise(0), Action::Stay, &st, &s).unwrap());
        assert_eq!(d.len(), 3);
        assert!((d[&Facility::Occupied(0, 1)] - 0.3).abs() < 1e-15);
        assert!((d[&Facility::Occupied(0, 2)] - 0.2).abs() < 1e-15);
        assert!((d[&Facility::Cruise(0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn stay_transition_with_breaks() {
        let s = two_dest(0.1);
        let sp = FacilitySpace::new(3);
        let st = state_with(sp, &[Facility::Cruise(0), Facility::Cruise(0)]);
        let d = dist_of(agent_transition(Facility::Cruise(0), Action::Stay, &st, &s).unwrap());
        let e = (-0.1f64).exp();
        assert!((d[&Facility::Cruise(0)] - 0.5 * e).abs() < 1e-15);
        assert!((d[&Facility::Rest(0)] - 0.5 * (1.0 - e)).abs() < 1e-15);
        assert!((d[&Facility::Occupied(0, 1)] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn occupied_and_move_transitions() {
        let s = two_dest(0.0);
        let sp = FacilitySpace::new(3);
        let st = state_with(sp, &[Facility::Occupied(0, 1), Facility::Cruise(0), Facility::Cruise(0)]);
        let d = dist_of(agent_transition(Facility::Occupied(0, 1), Action::Continue, &st, &s).unwrap());
        assert!((d[&Facility::Cruise(1)] - (1.0 - (-0.2f64).exp())).abs() < 1e-15);
        assert!((d[&Facility::Occupied(0, 1)] - (-0.2f64).exp()).abs() < 1e-15);
        let d = dist_of(agent_transition(Facility::Cruise(0), Action::MoveTo(1), &st, &s).unwrap());
        assert!((d[&Facility::Cruise(1)] - 0.5).abs() < 1e-15);
        assert!((d[&Facility::Occupied(0, 1)] - 0.3).abs() < 1e-15);
        assert!(!d.contains_key(&Facility::Rest(0)));
    }

    #[test]
    fn illegal_actions_rejected() {
        let s = two_dest(0.0);
        let sp = FacilitySpace::new(3);
        let st = state_with(sp, &[Facility::Cruise(1), Facility::Occupied(0, 1)]);
        assert!(matches!(
            agent_transition(Facility::Cruise(1), Action::MoveTo(2), &st, &s),
            Err(Error::IllegalAction(_))
        ));
        assert!(agent_transition(Facility::Occupied(0, 1), Action::Stay, &st, &s).is_err());
        assert!(agent_transition(Facility::Cruise(1), Action::Continue, &st, &s).is_err());
    }

    #[test]
    fn rewards() {
        let mut s = two_dest(0.0);
        s.mu[0] = 2.0;
        let sp = FacilitySpace::new(3);
        let mut counts = vec![0; sp.len()];
        counts[0] = 4;
        counts[sp.index(Facility::Occupied(1, 2))] = 1;
        counts[sp.index(Facility::Rest(2))] = 1;
        s.mu[1] = 3.0;
        counts[1] = 1;
        let r = stage_rewards(&AnonState::new(counts), &s);
        assert_eq!(r.agent_reward(0), 0.5);
        assert_eq!(r.agent_reward(1), 1.0);
        assert_eq!(r.agent_reward(sp.index(Facility::Occupied(1, 2))), 1.0);
        assert_eq!(r.agent_reward(sp.index(Facility::Rest(2))), 0.0);
    }

    #[test]
    fn absorbing_rest_without_exit() {
        let mut s = two_dest(0.0);
        s.sigma_prime = vec![0.0; 3];
        let sp = FacilitySpace::new(3);
        let st = state_with(sp, &[Facility::Rest(0), Facility::Rest(2)]);
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let next = sample_joint_transition(&st, &[Action::Continue; 2], &s, &mut rng).unwrap();
            assert_eq!(next, st);
        }
    }
}
