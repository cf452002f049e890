//! Exact backward induction over anonymous count states.

use std::cell::RefCell;
use std::collections::HashMap;

use super::policy::{FacilityPlay, Mode, Policy, PolicyBody, StageEntry};
use super::stage::{compositions, find_nash, find_opt, welfare_pure, NashConfig, Role, StageGame};
use crate::error::{Error, Result};
use crate::network::Scenario;
use crate::scg::{actions_at, Action, Kernel};

/// Sparse distribution over next-facility count vectors.
pub(crate) type CountDist = HashMap<Vec<u32>, f64>;

/// Distribution of the next counts when, for each `(dist, copies)`, `copies`
/// agents independently move according to `dist`.
pub(crate) fn convolve(m: usize, groups: &[(&[(usize, f64)], u32)]) -> CountDist {
    let mut cur: CountDist = HashMap::new();
    cur.insert(vec![0; m], 1.0);
    for &(dist, copies) in groups {
        for _ in 0..copies {
            let mut next: CountDist = HashMap::with_capacity(cur.len() * dist.len());
            for (k, p) in &cur {
                for &(f, q) in dist {
                    let mut k2 = k.clone();
                    k2[f] += 1;
                    *next.entry(k2).or_insert(0.0) += p * q;
                }
            }
            cur = next;
        }
    }
    cur
}

/// Mixes per-action next-facility distributions by `probs`.
pub(crate) fn mix(dists: &[Vec<(usize, f64)>], probs: &[f64]) -> Vec<(usize, f64)> {
    let mut acc: Vec<(usize, f64)> = Vec::new();
    for (d, &x) in dists.iter().zip(probs) {
        if x <= 0.0 {
            continue;
        }
        for &(f, q) in d {
            match acc.iter_mut().find(|(g, _)| *g == f) {
                Some(e) => e.1 += x * q,
                None => acc.push((f, x * q)),
            }
        }
    }
    acc
}

/// Per-agent values `W_t(S, f)` for every state of one layer.
pub(crate) struct Layer<'a> {
    pub index: &'a HashMap<Vec<u32>, usize>,
    pub values: Vec<Vec<f64>>,
}

/// The backup game at one state: payoffs are the post-transition reward plus
/// the previous layer's value at the agent's next facility.
pub(crate) struct EngineGame<'a> {
    kernel: &'a Kernel<'a>,
    m: usize,
    roles: Vec<Role>,
    pub facs: Vec<usize>,
    pub actions: Vec<Vec<Action>>,
    dists: Vec<Vec<Vec<(usize, f64)>>>,
    prev: Option<&'a Layer<'a>>,
    cache: RefCell<HashMap<(usize, usize, Vec<Vec<u32>>), f64>>,
}

impl<'a> EngineGame<'a> {
    pub fn new(kernel: &'a Kernel<'a>, counts: &[u32], prev: Option<&'a Layer<'a>>) -> Self {
        let sp = kernel.space();
        let g = &kernel.scenario().graph;
        let facs: Vec<usize> = (0..counts.len()).filter(|&f| counts[f] > 0).collect();
        let actions: Vec<Vec<Action>> = facs.iter().map(|&f| actions_at(sp.facility(f), g)).collect();
        let dists = facs
            .iter()
            .zip(&actions)
            .map(|(&f, acts)| {
                acts.iter()
                    .map(|&a| kernel.transition_unchecked(sp.facility(f), a, counts[f]))
                    .collect()
            })
            .collect();
        let roles = facs
            .iter()
            .zip(&actions)
            .map(|(&f, a)| Role {
                agents: counts[f],
                n_actions: a.len(),
            })
            .collect();
        EngineGame {
            kernel,
            m: counts.len(),
            roles,
            facs,
            actions,
            dists,
            prev,
            cache: RefCell::new(HashMap::new()),
        }
    }

    fn successor_value(&self, f: usize, next: &[u32]) -> f64 {
        let r = self.kernel.reward(f, next[f]);
        match self.prev {
            Some(layer) => r + layer.values[layer.index[next]][f],
            None => r,
        }
    }

    /// Expected payoff of each own action against a distribution of the
    /// other agents' next counts.
    fn against(&self, role: usize, others: &CountDist) -> Vec<f64> {
        let mut next = vec![0u32; self.m];
        self.dists[role]
            .iter()
            .map(|d| {
                let mut v = 0.0;
                for (k, p) in others {
                    next.copy_from_slice(k);
                    for &(f, q) in d {
                        next[f] += 1;
                        v += p * q * self.successor_value(f, &next);
                        next[f] -= 1;
                    }
                }
                v
            })
            .collect()
    }
}

impl StageGame for EngineGame<'_> {
    fn roles(&self) -> &[Role] {
        &self.roles
    }

    fn payoff_pure(&self, role: usize, action: usize, others: &[Vec<u32>]) -> f64 {
        let key = (role, action, others.to_vec());
        if let Some(v) = self.cache.borrow().get(&key) {
            return *v;
        }
        let groups: Vec<(&[(usize, f64)], u32)> = others
            .iter()
            .enumerate()
            .flat_map(|(q, k)| k.iter().enumerate().map(move |(b, &c)| (q, b, c)))
            .filter(|&(_, _, c)| c > 0)
            .map(|(q, b, c)| (self.dists[q][b].as_slice(), c))
            .collect();
        let dist = convolve(self.m, &groups);
        let u = self.against(role, &dist);
        let mut cache = self.cache.borrow_mut();
        for (a, v) in u.iter().enumerate() {
            cache.insert((role, a, others.to_vec()), *v);
        }
        u[action]
    }

    fn payoff_mixed(&self, role: usize, profile: &[Vec<f64>]) -> Vec<f64> {
        let mixed: Vec<Vec<(usize, f64)>> = self
            .dists
            .iter()
            .zip(profile)
            .map(|(d, x)| mix(d, x))
            .collect();
        let groups: Vec<(&[(usize, f64)], u32)> = self
            .roles
            .iter()
            .enumerate()
            .map(|(q, r)| (mixed[q].as_slice(), r.agents - u32::from(q == role)))
            .collect();
        self.against(role, &convolve(self.m, &groups))
    }
}

/// All count vectors with `n` agents over `m` facilities.
pub(crate) fn enumerate_states(n: u32, m: usize) -> Vec<Vec<u32>> {
    compositions(n, m)
}

/// Solves one state's backup game. Returns the facility plays (with values),
/// the stage regret and the tier.
pub(crate) fn solve_state(
    game: &EngineGame<'_>,
    mode: Mode,
    nash: &NashConfig,
) -> Result<(Vec<FacilityPlay>, f64, Option<super::stage::Tier>)> {
    match mode {
        Mode::Nash => {
            let sol = find_nash(game, nash)?;
            let plays = (0..game.facs.len())
                .map(|r| {
                    let u = game.payoff_mixed(r, &sol.profile);
                    let v = u.iter().zip(&sol.profile[r]).map(|(a, b)| a * b).sum();
                    FacilityPlay {
                        facility: game.facs[r],
                        actions: game.actions[r].clone(),
                        probs: sol.profile[r].clone(),
                        counts: None,
                        value: Some(v),
                    }
                })
                .collect();
            Ok((plays, sol.regret, Some(sol.tier)))
        }
        Mode::Opt => {
            let sol = find_opt(game);
            let marg = sol.marginals();
            let mut others = sol.counts.clone();
            let plays = (0..game.facs.len())
                .map(|r| {
                    let c = game.roles()[r].agents;
                    let mut total = 0.0;
                    for a in 0..sol.counts[r].len() {
                        let k = sol.counts[r][a];
                        if k > 0 {
                            others[r][a] -= 1;
                            total += f64::from(k) * game.payoff_pure(r, a, &others);
                            others[r][a] += 1;
                        }
                    }
                    FacilityPlay {
                        facility: game.facs[r],
                        actions: game.actions[r].clone(),
                        probs: marg[r].clone(),
                        counts: Some(sol.counts[r].clone()),
                        value: Some(total / f64::from(c)),
                    }
                })
                .collect();
            debug_assert!((welfare_pure(game, &sol.counts) - sol.welfare).abs() < 1e-9);
            Ok((plays, 0.0, None))
        }
        Mode::Greedy => Err(Error::InvalidArgument(
            "value iteration needs mode nash or opt".into(),
        )),
    }
}

/// Backward induction over every count state for `t = 1..=horizon`.
pub(crate) fn value_iteration_exact(s: &Scenario, horizon: usize, mode: Mode, nash: &NashConfig) -> Result<Policy> {
    let kernel = Kernel::new(s);
    let m = kernel.space().len();
    let states = enumerate_states(s.n_taxis, m);
    let index: HashMap<Vec<u32>, usize> = states.iter().cloned().enumerate().map(|(i, k)| (k, i)).collect();
    let mut entries = Vec::with_capacity(states.len() * horizon);
    let mut prev: Option<Layer<'_>> = None;
    for t in 1..=horizon {
        let mut values = vec![vec![0.0; m]; states.len()];
        for (i, counts) in states.iter().enumerate() {
            let game = EngineGame::new(&kernel, counts, prev.as_ref());
            let (plays, regret, tier) = solve_state(&game, mode, nash)?;
            for p in &plays {
                values[i][p.facility] = p.value.expect("solver sets values");
            }
            entries.push(StageEntry {
                t,
                counts: counts.clone(),
                plays,
                regret,
                tier,
            });
        }
        prev = Some(Layer { index: &index, values });
    }
    Ok(Policy::new(mode, horizon, s.n_zones(), PolicyBody::Table { entries }))
}
