//! Online lookahead planner for fleets too large to tabulate.
//!
//! At a state, only cruising agents choose; delivering and resting agents are
//! fixed groups. The chance that another agent lands in cruise zone `g` is
//! independent across agents, so the number `X` of other arrivals is a sum of
//! binomials and the expected pickup reward `E[min(1, μh / (1 + X))]` has the
//! closed form `μh ∫_0^1 E[(1 - w)^X] dw` minus a short correction for the
//! clamp, with `E[(1 - w)^X] = Π (1 - q w)^c`.
//!
//! With `t > 1` steps to go, the next states are sampled `width` times from the
//! myopic solution, each is solved with `t - 1` steps, and the per-facility
//! values are averaged into a continuation that the root game is re-solved
//! with.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::policy::{FacilityPlay, Mode, StagePlay};
use super::stage::{find_nash_from, IterMethod, NashConfig, Role, StageGame};
use crate::error::{Error, Result};
use crate::network::Scenario;
use crate::rng::derive_seed;
use crate::scg::{actions_at, sample_agents, Action, AnonState, Facility, Kernel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Sampled next states per expanded node.
    pub width: usize,
    pub seed: u64,
    /// Regret target for the equilibrium iteration.
    pub eps: f64,
    pub max_iter: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            width: 64,
            seed: 0,
            eps: 1e-3,
            max_iter: 2000,
        }
    }
}

const GL8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_3, 0.101_228_536_290_376_3),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_5),
    (-0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_5),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_3),
];

/// Quadrature nodes on `[0, 1]` for an integrand bounded by `exp(-mean w)`:
/// geometric panels `[0, 1/mean], [1/mean, 2/mean], ...` cut at `64/mean`.
fn nodes(mean: f64) -> Vec<(f64, f64)> {
    let mut brk = vec![0.0];
    if mean <= 1.0 {
        brk.extend([0.5, 1.0]);
    } else {
        let mut b = 1.0 / mean;
        loop {
            let e = b.min(1.0);
            brk.push(e);
            if e >= 1.0 || b * mean >= 64.0 {
                break;
            }
            b *= 2.0;
        }
    }
    let mut out = Vec::with_capacity(8 * (brk.len() - 1));
    for w in brk.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        for &(x, wt) in &GL8 {
            out.push((mid + half * x, half * wt));
        }
    }
    out
}

/// Independent arrivals into one cruise zone: `c` agents each landing with
/// probability `q`.
#[derive(Debug, Clone, Copy)]
struct Group {
    q: f64,
    c: u32,
}

/// Head `P(X = 0..len)` of a sum of binomials.
fn head_pmf(groups: &[Group], len: usize) -> Vec<f64> {
    let mut pmf = vec![0.0; len];
    if len == 0 {
        return pmf;
    }
    pmf[0] = 1.0;
    let mut b = vec![0.0; len];
    for g in groups {
        if g.c == 0 || g.q <= 0.0 {
            continue;
        }
        b.iter_mut().for_each(|x| *x = 0.0);
        let top = (g.c as usize).min(len - 1);
        if g.q >= 1.0 {
            if (g.c as usize) < len {
                b[g.c as usize] = 1.0;
            }
        } else {
            let mut p = (1.0 - g.q).powi(g.c as i32);
            let ratio = g.q / (1.0 - g.q);
            for (i, slot) in b.iter_mut().enumerate().take(top + 1) {
                *slot = p;
                p *= f64::from(g.c - i as u32) / (i as f64 + 1.0) * ratio;
            }
        }
        // In place, highest index first.
        for i in (0..len).rev() {
            let mut acc = 0.0;
            for j in 0..=i.min(top) {
                acc += pmf[i - j] * b[j];
            }
            pmf[i] = acc;
        }
    }
    pmf
}

/// Arrivals into cruise zone `g` with the integrand precomputed at the nodes.
struct Landing {
    mh: f64,
    groups: Vec<Group>,
    nodes: Vec<(f64, f64)>,
    /// `E[(1 - w)^X] = Π (1 - q w)^c` at each node.
    phi: Vec<f64>,
}

impl Landing {
    fn new(mh: f64, groups: Vec<Group>) -> Self {
        let mean: f64 = groups.iter().map(|g| g.q * f64::from(g.c)).sum();
        let nodes = if mh > 0.0 { nodes(mean) } else { Vec::new() };
        let phi = nodes
            .iter()
            .map(|&(w, _)| groups.iter().map(|g| (1.0 - g.q * w).powi(g.c as i32)).product())
            .collect();
        Landing { mh, groups, nodes, phi }
    }

    /// `E[min(1, μh / (1 + X))]`, with one agent of group `excl` removed from `X`.
    fn reward(&self, excl: Option<usize>) -> f64 {
        if self.mh <= 0.0 {
            return 0.0;
        }
        let qx = excl.map_or(0.0, |i| self.groups[i].q);
        let inv: f64 = self
            .nodes
            .iter()
            .zip(&self.phi)
            .map(|(&(w, wt), &ph)| wt * ph / (1.0 - qx * w))
            .sum();
        let mut v = self.mh * inv;
        // Clamp correction over the i with i + 1 < μh.
        let len = (self.mh - 1.0).ceil().max(0.0) as usize;
        if len > 0 {
            let groups = self.excluded(excl);
            let pmf = head_pmf(&groups, len);
            for (i, p) in pmf.iter().enumerate() {
                let ratio = self.mh / (i as f64 + 1.0);
                if ratio > 1.0 {
                    v -= p * (ratio - 1.0);
                }
            }
        }
        v
    }

    fn excluded(&self, excl: Option<usize>) -> Vec<Group> {
        let mut g = self.groups.clone();
        if let Some(i) = excl {
            g[i].c = g[i].c.saturating_sub(1);
        }
        g
    }

    /// `E[min(N, μh)]` for the total number `N` of arrivals: expected pickups.
    #[cfg(test)]
    fn expected_pickups(&self) -> f64 {
        expected_pickups(self.mh, &self.groups)
    }
}

fn expected_pickups(mh: f64, groups: &[Group]) -> f64 {
    if mh <= 0.0 {
        return 0.0;
    }
    let pmf = head_pmf(groups, mh.ceil() as usize);
    mh - pmf
        .iter()
        .enumerate()
        .map(|(i, p)| (mh - i as f64).max(0.0) * p)
        .sum::<f64>()
}

/// How the cruising roles currently play.
#[derive(Debug, Clone)]
enum Play {
    Mixed(Vec<Vec<f64>>),
    Counts(Vec<Vec<u32>>),
}

/// Where a landing group comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Source {
    Role(usize, Option<usize>),
    Fixed(usize),
}

/// The one-step game among cruising agents at a state, with a per-facility
/// continuation value added to every outcome.
pub(crate) struct KernelGame<'a> {
    kernel: &'a Kernel<'a>,
    counts: &'a [u32],
    cont: &'a [f64],
    roles: Vec<Role>,
    zones: Vec<usize>,
    actions: Vec<Vec<Action>>,
    /// Per role and action: cruise landings `(zone, prob)`.
    land: Vec<Vec<Vec<(usize, f64)>>>,
    /// Per role and action: expected reward plus continuation from non-cruise
    /// outcomes, plus continuation at cruise outcomes.
    lin: Vec<Vec<f64>>,
    /// Fixed arrivals per target zone `(source facility, prob, count)`.
    fixed: Vec<Vec<(usize, f64, u32)>>,
    /// Roles able to land in each zone.
    reach: Vec<Vec<usize>>,
}

impl<'a> KernelGame<'a> {
    pub fn new(kernel: &'a Kernel<'a>, counts: &'a [u32], cont: &'a [f64]) -> Self {
        let sp = kernel.space();
        let n = sp.n_zones();
        let g = &kernel.scenario().graph;
        let zones: Vec<usize> = (0..n).filter(|&k| counts[sp.index(Facility::Cruise(k))] > 0).collect();
        let mut roles = Vec::new();
        let mut actions = Vec::new();
        let mut land = Vec::new();
        let mut lin = Vec::new();
        let mut reach = vec![Vec::new(); n];
        for (r, &k) in zones.iter().enumerate() {
            let f = Facility::Cruise(k);
            let acts = actions_at(f, g);
            let c = counts[sp.index(f)];
            let (l, li) = Self::outcome_split(kernel, cont, f, &acts, c);
            for row in &l {
                for &(z, _) in row {
                    if !reach[z].contains(&r) {
                        reach[z].push(r);
                    }
                }
            }
            roles.push(Role {
                agents: c,
                n_actions: acts.len(),
            });
            actions.push(acts);
            land.push(l);
            lin.push(li);
        }
        let mut fixed = vec![Vec::new(); n];
        for f in 0..counts.len() {
            if counts[f] == 0 {
                continue;
            }
            match sp.facility(f) {
                Facility::Occupied(k, l) => {
                    let q = kernel.delivery_prob(k, l);
                    if q > 0.0 {
                        fixed[l].push((f, q, counts[f]));
                    }
                }
                Facility::Rest(k) => {
                    let q = kernel.rest_exit_prob(k);
                    if q > 0.0 {
                        fixed[k].push((f, q, counts[f]));
                    }
                }
                Facility::Cruise(_) => {}
            }
        }
        KernelGame {
            kernel,
            counts,
            cont,
            roles,
            zones,
            actions,
            land,
            lin,
            fixed,
            reach,
        }
    }

    /// Splits each action's outcomes into cruise landings and a linear part.
    #[allow(clippy::type_complexity)]
    fn outcome_split(
        kernel: &Kernel<'_>,
        cont: &[f64],
        f: Facility,
        acts: &[Action],
        count: u32,
    ) -> (Vec<Vec<(usize, f64)>>, Vec<f64>) {
        let sp = kernel.space();
        let mut land = Vec::new();
        let mut lin = Vec::new();
        for &a in acts {
            let mut l = Vec::new();
            let mut v = 0.0;
            for (j, p) in kernel.transition_unchecked(f, a, count) {
                v += p * cont[j];
                match sp.facility(j) {
                    Facility::Cruise(z) => l.push((z, p)),
                    Facility::Occupied(..) => v += p,
                    Facility::Rest(_) => {}
                }
            }
            land.push(l);
            lin.push(v);
        }
        (land, lin)
    }

    fn landing(&self, z: usize, play: &Play) -> (Landing, Vec<Source>) {
        let mut groups = Vec::new();
        let mut src = Vec::new();
        for &(f, q, c) in &self.fixed[z] {
            groups.push(Group { q, c });
            src.push(Source::Fixed(f));
        }
        for &r in &self.reach[z] {
            let q_of = |a: usize| self.land[r][a].iter().find(|(y, _)| *y == z).map_or(0.0, |e| e.1);
            match play {
                Play::Mixed(x) => {
                    let q: f64 = (0..self.roles[r].n_actions).map(|a| x[r][a] * q_of(a)).sum();
                    if q > 0.0 {
                        groups.push(Group { q, c: self.roles[r].agents });
                        src.push(Source::Role(r, None));
                    }
                }
                Play::Counts(k) => {
                    for a in 0..self.roles[r].n_actions {
                        let q = q_of(a);
                        if q > 0.0 && k[r][a] > 0 {
                            groups.push(Group { q, c: k[r][a] });
                            src.push(Source::Role(r, Some(a)));
                        }
                    }
                }
            }
        }
        let mh = self.kernel.scenario().mu[z] * self.kernel.scenario().step_minutes;
        (Landing::new(mh, groups), src)
    }

    /// Payoff of each action for a cruising agent whose own group in each
    /// zone's landing is identified by `own`.
    fn action_payoffs(
        &self,
        land: &[Vec<(usize, f64)>],
        lin: &[f64],
        landings: &[Option<(Landing, Vec<Source>)>],
        own: impl Fn(&[Source]) -> Option<usize>,
    ) -> Vec<f64> {
        let mut cache: Vec<Option<f64>> = vec![None; landings.len()];
        land.iter()
            .zip(lin)
            .map(|(l, &base)| {
                base + l
                    .iter()
                    .map(|&(z, p)| {
                        let e = *cache[z].get_or_insert_with(|| {
                            let (ld, src) = landings[z].as_ref().expect("landing prepared");
                            ld.reward(own(src))
                        });
                        p * e
                    })
                    .sum::<f64>()
            })
            .collect()
    }

    fn all_landings(&self, play: &Play) -> Vec<Option<(Landing, Vec<Source>)>> {
        let n = self.kernel.space().n_zones();
        (0..n).map(|z| Some(self.landing(z, play))).collect()
    }

    /// Per-facility values `W(F)` of one agent at every facility under `play`.
    fn facility_values(&self, play: &Play) -> Vec<f64> {
        let sp = self.kernel.space();
        let landings = self.all_landings(play);
        let zone_reward = |z: usize, excl: Option<Source>| -> f64 {
            let (ld, src) = landings[z].as_ref().unwrap();
            ld.reward(excl.and_then(|e| src.iter().position(|s| *s == e)))
        };
        let mut out = vec![0.0; sp.len()];
        let mut role_of = vec![None; sp.n_zones()];
        for (r, &k) in self.zones.iter().enumerate() {
            role_of[k] = Some(r);
        }
        for (f, slot) in out.iter_mut().enumerate() {
            *slot = match sp.facility(f) {
                Facility::Cruise(k) => match role_of[k] {
                    Some(r) => match play {
                        Play::Mixed(x) => {
                            let u = self.action_payoffs(&self.land[r], &self.lin[r], &landings, |src| {
                                src.iter().position(|s| *s == Source::Role(r, None))
                            });
                            u.iter().zip(&x[r]).map(|(a, b)| a * b).sum()
                        }
                        Play::Counts(k) => {
                            let c = f64::from(self.roles[r].agents);
                            (0..self.roles[r].n_actions)
                                .filter(|&a| k[r][a] > 0)
                                .map(|a| {
                                    let u = self.action_payoffs(
                                        &self.land[r][a..=a],
                                        &self.lin[r][a..=a],
                                        &landings,
                                        |src| src.iter().position(|s| *s == Source::Role(r, Some(a))),
                                    );
                                    f64::from(k[r][a]) * u[0] / c
                                })
                                .sum()
                        }
                    },
                    None => {
                        let acts = actions_at(Facility::Cruise(k), &self.kernel.scenario().graph);
                        let (l, li) = Self::outcome_split(self.kernel, self.cont, Facility::Cruise(k), &acts, 1);
                        self.action_payoffs(&l, &li, &landings, |_| None)
                            .into_iter()
                            .fold(f64::NEG_INFINITY, f64::max)
                    }
                },
                Facility::Occupied(k, l) => {
                    let q = self.kernel.delivery_prob(k, l);
                    let me = (self.counts[f] > 0).then_some(Source::Fixed(f));
                    let back = if q > 0.0 {
                        zone_reward(l, me) + self.cont[sp.index(Facility::Cruise(l))]
                    } else {
                        0.0
                    };
                    (1.0 - q) * (1.0 + self.cont[f]) + q * back
                }
                Facility::Rest(k) => {
                    let q = self.kernel.rest_exit_prob(k);
                    let me = (self.counts[f] > 0).then_some(Source::Fixed(f));
                    let back = if q > 0.0 {
                        zone_reward(k, me) + self.cont[sp.index(Facility::Cruise(k))]
                    } else {
                        0.0
                    };
                    (1.0 - q) * self.cont[f] + q * back
                }
            };
        }
        out
    }

    /// Expected pickups in zone `z` under a deterministic assignment. Arriving
    /// delivering and resting agents count too. Continuations are linear and
    /// live in `lin`.
    fn zone_welfare(&self, counts: &[Vec<u32>], z: usize) -> f64 {
        self.zone_welfare_with(counts, None, z)
    }

    /// As `zone_welfare` with role `r`'s counts replaced.
    fn zone_welfare_with(&self, counts: &[Vec<u32>], over: Option<(usize, &[u32])>, z: usize) -> f64 {
        let mut groups: Vec<Group> = self.fixed[z].iter().map(|&(_, q, c)| Group { q, c }).collect();
        for &r in &self.reach[z] {
            let k = match over {
                Some((o, k)) if o == r => k,
                _ => &counts[r][..],
            };
            for (a, &c) in k.iter().enumerate() {
                if c > 0 {
                    if let Some(&(_, q)) = self.land[r][a].iter().find(|(y, _)| *y == z) {
                        groups.push(Group { q, c });
                    }
                }
            }
        }
        let s = self.kernel.scenario();
        expected_pickups(s.mu[z] * s.step_minutes, &groups)
    }

    fn linear_welfare(&self, counts: &[Vec<u32>]) -> f64 {
        counts
            .iter()
            .zip(&self.lin)
            .map(|(k, l)| k.iter().zip(l).map(|(&c, v)| f64::from(c) * v).sum::<f64>())
            .sum()
    }

    /// Greedy improvement over deterministic assignments, moving agents in
    /// doubling batches along the best single-agent direction.
    fn optimise(&self, start: Vec<Vec<u32>>) -> Vec<Vec<u32>> {
        let n = self.kernel.space().n_zones();
        let mut counts = start;
        let mut zw: Vec<f64> = (0..n).map(|z| self.zone_welfare(&counts, z)).collect();
        let role_targets: Vec<Vec<usize>> = (0..self.roles.len())
            .map(|r| {
                let mut t: Vec<usize> = self.land[r].iter().flatten().map(|e| e.0).collect();
                t.sort_unstable();
                t.dedup();
                t
            })
            .collect();
        let delta = |counts: &[Vec<u32>], zw: &[f64], r: usize, a: usize, b: usize, d: u32| -> (f64, Vec<(usize, f64)>) {
            let mut kr = counts[r].clone();
            kr[a] -= d;
            kr[b] += d;
            let mut gain = f64::from(d) * (self.lin[r][b] - self.lin[r][a]);
            let mut upd = Vec::new();
            for &z in &role_targets[r] {
                let w = self.zone_welfare_with(counts, Some((r, &kr)), z);
                gain += w - zw[z];
                upd.push((z, w));
            }
            (gain, upd)
        };
        // Single-agent move gains per role, dropped when a zone they touch changes.
        type Gains = Vec<(usize, usize, f64, Vec<(usize, f64)>)>;
        let mut cache: Vec<Option<Gains>> = vec![None; self.roles.len()];
        for _ in 0..100_000 {
            let mut best: Option<(f64, usize, usize, usize, Vec<(usize, f64)>)> = None;
            for r in 0..self.roles.len() {
                if cache[r].is_none() {
                    let mut v = Vec::new();
                    for a in 0..self.roles[r].n_actions {
                        if counts[r][a] == 0 {
                            continue;
                        }
                        for b in 0..self.roles[r].n_actions {
                            if a != b {
                                let (g, upd) = delta(&counts, &zw, r, a, b, 1);
                                v.push((a, b, g, upd));
                            }
                        }
                    }
                    cache[r] = Some(v);
                }
                for (a, b, g, upd) in cache[r].as_ref().expect("filled") {
                    if *g > 1e-12 && best.as_ref().is_none_or(|x| *g > x.0) {
                        best = Some((*g, r, *a, *b, upd.clone()));
                    }
                }
            }
            let Some((mut g, r, a, b, mut upd)) = best else {
                break;
            };
            let mut d = 1;
            while d * 2 <= counts[r][a] {
                let (g2, upd2) = delta(&counts, &zw, r, a, b, d * 2);
                if g2 > g + 1e-12 {
                    d *= 2;
                    g = g2;
                    upd = upd2;
                } else {
                    break;
                }
            }
            counts[r][a] -= d;
            counts[r][b] += d;
            for (z, w) in upd {
                zw[z] = w;
            }
            for (r2, c) in cache.iter_mut().enumerate() {
                if r2 == r || role_targets[r2].iter().any(|z| role_targets[r].contains(z)) {
                    *c = None;
                }
            }
        }
        counts
    }
}

impl StageGame for KernelGame<'_> {
    fn roles(&self) -> &[Role] {
        &self.roles
    }

    fn payoff_pure(&self, role: usize, action: usize, others: &[Vec<u32>]) -> f64 {
        let landings = self.all_landings(&Play::Counts(others.to_vec()));
        self.action_payoffs(&self.land[role][action..=action], &self.lin[role][action..=action], &landings, |_| None)[0]
    }

    fn payoff_mixed(&self, role: usize, profile: &[Vec<f64>]) -> Vec<f64> {
        self.payoffs_all(profile).swap_remove(role)
    }

    fn payoffs_all(&self, profile: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let landings = self.all_landings(&Play::Mixed(profile.to_vec()));
        (0..self.roles.len())
            .map(|r| {
                self.action_payoffs(&self.land[r], &self.lin[r], &landings, |src| {
                    src.iter().position(|s| *s == Source::Role(r, None))
                })
            })
            .collect()
    }

    fn welfare_counts(&self, counts: &[Vec<u32>]) -> f64 {
        let n = self.kernel.space().n_zones();
        self.linear_welfare(counts) + (0..n).map(|z| self.zone_welfare(counts, z)).sum::<f64>()
    }
}

/// Online planner bound to one scenario.
pub struct Planner<'a> {
    s: &'a Scenario,
    kernel: Kernel<'a>,
    mode: Mode,
    cfg: PlannerConfig,
}

impl<'a> Planner<'a> {
    pub fn new(s: &'a Scenario, mode: Mode, cfg: PlannerConfig) -> Result<Self> {
        if mode == Mode::Greedy {
            return Err(Error::InvalidArgument("planner needs mode nash or opt".into()));
        }
        if cfg.width == 0 {
            return Err(Error::InvalidArgument("width must be >= 1".into()));
        }
        Ok(Planner {
            s,
            kernel: Kernel::new(s),
            mode,
            cfg,
        })
    }

    /// Stage profile at `state` with `t` steps to go. `hint` (usually the
    /// previous minute's play) seeds the iterative solvers.
    pub fn plan(&self, state: &AnonState, t: usize, hint: Option<&StagePlay>) -> Result<StagePlay> {
        if t == 0 {
            return Ok(StagePlay::uniform(self.s, state));
        }
        let key = state
            .counts()
            .iter()
            .fold(0u64, |h, &c| derive_seed(h, u64::from(c), 0));
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, key, t as u64));
        Ok(self.node(state.counts(), t, hint, &mut rng)?.0)
    }

    fn nash_cfg(&self, warm: bool) -> NashConfig {
        NashConfig {
            eps_iterative: self.cfg.eps,
            max_iter: self.cfg.max_iter,
            pure_limit: 0,
            damping_offset: if warm { 8.0 } else { 0.0 },
            accept_unconverged: true,
            method: IterMethod::Projection,
            ..NashConfig::default()
        }
    }

    fn init_from(&self, game: &KernelGame<'_>, hint: Option<&StagePlay>) -> Option<Play> {
        let hint = hint?;
        let sp = self.kernel.space();
        match self.mode {
            Mode::Nash => Some(Play::Mixed(
                game.zones
                    .iter()
                    .zip(&game.actions)
                    .map(|(&k, acts)| match hint.get(sp.index(Facility::Cruise(k))) {
                        Some(p) if p.actions == *acts => p.probs.clone(),
                        _ => vec![1.0 / acts.len() as f64; acts.len()],
                    })
                    .collect(),
            )),
            _ => Some(Play::Counts(
                game.zones
                    .iter()
                    .zip(&game.actions)
                    .zip(&game.roles)
                    .map(|((&k, acts), role)| {
                        let probs = match hint.get(sp.index(Facility::Cruise(k))) {
                            Some(p) if p.actions == *acts => p.probs.clone(),
                            _ => {
                                let mut v = vec![0.0; acts.len()];
                                v[0] = 1.0;
                                v
                            }
                        };
                        apportion(role.agents, &probs)
                    })
                    .collect(),
            )),
        }
    }

    fn solve(&self, game: &KernelGame<'_>, init: Option<Play>) -> Result<(Play, f64)> {
        match self.mode {
            Mode::Nash => {
                let warm = match &init {
                    Some(Play::Mixed(x)) => Some(x.clone()),
                    _ => None,
                };
                let sol = find_nash_from(game, &self.nash_cfg(warm.is_some()), warm.as_deref())?;
                Ok((Play::Mixed(sol.profile), sol.regret))
            }
            _ => {
                let start = match init {
                    Some(Play::Counts(k)) => k,
                    _ => game
                        .roles
                        .iter()
                        .map(|r| {
                            let mut v = vec![0; r.n_actions];
                            v[0] = r.agents;
                            v
                        })
                        .collect(),
                };
                Ok((Play::Counts(game.optimise(start)), 0.0))
            }
        }
    }

    fn to_stage_play(&self, game: &KernelGame<'_>, counts: &[u32], play: &Play, values: &[f64]) -> StagePlay {
        let sp = self.kernel.space();
        let mut plays = Vec::new();
        let mut role_of = vec![None; sp.n_zones()];
        for (r, &k) in game.zones.iter().enumerate() {
            role_of[k] = Some(r);
        }
        for f in 0..counts.len() {
            if counts[f] == 0 {
                continue;
            }
            let fp = match sp.facility(f) {
                Facility::Cruise(k) => {
                    let r = role_of[k].expect("cruise facility with agents has a role");
                    let (probs, cnt) = match play {
                        Play::Mixed(x) => (x[r].clone(), None),
                        Play::Counts(c) => {
                            let tot = f64::from(game.roles[r].agents);
                            (c[r].iter().map(|&v| f64::from(v) / tot).collect(), Some(c[r].clone()))
                        }
                    };
                    FacilityPlay {
                        facility: f,
                        actions: game.actions[r].clone(),
                        probs,
                        counts: cnt,
                        value: Some(values[f]),
                    }
                }
                _ => FacilityPlay {
                    facility: f,
                    actions: vec![Action::Continue],
                    probs: vec![1.0],
                    counts: None,
                    value: Some(values[f]),
                },
            };
            plays.push(fp);
        }
        StagePlay { plays }
    }

    #[allow(clippy::type_complexity)]
    fn node(&self, counts: &[u32], t: usize, hint: Option<&StagePlay>, rng: &mut ChaCha8Rng) -> Result<(StagePlay, Vec<f64>)> {
        let m = counts.len();
        let zero = vec![0.0; m];
        let myopic_game = KernelGame::new(&self.kernel, counts, &zero);
        let (myopic, _) = self.solve(&myopic_game, self.init_from(&myopic_game, hint))?;
        if t == 1 {
            let values = myopic_game.facility_values(&myopic);
            return Ok((self.to_stage_play(&myopic_game, counts, &myopic, &values), values));
        }
        let myopic_play = self.to_stage_play(&myopic_game, counts, &myopic, &zero);
        let agents = AnonState::new(counts.to_vec()).agent_indices();
        let mut cont = vec![0.0; m];
        for _ in 0..self.cfg.width {
            let actions = myopic_play.sample_actions(&agents, rng)?;
            let next = sample_agents(&self.kernel, counts, &agents, &actions, rng)?;
            let mut nc = vec![0u32; m];
            for f in next {
                nc[f] += 1;
            }
            let mut child = ChaCha8Rng::seed_from_u64(rng.next_u64());
            let (_, w) = self.node(&nc, t - 1, Some(&myopic_play), &mut child)?;
            for (c, v) in cont.iter_mut().zip(w) {
                *c += v;
            }
        }
        cont.iter_mut().for_each(|c| *c /= self.cfg.width as f64);
        let game = KernelGame::new(&self.kernel, counts, &cont);
        let (play, _) = self.solve(&game, Some(myopic))?;
        let values = game.facility_values(&play);
        Ok((self.to_stage_play(&game, counts, &play, &values), values))
    }
}

/// Integer split of `total` proportional to `probs` by largest remainders.
fn apportion(total: u32, probs: &[f64]) -> Vec<u32> {
    let raw: Vec<f64> = probs.iter().map(|p| p * f64::from(total)).collect();
    let mut out: Vec<u32> = raw.iter().map(|v| v.floor() as u32).collect();
    let mut left = total - out.iter().sum::<u32>();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    for i in order {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out
}
