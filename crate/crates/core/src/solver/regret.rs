//! Unilateral-deviation check for policies.
//!
//! One agent deviates while everyone else keeps following the policy; other
//! agents draw from the policy's per-facility marginals independently. The
//! deviator's best response comes from single-agent backward induction in the
//! environment the others induce.

use std::collections::HashMap;

use super::exact::{convolve, mix, CountDist};
use super::policy::{StagePlay, StagePolicy};
use crate::error::Result;
use crate::network::Scenario;
use crate::scg::{AnonState, Kernel};

type Key = (Vec<u32>, usize, usize);

struct Evaluator<'a, P: StagePolicy + ?Sized> {
    s: &'a Scenario,
    kernel: Kernel<'a>,
    policy: &'a P,
    plays: HashMap<(Vec<u32>, usize), StagePlay>,
    follow: HashMap<Key, f64>,
    best: HashMap<Key, f64>,
}

impl<'a, P: StagePolicy + ?Sized> Evaluator<'a, P> {
    fn play(&mut self, counts: &[u32], t: usize) -> Result<StagePlay> {
        let key = (counts.to_vec(), t);
        if let Some(p) = self.plays.get(&key) {
            return Ok(p.clone());
        }
        let p = self.policy.stage(self.s, &AnonState::new(counts.to_vec()), t)?;
        self.plays.insert(key, p.clone());
        Ok(p)
    }

    /// Distribution of the other agents' next counts and the focal agent's
    /// per-action next-facility distributions.
    #[allow(clippy::type_complexity)]
    fn environment(&mut self, counts: &[u32], f: usize, t: usize) -> Result<(CountDist, Vec<Vec<(usize, f64)>>, Vec<f64>)> {
        let play = self.play(counts, t)?;
        let sp = self.kernel.space();
        let m = counts.len();
        let mut own = Vec::new();
        let mut own_probs = Vec::new();
        let mixed: Vec<(Vec<(usize, f64)>, u32)> = play
            .plays
            .iter()
            .map(|p| {
                let dists: Vec<Vec<(usize, f64)>> = p
                    .actions
                    .iter()
                    .map(|&a| self.kernel.transition_unchecked(sp.facility(p.facility), a, counts[p.facility]))
                    .collect();
                let c = counts[p.facility] - u32::from(p.facility == f);
                if p.facility == f {
                    own = dists.clone();
                    own_probs = p.probs.clone();
                }
                (mix(&dists, &p.probs), c)
            })
            .collect();
        let groups: Vec<(&[(usize, f64)], u32)> = mixed.iter().map(|(d, c)| (d.as_slice(), *c)).collect();
        Ok((convolve(m, &groups), own, own_probs))
    }

    /// Value to an agent at `f` when everyone follows the policy.
    fn follow(&mut self, counts: &[u32], f: usize, t: usize) -> Result<f64> {
        if t == 0 {
            return Ok(0.0);
        }
        let key = (counts.to_vec(), f, t);
        if let Some(v) = self.follow.get(&key) {
            return Ok(*v);
        }
        let (others, own, probs) = self.environment(counts, f, t)?;
        let mut v = 0.0;
        for (d, x) in own.iter().zip(&probs) {
            if *x > 0.0 {
                v += x * self.backup(&others, d, t, false)?;
            }
        }
        self.follow.insert(key, v);
        Ok(v)
    }

    /// Value of the best deviation for an agent at `f`.
    fn best(&mut self, counts: &[u32], f: usize, t: usize) -> Result<f64> {
        if t == 0 {
            return Ok(0.0);
        }
        let key = (counts.to_vec(), f, t);
        if let Some(v) = self.best.get(&key) {
            return Ok(*v);
        }
        let (others, own, _) = self.environment(counts, f, t)?;
        let mut v = f64::NEG_INFINITY;
        for d in &own {
            v = v.max(self.backup(&others, d, t, true)?);
        }
        self.best.insert(key, v);
        Ok(v)
    }

    fn backup(&mut self, others: &CountDist, own: &[(usize, f64)], t: usize, deviate: bool) -> Result<f64> {
        let mut v = 0.0;
        for (k, p) in others {
            let mut next = k.clone();
            for &(g, q) in own {
                next[g] += 1;
                let r = self.kernel.reward(g, next[g]);
                let cont = if deviate {
                    self.best(&next, g, t - 1)?
                } else {
                    self.follow(&next, g, t - 1)?
                };
                v += p * q * (r + cont);
                next[g] -= 1;
            }
        }
        Ok(v)
    }
}

/// Per-agent regret: value of the best unilateral deviation minus the value
/// of following `p`, over `horizon` steps from `start`. Agents are listed in
/// the canonical order of [`AnonState::agent_indices`].
pub fn best_response_regret<P: StagePolicy + ?Sized>(
    p: &P,
    s: &Scenario,
    horizon: usize,
    start: &AnonState,
) -> Result<Vec<f64>> {
    let mut ev = Evaluator {
        s,
        kernel: Kernel::new(s),
        policy: p,
        plays: HashMap::new(),
        follow: HashMap::new(),
        best: HashMap::new(),
    };
    let mut per_fac = HashMap::new();
    start
        .agent_indices()
        .into_iter()
        .map(|f| {
            if let Some(r) = per_fac.get(&f) {
                return Ok(*r);
            }
            let r = ev.best(start.counts(), f, horizon)? - ev.follow(start.counts(), f, horizon)?;
            per_fac.insert(f, r);
            Ok(r)
        })
        .collect()
}

/// Per-agent expected utility of following `p` for `horizon` steps, with
/// every agent drawing from the policy's marginals independently.
pub fn policy_value<P: StagePolicy + ?Sized>(
    p: &P,
    s: &Scenario,
    horizon: usize,
    start: &AnonState,
) -> Result<Vec<f64>> {
    let mut ev = Evaluator {
        s,
        kernel: Kernel::new(s),
        policy: p,
        plays: HashMap::new(),
        follow: HashMap::new(),
        best: HashMap::new(),
    };
    start
        .agent_indices()
        .into_iter()
        .map(|f| ev.follow(start.counts(), f, horizon))
        .collect()
}
