//! Policies: what every agent plays, given its facility, the anonymous state
//! and the number of remaining steps.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::planner::{Planner, PlannerConfig};
use super::stage::Tier;
use crate::error::{Error, Result};
use crate::network::Scenario;
use crate::scg::{actions_at, sample_index, Action, AnonState, FacilitySpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Nash,
    Opt,
    Greedy,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Nash => "nash",
            Mode::Opt => "opt",
            Mode::Greedy => "greedy",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nash" => Ok(Mode::Nash),
            "opt" => Ok(Mode::Opt),
            "greedy" => Ok(Mode::Greedy),
            _ => Err(Error::InvalidArgument(format!("unknown mode {s:?}"))),
        }
    }
}

/// Play of all agents sharing one facility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacilityPlay {
    pub facility: usize,
    pub actions: Vec<Action>,
    /// Mixed strategy each agent draws from independently, or the marginal
    /// frequencies when `counts` is set.
    pub probs: Vec<f64>,
    /// Exact number of agents assigned to each action.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<Vec<u32>>,
    /// Expected remaining utility of one agent at this facility.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

/// Stage profile: one entry per facility holding agents, ascending by facility.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StagePlay {
    pub plays: Vec<FacilityPlay>,
}

impl StagePlay {
    /// Every agent mixes uniformly over its legal actions.
    pub fn uniform(s: &Scenario, state: &AnonState) -> Self {
        let sp = FacilitySpace::new(s.n_zones());
        StagePlay {
            plays: state
                .occupied_facilities()
                .map(|f| {
                    let actions = actions_at(sp.facility(f), &s.graph);
                    let n = actions.len();
                    FacilityPlay {
                        facility: f,
                        actions,
                        probs: vec![1.0 / n as f64; n],
                        counts: None,
                        value: Some(0.0),
                    }
                })
                .collect(),
        }
    }

    pub fn get(&self, facility: usize) -> Option<&FacilityPlay> {
        self.plays
            .binary_search_by_key(&facility, |p| p.facility)
            .ok()
            .map(|i| &self.plays[i])
    }

    /// Draws one action per agent. `agents` lists each agent's facility index.
    /// Exact assignments are dealt out in random order; mixed strategies are
    /// sampled independently per agent.
    pub fn sample_actions<R: Rng + ?Sized>(&self, agents: &[usize], rng: &mut R) -> Result<Vec<Action>> {
        let mut by_fac: HashMap<usize, Vec<usize>> = HashMap::new();
        for (i, &f) in agents.iter().enumerate() {
            by_fac.entry(f).or_default().push(i);
        }
        let mut facs: Vec<_> = by_fac.into_iter().collect();
        facs.sort_unstable_by_key(|(f, _)| *f);
        let mut out = vec![Action::Continue; agents.len()];
        for (f, who) in facs {
            let play = self
                .get(f)
                .ok_or_else(|| Error::PolicyUndefined(format!("facility {f} has no play")))?;
            match &play.counts {
                Some(counts) => {
                    let total: u32 = counts.iter().sum();
                    if total as usize != who.len() {
                        return Err(Error::PolicyUndefined(format!(
                            "facility {f}: assignment for {total} agents, {} present",
                            who.len()
                        )));
                    }
                    let mut deck: Vec<Action> = counts
                        .iter()
                        .zip(&play.actions)
                        .flat_map(|(&c, &a)| std::iter::repeat_n(a, c as usize))
                        .collect();
                    deck.shuffle(rng);
                    for (i, a) in who.into_iter().zip(deck) {
                        out[i] = a;
                    }
                }
                None => {
                    let dist: Vec<(usize, f64)> = play.probs.iter().cloned().enumerate().collect();
                    for i in who {
                        out[i] = play.actions[sample_index(&dist, rng)];
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Anything that yields a stage profile for a state with `t` steps to go.
pub trait StagePolicy {
    fn stage(&self, s: &Scenario, state: &AnonState, t: usize) -> Result<StagePlay>;

    /// As [`StagePolicy::stage`], with the previous step's play as a warm start.
    fn stage_hinted(&self, s: &Scenario, state: &AnonState, t: usize, _hint: Option<&StagePlay>) -> Result<StagePlay> {
        self.stage(s, state, t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneStrategy {
    pub actions: Vec<Action>,
    pub probs: Vec<f64>,
}

/// One stage of a tabulated policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub t: usize,
    pub counts: Vec<u32>,
    pub plays: Vec<FacilityPlay>,
    pub regret: f64,
    pub tier: Option<Tier>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyBody {
    /// Same strategy at every state and step, per cruising zone.
    Stationary { zones: Vec<ZoneStrategy> },
    /// Stage profiles for every state and step.
    Table { entries: Vec<StageEntry> },
    /// Stage profiles computed on demand by the lookahead planner.
    Online { planner: PlannerConfig },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Policy {
    pub mode: Mode,
    pub horizon: usize,
    pub n_zones: usize,
    pub body: PolicyBody,
    #[serde(skip)]
    index: HashMap<(usize, Vec<u32>), usize>,
}

impl PartialEq for Policy {
    fn eq(&self, other: &Self) -> bool {
        self.mode == other.mode
            && self.horizon == other.horizon
            && self.n_zones == other.n_zones
            && self.body == other.body
    }
}

impl Policy {
    pub fn new(mode: Mode, horizon: usize, n_zones: usize, body: PolicyBody) -> Self {
        let mut p = Policy {
            mode,
            horizon,
            n_zones,
            body,
            index: HashMap::new(),
        };
        p.reindex();
        p
    }

    fn reindex(&mut self) {
        self.index.clear();
        if let PolicyBody::Table { entries } = &self.body {
            for (i, e) in entries.iter().enumerate() {
                self.index.insert((e.t, e.counts.clone()), i);
            }
        }
    }

    pub fn entry(&self, state: &AnonState, t: usize) -> Option<&StageEntry> {
        match &self.body {
            PolicyBody::Table { entries } => self
                .index
                .get(&(t, state.counts().to_vec()))
                .map(|&i| &entries[i]),
            _ => None,
        }
    }

    /// Expected remaining utility per facility (facility, value) from a table.
    pub fn values(&self, state: &AnonState, t: usize) -> Option<Vec<(usize, f64)>> {
        if t == 0 {
            return Some(state.occupied_facilities().map(|f| (f, 0.0)).collect());
        }
        let e = self.entry(state, t)?;
        e.plays.iter().map(|p| p.value.map(|v| (p.facility, v))).collect()
    }

    /// Total expected utility of all agents from a table.
    pub fn aggregate_value(&self, state: &AnonState, t: usize) -> Option<f64> {
        Some(
            self.values(state, t)?
                .into_iter()
                .map(|(f, v)| f64::from(state.count(f)) * v)
                .sum(),
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut p: Policy = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        p.reindex();
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Policy::from_json(&std::fs::read_to_string(path)?)
    }

    fn check_zones(&self, s: &Scenario) -> Result<()> {
        if s.n_zones() != self.n_zones {
            return Err(Error::InvalidArgument(format!(
                "policy built for {} zones, scenario has {}",
                self.n_zones,
                s.n_zones()
            )));
        }
        Ok(())
    }
}

impl StagePolicy for Policy {
    fn stage(&self, s: &Scenario, state: &AnonState, t: usize) -> Result<StagePlay> {
        self.stage_hinted(s, state, t, None)
    }

    fn stage_hinted(&self, s: &Scenario, state: &AnonState, t: usize, hint: Option<&StagePlay>) -> Result<StagePlay> {
        self.check_zones(s)?;
        if t == 0 {
            return Ok(StagePlay::uniform(s, state));
        }
        match &self.body {
            PolicyBody::Stationary { zones } => {
                let sp = FacilitySpace::new(s.n_zones());
                let plays = state
                    .occupied_facilities()
                    .map(|f| match sp.facility(f) {
                        crate::scg::Facility::Cruise(k) => FacilityPlay {
                            facility: f,
                            actions: zones[k].actions.clone(),
                            probs: zones[k].probs.clone(),
                            counts: None,
                            value: None,
                        },
                        _ => FacilityPlay {
                            facility: f,
                            actions: vec![Action::Continue],
                            probs: vec![1.0],
                            counts: None,
                            value: None,
                        },
                    })
                    .collect();
                Ok(StagePlay { plays })
            }
            PolicyBody::Table { .. } => {
                if t > self.horizon {
                    return Err(Error::PolicyUndefined(format!(
                        "t={t} beyond horizon {}",
                        self.horizon
                    )));
                }
                let e = self.entry(state, t).ok_or_else(|| {
                    Error::PolicyUndefined(format!("state {:?} at t={t}", state.counts()))
                })?;
                Ok(StagePlay {
                    plays: e.plays.clone(),
                })
            }
            PolicyBody::Online { planner } => {
                Planner::new(s, self.mode, planner.clone())?.plan(state, t, hint)
            }
        }
    }
}

/// Policy where every agent mixes uniformly over its actions at every stage.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformPolicy;

impl StagePolicy for UniformPolicy {
    fn stage(&self, s: &Scenario, state: &AnonState, _t: usize) -> Result<StagePlay> {
        Ok(StagePlay::uniform(s, state))
    }
}
