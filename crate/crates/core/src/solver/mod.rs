//! Finite-horizon equilibrium and optimum policies for the taxi game.
//!
//! Backward induction runs over anonymous count states: at every state and
//! step the backup game pays each agent its post-transition reward plus its
//! value one step later, and a stage solver (equilibrium or social optimum)
//! fixes the profile. When the count space is too large the policy is
//! computed online by the sampling planner instead.

pub mod exact;
pub mod planner;
pub mod policy;
pub mod regret;
pub mod sampling;
pub mod stage;

pub use planner::{Planner, PlannerConfig};
pub use policy::{FacilityPlay, Mode, Policy, PolicyBody, StageEntry, StagePlay, StagePolicy, UniformPolicy, ZoneStrategy};
pub use regret::{best_response_regret, policy_value};
pub use sampling::{sparse_sampling_value, ValueEstimate};
pub use stage::{find_nash, find_opt, IterMethod, NashConfig, OptSolution, Role, StageGame, StageSolution, TabularGame, Tier};

use crate::error::{Error, Result};
use crate::network::Scenario;
use crate::scg::FacilitySpace;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub nash: NashConfig,
    /// Largest number of (count state, step) backups done exactly.
    pub budget: u128,
    /// Online planner used when the exact budget is exceeded; `None` makes
    /// that case an error.
    pub sampling: Option<PlannerConfig>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            nash: NashConfig::default(),
            budget: 1_000_000,
            sampling: None,
        }
    }
}

/// Number of anonymous states for the scenario's fleet.
pub fn count_states(s: &Scenario) -> u128 {
    stage::n_compositions(s.n_taxis, FacilitySpace::new(s.n_zones()).len())
}

/// Backward induction for `horizon` steps in `mode` (nash or opt).
///
/// The iterative equilibrium tolerance is split evenly over the steps so a
/// whole-policy deviation gains at most the configured amount.
pub fn value_iteration(s: &Scenario, horizon: usize, mode: Mode, cfg: &SolverConfig) -> Result<Policy> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be >= 1".into()));
    }
    if mode == Mode::Greedy {
        return Err(Error::InvalidArgument("value iteration needs mode nash or opt".into()));
    }
    s.validate()?;
    let states = count_states(s);
    if states.saturating_mul(horizon as u128) > cfg.budget {
        return match &cfg.sampling {
            Some(p) => Ok(Policy::new(
                mode,
                horizon,
                s.n_zones(),
                PolicyBody::Online { planner: p.clone() },
            )),
            None => Err(Error::StateSpaceTooLarge {
                states,
                horizon,
                budget: cfg.budget,
            }),
        };
    }
    let mut nash = cfg.nash;
    nash.eps_iterative /= horizon as f64;
    exact::value_iteration_exact(s, horizon, mode, &nash)
}
