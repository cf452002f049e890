//! Zoned taxi-fleet models: a single-taxi Markov chain, the stochastic
//! congestion game built on it, finite-horizon equilibrium and optimum
//! solvers, and a minute-by-minute dispatch simulator.

pub mod ctmc;
pub mod error;
pub mod network;
pub mod scg;

pub use error::{Error, Result};
pub use network::{PiMatrix, Scenario, ZoneGraph};
pub use scg::{Action, AnonState, Facility, FacilitySpace};
pub mod rng;
pub mod solver;

pub use solver::{value_iteration, Mode, Policy, SolverConfig};
pub mod simulator;
