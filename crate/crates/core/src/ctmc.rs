//! Continuous-time Markov chain of a single taxi.
//!
//! The full chain runs over the facility set: cruising moves `C_k -> C_l` at
//! rate `λ_kl`, pickups `C_k -> O_kl` at `π_kl`, breaks `C_k -> W_k` at `σ_k`,
//! deliveries `O_kl -> C_l` at `ρ_kl` and returns `W_k -> C_k` at `σ'_k`.
//! The cruising sub-chain keeps only the `λ` moves; its stationary
//! distribution feeds the per-zone M/M/1 find rates.

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use crate::error::{Error, Result};
use crate::network::{PiMatrix, Scenario};
use crate::scg::{Facility, FacilitySpace};

/// Solver-side tolerance on the balance residual.
pub const SOLVER_TOL: f64 = 1e-12;

/// Sparse generator: off-diagonal transitions `(from, to, rate)` with positive rates.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub n_states: usize,
    pub transitions: Vec<(usize, usize, f64)>,
}

impl Generator {
    /// Total exit rate of every state.
    pub fn exit_rates(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_states];
        for &(i, _, r) in &self.transitions {
            out[i] += r;
        }
        out
    }

    /// Max-norm of `x Q`.
    pub fn residual(&self, x: &[f64]) -> f64 {
        let mut flow = vec![0.0; self.n_states];
        for &(i, j, r) in &self.transitions {
            flow[j] += x[i] * r;
            flow[i] -= x[i] * r;
        }
        flow.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Stationary probabilities over the facility set.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDist {
    pub theta: Vec<f64>,
}

/// Stationary probabilities of the cruising sub-chain, one per zone.
#[derive(Debug, Clone, PartialEq)]
pub struct CruisingDist {
    pub phi: Vec<f64>,
}

/// Passenger-find rate per zone.
#[derive(Debug, Clone, PartialEq)]
pub struct FindRates {
    pub pi_k: Vec<f64>,
}

impl FindRates {
    /// Splits zone find rates over destinations: `π_kl = π_k γ_kl`.
    pub fn split(&self, gamma: &[Vec<f64>]) -> PiMatrix {
        PiMatrix {
            pi: self
                .pi_k
                .iter()
                .zip(gamma)
                .map(|(p, row)| row.iter().map(|g| p * g).collect())
                .collect(),
        }
    }
}

/// Generator of the full single-taxi chain for the given find rates.
pub fn generator(s: &Scenario, pi: &PiMatrix) -> Result<Generator> {
    let n = s.n_zones();
    if pi.pi.len() != n || pi.pi.iter().any(|r| r.len() != n) {
        return Err(Error::validation("/pi", format!("expected a {n}x{n} matrix")));
    }
    let sp = FacilitySpace::new(n);
    let mut t = Vec::new();
    let mut push = |a: Facility, b: Facility, r: f64| {
        if r > 0.0 {
            t.push((sp.index(a), sp.index(b), r));
        }
    };
    for k in 0..n {
        for &l in s.graph.successors(k) {
            push(Facility::Cruise(k), Facility::Cruise(l), s.lambda[k][l]);
        }
        for l in 0..n {
            push(Facility::Cruise(k), Facility::Occupied(k, l), pi.pi[k][l]);
            push(Facility::Occupied(k, l), Facility::Cruise(l), s.rho[k][l]);
        }
        push(Facility::Cruise(k), Facility::Rest(k), s.sigma[k]);
        push(Facility::Rest(k), Facility::Cruise(k), s.sigma_prime[k]);
    }
    Ok(Generator {
        n_states: sp.len(),
        transitions: t,
    })
}

/// Stationary distribution of the chain restricted to the states reachable
/// from `start`. That restriction must be irreducible; unreachable states get
/// probability zero.
pub fn solve_stationary(q: &Generator, start: &[usize]) -> Result<Vec<f64>> {
    let n = q.n_states;
    let mut adj = vec![Vec::new(); n];
    for &(i, j, _) in &q.transitions {
        adj[i].push(j);
    }
    let mut reach = vec![false; n];
    let mut stack: Vec<usize> = start.to_vec();
    for &s in start {
        reach[s] = true;
    }
    while let Some(i) = stack.pop() {
        for &j in &adj[i] {
            if !reach[j] {
                reach[j] = true;
                stack.push(j);
            }
        }
    }
    let states: Vec<usize> = (0..n).filter(|&i| reach[i]).collect();
    let mut local = vec![usize::MAX; n];
    for (li, &i) in states.iter().enumerate() {
        local[i] = li;
    }
    let m = states.len();

    let mut g = DiGraph::<(), ()>::with_capacity(m, q.transitions.len());
    let nodes: Vec<_> = (0..m).map(|_| g.add_node(())).collect();
    for &(i, j, _) in &q.transitions {
        if reach[i] {
            g.add_edge(nodes[local[i]], nodes[local[j]], ());
        }
    }
    let sccs = tarjan_scc(&g);
    if sccs.len() != 1 {
        return Err(Error::ReducibleChain(format!(
            "{} communicating classes among {m} reachable states",
            sccs.len()
        )));
    }

    // Balance x Q = 0 written as Q^T x = 0; the last equation is replaced by
    // the normalisation sum(x) = 1.
    let mut a = DMatrix::<f64>::zeros(m, m);
    for &(i, j, r) in &q.transitions {
        if reach[i] {
            let (li, lj) = (local[i], local[j]);
            a[(lj, li)] += r;
            a[(li, li)] -= r;
        }
    }
    for c in 0..m {
        a[(m - 1, c)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(m);
    b[m - 1] = 1.0;
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::SingularSystem("balance system has no unique solution".into()))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem("non-finite solution".into()));
    }

    let mut out = vec![0.0; n];
    for (li, &i) in states.iter().enumerate() {
        out[i] = x[li].max(0.0);
    }
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    let scale = q.exit_rates().iter().fold(1.0f64, |m, r| m.max(*r));
    let res = q.residual(&out);
    if res > SOLVER_TOL * scale.max(1.0) * 1e3 {
        return Err(Error::SingularSystem(format!(
            "balance residual {res:e} after solve"
        )));
    }
    Ok(out)
}

/// Stationary distribution θ of the full chain.
pub fn stationary_distribution(s: &Scenario, pi: &PiMatrix) -> Result<StationaryDist> {
    let q = generator(s, pi)?;
    let start: Vec<usize> = (0..s.n_zones()).collect();
    Ok(StationaryDist {
        theta: solve_stationary(&q, &start)?,
    })
}

/// Stationary distribution φ of the cruising sub-chain driven by `λ`.
pub fn cruising_stationary(s: &Scenario) -> Result<CruisingDist> {
    let n = s.n_zones();
    let transitions = s
        .graph
        .edges()
        .iter()
        .filter(|&&(k, l)| s.lambda[k][l] > 0.0)
        .map(|&(k, l)| (k, l, s.lambda[k][l]))
        .collect();
    let q = Generator {
        n_states: n,
        transitions,
    };
    let all: Vec<usize> = (0..n).collect();
    Ok(CruisingDist {
        phi: solve_stationary(&q, &all)?,
    })
}

/// M/M/1 find rates `π_k = μ_k - n Σ_l φ_l λ_lk`.
pub fn queue_find_rates(s: &Scenario, phi: &CruisingDist) -> Result<FindRates> {
    let n = s.n_taxis as f64;
    let pi_k: Vec<f64> = (0..s.n_zones())
        .map(|k| {
            let inflow: f64 = s
                .graph
                .predecessors(k)
                .iter()
                .map(|&l| phi.phi[l] * s.lambda[l][k])
                .sum();
            s.mu[k] - n * inflow
        })
        .collect();
    let zones: Vec<usize> = (0..pi_k.len()).filter(|&k| pi_k[k] <= 0.0).collect();
    if !zones.is_empty() {
        return Err(Error::Unstable { zones });
    }
    Ok(FindRates { pi_k })
}

/// Stationary probability of being occupied.
pub fn system_efficiency(theta: &StationaryDist) -> f64 {
    let n = (((theta.theta.len() + 1) as f64).sqrt() - 1.0).round() as usize;
    let sp = FacilitySpace::new(n);
    sp.iter()
        .filter(|f| f.is_occupied())
        .map(|f| theta.theta[sp.index(f)])
        .sum()
}

/// The chain's find rates from scenario parameters alone: φ from `λ`, π_k from
/// the queue formula, split over destinations by `γ`.
pub fn derived_pi(s: &Scenario) -> Result<PiMatrix> {
    let phi = cruising_stationary(s)?;
    Ok(queue_find_rates(s, &phi)?.split(&s.gamma))
}
