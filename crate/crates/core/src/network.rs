//! Zone graph and scenario parameters.
//!
//! A [`Scenario`] is one stationary operating period: the directed zone graph
//! plus every per-minute rate the Markov models and the simulator need. It is
//! stored on disk as a single JSON document; see [`Scenario::to_json`].

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GAMMA_ROW_TOL: f64 = 1e-9;

/// Directed graph of cruising zones. Edges are adjacency pairs along which a
/// cruising taxi may move; staying inside a zone is not an edge.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneGraph {
    zones: Vec<String>,
    edges: Vec<(usize, usize)>,
    out_adj: Vec<Vec<usize>>,
    in_adj: Vec<Vec<usize>>,
}

impl ZoneGraph {
    /// Builds a graph from zone identifiers and index pairs.
    pub fn new(zones: Vec<String>, edges: Vec<(usize, usize)>) -> Result<Self> {
        if zones.is_empty() {
            return Err(Error::validation("/zones", "at least one zone is required"));
        }
        let mut seen = HashMap::new();
        for (i, z) in zones.iter().enumerate() {
            if seen.insert(z.as_str(), i).is_some() {
                return Err(Error::validation(
                    format!("/zones/{i}"),
                    format!("duplicate zone identifier {z:?}"),
                ));
            }
        }
        let n = zones.len();
        let mut out_adj = vec![Vec::new(); n];
        let mut in_adj = vec![Vec::new(); n];
        let mut dedup = BTreeSet::new();
        for (i, &(k, l)) in edges.iter().enumerate() {
            if k >= n || l >= n {
                return Err(Error::validation(
                    format!("/edges/{i}"),
                    "edge endpoint is not a declared zone",
                ));
            }
            if k == l {
                return Err(Error::validation(
                    format!("/edges/{i}"),
                    format!("self-loop on zone {:?}", zones[k]),
                ));
            }
            if !dedup.insert((k, l)) {
                return Err(Error::validation(format!("/edges/{i}"), "duplicate edge"));
            }
            out_adj[k].push(l);
            in_adj[l].push(k);
        }
        for adj in out_adj.iter_mut().chain(in_adj.iter_mut()) {
            adj.sort_unstable();
        }
        let graph = ZoneGraph {
            zones,
            edges,
            out_adj,
            in_adj,
        };
        if !graph.is_weakly_connected() {
            return Err(Error::validation(
                "/edges",
                "zone graph is not weakly connected",
            ));
        }
        Ok(graph)
    }

    pub fn n_zones(&self) -> usize {
        self.zones.len()
    }

    pub fn zones(&self) -> &[String] {
        &self.zones
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Out-neighbours of `k`, ascending.
    pub fn successors(&self, k: usize) -> &[usize] {
        &self.out_adj[k]
    }

    /// In-neighbours of `k`, ascending.
    pub fn predecessors(&self, k: usize) -> &[usize] {
        &self.in_adj[k]
    }

    pub fn has_edge(&self, k: usize, l: usize) -> bool {
        self.out_adj[k].binary_search(&l).is_ok()
    }

    fn is_weakly_connected(&self) -> bool {
        let n = self.n_zones();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(k) = stack.pop() {
            for &l in self.out_adj[k].iter().chain(&self.in_adj[k]) {
                if !seen[l] {
                    seen[l] = true;
                    stack.push(l);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Scenario parameters for one stationary period. All rates are per minute.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub graph: ZoneGraph,
    /// Passenger arrival rate per zone.
    pub mu: Vec<f64>,
    /// Cruising move rate, dense `n x n`; zero wherever there is no edge.
    pub lambda: Vec<Vec<f64>>,
    /// Delivery completion rate for every ordered zone pair, including `k == l`.
    pub rho: Vec<Vec<f64>>,
    /// Break-start rate per zone.
    pub sigma: Vec<f64>,
    /// Break-end rate per zone.
    pub sigma_prime: Vec<f64>,
    /// Destination distribution; row `k` is over destination zones.
    pub gamma: Vec<Vec<f64>>,
    pub n_taxis: u32,
    pub step_minutes: f64,
}

/// Rate of finding a passenger in zone `k` bound for zone `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiMatrix {
    pub pi: Vec<Vec<f64>>,
}

impl PiMatrix {
    pub fn new(pi: Vec<Vec<f64>>) -> Result<Self> {
        for (k, row) in pi.iter().enumerate() {
            for (l, &v) in row.iter().enumerate() {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::validation(
                        format!("/pi/{k}/{l}"),
                        format!("find rate must be finite and >= 0, got {v}"),
                    ));
                }
            }
        }
        Ok(PiMatrix { pi })
    }

    /// Total find rate per zone.
    pub fn row_sums(&self) -> Vec<f64> {
        self.pi.iter().map(|r| r.iter().sum()).collect()
    }
}

/// On-disk layout of a scenario.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rate_unit: Option<String>,
    zones: Vec<String>,
    edges: Vec<(String, String)>,
    mu: Vec<f64>,
    lambda: Vec<Vec<Option<f64>>>,
    rho: Vec<Vec<f64>>,
    sigma: Vec<f64>,
    sigma_prime: Vec<f64>,
    gamma: Vec<Vec<f64>>,
    n_taxis: u32,
    #[serde(default = "default_step")]
    step_minutes: f64,
}

fn default_step() -> f64 {
    1.0
}

fn check_rate(pointer: String, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::validation(
            pointer,
            format!("rate must be finite and >= 0, got {v}"),
        ))
    }
}

fn check_len<T>(pointer: &str, v: &[T], n: usize) -> Result<()> {
    if v.len() == n {
        Ok(())
    } else {
        Err(Error::validation(
            pointer,
            format!("expected {n} entries, got {}", v.len()),
        ))
    }
}

fn check_square(pointer: &str, m: &[Vec<f64>], n: usize) -> Result<()> {
    check_len(pointer, m, n)?;
    for (k, row) in m.iter().enumerate() {
        check_len(&format!("{pointer}/{k}"), row, n)?;
        for (l, &v) in row.iter().enumerate() {
            check_rate(format!("{pointer}/{k}/{l}"), v)?;
        }
    }
    Ok(())
}

impl Scenario {
    /// Checks every scenario invariant, reporting the first violation.
    pub fn validate(&self) -> Result<()> {
        let n = self.graph.n_zones();
        check_len("/mu", &self.mu, n)?;
        for (k, &v) in self.mu.iter().enumerate() {
            check_rate(format!("/mu/{k}"), v)?;
        }
        check_len("/lambda", &self.lambda, n)?;
        for (k, row) in self.lambda.iter().enumerate() {
            check_len(&format!("/lambda/{k}"), row, n)?;
            for (l, &v) in row.iter().enumerate() {
                check_rate(format!("/lambda/{k}/{l}"), v)?;
                if v != 0.0 && !self.graph.has_edge(k, l) {
                    return Err(Error::validation(
                        format!("/lambda/{k}/{l}"),
                        "cruising rate given for a pair that is not an edge",
                    ));
                }
            }
        }
        check_square("/rho", &self.rho, n)?;
        check_len("/sigma", &self.sigma, n)?;
        check_len("/sigma_prime", &self.sigma_prime, n)?;
        for k in 0..n {
            check_rate(format!("/sigma/{k}"), self.sigma[k])?;
            check_rate(format!("/sigma_prime/{k}"), self.sigma_prime[k])?;
            if self.sigma[k] > 0.0 && self.sigma_prime[k] <= 0.0 {
                return Err(Error::validation(
                    format!("/sigma_prime/{k}"),
                    "break-end rate must be > 0 where break-start rate is > 0",
                ));
            }
        }
        check_len("/gamma", &self.gamma, n)?;
        for (k, row) in self.gamma.iter().enumerate() {
            check_len(&format!("/gamma/{k}"), row, n)?;
            for (l, &v) in row.iter().enumerate() {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::validation(
                        format!("/gamma/{k}/{l}"),
                        format!("probability must be finite and >= 0, got {v}"),
                    ));
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > GAMMA_ROW_TOL {
                return Err(Error::validation(
                    format!("/gamma/{k}"),
                    format!("gamma row {k} sums to {sum}"),
                ));
            }
        }
        if !(self.step_minutes.is_finite() && self.step_minutes > 0.0) {
            return Err(Error::validation(
                "/step_minutes",
                format!("step length must be > 0, got {}", self.step_minutes),
            ));
        }
        Ok(())
    }

    pub fn n_zones(&self) -> usize {
        self.graph.n_zones()
    }

    /// Total cruising rate out of zone `k`.
    pub fn lambda_out(&self, k: usize) -> f64 {
        self.graph.successors(k).iter().map(|&l| self.lambda[k][l]).sum()
    }

    /// Parses and validates a scenario document.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ScenarioFile =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_file(file)
    }

    fn from_file(file: ScenarioFile) -> Result<Self> {
        if let Some(unit) = &file.rate_unit {
            if unit != "per_minute" {
                return Err(Error::validation(
                    "/rate_unit",
                    format!("unsupported rate unit {unit:?}; only \"per_minute\" is accepted"),
                ));
            }
        }
        let index: HashMap<&str, usize> = file
            .zones
            .iter()
            .enumerate()
            .map(|(i, z)| (z.as_str(), i))
            .collect();
        let mut edges = Vec::with_capacity(file.edges.len());
        for (i, (a, b)) in file.edges.iter().enumerate() {
            let k = *index.get(a.as_str()).ok_or_else(|| {
                Error::validation(format!("/edges/{i}/0"), format!("undeclared zone {a:?}"))
            })?;
            let l = *index.get(b.as_str()).ok_or_else(|| {
                Error::validation(format!("/edges/{i}/1"), format!("undeclared zone {b:?}"))
            })?;
            edges.push((k, l));
        }
        let graph = ZoneGraph::new(file.zones, edges)?;
        let n = graph.n_zones();
        check_len("/lambda", &file.lambda, n)?;
        let mut lambda = vec![vec![0.0; n]; n];
        for (k, row) in file.lambda.iter().enumerate() {
            check_len(&format!("/lambda/{k}"), row, n)?;
            for (l, v) in row.iter().enumerate() {
                match (v, graph.has_edge(k, l)) {
                    (Some(v), true) => lambda[k][l] = *v,
                    (None, false) => {}
                    (None, true) => {
                        return Err(Error::validation(
                            format!("/lambda/{k}/{l}"),
                            "missing cruising rate for an edge",
                        ))
                    }
                    (Some(_), false) => {
                        return Err(Error::validation(
                            format!("/lambda/{k}/{l}"),
                            "cruising rate must be null where there is no edge",
                        ))
                    }
                }
            }
        }
        let scenario = Scenario {
            graph,
            mu: file.mu,
            lambda,
            rho: file.rho,
            sigma: file.sigma,
            sigma_prime: file.sigma_prime,
            gamma: file.gamma,
            n_taxis: file.n_taxis,
            step_minutes: file.step_minutes,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    fn to_file(&self) -> ScenarioFile {
        let g = &self.graph;
        let n = g.n_zones();
        let lambda = (0..n)
            .map(|k| {
                (0..n)
                    .map(|l| g.has_edge(k, l).then(|| self.lambda[k][l]))
                    .collect()
            })
            .collect();
        ScenarioFile {
            rate_unit: Some("per_minute".to_string()),
            zones: g.zones.clone(),
            edges: g
                .edges
                .iter()
                .map(|&(k, l)| (g.zones[k].clone(), g.zones[l].clone()))
                .collect(),
            mu: self.mu.clone(),
            lambda,
            rho: self.rho.clone(),
            sigma: self.sigma.clone(),
            sigma_prime: self.sigma_prime.clone(),
            gamma: self.gamma.clone(),
            n_taxis: self.n_taxis,
            step_minutes: self.step_minutes,
        }
    }

    /// Serializes to the scenario JSON format.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("scenario serializes")
    }
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    Scenario::from_json(&text)
}

/// Writes `s` in the scenario JSON format.
pub fn write_scenario(s: &Scenario, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, s.to_json())?;
    Ok(())
}

/// Destination distribution from find rates: each row normalised to sum to one.
pub fn estimate_gamma(pi: &PiMatrix) -> Result<Vec<Vec<f64>>> {
    pi.pi
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let sum: f64 = row.iter().sum();
            if sum <= 0.0 {
                return Err(Error::ZeroRow { row: k });
            }
            Ok(row.iter().map(|v| v / sum).collect())
        })
        .collect()
}

/// Synthetic scenario on a random planar zone layout.
///
/// Roughly one zone in five is a high-demand hub (passenger weight about
/// six times the others). Destinations are drawn toward hubs and the baseline
/// cruising rates point toward higher-demand neighbours, which gives the
/// greedy drivers of the λ-chain their over-concentration in hub zones.
/// Total demand is `0.03 * intensity * n_taxis` passengers per minute.
pub fn generate_synthetic(n_zones: usize, n_taxis: u32, seed: u64, intensity: f64) -> Result<Scenario> {
    if n_zones == 0 {
        return Err(Error::InvalidArgument("n_zones must be >= 1".into()));
    }
    if n_taxis == 0 {
        return Err(Error::InvalidArgument("n_taxis must be >= 1".into()));
    }
    if !(intensity.is_finite() && intensity > 0.0) {
        return Err(Error::InvalidArgument("intensity must be > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_zones;
    let pos: Vec<(f64, f64)> = (0..n).map(|_| (rng.random(), rng.random())).collect();
    let dist = |a: usize, b: usize| -> f64 {
        let (dx, dy) = (pos[a].0 - pos[b].0, pos[a].1 - pos[b].1);
        (dx * dx + dy * dy).sqrt()
    };

    // Minimum spanning tree (Prim) plus links to the two nearest neighbours,
    // all bidirectional.
    let mut undirected = BTreeSet::new();
    if n > 1 {
        let mut in_tree = vec![false; n];
        let mut best = vec![(f64::INFINITY, 0usize); n];
        in_tree[0] = true;
        for j in 1..n {
            best[j] = (dist(0, j), 0);
        }
        for _ in 1..n {
            let (j, &(_, parent)) = best
                .iter()
                .enumerate()
                .filter(|(j, _)| !in_tree[*j])
                .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
                .expect("a vertex outside the tree");
            in_tree[j] = true;
            undirected.insert((parent.min(j), parent.max(j)));
            for k in 0..n {
                if !in_tree[k] && dist(j, k) < best[k].0 {
                    best[k] = (dist(j, k), j);
                }
            }
        }
        for a in 0..n {
            let mut others: Vec<usize> = (0..n).filter(|&b| b != a).collect();
            others.sort_by(|&x, &y| dist(a, x).total_cmp(&dist(a, y)));
            for &b in others.iter().take(2) {
                undirected.insert((a.min(b), a.max(b)));
            }
        }
    }
    let mut edges = Vec::with_capacity(2 * undirected.len());
    for &(a, b) in &undirected {
        edges.push((a, b));
        edges.push((b, a));
    }

    let n_hubs = if n == 1 { 1 } else { ((n as f64) / 5.0).round().max(1.0) as usize };
    let hubs: BTreeSet<usize> = sample(&mut rng, n, n_hubs).into_iter().collect();
    let weight: Vec<f64> = (0..n)
        .map(|k| {
            if hubs.contains(&k) {
                rng.random_range(5.0..8.0)
            } else {
                rng.random_range(0.6..1.4)
            }
        })
        .collect();
    let total_weight: f64 = weight.iter().sum();
    let demand = 0.03 * intensity * n_taxis as f64;
    let mu: Vec<f64> = weight.iter().map(|w| demand * w / total_weight).collect();

    let mut lambda = vec![vec![0.0; n]; n];
    for &(k, l) in &edges {
        lambda[k][l] = (0.2 * weight[l] / weight[k]).clamp(0.005, 1.0);
    }
    let rho: Vec<Vec<f64>> = (0..n)
        .map(|k| (0..n).map(|l| 1.0 / (5.0 + 25.0 * dist(k, l))).collect())
        .collect();
    let gamma: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let raw: Vec<f64> = (0..n)
                .map(|l| weight[l].powf(1.5) * (-dist(k, l)).exp())
                .collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect()
        })
        .collect();

    let graph = ZoneGraph::new((0..n).map(|k| format!("z{k:02}")).collect(), edges)?;
    let scenario = Scenario {
        graph,
        mu,
        lambda,
        rho,
        sigma: vec![1.0 / 300.0; n],
        sigma_prime: vec![1.0 / 30.0; n],
        gamma,
        n_taxis,
        step_minutes: 1.0,
    };
    scenario.validate()?;
    Ok(scenario)
}
