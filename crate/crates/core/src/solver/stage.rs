//! Stage games and their solvers.
//!
//! A stage game is anonymous within roles: agents sharing a role have the same
//! action set and payoffs, and payoffs depend only on how many agents of each
//! role pick each action. Profiles are role-symmetric: every agent of role `r`
//! plays the mixed strategy `profile[r]`.

use std::cmp::Ordering;
use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when comparing welfare values during equilibrium selection.
pub const WELFARE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Role {
    pub agents: u32,
    pub n_actions: usize,
}

pub trait StageGame {
    fn roles(&self) -> &[Role];

    /// Payoff to an agent of `role` playing `action` when the other agents'
    /// action counts are `others` (per role, focal agent excluded).
    fn payoff_pure(&self, role: usize, action: usize, others: &[Vec<u32>]) -> f64;

    /// Expected payoff of every action of `role` when all other agents play
    /// `profile` independently.
    fn payoff_mixed(&self, role: usize, profile: &[Vec<f64>]) -> Vec<f64> {
        let roles = self.roles();
        let per_role: Vec<Vec<(Vec<u32>, f64)>> = roles
            .iter()
            .enumerate()
            .map(|(q, r)| {
                let c = r.agents - u32::from(q == role);
                compositions(c, r.n_actions)
                    .into_iter()
                    .map(|k| {
                        let p = multinomial_pmf(&k, &profile[q]);
                        (k, p)
                    })
                    .filter(|(_, p)| *p > 0.0)
                    .collect()
            })
            .collect();
        let mut out = vec![0.0; roles[role].n_actions];
        for_each_product(&per_role, &mut |others, w| {
            for (a, o) in out.iter_mut().enumerate() {
                *o += w * self.payoff_pure(role, a, others);
            }
        });
        out
    }

    /// Expected payoffs of every role's actions under `profile`.
    fn payoffs_all(&self, profile: &[Vec<f64>]) -> Vec<Vec<f64>> {
        (0..self.roles().len())
            .map(|r| {
                if self.roles()[r].agents == 0 {
                    vec![0.0; self.roles()[r].n_actions]
                } else {
                    self.payoff_mixed(r, profile)
                }
            })
            .collect()
    }

    /// Total payoff of a deterministic assignment given as action counts.
    fn welfare_counts(&self, counts: &[Vec<u32>]) -> f64 {
        welfare_pure(self, counts)
    }
}

fn for_each_product(per_role: &[Vec<(Vec<u32>, f64)>], f: &mut dyn FnMut(&[Vec<u32>], f64)) {
    fn rec(
        per_role: &[Vec<(Vec<u32>, f64)>],
        i: usize,
        cur: &mut Vec<Vec<u32>>,
        w: f64,
        f: &mut dyn FnMut(&[Vec<u32>], f64),
    ) {
        if i == per_role.len() {
            f(cur, w);
            return;
        }
        for (k, p) in &per_role[i] {
            cur.push(k.clone());
            rec(per_role, i + 1, cur, w * p, f);
            cur.pop();
        }
    }
    rec(per_role, 0, &mut Vec::new(), 1.0, f);
}

/// All ways to split `total` indistinguishable agents over `parts` actions,
/// in lexicographically decreasing order (all on action 0 first).
pub fn compositions(total: u32, parts: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    if parts == 0 {
        if total == 0 {
            out.push(Vec::new());
        }
        return out;
    }
    let mut cur = vec![0u32; parts];
    fn rec(i: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if i + 1 == cur.len() {
            cur[i] = left;
            out.push(cur.clone());
            return;
        }
        for v in (0..=left).rev() {
            cur[i] = v;
            rec(i + 1, left - v, cur, out);
        }
    }
    rec(0, total, &mut cur, &mut out);
    out
}

/// Number of compositions of `total` into `parts`, saturating.
pub fn n_compositions(total: u32, parts: usize) -> u128 {
    if parts == 0 {
        return u128::from(total == 0);
    }
    binomial_u128(u128::from(total) + parts as u128 - 1, parts as u128 - 1)
}

pub(crate) fn binomial_u128(n: u128, k: u128) -> u128 {
    let k = k.min(n - k.min(n));
    let mut r: u128 = 1;
    for i in 0..k {
        r = match r.checked_mul(n - i) {
            Some(v) => v / (i + 1),
            None => return u128::MAX,
        };
    }
    r
}

pub(crate) fn binomial_f64(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1))
}

/// Probability of the action counts `k` when `sum(k)` agents draw i.i.d. from `x`.
pub fn multinomial_pmf(k: &[u32], x: &[f64]) -> f64 {
    let mut left: u32 = k.iter().sum();
    let mut p = 1.0;
    for (&ka, &xa) in k.iter().zip(x) {
        if ka == 0 {
            continue;
        }
        if xa <= 0.0 {
            return 0.0;
        }
        p *= binomial_f64(left, ka) * xa.powi(ka as i32);
        left -= ka;
    }
    p
}

/// Action counts of all agents when each role plays one pure action.
fn pure_counts(roles: &[Role], actions: &[usize]) -> Vec<Vec<u32>> {
    roles
        .iter()
        .zip(actions)
        .map(|(r, &a)| {
            let mut v = vec![0; r.n_actions];
            if r.agents > 0 {
                v[a] = r.agents;
            }
            v
        })
        .collect()
}

/// Best unilateral gain over all roles with agents.
pub fn regret<G: StageGame + ?Sized>(g: &G, profile: &[Vec<f64>]) -> f64 {
    regret_from(g, profile, &g.payoffs_all(profile))
}

fn regret_from<G: StageGame + ?Sized>(g: &G, profile: &[Vec<f64>], payoffs: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for (r, role) in g.roles().iter().enumerate() {
        if role.agents == 0 || role.n_actions < 2 {
            continue;
        }
        let u = &payoffs[r];
        let avg: f64 = u.iter().zip(&profile[r]).map(|(a, b)| a * b).sum();
        let best = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max(best - avg);
    }
    worst
}

/// Sum of expected payoffs over all agents.
pub fn welfare<G: StageGame + ?Sized>(g: &G, profile: &[Vec<f64>]) -> f64 {
    welfare_from(g, profile, &g.payoffs_all(profile))
}

fn welfare_from<G: StageGame + ?Sized>(g: &G, profile: &[Vec<f64>], payoffs: &[Vec<f64>]) -> f64 {
    g.roles()
        .iter()
        .enumerate()
        .filter(|(_, r)| r.agents > 0)
        .map(|(r, role)| {
            f64::from(role.agents) * payoffs[r].iter().zip(&profile[r]).map(|(a, b)| a * b).sum::<f64>()
        })
        .sum()
}

/// Welfare of a deterministic assignment given by action counts per role.
pub fn welfare_pure<G: StageGame + ?Sized>(g: &G, counts: &[Vec<u32>]) -> f64 {
    let mut total = 0.0;
    let mut others = counts.to_vec();
    for (r, row) in counts.iter().enumerate() {
        for (a, &k) in row.iter().enumerate() {
            if k == 0 {
                continue;
            }
            others[r][a] -= 1;
            total += f64::from(k) * g.payoff_pure(r, a, &others);
            others[r][a] += 1;
        }
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Exact,
    Iterative,
    /// Best profile found when the iteration cap was hit and the caller
    /// accepted an unconverged answer.
    Unconverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageSolution {
    pub profile: Vec<Vec<f64>>,
    pub regret: f64,
    pub welfare: f64,
    pub tier: Tier,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NashConfig {
    pub eps_exact: f64,
    pub eps_iterative: f64,
    pub max_iter: usize,
    /// Pure role-symmetric profiles are checked as candidates when there are at
    /// most this many.
    pub pure_limit: usize,
    /// Step size offset: the fictitious-play step is `1 / (k + 2 + offset)`.
    pub damping_offset: f64,
    pub accept_unconverged: bool,
    pub method: IterMethod,
}

/// Update rule of the iterative tier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IterMethod {
    /// Fictitious play with step `1 / (k + 2 + offset)`.
    #[default]
    FictitiousPlay,
    /// Projected payoff ascent on each role's simplex with per-role adaptive
    /// steps. Much faster on congestion games with many agents per role.
    Projection,
}

impl Default for NashConfig {
    fn default() -> Self {
        NashConfig {
            eps_exact: 1e-6,
            eps_iterative: 1e-3,
            max_iter: 100_000,
            pure_limit: 4096,
            damping_offset: 0.0,
            accept_unconverged: false,
            method: IterMethod::FictitiousPlay,
        }
    }
}

/// Deterministic equilibrium selection: higher welfare first, then the
/// lexicographically larger flattened profile.
fn select(mut cands: Vec<StageSolution>) -> Option<StageSolution> {
    cands.sort_by(|a, b| {
        if (a.welfare - b.welfare).abs() > WELFARE_TOL {
            return b.welfare.total_cmp(&a.welfare);
        }
        let fa = a.profile.iter().flatten();
        let fb = b.profile.iter().flatten();
        for (x, y) in fa.zip(fb) {
            if (x - y).abs() > 1e-12 {
                return y.total_cmp(x);
            }
        }
        Ordering::Equal
    });
    cands.into_iter().next()
}

fn solution<G: StageGame + ?Sized>(g: &G, profile: Vec<Vec<f64>>, tier: Tier, iterations: usize) -> StageSolution {
    let u = g.payoffs_all(&profile);
    StageSolution {
        regret: regret_from(g, &profile, &u),
        welfare: welfare_from(g, &profile, &u),
        profile,
        tier,
        iterations,
    }
}

fn unit(n: usize, a: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[a] = 1.0;
    v
}

/// Computes a role-symmetric Nash equilibrium of the stage game.
pub fn find_nash<G: StageGame + ?Sized>(g: &G, cfg: &NashConfig) -> Result<StageSolution> {
    find_nash_from(g, cfg, None)
}

/// As [`find_nash`], with an optional starting profile for the iterative tier.
pub fn find_nash_from<G: StageGame + ?Sized>(
    g: &G,
    cfg: &NashConfig,
    init: Option<&[Vec<f64>]>,
) -> Result<StageSolution> {
    let roles = g.roles();
    let strategic: Vec<usize> = (0..roles.len())
        .filter(|&r| roles[r].agents > 0 && roles[r].n_actions > 1)
        .collect();
    let n_strategic: u32 = strategic.iter().map(|&r| roles[r].agents).sum();
    let base: Vec<Vec<f64>> = roles.iter().map(|r| unit(r.n_actions, 0)).collect();

    let exact = match n_strategic {
        0 => vec![solution(g, base.clone(), Tier::Exact, 0)],
        1 => single_agent(g, &base, strategic[0]),
        2 if strategic.iter().all(|&r| roles[r].n_actions <= 5) => {
            if strategic.len() == 1 {
                symmetric_pair(g, &base, strategic[0], cfg.eps_exact)
            } else {
                bimatrix(g, &base, strategic[0], strategic[1], cfg.eps_exact)
            }
        }
        _ if strategic.len() == 1 && roles[strategic[0]].n_actions == 2 => {
            binary_symmetric(g, &base, strategic[0], cfg.eps_exact)
        }
        _ => Vec::new(),
    };
    let exact: Vec<_> = exact.into_iter().filter(|s| s.regret <= cfg.eps_exact).collect();
    if let Some(s) = select(exact) {
        return Ok(s);
    }
    iterative(g, cfg, &strategic, &base, init)
}

fn single_agent<G: StageGame + ?Sized>(g: &G, base: &[Vec<f64>], r: usize) -> Vec<StageSolution> {
    let u = g.payoff_mixed(r, base);
    let best = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (0..u.len())
        .filter(|&a| u[a] >= best - 1e-12)
        .map(|a| {
            let mut p = base.to_vec();
            p[r] = unit(u.len(), a);
            solution(g, p, Tier::Exact, 0)
        })
        .collect()
}

/// Pure action counts for every role: non-strategic roles on action 0, role
/// `r` (if any) with the given counts.
fn with_counts(base: &[Vec<f64>], roles: &[Role], set: &[(usize, Vec<u32>)]) -> Vec<Vec<u32>> {
    let mut out: Vec<Vec<u32>> = roles
        .iter()
        .zip(base)
        .map(|(r, b)| {
            let a = b.iter().position(|&v| v == 1.0).unwrap_or(0);
            pure_counts(std::slice::from_ref(r), &[a]).pop().unwrap()
        })
        .collect();
    for (r, k) in set {
        out[*r] = k.clone();
    }
    out
}

/// Subsets of `0..n` as index lists, nonempty.
fn supports(n: usize) -> Vec<Vec<usize>> {
    (1u32..(1 << n))
        .map(|mask| (0..n).filter(|&i| mask & (1 << i) != 0).collect())
        .collect()
}

/// Solves `M[rows, cols] y = v 1`, `sum(y) = 1` for `y` on `cols`; requires
/// `|rows| == |cols|`.
fn indifference(m: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> Option<Vec<f64>> {
    let s = rows.len();
    let mut a = DMatrix::<f64>::zeros(s + 1, s + 1);
    let mut b = DVector::<f64>::zeros(s + 1);
    for (i, &ri) in rows.iter().enumerate() {
        for (j, &cj) in cols.iter().enumerate() {
            a[(i, j)] = m[ri][cj];
        }
        a[(i, s)] = -1.0;
    }
    for j in 0..s {
        a[(s, j)] = 1.0;
    }
    b[s] = 1.0;
    let x = a.lu().solve(&b)?;
    let y: Vec<f64> = x.iter().take(s).cloned().collect();
    if y.iter().any(|v| !v.is_finite() || *v < -1e-10) {
        return None;
    }
    Some(y)
}

fn spread(n: usize, support: &[usize], y: &[f64]) -> Vec<f64> {
    let mut v = vec![0.0; n];
    for (&i, &p) in support.iter().zip(y) {
        v[i] = p.max(0.0);
    }
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|p| *p /= s);
    v
}

/// Symmetric equilibria of a two-agent symmetric role by support enumeration.
fn symmetric_pair<G: StageGame + ?Sized>(g: &G, base: &[Vec<f64>], r: usize, eps: f64) -> Vec<StageSolution> {
    let roles = g.roles();
    let n = roles[r].n_actions;
    let m: Vec<Vec<f64>> = (0..n)
        .map(|a| {
            (0..n)
                .map(|b| g.payoff_pure(r, a, &with_counts(base, roles, &[(r, unit_u32(n, b))])))
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    for sup in supports(n) {
        if let Some(y) = indifference(&m, &sup, &sup) {
            let mut p = base.to_vec();
            p[r] = spread(n, &sup, &y);
            let s = solution(g, p, Tier::Exact, 0);
            if s.regret <= eps {
                out.push(s);
            }
        }
    }
    out
}

fn unit_u32(n: usize, a: usize) -> Vec<u32> {
    let mut v = vec![0; n];
    v[a] = 1;
    v
}

/// Equilibria of a two-agent game with distinct roles by equal-size support
/// enumeration.
fn bimatrix<G: StageGame + ?Sized>(g: &G, base: &[Vec<f64>], r1: usize, r2: usize, eps: f64) -> Vec<StageSolution> {
    let roles = g.roles();
    let (n1, n2) = (roles[r1].n_actions, roles[r2].n_actions);
    let a: Vec<Vec<f64>> = (0..n1)
        .map(|i| {
            (0..n2)
                .map(|j| g.payoff_pure(r1, i, &with_counts(base, roles, &[(r1, vec![0; n1]), (r2, unit_u32(n2, j))])))
                .collect()
        })
        .collect();
    // Transposed payoffs of the second role: bt[j][i].
    let bt: Vec<Vec<f64>> = (0..n2)
        .map(|j| {
            (0..n1)
                .map(|i| g.payoff_pure(r2, j, &with_counts(base, roles, &[(r1, unit_u32(n1, i)), (r2, vec![0; n2])])))
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    let s1 = supports(n1);
    let s2 = supports(n2);
    for sa in &s1 {
        for sb in s2.iter().filter(|sb| sb.len() == sa.len()) {
            let (Some(y), Some(x)) = (indifference(&a, sa, sb), indifference(&bt, sb, sa)) else {
                continue;
            };
            let mut p = base.to_vec();
            p[r1] = spread(n1, sa, &x);
            p[r2] = spread(n2, sb, &y);
            let s = solution(g, p, Tier::Exact, 0);
            if s.regret <= eps {
                out.push(s);
            }
        }
    }
    out
}

/// Symmetric equilibria of one strategic role with two actions: roots of the
/// payoff difference, a polynomial in the probability of action 0.
fn binary_symmetric<G: StageGame + ?Sized>(g: &G, base: &[Vec<f64>], r: usize, eps: f64) -> Vec<StageSolution> {
    let roles = g.roles();
    let c = roles[r].agents;
    let d: Vec<f64> = (0..c)
        .map(|j| {
            let others = with_counts(base, roles, &[(r, vec![j, c - 1 - j])]);
            g.payoff_pure(r, 0, &others) - g.payoff_pure(r, 1, &others)
        })
        .collect();
    let diff = |p: f64| -> f64 {
        d.iter()
            .enumerate()
            .map(|(j, dj)| {
                let j = j as u32;
                binomial_f64(c - 1, j) * p.powi(j as i32) * (1.0 - p).powi((c - 1 - j) as i32) * dj
            })
            .sum()
    };
    let mut ps = Vec::new();
    if d[(c - 1) as usize] >= 0.0 {
        ps.push(1.0);
    }
    if d[0] <= 0.0 {
        ps.push(0.0);
    }
    let grid = 64 * c as usize;
    let mut lo = 0.0;
    let mut flo = diff(lo);
    for i in 1..=grid {
        let hi = i as f64 / grid as f64;
        let fhi = diff(hi);
        if flo != 0.0 && fhi != 0.0 && (flo < 0.0) != (fhi < 0.0) {
            let (mut a, mut b, mut fa) = (lo, hi, flo);
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                let fm = diff(mid);
                if fm == 0.0 {
                    a = mid;
                    b = mid;
                    break;
                }
                if (fm < 0.0) == (fa < 0.0) {
                    a = mid;
                    fa = fm;
                } else {
                    b = mid;
                }
                if b - a < 1e-16 {
                    break;
                }
            }
            ps.push(0.5 * (a + b));
        } else if fhi == 0.0 && i < grid {
            ps.push(hi);
        }
        lo = hi;
        flo = fhi;
    }
    ps.into_iter()
        .map(|p| {
            let mut prof = base.to_vec();
            prof[r] = vec![p, 1.0 - p];
            solution(g, prof, Tier::Exact, 0)
        })
        .filter(|s| s.regret <= eps)
        .collect()
}

fn iterative<G: StageGame + ?Sized>(
    g: &G,
    cfg: &NashConfig,
    strategic: &[usize],
    base: &[Vec<f64>],
    init: Option<&[Vec<f64>]>,
) -> Result<StageSolution> {
    let roles = g.roles();
    let mut cands = Vec::new();

    let n_pure: u128 = strategic.iter().map(|&r| roles[r].n_actions as u128).product();
    if n_pure <= cfg.pure_limit as u128 {
        let mut idx = vec![0usize; strategic.len()];
        loop {
            let mut p = base.to_vec();
            for (i, &r) in strategic.iter().enumerate() {
                p[r] = unit(roles[r].n_actions, idx[i]);
            }
            let s = solution(g, p, Tier::Iterative, 0);
            if s.regret <= cfg.eps_iterative {
                cands.push(s);
            }
            let mut i = 0;
            while i < idx.len() {
                idx[i] += 1;
                if idx[i] < roles[strategic[i]].n_actions {
                    break;
                }
                idx[i] = 0;
                i += 1;
            }
            if i == idx.len() {
                break;
            }
        }
    }

    let x: Vec<Vec<f64>> = match init {
        Some(p) => p.to_vec(),
        None => roles
            .iter()
            .zip(base)
            .map(|(r, b)| if r.agents > 0 && r.n_actions > 1 { vec![1.0 / r.n_actions as f64; r.n_actions] } else { b.clone() })
            .collect(),
    };
    let (best_reg, best_x, iters) = match cfg.method {
        IterMethod::FictitiousPlay => fictitious(g, cfg, strategic, x),
        IterMethod::Projection => projection(g, cfg, strategic, x),
    };
    if best_reg <= cfg.eps_iterative {
        cands.push(solution(g, best_x, Tier::Iterative, iters));
    } else if cands.is_empty() {
        if cfg.accept_unconverged {
            return Ok(solution(g, best_x, Tier::Unconverged, iters));
        }
        return Err(Error::NonConvergence {
            iterations: iters,
            regret: best_reg,
        });
    }
    Ok(select(cands).expect("nonempty"))
}

fn fictitious<G: StageGame + ?Sized>(
    g: &G,
    cfg: &NashConfig,
    strategic: &[usize],
    mut x: Vec<Vec<f64>>,
) -> (f64, Vec<Vec<f64>>, usize) {
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    let mut iters = 0;
    for k in 0..cfg.max_iter {
        iters = k + 1;
        let mut reg = 0.0f64;
        let mut br = Vec::with_capacity(strategic.len());
        let all = g.payoffs_all(&x);
        for &r in strategic {
            let u = &all[r];
            let avg: f64 = u.iter().zip(&x[r]).map(|(a, b)| a * b).sum();
            let (mut arg, mut top) = (0, f64::NEG_INFINITY);
            for (a, &v) in u.iter().enumerate() {
                if v > top + 1e-15 {
                    arg = a;
                    top = v;
                }
            }
            reg = reg.max(top - avg);
            br.push(arg);
        }
        if best.as_ref().is_none_or(|(b, _)| reg < *b) {
            best = Some((reg, x.clone()));
        }
        if reg <= cfg.eps_iterative {
            break;
        }
        let alpha = 1.0 / (k as f64 + 2.0 + cfg.damping_offset);
        for (&r, &a) in strategic.iter().zip(&br) {
            for (i, v) in x[r].iter_mut().enumerate() {
                *v = (1.0 - alpha) * *v + if i == a { alpha } else { 0.0 };
            }
        }
    }
    let (r, x) = best.expect("at least one iteration");
    (r, x, iters)
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &mut [f64]) {
    let mut u = v.to_vec();
    u.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut tau = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        acc += ui;
        let t = (acc - 1.0) / (i as f64 + 1.0);
        if ui - t > 0.0 {
            tau = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - tau).max(0.0);
    }
}

fn projection<G: StageGame + ?Sized>(
    g: &G,
    cfg: &NashConfig,
    strategic: &[usize],
    mut x: Vec<Vec<f64>>,
) -> (f64, Vec<Vec<f64>>, usize) {
    let roles = g.roles();
    let scale: Vec<f64> = strategic.iter().map(|&r| 1.0 / f64::from(roles[r].agents)).collect();
    let mut kappa = 1.0f64;
    let mut last: Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)> = None;
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    let mut iters = 0;
    for k in 0..cfg.max_iter {
        iters = k + 1;
        let all = g.payoffs_all(&x);
        let mut reg = 0.0f64;
        let d: Vec<Vec<f64>> = strategic
            .iter()
            .zip(&scale)
            .map(|(&r, &sc)| {
                let u = &all[r];
                let avg: f64 = u.iter().zip(&x[r]).map(|(a, b)| a * b).sum();
                let top = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                reg = reg.max(top - avg);
                u.iter().map(|v| v * sc).collect()
            })
            .collect();
        if best.as_ref().is_none_or(|(b, _)| reg < *b) {
            best = Some((reg, x.clone()));
        }
        if reg <= cfg.eps_iterative {
            break;
        }
        let cur: Vec<Vec<f64>> = strategic.iter().map(|&r| x[r].clone()).collect();
        if let Some((px, pd)) = &last {
            let dist = |a: &[Vec<f64>], b: &[Vec<f64>]| -> f64 {
                a.iter()
                    .flatten()
                    .zip(b.iter().flatten())
                    .map(|(p, q)| (p - q).powi(2))
                    .sum::<f64>()
                    .sqrt()
            };
            let (dx, dd) = (dist(&cur, px), dist(&d, pd));
            kappa *= 1.5;
            if dd > 0.0 {
                kappa = kappa.min(0.5 * dx / dd);
            }
        }
        for (i, &r) in strategic.iter().enumerate() {
            for (v, &da) in x[r].iter_mut().zip(&d[i]) {
                *v += kappa * da;
            }
            project_simplex(&mut x[r]);
        }
        last = Some((cur, d));
    }
    let (r, x) = best.expect("at least one iteration");
    (r, x, iters)
}

/// A deterministic joint action given as action counts per role.
#[derive(Debug, Clone, PartialEq)]
pub struct OptSolution {
    pub counts: Vec<Vec<u32>>,
    pub welfare: f64,
}

impl OptSolution {
    /// Canonical joint tuple: per role, the agents' actions in ascending order.
    pub fn joint_tuple(&self) -> Vec<usize> {
        canonical_tuple(&self.counts)
    }

    /// Per-role marginal action frequencies.
    pub fn marginals(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|k| {
                let c: u32 = k.iter().sum();
                if c == 0 {
                    let mut v = vec![0.0; k.len()];
                    v[0] = 1.0;
                    v
                } else {
                    k.iter().map(|&v| f64::from(v) / f64::from(c)).collect()
                }
            })
            .collect()
    }
}

fn canonical_tuple(counts: &[Vec<u32>]) -> Vec<usize> {
    counts
        .iter()
        .flat_map(|k| k.iter().enumerate().flat_map(|(a, &c)| std::iter::repeat_n(a, c as usize)))
        .collect()
}

/// Count profiles are enumerated exhaustively up to this many; beyond it a
/// first-improvement local search is used.
pub const OPT_ENUM_LIMIT: u128 = 200_000;

/// Joint action maximising total payoff; ties go to the lexicographically
/// smallest canonical joint tuple.
pub fn find_opt<G: StageGame + ?Sized>(g: &G) -> OptSolution {
    let roles = g.roles();
    let total: u128 = roles
        .iter()
        .map(|r| n_compositions(r.agents, r.n_actions))
        .fold(1u128, |a, b| a.saturating_mul(b));
    if total <= OPT_ENUM_LIMIT {
        let per_role: Vec<Vec<(Vec<u32>, f64)>> = roles
            .iter()
            .map(|r| compositions(r.agents, r.n_actions).into_iter().map(|k| (k, 1.0)).collect())
            .collect();
        let mut best: Option<(f64, Vec<usize>, Vec<Vec<u32>>)> = None;
        for_each_product(&per_role, &mut |counts, _| {
            let w = g.welfare_counts(counts);
            let better = match &best {
                None => true,
                Some((bw, bt, _)) => {
                    if w > bw + 1e-12 {
                        true
                    } else if w >= bw - 1e-12 {
                        canonical_tuple(counts) < *bt
                    } else {
                        false
                    }
                }
            };
            if better {
                best = Some((w, canonical_tuple(counts), counts.to_vec()));
            }
        });
        let (welfare, _, counts) = best.expect("at least one profile");
        return OptSolution { counts, welfare };
    }
    local_search(g, pure_counts(roles, &vec![0; roles.len()]))
}

/// Moves one agent at a time to the best improving action until no move gains.
pub fn local_search<G: StageGame + ?Sized>(g: &G, mut counts: Vec<Vec<u32>>) -> OptSolution {
    let mut w = g.welfare_counts(&counts);
    loop {
        let mut best: Option<(f64, usize, usize, usize)> = None;
        for (r, row) in counts.iter().enumerate() {
            for a in 0..row.len() {
                if row[a] == 0 {
                    continue;
                }
                for b in 0..row.len() {
                    if a == b {
                        continue;
                    }
                    let mut c2 = counts.clone();
                    c2[r][a] -= 1;
                    c2[r][b] += 1;
                    let w2 = g.welfare_counts(&c2);
                    if w2 > w + 1e-12 && best.is_none_or(|(bw, ..)| w2 > bw) {
                        best = Some((w2, r, a, b));
                    }
                }
            }
        }
        match best {
            Some((w2, r, a, b)) => {
                counts[r][a] -= 1;
                counts[r][b] += 1;
                w = w2;
            }
            None => return OptSolution { counts, welfare: w },
        }
    }
}

type PayoffKey = (usize, usize, Vec<Vec<u32>>);

/// A stage game stored as an explicit payoff table.
#[derive(Debug, Clone)]
pub struct TabularGame {
    roles: Vec<Role>,
    table: HashMap<PayoffKey, f64>,
}

impl TabularGame {
    /// Tabulates `f(role, action, others)` over every reachable argument.
    pub fn from_fn(roles: Vec<Role>, f: impl Fn(usize, usize, &[Vec<u32>]) -> f64) -> Self {
        let mut table = HashMap::new();
        for (r, role) in roles.iter().enumerate() {
            let per_role: Vec<Vec<(Vec<u32>, f64)>> = roles
                .iter()
                .enumerate()
                .map(|(q, rq)| {
                    compositions(rq.agents - u32::from(q == r), rq.n_actions)
                        .into_iter()
                        .map(|k| (k, 1.0))
                        .collect()
                })
                .collect();
            if role.agents == 0 {
                continue;
            }
            for_each_product(&per_role, &mut |others, _| {
                for a in 0..role.n_actions {
                    table.insert((r, a, others.to_vec()), f(r, a, others));
                }
            });
        }
        TabularGame { roles, table }
    }

    /// Symmetric singleton congestion game: `n` agents each pick one facility
    /// and receive `rewards[j][c - 1]` when `c` agents share facility `j`.
    pub fn congestion(n: u32, rewards: Vec<Vec<f64>>) -> Self {
        let roles = vec![Role {
            agents: n,
            n_actions: rewards.len(),
        }];
        TabularGame::from_fn(roles, |_, a, others| rewards[a][others[0][a] as usize])
    }
}

impl StageGame for TabularGame {
    fn roles(&self) -> &[Role] {
        &self.roles
    }

    fn payoff_pure(&self, role: usize, action: usize, others: &[Vec<u32>]) -> f64 {
        self.table[&(role, action, others.to_vec())]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gap_game() -> TabularGame {
        TabularGame::congestion(2, vec![vec![1.0, 0.5], vec![0.5, 0.25]])
    }

    #[test]
    fn congestion_gap() {
        let g = gap_game();
        let ne = find_nash(&g, &NashConfig::default()).unwrap();
        assert_eq!(ne.profile, vec![vec![1.0, 0.0]]);
        assert!(ne.regret.abs() < 1e-12);
        assert!((ne.welfare - 1.0).abs() < 1e-12);
        let opt = find_opt(&g);
        assert_eq!(opt.joint_tuple(), vec![0, 1]);
        assert!((opt.welfare - 1.5).abs() < 1e-12);
    }

    #[test]
    fn anti_coordination() {
        let g = TabularGame::congestion(2, vec![vec![1.0, 0.0], vec![1.0, 0.0]]);
        let ne = find_nash(&g, &NashConfig::default()).unwrap();
        assert!((ne.profile[0][0] - 0.5).abs() < 1e-12);
        assert!(ne.regret < 1e-12);
    }

    #[test]
    fn dominant_action() {
        let roles = vec![Role { agents: 3, n_actions: 3 }];
        let g = TabularGame::from_fn(roles, |_, a, o| [0.1, 2.0, 0.5][a] - 0.01 * f64::from(o[0][a]));
        let ne = find_nash(&g, &NashConfig::default()).unwrap();
        assert_eq!(ne.profile[0], vec![0.0, 1.0, 0.0]);
        assert_eq!(ne.tier, Tier::Iterative);
    }

    #[test]
    fn opt_ties_and_single_agent() {
        let g = TabularGame::congestion(3, vec![vec![1.0; 3]; 2]);
        assert_eq!(find_opt(&g).joint_tuple(), vec![0, 0, 0]);
        let g = TabularGame::congestion(1, vec![vec![0.2], vec![0.9], vec![0.4]]);
        assert_eq!(find_opt(&g).counts, vec![vec![0, 1, 0]]);
        let ne = find_nash(&g, &NashConfig::default()).unwrap();
        assert_eq!(ne.profile, vec![vec![0.0, 1.0, 0.0]]);
    }

    #[test]
    fn binary_role_root() {
        // Three agents, two facilities; reward 1/c on A, 0.4 flat on B.
        let g = TabularGame::congestion(3, vec![vec![1.0, 0.5, 1.0 / 3.0], vec![0.4; 3]]);
        let ne = find_nash(&g, &NashConfig::default()).unwrap();
        assert_eq!(ne.tier, Tier::Exact);
        assert!(ne.regret < 1e-12, "{}", ne.regret);
        assert!(ne.profile[0][0] > 0.0 && ne.profile[0][0] < 1.0);
    }

    #[test]
    fn bimatrix_matching_pennies() {
        let roles = vec![Role { agents: 1, n_actions: 2 }, Role { agents: 1, n_actions: 2 }];
        let g = TabularGame::from_fn(roles, |r, a, o| {
            let b = if r == 0 { o[1].iter().position(|&v| v == 1).unwrap() } else { o[0].iter().position(|&v| v == 1).unwrap() };
            let same = if a == b { 1.0 } else { -1.0 };
            if r == 0 { same } else { -same }
        });
        let ne = find_nash(&g, &NashConfig::default()).unwrap();
        assert_eq!(ne.tier, Tier::Exact);
        for p in &ne.profile {
            assert!((p[0] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn compositions_count() {
        assert_eq!(compositions(3, 3).len() as u128, n_compositions(3, 3));
        assert_eq!(compositions(0, 2), vec![vec![0, 0]]);
        assert_eq!(n_compositions(500, 15), binomial_u128(514, 14));
    }
}
