//! Sparse-sampling estimate of a policy's value.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::policy::StagePolicy;
use crate::error::{Error, Result};
use crate::network::Scenario;
use crate::scg::{sample_agents, AnonState, Kernel};

#[derive(Debug, Clone, PartialEq)]
pub struct ValueEstimate {
    /// Mean over agents of the estimated per-agent value.
    pub mean: f64,
    /// Estimated value per agent, canonical agent order.
    pub per_agent: Vec<f64>,
    /// 95% normal half-width of `mean` from the root samples.
    pub half_width: f64,
}

struct Tree<'a, P: StagePolicy + ?Sized> {
    s: &'a Scenario,
    kernel: Kernel<'a>,
    policy: &'a P,
    width: usize,
}

impl<P: StagePolicy + ?Sized> Tree<'_, P> {
    /// Per-agent estimates and the per-sample mean-over-agents returns.
    fn node(&self, agents: &[usize], t: usize, rng: &mut ChaCha8Rng, keep: bool) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = agents.len();
        if t == 0 {
            return Ok((vec![0.0; n], Vec::new()));
        }
        let m = self.kernel.space().len();
        let mut counts = vec![0u32; m];
        for &f in agents {
            counts[f] += 1;
        }
        let play = self.policy.stage(self.s, &AnonState::new(counts.clone()), t)?;
        let mut acc = vec![0.0; n];
        let mut samples = Vec::with_capacity(if keep { self.width } else { 0 });
        let mut next_counts = vec![0u32; m];
        for _ in 0..self.width {
            let actions = play.sample_actions(agents, rng)?;
            let next = sample_agents(&self.kernel, &counts, agents, &actions, rng)?;
            next_counts.iter_mut().for_each(|c| *c = 0);
            for &f in &next {
                next_counts[f] += 1;
            }
            let cont = if t > 1 {
                let mut child = ChaCha8Rng::seed_from_u64(rng.next_u64());
                self.node(&next, t - 1, &mut child, false)?.0
            } else {
                vec![0.0; n]
            };
            let mut total = 0.0;
            for i in 0..n {
                let v = self.kernel.reward(next[i], next_counts[next[i]]) + cont[i];
                acc[i] += v;
                total += v;
            }
            if keep {
                samples.push(total / n as f64);
            }
        }
        acc.iter_mut().for_each(|v| *v /= self.width as f64);
        Ok((acc, samples))
    }
}

/// Recursive sparse-sampling estimate of the value of following `policy` for
/// `t` steps from `state`. Each node draws `width` joint transitions and
/// averages reward plus the subtree estimate; subtrees use independent random
/// streams derived from `rng`.
pub fn sparse_sampling_value<P: StagePolicy + ?Sized, R: Rng + ?Sized>(
    s: &Scenario,
    state: &AnonState,
    t: usize,
    width: usize,
    policy: &P,
    rng: &mut R,
) -> Result<ValueEstimate> {
    if width == 0 {
        return Err(Error::InvalidArgument("width must be >= 1".into()));
    }
    let agents = state.agent_indices();
    if t == 0 || agents.is_empty() {
        return Ok(ValueEstimate {
            mean: 0.0,
            per_agent: vec![0.0; agents.len()],
            half_width: 0.0,
        });
    }
    let tree = Tree {
        s,
        kernel: Kernel::new(s),
        policy,
        width,
    };
    let mut root = ChaCha8Rng::seed_from_u64(rng.next_u64());
    let (per_agent, samples) = tree.node(&agents, t, &mut root, true)?;
    let mean = per_agent.iter().sum::<f64>() / per_agent.len() as f64;
    let half_width = if samples.len() > 1 {
        let k = samples.len() as f64;
        let mu = samples.iter().sum::<f64>() / k;
        let var = samples.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (k - 1.0);
        1.96 * (var / k).sqrt()
    } else {
        0.0
    };
    Ok(ValueEstimate {
        mean,
        per_agent,
        half_width,
    })
}
