//! Finite MDPs, an exact value-iteration solver, and episode rollouts.
//!
//! The centerpiece is a five-state diagnostic chain: from s0 action a0 leads
//! to s1 with reward r1 and action a1 leads to s2 with reward r2; from either
//! of s1/s2, a0 reaches the terminal s3 with reward r3 and a1 reaches the
//! terminal s4 with reward r4. Successor values at s1/s2 come only from
//! terminal transitions, so target noise injected at s0 is the lone source of
//! overestimation, which makes the chain a clean probe for max-operator bias.

use rand::Rng;
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("transition row for state {state} action {action} sums to {sum}, expected 1")]
    UnnormalizedRow { state: usize, action: usize, sum: f64 },
    #[error("transition references state {0}, but there are only {1} states")]
    StateOutOfRange(usize, usize),
    #[error("initial distribution sums to {0}, expected 1")]
    BadInitialDistribution(f64),
    #[error("discount must lie in [0, 1), got {0}")]
    BadDiscount(f64),
    #[error("value iteration did not reach tolerance {tol} in {iters} sweeps (residual {residual})")]
    NoConvergence { tol: f64, iters: usize, residual: f64 },
    #[error("policy row for state {0} is not a distribution")]
    BadPolicy(usize),
    #[error("config error: {0}")]
    Config(String),
}

/// A finite MDP with rewards on (state, action). Terminal states self-loop
/// with zero reward so every row is a distribution and terminal values are
/// exactly zero under any discount.
#[derive(Debug, Clone)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// transition[s][a] lists (next_state, probability) with probability > 0.
    transition: Vec<Vec<Vec<(usize, f64)>>>,
    /// reward[s][a]: expected immediate reward.
    reward: Vec<Vec<f64>>,
    terminal: Vec<bool>,
    discount: f64,
    initial_dist: Vec<f64>,
}

const ROW_TOL: f64 = 1e-12;

impl TabularMdp {
    pub fn new(
        transition: Vec<Vec<Vec<(usize, f64)>>>,
        reward: Vec<Vec<f64>>,
        terminal: Vec<bool>,
        discount: f64,
        initial_dist: Vec<f64>,
    ) -> Result<Self, MdpError> {
        let n_states = transition.len();
        let n_actions = transition.first().map_or(0, Vec::len);
        if !(0.0..1.0).contains(&discount) {
            return Err(MdpError::BadDiscount(discount));
        }
        for (s, row) in transition.iter().enumerate() {
            for (a, entries) in row.iter().enumerate() {
                let mut sum = 0.0;
                for &(next, p) in entries {
                    if next >= n_states {
                        return Err(MdpError::StateOutOfRange(next, n_states));
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > ROW_TOL {
                    return Err(MdpError::UnnormalizedRow { state: s, action: a, sum });
                }
            }
        }
        let init_sum: f64 = initial_dist.iter().sum();
        if initial_dist.len() != n_states || (init_sum - 1.0).abs() > ROW_TOL {
            return Err(MdpError::BadInitialDistribution(init_sum));
        }
        Ok(Self { n_states, n_actions, transition, reward, terminal, discount, initial_dist })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s][a]
    }

    pub fn successors(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.transition[s][a]
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    /// Samples a start state from the initial distribution.
    pub fn sample_initial<R: Rng>(&self, rng: &mut R) -> usize {
        sample_categorical(&self.initial_dist, rng)
    }

    /// Samples (reward, next_state, done). `done` is true when the sampled
    /// successor is terminal.
    pub fn sample_step<R: Rng>(&self, s: usize, a: usize, rng: &mut R) -> (f64, usize, bool) {
        let next = sample_from_pairs(&self.transition[s][a], rng);
        (self.reward[s][a], next, self.terminal[next])
    }
}

/// Draws an index from an explicit probability vector.
pub fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn sample_from_pairs<R: Rng>(pairs: &[(usize, f64)], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for &(next, p) in pairs {
        acc += p;
        if u < acc {
            return next;
        }
    }
    pairs.last().expect("non-empty transition row").0
}

/// Rewards and discount for the five-state diagnostic chain.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainMdpParams {
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub r4: f64,
    pub discount: f64,
}

impl Default for ChainMdpParams {
    fn default() -> Self {
        Self { r1: 1.0, r2: 0.5, r3: 0.5, r4: 0.5, discount: 0.9 }
    }
}

/// Builds the five-state chain. Episodes start uniformly over {s0, s1, s2},
/// matching how the tabular agents are trained on it.
pub fn build_chain_mdp(params: ChainMdpParams) -> TabularMdp {
    let det = |next: usize| vec![(next, 1.0)];
    let transition = vec![
        vec![det(1), det(2)],
        vec![det(3), det(4)],
        vec![det(3), det(4)],
        vec![det(3), det(3)],
        vec![det(4), det(4)],
    ];
    let reward = vec![
        vec![params.r1, params.r2],
        vec![params.r3, params.r4],
        vec![params.r3, params.r4],
        vec![0.0, 0.0],
        vec![0.0, 0.0],
    ];
    let third = 1.0 / 3.0;
    let initial = vec![third, third, 1.0 - 2.0 * third, 0.0, 0.0];
    TabularMdp::new(transition, reward, vec![false, false, false, true, true], params.discount, initial)
        .expect("chain construction is well-formed")
}

/// Action values plus the induced state values.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub q: Vec<Vec<f64>>,
    pub v: Vec<f64>,
    pub iterations: usize,
    /// Sup-norm residual after each sweep; non-increasing for γ < 1.
    pub residuals: Vec<f64>,
}

fn backup_value(mdp: &TabularMdp, q: &[Vec<f64>], s: usize, a: usize, state_value: impl Fn(&[f64]) -> f64) -> f64 {
    let mut total = mdp.reward(s, a);
    for &(next, p) in mdp.successors(s, a) {
        if !mdp.is_terminal(next) {
            total += mdp.discount() * p * state_value(&q[next]);
        }
    }
    total
}

/// Iterates the optimality backup Q ← r + γ Σ p max_a' Q until the sup-norm
/// change drops to `tol`.
pub fn value_iteration(mdp: &TabularMdp, tol: f64, max_iters: usize) -> Result<ValueTable, MdpError> {
    let max_of = |row: &[f64]| row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    fixed_point(mdp, tol, max_iters, max_of)
}

/// Iterates the policy backup Q ← r + γ Σ p Σ_a' π(a'|s') Q to the fixed
/// point Q^π. `policy[s]` must be a distribution over actions.
pub fn exact_policy_q(
    mdp: &TabularMdp,
    policy: &[Vec<f64>],
    tol: f64,
    max_iters: usize,
) -> Result<ValueTable, MdpError> {
    if policy.len() != mdp.n_states() {
        return Err(MdpError::BadPolicy(policy.len()));
    }
    for (s, row) in policy.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if row.len() != mdp.n_actions() || (sum - 1.0).abs() > 1e-9 || row.iter().any(|p| *p < 0.0) {
            return Err(MdpError::BadPolicy(s));
        }
    }
    let mut q = vec![vec![0.0; mdp.n_actions()]; mdp.n_states()];
    let mut residuals = Vec::new();
    for iter in 0..max_iters {
        let mut next_q = q.clone();
        let mut residual = 0.0f64;
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                let mut total = mdp.reward(s, a);
                for &(next, p) in mdp.successors(s, a) {
                    if !mdp.is_terminal(next) {
                        let ev: f64 = policy[next].iter().zip(&q[next]).map(|(pi, qv)| pi * qv).sum();
                        total += mdp.discount() * p * ev;
                    }
                }
                residual = residual.max((total - q[s][a]).abs());
                next_q[s][a] = total;
            }
        }
        q = next_q;
        residuals.push(residual);
        if residual <= tol {
            let v = (0..mdp.n_states())
                .map(|s| policy[s].iter().zip(&q[s]).map(|(pi, qv)| pi * qv).sum())
                .collect();
            return Ok(ValueTable { q, v, iterations: iter + 1, residuals });
        }
    }
    let residual = residuals.last().copied().unwrap_or(f64::INFINITY);
    Err(MdpError::NoConvergence { tol, iters: max_iters, residual })
}

fn fixed_point(
    mdp: &TabularMdp,
    tol: f64,
    max_iters: usize,
    state_value: impl Fn(&[f64]) -> f64,
) -> Result<ValueTable, MdpError> {
    let mut q = vec![vec![0.0; mdp.n_actions()]; mdp.n_states()];
    let mut residuals = Vec::new();
    for iter in 0..max_iters {
        let mut next_q = q.clone();
        let mut residual = 0.0f64;
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                let total = backup_value(mdp, &q, s, a, &state_value);
                residual = residual.max((total - q[s][a]).abs());
                next_q[s][a] = total;
            }
        }
        q = next_q;
        residuals.push(residual);
        if residual <= tol {
            let v = q.iter().map(|row| state_value(row)).collect();
            return Ok(ValueTable { q, v, iterations: iter + 1, residuals });
        }
    }
    Err(MdpError::NoConvergence {
        tol,
        iters: max_iters,
        residual: residuals.last().copied().unwrap_or(f64::INFINITY),
    })
}

/// One environment transition as seen by a learner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub done: bool,
}

/// Rolls one episode from a sampled initial state. The policy sees the state
/// and may consume randomness; the episode is cut at `max_len` steps (a
/// timeout, not a terminal).
pub fn run_episode<R: Rng>(
    mdp: &TabularMdp,
    policy: &mut impl FnMut(usize, &mut R) -> usize,
    rng: &mut R,
    max_len: usize,
) -> Vec<Step> {
    let start = mdp.sample_initial(rng);
    run_episode_from(mdp, start, policy, rng, max_len)
}

/// [`run_episode`] with an explicit start state.
pub fn run_episode_from<R: Rng>(
    mdp: &TabularMdp,
    start: usize,
    policy: &mut impl FnMut(usize, &mut R) -> usize,
    rng: &mut R,
    max_len: usize,
) -> Vec<Step> {
    let mut steps = Vec::new();
    let mut s = start;
    while steps.len() < max_len && !mdp.is_terminal(s) {
        let a = policy(s, rng);
        let (reward, next, done) = mdp.sample_step(s, a, rng);
        steps.push(Step { state: s, action: a, reward, next_state: next, done });
        if done {
            break;
        }
        s = next;
    }
    steps
}

/// On-disk MDP description: transitions as (s, a, s', prob, reward) tuples.
/// Per-successor rewards are folded into the expected reward r(s, a); for
/// deterministic rows the fold is exact.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub discount: f64,
    pub transitions: Vec<(usize, usize, usize, f64, f64)>,
    pub terminal: Vec<usize>,
    pub initial_dist: Vec<f64>,
}

impl MdpSpec {
    pub fn from_toml_str(text: &str) -> Result<Self, MdpError> {
        toml::from_str(text).map_err(|e| MdpError::Config(e.to_string()))
    }

    pub fn build(&self) -> Result<TabularMdp, MdpError> {
        let mut transition = vec![vec![Vec::new(); self.n_actions]; self.n_states];
        let mut reward = vec![vec![0.0; self.n_actions]; self.n_states];
        for &(s, a, next, p, r) in &self.transitions {
            if s >= self.n_states || next >= self.n_states {
                return Err(MdpError::StateOutOfRange(s.max(next), self.n_states));
            }
            if a >= self.n_actions {
                return Err(MdpError::Config(format!("action {a} out of range")));
            }
            transition[s][a].push((next, p));
            reward[s][a] += p * r;
        }
        let mut terminal = vec![false; self.n_states];
        for &t in &self.terminal {
            if t >= self.n_states {
                return Err(MdpError::StateOutOfRange(t, self.n_states));
            }
            terminal[t] = true;
            transition[t] = (0..self.n_actions).map(|_| vec![(t, 1.0)]).collect();
            reward[t] = vec![0.0; self.n_actions];
        }
        TabularMdp::new(transition, reward, terminal, self.discount, self.initial_dist.clone())
    }
}
