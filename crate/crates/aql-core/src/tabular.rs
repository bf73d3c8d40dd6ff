//! Tabular actor-critic with a configurable critic target.
//!
//! The actor is a softmax over per-state logits trained by the policy
//! gradient ∇_{θ_{s,a'}} log π(a|s) = 1(a = a') − π(a'|s), scaled by the
//! critic value. The critic target interpolates between the optimality
//! backup (max over successor actions) and the policy backup (expectation
//! under π), or uses a sampled successor action with an expectile update.
//! Gaussian noise added to successor values, one independent draw per
//! action, exposes the overestimation of the max: with equal successor
//! values and two actions the expected excess of the max target over the
//! noiseless one is γσ/√π.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::expectile::{loss_grad, ExpectileError, TauSchedule};
use crate::mdp::{sample_categorical, Step, TabularMdp};
use crate::seeding::derive_rng;

/// Gaussian target noise: one N(0, sigma²) draw per successor action per
/// target computation. `sigma = 0` disables the draws entirely.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self { sigma: 0.0 }
    }

    pub fn new(sigma: f64) -> Self {
        assert!(sigma >= 0.0 && sigma.is_finite(), "noise sigma must be nonnegative");
        Self { sigma }
    }

    fn is_active(&self) -> bool {
        self.sigma > 0.0
    }
}

/// How the critic target is formed from a transition.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetRule {
    /// r + γ Σ_a' π(a'|s') Q̃(s', a').
    Sarsa,
    /// r + γ max_a' Q̃(s', a').
    QLearning,
    /// w(t)·(max target) + (1 − w(t))·(expectation target), with the blend
    /// weight w following the schedule's shape from 1 down to 0. Both halves
    /// share one set of noise draws.
    AnnealedWeight(TauSchedule),
    /// Raw sampled target r + γ Q̃(s', a' ~ π(·|s')), consumed by the
    /// expectile critic update with τ from the schedule.
    ExpectileTabular(TauSchedule),
}

impl TargetRule {
    /// Expectile rule with the schedule checked against the usable range
    /// τ ∈ [0.5, 1).
    pub fn expectile(schedule: TauSchedule) -> Result<Self, ExpectileError> {
        if schedule.tau_init() < 0.5 || schedule.tau_final() < 0.5 {
            return Err(ExpectileError::InvalidSchedule(format!(
                "expectile rule needs tau in [0.5, 1), got init {} final {}",
                schedule.tau_init(),
                schedule.tau_final()
            )));
        }
        Ok(Self::ExpectileTabular(schedule))
    }

    pub fn is_expectile(&self) -> bool {
        matches!(self, Self::ExpectileTabular(_))
    }
}

/// Critic table, actor logits, and the shared step size.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularAgentState {
    pub q: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
    pub step_size: f64,
    pub epsilon: f64,
}

impl TabularAgentState {
    /// Zero-initialised tables: the initial policy is uniform and all values
    /// start at 0.
    pub fn new(n_states: usize, n_actions: usize, step_size: f64, epsilon: f64) -> Self {
        assert!(step_size > 0.0 && (0.0..=1.0).contains(&epsilon));
        Self {
            q: vec![vec![0.0; n_actions]; n_states],
            logits: vec![vec![0.0; n_actions]; n_states],
            step_size,
            epsilon,
        }
    }

    /// Defaults used throughout: step size 1e-3, ε-greedy 0.1.
    pub fn for_mdp(mdp: &TabularMdp) -> Self {
        Self::new(mdp.n_states(), mdp.n_actions(), 1e-3, 0.1)
    }

    /// Softmax of the state's logits, stabilised by subtracting the row max.
    pub fn policy_probs(&self, s: usize) -> Vec<f64> {
        let row = &self.logits[s];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&l| (l - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }

    /// ε-greedy over the softmax: uniform with probability ε, otherwise a
    /// sample from π(·|s).
    pub fn select_action<R: Rng>(&self, s: usize, rng: &mut R) -> usize {
        if rng.gen::<f64>() < self.epsilon {
            rng.gen_range(0..self.q[s].len())
        } else {
            sample_categorical(&self.policy_probs(s), rng)
        }
    }

    /// Plain TD move toward the target: Q ← Q + α (target − Q).
    pub fn update_critic(&mut self, s: usize, a: usize, target: f64) {
        let u = target - self.q[s][a];
        self.q[s][a] += self.step_size * u;
    }

    /// Expectile TD move: Q ← Q + α · 2|τ − 1(u < 0)|·u with u the residual
    /// of the sampled target. At τ = 0.5 this is exactly
    /// [`update_critic`](Self::update_critic) at the same step size.
    pub fn update_critic_expectile(&mut self, s: usize, a: usize, sampled_target: f64, tau: f64) {
        let u = sampled_target - self.q[s][a];
        self.q[s][a] += self.step_size * loss_grad(tau, u);
    }

    /// Policy-gradient step on the visited state using the current critic
    /// value Q(s, a).
    pub fn update_actor(&mut self, s: usize, a: usize) {
        self.update_actor_with_q(s, a, self.q[s][a]);
    }

    /// Policy-gradient step with an explicit critic value; training passes
    /// the pre-update Q(s, a) so the critic step does not leak into the same
    /// step's actor gradient.
    pub fn update_actor_with_q(&mut self, s: usize, a: usize, q_sa: f64) {
        let probs = self.policy_probs(s);
        for (a2, p) in probs.iter().enumerate() {
            let indicator = if a2 == a { 1.0 } else { 0.0 };
            self.logits[s][a2] += self.step_size * (indicator - p) * q_sa;
        }
    }
}

/// Critic target for one transition. Terminal transitions yield the reward
/// exactly and consume no randomness. Otherwise each successor action value
/// gets one independent noise draw (in action order), shared by every piece
/// of a blended target; the expectile rule then draws a' ~ π(·|s').
pub fn compute_target<R: Rng>(
    rule: &TargetRule,
    agent: &TabularAgentState,
    discount: f64,
    step: &Step,
    noise: &NoiseSpec,
    t: u64,
    rng: &mut R,
) -> f64 {
    if step.done {
        return step.reward;
    }
    let s2 = step.next_state;
    let noisy: Vec<f64> = agent.q[s2]
        .iter()
        .map(|&q| {
            if noise.is_active() {
                let eps: f64 = StandardNormal.sample(rng);
                q + noise.sigma * eps
            } else {
                q
            }
        })
        .collect();

    let max_value = || noisy.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let expectation = || -> f64 {
        agent
            .policy_probs(s2)
            .iter()
            .zip(&noisy)
            .map(|(p, q)| p * q)
            .sum()
    };

    match rule {
        TargetRule::Sarsa => step.reward + discount * expectation(),
        TargetRule::QLearning => step.reward + discount * max_value(),
        TargetRule::AnnealedWeight(schedule) => {
            let w = schedule.weight_saturating(t);
            let ql = step.reward + discount * max_value();
            let sarsa = step.reward + discount * expectation();
            w * ql + (1.0 - w) * sarsa
        }
        TargetRule::ExpectileTabular(_) => {
            let a2 = sample_categorical(&agent.policy_probs(s2), rng);
            step.reward + discount * noisy[a2]
        }
    }
}

/// Step budget and bookkeeping for a tabular run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TabularRunConfig {
    pub steps: u64,
    pub seed: u64,
    pub log_every: u64,
    /// Episodes are cut (without a terminal bootstrap) at this many steps.
    pub episode_cap: usize,
}

impl TabularRunConfig {
    pub fn new(steps: u64, seed: u64, log_every: u64) -> Self {
        Self { steps, seed, log_every, episode_cap: 100 }
    }
}

/// One logged row of a tabular run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TabularRow {
    pub step: u64,
    pub q_s0_a0: f64,
    pub q_s0_a1: f64,
    /// Undiscounted return of the most recently completed episode; 0 until
    /// the first episode finishes.
    pub episode_return: f64,
}

/// Per-step metric log of a tabular run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TabularTrace {
    pub rows: Vec<TabularRow>,
}

impl TabularTrace {
    pub const CSV_HEADER: &'static str = "step,q_s0_a0,q_s0_a1,episode_return";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.step, r.q_s0_a0, r.q_s0_a1, r.episode_return));
        }
        out
    }

    /// Values of one named column, in logged order.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let pick: fn(&TabularRow) -> f64 = match name {
            "q_s0_a0" => |r| r.q_s0_a0,
            "q_s0_a1" => |r| r.q_s0_a1,
            "episode_return" => |r| r.episode_return,
            _ => return None,
        };
        Some(self.rows.iter().map(pick).collect())
    }

    pub fn steps(&self) -> Vec<u64> {
        self.rows.iter().map(|r| r.step).collect()
    }
}

/// Runs the actor-critic on the MDP for a fixed number of environment steps.
///
/// Per step: select an action (ε-greedy over the softmax), sample the
/// transition, form the critic target, update the critic, then update the
/// actor with the pre-update Q(s, a). Episodes restart from the MDP's
/// initial distribution on termination or at the episode cap.
pub fn train_tabular(
    mdp: &TabularMdp,
    rule: &TargetRule,
    noise: NoiseSpec,
    cfg: &TabularRunConfig,
) -> (TabularAgentState, TabularTrace) {
    let mut agent = TabularAgentState::for_mdp(mdp);
    let mut rng = derive_rng(cfg.seed, "tabular-train", 0);
    let mut trace = TabularTrace::default();
    let mut s = mdp.sample_initial(&mut rng);
    let mut episode_return = 0.0;
    let mut episode_len = 0usize;
    let mut last_return = 0.0;

    for t in 0..cfg.steps {
        let a = agent.select_action(s, &mut rng);
        let (reward, next, done) = mdp.sample_step(s, a, &mut rng);
        let step = Step { state: s, action: a, reward, next_state: next, done };

        let q_pre = agent.q[s][a];
        let target = compute_target(rule, &agent, mdp.discount(), &step, &noise, t, &mut rng);
        match rule {
            TargetRule::ExpectileTabular(schedule) => {
                let tau = schedule.value_saturating(t);
                agent.update_critic_expectile(s, a, target, tau);
            }
            _ => agent.update_critic(s, a, target),
        }
        agent.update_actor_with_q(s, a, q_pre);

        episode_return += reward;
        episode_len += 1;
        if done || episode_len >= cfg.episode_cap {
            if done {
                last_return = episode_return;
            }
            episode_return = 0.0;
            episode_len = 0;
            s = mdp.sample_initial(&mut rng);
        } else {
            s = next;
        }

        if t % cfg.log_every == 0 || t + 1 == cfg.steps {
            trace.rows.push(TabularRow {
                step: t,
                q_s0_a0: agent.q[0][0],
                q_s0_a1: agent.q[0][1],
                episode_return: last_return,
            });
        }
    }
    (agent, trace)
}
