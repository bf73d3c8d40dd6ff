//! Continuous-control actor-critic learners with an annealed-optimism
//! critic.
//!
//! Three closely related algorithms share one training loop: a
//! deterministic twin-critic learner with target smoothing, a stochastic
//! entropy-regularized learner, and a variant that maxes the bootstrap over
//! several policy draws instead of using an entropy bonus. The critic can
//! be trained with either a plain squared loss or an asymmetric expectile
//! loss whose level follows a per-step schedule; at level 0.5 the two are
//! the same update, which the tests pin down bitwise.

pub mod env;
pub mod policy;
pub mod probes;
pub mod replay;
pub mod targets;

use rand::Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::expectile::TauSchedule;
use crate::net::{Adam, MlpNet, NetError, TargetTracker};
use crate::seeding::derive_rng;

pub use env::{two_peak_optimum, two_peak_reward, ToyEnv};
pub use policy::{
    actor_grads_sac, actor_grads_td3, min_twin_critic, net_critic, sac_mean_action,
    sample_policy, td3_action, CriticEval,
};
pub use probes::{bias_probe, entropy_probe};
pub use replay::{ReplayBuffer, Transition};
pub use targets::{
    compute_target_maxbackup, compute_target_sac, compute_target_td3, critic_loss_expectile,
    critic_loss_squared, min_q,
};

#[derive(Debug, Error)]
pub enum ContinuousError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },
    #[error("entropy probe needs a stochastic policy head")]
    DeterministicEntropy,
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    AqTd3,
    AqSac,
    MaxbackupSac,
}

impl Algo {
    pub fn is_stochastic(self) -> bool {
        !matches!(self, Algo::AqTd3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticLossKind {
    Expectile,
    Squared,
}

/// Hyperparameters for [`train_continuous`]. `Default` carries the full
/// reference settings; [`AgentConfig::desk_scale`] shrinks network, batch,
/// and warmup for runs that must finish in seconds.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub algo: Algo,
    pub critic_loss: CriticLossKind,
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    pub discount: f64,
    /// Target-network EMA retention per update.
    pub rho: f64,
    /// Critic updates per actor/target update.
    pub policy_delay: usize,
    /// Deterministic-actor exploration noise (std).
    pub explore_std: f64,
    /// Target-action smoothing noise (std) and its clip.
    pub smooth_std: f64,
    pub smooth_clip: f64,
    pub entropy_alpha: f64,
    /// Policy draws per maxbackup target.
    pub n_backup_samples: usize,
    pub replay_capacity: usize,
    pub warmup_steps: usize,
    pub steps: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub probe_episodes: usize,
    pub entropy_samples: usize,
    pub tau: TauSchedule,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            algo: Algo::AqSac,
            critic_loss: CriticLossKind::Expectile,
            hidden: vec![256, 256],
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            batch_size: 256,
            discount: 0.99,
            rho: 0.995,
            policy_delay: 1,
            explore_std: 0.1,
            smooth_std: 0.2,
            smooth_clip: 0.5,
            entropy_alpha: 0.1,
            n_backup_samples: 4,
            replay_capacity: 100_000,
            warmup_steps: 1000,
            steps: 10_000,
            eval_every: 1000,
            eval_episodes: 10,
            probe_episodes: 10,
            entropy_samples: 64,
            tau: TauSchedule::constant(0.5).expect("0.5 is a valid constant level"),
            seed: 0,
        }
    }
}

impl AgentConfig {
    /// Reference defaults for a deterministic-actor run (delayed policy and
    /// target updates).
    pub fn for_algo(algo: Algo) -> Self {
        let mut cfg = Self { algo, ..Self::default() };
        if algo == Algo::AqTd3 {
            cfg.policy_delay = 2;
        }
        cfg
    }

    /// Shrink to sizes that train in seconds on one core.
    pub fn desk_scale(mut self) -> Self {
        self.hidden = vec![64, 64];
        self.batch_size = 64;
        self.warmup_steps = 200;
        self.replay_capacity = 20_000;
        self
    }

    pub fn validate(&self) -> Result<(), ContinuousError> {
        let bad = |msg: &str| Err(ContinuousError::Config(msg.into()));
        if !(self.actor_lr > 0.0 && self.actor_lr.is_finite()) {
            return bad("actor_lr must be positive and finite");
        }
        if !(self.critic_lr > 0.0 && self.critic_lr.is_finite()) {
            return bad("critic_lr must be positive and finite");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(0.0..1.0).contains(&self.discount) {
            return bad("discount must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return bad("rho must lie in [0, 1]");
        }
        if self.policy_delay == 0 {
            return bad("policy_delay must be positive");
        }
        if self.explore_std < 0.0 || self.smooth_std < 0.0 || self.smooth_clip < 0.0 {
            return bad("noise levels cannot be negative");
        }
        if self.entropy_alpha < 0.0 {
            return bad("entropy_alpha cannot be negative");
        }
        if self.n_backup_samples == 0 {
            return bad("n_backup_samples must be positive");
        }
        if self.hidden.is_empty() || self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden needs at least one positive width");
        }
        if self.steps == 0 {
            return bad("steps must be positive");
        }
        if self.warmup_steps >= self.steps {
            return bad("warmup_steps must be below steps");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive");
        }
        if self.eval_episodes < 2 || self.probe_episodes < 2 {
            return bad("eval_episodes and probe_episodes need at least two episodes");
        }
        if self.entropy_samples == 0 {
            return bad("entropy_samples must be positive");
        }
        if self.critic_loss == CriticLossKind::Expectile && self.tau.tau_final() < 0.5 {
            return bad("expectile critic needs tau in [0.5, 1)");
        }
        Ok(())
    }
}

/// One evaluation record; `entropy` is NaN for deterministic policies.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousRow {
    pub step: usize,
    pub eval_return: f64,
    pub tau: f64,
    pub critic_loss: f64,
    pub bias: f64,
    pub bias_se: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContinuousTrace {
    pub rows: Vec<ContinuousRow>,
}

impl ContinuousTrace {
    pub const CSV_HEADER: &'static str = "step,eval_return,tau,critic_loss,bias,bias_se,entropy";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.step, r.eval_return, r.tau, r.critic_loss, r.bias, r.bias_se, r.entropy
            ));
        }
        out
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let pick: fn(&ContinuousRow) -> f64 = match name {
            "step" => |r| r.step as f64,
            "eval_return" => |r| r.eval_return,
            "tau" => |r| r.tau,
            "critic_loss" => |r| r.critic_loss,
            "bias" => |r| r.bias,
            "bias_se" => |r| r.bias_se,
            "entropy" => |r| r.entropy,
            _ => return None,
        };
        Some(self.rows.iter().map(pick).collect())
    }
}

#[derive(Debug, Clone)]
pub struct ContinuousOutcome {
    pub actor: MlpNet,
    pub critic1: MlpNet,
    pub critic2: MlpNet,
    pub trace: ContinuousTrace,
    pub final_eval: f64,
}

/// Deterministic evaluation action for the given algorithm.
pub fn eval_action(algo: Algo, actor: &MlpNet, state: &[f64], a_max: f64, action_dim: usize) -> Vec<f64> {
    if algo.is_stochastic() {
        sac_mean_action(actor, state, a_max, action_dim)
    } else {
        td3_action(actor, state, a_max)
    }
}

fn undiscounted_rollout<R: Rng>(
    env: &ToyEnv,
    policy: impl Fn(&[f64]) -> Vec<f64>,
    rng: &mut R,
) -> f64 {
    let mut state = env.reset(rng);
    let mut total = 0.0;
    for t_ep in 0..env.horizon() {
        let action = policy(&state);
        let (next, reward, done) = env.step(&state, &action, t_ep, rng);
        total += reward;
        if done {
            break;
        }
        state = next;
    }
    total
}

/// Off-policy training on one environment. Evaluation, the optimism probe,
/// and (for stochastic policies) the entropy probe run every `eval_every`
/// steps on their own derived rng streams, so the training trajectory is a
/// pure function of the config.
pub fn train_continuous(env: &ToyEnv, cfg: &AgentConfig) -> Result<ContinuousOutcome, ContinuousError> {
    cfg.validate()?;
    let a_max = env.action_limit();
    let sdim = env.state_dim();
    let adim = env.action_dim();

    let mut actor_sizes = vec![sdim];
    actor_sizes.extend(&cfg.hidden);
    actor_sizes.push(if cfg.algo.is_stochastic() { 2 * adim } else { adim });
    let mut critic_sizes = vec![sdim + adim];
    critic_sizes.extend(&cfg.hidden);
    critic_sizes.push(1);

    let mut init_rng = derive_rng(cfg.seed, "cont-init", 0);
    let mut actor = MlpNet::new(&actor_sizes, &mut init_rng);
    let mut critic1 = MlpNet::new(&critic_sizes, &mut init_rng);
    let mut critic2 = MlpNet::new(&critic_sizes, &mut init_rng);
    let mut target_actor = TargetTracker::new(&actor, cfg.rho);
    let mut target_c1 = TargetTracker::new(&critic1, cfg.rho);
    let mut target_c2 = TargetTracker::new(&critic2, cfg.rho);
    let mut actor_opt = Adam::new(cfg.actor_lr, actor.n_params());
    let mut c1_opt = Adam::new(cfg.critic_lr, critic1.n_params());
    let mut c2_opt = Adam::new(cfg.critic_lr, critic2.n_params());

    let mut replay = ReplayBuffer::new(cfg.replay_capacity);
    let mut train_rng = derive_rng(cfg.seed, "cont-train", 0);
    let mut state = env.reset(&mut train_rng);
    let mut t_ep = 0usize;

    let mut trace = ContinuousTrace::default();
    let mut loss_acc = 0.0;
    let mut loss_n = 0usize;
    let mut critic_updates = 0usize;
    let mut eval_idx = 0u64;
    let diverged = |step: usize, detail: String| ContinuousError::Diverged { step, detail };

    for step in 0..cfg.steps {
        let tau_t = cfg.tau.value_saturating(step as u64);

        let action = if step < cfg.warmup_steps {
            (0..adim).map(|_| train_rng.gen_range(-a_max..a_max)).collect()
        } else if cfg.algo.is_stochastic() {
            sample_policy(&actor, &state, a_max, &mut train_rng).action
        } else {
            policy::td3_explore_action(&actor, &state, a_max, cfg.explore_std, &mut train_rng)
        };
        let (next_state, reward, done) = env.step(&state, &action, t_ep, &mut train_rng);
        replay.push(Transition {
            state: state.clone(),
            action,
            reward,
            next_state: next_state.clone(),
            done,
        });
        if done {
            state = env.reset(&mut train_rng);
            t_ep = 0;
        } else {
            state = next_state;
            t_ep += 1;
        }

        if step >= cfg.warmup_steps && replay.len() >= cfg.batch_size {
            let idx = replay.sample_indices(cfg.batch_size, &mut train_rng);
            let targets: Vec<f64> = idx
                .iter()
                .map(|&i| {
                    let tr = replay.get(i);
                    match cfg.algo {
                        Algo::AqTd3 => compute_target_td3(
                            target_c1.net(),
                            target_c2.net(),
                            target_actor.net(),
                            tr.reward,
                            &tr.next_state,
                            tr.done,
                            cfg.discount,
                            a_max,
                            cfg.smooth_std,
                            cfg.smooth_clip,
                            &mut train_rng,
                        ),
                        Algo::AqSac => compute_target_sac(
                            target_c1.net(),
                            target_c2.net(),
                            &actor,
                            tr.reward,
                            &tr.next_state,
                            tr.done,
                            cfg.discount,
                            a_max,
                            cfg.entropy_alpha,
                            &mut train_rng,
                        ),
                        Algo::MaxbackupSac => compute_target_maxbackup(
                            target_c1.net(),
                            target_c2.net(),
                            &actor,
                            tr.reward,
                            &tr.next_state,
                            tr.done,
                            cfg.discount,
                            a_max,
                            cfg.n_backup_samples,
                            &mut train_rng,
                        ),
                    }
                })
                .collect();

            let scale = 1.0 / cfg.batch_size as f64;
            let mut g1 = vec![0.0; critic1.n_params()];
            let mut g2 = vec![0.0; critic2.n_params()];
            let mut batch_loss = 0.0;
            let mut input = Vec::with_capacity(sdim + adim);
            for (&i, &y) in idx.iter().zip(&targets) {
                let tr = replay.get(i);
                input.clear();
                input.extend_from_slice(&tr.state);
                input.extend_from_slice(&tr.action);
                for (critic, grads) in [(&critic1, &mut g1), (&critic2, &mut g2)] {
                    let (out, cache) = critic.forward_cached(&input);
                    let (loss, dq) = match cfg.critic_loss {
                        CriticLossKind::Expectile => critic_loss_expectile(out[0], y, tau_t),
                        CriticLossKind::Squared => critic_loss_squared(out[0], y),
                    };
                    batch_loss += 0.5 * scale * loss;
                    critic.backward_into(&cache, &[dq * scale], grads);
                }
            }
            c1_opt
                .step(critic1.params_mut(), &g1)
                .map_err(|e| diverged(step, format!("first critic update: {e}")))?;
            c2_opt
                .step(critic2.params_mut(), &g2)
                .map_err(|e| diverged(step, format!("second critic update: {e}")))?;
            critic_updates += 1;
            loss_acc += batch_loss;
            loss_n += 1;

            if critic_updates % cfg.policy_delay == 0 {
                let states_batch: Vec<Vec<f64>> =
                    idx.iter().map(|&i| replay.get(i).state.clone()).collect();
                let a_grads = if cfg.algo.is_stochastic() {
                    let xis: Vec<Vec<f64>> = (0..states_batch.len())
                        .map(|_| {
                            (0..adim)
                                .map(|_| {
                                    use rand_distr::{Distribution, StandardNormal};
                                    StandardNormal.sample(&mut train_rng)
                                })
                                .collect()
                        })
                        .collect();
                    let critic = min_twin_critic(&critic1, &critic2);
                    actor_grads_sac(&actor, &states_batch, &xis, a_max, cfg.entropy_alpha, &critic).0
                } else {
                    actor_grads_td3(&actor, &states_batch, a_max, &net_critic(&critic1)).0
                };
                actor_opt
                    .step(actor.params_mut(), &a_grads)
                    .map_err(|e| diverged(step, format!("actor update: {e}")))?;
                target_c1.update(&critic1)?;
                target_c2.update(&critic2)?;
                if !cfg.algo.is_stochastic() {
                    target_actor.update(&actor)?;
                }
            }

            if !(actor.all_finite() && critic1.all_finite() && critic2.all_finite()) {
                return Err(diverged(step, "non-finite parameters".into()));
            }
        }

        if step % cfg.eval_every == 0 || step == cfg.steps - 1 {
            let mut eval_rng = derive_rng(cfg.seed, "cont-eval", eval_idx);
            let mut probe_rng = derive_rng(cfg.seed, "cont-probe", eval_idx);
            eval_idx += 1;

            let greedy = |s: &[f64]| eval_action(cfg.algo, &actor, s, a_max, adim);
            let eval_return = (0..cfg.eval_episodes)
                .map(|_| undiscounted_rollout(env, greedy, &mut eval_rng))
                .sum::<f64>()
                / cfg.eval_episodes as f64;
            let (bias, bias_se) = bias_probe(
                env,
                greedy,
                &critic1,
                &critic2,
                cfg.discount,
                cfg.probe_episodes,
                &mut probe_rng,
            );
            let entropy = if cfg.algo.is_stochastic() {
                let states: Vec<Vec<f64>> =
                    (0..cfg.probe_episodes).map(|_| env.reset(&mut probe_rng)).collect();
                entropy_probe(&actor, &states, a_max, adim, cfg.entropy_samples, &mut probe_rng)?
            } else {
                f64::NAN
            };

            trace.rows.push(ContinuousRow {
                step,
                eval_return,
                tau: tau_t,
                critic_loss: if loss_n > 0 { loss_acc / loss_n as f64 } else { 0.0 },
                bias,
                bias_se,
                entropy,
            });
            loss_acc = 0.0;
            loss_n = 0;
        }
    }

    let final_eval = trace.rows.last().expect("at least one evaluation row").eval_return;
    Ok(ContinuousOutcome { actor, critic1, critic2, trace, final_eval })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expectile::{ScheduleKind, TauSchedule};

    fn tiny_cfg(algo: Algo) -> AgentConfig {
        AgentConfig {
            algo,
            hidden: vec![8, 8],
            batch_size: 16,
            warmup_steps: 32,
            replay_capacity: 1024,
            steps: 250,
            eval_every: 50,
            eval_episodes: 4,
            probe_episodes: 4,
            entropy_samples: 16,
            policy_delay: if algo == Algo::AqTd3 { 2 } else { 1 },
            tau: TauSchedule::new(ScheduleKind::Linear, 0.9, 0.5, 250, 5.0).unwrap(),
            seed: 7,
            ..AgentConfig::default()
        }
    }

    #[test]
    fn default_config_validates() {
        AgentConfig::default().validate().unwrap();
        AgentConfig::for_algo(Algo::AqTd3).desk_scale().validate().unwrap();
        assert_eq!(AgentConfig::for_algo(Algo::AqTd3).policy_delay, 2);
    }

    #[test]
    fn config_rejects_bad_values() {
        let bad = |f: fn(&mut AgentConfig)| {
            let mut cfg = AgentConfig::default();
            f(&mut cfg);
            assert!(cfg.validate().is_err(), "accepted bad config");
        };
        bad(|c| c.batch_size = 0);
        bad(|c| c.discount = 1.0);
        bad(|c| c.rho = 1.5);
        bad(|c| c.policy_delay = 0);
        bad(|c| c.hidden = vec![]);
        bad(|c| c.hidden = vec![8, 0]);
        bad(|c| c.warmup_steps = 10_000);
        bad(|c| c.eval_episodes = 1);
        bad(|c| c.actor_lr = f64::NAN);
        bad(|c| c.tau = TauSchedule::constant(0.3).unwrap());
    }

    #[test]
    fn config_parses_from_toml_and_rejects_unknown_keys() {
        let cfg: AgentConfig = toml::from_str(
            r#"
            algo = "maxbackup_sac"
            critic_loss = "squared"
            hidden = [32, 32]
            n_backup_samples = 8
            tau = { kind = "constant", tau_init = 0.5 }
            "#,
        )
        .unwrap();
        assert_eq!(cfg.algo, Algo::MaxbackupSac);
        assert_eq!(cfg.critic_loss, CriticLossKind::Squared);
        assert_eq!(cfg.hidden, vec![32, 32]);
        assert_eq!(cfg.n_backup_samples, 8);
        assert_eq!(cfg.batch_size, 256);

        let err: Result<AgentConfig, _> = toml::from_str("batch_sizes = 64");
        assert!(err.is_err());
    }

    #[test]
    fn sac_smoke_run_produces_trace() {
        let env = ToyEnv::two_peak_bandit();
        let cfg = tiny_cfg(Algo::AqSac);
        let out = train_continuous(&env, &cfg).unwrap();
        // Rows at 0, 50, ..., 200 plus the final step.
        assert_eq!(out.trace.rows.len(), 6);
        assert_eq!(out.trace.rows.last().unwrap().step, 249);
        assert!(out.actor.all_finite());
        for r in &out.trace.rows {
            assert!(r.eval_return.is_finite());
            assert!(r.bias.is_finite());
            assert!(r.entropy.is_finite(), "stochastic runs log entropy");
            assert!((0.5..=0.9).contains(&r.tau));
        }
        let csv = out.trace.to_csv();
        assert!(csv.starts_with(ContinuousTrace::CSV_HEADER));
        assert_eq!(csv.lines().count(), 7);
        assert_eq!(out.trace.column("eval_return").unwrap().len(), 6);
        assert!(out.trace.column("nope").is_none());
    }

    #[test]
    fn td3_smoke_run_logs_nan_entropy() {
        let env = ToyEnv::point_mass_reach();
        let mut cfg = tiny_cfg(Algo::AqTd3);
        cfg.tau = TauSchedule::constant(0.5).unwrap();
        let out = train_continuous(&env, &cfg).unwrap();
        for r in &out.trace.rows {
            assert!(r.entropy.is_nan());
            assert!(r.bias.is_finite());
        }
        assert!(out.trace.to_csv().contains("NaN"));
    }

    #[test]
    fn maxbackup_smoke_run_trains() {
        let env = ToyEnv::two_peak_bandit();
        let mut cfg = tiny_cfg(Algo::MaxbackupSac);
        cfg.n_backup_samples = 3;
        let out = train_continuous(&env, &cfg).unwrap();
        assert!(out.final_eval.is_finite());
    }

    #[test]
    fn training_is_reproducible_and_seed_sensitive() {
        let env = ToyEnv::two_peak_bandit();
        let cfg = tiny_cfg(Algo::AqSac);
        let a = train_continuous(&env, &cfg).unwrap();
        let b = train_continuous(&env, &cfg).unwrap();
        assert_eq!(a.trace.to_csv(), b.trace.to_csv());
        assert_eq!(a.actor.params(), b.actor.params());
        assert_eq!(a.critic1.params(), b.critic1.params());

        let mut other = cfg;
        other.seed = 8;
        let c = train_continuous(&env, &other).unwrap();
        assert_ne!(a.trace.to_csv(), c.trace.to_csv());
    }

    #[test]
    fn expectile_at_half_matches_squared_loss_bitwise() {
        let env = ToyEnv::two_peak_bandit();
        for algo in [Algo::AqSac, Algo::AqTd3] {
            let mut cfg = tiny_cfg(algo);
            cfg.tau = TauSchedule::constant(0.5).unwrap();
            cfg.critic_loss = CriticLossKind::Expectile;
            let expectile = train_continuous(&env, &cfg).unwrap();
            cfg.critic_loss = CriticLossKind::Squared;
            let squared = train_continuous(&env, &cfg).unwrap();
            for (a, b) in expectile.actor.params().iter().zip(squared.actor.params()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
            for (a, b) in expectile.critic1.params().iter().zip(squared.critic1.params()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
            assert_eq!(expectile.trace.to_csv(), squared.trace.to_csv());
        }
    }

    #[test]
    fn runaway_learning_rate_reports_divergence() {
        let env = ToyEnv::two_peak_bandit();
        let mut cfg = tiny_cfg(Algo::AqSac);
        cfg.critic_lr = 1e200;
        cfg.rho = 0.0;
        match train_continuous(&env, &cfg) {
            Err(ContinuousError::Diverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn tau_column_follows_schedule() {
        let env = ToyEnv::two_peak_bandit();
        let cfg = tiny_cfg(Algo::AqSac);
        let out = train_continuous(&env, &cfg).unwrap();
        for r in &out.trace.rows {
            assert_eq!(r.tau, cfg.tau.value_saturating(r.step as u64));
        }
    }
}
