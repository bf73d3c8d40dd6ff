//! Bootstrap targets for twin-critic learners and the critic loss pair.
//!
//! All three target rules return exactly `reward` on terminal transitions
//! without touching the generator, so terminal and non-terminal code paths
//! stay reproducible independently of each other.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::expectile;
use crate::net::MlpNet;
use crate::continuous::policy::{sample_policy, td3_action};

/// Smaller of the two critic values at (state, action).
pub fn min_q(critic1: &MlpNet, critic2: &MlpNet, state: &[f64], action: &[f64]) -> f64 {
    let mut input = Vec::with_capacity(state.len() + action.len());
    input.extend_from_slice(state);
    input.extend_from_slice(action);
    critic1.forward(&input)[0].min(critic2.forward(&input)[0])
}

/// Deterministic target action with clipped smoothing noise:
/// y = r + γ·min(Q̄₁, Q̄₂)(s', clip(μ̄(s') + clip(ε, ±c), ±a_max)).
#[allow(clippy::too_many_arguments)]
pub fn compute_target_td3<R: Rng>(
    target_critic1: &MlpNet,
    target_critic2: &MlpNet,
    target_actor: &MlpNet,
    reward: f64,
    next_state: &[f64],
    done: bool,
    discount: f64,
    a_max: f64,
    smooth_std: f64,
    smooth_clip: f64,
    rng: &mut R,
) -> f64 {
    if done {
        return reward;
    }
    let action: Vec<f64> = td3_action(target_actor, next_state, a_max)
        .into_iter()
        .map(|a| {
            let eps: f64 = StandardNormal.sample(rng);
            let noise = (smooth_std * eps).clamp(-smooth_clip, smooth_clip);
            (a + noise).clamp(-a_max, a_max)
        })
        .collect();
    reward + discount * min_q(target_critic1, target_critic2, next_state, &action)
}

/// Entropy-regularized stochastic target:
/// y = r + γ·(min(Q̄₁, Q̄₂)(s', a') − α·log π(a'|s')), a' ~ π(·|s').
#[allow(clippy::too_many_arguments)]
pub fn compute_target_sac<R: Rng>(
    target_critic1: &MlpNet,
    target_critic2: &MlpNet,
    actor: &MlpNet,
    reward: f64,
    next_state: &[f64],
    done: bool,
    discount: f64,
    a_max: f64,
    entropy_alpha: f64,
    rng: &mut R,
) -> f64 {
    if done {
        return reward;
    }
    let sample = sample_policy(actor, next_state, a_max, rng);
    let q = min_q(target_critic1, target_critic2, next_state, &sample.action);
    reward + discount * (q - entropy_alpha * sample.log_prob)
}

/// Max over `n_samples` policy draws of the twin minimum, no entropy term:
/// y = r + γ·max_j min(Q̄₁, Q̄₂)(s', a'_j). One draw reduces to the
/// entropy-free stochastic target.
#[allow(clippy::too_many_arguments)]
pub fn compute_target_maxbackup<R: Rng>(
    target_critic1: &MlpNet,
    target_critic2: &MlpNet,
    actor: &MlpNet,
    reward: f64,
    next_state: &[f64],
    done: bool,
    discount: f64,
    a_max: f64,
    n_samples: usize,
    rng: &mut R,
) -> f64 {
    assert!(n_samples >= 1, "maxbackup needs at least one sample");
    if done {
        return reward;
    }
    let mut best = f64::NEG_INFINITY;
    for _ in 0..n_samples {
        let sample = sample_policy(actor, next_state, a_max, rng);
        best = best.max(min_q(target_critic1, target_critic2, next_state, &sample.action));
    }
    reward + discount * best
}

/// Asymmetric critic loss on the residual u = target − q: level τ weights
/// the side where the critic falls short, so τ > 0.5 drives optimism.
/// Returns (loss, ∂loss/∂q).
pub fn critic_loss_expectile(q: f64, target: f64, tau: f64) -> (f64, f64) {
    let u = target - q;
    (expectile::loss(tau, u), -expectile::loss_grad(tau, u))
}

/// Plain 0.5·u² regression loss. Returns (loss, ∂loss/∂q).
pub fn critic_loss_squared(q: f64, target: f64) -> (f64, f64) {
    let u = q - target;
    (0.5 * u * u, u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continuous::policy::sample_policy_with_noise;
    use crate::seeding::derive_rng;
    use rand::RngCore;

    fn constant_critic(dims: usize, value: f64) -> MlpNet {
        let mut net = MlpNet::zeros(&[dims, 1]);
        let last = net.n_params() - 1;
        net.params_mut()[last] = value;
        net
    }

    /// Critic whose value is the action coordinate itself.
    fn action_reader(state_dim: usize) -> MlpNet {
        let mut net = MlpNet::zeros(&[state_dim + 1, 1]);
        net.params_mut()[state_dim] = 1.0;
        net
    }

    #[test]
    fn terminal_targets_return_reward_without_rng_draws() {
        let mut rng = derive_rng(0, "targets", 0);
        let c1 = constant_critic(2, 3.0);
        let c2 = constant_critic(2, 5.0);
        let det_actor = MlpNet::zeros(&[1, 1]);
        let sto_actor = MlpNet::zeros(&[1, 2]);
        let s = vec![0.4];

        let mut probe = rng.clone();
        let before = probe.next_u64();

        let td3 = compute_target_td3(&c1, &c2, &det_actor, 0.7, &s, true, 0.99, 1.0, 0.2, 0.5, &mut rng);
        let sac = compute_target_sac(&c1, &c2, &sto_actor, 0.7, &s, true, 0.99, 1.0, 0.1, &mut rng);
        let mb = compute_target_maxbackup(&c1, &c2, &sto_actor, 0.7, &s, true, 0.99, 1.0, 4, &mut rng);
        assert_eq!(td3, 0.7);
        assert_eq!(sac, 0.7);
        assert_eq!(mb, 0.7);
        assert_eq!(rng.next_u64(), before);
    }

    #[test]
    fn td3_target_bootstraps_twin_minimum() {
        let c1 = constant_critic(2, 3.0);
        let c2 = constant_critic(2, 5.0);
        let actor = MlpNet::zeros(&[1, 1]);
        let mut rng = derive_rng(1, "targets", 0);
        let y = compute_target_td3(&c1, &c2, &actor, 0.7, &[0.4], false, 0.9, 1.0, 0.2, 0.5, &mut rng);
        assert!((y - (0.7 + 0.9 * 3.0)).abs() < 1e-12);
    }

    #[test]
    fn td3_smoothing_noise_is_clipped_around_target_action() {
        // Critic reads back the smoothed action, so y reveals it exactly.
        let reader = action_reader(1);
        let mut actor = MlpNet::zeros(&[1, 1]);
        actor.params_mut()[1] = 0.3; // tanh(0.3) ≈ 0.2913
        let base = 0.3f64.tanh();
        let mut rng = derive_rng(2, "targets", 0);
        let mut seen_spread = false;
        let mut first = None;
        for _ in 0..500 {
            let y = compute_target_td3(&reader, &reader, &actor, 0.0, &[0.0], false, 1.0, 1.0, 0.2, 0.5, &mut rng);
            let a = y; // r = 0, γ = 1, q = a
            assert!((a - base).abs() <= 0.5 + 1e-12, "smoothing exceeded clip: {a}");
            assert!(a.abs() <= 1.0);
            match first {
                None => first = Some(a),
                Some(f) => seen_spread |= (a - f).abs() > 1e-9,
            }
        }
        assert!(seen_spread, "smoothing noise never varied");
    }

    #[test]
    fn sac_target_subtracts_scaled_log_prob() {
        let c1 = constant_critic(2, 0.0);
        let c2 = constant_critic(2, 0.0);
        let mut actor = MlpNet::zeros(&[1, 2]);
        actor.params_mut()[2] = 0.2;
        let s = vec![0.4];
        let mut rng = derive_rng(3, "targets", 0);
        let mut replay = rng.clone();
        let y = compute_target_sac(&c1, &c2, &actor, 0.7, &s, false, 0.9, 1.0, 0.1, &mut rng);
        let sample = sample_policy(&actor, &s, 1.0, &mut replay);
        assert_eq!(y, 0.7 + 0.9 * (0.0 - 0.1 * sample.log_prob));
    }

    #[test]
    fn maxbackup_single_sample_equals_entropy_free_sac() {
        let mut init = derive_rng(4, "targets", 0);
        let c1 = MlpNet::new(&[3, 8, 1], &mut init);
        let c2 = MlpNet::new(&[3, 8, 1], &mut init);
        let actor = MlpNet::new(&[2, 8, 2], &mut init);
        let s = vec![0.3, -0.6];
        for k in 0..20 {
            let mut r1 = derive_rng(5, "targets", k);
            let mut r2 = r1.clone();
            let a = compute_target_maxbackup(&c1, &c2, &actor, 0.25, &s, false, 0.97, 1.0, 1, &mut r1);
            let b = compute_target_sac(&c1, &c2, &actor, 0.25, &s, false, 0.97, 1.0, 0.0, &mut r2);
            assert_eq!(a.to_bits(), b.to_bits());
            assert_eq!(r1.next_u64(), r2.next_u64());
        }
    }

    #[test]
    fn maxbackup_grows_with_sample_count() {
        let mut init = derive_rng(6, "targets", 0);
        let c1 = MlpNet::new(&[3, 8, 1], &mut init);
        let c2 = MlpNet::new(&[3, 8, 1], &mut init);
        let actor = MlpNet::new(&[2, 8, 2], &mut init);
        let s = vec![-0.2, 0.5];
        for k in 0..20 {
            let targets: Vec<f64> = [1, 2, 4, 8]
                .iter()
                .map(|&n| {
                    let mut rng = derive_rng(7, "targets", k);
                    compute_target_maxbackup(&c1, &c2, &actor, 0.0, &s, false, 1.0, 1.0, n, &mut rng)
                })
                .collect();
            for w in targets.windows(2) {
                assert!(w[0] <= w[1], "maxbackup decreased: {targets:?}");
            }
        }
    }

    #[test]
    fn squared_loss_values_and_gradient() {
        let (l, g) = critic_loss_squared(2.0, 0.5);
        assert_eq!(l, 0.5 * 1.5 * 1.5);
        assert_eq!(g, 1.5);
        let (l, g) = critic_loss_squared(0.5, 2.0);
        assert_eq!(l, 0.5 * 1.5 * 1.5);
        assert_eq!(g, -1.5);
    }

    #[test]
    fn expectile_loss_pushes_up_for_large_tau() {
        // Critic short of the target: high τ makes that expensive.
        let (l_short, g_short) = critic_loss_expectile(0.0, 1.0, 0.9);
        let (l_over, g_over) = critic_loss_expectile(2.0, 1.0, 0.9);
        assert!((l_short - 0.9).abs() < 1e-12);
        assert!((l_over - 0.1).abs() < 1e-12);
        assert!((g_short + 1.8).abs() < 1e-12);
        assert!((g_over - 0.2).abs() < 1e-12);
    }

    #[test]
    fn expectile_loss_at_half_matches_squared_bitwise() {
        let mut rng = derive_rng(8, "targets", 0);
        for _ in 0..200 {
            let q = rng.gen_range(-3.0..3.0);
            let y = rng.gen_range(-3.0..3.0);
            let (le, ge) = critic_loss_expectile(q, y, 0.5);
            let (ls, gs) = critic_loss_squared(q, y);
            assert_eq!(le.to_bits(), ls.to_bits());
            assert_eq!(ge.to_bits(), gs.to_bits());
        }
    }

    #[test]
    fn expectile_gradient_drives_estimate_to_expectile() {
        // Gradient descent on two-point data {0, 1} at τ = 0.9 must settle
        // at the 0.9-expectile of the pair, which bisection pins at 0.9.
        let data = [0.0, 1.0];
        let mut q = 0.5;
        for _ in 0..20_000 {
            let g: f64 = data.iter().map(|&y| critic_loss_expectile(q, y, 0.9).1).sum::<f64>() / 2.0;
            q -= 0.01 * g;
        }
        let oracle = expectile::sample_expectile(&data, None, 0.9).unwrap();
        assert!((q - oracle).abs() < 1e-6, "q = {q}, oracle = {oracle}");
    }
}
