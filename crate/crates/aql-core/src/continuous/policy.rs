//! Policy heads over [`MlpNet`] actors and their hand-derived gradients.
//!
//! Deterministic actors (one output per action dimension) squash through
//! tanh. Stochastic actors emit [mean..., log_std...] and sample with the
//! reparameterization trick, so actor gradients flow through the noise via
//! fixed standard-normal draws. Every gradient here is checked against
//! central differences in the tests.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::net::MlpNet;

/// Clamp range for stochastic-head log standard deviations; ln(1e-3) below.
pub const LOG_STD_MIN: f64 = -6.907755278982137;
pub const LOG_STD_MAX: f64 = 2.0;

const LN_2PI: f64 = 1.8378770664093453;

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// ln(1 − tanh²(u)) without the catastrophic cancellation of the direct
/// form, which underflows to −inf once |u| exceeds about 19.
pub fn squash_log_jacobian(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

/// Stochastic head evaluated at one state: clamped log_std plus a mask of
/// which dimensions stayed interior (clamped dims pass no gradient).
#[derive(Debug, Clone)]
pub struct GaussianHead {
    pub mu: Vec<f64>,
    pub log_std: Vec<f64>,
    pub interior: Vec<bool>,
}

pub fn gaussian_head(actor: &MlpNet, state: &[f64], action_dim: usize) -> GaussianHead {
    assert_eq!(actor.output_dim(), 2 * action_dim, "stochastic actor emits mean and log_std");
    let out = actor.forward(state);
    let mu = out[..action_dim].to_vec();
    let mut log_std = Vec::with_capacity(action_dim);
    let mut interior = Vec::with_capacity(action_dim);
    for &raw in &out[action_dim..] {
        log_std.push(raw.clamp(LOG_STD_MIN, LOG_STD_MAX));
        interior.push(raw > LOG_STD_MIN && raw < LOG_STD_MAX);
    }
    GaussianHead { mu, log_std, interior }
}

/// One reparameterized draw a = a_max·tanh(μ + σ·ξ) with its log density.
#[derive(Debug, Clone)]
pub struct PolicySample {
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub xi: Vec<f64>,
}

pub fn sample_policy<R: Rng>(
    actor: &MlpNet,
    state: &[f64],
    a_max: f64,
    rng: &mut R,
) -> PolicySample {
    let action_dim = actor.output_dim() / 2;
    let xi: Vec<f64> = (0..action_dim).map(|_| StandardNormal.sample(rng)).collect();
    sample_policy_with_noise(actor, state, a_max, &xi)
}

/// The deterministic core of [`sample_policy`]: the caller supplies the
/// standard-normal draws, which makes gradients checkable by finite
/// differences with the noise held fixed.
pub fn sample_policy_with_noise(
    actor: &MlpNet,
    state: &[f64],
    a_max: f64,
    xi: &[f64],
) -> PolicySample {
    let head = gaussian_head(actor, state, xi.len());
    let mut action = Vec::with_capacity(xi.len());
    let mut log_prob = 0.0;
    for i in 0..xi.len() {
        let sigma = head.log_std[i].exp();
        let u = head.mu[i] + sigma * xi[i];
        let t = u.tanh();
        action.push(a_max * t);
        log_prob += -0.5 * LN_2PI - head.log_std[i] - 0.5 * xi[i] * xi[i];
        log_prob -= a_max.ln() + squash_log_jacobian(u);
    }
    PolicySample { action, log_prob, xi: xi.to_vec() }
}

/// Deterministic action of a tanh-squashed actor with one output per
/// action dimension.
pub fn td3_action(actor: &MlpNet, state: &[f64], a_max: f64) -> Vec<f64> {
    actor.forward(state).iter().map(|r| a_max * r.tanh()).collect()
}

/// Mean action of a stochastic head (used for evaluation rollouts).
pub fn sac_mean_action(actor: &MlpNet, state: &[f64], a_max: f64, action_dim: usize) -> Vec<f64> {
    gaussian_head(actor, state, action_dim).mu.iter().map(|m| a_max * m.tanh()).collect()
}

/// Deterministic action plus clipped Gaussian exploration noise.
pub fn td3_explore_action<R: Rng>(
    actor: &MlpNet,
    state: &[f64],
    a_max: f64,
    explore_std: f64,
    rng: &mut R,
) -> Vec<f64> {
    td3_action(actor, state, a_max)
        .into_iter()
        .map(|a| {
            let eps: f64 = StandardNormal.sample(rng);
            (a + explore_std * eps).clamp(-a_max, a_max)
        })
        .collect()
}

/// Critic view used by actor updates: state, action → (q, ∂q/∂action).
/// Fitted critics come from [`net_critic`]/[`min_twin_critic`]; tests pass
/// closed-form critics to pin down argmax behaviour exactly.
pub trait CriticEval {
    fn q_and_grad(&self, state: &[f64], action: &[f64]) -> (f64, Vec<f64>);
}

impl<F: Fn(&[f64], &[f64]) -> (f64, Vec<f64>)> CriticEval for F {
    fn q_and_grad(&self, state: &[f64], action: &[f64]) -> (f64, Vec<f64>) {
        self(state, action)
    }
}

fn critic_input(state: &[f64], action: &[f64]) -> Vec<f64> {
    let mut input = Vec::with_capacity(state.len() + action.len());
    input.extend_from_slice(state);
    input.extend_from_slice(action);
    input
}

/// Q and ∂q/∂a of a critic network over the concatenated [state, action].
pub fn net_critic(net: &MlpNet) -> impl CriticEval + '_ {
    move |state: &[f64], action: &[f64]| {
        let input = critic_input(state, action);
        let (out, cache) = net.forward_cached(&input);
        let grads = net.backward(&cache, &[1.0]);
        (out[0], grads.input[state.len()..].to_vec())
    }
}

/// Pointwise minimum of two critics; the gradient follows the smaller one
/// (ties go to the first).
pub fn min_twin_critic<'a>(c1: &'a MlpNet, c2: &'a MlpNet) -> impl CriticEval + 'a {
    move |state: &[f64], action: &[f64]| {
        let (q1, g1) = net_critic(c1).q_and_grad(state, action);
        let (q2, g2) = net_critic(c2).q_and_grad(state, action);
        if q1 <= q2 {
            (q1, g1)
        } else {
            (q2, g2)
        }
    }
}

/// Gradient of −mean_s Q(s, μ(s)) for a deterministic actor. Returns the
/// parameter gradient and the mean critic value.
pub fn actor_grads_td3<C: CriticEval>(
    actor: &MlpNet,
    states: &[Vec<f64>],
    a_max: f64,
    critic: &C,
) -> (Vec<f64>, f64) {
    assert!(!states.is_empty());
    let n = states.len() as f64;
    let mut grads = vec![0.0; actor.n_params()];
    let mut mean_q = 0.0;
    for s in states {
        let (raw, cache) = actor.forward_cached(s);
        let tanh: Vec<f64> = raw.iter().map(|r| r.tanh()).collect();
        let action: Vec<f64> = tanh.iter().map(|t| a_max * t).collect();
        let (q, dq_da) = critic.q_and_grad(s, &action);
        mean_q += q / n;
        let out_grad: Vec<f64> = tanh
            .iter()
            .zip(&dq_da)
            .map(|(t, dq)| -dq * a_max * (1.0 - t * t) / n)
            .collect();
        actor.backward_into(&cache, &out_grad, &mut grads);
    }
    (grads, mean_q)
}

#[derive(Debug, Clone, Copy)]
pub struct SacActorStats {
    pub mean_q: f64,
    pub mean_log_prob: f64,
}

/// Gradient of mean_s [α·log π(a|s) − Q(s, a)] through reparameterized
/// actions a = a_max·tanh(μ + σ·ξ) with the supplied noise held fixed.
pub fn actor_grads_sac<C: CriticEval>(
    actor: &MlpNet,
    states: &[Vec<f64>],
    xis: &[Vec<f64>],
    a_max: f64,
    entropy_alpha: f64,
    critic: &C,
) -> (Vec<f64>, SacActorStats) {
    assert!(!states.is_empty());
    assert_eq!(states.len(), xis.len());
    let action_dim = actor.output_dim() / 2;
    let n = states.len() as f64;
    let mut grads = vec![0.0; actor.n_params()];
    let mut stats = SacActorStats { mean_q: 0.0, mean_log_prob: 0.0 };
    for (s, xi) in states.iter().zip(xis) {
        assert_eq!(xi.len(), action_dim);
        let (_, cache) = actor.forward_cached(s);
        let head = gaussian_head(actor, s, action_dim);
        let mut action = Vec::with_capacity(action_dim);
        let mut tanh = Vec::with_capacity(action_dim);
        let mut sigma_xi = Vec::with_capacity(action_dim);
        let mut log_prob = 0.0;
        for i in 0..action_dim {
            let sigma = head.log_std[i].exp();
            let u = head.mu[i] + sigma * xi[i];
            let t = u.tanh();
            tanh.push(t);
            sigma_xi.push(sigma * xi[i]);
            action.push(a_max * t);
            log_prob += -0.5 * LN_2PI - head.log_std[i] - 0.5 * xi[i] * xi[i];
            log_prob -= a_max.ln() + squash_log_jacobian(u);
        }
        let (q, dq_da) = critic.q_and_grad(s, &action);
        stats.mean_q += q / n;
        stats.mean_log_prob += log_prob / n;

        // d log π / dμ_i = 2t_i; d log π / d log_std_i = −1 + 2 t_i σ_i ξ_i.
        // The Q path reuses da_i/du_i = a_max (1 − t_i²).
        let mut out_grad = vec![0.0; 2 * action_dim];
        for i in 0..action_dim {
            let da_du = a_max * (1.0 - tanh[i] * tanh[i]);
            out_grad[i] = (entropy_alpha * 2.0 * tanh[i] - dq_da[i] * da_du) / n;
            if head.interior[i] {
                let dlp = -1.0 + 2.0 * tanh[i] * sigma_xi[i];
                out_grad[action_dim + i] = (entropy_alpha * dlp - dq_da[i] * da_du * sigma_xi[i]) / n;
            }
        }
        actor.backward_into(&cache, &out_grad, &mut grads);
    }
    (grads, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{max_relative_error, numerical_gradient, Adam};
    use crate::seeding::derive_rng;

    const GRAD_TOL: f64 = 1e-4;
    const GRAD_FLOOR: f64 = 1e-6;

    /// q(s, a) = −Σ (a_i − peak)², maximized at a = peak.
    fn bowl_critic(peak: f64) -> impl CriticEval {
        move |_s: &[f64], a: &[f64]| {
            let q = -a.iter().map(|ai| (ai - peak) * (ai - peak)).sum::<f64>();
            let grad = a.iter().map(|ai| -2.0 * (ai - peak)).collect();
            (q, grad)
        }
    }

    #[test]
    fn squash_log_jacobian_matches_direct_form() {
        for k in -30..=30 {
            let u = k as f64 * 0.1;
            let direct = (1.0 - u.tanh() * u.tanh()).ln();
            assert!((squash_log_jacobian(u) - direct).abs() < 1e-12, "u = {u}");
        }
    }

    #[test]
    fn squash_log_jacobian_survives_saturation() {
        // Direct form underflows to ln(0) here.
        assert_eq!((1.0 - 40.0f64.tanh() * 40.0f64.tanh()).ln(), f64::NEG_INFINITY);
        let stable = squash_log_jacobian(40.0);
        assert!((stable - (2.0 * std::f64::consts::LN_2 - 80.0)).abs() < 1e-9);
        assert!(squash_log_jacobian(-40.0).is_finite());
    }

    #[test]
    fn softplus_is_stable_at_extremes() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(50.0) - 50.0).abs() < 1e-15);
        assert!(softplus(-50.0) < 1e-20);
    }

    #[test]
    fn gaussian_head_clamps_log_std() {
        // Single affine layer: outputs are the biases.
        let mut actor = MlpNet::zeros(&[1, 2]);
        actor.params_mut()[3] = 5.0;
        let head = gaussian_head(&actor, &[0.0], 1);
        assert_eq!(head.log_std[0], LOG_STD_MAX);
        assert!(!head.interior[0]);

        actor.params_mut()[3] = -10.0;
        let head = gaussian_head(&actor, &[0.0], 1);
        assert_eq!(head.log_std[0], LOG_STD_MIN);
        assert!(!head.interior[0]);

        actor.params_mut()[3] = 0.25;
        let head = gaussian_head(&actor, &[0.0], 1);
        assert_eq!(head.log_std[0], 0.25);
        assert!(head.interior[0]);
    }

    #[test]
    fn sampled_actions_stay_in_bounds() {
        let mut rng = derive_rng(0, "policy", 0);
        let actor = MlpNet::new(&[2, 16, 4], &mut rng);
        for _ in 0..200 {
            let s = vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let sample = sample_policy(&actor, &s, 1.0, &mut rng);
            assert!(sample.action.iter().all(|a| a.abs() < 1.0));
            assert!(sample.log_prob.is_finite());
        }
    }

    #[test]
    fn sample_with_noise_is_deterministic_and_consistent() {
        let mut rng = derive_rng(1, "policy", 0);
        let actor = MlpNet::new(&[1, 8, 2], &mut rng);
        let xi = vec![0.7];
        let a = sample_policy_with_noise(&actor, &[0.3], 1.0, &xi);
        let b = sample_policy_with_noise(&actor, &[0.3], 1.0, &xi);
        assert_eq!(a.action, b.action);
        assert_eq!(a.log_prob, b.log_prob);

        let head = gaussian_head(&actor, &[0.3], 1);
        let u = head.mu[0] + head.log_std[0].exp() * xi[0];
        assert!((a.action[0] - u.tanh()).abs() < 1e-15);
    }

    #[test]
    fn wider_head_is_less_certain() {
        // Same mean, different spread: the σ = 1 head assigns lower density
        // to its central draw than the σ = e^{-2} head does.
        let mut narrow = MlpNet::zeros(&[1, 2]);
        narrow.params_mut()[3] = -2.0;
        let wide = MlpNet::zeros(&[1, 2]);
        let xi = vec![0.1];
        let lp_narrow = sample_policy_with_noise(&narrow, &[0.0], 1.0, &xi).log_prob;
        let lp_wide = sample_policy_with_noise(&wide, &[0.0], 1.0, &xi).log_prob;
        assert!(lp_narrow > lp_wide);
    }

    #[test]
    fn td3_action_squashes_and_scales() {
        let mut actor = MlpNet::zeros(&[1, 1]);
        actor.params_mut()[1] = 10.0;
        let a = td3_action(&actor, &[0.0], 0.5);
        assert!(a[0] < 0.5 && a[0] > 0.4999);
    }

    #[test]
    fn explore_noise_stays_clipped() {
        let mut rng = derive_rng(2, "policy", 0);
        let actor = MlpNet::new(&[1, 8, 1], &mut rng);
        for _ in 0..500 {
            let a = td3_explore_action(&actor, &[0.2], 1.0, 0.8, &mut rng);
            assert!(a[0].abs() <= 1.0);
        }
    }

    #[test]
    fn net_critic_gradient_matches_finite_differences() {
        let mut rng = derive_rng(3, "policy", 0);
        let net = MlpNet::new(&[3, 12, 1], &mut rng);
        let s = vec![0.2, -0.4];
        let a = vec![0.3];
        let (q, dq_da) = net_critic(&net).q_and_grad(&s, &a);
        assert_eq!(q, net.forward(&[0.2, -0.4, 0.3])[0]);
        let net2 = net.clone();
        let s2 = s.clone();
        let fd = numerical_gradient(
            move |aa| {
                let mut input = s2.clone();
                input.extend_from_slice(aa);
                net2.forward(&input)[0]
            },
            &a,
            1e-5,
        );
        assert!(max_relative_error(&dq_da, &fd, GRAD_FLOOR) < GRAD_TOL);
    }

    #[test]
    fn min_twin_follows_smaller_critic() {
        // Constant critics via output bias.
        let mut lo = MlpNet::zeros(&[2, 1]);
        lo.params_mut()[2] = -1.0;
        let mut hi = MlpNet::zeros(&[2, 1]);
        hi.params_mut()[2] = 3.0;
        // lo has weights (0.5, 0.25) so its gradient is distinguishable.
        lo.params_mut()[0] = 0.5;
        lo.params_mut()[1] = 0.25;
        let twin = min_twin_critic(&hi, &lo);
        let (q, g) = twin.q_and_grad(&[0.0], &[0.0]);
        assert_eq!(q, -1.0);
        assert_eq!(g, vec![0.25]);
    }

    #[test]
    fn td3_actor_gradient_matches_finite_differences() {
        let mut rng = derive_rng(4, "policy", 0);
        let actor = MlpNet::new(&[2, 10, 2], &mut rng);
        let states = vec![vec![0.3, -0.2], vec![-0.5, 0.8], vec![0.0, 0.1]];
        let critic = bowl_critic(0.4);
        let (grads, _) = actor_grads_td3(&actor, &states, 1.0, &critic);

        let states2 = states.clone();
        let mut scratch = actor.clone();
        let fd = numerical_gradient(
            move |p| {
                scratch.set_params(p).unwrap();
                let c = bowl_critic(0.4);
                -states2
                    .iter()
                    .map(|s| c.q_and_grad(s, &td3_action(&scratch, s, 1.0)).0)
                    .sum::<f64>()
                    / states2.len() as f64
            },
            actor.params(),
            1e-5,
        );
        assert!(max_relative_error(&grads, &fd, GRAD_FLOOR) < GRAD_TOL);
    }

    fn frozen_sac_loss(
        actor: &MlpNet,
        states: &[Vec<f64>],
        xis: &[Vec<f64>],
        alpha: f64,
        peak: f64,
    ) -> f64 {
        let critic = bowl_critic(peak);
        let mut total = 0.0;
        for (s, xi) in states.iter().zip(xis) {
            let sample = sample_policy_with_noise(actor, s, 1.0, xi);
            let (q, _) = critic.q_and_grad(s, &sample.action);
            total += alpha * sample.log_prob - q;
        }
        total / states.len() as f64
    }

    fn assert_interior_log_std(actor: &MlpNet, states: &[Vec<f64>], action_dim: usize) {
        for s in states {
            let head = gaussian_head(actor, s, action_dim);
            assert!(head.interior.iter().all(|&i| i), "test needs interior log_std");
        }
    }

    #[test]
    fn sac_actor_gradient_matches_finite_differences() {
        let mut rng = derive_rng(5, "policy", 0);
        let actor = MlpNet::new(&[2, 10, 4], &mut rng);
        let states = vec![vec![0.3, -0.2], vec![-0.5, 0.8]];
        let xis = vec![vec![0.4, -1.2], vec![-0.3, 0.9]];
        assert_interior_log_std(&actor, &states, 2);

        for &alpha in &[0.0, 0.1, 1.0] {
            let critic = bowl_critic(0.4);
            let (grads, _) = actor_grads_sac(&actor, &states, &xis, 1.0, alpha, &critic);
            let states2 = states.clone();
            let xis2 = xis.clone();
            let mut scratch = actor.clone();
            let fd = numerical_gradient(
                move |p| {
                    scratch.set_params(p).unwrap();
                    frozen_sac_loss(&scratch, &states2, &xis2, alpha, 0.4)
                },
                actor.params(),
                1e-5,
            );
            assert!(
                max_relative_error(&grads, &fd, GRAD_FLOOR) < GRAD_TOL,
                "alpha = {alpha}: {}",
                max_relative_error(&grads, &fd, GRAD_FLOOR)
            );
        }
    }

    #[test]
    fn sac_gradient_skips_clamped_log_std() {
        // Bias pushes log_std past the upper clamp; its gradient must vanish.
        let mut actor = MlpNet::zeros(&[1, 2]);
        actor.params_mut()[2] = 0.1;
        actor.params_mut()[3] = 5.0;
        let states = vec![vec![1.0]];
        let xis = vec![vec![0.6]];
        let critic = bowl_critic(0.0);
        let (grads, _) = actor_grads_sac(&actor, &states, &xis, 1.0, 0.5, &critic);
        // Parameter 3 is the log_std bias; parameter 1 its input weight.
        assert_eq!(grads[3], 0.0);
        assert_eq!(grads[1], 0.0);
        assert!(grads[2] != 0.0);
    }

    #[test]
    fn td3_actor_climbs_to_critic_argmax() {
        let mut rng = derive_rng(6, "policy", 0);
        let mut actor = MlpNet::new(&[1, 16, 1], &mut rng);
        let mut opt = Adam::new(1e-2, actor.n_params());
        let states = vec![vec![0.0]];
        let critic = bowl_critic(0.4);
        for _ in 0..2000 {
            let (grads, _) = actor_grads_td3(&actor, &states, 1.0, &critic);
            let mut p = actor.params().to_vec();
            opt.step(&mut p, &grads).unwrap();
            actor.set_params(&p).unwrap();
        }
        let a = td3_action(&actor, &[0.0], 1.0);
        assert!((a[0] - 0.4).abs() < 0.01, "reached {}", a[0]);
    }

    #[test]
    fn sac_actor_mean_climbs_to_critic_argmax() {
        let mut rng = derive_rng(7, "policy", 0);
        let mut actor = MlpNet::new(&[1, 16, 2], &mut rng);
        let mut opt = Adam::new(1e-2, actor.n_params());
        let states = vec![vec![0.0]; 8];
        let critic = bowl_critic(0.4);
        for _ in 0..3000 {
            let xis: Vec<Vec<f64>> = (0..states.len())
                .map(|_| vec![StandardNormal.sample(&mut rng)])
                .collect();
            let (grads, _) = actor_grads_sac(&actor, &states, &xis, 1.0, 0.01, &critic);
            let mut p = actor.params().to_vec();
            opt.step(&mut p, &grads).unwrap();
            actor.set_params(&p).unwrap();
        }
        // The stochastic objective peaks slightly above the critic argmax:
        // tanh squashes the upper tail of sampled actions harder, so the
        // mean must overshoot for samples to center on the peak.
        let a = sac_mean_action(&actor, &[0.0], 1.0, 1);
        assert!((a[0] - 0.4).abs() < 0.05, "reached {}", a[0]);
    }
}
