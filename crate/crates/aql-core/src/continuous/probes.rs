//! Diagnostics computed on a frozen agent: critic optimism against Monte
//! Carlo returns, and policy entropy at the start-state distribution.

use rand::Rng;

use crate::continuous::env::ToyEnv;
use crate::continuous::policy::{gaussian_head, sample_policy, squash_log_jacobian};
use crate::continuous::targets::min_q;
use crate::continuous::ContinuousError;
use crate::net::MlpNet;

const LN_2PI: f64 = 1.8378770664093453;

/// Mean and standard error of min(Q₁, Q₂)(s₀, a₀) − G over fresh episodes,
/// where a₀ = policy(s₀) and G is the discounted return of rolling the same
/// policy to the end of the episode. Positive values mean the critics
/// overestimate what the policy actually collects.
pub fn bias_probe<R: Rng>(
    env: &ToyEnv,
    policy: impl Fn(&[f64]) -> Vec<f64>,
    critic1: &MlpNet,
    critic2: &MlpNet,
    discount: f64,
    episodes: usize,
    rng: &mut R,
) -> (f64, f64) {
    assert!(episodes >= 2, "standard error needs at least two episodes");
    let mut samples = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let s0 = env.reset(rng);
        let a0 = policy(&s0);
        let q0 = min_q(critic1, critic2, &s0, &a0);

        let mut ret = 0.0;
        let mut gamma_t = 1.0;
        let mut state = s0;
        let mut action = a0;
        for t_ep in 0..env.horizon() {
            let (next, reward, done) = env.step(&state, &action, t_ep, rng);
            ret += gamma_t * reward;
            gamma_t *= discount;
            if done {
                break;
            }
            state = next;
            action = policy(&state);
        }
        samples.push(q0 - ret);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Differential entropy of the squashed-Gaussian policy averaged over
/// `states`: the Gaussian part in closed form plus a sampled correction
/// for the tanh squash,
/// H = Σ_i (½·ln(2πe) + log_std_i + ln a_max) + E[Σ_i ln(1 − tanh²(u_i))].
pub fn entropy_probe<R: Rng>(
    actor: &MlpNet,
    states: &[Vec<f64>],
    a_max: f64,
    action_dim: usize,
    n_samples: usize,
    rng: &mut R,
) -> Result<f64, ContinuousError> {
    if actor.output_dim() != 2 * action_dim {
        return Err(ContinuousError::DeterministicEntropy);
    }
    assert!(!states.is_empty() && n_samples >= 1);
    let mut total = 0.0;
    for s in states {
        let head = gaussian_head(actor, s, action_dim);
        let mut h: f64 = head
            .log_std
            .iter()
            .map(|ls| 0.5 * (LN_2PI + 1.0) + ls + a_max.ln())
            .sum();
        let mut squash = 0.0;
        for _ in 0..n_samples {
            let sample = sample_policy(actor, s, a_max, rng);
            for i in 0..action_dim {
                let sigma = head.log_std[i].exp();
                let u = head.mu[i] + sigma * sample.xi[i];
                squash += squash_log_jacobian(u);
            }
        }
        h += squash / n_samples as f64;
        total += h;
    }
    Ok(total / states.len() as f64)
}
