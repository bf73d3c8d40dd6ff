//! Small continuous-action environments used to study critic optimism.

use rand::Rng;

/// Action bound shared by both environments; policies squash into ±this.
pub const ACTION_LIMIT: f64 = 1.0;

const POINT_MASS_DT: f64 = 0.1;
const POINT_MASS_DAMPING: f64 = 0.95;
const POINT_MASS_GOAL: [f64; 2] = [0.5, 0.5];
const POINT_MASS_START: [f64; 2] = [-0.5, -0.5];
const POINT_MASS_JITTER: f64 = 0.05;

/// One-step bandit reward: a wide low bump at −0.5 and a narrow high peak
/// at 0.6. The gradient at a = 0 points toward the wide bump, so a greedy
/// learner started near zero settles for roughly half the optimal payoff.
pub fn two_peak_reward(a: f64) -> f64 {
    let wide = (a + 0.5) / 0.35;
    let narrow = (a - 0.6) / 0.12;
    0.5 * (-0.5 * wide * wide).exp() + (-0.5 * narrow * narrow).exp()
}

/// Grid-search oracle for the bandit: (argmax, max) of [`two_peak_reward`]
/// over the action range at 1e-4 resolution.
pub fn two_peak_optimum() -> (f64, f64) {
    let mut best_a = -ACTION_LIMIT;
    let mut best_r = two_peak_reward(best_a);
    let n = 20_000;
    for i in 1..=n {
        let a = -ACTION_LIMIT + 2.0 * ACTION_LIMIT * i as f64 / n as f64;
        let r = two_peak_reward(a);
        if r > best_r {
            best_r = r;
            best_a = a;
        }
    }
    (best_a, best_r)
}

/// Stateless environment definitions; the training loop owns the current
/// state and the step-within-episode counter.
#[derive(Debug, Clone, PartialEq)]
pub enum ToyEnv {
    /// Single-step bandit over [`two_peak_reward`]. `action_noise_std`
    /// perturbs the executed action (0 disables it).
    TwoPeakBandit { action_noise_std: f64 },
    /// Damped 2-D point mass steered by acceleration toward a goal,
    /// quadratic cost on distance and effort, fixed-length episodes.
    PointMassReach,
}

impl ToyEnv {
    pub fn two_peak_bandit() -> Self {
        ToyEnv::TwoPeakBandit { action_noise_std: 0.0 }
    }

    pub fn point_mass_reach() -> Self {
        ToyEnv::PointMassReach
    }

    pub fn state_dim(&self) -> usize {
        match self {
            ToyEnv::TwoPeakBandit { .. } => 1,
            ToyEnv::PointMassReach => 4,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self {
            ToyEnv::TwoPeakBandit { .. } => 1,
            ToyEnv::PointMassReach => 2,
        }
    }

    pub fn action_limit(&self) -> f64 {
        ACTION_LIMIT
    }

    /// Episode length; episodes end exactly here (the bandit after one step).
    pub fn horizon(&self) -> usize {
        match self {
            ToyEnv::TwoPeakBandit { .. } => 1,
            ToyEnv::PointMassReach => 30,
        }
    }

    pub fn reset<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            ToyEnv::TwoPeakBandit { .. } => vec![0.0],
            ToyEnv::PointMassReach => {
                let jx = rng.gen_range(-POINT_MASS_JITTER..POINT_MASS_JITTER);
                let jy = rng.gen_range(-POINT_MASS_JITTER..POINT_MASS_JITTER);
                vec![POINT_MASS_START[0] + jx, POINT_MASS_START[1] + jy, 0.0, 0.0]
            }
        }
    }

    /// Applies `action` at step-within-episode `t_ep` (0-based). Returns
    /// (next state, reward, done); `done` marks the end of the episode.
    pub fn step<R: Rng>(
        &self,
        state: &[f64],
        action: &[f64],
        t_ep: usize,
        rng: &mut R,
    ) -> (Vec<f64>, f64, bool) {
        assert_eq!(state.len(), self.state_dim());
        assert_eq!(action.len(), self.action_dim());
        match self {
            ToyEnv::TwoPeakBandit { action_noise_std } => {
                let mut a = action[0];
                if *action_noise_std > 0.0 {
                    use rand_distr::{Distribution, StandardNormal};
                    let eps: f64 = StandardNormal.sample(rng);
                    a += action_noise_std * eps;
                }
                a = a.clamp(-ACTION_LIMIT, ACTION_LIMIT);
                (vec![0.0], two_peak_reward(a), true)
            }
            ToyEnv::PointMassReach => {
                let (px, py, vx, vy) = (state[0], state[1], state[2], state[3]);
                let nvx = POINT_MASS_DAMPING * vx + POINT_MASS_DT * action[0];
                let nvy = POINT_MASS_DAMPING * vy + POINT_MASS_DT * action[1];
                let npx = px + POINT_MASS_DT * nvx;
                let npy = py + POINT_MASS_DT * nvy;
                let dx = npx - POINT_MASS_GOAL[0];
                let dy = npy - POINT_MASS_GOAL[1];
                let effort = action[0] * action[0] + action[1] * action[1];
                let reward = -(dx * dx + dy * dy + 0.01 * effort);
                (vec![npx, npy, nvx, nvy], reward, t_ep + 1 >= self.horizon())
            }
        }
    }
}
