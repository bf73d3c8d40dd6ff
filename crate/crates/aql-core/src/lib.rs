//! Building blocks for studying the gradual hand-off from optimality-style
//! (max) Bellman targets to policy-expectation targets.
//!
//! The crate has two halves. The tabular half ([`mdp`], [`tabular`]) hosts a
//! small diagnostic chain MDP, exact solvers used as oracles, and a tabular
//! actor-critic whose critic target can be blended between Q-learning and
//! SARSA or replaced by an expectile update. The continuous half ([`net`],
//! [`continuous`]) hosts a from-scratch MLP stack and desk-scale TD3/SAC-style
//! agents whose critics minimise an expectile loss with an annealed level τ.
//! [`expectile`] carries the loss, the τ schedules, and a sample-expectile
//! solver shared by both halves.

pub mod continuous;
pub mod expectile;
pub mod mdp;
pub mod net;
pub mod seeding;
pub mod tabular;
