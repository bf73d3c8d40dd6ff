//! Sweep definitions parsed from a single TOML file.
//!
//! A sweep is a grid of cells crossed with a shared seed list. Tabular
//! sweeps cross target rules with noise levels on the diagnostic chain;
//! continuous sweeps list named agent variants on one toy environment.
//! Unknown keys are rejected everywhere.

use aql_core::continuous::{Algo, AgentConfig, CriticLossKind, ToyEnv};
use aql_core::expectile::{ScheduleKind, TauSchedule};
use aql_core::mdp::ChainMdpParams;
use aql_core::tabular::{NoiseSpec, TabularRunConfig, TargetRule};
use serde::Deserialize;

use crate::stats::Statistic;
use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Tabular,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleName {
    Sarsa,
    Qlearning,
    Annealed,
    Expectile,
}

impl RuleName {
    fn id(self) -> &'static str {
        match self {
            RuleName::Sarsa => "sarsa",
            RuleName::Qlearning => "qlearning",
            RuleName::Annealed => "annealed",
            RuleName::Expectile => "expectile",
        }
    }

    fn needs_schedule(self) -> bool {
        matches!(self, RuleName::Annealed | RuleName::Expectile)
    }
}

/// Settings shared by every aggregation pass over the sweep's outputs.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregateSettings {
    pub statistic: Statistic,
    pub level: f64,
    pub resamples: usize,
}

impl Default for AggregateSettings {
    fn default() -> Self {
        Self { statistic: Statistic::Mean, level: 0.95, resamples: 2000 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularSweep {
    pub steps: u64,
    pub log_every: u64,
    #[serde(default = "default_episode_cap")]
    pub episode_cap: usize,
    pub rules: Vec<RuleName>,
    pub sigmas: Vec<f64>,
    #[serde(default)]
    pub chain: ChainMdpParams,
    /// Required by the annealed and expectile rules, ignored by the rest.
    pub schedule: Option<TauSchedule>,
}

fn default_episode_cap() -> usize {
    100
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvName {
    TwoPeakBandit,
    PointMassReach,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub name: EnvName,
    /// Std of Gaussian noise added to the executed bandit action.
    #[serde(default)]
    pub action_noise_std: f64,
}

impl EnvSpec {
    fn build(&self) -> ToyEnv {
        match self.name {
            EnvName::TwoPeakBandit => {
                ToyEnv::TwoPeakBandit { action_noise_std: self.action_noise_std }
            }
            EnvName::PointMassReach => ToyEnv::PointMassReach,
        }
    }
}

/// One named agent configuration; unset fields fall back to `agent`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuousVariant {
    pub name: String,
    pub tau: TauSchedule,
    pub algo: Option<Algo>,
    pub critic_loss: Option<CriticLossKind>,
    pub entropy_alpha: Option<f64>,
    pub actor_lr: Option<f64>,
    pub critic_lr: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuousSweep {
    pub env: EnvSpec,
    /// Base agent settings; the per-run seed is filled in by the runner.
    pub agent: AgentConfig,
    #[serde(rename = "variant")]
    pub variants: Vec<ContinuousVariant>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub kind: SweepKind,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub aggregate: AggregateSettings,
    pub tabular: Option<TabularSweep>,
    pub continuous: Option<ContinuousSweep>,
}

/// Work shared by every seed of one sweep cell.
#[derive(Debug, Clone)]
pub enum CellWork {
    Tabular { chain: ChainMdpParams, rule: TargetRule, noise: NoiseSpec, run: TabularRunConfig },
    Continuous { env: ToyEnv, agent: AgentConfig },
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub id: String,
    pub work: CellWork,
}

fn dir_safe(name: &str) -> bool {
    !name.is_empty()
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
}

fn check_schedule_fits(schedule: &TauSchedule, steps: u64, what: &str) -> Result<(), HarnessError> {
    if schedule.kind() != ScheduleKind::Constant && schedule.horizon() > steps {
        return Err(HarnessError::Config(format!(
            "{what}: schedule horizon {} exceeds the {} step budget",
            schedule.horizon(),
            steps
        )));
    }
    Ok(())
}

impl SweepConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: SweepConfig =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.cells()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), HarnessError> {
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("seeds must be non-empty".into()));
        }
        let mut distinct = self.seeds.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() != self.seeds.len() {
            return Err(HarnessError::Config("seeds must be distinct".into()));
        }
        match self.kind {
            SweepKind::Tabular => {
                if self.continuous.is_some() {
                    return Err(HarnessError::Config(
                        "kind = \"tabular\" forbids a [continuous] section".into(),
                    ));
                }
                let t = self.tabular.as_ref().ok_or_else(|| {
                    HarnessError::Config("kind = \"tabular\" requires a [tabular] section".into())
                })?;
                t.validate()
            }
            SweepKind::Continuous => {
                if self.tabular.is_some() {
                    return Err(HarnessError::Config(
                        "kind = \"continuous\" forbids a [tabular] section".into(),
                    ));
                }
                let c = self.continuous.as_ref().ok_or_else(|| {
                    HarnessError::Config(
                        "kind = \"continuous\" requires a [continuous] section".into(),
                    )
                })?;
                c.validate()
            }
        }
    }

    /// The sweep grid, one entry per cell; seeds are layered on by the
    /// runner. Also re-checks everything `validate` covers.
    pub fn cells(&self) -> Result<Vec<Cell>, HarnessError> {
        self.validate()?;
        match self.kind {
            SweepKind::Tabular => {
                let t = self.tabular.as_ref().expect("validated");
                let mut cells = Vec::new();
                for &rule_name in &t.rules {
                    let rule = t.build_rule(rule_name)?;
                    for &sigma in &t.sigmas {
                        cells.push(Cell {
                            id: format!("{}-sigma{}", rule_name.id(), sigma),
                            work: CellWork::Tabular {
                                chain: t.chain,
                                rule: rule.clone(),
                                noise: NoiseSpec::new(sigma),
                                run: TabularRunConfig {
                                    steps: t.steps,
                                    seed: 0,
                                    log_every: t.log_every,
                                    episode_cap: t.episode_cap,
                                },
                            },
                        });
                    }
                }
                Ok(cells)
            }
            SweepKind::Continuous => {
                let c = self.continuous.as_ref().expect("validated");
                let env = c.env.build();
                let mut cells = Vec::new();
                for v in &c.variants {
                    let mut agent = c.agent.clone();
                    agent.tau = v.tau.clone();
                    if let Some(algo) = v.algo {
                        agent.algo = algo;
                    }
                    if let Some(loss) = v.critic_loss {
                        agent.critic_loss = loss;
                    }
                    if let Some(alpha) = v.entropy_alpha {
                        agent.entropy_alpha = alpha;
                    }
                    if let Some(lr) = v.actor_lr {
                        agent.actor_lr = lr;
                    }
                    if let Some(lr) = v.critic_lr {
                        agent.critic_lr = lr;
                    }
                    agent.seed = 0;
                    agent.validate().map_err(|e| {
                        HarnessError::Config(format!("variant '{}': {e}", v.name))
                    })?;
                    cells.push(Cell {
                        id: v.name.clone(),
                        work: CellWork::Continuous { env: env.clone(), agent },
                    });
                }
                Ok(cells)
            }
        }
    }
}

impl TabularSweep {
    fn validate(&self) -> Result<(), HarnessError> {
        if self.steps == 0 {
            return Err(HarnessError::Config("tabular.steps must be positive".into()));
        }
        if self.log_every == 0 || self.log_every > self.steps {
            return Err(HarnessError::Config(
                "tabular.log_every must lie in [1, steps]".into(),
            ));
        }
        if self.rules.is_empty() {
            return Err(HarnessError::Config("tabular.rules must be non-empty".into()));
        }
        if self.sigmas.is_empty() {
            return Err(HarnessError::Config("tabular.sigmas must be non-empty".into()));
        }
        for &s in &self.sigmas {
            if !(s.is_finite() && s >= 0.0) {
                return Err(HarnessError::Config(format!("bad noise sigma {s}")));
            }
        }
        let mut ids: Vec<String> = self.sigmas.iter().map(|s| format!("{s}")).collect();
        ids.sort();
        ids.dedup();
        if ids.len() != self.sigmas.len() {
            return Err(HarnessError::Config("tabular.sigmas must be distinct".into()));
        }
        for &rule in &self.rules {
            if rule.needs_schedule() {
                let schedule = self.schedule.as_ref().ok_or_else(|| {
                    HarnessError::Config(format!(
                        "rule '{}' requires [tabular.schedule]",
                        rule.id()
                    ))
                })?;
                check_schedule_fits(schedule, self.steps, rule.id())?;
            }
        }
        Ok(())
    }

    fn build_rule(&self, name: RuleName) -> Result<TargetRule, HarnessError> {
        let schedule = || self.schedule.clone().expect("validated");
        Ok(match name {
            RuleName::Sarsa => TargetRule::Sarsa,
            RuleName::Qlearning => TargetRule::QLearning,
            RuleName::Annealed => TargetRule::AnnealedWeight(schedule()),
            RuleName::Expectile => TargetRule::expectile(schedule())
                .map_err(|e| HarnessError::Config(e.to_string()))?,
        })
    }
}

impl ContinuousSweep {
    fn validate(&self) -> Result<(), HarnessError> {
        if !(self.env.action_noise_std.is_finite() && self.env.action_noise_std >= 0.0) {
            return Err(HarnessError::Config(format!(
                "bad action_noise_std {}",
                self.env.action_noise_std
            )));
        }
        if self.env.name == EnvName::PointMassReach && self.env.action_noise_std != 0.0 {
            return Err(HarnessError::Config(
                "point_mass_reach has no action noise knob".into(),
            ));
        }
        if self.variants.is_empty() {
            return Err(HarnessError::Config("at least one [[continuous.variant]] required".into()));
        }
        let mut names: Vec<&str> = Vec::new();
        for v in &self.variants {
            if !dir_safe(&v.name) {
                return Err(HarnessError::Config(format!(
                    "variant name '{}' is not directory-safe",
                    v.name
                )));
            }
            if names.contains(&v.name.as_str()) {
                return Err(HarnessError::Config(format!("duplicate variant name '{}'", v.name)));
            }
            names.push(&v.name);
            check_schedule_fits(&v.tau, self.agent.steps as u64, &v.name)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABULAR_TOML: &str = r#"
kind = "tabular"
seeds = [0, 1, 2]

[tabular]
steps = 4000
log_every = 100
rules = ["sarsa", "qlearning", "annealed"]
sigmas = [0.0, 0.3]

[tabular.schedule]
kind = "linear"
tau_init = 0.9
horizon = 2000
"#;

    const CONTINUOUS_TOML: &str = r#"
kind = "continuous"
seeds = [5, 6]
master_seed = 9

[aggregate]
statistic = "iqm"

[continuous.env]
name = "two_peak_bandit"
action_noise_std = 0.1

[continuous.agent]
hidden = [8, 8]
batch_size = 16
warmup_steps = 32
steps = 120
eval_every = 40
replay_capacity = 500

[[continuous.variant]]
name = "annealed"
tau = { kind = "linear", tau_init = 0.9, horizon = 100 }

[[continuous.variant]]
name = "const05"
tau = { kind = "constant", tau_init = 0.5 }
algo = "aq_td3"
critic_loss = "squared"
"#;

    #[test]
    fn tabular_grid_enumerates_rules_times_sigmas() {
        let cfg = SweepConfig::from_toml(TABULAR_TOML).unwrap();
        let cells = cfg.cells().unwrap();
        let ids: Vec<&str> = cells.iter().map(|c| c.id.as_str()).collect();
        assert_eq!(
            ids,
            [
                "sarsa-sigma0",
                "sarsa-sigma0.3",
                "qlearning-sigma0",
                "qlearning-sigma0.3",
                "annealed-sigma0",
                "annealed-sigma0.3"
            ]
        );
        match &cells[3].work {
            CellWork::Tabular { noise, run, .. } => {
                assert_eq!(noise.sigma, 0.3);
                assert_eq!(run.steps, 4000);
            }
            _ => panic!("wrong cell kind"),
        }
    }

    #[test]
    fn continuous_variants_override_base_fields() {
        let cfg = SweepConfig::from_toml(CONTINUOUS_TOML).unwrap();
        assert_eq!(cfg.master_seed, 9);
        assert_eq!(cfg.aggregate.statistic, Statistic::Iqm);
        let cells = cfg.cells().unwrap();
        assert_eq!(cells.len(), 2);
        match &cells[1].work {
            CellWork::Continuous { env, agent } => {
                assert_eq!(*env, ToyEnv::TwoPeakBandit { action_noise_std: 0.1 });
                assert_eq!(agent.algo, Algo::AqTd3);
                assert_eq!(agent.critic_loss, CriticLossKind::Squared);
                assert_eq!(agent.tau.tau_init(), 0.5);
                assert_eq!(agent.hidden, vec![8, 8]);
            }
            _ => panic!("wrong cell kind"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected_with_the_key_name() {
        let err = SweepConfig::from_toml(&format!("{TABULAR_TOML}\ntypo_key = 1\n")).unwrap_err();
        assert!(err.to_string().contains("typo_key"), "{err}");
    }

    #[test]
    fn bad_configs_fail_closed() {
        let dup_seeds = TABULAR_TOML.replace("[0, 1, 2]", "[0, 1, 1]");
        assert!(SweepConfig::from_toml(&dup_seeds).unwrap_err().to_string().contains("distinct"));

        let no_schedule = TABULAR_TOML.replace(
            "[tabular.schedule]\nkind = \"linear\"\ntau_init = 0.9\nhorizon = 2000\n",
            "",
        );
        let err = SweepConfig::from_toml(&no_schedule).unwrap_err();
        assert!(err.to_string().contains("requires [tabular.schedule]"), "{err}");

        let long_horizon = TABULAR_TOML.replace("horizon = 2000", "horizon = 9000");
        let err = SweepConfig::from_toml(&long_horizon).unwrap_err();
        assert!(err.to_string().contains("exceeds"), "{err}");

        let bad_name = CONTINUOUS_TOML.replace("name = \"const05\"", "name = \"a/b\"");
        let err = SweepConfig::from_toml(&bad_name).unwrap_err();
        assert!(err.to_string().contains("directory-safe"), "{err}");

        let wrong_section = TABULAR_TOML.replace("kind = \"tabular\"", "kind = \"continuous\"");
        assert!(SweepConfig::from_toml(&wrong_section).is_err());
    }

    #[test]
    fn variant_agent_settings_are_validated() {
        let bad = CONTINUOUS_TOML.replace("warmup_steps = 32", "warmup_steps = 500");
        let err = SweepConfig::from_toml(&bad).unwrap_err();
        assert!(err.to_string().contains("variant 'annealed'"), "{err}");
    }
}
