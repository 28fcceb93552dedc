use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agents::AgentConfig;
use crate::arena::{CompetitionFlags, RewardRule};
use crate::error::{Error, Result};
use crate::metrics::LogBase;
use crate::trainer::TrainConfig;
use crate::world::WorldConfig;

/// One row of the experiment matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SettingId {
    CoopBase,
    CoopRewards,
    CoopParams,
    CoopDouble,
    CompTs,
    CompDo,
    CompDoTs,
    CompRs,
    CompRsTs,
    CompRsDo,
    CompRsDoTs,
}

impl SettingId {
    pub const ALL: [SettingId; 11] = [
        SettingId::CoopBase,
        SettingId::CoopRewards,
        SettingId::CoopParams,
        SettingId::CoopDouble,
        SettingId::CompTs,
        SettingId::CompDo,
        SettingId::CompDoTs,
        SettingId::CompRs,
        SettingId::CompRsTs,
        SettingId::CompRsDo,
        SettingId::CompRsDoTs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SettingId::CoopBase => "coop_base",
            SettingId::CoopRewards => "coop_rewards",
            SettingId::CoopParams => "coop_params",
            SettingId::CoopDouble => "coop_double",
            SettingId::CompTs => "comp_ts",
            SettingId::CompDo => "comp_do",
            SettingId::CompDoTs => "comp_do_ts",
            SettingId::CompRs => "comp_rs",
            SettingId::CompRsTs => "comp_rs_ts",
            SettingId::CompRsDo => "comp_rs_do",
            SettingId::CompRsDoTs => "comp_rs_do_ts",
        }
    }

    /// Number of teams trained.
    pub fn teams(self) -> usize {
        match self {
            SettingId::CoopBase | SettingId::CoopRewards | SettingId::CoopParams => 1,
            _ => 2,
        }
    }

    pub fn is_competitive(self) -> bool {
        self.as_str().starts_with("comp_")
    }

    pub fn flags(self, overhear_fraction: f64) -> CompetitionFlags {
        let name = self.as_str();
        let parts: Vec<&str> = if self.is_competitive() { name[5..].split('_').collect() } else { Vec::new() };
        CompetitionFlags {
            reward_sharing: parts.contains(&"rs"),
            dialog_overhearing: parts.contains(&"do"),
            task_sharing: parts.contains(&"ts"),
            overhear_fraction,
        }
    }

    pub fn reward_rule(self) -> RewardRule {
        match self {
            SettingId::CoopRewards => RewardRule::Strict,
            _ => RewardRule::Base,
        }
    }
}

impl fmt::Display for SettingId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SettingId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SettingId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown setting `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompetitionSection {
    pub overhear_fraction: f64,
}

impl Default for CompetitionSection {
    fn default() -> Self {
        Self { overhear_fraction: CompetitionFlags::default().overhear_fraction }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanSection {
    pub settings: Vec<SettingId>,
    pub seeds: Vec<u64>,
    /// Hidden size used by `coop_params`.
    pub params_hidden_dim: usize,
    pub log_base: LogBase,
}

impl Default for PlanSection {
    fn default() -> Self {
        Self { settings: vec![SettingId::CoopBase], seeds: vec![1], params_hidden_dim: 150, log_base: LogBase::Nats }
    }
}

/// A whole experiment description, one section per module.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub agents: AgentConfig,
    pub train: TrainConfig,
    pub competition: CompetitionSection,
    pub experiment: PlanSection,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.agents.validate()?;
        self.train.validate()?;
        CompetitionFlags { overhear_fraction: self.competition.overhear_fraction, ..Default::default() }.validate()?;
        if self.experiment.params_hidden_dim == 0 {
            return Err(Error::Config("params_hidden_dim must be positive".into()));
        }
        Ok(())
    }

    /// Fully resolved description of one `(setting, seed)` run.
    pub fn run_spec(&self, setting: SettingId, seed: u64) -> RunSpec {
        let flags = setting.flags(self.competition.overhear_fraction);
        let mut agents = self.agents.clone();
        agents.overhearing_enabled = flags.dialog_overhearing;
        agents.task_sharing_enabled = flags.task_sharing;
        if setting == SettingId::CoopParams {
            agents.hidden_dim = self.experiment.params_hidden_dim;
        }
        RunSpec {
            setting,
            seed,
            world: self.world.clone(),
            agents,
            train: self.train.clone(),
            flags,
            reward_rule: setting.reward_rule(),
            log_base: self.experiment.log_base,
        }
    }
}

/// Parses a TOML experiment description; missing keys take their defaults
/// and unknown keys are rejected.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}

pub fn render_config(cfg: &ExperimentConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub setting: SettingId,
    pub seed: u64,
    pub world: WorldConfig,
    pub agents: AgentConfig,
    pub train: TrainConfig,
    pub flags: CompetitionFlags,
    pub reward_rule: RewardRule,
    pub log_base: LogBase,
}

/// Parses `"1,2,5"` or `"1..5"` (inclusive) or a mix of both.
pub fn parse_seed_list(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("malformed seed list `{s}`"));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let (a, b): (u64, u64) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
            if a > b {
                return Err(bad());
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|_| bad())?);
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}
