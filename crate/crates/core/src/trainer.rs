//! Cooperative, competitive and staged training loops.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::agents::Team;
use crate::arena::{
    run_competitive_batch, run_team_batch, CompetitionFlags, EpisodeConfig, Lane, PairedEpisode, RewardRule, TeamTapes,
    Transcript,
};
use crate::error::{Error, Result};
use crate::neural::{AdamConfig, Mode};
use crate::world::{all_pairs, Dataset, Instance, TaskSpec};
use crate::{derive_rng, RunRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub reward_scale: f64,
    pub rounds: usize,
    /// Greedy evaluation on the full splits every this many epochs.
    pub eval_every: usize,
    pub early_stop_train_acc: f64,
    /// Epochs per stage of the three-stage cycle.
    pub stage_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip_min: f64,
    pub clip_max: f64,
    pub gradient_reduction: GradientReduction,
}

/// How per-episode policy gradients of a batch are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientReduction {
    #[default]
    Sum,
    Mean,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            learning_rate: adam.learning_rate,
            batch_size: 1000,
            max_epochs: 100_000,
            reward_scale: 100.0,
            rounds: 2,
            eval_every: 100,
            early_stop_train_acc: 1.0,
            stage_epochs: 1000,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            clip_min: adam.clip.0,
            clip_max: adam.clip.1,
            gradient_reduction: GradientReduction::Sum,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.batch_size == 0
            || self.max_epochs == 0
            || self.rounds == 0
            || self.eval_every == 0
            || self.stage_epochs == 0
        {
            return bad("batch_size, max_epochs, rounds, eval_every and stage_epochs must be positive");
        }
        if !(self.reward_scale >= 0.0 && self.reward_scale.is_finite()) {
            return bad("reward_scale must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.early_stop_train_acc) {
            return bad("early_stop_train_acc must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return bad("Adam constants out of range");
        }
        if self.clip_min > self.clip_max {
            return bad("clip_min exceeds clip_max");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            clip: (self.clip_min, self.clip_max),
        }
    }

    pub fn episode(&self, mode: Mode) -> EpisodeConfig {
        EpisodeConfig { rounds: self.rounds, reward_scale: self.reward_scale, mode }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeamLabel {
    Team1,
    Team2,
}

impl TeamLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            TeamLabel::Team1 => "team1",
            TeamLabel::Team2 => "team2",
        }
    }

    pub fn other(self) -> Self {
        match self {
            TeamLabel::Team1 => TeamLabel::Team2,
            TeamLabel::Team2 => TeamLabel::Team1,
        }
    }
}

/// Statistics of one team's sampled training batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeamEpoch {
    pub batch_accuracy: f64,
    pub mean_reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub team1: Option<TeamEpoch>,
    pub team2: Option<TeamEpoch>,
}

/// Greedy full-split accuracies of one team at an evaluation checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub epoch: usize,
    pub team: TeamLabel,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Mean batch reward over this team's epochs since the last checkpoint.
    pub mean_reward: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub epoch: usize,
    pub history: Vec<EpochStats>,
    pub evals: Vec<EvalPoint>,
    pub stopped: bool,
    pub winner: Option<TeamLabel>,
}

impl RunState {
    /// Latest evaluation of `team`.
    pub fn last_eval(&self, team: TeamLabel) -> Option<&EvalPoint> {
        self.evals.iter().rev().find(|e| e.team == team)
    }
}

/// Random streams of one run, split by purpose so that enabling a coupling
/// never shifts another stream.
#[derive(Clone, Debug)]
pub struct RunRngs {
    pub team1: RunRng,
    pub team2: RunRng,
    pub arena: RunRng,
}

impl RunRngs {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            team1: derive_rng(seed, "team1.train"),
            team2: derive_rng(seed, "team2.train"),
            arena: derive_rng(seed, "arena"),
        }
    }
}

/// Sink for evaluation checkpoints as they are produced.
pub type EvalSink<'a> = dyn FnMut(&EvalPoint) -> Result<()> + 'a;

fn sample_pairs<R: Rng + ?Sized>(pairs: &[(Instance, TaskSpec)], n: usize, rng: &mut R) -> Vec<(Instance, TaskSpec)> {
    (0..n).map(|_| pairs[rng.gen_range(0..pairs.len())]).collect()
}

fn batch_stats(transcripts: &[Transcript]) -> TeamEpoch {
    let n = transcripts.len() as f64;
    TeamEpoch {
        batch_accuracy: transcripts.iter().filter(|t| t.correct).count() as f64 / n,
        mean_reward: transcripts.iter().map(|t| t.reward).sum::<f64>() / n,
    }
}

fn update(team: &mut Team, tapes: &mut TeamTapes, transcripts: &[Transcript], cfg: &TrainConfig) -> Result<()> {
    team.zero_grads();
    let scale = match cfg.gradient_reduction {
        GradientReduction::Sum => 1.0,
        GradientReduction::Mean => 1.0 / transcripts.len() as f64,
    };
    tapes.reinforce(team, transcripts, scale)?;
    team.apply_gradients(&cfg.adam());
    if !team.all_finite() {
        return Err(Error::Config("parameters became non-finite".into()));
    }
    Ok(())
}

/// One batch of single-team REINFORCE with no cross-team input.
pub fn cooperative_train_epoch<R: Rng + ?Sized>(
    team: &mut Team,
    train_pairs: &[(Instance, TaskSpec)],
    cfg: &TrainConfig,
    rule: RewardRule,
    rng: &mut R,
) -> Result<TeamEpoch> {
    if train_pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let lanes = sample_pairs(train_pairs, cfg.batch_size, rng).into_iter().map(|(i, g)| Lane::new(i, g)).collect();
    let (mut roll, mut transcripts) = run_team_batch(team, lanes, &cfg.episode(Mode::Train), rng)?;
    for t in &mut transcripts {
        t.reward = rule.reward(t.correct, cfg.reward_scale);
    }
    update(team, &mut roll.tapes, &transcripts, cfg)?;
    Ok(batch_stats(&transcripts))
}

/// One joint batch for both teams. Each team draws its own episodes from its
/// own stream; the overhearing gate is drawn from the arena stream.
pub fn competitive_train_epoch(
    teams: (&mut Team, &mut Team),
    train_pairs: &[(Instance, TaskSpec)],
    flags: &CompetitionFlags,
    cfg: &TrainConfig,
    rngs: &mut RunRngs,
) -> Result<(TeamEpoch, TeamEpoch)> {
    if train_pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (t1, t2) = teams;
    let b1 = sample_pairs(train_pairs, cfg.batch_size, &mut rngs.team1);
    let b2 = sample_pairs(train_pairs, cfg.batch_size, &mut rngs.team2);
    let overhear = flags.dialog_overhearing && rngs.arena.gen::<f64>() < flags.overhear_fraction;
    let batch: Vec<PairedEpisode> = b1.iter().zip(&b2).map(|(a, b)| (a.0, a.1, b.0, b.1)).collect();
    let mut out = run_competitive_batch(
        (t1, t2),
        &batch,
        flags,
        overhear,
        &cfg.episode(Mode::Train),
        (&mut rngs.team1, &mut rngs.team2),
    )?;
    let (s1, s2) = &out.transcripts;
    update(t1, &mut out.rollouts.0.tapes, s1, cfg)?;
    update(t2, &mut out.rollouts.1.tapes, s2, cfg)?;
    Ok((batch_stats(s1), batch_stats(s2)))
}

/// Greedy episodes over the given pairs, with every cross-team input masked.
pub fn greedy_transcripts(team: &Team, pairs: &[(Instance, TaskSpec)], rounds: usize) -> Result<Vec<Transcript>> {
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let lanes = pairs.iter().map(|&(i, g)| Lane::new(i, g)).collect();
    let cfg = EpisodeConfig { rounds, reward_scale: 0.0, mode: Mode::Greedy };
    // Greedy decoding never draws from the generator.
    let mut idle = RunRng::seed_from_u64(0);
    Ok(run_team_batch(team, lanes, &cfg, &mut idle)?.1)
}

/// Fraction of `(instance, task)` pairs answered fully correctly.
pub fn evaluate(team: &Team, instances: &[Instance], rounds: usize) -> Result<f64> {
    let pairs = all_pairs(instances);
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let out = greedy_transcripts(team, &pairs, rounds)?;
    Ok(out.iter().filter(|t| t.correct).count() as f64 / out.len() as f64)
}

#[derive(Default)]
struct RewardWindow {
    sum: f64,
    count: usize,
}

impl RewardWindow {
    fn add(&mut self, e: &TeamEpoch) {
        self.sum += e.mean_reward;
        self.count += 1;
    }

    fn take(&mut self) -> f64 {
        let m = if self.count == 0 { 0.0 } else { self.sum / self.count as f64 };
        *self = Self::default();
        m
    }
}

fn checkpoint(
    team: &Team,
    label: TeamLabel,
    data: &Dataset,
    epoch: usize,
    window: &mut RewardWindow,
    cfg: &TrainConfig,
    state: &mut RunState,
    sink: &mut EvalSink<'_>,
) -> Result<EvalPoint> {
    let point = EvalPoint {
        epoch,
        team: label,
        train_accuracy: evaluate(team, &data.train, cfg.rounds)?,
        test_accuracy: if data.test.is_empty() { 0.0 } else { evaluate(team, &data.test, cfg.rounds)? },
        mean_reward: window.take(),
    };
    sink(&point)?;
    state.evals.push(point);
    Ok(point)
}

fn is_checkpoint(epoch: usize, cfg: &TrainConfig) -> bool {
    epoch.is_multiple_of(cfg.eval_every) || epoch == cfg.max_epochs
}

/// Trains one team alone until its greedy train accuracy reaches the
/// early-stop threshold or the epoch budget runs out.
pub fn train_single<R: Rng + ?Sized>(
    team: &mut Team,
    data: &Dataset,
    cfg: &TrainConfig,
    rule: RewardRule,
    rng: &mut R,
    sink: &mut EvalSink<'_>,
) -> Result<RunState> {
    cfg.validate()?;
    let pairs = all_pairs(&data.train);
    let mut state = RunState::default();
    let mut window = RewardWindow::default();
    while state.epoch < cfg.max_epochs {
        let e = cooperative_train_epoch(team, &pairs, cfg, rule, rng)?;
        window.add(&e);
        state.epoch += 1;
        state.history.push(EpochStats { epoch: state.epoch, team1: Some(e), team2: None });
        if is_checkpoint(state.epoch, cfg) {
            let p = checkpoint(team, TeamLabel::Team1, data, state.epoch, &mut window, cfg, &mut state, sink)?;
            if p.train_accuracy >= cfg.early_stop_train_acc {
                state.stopped = true;
                break;
            }
        }
    }
    state.winner = Some(TeamLabel::Team1);
    Ok(state)
}

/// Which of the three stages a (0-based) epoch falls in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Team1Alone,
    Team2Alone,
    Joint,
}

pub fn stage_of(epoch: usize, stage_epochs: usize) -> Stage {
    match (epoch / stage_epochs) % 3 {
        0 => Stage::Team1Alone,
        1 => Stage::Team2Alone,
        _ => Stage::Joint,
    }
}

/// Cycles team-1 training, team-2 training and joint training until one team
/// reaches the early-stop threshold (team 1 wins ties) or the budget runs
/// out (higher train accuracy wins, team 1 on ties).
pub fn full_train(
    teams: (&mut Team, &mut Team),
    data: &Dataset,
    flags: &CompetitionFlags,
    cfg: &TrainConfig,
    rngs: &mut RunRngs,
    sink: &mut EvalSink<'_>,
) -> Result<RunState> {
    cfg.validate()?;
    flags.validate()?;
    let (t1, t2) = teams;
    let pairs = all_pairs(&data.train);
    let mut state = RunState::default();
    let mut w1 = RewardWindow::default();
    let mut w2 = RewardWindow::default();
    let rule = RewardRule::Base;
    while state.epoch < cfg.max_epochs {
        let (e1, e2) = match stage_of(state.epoch, cfg.stage_epochs) {
            Stage::Team1Alone => (Some(cooperative_train_epoch(t1, &pairs, cfg, rule, &mut rngs.team1)?), None),
            Stage::Team2Alone => (None, Some(cooperative_train_epoch(t2, &pairs, cfg, rule, &mut rngs.team2)?)),
            Stage::Joint => {
                let (a, b) = competitive_train_epoch((t1, t2), &pairs, flags, cfg, rngs)?;
                (Some(a), Some(b))
            }
        };
        if let Some(e) = &e1 {
            w1.add(e);
        }
        if let Some(e) = &e2 {
            w2.add(e);
        }
        state.epoch += 1;
        state.history.push(EpochStats { epoch: state.epoch, team1: e1, team2: e2 });
        if is_checkpoint(state.epoch, cfg) {
            let p1 = checkpoint(t1, TeamLabel::Team1, data, state.epoch, &mut w1, cfg, &mut state, sink)?;
            let p2 = checkpoint(t2, TeamLabel::Team2, data, state.epoch, &mut w2, cfg, &mut state, sink)?;
            let done1 = p1.train_accuracy >= cfg.early_stop_train_acc;
            let done2 = p2.train_accuracy >= cfg.early_stop_train_acc;
            if done1 || done2 {
                state.stopped = true;
                state.winner = Some(if done1 { TeamLabel::Team1 } else { TeamLabel::Team2 });
                break;
            }
        }
    }
    if state.winner.is_none() {
        let acc = |l| state.last_eval(l).map_or(0.0, |e| e.train_accuracy);
        state.winner =
            Some(if acc(TeamLabel::Team2) > acc(TeamLabel::Team1) { TeamLabel::Team2 } else { TeamLabel::Team1 });
    }
    Ok(state)
}
