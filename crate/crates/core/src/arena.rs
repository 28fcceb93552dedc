//! Episode execution and rewards.
//!
//! A [`TeamRollout`] advances a batch of episodes for one team round by
//! round. Competitive play drives two rollouts in lockstep: both Q-bots ask,
//! then both A-bots answer (each may hear the other team's question of the
//! same round), then both Q-bots listen to the finished round.

use std::fmt::Write as _;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{abot_init, abot_round, qbot_init, qbot_predict, qbot_round, QHeard, Team};
use crate::error::{Error, Result};
use crate::neural::{EpisodeTrace, Mode, NodeId, Tape};
use crate::world::{ground_truth, Instance, TaskSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompetitionFlags {
    pub reward_sharing: bool,
    pub dialog_overhearing: bool,
    pub task_sharing: bool,
    pub overhear_fraction: f64,
}

impl Default for CompetitionFlags {
    fn default() -> Self {
        Self { reward_sharing: false, dialog_overhearing: false, task_sharing: false, overhear_fraction: 0.5 }
    }
}

impl CompetitionFlags {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.overhear_fraction) {
            return Err(Error::Config(format!("overhear_fraction {} must lie in [0, 1]", self.overhear_fraction)));
        }
        Ok(())
    }

    pub fn any(&self) -> bool {
        self.reward_sharing || self.dialog_overhearing || self.task_sharing
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub rounds: usize,
    pub reward_scale: f64,
    pub mode: Mode,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self { rounds: 2, reward_scale: 100.0, mode: Mode::Train }
    }
}

/// Single-team reward rule: `+R` when correct, `-penalty·R` otherwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardRule {
    /// `-10R` on failure.
    Base,
    /// `-100R` on failure.
    Strict,
}

impl RewardRule {
    pub fn penalty(self) -> f64 {
        match self {
            RewardRule::Base => 10.0,
            RewardRule::Strict => 100.0,
        }
    }

    pub fn reward(self, correct: bool, r: f64) -> f64 {
        if correct {
            r
        } else {
            -self.penalty() * r
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardOutcome {
    pub reward_team1: f64,
    pub reward_team2: f64,
}

pub fn compute_rewards(correct1: bool, correct2: bool, flags: &CompetitionFlags, r: f64) -> RewardOutcome {
    let (a, b) = if flags.reward_sharing {
        match (correct1, correct2) {
            (true, true) => (r, r),
            (true, false) => (r, -100.0 * r),
            (false, true) => (-100.0 * r, r),
            (false, false) => (-10.0 * r, -10.0 * r),
        }
    } else {
        (RewardRule::Base.reward(correct1, r), RewardRule::Base.reward(correct2, r))
    };
    RewardOutcome { reward_team1: a, reward_team2: b }
}

/// One completed episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Transcript {
    pub task: TaskSpec,
    pub instance: Instance,
    /// `(q_t, a_t)` per round.
    pub tokens: Vec<(u16, u16)>,
    pub predictions: (u16, u16),
    pub truth: (usize, usize),
    pub correct: bool,
    pub reward: f64,
    pub q_trace: EpisodeTrace,
    pub a_trace: EpisodeTrace,
}

/// What one team perceives of the other during a round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OverheardRound {
    pub q: u16,
    pub a: u16,
}

/// Inputs of one episode for one team.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Lane {
    pub instance: Instance,
    pub task: TaskSpec,
    /// Other team's instance and task, seen only under task sharing.
    pub shared: Option<(Instance, TaskSpec)>,
}

impl Lane {
    pub fn new(instance: Instance, task: TaskSpec) -> Self {
        Self { instance, task, shared: None }
    }
}

/// Tapes an episode or batch is recorded on, one per agent.
pub struct TeamTapes {
    pub q: Tape,
    pub a: Tape,
}

impl TeamTapes {
    pub fn new(team: &Team) -> Self {
        Self { q: Tape::new(&team.qbot.net, &team.qbot.store), a: Tape::new(&team.abot.net, &team.abot.store) }
    }

    /// Adds `scale · reward` REINFORCE terms for every transcript and
    /// backpropagates them into the team's gradient accumulators.
    pub fn reinforce(&mut self, team: &mut Team, transcripts: &[Transcript], scale: f64) -> Result<()> {
        for t in transcripts {
            let w = t.reward * scale;
            if w != 0.0 {
                self.q.reinforce_trace(&t.q_trace, w)?;
                self.a.reinforce_trace(&t.a_trace, w)?;
            }
        }
        self.q.backward(&team.qbot.net, &mut team.qbot.store);
        self.a.backward(&team.abot.net, &mut team.abot.store);
        Ok(())
    }
}

/// Runs one episode with the per-agent API.
pub fn run_team_episode<R: Rng + ?Sized>(
    team: &Team,
    tapes: &mut TeamTapes,
    lane: Lane,
    overheard: Option<&[OverheardRound]>,
    cfg: &EpisodeConfig,
    rng: &mut R,
) -> Result<Transcript> {
    if let Some(feed) = overheard {
        if feed.len() != cfg.rounds {
            return Err(Error::MalformedFeed { expected: cfg.rounds, got: feed.len() });
        }
    }
    let (q, a) = (&team.qbot, &team.abot);
    let mut qs = qbot_init(q, &mut tapes.q, lane.task, lane.shared.map(|s| s.1), cfg.mode)?;
    let mut as_ = abot_init(a, &mut tapes.a, lane.instance, lane.shared.map(|s| s.0), cfg.mode)?;
    let mut tokens = Vec::with_capacity(cfg.rounds);
    let mut heard = None;
    for t in 0..cfg.rounds {
        let other = overheard.map(|f| f[t]);
        let qt = qbot_round(q, &mut tapes.q, &mut qs, heard, rng)?;
        let at = abot_round(a, &mut tapes.a, &mut as_, qt, other.map(|o| o.q), rng)?;
        tokens.push((qt, at));
        heard = Some(QHeard { own_q: qt, own_a: at, other: other.map(|o| (o.q, o.a)) });
    }
    let last = heard.ok_or(Error::Config("rounds must be positive".into()))?;
    let predictions = qbot_predict(q, &mut tapes.q, &mut qs, last, cfg.rounds, rng)?;
    Ok(finish_transcript(lane, tokens, predictions, qs.trace, as_.trace))
}

fn finish_transcript(
    lane: Lane,
    tokens: Vec<(u16, u16)>,
    predictions: (u16, u16),
    q_trace: EpisodeTrace,
    a_trace: EpisodeTrace,
) -> Transcript {
    let truth = ground_truth(&lane.instance, &lane.task);
    let correct = predictions.0 as usize == truth.0 && predictions.1 as usize == truth.1;
    Transcript {
        task: lane.task,
        instance: lane.instance,
        tokens,
        predictions,
        truth,
        correct,
        reward: 0.0,
        q_trace,
        a_trace,
    }
}

/// A batch of episodes for one team, advanced one phase at a time.
pub struct TeamRollout {
    mode: Mode,
    rounds: usize,
    lanes: Vec<Lane>,
    pub tapes: TeamTapes,
    q_nodes: Vec<NodeId>,
    a_init: Vec<NodeId>,
    a_nodes: Vec<NodeId>,
    questions: Vec<Vec<u16>>,
    answers: Vec<Vec<u16>>,
    q_traces: Vec<EpisodeTrace>,
    a_traces: Vec<EpisodeTrace>,
}

impl TeamRollout {
    pub fn start(team: &Team, lanes: Vec<Lane>, rounds: usize, mode: Mode) -> Result<Self> {
        if rounds == 0 {
            return Err(Error::Config("rounds must be positive".into()));
        }
        let mut tapes = TeamTapes::new(team);
        let q_in: Vec<_> = lanes.iter().map(|l| (l.task, l.shared.map(|s| s.1))).collect();
        let a_in: Vec<_> = lanes.iter().map(|l| (l.instance, l.shared.map(|s| s.0))).collect();
        let q_nodes = team.qbot.init(&mut tapes.q, &q_in)?;
        let a_init = team.abot.init(&mut tapes.a, &a_in)?;
        let n = lanes.len();
        Ok(Self {
            mode,
            rounds,
            lanes,
            tapes,
            q_nodes,
            a_nodes: a_init.clone(),
            a_init,
            questions: Vec::with_capacity(rounds),
            answers: Vec::with_capacity(rounds),
            q_traces: vec![EpisodeTrace::new(mode); n],
            a_traces: vec![EpisodeTrace::new(mode); n],
        })
    }

    pub fn len(&self) -> usize {
        self.lanes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lanes.is_empty()
    }

    pub fn round(&self) -> usize {
        self.questions.len()
    }

    pub fn questions(&self, t: usize) -> &[u16] {
        &self.questions[t]
    }

    pub fn answers(&self, t: usize) -> &[u16] {
        &self.answers[t]
    }

    /// Every Q-bot asks its question for the next round.
    pub fn ask<R: Rng + ?Sized>(&mut self, team: &Team, rng: &mut R) -> Result<()> {
        let mut out = Vec::with_capacity(self.len());
        for (i, &node) in self.q_nodes.iter().enumerate() {
            let c = team.qbot.speak(&mut self.tapes.q, node, rng, self.mode)?;
            self.q_traces[i].push(c);
            out.push(c.index);
        }
        self.questions.push(out);
        Ok(())
    }

    /// Every A-bot hears its question (and optionally the other team's) and answers.
    pub fn answer<R: Rng + ?Sized>(&mut self, team: &Team, other_q: Option<&[u16]>, rng: &mut R) -> Result<()> {
        let t = self.questions.len() - 1;
        check_feed(other_q, self.len())?;
        let parents = if team.abot.memoryless() { &self.a_init } else { &self.a_nodes };
        let req: Vec<_> = (0..self.len()).map(|i| (parents[i], self.questions[t][i], other_q.map(|o| o[i]))).collect();
        self.a_nodes = team.abot.hear(&mut self.tapes.a, &req)?;
        let mut out = Vec::with_capacity(self.len());
        for (i, &node) in self.a_nodes.iter().enumerate() {
            let c = team.abot.speak(&mut self.tapes.a, node, rng, self.mode)?;
            self.a_traces[i].push(c);
            out.push(c.index);
        }
        self.answers.push(out);
        Ok(())
    }

    /// Every Q-bot listens to the round just finished.
    pub fn listen(&mut self, team: &Team, other: Option<(&[u16], &[u16])>) -> Result<()> {
        let t = self.answers.len() - 1;
        if let Some((oq, oa)) = other {
            check_feed(Some(oq), self.len())?;
            check_feed(Some(oa), self.len())?;
        }
        let req: Vec<_> = (0..self.len())
            .map(|i| {
                let heard = QHeard {
                    own_q: self.questions[t][i],
                    own_a: self.answers[t][i],
                    other: other.map(|(oq, oa)| (oq[i], oa[i])),
                };
                (self.q_nodes[i], heard)
            })
            .collect();
        self.q_nodes = team.qbot.listen(&mut self.tapes.q, &req)?;
        Ok(())
    }

    /// Runs all rounds without any cross-team input.
    pub fn play_alone<R: Rng + ?Sized>(&mut self, team: &Team, rng: &mut R) -> Result<()> {
        while self.round() < self.rounds {
            self.ask(team, rng)?;
            self.answer(team, None, rng)?;
            self.listen(team, None)?;
        }
        Ok(())
    }

    /// Q-bots guess after the last round; returns one transcript per lane.
    pub fn finish<R: Rng + ?Sized>(&mut self, team: &Team, rng: &mut R) -> Result<Vec<Transcript>> {
        if self.round() != self.rounds || self.answers.len() != self.rounds {
            return Err(Error::DialogNotFinished { round: self.answers.len(), rounds: self.rounds });
        }
        let mut out = Vec::with_capacity(self.len());
        for i in 0..self.len() {
            let [c1, c2] = team.qbot.predict(&mut self.tapes.q, self.q_nodes[i], rng, self.mode)?;
            let mut q_trace = std::mem::replace(&mut self.q_traces[i], EpisodeTrace::new(self.mode));
            q_trace.push(c1);
            q_trace.push(c2);
            let a_trace = std::mem::replace(&mut self.a_traces[i], EpisodeTrace::new(self.mode));
            let tokens = (0..self.rounds).map(|t| (self.questions[t][i], self.answers[t][i])).collect();
            out.push(finish_transcript(self.lanes[i], tokens, (c1.index, c2.index), q_trace, a_trace));
        }
        Ok(out)
    }
}

fn check_feed(feed: Option<&[u16]>, n: usize) -> Result<()> {
    match feed {
        Some(f) if f.len() != n => Err(Error::MalformedFeed { expected: n, got: f.len() }),
        _ => Ok(()),
    }
}

/// Runs a batch for a single team with no cross-team input.
pub fn run_team_batch<R: Rng + ?Sized>(
    team: &Team,
    lanes: Vec<Lane>,
    cfg: &EpisodeConfig,
    rng: &mut R,
) -> Result<(TeamRollout, Vec<Transcript>)> {
    let mut roll = TeamRollout::start(team, lanes, cfg.rounds, cfg.mode)?;
    roll.play_alone(team, rng)?;
    let transcripts = roll.finish(team, rng)?;
    Ok((roll, transcripts))
}

/// One competitive episode's inputs: `(I₁, G₁, I₂, G₂)`.
pub type PairedEpisode = (Instance, TaskSpec, Instance, TaskSpec);

pub struct CompetitiveBatch {
    pub rollouts: (TeamRollout, TeamRollout),
    pub transcripts: (Vec<Transcript>, Vec<Transcript>),
}

/// Plays both teams round-synchronously. `overhear` is this batch's
/// overhearing draw; it is ignored unless dialog overhearing is on.
/// Rewards are filled in from the competition flags.
pub fn run_competitive_batch<R1: Rng + ?Sized, R2: Rng + ?Sized>(
    teams: (&Team, &Team),
    batch: &[PairedEpisode],
    flags: &CompetitionFlags,
    overhear: bool,
    cfg: &EpisodeConfig,
    rngs: (&mut R1, &mut R2),
) -> Result<CompetitiveBatch> {
    let (t1, t2) = teams;
    let (rng1, rng2) = rngs;
    let share = |i: Instance, g: TaskSpec| if flags.task_sharing { Some((i, g)) } else { None };
    let lanes1 = batch.iter().map(|&(i1, g1, i2, g2)| Lane { instance: i1, task: g1, shared: share(i2, g2) }).collect();
    let lanes2 = batch.iter().map(|&(i1, g1, i2, g2)| Lane { instance: i2, task: g2, shared: share(i1, g1) }).collect();
    let mut r1 = TeamRollout::start(t1, lanes1, cfg.rounds, cfg.mode)?;
    let mut r2 = TeamRollout::start(t2, lanes2, cfg.rounds, cfg.mode)?;
    let hear = flags.dialog_overhearing && overhear;
    for t in 0..cfg.rounds {
        r1.ask(t1, rng1)?;
        r2.ask(t2, rng2)?;
        if hear {
            let (q1, q2) = (r1.questions(t).to_vec(), r2.questions(t).to_vec());
            r1.answer(t1, Some(&q2), rng1)?;
            r2.answer(t2, Some(&q1), rng2)?;
            let (a1, a2) = (r1.answers(t).to_vec(), r2.answers(t).to_vec());
            r1.listen(t1, Some((&q2, &a2)))?;
            r2.listen(t2, Some((&q1, &a1)))?;
        } else {
            r1.answer(t1, None, rng1)?;
            r2.answer(t2, None, rng2)?;
            r1.listen(t1, None)?;
            r2.listen(t2, None)?;
        }
    }
    let mut s1 = r1.finish(t1, rng1)?;
    let mut s2 = r2.finish(t2, rng2)?;
    for (a, b) in s1.iter_mut().zip(s2.iter_mut()) {
        let out = compute_rewards(a.correct, b.correct, flags, cfg.reward_scale);
        a.reward = out.reward_team1;
        b.reward = out.reward_team2;
    }
    Ok(CompetitiveBatch { rollouts: (r1, r2), transcripts: (s1, s2) })
}

pub const TRANSCRIPT_HEADER: &str = "task\tinstance\tquestions\tanswers\tpredictions\ttruth\tcorrect\treward";

fn join<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn transcript_line(t: &Transcript) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "{}\t{}\t{}\t{}\t{},{}\t{},{}\t{}\t{}",
        t.task,
        t.instance,
        join(t.tokens.iter().map(|p| p.0)),
        join(t.tokens.iter().map(|p| p.1)),
        t.predictions.0,
        t.predictions.1,
        t.truth.0,
        t.truth.1,
        u8::from(t.correct),
        t.reward
    );
    s
}

/// Writes a header line followed by one tab-separated line per episode.
pub fn write_transcripts<W: Write>(mut w: W, transcripts: &[Transcript]) -> Result<()> {
    writeln!(w, "{TRANSCRIPT_HEADER}")?;
    for t in transcripts {
        writeln!(w, "{}", transcript_line(t))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::AgentConfig;
    use crate::world::{all_pairs, enumerate_instances, WorldConfig};
    use crate::RunRng;
    use rand::SeedableRng;

    fn team(seed: u64, cfg: &AgentConfig) -> Team {
        Team::new(cfg, 4, &mut RunRng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn reward_table() {
        let rs = CompetitionFlags { reward_sharing: true, ..Default::default() };
        let off = CompetitionFlags::default();
        let r = |c1, c2, f: &CompetitionFlags| {
            let o = compute_rewards(c1, c2, f, 100.0);
            (o.reward_team1, o.reward_team2)
        };
        assert_eq!(r(true, false, &rs), (100.0, -10000.0));
        assert_eq!(r(false, false, &rs), (-1000.0, -1000.0));
        assert_eq!(r(true, false, &off), (100.0, -1000.0));
        assert_eq!(r(true, true, &rs), r(true, true, &off));
        assert_eq!(RewardRule::Strict.reward(false, 100.0), -10000.0);
    }

    #[test]
    fn rho_is_validated() {
        let f = CompetitionFlags { overhear_fraction: 1.5, ..Default::default() };
        assert!(f.validate().is_err());
        assert!(CompetitionFlags::default().validate().is_ok());
    }

    #[test]
    fn episode_structure_and_zero_param_cascade() {
        let mut t = team(0, &AgentConfig::default());
        t.fill(0.0);
        let mut tapes = TeamTapes::new(&t);
        let cfg = EpisodeConfig { mode: Mode::Greedy, ..Default::default() };
        let lane = Lane::new(Instance::new([0, 0, 2]), TaskSpec::new(0, 1).unwrap());
        let tr = run_team_episode(&t, &mut tapes, lane, None, &cfg, &mut RunRng::seed_from_u64(1)).unwrap();
        assert_eq!(tr.tokens, vec![(0, 0), (0, 0)]);
        assert_eq!(tr.predictions, (0, 0));
        assert!(tr.correct);
        assert_eq!(tr.q_trace.choices.len(), 4);
        assert_eq!(tr.a_trace.choices.len(), 2);
    }

    #[test]
    fn malformed_feed_is_rejected() {
        let t = team(0, &AgentConfig::default());
        let mut tapes = TeamTapes::new(&t);
        let lane = Lane::new(Instance::new([0, 0, 2]), TaskSpec::new(0, 1).unwrap());
        let feed = [OverheardRound { q: 0, a: 0 }];
        let err = run_team_episode(
            &t,
            &mut tapes,
            lane,
            Some(&feed),
            &EpisodeConfig::default(),
            &mut RunRng::seed_from_u64(1),
        );
        assert!(matches!(err, Err(Error::MalformedFeed { expected: 2, got: 1 })));
    }

    #[test]
    fn batch_matches_single_episode_path() {
        let t = team(4, &AgentConfig::default());
        let lane = Lane::new(Instance::new([1, 3, 2]), TaskSpec::new(2, 0).unwrap());
        let cfg = EpisodeConfig::default();
        let mut tapes = TeamTapes::new(&t);
        let single = run_team_episode(&t, &mut tapes, lane, None, &cfg, &mut RunRng::seed_from_u64(8)).unwrap();
        let (_, batch) = run_team_batch(&t, vec![lane], &cfg, &mut RunRng::seed_from_u64(8)).unwrap();
        assert_eq!(single.tokens, batch[0].tokens);
        assert_eq!(single.predictions, batch[0].predictions);
    }

    #[test]
    fn correctness_matches_ground_truth_exhaustively() {
        let t = team(5, &AgentConfig::default());
        let pairs = all_pairs(&enumerate_instances(&WorldConfig::default()));
        let lanes: Vec<_> = pairs.iter().map(|&(i, g)| Lane::new(i, g)).collect();
        let (_, out) = run_team_batch(&t, lanes, &EpisodeConfig::default(), &mut RunRng::seed_from_u64(2)).unwrap();
        assert_eq!(out.len(), 384);
        for tr in &out {
            let w = ground_truth(&tr.instance, &tr.task);
            assert_eq!(tr.correct, (tr.predictions.0 as usize, tr.predictions.1 as usize) == w);
        }
    }

    fn paired(n: usize, seed: u64) -> Vec<PairedEpisode> {
        let mut rng = RunRng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let i = |r: &mut RunRng| Instance::new([r.gen_range(0..4), r.gen_range(0..4), r.gen_range(0..4)]);
                let g = |r: &mut RunRng| TaskSpec::from_index(r.gen_range(0..6)).unwrap();
                (i(&mut rng), g(&mut rng), i(&mut rng), g(&mut rng))
            })
            .collect()
    }

    #[test]
    fn flags_off_reduces_to_independent_games() {
        let cfg_a = AgentConfig::default();
        let (t1, t2) = (team(1, &cfg_a), team(2, &cfg_a));
        let batch = paired(50, 3);
        let ecfg = EpisodeConfig::default();
        let flags = CompetitionFlags::default();
        let out = run_competitive_batch(
            (&t1, &t2),
            &batch,
            &flags,
            true,
            &ecfg,
            (&mut RunRng::seed_from_u64(10), &mut RunRng::seed_from_u64(20)),
        )
        .unwrap();
        let lanes1 = batch.iter().map(|b| Lane::new(b.0, b.1)).collect();
        let lanes2 = batch.iter().map(|b| Lane::new(b.2, b.3)).collect();
        let (_, s1) = run_team_batch(&t1, lanes1, &ecfg, &mut RunRng::seed_from_u64(10)).unwrap();
        let (_, s2) = run_team_batch(&t2, lanes2, &ecfg, &mut RunRng::seed_from_u64(20)).unwrap();
        for (a, b) in out.transcripts.0.iter().zip(&s1) {
            assert_eq!((&a.tokens, a.predictions), (&b.tokens, b.predictions));
        }
        for (a, b) in out.transcripts.1.iter().zip(&s2) {
            assert_eq!((&a.tokens, a.predictions), (&b.tokens, b.predictions));
        }
    }

    #[test]
    fn rho_zero_draw_matches_flags_off() {
        let cfg_a = AgentConfig { overhearing_enabled: true, ..AgentConfig::default() };
        let (t1, t2) = (team(1, &cfg_a), team(2, &cfg_a));
        let batch = paired(30, 4);
        let ecfg = EpisodeConfig::default();
        let run = |flags: &CompetitionFlags, overhear| {
            run_competitive_batch(
                (&t1, &t2),
                &batch,
                flags,
                overhear,
                &ecfg,
                (&mut RunRng::seed_from_u64(10), &mut RunRng::seed_from_u64(20)),
            )
            .unwrap()
            .transcripts
        };
        let do_flags = CompetitionFlags { dialog_overhearing: true, overhear_fraction: 0.0, ..Default::default() };
        let a = run(&do_flags, false);
        let b = run(&CompetitionFlags::default(), true);
        assert_eq!(
            a.0.iter().map(|t| &t.tokens).collect::<Vec<_>>(),
            b.0.iter().map(|t| &t.tokens).collect::<Vec<_>>()
        );
    }

    #[test]
    fn silent_zero_opponent_equals_masked_overhearing() {
        let cfg_a = AgentConfig { overhearing_enabled: true, ..AgentConfig::default() };
        let mut t1 = team(1, &cfg_a);
        for name in ["embed.other_q", "embed.other_a"] {
            let id = t1.qbot.store.id(name).unwrap();
            t1.qbot.store.value_mut(id).row_mut(0).fill(0.0);
        }
        let id = t1.abot.store.id("embed.other_q").unwrap();
        t1.abot.store.value_mut(id).row_mut(0).fill(0.0);
        let mut t2 = team(2, &cfg_a);
        t2.fill(0.0);
        let batch = paired(40, 5);
        // Greedy, so the all-zero opponent always emits token 0.
        let ecfg = EpisodeConfig { mode: Mode::Greedy, ..EpisodeConfig::default() };
        let flags = CompetitionFlags { dialog_overhearing: true, overhear_fraction: 1.0, ..Default::default() };
        let heard = run_competitive_batch(
            (&t1, &t2),
            &batch,
            &flags,
            true,
            &ecfg,
            (&mut RunRng::seed_from_u64(10), &mut RunRng::seed_from_u64(20)),
        )
        .unwrap();
        let lanes = batch.iter().map(|b| Lane::new(b.0, b.1)).collect();
        let (_, alone) = run_team_batch(&t1, lanes, &ecfg, &mut RunRng::seed_from_u64(10)).unwrap();
        for (a, b) in heard.transcripts.0.iter().zip(&alone) {
            assert_eq!((&a.tokens, a.predictions), (&b.tokens, b.predictions));
        }
    }

    #[test]
    fn transcript_lines_have_eight_fields() {
        let t = team(0, &AgentConfig::default());
        let lane = Lane::new(Instance::new([1, 2, 3]), TaskSpec::new(1, 2).unwrap());
        let (_, out) =
            run_team_batch(&t, vec![lane], &EpisodeConfig::default(), &mut RunRng::seed_from_u64(0)).unwrap();
        let mut buf = Vec::new();
        write_transcripts(&mut buf, &out).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], TRANSCRIPT_HEADER);
        assert_eq!(lines[1].split('\t').count(), 8);
    }
}
