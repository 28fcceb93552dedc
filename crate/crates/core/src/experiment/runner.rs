use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::config::{ExperimentConfig, RunSpec, SettingId};
use super::records::{
    read_summary, write_atomic, write_summary, RecordWriter, RunPaths, RunRecord, RunSummary, TeamSummary,
};
use crate::agents::Team;
use crate::arena::{write_transcripts, Transcript};
use crate::derive_rng;
use crate::error::{Error, Result};
use crate::metrics::{metrics_report, EvalLog};
use crate::neural::{Checkpoint, Mode};
use crate::trainer::{full_train, greedy_transcripts, train_single, EvalPoint, RunRngs, RunState, TeamLabel};
use crate::world::{all_pairs, enumerate_instances};

/// What happened to one `(setting, seed)` job of a plan.
#[derive(Debug)]
pub enum RunStatus {
    Completed(RunSummary),
    /// A matching `summary.json` was already present.
    Skipped(RunSummary),
    Failed(Error),
}

#[derive(Debug)]
pub struct RunOutcome {
    pub setting: SettingId,
    pub seed: u64,
    pub status: RunStatus,
}

impl RunOutcome {
    pub fn summary(&self) -> Option<&RunSummary> {
        match &self.status {
            RunStatus::Completed(s) | RunStatus::Skipped(s) => Some(s),
            RunStatus::Failed(_) => None,
        }
    }
}

/// Builds the freshly initialised teams of a run.
pub fn init_teams(spec: &RunSpec) -> Result<(Team, Option<Team>)> {
    let v = spec.world.values_per_attribute;
    let t1 = Team::new(&spec.agents, v, &mut derive_rng(spec.seed, "team1.init"))?;
    let t2 = match spec.setting.teams() {
        2 => Some(Team::new(&spec.agents, v, &mut derive_rng(spec.seed, "team2.init"))?),
        _ => None,
    };
    Ok((t1, t2))
}

/// Restores the trained teams of a finished run from its checkpoint.
pub fn load_teams(spec: &RunSpec, checkpoint: &Path) -> Result<(Team, Option<Team>)> {
    let ckpt = Checkpoint::read_from(std::io::BufReader::new(File::open(checkpoint)?))?;
    let (mut t1, mut t2) = init_teams(spec)?;
    t1.import(TeamLabel::Team1.as_str(), &ckpt)?;
    if let Some(t) = t2.as_mut() {
        t.import(TeamLabel::Team2.as_str(), &ckpt)?;
    }
    Ok((t1, t2))
}

/// Greedy dialogs of `team` over every (instance, task) pair of the world.
pub fn all_pair_transcripts(spec: &RunSpec, team: &Team) -> Result<Vec<Transcript>> {
    greedy_transcripts(team, &all_pairs(&enumerate_instances(&spec.world)), spec.train.rounds)
}

fn team_summary(
    spec: &RunSpec,
    state: &RunState,
    label: TeamLabel,
    team: &Team,
) -> Result<(TeamSummary, Vec<Transcript>)> {
    let last = state.last_eval(label).ok_or(Error::EmptyInput)?;
    let transcripts = all_pair_transcripts(spec, team)?;
    let log = EvalLog::from_transcripts(&transcripts, Mode::Greedy)?;
    let summary = TeamSummary {
        team: label,
        train_accuracy: last.train_accuracy,
        test_accuracy: last.test_accuracy,
        metrics: metrics_report(&log, spec.log_base)?,
    };
    Ok((summary, transcripts))
}

/// CSV sink for checkpoints; `label` overrides the team recorded.
fn sink<'a>(
    writer: &'a mut RecordWriter,
    spec: &RunSpec,
    label: Option<TeamLabel>,
) -> impl FnMut(&EvalPoint) -> Result<()> + 'a {
    let (setting, seed) = (spec.setting, spec.seed);
    move |p: &EvalPoint| {
        let p = EvalPoint { team: label.unwrap_or(p.team), ..*p };
        RunRecord::from_eval(setting, seed, &p).iter().try_for_each(|r| writer.write(r))
    }
}

fn train(spec: &RunSpec, teams: (&mut Team, Option<&mut Team>), writer: &mut RecordWriter) -> Result<RunState> {
    let data = spec.world.build_dataset()?;
    let (setting, seed) = (spec.setting, spec.seed);
    match teams {
        (t1, None) => {
            let mut rng = derive_rng(seed, "team1.train");
            train_single(
                t1,
                &data,
                &spec.train,
                spec.reward_rule,
                &mut rng,
                &mut sink(writer, spec, Some(TeamLabel::Team1)),
            )
        }
        (t1, Some(t2)) if !setting.is_competitive() => {
            // Two independent teams; the one with the better held-out score is reported.
            let mut rng1 = derive_rng(seed, "team1.train");
            let s1 = train_single(
                t1,
                &data,
                &spec.train,
                spec.reward_rule,
                &mut rng1,
                &mut sink(writer, spec, Some(TeamLabel::Team1)),
            )?;
            let mut rng2 = derive_rng(seed, "team2.train");
            let mut s2 = train_single(
                t2,
                &data,
                &spec.train,
                spec.reward_rule,
                &mut rng2,
                &mut sink(writer, spec, Some(TeamLabel::Team2)),
            )?;
            for e in &mut s2.evals {
                e.team = TeamLabel::Team2;
            }
            let test = |s: &RunState, l| s.last_eval(l).map_or(0.0, |e| e.test_accuracy);
            let winner = if test(&s2, TeamLabel::Team2) > test(&s1, TeamLabel::Team1) {
                TeamLabel::Team2
            } else {
                TeamLabel::Team1
            };
            let mut evals = s1.evals;
            evals.extend(s2.evals);
            Ok(RunState {
                epoch: s1.epoch.max(s2.epoch),
                history: Vec::new(),
                evals,
                stopped: s1.stopped && s2.stopped,
                winner: Some(winner),
            })
        }
        (t1, Some(t2)) => {
            let mut rngs = RunRngs::from_seed(seed);
            full_train((t1, t2), &data, &spec.flags, &spec.train, &mut rngs, &mut sink(writer, spec, None))
        }
    }
}

/// Trains one run from scratch and writes all of its artifacts.
pub fn run_one(spec: &RunSpec, out_dir: &Path) -> Result<RunSummary> {
    let paths = RunPaths::new(out_dir, spec.setting, spec.seed);
    fs::create_dir_all(&paths.dir)?;
    let _ = fs::remove_file(paths.summary());
    let (mut t1, mut t2) = init_teams(spec)?;
    let mut writer = RecordWriter::create(&paths.csv())?;
    let state = train(spec, (&mut t1, t2.as_mut()), &mut writer)?;
    drop(writer);

    let winner = state.winner.unwrap_or(TeamLabel::Team1);
    let team = |l: TeamLabel| match l {
        TeamLabel::Team1 => Some(&t1),
        TeamLabel::Team2 => t2.as_ref(),
    };
    let (win, transcripts) = team_summary(spec, &state, winner, team(winner).ok_or(Error::EmptyInput)?)?;
    let loser = match team(winner.other()) {
        Some(t) => Some(team_summary(spec, &state, winner.other(), t)?.0),
        None => None,
    };

    write_atomic(&paths.transcripts(), |w| write_transcripts(w, &transcripts))?;
    let mut entries = t1.export(TeamLabel::Team1.as_str());
    if let Some(t) = &t2 {
        entries.extend(t.export(TeamLabel::Team2.as_str()));
    }
    let ckpt = Checkpoint { seed: spec.seed, step: state.epoch as u64, entries };
    write_atomic(&paths.checkpoint(), |w| ckpt.write_to(w))?;

    let summary = RunSummary { spec: spec.clone(), epochs: state.epoch, stopped: state.stopped, winner: win, loser };
    write_summary(&paths.summary(), &summary)?;
    Ok(summary)
}

/// A completed run whose recorded spec matches `spec`, if any.
pub fn completed_run(spec: &RunSpec, out_dir: &Path) -> Option<RunSummary> {
    let path = RunPaths::new(out_dir, spec.setting, spec.seed).summary();
    read_summary(&path).ok().filter(|s| s.spec == *spec)
}

/// Runs every `(setting, seed)` of the plan on `workers` threads. Completed
/// runs are skipped; a failing run is reported without stopping the others.
/// `progress` is called once per job as it finishes.
pub fn run_plan(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    workers: usize,
    progress: &(dyn Fn(&RunOutcome) + Sync),
) -> Result<Vec<RunOutcome>> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let jobs: Vec<RunSpec> = cfg
        .experiment
        .settings
        .iter()
        .flat_map(|&s| cfg.experiment.seeds.iter().map(move |&seed| (s, seed)))
        .map(|(s, seed)| cfg.run_spec(s, seed))
        .collect();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, RunOutcome)>> = Mutex::new(Vec::with_capacity(jobs.len()));
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, jobs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(spec) = jobs.get(i) else { break };
                let status = match completed_run(spec, out_dir) {
                    Some(s) => RunStatus::Skipped(s),
                    None => match run_one(spec, out_dir) {
                        Ok(s) => RunStatus::Completed(s),
                        Err(e) => RunStatus::Failed(e),
                    },
                };
                let outcome = RunOutcome { setting: spec.setting, seed: spec.seed, status };
                progress(&outcome);
                results.lock().unwrap_or_else(|e| e.into_inner()).push((i, outcome));
            });
        }
    });
    let mut results = results.into_inner().unwrap_or_else(|e| e.into_inner());
    results.sort_by_key(|(i, _)| *i);
    Ok(results.into_iter().map(|(_, o)| o).collect())
}

/// Directory of one run under `out_dir`.
pub fn run_dir(out_dir: &Path, setting: SettingId, seed: u64) -> PathBuf {
    RunPaths::new(out_dir, setting, seed).dir
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::records::read_records;

    fn tiny() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.agents.hidden_dim = 8;
        cfg.train.batch_size = 32;
        cfg.train.max_epochs = 6;
        cfg.train.eval_every = 3;
        cfg.train.stage_epochs = 2;
        cfg
    }

    #[test]
    fn plan_writes_one_directory_per_run_and_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny();
        cfg.experiment.settings = vec![SettingId::CoopBase, SettingId::CompRsDo];
        cfg.experiment.seeds = vec![1, 2, 3];
        let out = run_plan(&cfg, dir.path(), 2, &|_| {}).unwrap();
        assert_eq!(out.len(), 6);
        assert!(out.iter().all(|o| matches!(o.status, RunStatus::Completed(_))));
        for o in &out {
            let p = RunPaths::new(dir.path(), o.setting, o.seed);
            for f in [p.csv(), p.summary(), p.transcripts(), p.checkpoint()] {
                assert!(f.is_file(), "{}", f.display());
            }
        }

        fs::remove_file(RunPaths::new(dir.path(), SettingId::CompRsDo, 2).summary()).unwrap();
        let again = run_plan(&cfg, dir.path(), 1, &|_| {}).unwrap();
        let rerun: Vec<_> =
            again.iter().filter(|o| matches!(o.status, RunStatus::Completed(_))).map(|o| (o.setting, o.seed)).collect();
        assert_eq!(rerun, vec![(SettingId::CompRsDo, 2)]);
    }

    #[test]
    fn changed_spec_is_not_resumed() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny();
        run_plan(&cfg, dir.path(), 1, &|_| {}).unwrap();
        let mut other = cfg.clone();
        other.train.learning_rate = 0.02;
        let out = run_plan(&other, dir.path(), 1, &|_| {}).unwrap();
        assert!(matches!(out[0].status, RunStatus::Completed(_)));
    }

    #[test]
    fn identical_plans_give_identical_csvs() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let mut cfg = tiny();
        cfg.experiment.settings = vec![SettingId::CompRsDoTs];
        run_plan(&cfg, a.path(), 1, &|_| {}).unwrap();
        run_plan(&cfg, b.path(), 1, &|_| {}).unwrap();
        let csv = |d: &Path| fs::read(RunPaths::new(d, SettingId::CompRsDoTs, 1).csv()).unwrap();
        assert_eq!(csv(a.path()), csv(b.path()));
        let ck = |d: &Path| fs::read(RunPaths::new(d, SettingId::CompRsDoTs, 1).checkpoint()).unwrap();
        assert_eq!(ck(a.path()), ck(b.path()));
    }

    #[test]
    fn csv_matches_summary_and_checkpoint_restores_teams() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny();
        let spec = cfg.run_spec(SettingId::CoopDouble, 4);
        let summary = run_one(&spec, dir.path()).unwrap();
        let paths = RunPaths::new(dir.path(), SettingId::CoopDouble, 4);
        let rows = read_records(&paths.csv()).unwrap();
        // Two checkpoints per team, two splits each.
        assert_eq!(rows.len(), 8);
        let last_test = rows
            .iter()
            .rfind(|r| r.team == summary.winner.team && r.split == super::super::records::Split::Test)
            .unwrap();
        assert_eq!(last_test.accuracy, summary.winner.test_accuracy);
        let loser = summary.loser.as_ref().unwrap();
        assert!(summary.winner.test_accuracy >= loser.test_accuracy);

        let (t1, t2) = load_teams(&spec, &paths.checkpoint()).unwrap();
        let winner = if summary.winner.team == TeamLabel::Team1 { &t1 } else { t2.as_ref().unwrap() };
        let ts = all_pair_transcripts(&spec, winner).unwrap();
        let mut text = Vec::new();
        write_transcripts(&mut text, &ts).unwrap();
        assert_eq!(text, fs::read(paths.transcripts()).unwrap());
    }

    #[test]
    fn failures_are_reported_per_run() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny();
        // A file where a run directory should be makes that run fail.
        let blocked = run_dir(dir.path(), SettingId::CoopBase, 2);
        fs::create_dir_all(blocked.parent().unwrap()).unwrap();
        fs::write(&blocked, b"").unwrap();
        let mut cfg2 = cfg.clone();
        cfg2.experiment.seeds = vec![1, 2, 3];
        let out = run_plan(&cfg2, dir.path(), 1, &|_| {}).unwrap();
        let failed: Vec<u64> = out.iter().filter(|o| o.summary().is_none()).map(|o| o.seed).collect();
        assert_eq!(failed, vec![2]);
    }
}
