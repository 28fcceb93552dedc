use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::SettingId;
use super::records::{read_records, RunPaths, RunRecord, RunSummary, Split};
use crate::error::{Error, Result};
use crate::trainer::TeamLabel;

/// Mean and sample standard deviation over seeds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    /// Set when `n == 1`; `std` is then reported as zero.
    pub single_seed: bool,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Result<Stat> {
        if xs.is_empty() {
            return Err(Error::EmptyInput);
        }
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std =
            if n > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
        Ok(Stat { mean, std, n, single_seed: n == 1 })
    }
}

/// One row of a results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SettingSummary {
    pub setting: SettingId,
    pub seeds: Vec<u64>,
    pub winner_train: Stat,
    pub winner_test: Stat,
    pub loser_train: Option<Stat>,
    pub loser_test: Option<Stat>,
    pub ic: Stat,
    pub sc: Stat,
    pub h_a: Stat,
    pub h_q: Stat,
    pub ic_joint: Stat,
}

/// Aggregates completed runs per requested setting, in the order given.
pub fn summarize(runs: &[RunSummary], settings: &[SettingId]) -> Result<Vec<SettingSummary>> {
    settings
        .iter()
        .map(|&setting| {
            let rs: Vec<&RunSummary> = runs.iter().filter(|r| r.setting() == setting).collect();
            if rs.is_empty() {
                return Err(Error::NoCompletedRuns(setting.to_string()));
            }
            let stat = |f: &dyn Fn(&RunSummary) -> f64| Stat::of(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            let losers: Vec<_> = rs.iter().filter_map(|r| r.loser.as_ref()).collect();
            let loser_stat = |f: &dyn Fn(&super::records::TeamSummary) -> f64| {
                if losers.len() == rs.len() {
                    Stat::of(&losers.iter().map(|l| f(l)).collect::<Vec<_>>()).map(Some)
                } else {
                    Ok(None)
                }
            };
            Ok(SettingSummary {
                setting,
                seeds: rs.iter().map(|r| r.seed()).collect(),
                winner_train: stat(&|r| r.winner.train_accuracy)?,
                winner_test: stat(&|r| r.winner.test_accuracy)?,
                loser_train: loser_stat(&|l| l.train_accuracy)?,
                loser_test: loser_stat(&|l| l.test_accuracy)?,
                ic: stat(&|r| r.winner.metrics.ic)?,
                sc: stat(&|r| r.winner.metrics.sc)?,
                h_a: stat(&|r| r.winner.metrics.h_a)?,
                h_q: stat(&|r| r.winner.metrics.h_q)?,
                ic_joint: stat(&|r| r.winner.metrics.ic_joint)?,
            })
        })
        .collect()
}

fn cell(s: &Stat) -> String {
    format!("{:.3} ± {:.3}{}", s.mean, s.std, if s.single_seed { "*" } else { "" })
}

/// Plain-text table; `*` marks single-seed cells.
pub fn format_table(rows: &[SettingSummary]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<14} {:>5} {:>15} {:>15} {:>15} {:>15} {:>15} {:>15} {:>15} {:>15}",
        "setting", "seeds", "win train", "win test", "lose train", "lose test", "IC", "SC", "H(A)", "H(Q)"
    );
    for r in rows {
        let opt = |s: &Option<Stat>| s.as_ref().map_or_else(|| "-".to_string(), cell);
        let _ = writeln!(
            out,
            "{:<14} {:>5} {:>15} {:>15} {:>15} {:>15} {:>15} {:>15} {:>15} {:>15}",
            r.setting.as_str(),
            r.seeds.len(),
            cell(&r.winner_train),
            cell(&r.winner_test),
            opt(&r.loser_train),
            opt(&r.loser_test),
            cell(&r.ic),
            cell(&r.sc),
            cell(&r.h_a),
            cell(&r.h_q),
        );
    }
    out
}

/// Per-checkpoint `(epoch, train, test)` of one team, ordered by epoch.
pub fn team_checkpoints(records: &[RunRecord], team: TeamLabel) -> Vec<(usize, f64, f64)> {
    let mut by_epoch: BTreeMap<usize, (Option<f64>, Option<f64>)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.team == team) {
        let e = by_epoch.entry(r.epoch).or_default();
        match r.split {
            Split::Train => e.0 = Some(r.accuracy),
            Split::Test => e.1 = Some(r.accuracy),
        }
    }
    by_epoch.into_iter().filter_map(|(epoch, (tr, te))| Some((epoch, tr?, te?))).collect()
}

/// Test-accuracy curve where each checkpoint reports the test accuracy at
/// the best train accuracy seen so far (latest on ties).
pub fn carry_forward(records: &[RunRecord], team: TeamLabel) -> Vec<(usize, f64)> {
    let mut best: Option<(f64, f64)> = None;
    team_checkpoints(records, team)
        .into_iter()
        .map(|(epoch, train, test)| {
            if best.is_none_or(|(b, _)| train >= b) {
                best = Some((train, test));
            }
            (epoch, best.map_or(test, |(_, t)| t))
        })
        .collect()
}

/// Value of a step curve at `epoch`: the last point at or before it, held
/// constant after the curve ends. `None` before the first point.
pub fn curve_at(curve: &[(usize, f64)], epoch: usize) -> Option<f64> {
    curve.iter().take_while(|(e, _)| *e <= epoch).last().map(|&(_, v)| v)
}

/// Mean carry-forward test curve of the reported team over runs, sampled at
/// every checkpoint epoch present in any run.
pub fn mean_test_curve(runs: &[(RunSummary, Vec<RunRecord>)]) -> Result<Vec<(usize, Stat)>> {
    if runs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let curves: Vec<Vec<(usize, f64)>> = runs.iter().map(|(s, r)| carry_forward(r, s.winner.team)).collect();
    let mut grid: Vec<usize> = curves.iter().flatten().map(|&(e, _)| e).collect();
    grid.sort_unstable();
    grid.dedup();
    grid.into_iter()
        .filter_map(|e| {
            let vals: Option<Vec<f64>> = curves.iter().map(|c| curve_at(c, e)).collect();
            vals.map(|v| Stat::of(&v).map(|s| (e, s)))
        })
        .collect()
}

/// How a run would have ended had its budget been `budget` epochs, derived
/// from its checkpoint log alone.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncatedOutcome {
    pub epoch: usize,
    pub winner: TeamLabel,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// Replays the stopping and winner rules of `setting` on the checkpoints at
/// or before `budget`.
pub fn truncate_run(
    setting: SettingId,
    records: &[RunRecord],
    budget: usize,
    threshold: f64,
) -> Option<TruncatedOutcome> {
    let cut = |team| -> Vec<(usize, f64, f64)> {
        team_checkpoints(records, team).into_iter().filter(|c| c.0 <= budget).collect()
    };
    let outcome = |team, c: &(usize, f64, f64)| TruncatedOutcome {
        epoch: c.0,
        winner: team,
        train_accuracy: c.1,
        test_accuracy: c.2,
    };
    let c1 = cut(TeamLabel::Team1);
    match setting.teams() {
        1 => c1.last().map(|c| outcome(TeamLabel::Team1, c)),
        _ if !setting.is_competitive() => {
            let c2 = cut(TeamLabel::Team2);
            match (c1.last(), c2.last()) {
                (Some(a), Some(b)) if b.2 > a.2 => Some(outcome(TeamLabel::Team2, b)),
                (Some(a), _) => Some(outcome(TeamLabel::Team1, a)),
                (None, Some(b)) => Some(outcome(TeamLabel::Team2, b)),
                (None, None) => None,
            }
        }
        _ => {
            let c2 = cut(TeamLabel::Team2);
            for (a, b) in c1.iter().zip(&c2) {
                if a.1 >= threshold {
                    return Some(outcome(TeamLabel::Team1, a));
                }
                if b.1 >= threshold {
                    return Some(outcome(TeamLabel::Team2, b));
                }
            }
            match (c1.last(), c2.last()) {
                (Some(a), Some(b)) if b.1 > a.1 => Some(outcome(TeamLabel::Team2, b)),
                (Some(a), _) => Some(outcome(TeamLabel::Team1, a)),
                _ => None,
            }
        }
    }
}

/// Loads the checkpoint log of every given run.
pub fn with_records(out_dir: &Path, runs: &[RunSummary]) -> Result<Vec<(RunSummary, Vec<RunRecord>)>> {
    runs.iter().map(|s| Ok((s.clone(), read_records(&RunPaths::new(out_dir, s.setting(), s.seed()).csv())?))).collect()
}
