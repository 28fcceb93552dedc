use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{RunSpec, SettingId};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::trainer::{EvalPoint, TeamLabel};

pub const CSV_HEADER: &str = "setting,seed,epoch,team,split,accuracy,mean_reward";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// One CSV row: a team's greedy accuracy on one split at a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub setting: SettingId,
    pub seed: u64,
    pub epoch: usize,
    pub team: TeamLabel,
    pub split: Split,
    pub accuracy: f64,
    pub mean_reward: f64,
}

impl RunRecord {
    /// The two rows (train, test) of a checkpoint.
    pub fn from_eval(setting: SettingId, seed: u64, p: &EvalPoint) -> [RunRecord; 2] {
        let row = |split, accuracy| RunRecord {
            setting,
            seed,
            epoch: p.epoch,
            team: p.team,
            split,
            accuracy,
            mean_reward: p.mean_reward,
        };
        [row(Split::Train, p.train_accuracy), row(Split::Test, p.test_accuracy)]
    }
}

/// Append-only CSV sink; every row is flushed as soon as it is written.
pub struct RecordWriter {
    inner: csv::Writer<File>,
}

impl RecordWriter {
    /// Starts a fresh file, replacing any partial one.
    pub fn create(path: &Path) -> Result<Self> {
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
        inner.write_record(CSV_HEADER.split(','))?;
        inner.flush()?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, record: &RunRecord) -> Result<()> {
        self.inner.serialize(record)?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::Config(format!("{}: unexpected CSV header", path.display())));
    }
    reader.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeamSummary {
    pub team: TeamLabel,
    /// Greedy accuracies at the final checkpoint.
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Computed from greedy dialogs over every (instance, task) pair.
    pub metrics: MetricsReport,
}

/// Final outcome of one `(setting, seed)` run, written as `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub spec: RunSpec,
    pub epochs: usize,
    pub stopped: bool,
    /// Reported team: the trainer's winner, or for `coop_double` the team
    /// with the higher test accuracy.
    pub winner: TeamSummary,
    pub loser: Option<TeamSummary>,
}

impl RunSummary {
    pub fn setting(&self) -> SettingId {
        self.spec.setting
    }

    pub fn seed(&self) -> u64 {
        self.spec.seed
    }
}

/// File layout of one run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn new(out_dir: &Path, setting: SettingId, seed: u64) -> Self {
        Self { dir: out_dir.join("runs").join(setting.as_str()).join(seed.to_string()) }
    }

    pub fn csv(&self) -> PathBuf {
        self.dir.join("epochs.csv")
    }

    pub fn summary(&self) -> PathBuf {
        self.dir.join("summary.json")
    }

    pub fn transcripts(&self) -> PathBuf {
        self.dir.join("transcripts.txt")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join("checkpoint.bin")
    }
}

/// Writes through a temporary sibling and renames, so readers never see a
/// half-written file.
pub fn write_atomic(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        f(&mut w)?;
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_summary(path: &Path, summary: &RunSummary) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, summary)?;
        writeln!(w)?;
        Ok(())
    })
}

pub fn read_summary(path: &Path) -> Result<RunSummary> {
    Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
}

/// Every readable `summary.json` under `out_dir/runs`, ordered by setting
/// then seed.
pub fn load_summaries(out_dir: &Path) -> Result<Vec<RunSummary>> {
    let root = out_dir.join("runs");
    let mut out = Vec::new();
    if !root.is_dir() {
        return Ok(out);
    }
    for setting in fs::read_dir(&root)? {
        let setting = setting?.path();
        if !setting.is_dir() {
            continue;
        }
        for seed in fs::read_dir(&setting)? {
            let path = seed?.path().join("summary.json");
            if path.is_file() {
                out.push(read_summary(&path)?);
            }
        }
    }
    out.sort_by_key(|s| (s.setting(), s.seed()));
    Ok(out)
}
