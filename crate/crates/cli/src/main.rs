use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ttc_core::arena::write_transcripts;
use ttc_core::experiment::{
    all_pair_transcripts, format_table, load_config, load_summaries, parse_seed_list, read_summary, run_plan,
    summarize, with_records, ExperimentConfig, RunOutcome, RunPaths, RunStatus, SettingId, CSV_HEADER,
};
use ttc_core::experiment::{load_teams, read_records, RecordWriter};
use ttc_core::trainer::TeamLabel;

#[derive(Parser)]
#[command(name = "ttc", version, about = "Train and analyse competing communicating teams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute every (setting, seed) run of a plan, skipping finished ones.
    Run(RunArgs),
    /// Aggregate finished runs into a results table.
    Summarize(SummarizeArgs),
    /// Print the greedy dialogs of a finished run.
    DumpTranscripts(DumpArgs),
}

#[derive(Args)]
struct PlanArgs {
    /// TOML experiment description; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated setting ids, overriding the config.
    #[arg(long, value_delimiter = ',')]
    setting: Vec<SettingId>,
    /// Seeds such as `1,2,3` or `1..5`, overriding the config.
    #[arg(long)]
    seeds: Option<String>,
    /// Epoch budget per run, overriding the config.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

impl PlanArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => load_config(p).with_context(|| format!("reading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if !self.setting.is_empty() {
            cfg.experiment.settings = self.setting.clone();
        }
        if let Some(s) = &self.seeds {
            cfg.experiment.seeds = parse_seed_list(s)?;
        }
        if let Some(e) = self.epochs {
            cfg.train.max_epochs = e;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    plan: PlanArgs,
    /// Runs executed concurrently.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args)]
struct SummarizeArgs {
    #[command(flatten)]
    plan: PlanArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum TeamChoice {
    Winner,
    Loser,
    Team1,
    Team2,
}

#[derive(Args)]
struct DumpArgs {
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long)]
    setting: SettingId,
    #[arg(long, default_value = "1")]
    seeds: String,
    #[arg(long, value_enum, default_value = "winner")]
    team: TeamChoice,
}

fn describe(o: &RunOutcome) -> String {
    let head = format!("{}/{}", o.setting, o.seed);
    match &o.status {
        RunStatus::Completed(s) | RunStatus::Skipped(s) => format!(
            "{head}: {} after {} epochs, {} train {:.3} test {:.3}",
            if matches!(o.status, RunStatus::Skipped(_)) { "cached" } else { "done" },
            s.epochs,
            s.winner.team.as_str(),
            s.winner.train_accuracy,
            s.winner.test_accuracy
        ),
        RunStatus::Failed(e) => format!("{head}: FAILED: {e}"),
    }
}

fn run(args: &RunArgs) -> Result<bool> {
    let cfg = args.plan.resolve()?;
    let outcomes = run_plan(&cfg, &args.plan.out_dir, args.workers, &|o| eprintln!("{}", describe(o)))?;
    Ok(outcomes.iter().all(|o| o.summary().is_some()))
}

/// Concatenates every run's checkpoint log into one CSV.
fn merge_csv(out_dir: &Path, runs: &[ttc_core::experiment::RunSummary]) -> Result<PathBuf> {
    let path = out_dir.join("epochs.csv");
    let mut w = RecordWriter::create(&path)?;
    for s in runs {
        for r in read_records(&RunPaths::new(out_dir, s.setting(), s.seed()).csv())? {
            w.write(&r)?;
        }
    }
    Ok(path)
}

fn summarize_cmd(args: &SummarizeArgs) -> Result<bool> {
    let cfg = args.plan.resolve()?;
    let out = &args.plan.out_dir;
    let runs: Vec<_> = load_summaries(out)?
        .into_iter()
        .filter(|s| cfg.experiment.settings.contains(&s.setting()) && cfg.experiment.seeds.contains(&s.seed()))
        .collect();
    let rows = summarize(&runs, &cfg.experiment.settings)?;
    print!("{}", format_table(&rows));
    for &setting in &cfg.experiment.settings {
        let of: Vec<_> = runs.iter().filter(|r| r.setting() == setting).cloned().collect();
        let curve = ttc_core::experiment::mean_test_curve(&with_records(out, &of)?)?;
        if let Some((epoch, stat)) = curve.last() {
            println!("{setting}: carried-forward test {:.3} ± {:.3} at epoch {epoch}", stat.mean, stat.std);
        }
    }
    let table = out.join("summary.json");
    std::fs::write(&table, serde_json::to_string_pretty(&rows)? + "\n")?;
    let csv = merge_csv(out, &runs)?;
    eprintln!("wrote {} and {} ({CSV_HEADER})", table.display(), csv.display());
    Ok(true)
}

fn dump(args: &DumpArgs) -> Result<bool> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for seed in parse_seed_list(&args.seeds)? {
        let paths = RunPaths::new(&args.out_dir, args.setting, seed);
        let summary =
            read_summary(&paths.summary()).with_context(|| format!("no finished run at {}", paths.dir.display()))?;
        let label = match args.team {
            TeamChoice::Winner => summary.winner.team,
            TeamChoice::Loser => match &summary.loser {
                Some(l) => l.team,
                None => bail!("{}/{seed} trained a single team", args.setting),
            },
            TeamChoice::Team1 => TeamLabel::Team1,
            TeamChoice::Team2 => TeamLabel::Team2,
        };
        let (t1, t2) = load_teams(&summary.spec, &paths.checkpoint())?;
        let team = match label {
            TeamLabel::Team1 => &t1,
            TeamLabel::Team2 => match &t2 {
                Some(t) => t,
                None => bail!("{}/{seed} has no second team", args.setting),
            },
        };
        writeln!(out, "# {}/{seed} {}", args.setting, label.as_str())?;
        write_transcripts(&mut out, &all_pair_transcripts(&summary.spec, team)?)?;
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => run(a),
        Command::Summarize(a) => summarize_cmd(a),
        Command::DumpTranscripts(a) => dump(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
