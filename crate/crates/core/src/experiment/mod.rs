//! Experiment plans: configuration, run execution, on-disk records and
//! cross-seed summaries.

pub mod config;
pub mod records;
pub mod runner;
pub mod summary;

pub use config::{load_config, parse_config, parse_seed_list, render_config, ExperimentConfig, RunSpec, SettingId};
pub use records::{
    load_summaries, read_records, read_summary, RecordWriter, RunPaths, RunRecord, RunSummary, Split, TeamSummary,
    CSV_HEADER,
};
pub use runner::{all_pair_transcripts, init_teams, load_teams, run_one, run_plan, RunOutcome, RunStatus};
pub use summary::{
    carry_forward, curve_at, format_table, mean_test_curve, summarize, truncate_run, with_records, SettingSummary,
    Stat, TruncatedOutcome,
};
