use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use threadloop::episodes::{RepairWindow, TimeScope};
use threadloop::stats::Resampling;
use threadloop::{LexiconVariant, Platform};

#[derive(Debug, Parser)]
#[command(name = "threadloop", version, about = "Challenge, repair and correction-loop analysis of threaded forums")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load raw corpora, apply the year filter and cap, and write normalized JSONL.
    Ingest(IngestArgs),
    /// Screen communities on nested volume and author concentration.
    Select(SelectArgs),
    /// Nesting rates per community.
    H1(AnalysisArgs),
    /// Followup and repair after challenges.
    H2(AnalysisArgs),
    /// Post-challenge subtree metrics against non-challenge baselines.
    H3(AnalysisArgs),
    /// Author-level shifts after a first challenge, with placebo and durability checks.
    Authorshift(AuthorshiftArgs),
    /// Robustness suites.
    #[command(subcommand)]
    Robustness(Robustness),
    /// Repair-cue rates of visible versus hidden challenge transcripts.
    ProbeAnalyze(ProbeArgs),
    /// Generate a synthetic corpus with ground truth.
    Synth(SynthArgs),
    /// Check the analyzers against a synthetic corpus's ground truth.
    Verify(VerifyArgs),
    /// Assemble every cross-platform table.
    Report(ReportArgs),
}

#[derive(Debug, Subcommand)]
pub enum Robustness {
    /// Full versus strict cue lists.
    Cues(AnalysisArgs),
    /// Full sample versus a random subsample of posts.
    Cap(CapArgs),
    /// Leave-one-pair-out gaps.
    Loo(PairTableArgs),
    /// Repair rates under every detection window.
    Windows(AnalysisArgs),
    /// Cross-pair ranges and worst-case gaps.
    Heterogeneity(PairTableArgs),
}

/// `[PLATFORM=]PATH`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InputSpec {
    pub platform: Option<Platform>,
    pub path: PathBuf,
}

impl FromStr for InputSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if let Some((prefix, rest)) = s.split_once('=') {
            if let Ok(p) = prefix.parse::<Platform>() {
                return Ok(InputSpec {
                    platform: Some(p),
                    path: rest.into(),
                });
            }
        }
        Ok(InputSpec {
            platform: None,
            path: s.into(),
        })
    }
}

/// Inclusive year range, `2018-2021` or `2020`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct YearRange(pub i32, pub i32);

impl FromStr for YearRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parse = |v: &str| v.trim().parse::<i32>().map_err(|e| format!("bad year `{v}`: {e}"));
        let (a, b) = match s.split_once('-') {
            Some((a, b)) => (parse(a)?, parse(b)?),
            None => (parse(s)?, parse(s)?),
        };
        if a > b {
            return Err(format!("year range {a}-{b} is empty"));
        }
        Ok(YearRange(a, b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormatArg {
    Jsonl,
    Csv,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InputArgs {
    /// Corpus file or directory, optionally prefixed with its platform (`human=...`, `agent=...`).
    #[arg(long = "input", env = "THREADLOOP_INPUT", value_delimiter = ',', required = true)]
    pub inputs: Vec<InputSpec>,
    /// Platform of inputs without a prefix.
    #[arg(long, env = "THREADLOOP_PLATFORM", default_value = "human_forum")]
    pub platform: Platform,
    /// Format of directory inputs; files are recognised by extension.
    #[arg(long, env = "THREADLOOP_FORMAT", value_enum, default_value = "jsonl")]
    pub format: FormatArg,
    /// Per-community comment cap, applied in file order after the year filter.
    #[arg(long, env = "THREADLOOP_CAP")]
    pub cap: Option<usize>,
    /// Inclusive UTC year range, e.g. 2018-2021.
    #[arg(long, env = "THREADLOOP_YEARS")]
    pub years: Option<YearRange>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OutputArgs {
    /// Output directory.
    #[arg(long, env = "THREADLOOP_OUT")]
    #[serde(skip)]
    pub out: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long, env = "THREADLOOP_THREADS")]
    #[serde(skip)]
    pub threads: Option<usize>,
    /// Recompute even when the outputs match the manifest.
    #[arg(long)]
    #[serde(skip)]
    pub no_cache: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LexiconArgs {
    #[arg(long, env = "THREADLOOP_LEXICON", default_value = "full")]
    pub lexicon: LexiconVariant,
    /// JSON file replacing the built-in cue lists.
    #[arg(long, env = "THREADLOOP_LEXICON_FILE")]
    pub lexicon_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepairMode {
    Direct,
    K,
    Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScopeArg {
    SamePost,
    Corpus,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RepairArgs {
    #[arg(long, visible_alias = "mode", env = "THREADLOOP_REPAIR_MODE", value_enum, default_value = "direct")]
    pub repair_mode: RepairMode,
    /// Comments after the challenge scanned in `k` mode.
    #[arg(long, env = "THREADLOOP_K", default_value_t = 3)]
    pub k: usize,
    /// Hours after the challenge scanned in `time` mode.
    #[arg(long, env = "THREADLOOP_HOURS", default_value_t = 24.0)]
    pub hours: f64,
    /// Whether `time` mode looks beyond the challenge's post.
    #[arg(long, env = "THREADLOOP_TIME_SCOPE", value_enum, default_value = "same-post")]
    pub time_scope: ScopeArg,
}

impl RepairArgs {
    pub fn window(&self) -> threadloop::Result<RepairWindow> {
        match self.repair_mode {
            RepairMode::Direct => Ok(RepairWindow::Direct),
            RepairMode::K => RepairWindow::next_comments(self.k),
            RepairMode::Time => RepairWindow::hours_scoped(
                self.hours,
                match self.time_scope {
                    ScopeArg::SamePost => TimeScope::SamePost,
                    ScopeArg::Corpus => TimeScope::Corpus,
                },
            ),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SeedArgs {
    /// Seed of every randomized step.
    #[arg(long, env = "THREADLOOP_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "THREADLOOP_N_PERM", default_value_t = 10_000)]
    pub n_perm: u64,
    #[arg(long, env = "THREADLOOP_N_BOOT", default_value_t = 5_000)]
    pub n_boot: u64,
}

impl SeedArgs {
    pub fn resampling(&self) -> Option<Resampling> {
        self.seed.map(|seed| Resampling {
            n_perm: self.n_perm,
            n_boot: self.n_boot,
            seed,
        })
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct IngestArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SelectArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long, env = "THREADLOOP_MIN_NESTED", default_value_t = 750)]
    pub min_nested: usize,
    #[arg(long, env = "THREADLOOP_MAX_TOP5", default_value_t = 0.5)]
    pub max_top5: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AnalysisArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    #[command(flatten)]
    pub lexicon: LexiconArgs,
    #[command(flatten)]
    pub repair: RepairArgs,
    #[command(flatten)]
    pub seed: SeedArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AuthorshiftArgs {
    #[command(flatten)]
    pub analysis: AnalysisArgs,
    /// Minimum pre-event comments of a challenged author.
    #[arg(long, default_value_t = 4)]
    pub min_pre: usize,
    #[arg(long, default_value_t = 1)]
    pub min_post: usize,
    /// Also write per-author timelines as JSONL.
    #[arg(long)]
    pub dump_authors: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CapArgs {
    #[command(flatten)]
    pub analysis: AnalysisArgs,
    /// Share of posts kept in the subsample.
    #[arg(long, default_value_t = 1.0 / 3.0)]
    pub fraction: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PairTableArgs {
    /// Pair-level values as CSV (`pair_id,metric,human_value,agent_value`).
    #[arg(long, env = "THREADLOOP_PAIR_TABLE", conflicts_with = "pairs")]
    pub pair_table: Option<PathBuf>,
    /// Matched community pairs (JSON), used with both platform inputs.
    #[arg(long, env = "THREADLOOP_PAIRS")]
    pub pairs: Option<PathBuf>,
    #[arg(long = "input", env = "THREADLOOP_INPUT", value_delimiter = ',')]
    pub inputs: Vec<InputSpec>,
    #[arg(long, env = "THREADLOOP_FORMAT", value_enum, default_value = "jsonl")]
    pub format: FormatArg,
    #[arg(long, env = "THREADLOOP_CAP")]
    pub cap: Option<usize>,
    #[arg(long, env = "THREADLOOP_YEARS")]
    pub years: Option<YearRange>,
    #[command(flatten)]
    pub output: OutputArgs,
    #[command(flatten)]
    pub lexicon: LexiconArgs,
    #[command(flatten)]
    pub repair: RepairArgs,
    #[command(flatten)]
    pub seed: SeedArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReportArgs {
    #[command(flatten)]
    pub tables: PairTableArgs,
    #[arg(long, default_value_t = 4)]
    pub min_pre: usize,
    #[arg(long, default_value_t = 1)]
    pub min_post: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ProbeArgs {
    /// CSV with columns `pair_id,condition,response`; condition is `visible` or `hidden`.
    #[arg(long, env = "THREADLOOP_TRANSCRIPTS")]
    pub transcripts: PathBuf,
    #[arg(long, env = "THREADLOOP_LEXICON_FILE")]
    pub lexicon_file: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
    #[command(flatten)]
    pub seed: SeedArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long, env = "THREADLOOP_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "THREADLOOP_PLATFORM", default_value = "human_forum")]
    pub platform: Platform,
    #[arg(long, default_value_t = 200)]
    pub n_posts: usize,
    /// Mean comments per post.
    #[arg(long, default_value_t = 12.0)]
    pub comments_per_post: f64,
    #[arg(long, default_value_t = 0.6)]
    pub p_nest: f64,
    #[arg(long, default_value_t = 0.2)]
    pub p_challenge: f64,
    #[arg(long, default_value_t = 0.4)]
    pub p_followup: f64,
    #[arg(long, default_value_t = 0.5)]
    pub p_repair: f64,
    #[arg(long, default_value_t = 0.15)]
    pub p_hedge: f64,
    #[arg(long, default_value_t = 0.2)]
    pub p_indirect: f64,
    #[arg(long, default_value_t = 60)]
    pub n_authors: usize,
    #[arg(long, default_value_t = 1.0)]
    pub author_skew: f64,
    #[arg(long, default_value_t = 2)]
    pub n_communities: usize,
    #[arg(long, default_value_t = 60)]
    pub time_span_days: u32,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VerifyArgs {
    /// Synthetic corpus (JSONL).
    #[arg(long = "input", env = "THREADLOOP_INPUT")]
    pub input: PathBuf,
    /// Ground truth written next to the corpus by `synth`.
    #[arg(long, env = "THREADLOOP_TRUTH")]
    pub truth: PathBuf,
    /// Defaults to the seed recorded in the ground truth.
    #[arg(long, env = "THREADLOOP_SEED")]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn input_spec_prefix_is_optional() {
        let s: InputSpec = "agent=data/m.jsonl".parse().unwrap();
        assert_eq!(s.platform, Some(Platform::AgentForum));
        let s: InputSpec = "weird=name.jsonl".parse().unwrap();
        assert_eq!((s.platform, s.path), (None, PathBuf::from("weird=name.jsonl")));
    }

    #[test]
    fn year_ranges() {
        assert_eq!("2018-2021".parse::<YearRange>().unwrap(), YearRange(2018, 2021));
        assert_eq!("2020".parse::<YearRange>().unwrap(), YearRange(2020, 2020));
        assert!("2021-2018".parse::<YearRange>().is_err());
    }
}
