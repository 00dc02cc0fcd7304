use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use threadloop::authorshift::{build_timelines, ShiftThresholds};
use threadloop::corpus::{audit_cap, ingest, subsample_posts, IngestOptions, IngestReport, InputFormat};
use threadloop::episodes::{evaluate_episodes, RepairWindow};
use threadloop::report::{
    analyze_corpus, h1_rows_from_corpus, h2_rows, h3_rows, pair_table, pooled_row, probe_rows, read_probe_csv,
    shift_means, shift_tables, window_rows, AnalysisConfig, Masks,
};
use threadloop::stats::{heterogeneity, leave_one_pair_out, PairTable, Resampling};
use threadloop::structure::{load_pairs, select_communities, validate_pairs, SelectionThresholds, Tier};
use threadloop::synth::{generate, verify, AnalyzerOutputs, CommentsPerPost, GroundTruth, SynthConfig};
use threadloop::{Corpus, Error, LexiconSet, LexiconVariant, Platform};

use crate::args::*;
use crate::output::{cell, Stage};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest(a) => cmd_ingest(&a),
        Command::Select(a) => cmd_select(&a),
        Command::H1(a) => cmd_h1(&a),
        Command::H2(a) => cmd_h2(&a),
        Command::H3(a) => cmd_h3(&a),
        Command::Authorshift(a) => cmd_authorshift(&a),
        Command::Robustness(Robustness::Cues(a)) => cmd_cues(&a),
        Command::Robustness(Robustness::Cap(a)) => cmd_cap(&a),
        Command::Robustness(Robustness::Windows(a)) => cmd_windows(&a),
        Command::Robustness(Robustness::Loo(a)) => cmd_pair_tables(&a, "robustness loo"),
        Command::Robustness(Robustness::Heterogeneity(a)) => cmd_pair_tables(&a, "robustness heterogeneity"),
        Command::ProbeAnalyze(a) => cmd_probe(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Verify(a) => cmd_verify(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

/// Thread count requested by any command, for the global pool.
pub fn threads(command: &Command) -> Option<usize> {
    let out = match command {
        Command::Ingest(a) => &a.output,
        Command::Select(a) => &a.output,
        Command::H1(a) | Command::H2(a) | Command::H3(a) => &a.output,
        Command::Authorshift(a) => &a.analysis.output,
        Command::Robustness(Robustness::Cues(a) | Robustness::Windows(a)) => &a.output,
        Command::Robustness(Robustness::Cap(a)) => &a.analysis.output,
        Command::Robustness(Robustness::Loo(a) | Robustness::Heterogeneity(a)) => &a.output,
        Command::ProbeAnalyze(a) => &a.output,
        Command::Synth(a) => &a.output,
        Command::Verify(a) => &a.output,
        Command::Report(a) => &a.tables.output,
    };
    out.threads
}

fn require_seed(seed: &SeedArgs, command: &str) -> Result<Resampling> {
    seed.resampling()
        .ok_or_else(|| Error::Config(format!("`{command}` is randomized; pass --seed")).into())
}

fn require_exists(paths: &[&Path]) -> Result<()> {
    for p in paths {
        if !p.exists() {
            return Err(Error::Config(format!("{} does not exist", p.display())).into());
        }
    }
    Ok(())
}

fn lexicons(file: Option<&Path>) -> Result<LexiconSet> {
    Ok(match file {
        Some(p) => LexiconSet::from_path(p)?,
        None => LexiconSet::builtin(),
    })
}

struct Loaded {
    platform: Platform,
    path: PathBuf,
    corpus: Corpus,
    report: IngestReport,
}

fn load(specs: &[InputSpec], default: Platform, format: FormatArg, cap: Option<usize>, years: Option<YearRange>) -> Result<Vec<Loaded>> {
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    for spec in specs {
        require_exists(&[&spec.path])?;
        let platform = spec.platform.unwrap_or(default);
        if let Some(prev) = seen.insert(platform, spec.path.clone()) {
            return Err(Error::Config(format!(
                "two inputs for {platform}: {} and {}",
                prev.display(),
                spec.path.display()
            ))
            .into());
        }
        let fmt = match spec.path.extension().and_then(|e| e.to_str()) {
            Some("csv") => InputFormat::Csv,
            Some("jsonl" | "json") => InputFormat::Jsonl,
            _ => match format {
                FormatArg::Csv => InputFormat::Csv,
                FormatArg::Jsonl => InputFormat::Jsonl,
            },
        };
        let options = IngestOptions {
            max_comments_cap: cap,
            year_range: years.map(|y| (y.0, y.1)),
            ..IngestOptions::new(fmt, platform)
        };
        let (corpus, report) = ingest(&spec.path, &options)?;
        out.push(Loaded {
            platform,
            path: spec.path.clone(),
            corpus,
            report,
        });
    }
    out.sort_by_key(|l| l.platform);
    Ok(out)
}

fn load_inputs(a: &InputArgs) -> Result<Vec<Loaded>> {
    load(&a.inputs, a.platform, a.format, a.cap, a.years)
}

fn input_paths(specs: &[InputSpec]) -> Vec<&Path> {
    specs.iter().map(|s| s.path.as_path()).collect()
}

fn finish(stage: Stage, out: &Path) -> Result<()> {
    let m = stage.finish()?;
    for o in &m.outputs {
        println!("{}", out.join(&o.path).display());
    }
    Ok(())
}

fn skip_if_cached(stage: &Stage, out: &OutputArgs) -> bool {
    if !out.no_cache && stage.is_cached() {
        eprintln!("{}: outputs up to date", out.out.display());
        return true;
    }
    false
}

fn analysis_config(a: &AnalysisArgs, resampling: Option<Resampling>) -> Result<AnalysisConfig> {
    Ok(AnalysisConfig {
        lexicon: a.lexicon.lexicon,
        window: a.repair.window()?,
        resampling,
    })
}

fn analysis_stage(a: &AnalysisArgs, command: &str, config: &impl Serialize) -> Result<Stage> {
    let mut inputs = input_paths(&a.input.inputs);
    if let Some(f) = &a.lexicon.lexicon_file {
        require_exists(&[f])?;
        inputs.push(f);
    }
    Stage::new(&a.output.out, command, a.seed.seed, config, &inputs)
}

#[derive(Serialize)]
struct CapAuditCsv<'a> {
    platform: Platform,
    community: &'a str,
    loaded: usize,
    year: i32,
    share_pct: f64,
    cap_hit: bool,
}

fn cmd_ingest(a: &IngestArgs) -> Result<()> {
    let mut stage = Stage::new(&a.output.out, "ingest", None, a, &input_paths(&a.input.inputs))?;
    if skip_if_cached(&stage, &a.output) {
        return Ok(());
    }
    for l in load_inputs(&a.input)? {
        let p = l.platform.as_str();
        let mut w = stage.writer(&format!("corpus_{p}.jsonl"))?;
        l.corpus.write_jsonl(&mut w)?;
        drop(w);
        stage.json(&format!("ingest_{p}.json"), &l.report)?;
        let audit = audit_cap(&l.corpus);
        let rows: Vec<CapAuditCsv> = audit
            .iter()
            .flat_map(|r| {
                r.year_share.iter().map(move |(&year, &share)| CapAuditCsv {
                    platform: l.platform,
                    community: &r.community_id,
                    loaded: r.loaded,
                    year,
                    share_pct: share,
                    cap_hit: r.cap_hit,
                })
            })
            .collect();
        stage.csv(&format!("cap_audit_{p}.csv"), &rows)?;
        eprintln!(
            "{}: {} loaded, {} skipped, {} duplicates, {} orphans",
            l.path.display(),
            l.report.loaded,
            l.report.skipped,
            l.report.duplicates,
            l.report.orphans
        );
    }
    finish(stage, &a.output.out)
}

#[derive(Serialize)]
struct SelectCsv {
    platform: Platform,
    community: String,
    posts: usize,
    comments: usize,
    nested: usize,
    nesting_rate: f64,
    top5_share: f64,
    eligible: bool,
    tier: Tier,
    min_nested: usize,
    max_top5: f64,
}

fn cmd_select(a: &SelectArgs) -> Result<()> {
    let mut stage = Stage::new(&a.output.out, "select", None, a, &input_paths(&a.input.inputs))?;
    if skip_if_cached(&stage, &a.output) {
        return Ok(());
    }
    let thresholds = SelectionThresholds {
        min_nested: a.min_nested,
        max_top5: a.max_top5,
    };
    let mut rows = Vec::new();
    for l in load_inputs(&a.input)? {
        for s in select_communities(&l.corpus, thresholds)? {
            rows.push(SelectCsv {
                platform: l.platform,
                community: s.community_id,
                posts: s.posts,
                comments: s.comments,
                nested: s.nested,
                nesting_rate: s.nesting_rate,
                top5_share: s.top5_author_share,
                eligible: s.eligible,
                tier: s.tier,
                min_nested: a.min_nested,
                max_top5: a.max_top5,
            });
        }
    }
    stage.csv("communities.csv", &rows)?;
    finish(stage, &a.output.out)
}

fn cmd_h1(a: &AnalysisArgs) -> Result<()> {
    let mut stage = analysis_stage(a, "h1", a)?;
    if skip_if_cached(&stage, &a.output) {
        return Ok(());
    }
    let cfg = analysis_config(a, a.seed.resampling())?;
    let mut rows = Vec::new();
    for l in load_inputs(&a.input)? {
        rows.extend(h1_rows_from_corpus(&l.corpus, &cfg)?);
    }
    stage.csv("h1.csv", &rows)?;
    finish(stage, &a.output.out)
}

fn cmd_h2(a: &AnalysisArgs) -> Result<()> {
    let mut stage = analysis_stage(a, "h2", a)?;
    if skip_if_cached(&stage, &a.output) {
        return Ok(());
    }
    let cfg = analysis_config(a, None)?;
    let lex = lexicons(a.lexicon.lexicon_file.as_deref())?;
    let mut windows = RepairWindow::standard_set();
    if !windows.contains(&cfg.window) {
        windows.push(cfg.window);
    }
    let mut rows = Vec::new();
    let mut outcomes = Vec::new();
    for l in load_inputs(&a.input)? {
        let (analyses, episodes) = analyze_corpus(&l.corpus, &lex, None, &cfg)?;
        rows.extend(h2_rows(&analyses, &cfg));
        let masks = Masks::compute(&l.corpus, &lex, cfg.lexicon);
        outcomes.extend(evaluate_episodes(&episodes, &l.corpus, &windows, &masks.repair)?);
    }
    stage.csv("h2.csv", &rows)?;
    stage.jsonl("episodes.jsonl", &outcomes)?;
    finish(stage, &a.output.out)
}

fn cmd_h3(a: &AnalysisArgs) -> Result<()> {
    let r = require_seed(&a.seed, "h3")?;
    let mut stage = analysis_stage(a, "h3", a)?;
    if skip_if_cached(&stage, &a.output) {
        return Ok(());
    }
    let cfg = analysis_config(a, Some(r))?;
    let lex = lexicons(a.lexicon.lexicon_file.as_deref())?;
    let mut rows = Vec::new();
    for l in load_inputs(&a.input)? {
        let (analyses, _) = analyze_corpus(&l.corpus, &lex, None, &cfg)?;
        for w in analyses.iter().filter_map(|x| x.sampled_warning.as_ref()) {
            eprintln!("warning: {w}");
        }
        rows.extend(h3_rows(&analyses, &cfg)?);
    }
    stage.csv("h3.csv", &rows)?;
    finish(stage, &a.output.out)
}

#[derive(Serialize)]
struct SkippedCsv<'a> {
    community: &'a str,
    reason: &'a str,
}

fn cmd_authorshift(a: &AuthorshiftArgs) -> Result<()> {
    let r = require_seed(&a.analysis.seed, "authorshift")?;
    let mut stage = analysis_stage(&a.analysis, "authorshift", a)?;
    if skip_if_cached(&stage, &a.analysis.output) {
        return Ok(());
    }
    let cfg = analysis_config(&a.analysis, Some(r))?;
    let lex = lexicons(a.analysis.lexicon.lexicon_file.as_deref())?;
    let thresholds = ShiftThresholds {
        min_pre: a.min_pre,
        min_post: a.min_post,
    };
    let mut all = threadloop::report::ShiftTables::default();
    let mut dump = Vec::new();
    for l in load_inputs(&a.analysis.input)? {
        let comms: Vec<String> = l.corpus.communities().keys().cloned().collect();
        let t = shift_tables(&l.corpus, &comms, &lex, &cfg, thresholds)?;
        all.controlled.extend(t.controlled);
        all.placebo.extend(t.placebo);
        all.durability.extend(t.durability);
        all.drift.extend(t.drift);
        all.skipped.extend(t.skipped);
        if a.dump_authors {
            let masks = Masks::compute(&l.corpus, &lex, cfg.lexicon);
            for c in &comms {
                dump.extend(build_timelines(&l.corpus, c, &masks.hedging, &masks.challenge)?.into_values());
            }
        }
    }
    write_shift_tables(&mut stage, &all)?;
    if a.dump_authors {
        stage.jsonl("authors.jsonl", &dump)?;
    }
    finish(stage, &a.analysis.output.out)
}

fn write_shift_tables(stage: &mut Stage, t: &threadloop::report::ShiftTables) -> Result<()> {
    stage.csv("shift_controlled.csv", &t.controlled)?;
    stage.csv("shift_placebo.csv", &t.placebo)?;
    stage.csv("shift_durability.csv", &t.durability)?;
    stage.csv("shift_drift.csv", &t.drift)?;
    stage.csv("shift_means.csv", &shift_means(t))?;
    let skipped: Vec<SkippedCsv> = t
        .skipped
        .iter()
        .map(|(c, r)| SkippedCsv { community: c, reason: r })
        .collect();
    stage.csv("shift_skipped.csv", &skipped)?;
    Ok(())
}

fn cmd_cues(a: &AnalysisArgs) -> Result<()> {
    let mut stage = analysis_stage(a, "robustness cues", a)?;
    if skip_if_cached(&stage, &a.output) {
        return Ok(());
    }
    let lex = lexicons(a.lexicon.lexicon_file.as_deref())?;
    let mut rows = Vec::new();
    for l in load_inputs(&a.input)? {
        for variant in [LexiconVariant::Full, LexiconVariant::Strict] {
            let cfg = AnalysisConfig {
                lexicon: variant,
                ..analysis_config(a, None)?
            };
            let (analyses, _) = analyze_corpus(&l.corpus, &lex, None, &cfg)?;
            rows.push(pooled_row(variant.as_str(), l.platform, &analyses, &cfg));
        }
    }
    stage.csv("cues.csv", &rows)?;
    finish(stage, &a.output.out)
}

fn cmd_cap(a: &CapArgs) -> Result<()> {
    let r = require_seed(&a.analysis.seed, "robustness cap")?;
    let mut stage = analysis_stage(&a.analysis, "robustness cap", a)?;
    if skip_if_cached(&stage, &a.analysis.output) {
        return Ok(());
    }
    let cfg = analysis_config(&a.analysis, Some(r))?;
    let lex = lexicons(a.analysis.lexicon.lexicon_file.as_deref())?;
    let mut rows = Vec::new();
    for l in load_inputs(&a.analysis.input)? {
        let plain = AnalysisConfig { resampling: None, ..cfg };
        let (full, _) = analyze_corpus(&l.corpus, &lex, None, &plain)?;
        let mut row = pooled_row("full", l.platform, &full, &plain);
        row.seed = cfg.seed();
        rows.push(row);
        let sub = subsample_posts(&l.corpus, a.fraction, r.seed)?;
        let (part, _) = analyze_corpus(&sub, &lex, None, &plain)?;
        let mut row = pooled_row("subsample", l.platform, &part, &plain);
        row.seed = cfg.seed();
        rows.push(row);
    }
    stage.csv("cap.csv", &rows)?;
    finish(stage, &a.analysis.output.out)
}

fn cmd_windows(a: &AnalysisArgs) -> Result<()> {
    let mut stage = analysis_stage(a, "robustness windows", a)?;
    if skip_if_cached(&stage, &a.output) {
        return Ok(());
    }
    let cfg = analysis_config(a, a.seed.resampling())?;
    let lex = lexicons(a.lexicon.lexicon_file.as_deref())?;
    let mut rows = Vec::new();
    for l in load_inputs(&a.input)? {
        rows.extend(window_rows(&l.corpus, &lex, &RepairWindow::standard_set(), &cfg)?);
    }
    stage.csv("windows.csv", &rows)?;
    finish(stage, &a.output.out)
}

#[derive(Serialize)]
struct PairCsv<'a> {
    pair_id: &'a str,
    metric: &'a str,
    human_value: f64,
    agent_value: f64,
    n_human: Option<u64>,
    n_agent: Option<u64>,
    lexicon: LexiconVariant,
    seed: Option<u64>,
}

#[derive(Serialize)]
struct HeterogeneityCsv<'a> {
    metric: &'a str,
    human_min: f64,
    human_max: f64,
    agent_min: f64,
    agent_max: f64,
    worst_gap: f64,
    lexicon: LexiconVariant,
    seed: Option<u64>,
}

fn write_pairs(stage: &mut Stage, table: &PairTable, lexicon: LexiconVariant, seed: Option<u64>) -> Result<()> {
    let rows: Vec<PairCsv> = table
        .rows()
        .iter()
        .map(|r| PairCsv {
            pair_id: &r.pair_id,
            metric: &r.metric,
            human_value: r.human_value,
            agent_value: r.agent_value,
            n_human: r.n_human,
            n_agent: r.n_agent,
            lexicon,
            seed,
        })
        .collect();
    stage.csv("pairs.csv", &rows)
}

fn write_loo(stage: &mut Stage, table: &PairTable, lexicon: LexiconVariant, seed: Option<u64>) -> Result<()> {
    let loo = leave_one_pair_out(table)?;
    let metrics = table.metrics();
    let mut header = vec!["dropped".to_string()];
    header.extend(metrics.iter().map(|m| format!("{m}_gap_pp")));
    header.extend(["lexicon".to_string(), "seed".to_string()]);
    let rows: Vec<Vec<String>> = loo
        .iter()
        .map(|r| {
            let mut row = vec![r.dropped.clone().unwrap_or_else(|| "none".into())];
            row.extend(metrics.iter().map(|m| cell(r.gaps.get(*m))));
            row.extend([lexicon.to_string(), cell(seed)]);
            row
        })
        .collect();
    stage.csv_records("leave_one_out.csv", &header, &rows)
}

fn write_heterogeneity(stage: &mut Stage, table: &PairTable, lexicon: LexiconVariant, seed: Option<u64>) -> Result<()> {
    let rows = heterogeneity(table)?;
    let rows: Vec<HeterogeneityCsv> = rows
        .iter()
        .map(|r| HeterogeneityCsv {
            metric: &r.metric,
            human_min: r.human_min,
            human_max: r.human_max,
            agent_min: r.agent_min,
            agent_max: r.agent_max,
            worst_gap: r.worst_gap,
            lexicon,
            seed,
        })
        .collect();
    stage.csv("heterogeneity.csv", &rows)
}

fn pair_inputs(a: &PairTableArgs) -> Vec<&Path> {
    let mut v = input_paths(&a.inputs);
    v.extend(a.pair_table.as_deref());
    v.extend(a.pairs.as_deref());
    v.extend(a.lexicon.lexicon_file.as_deref());
    v
}

/// Computes the pair table from both platforms' corpora.
struct Computed {
    table: PairTable,
    summary: Vec<threadloop::report::PairSummaryRow>,
    loaded: Vec<Loaded>,
    analyses: Vec<Vec<threadloop::report::CommunityAnalysis>>,
    pairs: Vec<threadloop::structure::MatchedPair>,
}

fn compute_pairs(a: &PairTableArgs, cfg: &AnalysisConfig, lex: &LexiconSet) -> Result<Computed> {
    let Some(pairs_path) = &a.pairs else {
        return Err(Error::Config("pass either --pair-table or --pairs with both platform inputs".into()).into());
    };
    require_exists(&[pairs_path])?;
    let pairs = load_pairs(pairs_path)?;
    let loaded = load(&a.inputs, Platform::HumanForum, a.format, a.cap, a.years)?;
    let find = |p: Platform| {
        loaded
            .iter()
            .position(|l| l.platform == p)
            .ok_or_else(|| Error::Config(format!("no --input for {p}")))
    };
    let (hi, ai) = (find(Platform::HumanForum)?, find(Platform::AgentForum)?);
    validate_pairs(&pairs, &loaded[ai].corpus, &loaded[hi].corpus)?;
    let mut analyses = Vec::new();
    for l in &loaded {
        let ids: Vec<String> = pairs
            .iter()
            .map(|p| match l.platform {
                Platform::HumanForum => p.human_community_id.clone(),
                Platform::AgentForum => p.agent_community_id.clone(),
            })
            .collect();
        analyses.push(analyze_corpus(&l.corpus, lex, Some(&ids), cfg)?.0);
    }
    let (table, summary) = pair_table(&pairs, &analyses[hi], &analyses[ai], cfg)?;
    Ok(Computed {
        table,
        summary,
        loaded,
        analyses,
        pairs,
    })
}

fn table_config(a: &PairTableArgs, resampling: Option<Resampling>) -> Result<AnalysisConfig> {
    Ok(AnalysisConfig {
        lexicon: a.lexicon.lexicon,
        window: a.repair.window()?,
        resampling,
    })
}

fn cmd_pair_tables(a: &PairTableArgs, command: &str) -> Result<()> {
    let mut stage = Stage::new(&a.output.out, command, a.seed.seed, a, &pair_inputs(a))?;
    if skip_if_cached(&stage, &a.output) {
        return Ok(());
    }
    let cfg = table_config(a, a.seed.resampling())?;
    let table = match &a.pair_table {
        Some(p) => {
            require_exists(&[p])?;
            PairTable::from_csv_path(p)?
        }
        None => compute_pairs(a, &cfg, &lexicons(a.lexicon.lexicon_file.as_deref())?)?.table,
    };
    if command.ends_with("loo") {
        write_loo(&mut stage, &table, cfg.lexicon, cfg.seed())?;
    } else {
        write_heterogeneity(&mut stage, &table, cfg.lexicon, cfg.seed())?;
    }
    finish(stage, &a.output.out)
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let t = &a.tables;
    let r = require_seed(&t.seed, "report")?;
    let mut stage = Stage::new(&t.output.out, "report", t.seed.seed, a, &pair_inputs(t))?;
    if skip_if_cached(&stage, &t.output) {
        return Ok(());
    }
    let cfg = table_config(t, Some(r))?;
    let (lexicon, seed) = (cfg.lexicon, cfg.seed());
    if let Some(p) = &t.pair_table {
        require_exists(&[p])?;
        let table = PairTable::from_csv_path(p)?;
        write_pairs(&mut stage, &table, lexicon, seed)?;
        write_loo(&mut stage, &table, lexicon, seed)?;
        write_heterogeneity(&mut stage, &table, lexicon, seed)?;
        return finish(stage, &t.output.out);
    }
    let lex = lexicons(t.lexicon.lexicon_file.as_deref())?;
    let c = compute_pairs(t, &cfg, &lex)?;
    write_pairs(&mut stage, &c.table, lexicon, seed)?;
    stage.csv("pair_summary.csv", &c.summary)?;
    write_loo(&mut stage, &c.table, lexicon, seed)?;
    write_heterogeneity(&mut stage, &c.table, lexicon, seed)?;

    let mut windows = Vec::new();
    let mut h3 = Vec::new();
    let mut shifts = threadloop::report::ShiftTables::default();
    let thresholds = ShiftThresholds {
        min_pre: a.min_pre,
        min_post: a.min_post,
    };
    for (l, analyses) in c.loaded.iter().zip(&c.analyses) {
        let pair_comms: Vec<String> = analyses.iter().map(|x| x.community_id.clone()).collect();
        windows.extend(
            window_rows(&l.corpus, &lex, &RepairWindow::standard_set(), &cfg)?
                .into_iter()
                .filter(|w| w.community == "mean" || pair_comms.contains(&w.community)),
        );
        h3.extend(h3_rows(analyses, &cfg)?);
        let s = shift_tables(&l.corpus, &pair_comms, &lex, &cfg, thresholds)?;
        shifts.controlled.extend(s.controlled);
        shifts.placebo.extend(s.placebo);
        shifts.durability.extend(s.durability);
        shifts.drift.extend(s.drift);
        shifts.skipped.extend(s.skipped);
    }
    stage.csv("repair_windows.csv", &windows)?;
    stage.csv("h3.csv", &h3)?;
    let matched: Vec<_> = h3.iter().filter(|x| x.anchor_kind == "locally_matched").collect();
    stage.csv("matched_baseline.csv", &matched)?;
    write_shift_tables(&mut stage, &shifts)?;
    stage.json("pairs_used.json", &c.pairs)?;
    finish(stage, &t.output.out)
}

fn cmd_probe(a: &ProbeArgs) -> Result<()> {
    let r = require_seed(&a.seed, "probe-analyze")?;
    require_exists(&[&a.transcripts])?;
    let mut inputs = vec![a.transcripts.as_path()];
    inputs.extend(a.lexicon_file.as_deref());
    let mut stage = Stage::new(&a.output.out, "probe-analyze", a.seed.seed, a, &inputs)?;
    if skip_if_cached(&stage, &a.output) {
        return Ok(());
    }
    let file = fs::File::open(&a.transcripts).with_context(|| format!("opening {}", a.transcripts.display()))?;
    let responses = read_probe_csv(file)?;
    let rows = probe_rows(&responses, &lexicons(a.lexicon_file.as_deref())?, r)?;
    stage.csv("probe.csv", &rows)?;
    finish(stage, &a.output.out)
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let Some(seed) = a.seed else {
        bail!(Error::Config("`synth` is randomized; pass --seed".into()));
    };
    let mut stage = Stage::new(&a.output.out, "synth", Some(seed), a, &[])?;
    if skip_if_cached(&stage, &a.output) {
        return Ok(());
    }
    let cfg = SynthConfig {
        n_posts: a.n_posts,
        comments_per_post: CommentsPerPost::Geometric {
            mean: a.comments_per_post,
        },
        p_nest: a.p_nest,
        p_challenge: a.p_challenge,
        p_followup: a.p_followup,
        p_repair: a.p_repair,
        p_hedge: a.p_hedge,
        p_indirect: a.p_indirect,
        n_authors: a.n_authors,
        author_skew: a.author_skew,
        time_span_days: a.time_span_days,
        n_communities: a.n_communities,
        platform: a.platform,
        seed,
        ..SynthConfig::default()
    };
    let (corpus, truth) = generate(&cfg)?;
    let corpus_out = stage.writer("corpus.jsonl")?;
    let truth_out = stage.writer("ground_truth.json")?;
    threadloop::synth::write_outputs(&corpus, &truth, corpus_out, truth_out)?;
    finish(stage, &a.output.out)
}

fn cmd_verify(a: &VerifyArgs) -> Result<()> {
    require_exists(&[&a.input, &a.truth])?;
    let mut stage = Stage::new(&a.output.out, "verify", a.seed, a, &[&a.input, &a.truth])?;
    let text = fs::read_to_string(&a.truth).with_context(|| format!("reading {}", a.truth.display()))?;
    let truth: GroundTruth = serde_json::from_str(&text).map_err(|e| Error::Schema {
        path: a.truth.clone(),
        reason: e.to_string(),
    })?;
    let (corpus, _) = ingest(&a.input, &IngestOptions::new(InputFormat::Jsonl, truth.config.platform))?;
    let seed = a.seed.unwrap_or(truth.config.seed);
    let outputs = AnalyzerOutputs::collect(&corpus, &LexiconSet::builtin(), seed)?;
    let report = verify(&corpus, &truth, &outputs);
    stage.json("verify.json", &report)?;
    finish(stage, &a.output.out)?;
    eprintln!("verify: {report}");
    if !report.passed {
        return Err(Error::Invariant(report.to_string()).into());
    }
    Ok(())
}
