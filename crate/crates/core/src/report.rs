//! Table-shaped summaries assembled from the analysis modules.
//!
//! Every row type carries the seed and lexicon variant that produced it.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::authorshift::{
    build_timelines, controlled_shift, durability, first_challenge_event, matching_inputs, nn_match, placebo_shift,
    pre_period_drift, ShiftMetric, ShiftThresholds,
};
use crate::corpus::{Corpus, Platform};
use crate::correction::{episode_metrics, matched_metrics, sample_nonchallenge_anchors, subtree_metrics, SubtreeMetrics};
use crate::episodes::{extract_challenges, repair, followup, any_reply, ChallengeEpisode, RepairWindow};
use crate::error::{Error, Result};
use crate::lexicon::{CueMask, LexiconSet, LexiconVariant};
use crate::seed::derive_seed;
use crate::stats::{
    bootstrap_ci, paired_summary, permutation_test_stratified, rule_of_three, Alternative, PairRow, PairTable,
    Resampling, Stratum,
};
use crate::structure::{author_concentration, select_communities, MatchedPair, SelectionThresholds};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisConfig {
    pub lexicon: LexiconVariant,
    pub window: RepairWindow,
    /// Needed by the randomized analyses only.
    pub resampling: Option<Resampling>,
}

impl AnalysisConfig {
    pub fn seed(&self) -> Option<u64> {
        self.resampling.map(|r| r.seed)
    }

    pub fn require_resampling(&self) -> Result<Resampling> {
        self.resampling
            .ok_or_else(|| Error::Config("this analysis is randomized and needs an explicit seed".into()))
    }
}

/// Event counts of one set of subtrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct LoopCounts {
    pub n: u64,
    pub orig_return: u64,
    pub multi_turn: u64,
    pub repair_cue: u64,
}

impl LoopCounts {
    fn of(metrics: &[SubtreeMetrics]) -> Self {
        let count = |f: fn(&SubtreeMetrics) -> bool| metrics.iter().filter(|m| f(m)).count() as u64;
        LoopCounts {
            n: metrics.len() as u64,
            orig_return: count(|m| m.orig_return),
            multi_turn: count(|m| m.multi_turn),
            repair_cue: count(|m| m.repair_cue_present),
        }
    }

    pub fn get(&self, metric: LoopMetric) -> u64 {
        match metric {
            LoopMetric::Return => self.orig_return,
            LoopMetric::MultiTurn => self.multi_turn,
            LoopMetric::RepairCue => self.repair_cue,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopMetric {
    Return,
    MultiTurn,
    RepairCue,
}

impl LoopMetric {
    pub const ALL: [LoopMetric; 3] = [LoopMetric::Return, LoopMetric::MultiTurn, LoopMetric::RepairCue];

    pub fn as_str(self) -> &'static str {
        match self {
            LoopMetric::Return => "return",
            LoopMetric::MultiTurn => "multi_turn",
            LoopMetric::RepairCue => "repair_cue",
        }
    }
}

/// Locally matched comparison for one community.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchedSummary {
    pub challenge: LoopCounts,
    pub control: LoopCounts,
    pub dropped: u64,
    /// Challenge-minus-control differences per pair, by metric.
    pub diffs: BTreeMap<&'static str, Vec<f64>>,
}

/// Everything the tables need from one community.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommunityAnalysis {
    pub community_id: String,
    pub platform: Platform,
    pub comments: u64,
    pub nested: u64,
    pub top5_share: f64,
    pub episodes: u64,
    pub followups: u64,
    pub any_replies: u64,
    pub repairs: u64,
    pub challenge: LoopCounts,
    /// Baselines, present when a seed was given.
    pub sampled: Option<LoopCounts>,
    pub sampled_warning: Option<String>,
    pub matched: Option<MatchedSummary>,
}

/// Runs H1, H2 and H3 over one community.
pub fn analyze_community(
    corpus: &Corpus,
    community_id: &str,
    episodes: &[ChallengeEpisode],
    masks: &Masks,
    cfg: &AnalysisConfig,
) -> Result<CommunityAnalysis> {
    let index = corpus.community(community_id)?;
    let eps: Vec<ChallengeEpisode> = episodes
        .iter()
        .filter(|e| e.community_id == community_id)
        .cloned()
        .collect();
    let mut followups = 0;
    let mut any_replies = 0;
    let mut repairs = 0;
    for ep in &eps {
        followups += followup(ep, corpus)? as u64;
        any_replies += any_reply(ep, corpus)? as u64;
        repairs += repair(ep, corpus, &cfg.window, &masks.repair)? as u64;
    }
    let challenge = episode_metrics(&eps, corpus, &masks.repair)?;
    let (sampled, sampled_warning, matched) = match cfg.resampling {
        Some(r) => {
            let (counts, warning) = sampled_baseline(corpus, community_id, &eps, masks, r.seed)?;
            (Some(counts), warning, Some(matched_baseline(corpus, &eps, masks, r.seed)?))
        }
        None => (None, None, None),
    };
    Ok(CommunityAnalysis {
        community_id: community_id.to_string(),
        platform: corpus.platform(),
        comments: index.comments.len() as u64,
        nested: index
            .comments
            .iter()
            .filter(|&&i| corpus.comment(i).parent_id.is_some())
            .count() as u64,
        top5_share: author_concentration(corpus, community_id, 5)?.share,
        episodes: eps.len() as u64,
        followups,
        any_replies,
        repairs,
        challenge: LoopCounts::of(&challenge),
        sampled,
        sampled_warning,
        matched,
    })
}

fn sampled_baseline(
    corpus: &Corpus,
    community_id: &str,
    eps: &[ChallengeEpisode],
    masks: &Masks,
    seed: u64,
) -> Result<(LoopCounts, Option<String>)> {
    let sampled = sample_nonchallenge_anchors(corpus, community_id, eps.len(), &masks.challenge, seed)?;
    let metrics = sampled
        .anchors
        .iter()
        .map(|a| subtree_metrics(&a.anchor, corpus, &masks.repair))
        .collect::<Result<Vec<_>>>()?;
    Ok((LoopCounts::of(&metrics), sampled.warning))
}

fn matched_baseline(corpus: &Corpus, eps: &[ChallengeEpisode], masks: &Masks, seed: u64) -> Result<MatchedSummary> {
    let matched = matched_metrics(eps, corpus, &masks.challenge, &masks.repair, seed)?;
    let (chal, ctrl): (Vec<SubtreeMetrics>, Vec<SubtreeMetrics>) = matched.pairs.iter().cloned().unzip();
    let diff = |f: fn(&SubtreeMetrics) -> bool| -> Vec<f64> {
        matched
            .pairs
            .iter()
            .map(|(a, b)| f(a) as i32 as f64 - f(b) as i32 as f64)
            .collect()
    };
    Ok(MatchedSummary {
        challenge: LoopCounts::of(&chal),
        control: LoopCounts::of(&ctrl),
        dropped: matched.dropped as u64,
        diffs: BTreeMap::from([
            (LoopMetric::Return.as_str(), diff(|m| m.orig_return)),
            (LoopMetric::MultiTurn.as_str(), diff(|m| m.multi_turn)),
            (LoopMetric::RepairCue.as_str(), diff(|m| m.repair_cue_present)),
        ]),
    })
}

/// Precomputed cue masks for one corpus and lexicon variant.
pub struct Masks {
    pub challenge: CueMask,
    pub repair: CueMask,
    pub hedging: CueMask,
}

impl Masks {
    pub fn compute(corpus: &Corpus, lexicons: &LexiconSet, variant: LexiconVariant) -> Self {
        Masks {
            challenge: CueMask::compute(corpus, lexicons.challenge(variant)),
            repair: CueMask::compute(corpus, lexicons.repair(variant)),
            hedging: CueMask::compute(corpus, lexicons.hedging(variant)),
        }
    }
}

/// Analyses of the requested communities (all when `communities` is
/// `None`), with the episodes they were computed from.
pub fn analyze_corpus(
    corpus: &Corpus,
    lexicons: &LexiconSet,
    communities: Option<&[String]>,
    cfg: &AnalysisConfig,
) -> Result<(Vec<CommunityAnalysis>, Vec<ChallengeEpisode>)> {
    let masks = Masks::compute(corpus, lexicons, cfg.lexicon);
    let episodes = extract_challenges(corpus, &masks.challenge);
    let ids: Vec<String> = match communities {
        Some(c) => c.to_vec(),
        None => corpus.communities().keys().cloned().collect(),
    };
    let rows = ids
        .iter()
        .map(|c| analyze_community(corpus, c, &episodes, &masks, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok((rows, episodes))
}

fn rate(k: u64, n: u64) -> Option<f64> {
    (n > 0).then(|| k as f64 / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct H1Row {
    pub community: String,
    pub platform: Platform,
    pub comments: u64,
    pub nested: u64,
    pub nesting_rate: Option<f64>,
    pub top5_share: f64,
    pub lexicon: LexiconVariant,
    pub seed: Option<u64>,
}

pub fn h1_rows(analyses: &[CommunityAnalysis], cfg: &AnalysisConfig) -> Vec<H1Row> {
    analyses
        .iter()
        .map(|a| H1Row {
            community: a.community_id.clone(),
            platform: a.platform,
            comments: a.comments,
            nested: a.nested,
            nesting_rate: rate(a.nested, a.comments),
            top5_share: a.top5_share,
            lexicon: cfg.lexicon,
            seed: cfg.seed(),
        })
        .collect()
}

/// H1 rows straight from the corpus, without the episode analyses.
pub fn h1_rows_from_corpus(corpus: &Corpus, cfg: &AnalysisConfig) -> Result<Vec<H1Row>> {
    Ok(select_communities(corpus, SelectionThresholds::default())?
        .into_iter()
        .map(|s| H1Row {
            community: s.community_id,
            platform: corpus.platform(),
            comments: s.comments as u64,
            nested: s.nested as u64,
            nesting_rate: rate(s.nested as u64, s.comments as u64),
            top5_share: s.top5_author_share,
            lexicon: cfg.lexicon,
            seed: cfg.seed(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct H2Row {
    pub community: String,
    pub platform: Platform,
    pub episodes: u64,
    pub followups: u64,
    pub followup_rate: Option<f64>,
    pub any_reply_rate: Option<f64>,
    pub repairs: u64,
    pub repair_rate: Option<f64>,
    /// Rule-of-three bound when no repair was seen.
    pub repair_upper_bound: Option<f64>,
    pub window: String,
    pub lexicon: LexiconVariant,
    pub seed: Option<u64>,
}

pub fn h2_rows(analyses: &[CommunityAnalysis], cfg: &AnalysisConfig) -> Vec<H2Row> {
    analyses
        .iter()
        .map(|a| H2Row {
            community: a.community_id.clone(),
            platform: a.platform,
            episodes: a.episodes,
            followups: a.followups,
            followup_rate: rate(a.followups, a.episodes),
            any_reply_rate: rate(a.any_replies, a.episodes),
            repairs: a.repairs,
            repair_rate: rate(a.repairs, a.episodes),
            repair_upper_bound: if a.repairs == 0 {
                rule_of_three(a.episodes as usize).ok()
            } else {
                None
            },
            window: cfg.window.label(),
            lexicon: cfg.lexicon,
            seed: cfg.seed(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct H3Row {
    pub community: String,
    pub platform: Platform,
    pub anchor_kind: &'static str,
    pub metric: &'static str,
    pub n_challenge: u64,
    pub n_baseline: u64,
    pub challenge_rate: Option<f64>,
    pub baseline_rate: Option<f64>,
    pub gap_pp: Option<f64>,
    pub ci_low_pp: Option<f64>,
    pub ci_high_pp: Option<f64>,
    pub p_value: Option<f64>,
    /// Episodes without a usable matched control.
    pub dropped: u64,
    pub lexicon: LexiconVariant,
    pub seed: u64,
}

/// Challenge versus sampled baseline (permutation test) and versus locally
/// matched controls (paired bootstrap and sign-flip), per community.
pub fn h3_rows(analyses: &[CommunityAnalysis], cfg: &AnalysisConfig) -> Result<Vec<H3Row>> {
    let r = cfg.require_resampling()?;
    let mut rows = Vec::new();
    for a in analyses {
        let (Some(sampled), Some(m)) = (a.sampled, &a.matched) else {
            return Err(Error::Invariant(format!("community `{}` was analysed without baselines", a.community_id)));
        };
        for metric in LoopMetric::ALL {
            let label = format!("h3/sampled/{}/{}", a.community_id, metric.as_str());
            let (c, b) = (a.challenge, sampled);
            let cr = rate(c.get(metric), c.n);
            let br = rate(b.get(metric), b.n);
            let p = if c.n > 0 && b.n > 0 {
                let s = Stratum {
                    a_n: c.n,
                    a_events: c.get(metric),
                    b_n: b.n,
                    b_events: b.get(metric),
                };
                Some(permutation_test_stratified(&[s], r.n_perm, derive_seed(r.seed, &label), Alternative::TwoSided)?.p_value)
            } else {
                None
            };
            rows.push(H3Row {
                community: a.community_id.clone(),
                platform: a.platform,
                anchor_kind: "sampled",
                metric: metric.as_str(),
                n_challenge: c.n,
                n_baseline: b.n,
                challenge_rate: cr,
                baseline_rate: br,
                gap_pp: cr.zip(br).map(|(x, y)| (x - y) * 100.0),
                ci_low_pp: None,
                ci_high_pp: None,
                p_value: p,
                dropped: 0,
                lexicon: cfg.lexicon,
                seed: r.seed,
            });

            let diffs = &m.diffs[metric.as_str()];
            let label = format!("h3/matched/{}/{}", a.community_id, metric.as_str());
            let summary = if diffs.is_empty() {
                None
            } else {
                Some(paired_summary(
                    diffs,
                    Resampling {
                        seed: derive_seed(r.seed, &label),
                        ..r
                    },
                )?)
            };
            let cr = rate(m.challenge.get(metric), m.challenge.n);
            let br = rate(m.control.get(metric), m.control.n);
            rows.push(H3Row {
                community: a.community_id.clone(),
                platform: a.platform,
                anchor_kind: "locally_matched",
                metric: metric.as_str(),
                n_challenge: m.challenge.n,
                n_baseline: m.control.n,
                challenge_rate: cr,
                baseline_rate: br,
                gap_pp: cr.zip(br).map(|(x, y)| (x - y) * 100.0),
                ci_low_pp: summary.as_ref().and_then(|s| s.ci_low).map(|v| v * 100.0),
                ci_high_pp: summary.as_ref().and_then(|s| s.ci_high).map(|v| v * 100.0),
                p_value: summary.as_ref().map(|s| s.p_value),
                dropped: m.dropped,
                lexicon: cfg.lexicon,
                seed: r.seed,
            });
        }
    }
    Ok(rows)
}

/// Cross-platform metrics, in the order they appear in pair tables.
pub const PAIR_METRICS: [&str; 6] = ["nesting", "followup", "repair", "return", "multi_turn", "repair_cue"];

fn events_for(a: &CommunityAnalysis, metric: &str) -> (u64, u64) {
    match metric {
        "nesting" => (a.nested, a.comments),
        "followup" => (a.followups, a.episodes),
        "repair" => (a.repairs, a.episodes),
        "return" => (a.challenge.orig_return, a.challenge.n),
        "multi_turn" => (a.challenge.multi_turn, a.challenge.n),
        "repair_cue" => (a.challenge.repair_cue, a.challenge.n),
        other => unreachable!("unknown pair metric {other}"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairSummaryRow {
    pub metric: &'static str,
    /// Mean over pairs, in percent.
    pub human_mean: f64,
    pub agent_mean: f64,
    pub gap_pp: f64,
    /// Stratified permutation test over pairs; absent when a stratum is empty.
    pub p_value: Option<f64>,
    pub n_perm: Option<u64>,
    pub pairs: usize,
    pub lexicon: LexiconVariant,
    pub seed: Option<u64>,
}

/// Per-pair values (as a [`PairTable`]) and the pooled row with its
/// permutation p-value, for every cross-platform metric.
pub fn pair_table(
    pairs: &[MatchedPair],
    human: &[CommunityAnalysis],
    agent: &[CommunityAnalysis],
    cfg: &AnalysisConfig,
) -> Result<(PairTable, Vec<PairSummaryRow>)> {
    let find = |list: &[CommunityAnalysis], id: &str| -> Result<CommunityAnalysis> {
        list.iter()
            .find(|a| a.community_id == id)
            .cloned()
            .ok_or_else(|| Error::UnknownCommunity(id.to_string()))
    };
    let matched: Vec<(String, CommunityAnalysis, CommunityAnalysis)> = pairs
        .iter()
        .map(|p| Ok((p.label(), find(human, &p.human_community_id)?, find(agent, &p.agent_community_id)?)))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for metric in PAIR_METRICS {
        let mut strata = Vec::new();
        let mut usable = true;
        let (mut hsum, mut asum) = (0.0, 0.0);
        for (label, h, a) in &matched {
            let (hk, hn) = events_for(h, metric);
            let (ak, an) = events_for(a, metric);
            let hv = rate(hk, hn).unwrap_or(0.0);
            let av = rate(ak, an).unwrap_or(0.0);
            hsum += hv;
            asum += av;
            usable &= hn > 0 && an > 0;
            strata.push(Stratum {
                a_n: hn,
                a_events: hk,
                b_n: an,
                b_events: ak,
            });
            rows.push(PairRow {
                pair_id: label.clone(),
                metric: metric.to_string(),
                human_value: hv,
                agent_value: av,
                n_human: Some(hn),
                n_agent: Some(an),
            });
        }
        let p = match cfg.resampling {
            Some(r) if usable && !strata.is_empty() => {
                let seed = derive_seed(r.seed, &format!("pairs/{metric}"));
                Some(permutation_test_stratified(&strata, r.n_perm, seed, Alternative::TwoSided)?.p_value)
            }
            _ => None,
        };
        let k = matched.len().max(1) as f64;
        summary.push(PairSummaryRow {
            metric,
            human_mean: hsum / k * 100.0,
            agent_mean: asum / k * 100.0,
            gap_pp: (hsum - asum) / k * 100.0,
            p_value: p,
            n_perm: cfg.resampling.map(|r| r.n_perm),
            pairs: matched.len(),
            lexicon: cfg.lexicon,
            seed: cfg.seed(),
        });
    }
    Ok((PairTable::new(rows)?, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftRow {
    pub community: String,
    pub metric: ShiftMetric,
    /// `real`, `placebo` or `drop<d>`.
    pub analysis: String,
    pub challenged_delta: f64,
    pub control_delta: Option<f64>,
    pub controlled_shift: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub p_value: Option<f64>,
    pub effect_size: Option<f64>,
    pub n_challenged: usize,
    pub n_control: usize,
    pub n_excluded: usize,
    /// Placebo shift over real shift, on placebo rows.
    pub placebo_ratio: Option<f64>,
    pub unit: &'static str,
    pub lexicon: LexiconVariant,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftRow {
    pub community: String,
    pub metric: ShiftMetric,
    pub drift: Option<f64>,
    pub n_authors: usize,
    pub lexicon: LexiconVariant,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ShiftTables {
    /// Real-event controlled shifts.
    pub controlled: Vec<ShiftRow>,
    pub placebo: Vec<ShiftRow>,
    pub durability: Vec<ShiftRow>,
    pub drift: Vec<DriftRow>,
    /// Communities skipped, with the reason.
    pub skipped: Vec<(String, String)>,
}

pub const DURABILITY_DROPS: [usize; 4] = [0, 1, 2, 5];

fn unit_of(metric: ShiftMetric) -> &'static str {
    match metric {
        ShiftMetric::Length => "words",
        _ => "share of comments",
    }
}

/// Author-shift analyses for each community.
pub fn shift_tables(
    corpus: &Corpus,
    communities: &[String],
    lexicons: &LexiconSet,
    cfg: &AnalysisConfig,
    thresholds: ShiftThresholds,
) -> Result<ShiftTables> {
    let base = cfg.require_resampling()?;
    let masks = Masks::compute(corpus, lexicons, cfg.lexicon);
    let episodes = extract_challenges(corpus, &masks.challenge);
    let mut out = ShiftTables::default();
    for comm in communities {
        let timelines = build_timelines(corpus, comm, &masks.hedging, &masks.challenge)?;
        let events = first_challenge_event(&episodes, comm);
        let inputs = matching_inputs(&timelines, &events, thresholds);
        if inputs.challenged.is_empty() {
            out.skipped.push((comm.clone(), "no challenged author meets the activity thresholds".into()));
            continue;
        }
        let assignment = match nn_match(&inputs.challenged, &inputs.pool) {
            Ok(a) => a,
            Err(Error::Data(reason)) => {
                out.skipped.push((comm.clone(), reason));
                continue;
            }
            Err(e) => return Err(e),
        };
        for metric in ShiftMetric::ALL {
            let r = Resampling {
                seed: derive_seed(base.seed, &format!("shift/{comm}/{metric}")),
                ..base
            };
            let row = |analysis: String, e: crate::authorshift::ShiftEstimate, ratio: Option<f64>| ShiftRow {
                community: comm.clone(),
                metric,
                analysis,
                challenged_delta: e.challenged_delta,
                control_delta: e.control_delta,
                controlled_shift: e.controlled_shift,
                ci_low: e.ci_low,
                ci_high: e.ci_high,
                p_value: e.p_value,
                effect_size: e.effect_size,
                n_challenged: e.n_challenged,
                n_control: e.n_control,
                n_excluded: e.n_excluded + inputs.excluded,
                placebo_ratio: ratio,
                unit: unit_of(metric),
                lexicon: cfg.lexicon,
                seed: base.seed,
            };
            let real = controlled_shift(&assignment, &timelines, &events, metric, r)?;
            match placebo_shift(&assignment, &timelines, &events, metric, 0.25, r) {
                Ok(p) => {
                    let ratio = (real.controlled_shift != 0.0).then(|| p.controlled_shift / real.controlled_shift);
                    out.placebo.push(row("placebo".into(), p, ratio));
                }
                Err(Error::Data(_)) => {}
                Err(e) => return Err(e),
            }
            for d in DURABILITY_DROPS {
                match durability(&assignment, &timelines, &events, metric, d, r) {
                    Ok(e) => out.durability.push(row(format!("drop{d}"), e, None)),
                    Err(Error::Data(_)) => {}
                    Err(e) => return Err(e),
                }
            }
            out.controlled.push(row("real".into(), real, None));
            let d = pre_period_drift(&timelines, &events, metric);
            out.drift.push(DriftRow {
                community: comm.clone(),
                metric,
                drift: d.drift,
                n_authors: d.n_authors,
                lexicon: cfg.lexicon,
                seed: base.seed,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftMeanRow {
    pub metric: ShiftMetric,
    pub analysis: String,
    /// Unweighted mean of the per-community shifts.
    pub mean_shift: f64,
    /// Mean of per-community placebo-to-real ratios, on placebo rows.
    pub mean_placebo_ratio: Option<f64>,
    pub communities: usize,
    pub unit: &'static str,
    pub lexicon: LexiconVariant,
    pub seed: u64,
}

/// Averages over communities for every `(metric, analysis)` in the tables.
pub fn shift_means(tables: &ShiftTables) -> Vec<ShiftMeanRow> {
    let mut groups: BTreeMap<(ShiftMetric, &str), Vec<&ShiftRow>> = BTreeMap::new();
    for r in tables.controlled.iter().chain(&tables.placebo).chain(&tables.durability) {
        groups.entry((r.metric, r.analysis.as_str())).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((metric, analysis), rows)| {
            let ratios: Vec<f64> = rows.iter().filter_map(|r| r.placebo_ratio).collect();
            ShiftMeanRow {
                metric,
                analysis: analysis.to_string(),
                mean_shift: rows.iter().map(|r| r.controlled_shift).sum::<f64>() / rows.len() as f64,
                mean_placebo_ratio: (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64),
                communities: rows.len(),
                unit: unit_of(metric),
                lexicon: rows[0].lexicon,
                seed: rows[0].seed,
            }
        })
        .collect()
}

/// Paired-bootstrap interval of a vector of differences, in percentage
/// points.
pub fn gap_ci_pp(diffs: &[f64], r: Resampling) -> Result<(f64, f64)> {
    let (lo, hi) = bootstrap_ci(diffs, r.n_boot, 0.95, r.seed)?;
    Ok((lo * 100.0, hi * 100.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowRow {
    /// Community id, or `mean` for the unweighted platform average.
    pub community: String,
    pub platform: Platform,
    pub episodes: u64,
    pub window: String,
    pub repairs: Option<u64>,
    pub repair_rate: Option<f64>,
    pub lexicon: LexiconVariant,
    pub seed: Option<u64>,
}

/// Repair rates under every window in `windows`, per community, followed by
/// the unweighted mean over communities for each window.
pub fn window_rows(
    corpus: &Corpus,
    lexicons: &LexiconSet,
    windows: &[RepairWindow],
    cfg: &AnalysisConfig,
) -> Result<Vec<WindowRow>> {
    let masks = Masks::compute(corpus, lexicons, cfg.lexicon);
    let episodes = extract_challenges(corpus, &masks.challenge);
    let grouped = crate::episodes::by_community(&episodes);
    let mut rows = Vec::new();
    let mut sums: Vec<(f64, usize)> = vec![(0.0, 0); windows.len()];
    for comm in corpus.communities().keys() {
        let eps = grouped.get(comm.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        for (w, window) in windows.iter().enumerate() {
            let mut k = 0u64;
            for ep in eps {
                k += repair(ep, corpus, window, &masks.repair)? as u64;
            }
            let r = rate(k, eps.len() as u64);
            if let Some(v) = r {
                sums[w].0 += v;
                sums[w].1 += 1;
            }
            rows.push(WindowRow {
                community: comm.clone(),
                platform: corpus.platform(),
                episodes: eps.len() as u64,
                window: window.label(),
                repairs: Some(k),
                repair_rate: r,
                lexicon: cfg.lexicon,
                seed: cfg.seed(),
            });
        }
    }
    for (window, (sum, n)) in windows.iter().zip(sums) {
        rows.push(WindowRow {
            community: "mean".into(),
            platform: corpus.platform(),
            episodes: episodes.len() as u64,
            window: window.label(),
            repairs: None,
            repair_rate: (n > 0).then(|| sum / n as f64),
            lexicon: cfg.lexicon,
            seed: cfg.seed(),
        });
    }
    Ok(rows)
}

/// Platform-level rates pooled over every episode of the analysed
/// communities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PooledRow {
    /// Which variant of the data produced the row, e.g. `full` or `subsample`.
    pub sample: String,
    pub platform: Platform,
    pub episodes: u64,
    pub followup_rate: Option<f64>,
    pub repair_rate: Option<f64>,
    pub return_rate: Option<f64>,
    pub lexicon: LexiconVariant,
    pub seed: Option<u64>,
}

pub fn pooled_row(sample: &str, platform: Platform, analyses: &[CommunityAnalysis], cfg: &AnalysisConfig) -> PooledRow {
    let sum = |f: fn(&CommunityAnalysis) -> u64| analyses.iter().map(f).sum::<u64>();
    let episodes = sum(|a| a.episodes);
    PooledRow {
        sample: sample.to_string(),
        platform,
        episodes,
        followup_rate: rate(sum(|a| a.followups), episodes),
        repair_rate: rate(sum(|a| a.repairs), episodes),
        return_rate: rate(sum(|a| a.challenge.orig_return), sum(|a| a.challenge.n)),
        lexicon: cfg.lexicon,
        seed: cfg.seed(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeCondition {
    Visible,
    Hidden,
}

/// One generated response of the challenge-visibility probe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct ProbeResponse {
    pub pair_id: String,
    pub condition: ProbeCondition,
    pub response: String,
}

/// Reads probe transcripts from CSV with columns `pair_id,condition,response`.
pub fn read_probe_csv<R: std::io::Read>(reader: R) -> Result<Vec<ProbeResponse>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeRow {
    pub lexicon: LexiconVariant,
    pub pairs: usize,
    pub visible_rate: f64,
    pub hidden_rate: f64,
    pub diff_pp: f64,
    pub ci_low_pp: Option<f64>,
    pub ci_high_pp: Option<f64>,
    /// Pairs where only the visible response carries a repair cue.
    pub visible_only: u64,
    pub hidden_only: u64,
    /// Exact McNemar p-value; absent without discordant pairs.
    pub p_value: Option<f64>,
    pub n_boot: u64,
    pub seed: u64,
}

/// Repair-cue rates by condition with paired inference, one row per
/// lexicon variant. Every pair needs exactly one response per condition.
pub fn probe_rows(responses: &[ProbeResponse], lexicons: &LexiconSet, resampling: Resampling) -> Result<Vec<ProbeRow>> {
    let mut by_pair: BTreeMap<&str, BTreeMap<ProbeCondition, &str>> = BTreeMap::new();
    for r in responses {
        if by_pair
            .entry(&r.pair_id)
            .or_default()
            .insert(r.condition, &r.response)
            .is_some()
        {
            return Err(Error::Data(format!("pair `{}` has two {:?} responses", r.pair_id, r.condition)));
        }
    }
    if by_pair.is_empty() {
        return Err(Error::Data("no probe responses".into()));
    }
    let mut rows = Vec::new();
    for variant in [LexiconVariant::Full, LexiconVariant::Strict] {
        let lex = lexicons.repair(variant);
        let mut diffs = Vec::with_capacity(by_pair.len());
        let (mut vis, mut hid, mut b, mut c) = (0u64, 0u64, 0u64, 0u64);
        for (pair, conds) in &by_pair {
            let get = |k: ProbeCondition| {
                conds
                    .get(&k)
                    .map(|t| lex.detect(t))
                    .ok_or_else(|| Error::Data(format!("pair `{pair}` lacks a {k:?} response")))
            };
            let (v, h) = (get(ProbeCondition::Visible)?, get(ProbeCondition::Hidden)?);
            vis += v as u64;
            hid += h as u64;
            b += (v && !h) as u64;
            c += (!v && h) as u64;
            diffs.push(v as i32 as f64 - h as i32 as f64);
        }
        let n = by_pair.len();
        let seed = derive_seed(resampling.seed, &format!("probe/{variant}"));
        let (lo, hi) = bootstrap_ci(&diffs, resampling.n_boot, 0.95, seed)?;
        rows.push(ProbeRow {
            lexicon: variant,
            pairs: n,
            visible_rate: vis as f64 / n as f64,
            hidden_rate: hid as f64 / n as f64,
            diff_pp: (vis as f64 - hid as f64) / n as f64 * 100.0,
            ci_low_pp: (n >= 2).then_some(lo * 100.0),
            ci_high_pp: (n >= 2).then_some(hi * 100.0),
            visible_only: b,
            hidden_only: c,
            p_value: crate::stats::mcnemar_exact(b, c),
            n_boot: resampling.n_boot,
            seed: resampling.seed,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::MatchType;
    use crate::synth::{generate, SynthConfig};

    fn cfg(seed: u64) -> AnalysisConfig {
        AnalysisConfig {
            lexicon: LexiconVariant::Full,
            window: RepairWindow::Direct,
            resampling: Some(Resampling {
                n_perm: 200,
                n_boot: 200,
                seed,
            }),
        }
    }

    #[test]
    fn h2_counts_match_ground_truth() {
        let (corpus, truth) = generate(&SynthConfig { seed: 9, ..SynthConfig::default() }).unwrap();
        let (rows, eps) = analyze_corpus(&corpus, &LexiconSet::builtin(), None, &cfg(9)).unwrap();
        assert_eq!(eps.len(), truth.episodes(LexiconVariant::Full).len());
        let followups: u64 = rows.iter().map(|r| r.followups).sum();
        assert_eq!(followups as usize, truth.followups(LexiconVariant::Full));
        let h1 = h1_rows_from_corpus(&corpus, &cfg(9)).unwrap();
        assert_eq!(h1, h1_rows(&rows, &cfg(9)));
        let h3 = h3_rows(&rows, &cfg(9)).unwrap();
        assert_eq!(h3.len(), rows.len() * 6);
    }

    #[test]
    fn pair_table_round_trips_through_loo() {
        let (human, _) = generate(&SynthConfig { seed: 1, ..SynthConfig::default() }).unwrap();
        let (agent, _) = generate(&SynthConfig {
            seed: 2,
            p_nest: 0.1,
            platform: Platform::AgentForum,
            ..SynthConfig::default()
        })
        .unwrap();
        let c = cfg(3);
        let (h, _) = analyze_corpus(&human, &LexiconSet::builtin(), None, &c).unwrap();
        let (a, _) = analyze_corpus(&agent, &LexiconSet::builtin(), None, &c).unwrap();
        let pairs: Vec<MatchedPair> = ["forum00", "forum01"]
            .iter()
            .map(|id| MatchedPair {
                agent_community_id: id.to_string(),
                human_community_id: id.to_string(),
                match_type: MatchType::ExactName,
            })
            .collect();
        let (table, summary) = pair_table(&pairs, &h, &a, &c).unwrap();
        let loo = crate::stats::leave_one_pair_out(&table).unwrap();
        let nesting = summary.iter().find(|s| s.metric == "nesting").unwrap();
        assert!((loo[0].gaps["nesting"] - nesting.gap_pp).abs() < 1e-9);
        assert!(nesting.p_value.unwrap() < 0.05);
    }

    #[test]
    fn probe_counts_discordant_pairs() {
        let mut responses = Vec::new();
        for i in 0..10 {
            let visible = if i < 6 { "sorry, my mistake" } else { "the sky is blue" };
            let hidden = if i == 9 { "you're right" } else { "more about rivers" };
            responses.push(ProbeResponse {
                pair_id: format!("p{i}"),
                condition: ProbeCondition::Visible,
                response: visible.into(),
            });
            responses.push(ProbeResponse {
                pair_id: format!("p{i}"),
                condition: ProbeCondition::Hidden,
                response: hidden.into(),
            });
        }
        let rows = probe_rows(&responses, &LexiconSet::builtin(), Resampling::new(1)).unwrap();
        let full = &rows[0];
        assert_eq!((full.visible_only, full.hidden_only), (6, 1));
        assert!((full.diff_pp - 50.0).abs() < 1e-9);
        assert_eq!(full.p_value, crate::stats::mcnemar_exact(6, 1));
        responses.pop();
        assert!(probe_rows(&responses, &LexiconSet::builtin(), Resampling::new(1)).is_err());
    }

    #[test]
    fn window_rows_end_with_means() {
        let (corpus, truth) = generate(&SynthConfig { seed: 5, ..SynthConfig::default() }).unwrap();
        let windows = RepairWindow::standard_set();
        let rows = window_rows(&corpus, &LexiconSet::builtin(), &windows, &cfg(5)).unwrap();
        let tail = &rows[rows.len() - windows.len()..];
        assert!(tail.iter().all(|r| r.community == "mean"));
        for w in &windows {
            let total: u64 = rows
                .iter()
                .filter(|r| r.window == w.label())
                .filter_map(|r| r.repairs)
                .sum();
            assert_eq!(total as usize, truth.repairs(LexiconVariant::Full, w));
        }
    }

    #[test]
    fn shift_tables_have_one_real_row_per_metric() {
        let (corpus, _) = generate(&SynthConfig { seed: 4, n_posts: 300, ..SynthConfig::default() }).unwrap();
        let comms: Vec<String> = corpus.communities().keys().cloned().collect();
        let t = shift_tables(&corpus, &comms, &LexiconSet::builtin(), &cfg(4), ShiftThresholds::default()).unwrap();
        assert_eq!(t.controlled.len() + t.skipped.len() * 3, comms.len() * 3);
        for r in &t.durability {
            if r.analysis == "drop0" {
                let real = t
                    .controlled
                    .iter()
                    .find(|x| x.community == r.community && x.metric == r.metric)
                    .unwrap();
                assert_eq!(real.controlled_shift, r.controlled_shift);
            }
        }
    }
}
