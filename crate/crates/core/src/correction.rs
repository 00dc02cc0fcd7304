//! Public correction loops: what grows under a challenge, compared with what
//! grows under ordinary replies.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::episodes::ChallengeEpisode;
use crate::error::{Error, Result};
use crate::lexicon::CueDetector;
use crate::seed::{derive_seed, labelled_rng};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtreeMetrics {
    pub anchor: String,
    /// The author of the anchor's parent wrote somewhere below the anchor.
    pub orig_return: bool,
    /// `depth >= 2`.
    pub multi_turn: bool,
    pub repair_cue_present: bool,
    /// Number of descendants.
    pub size: usize,
    /// Deepest descendant, counting the anchor as 0.
    pub depth: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorKind {
    Sampled,
    LocallyMatched,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineAnchor {
    pub anchor: String,
    pub kind: AnchorKind,
    /// Challenge comment of the episode this anchor was matched to.
    pub matched_to: Option<String>,
    pub depth_delta: Option<i64>,
}

/// Descendants of `idx` with their depth below it, in preorder.
pub(crate) fn descendants(corpus: &Corpus, idx: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut stack: Vec<(usize, usize)> = corpus.children_of(idx).iter().rev().map(|&k| (k, 1)).collect();
    while let Some((k, d)) = stack.pop() {
        out.push((k, d));
        stack.extend(corpus.children_of(k).iter().rev().map(|&c| (c, d + 1)));
    }
    out
}

/// Ids of every transitive reply to `comment_id`, in preorder.
pub fn descendant_ids(corpus: &Corpus, comment_id: &str) -> Result<Vec<String>> {
    let idx = corpus
        .index_of(comment_id)
        .ok_or_else(|| Error::UnknownComment(comment_id.to_string()))?;
    Ok(descendants(corpus, idx)
        .into_iter()
        .map(|(k, _)| corpus.comment(k).comment_id.clone())
        .collect())
}

/// Comment indices of every transitive reply to the challenge.
pub fn challenge_subtree(episode: &ChallengeEpisode, corpus: &Corpus) -> Result<Vec<usize>> {
    let idx = episode.locate(corpus)?;
    Ok(descendants(corpus, idx).into_iter().map(|(k, _)| k).collect())
}

/// Loop metrics for the subtree below `anchor`, which must reply to a
/// resolvable comment.
pub fn subtree_metrics(anchor: &str, corpus: &Corpus, repair_cues: &impl CueDetector) -> Result<SubtreeMetrics> {
    let idx = corpus
        .index_of(anchor)
        .ok_or_else(|| Error::UnknownComment(anchor.to_string()))?;
    subtree_metrics_at(corpus, idx, repair_cues)
}

pub fn subtree_metrics_at(corpus: &Corpus, idx: usize, repair_cues: &impl CueDetector) -> Result<SubtreeMetrics> {
    let parent = corpus.parent_of(idx).ok_or_else(|| {
        Error::Data(format!(
            "anchor {} is not a reply to a known comment",
            corpus.comment(idx).comment_id
        ))
    })?;
    let orig = corpus.comment(parent).author_id.as_str();
    let below = descendants(corpus, idx);
    let depth = below.iter().map(|&(_, d)| d).max().unwrap_or(0);
    let m = SubtreeMetrics {
        anchor: corpus.comment(idx).comment_id.clone(),
        orig_return: below.iter().any(|&(k, _)| corpus.comment(k).author_id == orig),
        multi_turn: depth >= 2,
        repair_cue_present: below.iter().any(|&(k, _)| repair_cues.fires(corpus, k)),
        size: below.len(),
        depth,
    };
    debug_assert_eq!(m.depth == 0, m.size == 0);
    Ok(m)
}

/// Metrics for every episode, in episode order.
pub fn episode_metrics(
    episodes: &[ChallengeEpisode],
    corpus: &Corpus,
    repair_cues: &impl CueDetector,
) -> Result<Vec<SubtreeMetrics>> {
    episodes
        .par_iter()
        .map(|ep| subtree_metrics_at(corpus, ep.locate(corpus)?, repair_cues))
        .collect()
}

fn is_baseline_candidate(corpus: &Corpus, idx: usize, challenge_cues: &impl CueDetector) -> bool {
    corpus.is_nested_resolved(idx) && !challenge_cues.fires(corpus, idx)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampledAnchors {
    pub anchors: Vec<BaselineAnchor>,
    pub requested: usize,
    pub eligible: usize,
    /// Set when the pool was smaller than requested.
    pub warning: Option<String>,
}

/// Uniform sample without replacement of nested comments in a community
/// that carry no challenge cue. The RNG is keyed on `(seed, community)`.
pub fn sample_nonchallenge_anchors(
    corpus: &Corpus,
    community_id: &str,
    n: usize,
    challenge_cues: &impl CueDetector,
    seed: u64,
) -> Result<SampledAnchors> {
    let pool: Vec<usize> = corpus
        .community(community_id)?
        .comments
        .iter()
        .copied()
        .filter(|&i| is_baseline_candidate(corpus, i, challenge_cues))
        .collect();
    let mut warning = None;
    let mut picked: Vec<usize> = if n >= pool.len() {
        if n > pool.len() {
            warning = Some(format!(
                "{community_id}: requested {n} baseline anchors but only {} are eligible",
                pool.len()
            ));
        }
        pool.clone()
    } else {
        let mut rng = labelled_rng(seed, &format!("sampled-anchors/{community_id}"));
        sample(&mut rng, pool.len(), n).into_iter().map(|j| pool[j]).collect()
    };
    picked.sort_unstable();
    Ok(SampledAnchors {
        anchors: picked
            .into_iter()
            .map(|i| BaselineAnchor {
                anchor: corpus.comment(i).comment_id.clone(),
                kind: AnchorKind::Sampled,
                matched_to: None,
                depth_delta: None,
            })
            .collect(),
        requested: n,
        eligible: pool.len(),
        warning,
    })
}

/// Candidates for a locally matched control, in thread order.
pub fn matched_candidates(
    episode: &ChallengeEpisode,
    corpus: &Corpus,
    challenge_cues: &impl CueDetector,
) -> Result<Vec<usize>> {
    let idx = episode.locate(corpus)?;
    let depth = corpus.depth_of(idx) as i64;
    let mut excluded: Vec<usize> = descendants(corpus, idx).into_iter().map(|(k, _)| k).collect();
    excluded.push(idx);
    excluded.sort_unstable();
    Ok(corpus
        .post_comments(corpus.post_of(idx))
        .iter()
        .copied()
        .filter(|&j| {
            excluded.binary_search(&j).is_err()
                && (corpus.depth_of(j) as i64 - depth).abs() <= 1
                && is_baseline_candidate(corpus, j, challenge_cues)
        })
        .collect())
}

/// A nested non-challenge reply from the same post within one level of the
/// challenge's depth, drawn uniformly with an RNG keyed on
/// `(seed, challenge id)`. `None` when the post offers no candidate.
pub fn matched_nonchallenge_anchor(
    episode: &ChallengeEpisode,
    corpus: &Corpus,
    challenge_cues: &impl CueDetector,
    seed: u64,
) -> Result<Option<BaselineAnchor>> {
    let candidates = matched_candidates(episode, corpus, challenge_cues)?;
    if candidates.is_empty() {
        return Ok(None);
    }
    let mut rng = labelled_rng(derive_seed(seed, "matched-anchor"), &episode.challenge);
    let pick = candidates[rng.random_range(0..candidates.len())];
    let idx = episode.locate(corpus)?;
    Ok(Some(BaselineAnchor {
        anchor: corpus.comment(pick).comment_id.clone(),
        kind: AnchorKind::LocallyMatched,
        matched_to: Some(episode.challenge.clone()),
        depth_delta: Some(corpus.depth_of(pick) as i64 - corpus.depth_of(idx) as i64),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchedSet {
    /// `(challenge, control)` metrics, one entry per matched episode.
    pub pairs: Vec<(SubtreeMetrics, SubtreeMetrics)>,
    pub anchors: Vec<BaselineAnchor>,
    /// Episodes whose post offered no candidate.
    pub dropped: usize,
}

/// Pairs every episode with its locally matched control and measures both.
pub fn matched_metrics(
    episodes: &[ChallengeEpisode],
    corpus: &Corpus,
    challenge_cues: &impl CueDetector,
    repair_cues: &impl CueDetector,
    seed: u64,
) -> Result<MatchedSet> {
    let rows = episodes
        .par_iter()
        .map(|ep| {
            let Some(anchor) = matched_nonchallenge_anchor(ep, corpus, challenge_cues, seed)? else {
                return Ok(None);
            };
            let chal = subtree_metrics_at(corpus, ep.locate(corpus)?, repair_cues)?;
            let ctrl = subtree_metrics(&anchor.anchor, corpus, repair_cues)?;
            Ok(Some((chal, ctrl, anchor)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut set = MatchedSet {
        pairs: Vec::new(),
        anchors: Vec::new(),
        dropped: 0,
    };
    for row in rows {
        match row {
            Some((chal, ctrl, anchor)) => {
                set.pairs.push((chal, ctrl));
                set.anchors.push(anchor);
            }
            None => set.dropped += 1,
        }
    }
    Ok(set)
}

/// The three loop rates and size summaries of a set of subtrees.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoopRates {
    pub n: usize,
    pub orig_return: f64,
    pub multi_turn: f64,
    pub repair_cue: f64,
    pub median_size: f64,
    pub median_depth: f64,
}

fn median(mut v: Vec<usize>) -> f64 {
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    }
}

pub fn loop_rates(metrics: &[SubtreeMetrics]) -> Result<LoopRates> {
    if metrics.is_empty() {
        return Err(Error::Data("no subtrees to summarise".into()));
    }
    let n = metrics.len() as f64;
    let rate = |f: fn(&SubtreeMetrics) -> bool| metrics.iter().filter(|m| f(m)).count() as f64 / n;
    Ok(LoopRates {
        n: metrics.len(),
        orig_return: rate(|m| m.orig_return),
        multi_turn: rate(|m| m.multi_turn),
        repair_cue: rate(|m| m.repair_cue_present),
        median_size: median(metrics.iter().map(|m| m.size).collect()),
        median_depth: median(metrics.iter().map(|m| m.depth).collect()),
    })
}

/// Per-pair challenge-minus-control differences (each in {-1, 0, 1}).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedDifferences {
    pub orig_return: Vec<f64>,
    pub multi_turn: Vec<f64>,
    pub repair_cue: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct H3Comparison {
    pub challenge: LoopRates,
    pub baseline: LoopRates,
    /// Gaps are challenge minus baseline, in percentage points.
    pub return_gap: f64,
    pub multiturn_gap: f64,
    pub repaircue_gap: f64,
    pub paired: Option<PairedDifferences>,
}

/// Challenge-versus-baseline gaps. In paired mode the two slices must line
/// up element for element.
pub fn h3_compare(challenge: &[SubtreeMetrics], baseline: &[SubtreeMetrics], paired: bool) -> Result<H3Comparison> {
    let c = loop_rates(challenge)?;
    let b = loop_rates(baseline)?;
    let paired = if paired {
        if challenge.len() != baseline.len() {
            return Err(Error::Data(format!(
                "paired comparison needs equal lengths, got {} and {}",
                challenge.len(),
                baseline.len()
            )));
        }
        let diff = |f: fn(&SubtreeMetrics) -> bool| -> Vec<f64> {
            challenge
                .iter()
                .zip(baseline)
                .map(|(x, y)| f(x) as i32 as f64 - f(y) as i32 as f64)
                .collect()
        };
        Some(PairedDifferences {
            orig_return: diff(|m| m.orig_return),
            multi_turn: diff(|m| m.multi_turn),
            repair_cue: diff(|m| m.repair_cue_present),
        })
    } else {
        None
    };
    Ok(H3Comparison {
        return_gap: (c.orig_return - b.orig_return) * 100.0,
        multiturn_gap: (c.multi_turn - b.multi_turn) * 100.0,
        repaircue_gap: (c.repair_cue - b.repair_cue) * 100.0,
        challenge: c,
        baseline: b,
        paired,
    })
}
