//! Author-level behaviour before and after a first challenge, against
//! nearest-neighbour matched authors who were never challenged.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::episodes::ChallengeEpisode;
use crate::error::{Error, Result};
use crate::lexicon::CueDetector;
use crate::stats::{paired_summary, Resampling};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftMetric {
    Hedging,
    ChallengeCue,
    /// Whitespace-separated word count.
    Length,
}

impl ShiftMetric {
    pub const ALL: [ShiftMetric; 3] = [ShiftMetric::Hedging, ShiftMetric::ChallengeCue, ShiftMetric::Length];

    pub fn as_str(self) -> &'static str {
        match self {
            ShiftMetric::Hedging => "hedging",
            ShiftMetric::ChallengeCue => "challenge_cue",
            ShiftMetric::Length => "length",
        }
    }
}

impl fmt::Display for ShiftMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ShiftMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShiftMetric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown shift metric `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub comment_id: String,
    pub timestamp: i64,
    pub hedge: bool,
    pub challenge_cue: bool,
    pub length: u64,
}

impl TimelineEntry {
    pub fn value(&self, metric: ShiftMetric) -> u64 {
        match metric {
            ShiftMetric::Hedging => self.hedge as u64,
            ShiftMetric::ChallengeCue => self.challenge_cue as u64,
            ShiftMetric::Length => self.length,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorTimeline {
    pub author_id: String,
    pub community_id: String,
    /// In `(timestamp, comment_id)` order.
    pub entries: Vec<TimelineEntry>,
}

impl AuthorTimeline {
    /// Number of entries strictly before `ts`.
    pub fn split_at(&self, ts: i64) -> usize {
        self.entries.partition_point(|e| e.timestamp < ts)
    }
}

pub fn word_count(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// One timeline per author active in the community.
pub fn build_timelines(
    corpus: &Corpus,
    community_id: &str,
    hedging: &impl CueDetector,
    challenge: &impl CueDetector,
) -> Result<BTreeMap<String, AuthorTimeline>> {
    let mut by_author: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &i in &corpus.community(community_id)?.comments {
        by_author.entry(corpus.comment(i).author_id.as_str()).or_default().push(i);
    }
    Ok(by_author
        .into_par_iter()
        .map(|(author, mut idx)| {
            idx.sort_by(|&a, &b| corpus.comment(a).chrono_key().cmp(&corpus.comment(b).chrono_key()));
            let entries = idx
                .into_iter()
                .map(|i| {
                    let c = corpus.comment(i);
                    TimelineEntry {
                        comment_id: c.comment_id.clone(),
                        timestamp: c.timestamp,
                        hedge: hedging.fires(corpus, i),
                        challenge_cue: challenge.fires(corpus, i),
                        length: word_count(&c.body),
                    }
                })
                .collect();
            (
                author.to_string(),
                AuthorTimeline {
                    author_id: author.to_string(),
                    community_id: community_id.to_string(),
                    entries,
                },
            )
        })
        .collect())
}

/// Earliest challenge received by each challenged author in the community.
pub fn first_challenge_event(episodes: &[ChallengeEpisode], community_id: &str) -> BTreeMap<String, i64> {
    let mut events: BTreeMap<String, i64> = BTreeMap::new();
    for ep in episodes.iter().filter(|e| e.community_id == community_id) {
        events
            .entry(ep.challenged_author.clone())
            .and_modify(|t| *t = (*t).min(ep.challenge_timestamp))
            .or_insert(ep.challenge_timestamp);
    }
    events
}

/// Integer sums of a metric on either side of an event, so per-author
/// deltas can be compared exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Tally {
    pub pre_n: u64,
    pub pre_sum: u64,
    pub post_n: u64,
    pub post_sum: u64,
}

impl Tally {
    pub fn of(values: &[u64], split: usize) -> Self {
        Tally {
            pre_n: split as u64,
            pre_sum: values[..split].iter().sum(),
            post_n: (values.len() - split) as u64,
            post_sum: values[split..].iter().sum(),
        }
    }

    /// `mean(post) - mean(pre)`, `None` if either side is empty.
    pub fn delta(&self) -> Option<f64> {
        (self.pre_n > 0 && self.post_n > 0)
            .then(|| self.post_sum as f64 / self.post_n as f64 - self.pre_sum as f64 / self.pre_n as f64)
    }
}

/// Pre/post tallies of every challenged author, split at their first
/// challenge.
pub fn challenged_tallies(
    timelines: &BTreeMap<String, AuthorTimeline>,
    events: &BTreeMap<String, i64>,
    metric: ShiftMetric,
) -> BTreeMap<String, Tally> {
    events
        .iter()
        .filter_map(|(author, &ts)| {
            let t = timelines.get(author)?;
            let values: Vec<u64> = t.entries.iter().map(|e| e.value(metric)).collect();
            Some((author.clone(), Tally::of(&values, t.split_at(ts))))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchFeatures {
    pub author_id: String,
    pub volume: f64,
    pub hedge_rate: f64,
    pub mean_length: f64,
}

impl MatchFeatures {
    fn of(author_id: &str, entries: &[TimelineEntry]) -> Self {
        let n = entries.len() as f64;
        MatchFeatures {
            author_id: author_id.to_string(),
            volume: n,
            hedge_rate: entries.iter().filter(|e| e.hedge).count() as f64 / n,
            mean_length: entries.iter().map(|e| e.length as f64).sum::<f64>() / n,
        }
    }

    fn vector(&self) -> [f64; 3] {
        [self.volume, self.hedge_rate, self.mean_length]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftThresholds {
    /// Minimum pre-event comments for challenged authors and minimum total
    /// comments for pool members.
    pub min_pre: usize,
    pub min_post: usize,
}

impl Default for ShiftThresholds {
    fn default() -> Self {
        ShiftThresholds { min_pre: 4, min_post: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchedAuthor {
    pub challenged: String,
    pub control: Option<String>,
    pub distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assignment {
    /// In matching order (descending challenged pre-volume).
    pub pairs: Vec<MatchedAuthor>,
}

impl Assignment {
    pub fn matched(&self) -> impl Iterator<Item = (&str, &str)> {
        self.pairs
            .iter()
            .filter_map(|p| p.control.as_deref().map(|c| (p.challenged.as_str(), c)))
    }

    pub fn unmatched(&self) -> usize {
        self.pairs.iter().filter(|p| p.control.is_none()).count()
    }
}

/// Greedy 1:1 nearest-neighbour matching without replacement.
///
/// Challenged authors are processed by descending volume (ties by id); each
/// takes the closest remaining candidate by Euclidean distance on z-scored
/// features, ties going to the smaller candidate id. Features are z-scored
/// over the union of both groups; a constant feature contributes nothing.
pub fn nn_match(challenged: &[MatchFeatures], pool: &[MatchFeatures]) -> Result<Assignment> {
    if pool.is_empty() {
        return Err(Error::Data("nearest-neighbour matching needs a non-empty control pool".into()));
    }
    let mut union: Vec<&MatchFeatures> = challenged.iter().chain(pool).collect();
    union.sort_by(|a, b| a.author_id.cmp(&b.author_id));
    let all: Vec<[f64; 3]> = union.into_iter().map(MatchFeatures::vector).collect();
    let n = all.len() as f64;
    let mut centre = [0.0; 3];
    let mut scale = [1.0; 3];
    for k in 0..3 {
        let m = all.iter().map(|v| v[k]).sum::<f64>() / n;
        let sd = (all.iter().map(|v| (v[k] - m).powi(2)).sum::<f64>() / n).sqrt();
        centre[k] = m;
        if sd > 0.0 {
            scale[k] = sd;
        }
    }
    let z = |f: &MatchFeatures| {
        let v = f.vector();
        [0, 1, 2].map(|k| (v[k] - centre[k]) / scale[k])
    };

    let mut order: Vec<&MatchFeatures> = challenged.iter().collect();
    order.sort_by(|a, b| b.volume.total_cmp(&a.volume).then_with(|| a.author_id.cmp(&b.author_id)));
    let mut candidates: Vec<(&MatchFeatures, [f64; 3])> = pool.iter().map(|f| (f, z(f))).collect();
    candidates.sort_by(|a, b| a.0.author_id.cmp(&b.0.author_id));
    let mut taken = vec![false; candidates.len()];

    let mut pairs = Vec::with_capacity(order.len());
    for c in order {
        let zc = z(c);
        let mut best: Option<(usize, f64)> = None;
        for (j, (_, zj)) in candidates.iter().enumerate() {
            if taken[j] {
                continue;
            }
            let d = zc.iter().zip(zj).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        pairs.push(match best {
            Some((j, d)) => {
                taken[j] = true;
                MatchedAuthor {
                    challenged: c.author_id.clone(),
                    control: Some(candidates[j].0.author_id.clone()),
                    distance: Some(d),
                }
            }
            None => MatchedAuthor {
                challenged: c.author_id.clone(),
                control: None,
                distance: None,
            },
        });
    }
    Ok(Assignment { pairs })
}

/// Challenged authors meeting the activity thresholds, and the pool of
/// never-challenged authors with enough history.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchingInputs {
    pub challenged: Vec<MatchFeatures>,
    pub pool: Vec<MatchFeatures>,
    /// Challenged authors below the activity thresholds.
    pub excluded: usize,
}

pub fn matching_inputs(
    timelines: &BTreeMap<String, AuthorTimeline>,
    events: &BTreeMap<String, i64>,
    thresholds: ShiftThresholds,
) -> MatchingInputs {
    let mut out = MatchingInputs {
        challenged: Vec::new(),
        pool: Vec::new(),
        excluded: 0,
    };
    for (author, t) in timelines {
        match events.get(author) {
            Some(&ts) => {
                let split = t.split_at(ts);
                if split >= thresholds.min_pre.max(1) && t.entries.len() - split >= thresholds.min_post.max(1) {
                    out.challenged.push(MatchFeatures::of(author, &t.entries[..split]));
                } else {
                    out.excluded += 1;
                }
            }
            None if t.entries.len() >= thresholds.min_pre.max(2) => {
                out.pool.push(MatchFeatures::of(author, &t.entries));
            }
            None => {}
        }
    }
    out.excluded += events.keys().filter(|a| !timelines.contains_key(*a)).count();
    out
}

/// Index in a control timeline of length `control_len` sitting at the same
/// relative position as `split` in a timeline of length `len`.
pub fn control_split(split: usize, len: usize, control_len: usize) -> usize {
    let q = split as f64 / len as f64;
    let idx = (q * control_len as f64).round() as usize;
    idx.clamp(1, control_len.saturating_sub(1).max(1))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftEstimate {
    pub metric: ShiftMetric,
    /// Mean challenged delta minus mean control delta.
    pub controlled_shift: f64,
    pub challenged_delta: f64,
    pub control_delta: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub p_value: Option<f64>,
    /// Shift over the standard deviation of pair differences.
    pub effect_size: Option<f64>,
    pub n_challenged: usize,
    pub n_control: usize,
    /// Authors dropped for lacking observations on one side.
    pub n_excluded: usize,
    pub seed: u64,
}

/// How each side of a pair is cut into before/after segments.
#[derive(Debug, Clone, Copy)]
enum Window {
    Real { drop: usize },
    Placebo { quantile: f64 },
}

fn mean_u64(v: &[u64]) -> f64 {
    v.iter().sum::<u64>() as f64 / v.len() as f64
}

/// Delta for one timeline cut at `split`, or `None` if a side is empty.
fn window_delta(values: &[u64], split: usize, window: Window, drop_applies: bool) -> Option<f64> {
    let (before, after) = match window {
        Window::Real { drop } => {
            let skip = if drop_applies { drop } else { 0 };
            (&values[..split], values[split..].get(skip..).unwrap_or(&[]))
        }
        Window::Placebo { quantile } => {
            if split < 2 {
                return None;
            }
            let sham = ((quantile * split as f64).floor() as usize).clamp(1, split - 1);
            (&values[..sham], &values[sham..split])
        }
    };
    (!before.is_empty() && !after.is_empty()).then(|| mean_u64(after) - mean_u64(before))
}

fn sample_sd(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    Some((v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
}

fn estimate(
    assignment: &Assignment,
    timelines: &BTreeMap<String, AuthorTimeline>,
    events: &BTreeMap<String, i64>,
    metric: ShiftMetric,
    window: Window,
    resampling: Resampling,
) -> Result<ShiftEstimate> {
    let values = |a: &str| -> Result<Vec<u64>> {
        timelines
            .get(a)
            .map(|t| t.entries.iter().map(|e| e.value(metric)).collect())
            .ok_or_else(|| Error::Data(format!("no timeline for author `{a}`")))
    };
    let mut chal_deltas = Vec::new();
    let mut ctrl_deltas = Vec::new();
    let mut pair_diffs = Vec::new();
    let mut excluded = 0;
    for p in &assignment.pairs {
        let ts = *events
            .get(&p.challenged)
            .ok_or_else(|| Error::Data(format!("no event for challenged author `{}`", p.challenged)))?;
        let cv = values(&p.challenged)?;
        let split = timelines[&p.challenged].split_at(ts);
        let Some(dc) = window_delta(&cv, split, window, true) else {
            excluded += 1;
            continue;
        };
        chal_deltas.push(dc);
        if let Some(ctrl) = &p.control {
            let kv = values(ctrl)?;
            if kv.len() < 2 {
                excluded += 1;
                continue;
            }
            let ks = control_split(split, cv.len(), kv.len());
            match window_delta(&kv, ks, window, false) {
                Some(dk) => {
                    ctrl_deltas.push(dk);
                    pair_diffs.push(dc - dk);
                }
                None => excluded += 1,
            }
        }
    }
    if chal_deltas.is_empty() {
        return Err(Error::Data(format!("no challenged author has usable {metric} data")));
    }
    let chal_mean = chal_deltas.iter().sum::<f64>() / chal_deltas.len() as f64;
    let ctrl_mean = (!ctrl_deltas.is_empty()).then(|| ctrl_deltas.iter().sum::<f64>() / ctrl_deltas.len() as f64);
    let shift = chal_mean - ctrl_mean.unwrap_or(0.0);
    let summary = if pair_diffs.is_empty() {
        None
    } else {
        Some(paired_summary(&pair_diffs, resampling)?)
    };
    let effect_size = sample_sd(&pair_diffs).filter(|&sd| sd > 0.0).map(|sd| shift / sd);
    Ok(ShiftEstimate {
        metric,
        controlled_shift: shift,
        challenged_delta: chal_mean,
        control_delta: ctrl_mean,
        ci_low: summary.as_ref().and_then(|s| s.ci_low),
        ci_high: summary.as_ref().and_then(|s| s.ci_high),
        p_value: summary.as_ref().map(|s| s.p_value),
        effect_size,
        n_challenged: chal_deltas.len(),
        n_control: ctrl_deltas.len(),
        n_excluded: excluded,
        seed: resampling.seed,
    })
}

/// Challenged pre-to-post change minus matched controls' change. Each
/// control is cut at the same relative position of its own timeline.
pub fn controlled_shift(
    assignment: &Assignment,
    timelines: &BTreeMap<String, AuthorTimeline>,
    events: &BTreeMap<String, i64>,
    metric: ShiftMetric,
    resampling: Resampling,
) -> Result<ShiftEstimate> {
    durability(assignment, timelines, events, metric, 0, resampling)
}

/// A sham event at `quantile` of each author's pre-event history; the sham
/// post window ends at the real event.
pub fn placebo_shift(
    assignment: &Assignment,
    timelines: &BTreeMap<String, AuthorTimeline>,
    events: &BTreeMap<String, i64>,
    metric: ShiftMetric,
    quantile: f64,
    resampling: Resampling,
) -> Result<ShiftEstimate> {
    if !(0.0..1.0).contains(&quantile) {
        return Err(Error::Config(format!("placebo quantile must be in [0, 1), got {quantile}")));
    }
    estimate(assignment, timelines, events, metric, Window::Placebo { quantile }, resampling)
}

/// Controlled shift after discarding the first `drop` post-event comments
/// of each challenged author.
pub fn durability(
    assignment: &Assignment,
    timelines: &BTreeMap<String, AuthorTimeline>,
    events: &BTreeMap<String, i64>,
    metric: ShiftMetric,
    drop: usize,
    resampling: Resampling,
) -> Result<ShiftEstimate> {
    estimate(assignment, timelines, events, metric, Window::Real { drop }, resampling)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Drift {
    pub metric: ShiftMetric,
    /// Mean over authors of second-half minus first-half pre-event means.
    pub drift: Option<f64>,
    pub n_authors: usize,
}

/// Trend inside the pre-event period. With an odd count the first half
/// takes the extra comment.
pub fn pre_period_drift(
    timelines: &BTreeMap<String, AuthorTimeline>,
    events: &BTreeMap<String, i64>,
    metric: ShiftMetric,
) -> Drift {
    let drifts: Vec<f64> = events
        .iter()
        .filter_map(|(author, &ts)| {
            let t = timelines.get(author)?;
            let pre: Vec<u64> = t.entries[..t.split_at(ts)].iter().map(|e| e.value(metric)).collect();
            if pre.len() < 2 {
                return None;
            }
            let half = pre.len().div_ceil(2);
            Some(mean_u64(&pre[half..]) - mean_u64(&pre[..half]))
        })
        .collect();
    Drift {
        metric,
        drift: (!drifts.is_empty()).then(|| drifts.iter().sum::<f64>() / drifts.len() as f64),
        n_authors: drifts.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn timeline(author: &str, start: i64, hedges: &[bool]) -> AuthorTimeline {
        AuthorTimeline {
            author_id: author.into(),
            community_id: "c".into(),
            entries: hedges
                .iter()
                .enumerate()
                .map(|(i, &h)| TimelineEntry {
                    comment_id: format!("{author}{i}"),
                    timestamp: start + i as i64 * 10,
                    hedge: h,
                    challenge_cue: false,
                    length: 3,
                })
                .collect(),
        }
    }

    fn features(id: &str, volume: f64, hedge: f64, len: f64) -> MatchFeatures {
        MatchFeatures {
            author_id: id.into(),
            volume,
            hedge_rate: hedge,
            mean_length: len,
        }
    }

    #[test]
    fn nearest_candidate_wins() {
        let a = nn_match(
            &[features("c", 5.0, 0.5, 10.0)],
            &[features("far", 9.0, 0.9, 19.0), features("near", 5.0, 0.5, 11.0)],
        )
        .unwrap();
        assert_eq!(a.pairs[0].control.as_deref(), Some("near"));
    }

    #[test]
    fn clones_match_at_zero_distance_and_pool_is_not_reused() {
        let f = features("x", 4.0, 0.25, 7.0);
        let chal = vec![features("a", 4.0, 0.25, 7.0), features("b", 4.0, 0.25, 7.0)];
        let pool = vec![MatchFeatures { author_id: "p1".into(), ..f.clone() }];
        let a = nn_match(&chal, &pool).unwrap();
        assert_eq!(a.pairs[0].distance, Some(0.0));
        assert_eq!(a.unmatched(), 1);
        assert!(nn_match(&chal, &[]).is_err());
    }

    #[test]
    fn constant_metric_has_zero_shift() {
        let mut tl = BTreeMap::new();
        tl.insert("a".into(), timeline("a", 0, &[true; 8]));
        tl.insert("b".into(), timeline("b", 0, &[true; 8]));
        let events = BTreeMap::from([("a".to_string(), 45)]);
        let inputs = matching_inputs(&tl, &events, ShiftThresholds::default());
        let asg = nn_match(&inputs.challenged, &inputs.pool).unwrap();
        let est = controlled_shift(&asg, &tl, &events, ShiftMetric::Hedging, Resampling::new(1)).unwrap();
        assert_eq!(est.controlled_shift, 0.0);
        assert_eq!(est.effect_size, None);
    }

    #[test]
    fn drop_zero_is_the_controlled_shift() {
        let mut tl = BTreeMap::new();
        tl.insert("a".into(), timeline("a", 0, &[false, false, false, false, true, false, true]));
        tl.insert("b".into(), timeline("b", 0, &[false, true, false, false, false, true]));
        let events = BTreeMap::from([("a".to_string(), 35)]);
        let inputs = matching_inputs(&tl, &events, ShiftThresholds::default());
        let asg = nn_match(&inputs.challenged, &inputs.pool).unwrap();
        let r = Resampling::new(4);
        let a = controlled_shift(&asg, &tl, &events, ShiftMetric::Hedging, r).unwrap();
        let b = durability(&asg, &tl, &events, ShiftMetric::Hedging, 0, r).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn drift_of_two_comments() {
        let tl = BTreeMap::from([("a".to_string(), timeline("a", 0, &[false, true, false]))]);
        let events = BTreeMap::from([("a".to_string(), 15)]);
        let d = pre_period_drift(&tl, &events, ShiftMetric::Hedging);
        assert_eq!(d.drift, Some(1.0));
    }

    #[test]
    fn control_split_is_clamped() {
        assert_eq!(control_split(4, 8, 10), 5);
        assert_eq!(control_split(0, 8, 10), 1);
        assert_eq!(control_split(8, 8, 10), 9);
    }

    #[test]
    fn first_event_is_the_earliest() {
        let ep = |ts| ChallengeEpisode {
            challenge: format!("c{ts}"),
            challenge_author: "y".into(),
            challenged: "p".into(),
            challenged_author: "x".into(),
            post_id: "p".into(),
            community_id: "c".into(),
            platform: crate::corpus::Platform::HumanForum,
            challenge_timestamp: ts,
        };
        let events = first_challenge_event(&[ep(30), ep(10), ep(20)], "c");
        assert_eq!(events["x"], 10);
        assert!(!events.contains_key("y"));
    }
}
