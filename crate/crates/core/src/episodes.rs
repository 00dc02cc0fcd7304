//! Challenge episodes and the followup / repair measurements taken on them.
//!
//! An episode is anchored on a nested comment that carries a challenge cue
//! and replies to a comment by someone else. The challenged author is the
//! author of that parent comment.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Platform};
use crate::error::{Error, Result};
use crate::lexicon::CueDetector;
use crate::stats::rule_of_three;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChallengeEpisode {
    /// The challenging comment.
    pub challenge: String,
    pub challenge_author: String,
    /// The comment being challenged (parent of `challenge`).
    pub challenged: String,
    pub challenged_author: String,
    pub post_id: String,
    pub community_id: String,
    pub platform: Platform,
    pub challenge_timestamp: i64,
}

impl ChallengeEpisode {
    pub(crate) fn locate(&self, corpus: &Corpus) -> Result<usize> {
        corpus
            .index_of(&self.challenge)
            .ok_or_else(|| Error::UnknownComment(self.challenge.clone()))
    }
}

/// Every nested comment that fires the challenge detector, replies to a
/// resolvable comment, and is not a self-reply. Sorted by
/// `(post_id, timestamp, comment_id)`.
pub fn extract_challenges(corpus: &Corpus, challenge: &impl CueDetector) -> Vec<ChallengeEpisode> {
    let mut episodes: Vec<ChallengeEpisode> = (0..corpus.len())
        .into_par_iter()
        .filter_map(|i| {
            let parent = corpus.parent_of(i)?;
            let c = corpus.comment(i);
            let p = corpus.comment(parent);
            if c.author_id == p.author_id || !challenge.fires(corpus, i) {
                return None;
            }
            Some(ChallengeEpisode {
                challenge: c.comment_id.clone(),
                challenge_author: c.author_id.clone(),
                challenged: p.comment_id.clone(),
                challenged_author: p.author_id.clone(),
                post_id: c.post_id.clone(),
                community_id: c.community_id.clone(),
                platform: c.platform,
                challenge_timestamp: c.timestamp,
            })
        })
        .collect();
    episodes.par_sort_unstable_by(|a, b| {
        (&a.post_id, a.challenge_timestamp, &a.challenge).cmp(&(&b.post_id, b.challenge_timestamp, &b.challenge))
    });
    episodes
}

/// Groups episodes by community, preserving order inside each group.
pub fn by_community(episodes: &[ChallengeEpisode]) -> BTreeMap<&str, Vec<&ChallengeEpisode>> {
    let mut groups: BTreeMap<&str, Vec<&ChallengeEpisode>> = BTreeMap::new();
    for ep in episodes {
        groups.entry(ep.community_id.as_str()).or_default().push(ep);
    }
    groups
}

/// The challenged author replied directly to the challenge.
pub fn followup(episode: &ChallengeEpisode, corpus: &Corpus) -> Result<bool> {
    let idx = episode.locate(corpus)?;
    Ok(corpus
        .children_of(idx)
        .iter()
        .any(|&k| corpus.comment(k).author_id == episode.challenged_author))
}

/// Anyone replied directly to the challenge.
pub fn any_reply(episode: &ChallengeEpisode, corpus: &Corpus) -> Result<bool> {
    let idx = episode.locate(corpus)?;
    Ok(!corpus.children_of(idx).is_empty())
}

/// Where the time window looks for repairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimeScope {
    /// Only comments in the challenge's post.
    #[default]
    SamePost,
    /// Any comment by the challenged author in the corpus.
    Corpus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum RepairWindow {
    /// A direct child of the challenge by the challenged author.
    Direct,
    /// Among the next `k` comments of the post after the challenge.
    NextComments { k: usize },
    /// Any comment by the challenged author within `hours` after the challenge.
    Hours { hours: f64, scope: TimeScope },
}

impl RepairWindow {
    pub fn next_comments(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("repair window k must be >= 1".into()));
        }
        Ok(RepairWindow::NextComments { k })
    }

    pub fn hours(hours: f64) -> Result<Self> {
        Self::hours_scoped(hours, TimeScope::SamePost)
    }

    pub fn hours_scoped(hours: f64, scope: TimeScope) -> Result<Self> {
        if !(hours > 0.0 && hours.is_finite()) {
            return Err(Error::Config(format!("repair window hours must be > 0, got {hours}")));
        }
        Ok(RepairWindow::Hours { hours, scope })
    }

    /// Direct, next 3/5/10 comments, and 1/6/24 hours.
    pub fn standard_set() -> Vec<RepairWindow> {
        vec![
            RepairWindow::Direct,
            RepairWindow::NextComments { k: 3 },
            RepairWindow::NextComments { k: 5 },
            RepairWindow::NextComments { k: 10 },
            RepairWindow::Hours { hours: 1.0, scope: TimeScope::SamePost },
            RepairWindow::Hours { hours: 6.0, scope: TimeScope::SamePost },
            RepairWindow::Hours { hours: 24.0, scope: TimeScope::SamePost },
        ]
    }

    pub fn label(&self) -> String {
        match self {
            RepairWindow::Direct => "direct".into(),
            RepairWindow::NextComments { k } => format!("k{k}"),
            RepairWindow::Hours { hours, scope } => {
                let suffix = match scope {
                    TimeScope::SamePost => "",
                    TimeScope::Corpus => "_corpus",
                };
                format!("{hours}h{suffix}")
            }
        }
    }
}

impl fmt::Display for RepairWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for RepairWindow {
    type Err = Error;

    /// Accepts `direct`, `k<N>` and `<H>h`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "direct" {
            return Ok(RepairWindow::Direct);
        }
        if let Some(k) = s.strip_prefix('k') {
            if let Ok(k) = k.parse() {
                return RepairWindow::next_comments(k);
            }
        }
        if let Some(h) = s.strip_suffix('h') {
            if let Ok(h) = h.parse() {
                return RepairWindow::hours(h);
            }
        }
        Err(Error::Config(format!("unknown repair window `{s}`")))
    }
}

/// Whether the challenged author produced a repair-cue comment within the
/// window.
pub fn repair(
    episode: &ChallengeEpisode,
    corpus: &Corpus,
    window: &RepairWindow,
    repair_cues: &impl CueDetector,
) -> Result<bool> {
    let idx = episode.locate(corpus)?;
    let by_challenged = |k: usize| corpus.comment(k).author_id == episode.challenged_author;
    let hit = |k: usize| by_challenged(k) && repair_cues.fires(corpus, k);
    let challenge_key = corpus.comment(idx).chrono_key();
    Ok(match *window {
        RepairWindow::Direct => corpus.children_of(idx).iter().any(|&k| hit(k)),
        RepairWindow::NextComments { k } => {
            let thread = corpus.post_comments(corpus.post_of(idx));
            let start = thread.partition_point(|&j| corpus.comment(j).chrono_key() <= challenge_key);
            thread[start..].iter().take(k).any(|&j| hit(j))
        }
        RepairWindow::Hours { hours, scope } => {
            let horizon = hours * 3600.0;
            let within = |j: usize| {
                let c = corpus.comment(j);
                c.chrono_key() > challenge_key && ((c.timestamp - episode.challenge_timestamp) as f64) <= horizon
            };
            match scope {
                TimeScope::SamePost => {
                    let thread = corpus.post_comments(corpus.post_of(idx));
                    let start = thread.partition_point(|&j| corpus.comment(j).chrono_key() <= challenge_key);
                    thread[start..]
                        .iter()
                        .take_while(|&&j| within(j))
                        .any(|&j| hit(j))
                }
                TimeScope::Corpus => corpus
                    .author_timeline(&episode.challenged_author)
                    .iter()
                    .any(|&j| within(j) && repair_cues.fires(corpus, j)),
            }
        }
    })
}

/// Per-episode outcomes under several repair windows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeOutcome {
    #[serde(flatten)]
    pub episode: ChallengeEpisode,
    pub followup: bool,
    pub any_reply: bool,
    pub repairs: BTreeMap<String, bool>,
}

pub fn evaluate_episodes(
    episodes: &[ChallengeEpisode],
    corpus: &Corpus,
    windows: &[RepairWindow],
    repair_cues: &impl CueDetector,
) -> Result<Vec<EpisodeOutcome>> {
    episodes
        .par_iter()
        .map(|ep| {
            let mut repairs = BTreeMap::new();
            for w in windows {
                repairs.insert(w.label(), repair(ep, corpus, w, repair_cues)?);
            }
            Ok(EpisodeOutcome {
                episode: ep.clone(),
                followup: followup(ep, corpus)?,
                any_reply: any_reply(ep, corpus)?,
                repairs,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct H2Rates {
    pub n: usize,
    pub followups: usize,
    pub any_replies: usize,
    pub repairs: usize,
    /// Challenged-author direct return; `None` when there are no episodes.
    pub followup_rate: Option<f64>,
    /// Any direct reply to the challenge, kept as a diagnostic.
    pub any_reply_rate: Option<f64>,
    pub repair_rate: Option<f64>,
    /// Rule-of-three bound, attached when no repair was observed.
    pub zero_event_upper_bound: Option<f64>,
}

/// Followup and repair rates over a set of episodes.
pub fn h2_rates(
    episodes: &[ChallengeEpisode],
    corpus: &Corpus,
    window: &RepairWindow,
    repair_cues: &impl CueDetector,
) -> Result<H2Rates> {
    let flags = episodes
        .par_iter()
        .map(|ep| {
            Ok((
                followup(ep, corpus)?,
                any_reply(ep, corpus)?,
                repair(ep, corpus, window, repair_cues)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = flags.len();
    let followups = flags.iter().filter(|f| f.0).count();
    let any_replies = flags.iter().filter(|f| f.1).count();
    let repairs = flags.iter().filter(|f| f.2).count();
    let rate = |k: usize| (n > 0).then(|| k as f64 / n as f64);
    Ok(H2Rates {
        n,
        followups,
        any_replies,
        repairs,
        followup_rate: rate(followups),
        any_reply_rate: rate(any_replies),
        repair_rate: rate(repairs),
        zero_event_upper_bound: if n > 0 && repairs == 0 { rule_of_three(n).ok() } else { None },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Comment;
    use crate::lexicon::{LexiconSet, LexiconVariant};

    fn comment(id: &str, parent: Option<&str>, author: &str, ts: i64, body: &str) -> Comment {
        Comment {
            comment_id: id.into(),
            post_id: "p".into(),
            parent_id: parent.map(Into::into),
            author_id: author.into(),
            timestamp: ts,
            body: body.into(),
            community_id: "c".into(),
            platform: Platform::HumanForum,
        }
    }

    fn setup(rows: Vec<Comment>) -> (Corpus, Vec<ChallengeEpisode>, LexiconSet) {
        let corpus = Corpus::new(Platform::HumanForum, vec![], rows).unwrap();
        let set = LexiconSet::builtin();
        let eps = extract_challenges(&corpus, set.challenge(LexiconVariant::Full));
        (corpus, eps, set)
    }

    #[test]
    fn followup_requires_the_challenged_author() {
        let (corpus, eps, _) = setup(vec![
            comment("A", None, "X", 0, "claim"),
            comment("C", Some("A"), "Y", 10, "source?"),
            comment("R", Some("C"), "X", 20, "here"),
        ]);
        assert_eq!(eps.len(), 1);
        assert!(followup(&eps[0], &corpus).unwrap());

        let (corpus, eps, _) = setup(vec![
            comment("A", None, "X", 0, "claim"),
            comment("C", Some("A"), "Y", 10, "source?"),
            comment("R", Some("C"), "Z", 20, "here"),
        ]);
        assert!(!followup(&eps[0], &corpus).unwrap());
        assert!(any_reply(&eps[0], &corpus).unwrap());
    }

    #[test]
    fn self_challenges_and_top_level_cues_are_ignored() {
        let (_, eps, _) = setup(vec![
            comment("A", None, "X", 0, "that's wrong"),
            comment("B", Some("A"), "X", 10, "wrong, I take it back"),
        ]);
        assert!(eps.is_empty());
    }

    #[test]
    fn direct_repair_cue() {
        let (corpus, eps, set) = setup(vec![
            comment("A", None, "X", 0, "claim"),
            comment("C", Some("A"), "Y", 10, "what do you mean"),
            comment("R", Some("C"), "X", 20, "To clarify, I meant the other one"),
        ]);
        let rep = set.repair(LexiconVariant::Full);
        assert!(repair(&eps[0], &corpus, &RepairWindow::Direct, rep).unwrap());
    }

    #[test]
    fn empty_followthrough_is_false_everywhere() {
        let (corpus, eps, set) = setup(vec![
            comment("A", None, "X", 0, "claim"),
            comment("C", Some("A"), "Y", 10, "citation needed"),
        ]);
        let rep = set.repair(LexiconVariant::Full);
        for w in RepairWindow::standard_set() {
            assert!(!repair(&eps[0], &corpus, &w, rep).unwrap(), "{w}");
        }
    }

    #[test]
    fn zero_repairs_get_rule_of_three_bound() {
        let (corpus, eps, set) = setup(vec![
            comment("A", None, "X", 0, "claim"),
            comment("C", Some("A"), "Y", 10, "citation needed"),
        ]);
        let rates = h2_rates(&eps, &corpus, &RepairWindow::Direct, set.repair(LexiconVariant::Full)).unwrap();
        assert_eq!(rates.repair_rate, Some(0.0));
        assert_eq!(rates.zero_event_upper_bound, Some(3.0));
    }

    #[test]
    fn no_episodes_gives_undefined_rates() {
        let (corpus, _, set) = setup(vec![comment("A", None, "X", 0, "claim")]);
        let rates = h2_rates(&[], &corpus, &RepairWindow::Direct, set.repair(LexiconVariant::Full)).unwrap();
        assert_eq!(rates.n, 0);
        assert_eq!(rates.followup_rate, None);
        assert_eq!(rates.zero_event_upper_bound, None);
    }

    #[test]
    fn window_parsing() {
        assert_eq!("direct".parse::<RepairWindow>().unwrap(), RepairWindow::Direct);
        assert_eq!("k5".parse::<RepairWindow>().unwrap(), RepairWindow::NextComments { k: 5 });
        assert_eq!(
            "24h".parse::<RepairWindow>().unwrap(),
            RepairWindow::Hours { hours: 24.0, scope: TimeScope::SamePost }
        );
        assert!("k0".parse::<RepairWindow>().is_err());
        assert!(RepairWindow::hours(0.0).is_err());
    }
}
