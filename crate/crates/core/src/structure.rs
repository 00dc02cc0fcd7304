//! Structural metrics: nesting rate, author concentration, community
//! screening and activity timelines.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::corpus::{date_of, Corpus};
use crate::error::{Error, Result};

/// Fraction of a community's comments that carry a parent identifier.
///
/// Presence is what counts: a dangling parent still makes a comment nested.
pub fn nesting_rate(corpus: &Corpus, community_id: &str) -> Result<f64> {
    let index = corpus.community(community_id)?;
    Ok(ratio(nested_count(corpus, &index.comments), index.comments.len()))
}

fn nested_count(corpus: &Corpus, comments: &[usize]) -> usize {
    comments
        .iter()
        .filter(|&&i| corpus.comment(i).parent_id.is_some())
        .count()
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Nesting rate over every comment of the corpus.
pub fn corpus_nesting_rate(corpus: &Corpus) -> f64 {
    let all: Vec<usize> = (0..corpus.len()).collect();
    ratio(nested_count(corpus, &all), corpus.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuthorShare {
    pub share: f64,
    /// Set when there were no nested comments to share out; `share` is then 0.
    pub no_nested_comments: bool,
}

/// Share of nested comments written by the `k` most prolific nested-comment
/// authors of a community. Ties in volume are broken by author id.
pub fn author_concentration(corpus: &Corpus, community_id: &str, k: usize) -> Result<AuthorShare> {
    let index = corpus.community(community_id)?;
    top_k_share(corpus, &index.comments, k)
}

/// Same measure over the whole corpus.
pub fn platform_concentration(corpus: &Corpus, k: usize) -> Result<AuthorShare> {
    let all: Vec<usize> = (0..corpus.len()).collect();
    top_k_share(corpus, &all, k)
}

fn top_k_share(corpus: &Corpus, comments: &[usize], k: usize) -> Result<AuthorShare> {
    if k == 0 {
        return Err(Error::Config("author concentration needs k >= 1".into()));
    }
    let mut per_author: HashMap<&str, usize> = HashMap::new();
    let mut nested = 0usize;
    for &i in comments {
        let c = corpus.comment(i);
        if c.parent_id.is_some() {
            nested += 1;
            *per_author.entry(c.author_id.as_str()).or_default() += 1;
        }
    }
    if nested == 0 {
        return Ok(AuthorShare {
            share: 0.0,
            no_nested_comments: true,
        });
    }
    let mut counts: Vec<(&str, usize)> = per_author.into_iter().collect();
    counts.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let top: usize = counts.iter().take(k).map(|(_, n)| n).sum();
    Ok(AuthorShare {
        share: top as f64 / nested as f64,
        no_nested_comments: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionThresholds {
    pub min_nested: usize,
    pub max_top5: f64,
}

impl Default for SelectionThresholds {
    fn default() -> Self {
        SelectionThresholds {
            min_nested: 750,
            max_top5: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    /// Passes both screens.
    Main,
    /// Diverse enough but short on nested volume.
    Appendix,
    /// Dominated by a handful of authors.
    Excluded,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Main => "main",
            Tier::Appendix => "appendix",
            Tier::Excluded => "excluded",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommunityStats {
    pub community_id: String,
    pub posts: usize,
    pub comments: usize,
    pub nested: usize,
    pub nesting_rate: f64,
    pub top5_author_share: f64,
    pub eligible: bool,
    pub tier: Tier,
}

/// Screens every community on nested volume and top-5 author share.
///
/// A community is eligible iff `nested >= min_nested` and
/// `top5 < max_top5`. Ineligible communities stay in the output: those that
/// fail only on volume are tiered `Appendix`, anything failing the
/// concentration screen is `Excluded`.
pub fn select_communities(corpus: &Corpus, thresholds: SelectionThresholds) -> Result<Vec<CommunityStats>> {
    if !(thresholds.max_top5 > 0.0) {
        return Err(Error::Config("max_top5 must be positive".into()));
    }
    corpus
        .communities()
        .iter()
        .map(|(id, index)| {
            let nested = nested_count(corpus, &index.comments);
            let top5 = top_k_share(corpus, &index.comments, 5)?.share;
            let volume_ok = nested >= thresholds.min_nested;
            let diverse = top5 < thresholds.max_top5;
            let tier = match (volume_ok, diverse) {
                (true, true) => Tier::Main,
                (false, true) => Tier::Appendix,
                (_, false) => Tier::Excluded,
            };
            Ok(CommunityStats {
                community_id: id.clone(),
                posts: index.posts.len(),
                comments: index.comments.len(),
                nested,
                nesting_rate: ratio(nested, index.comments.len()),
                top5_author_share: top5,
                eligible: volume_ok && diverse,
                tier,
            })
        })
        .collect()
}

/// Comments per UTC calendar day, for one community or the whole corpus.
pub fn activity_timeline(corpus: &Corpus, community_id: Option<&str>) -> Result<BTreeMap<NaiveDate, usize>> {
    let mut days = BTreeMap::new();
    let mut add = |i: usize| *days.entry(date_of(corpus.comment(i).timestamp)).or_insert(0) += 1;
    match community_id {
        Some(id) => corpus.community(id)?.comments.iter().for_each(|&i| add(i)),
        None => (0..corpus.len()).for_each(add),
    }
    Ok(days)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchType {
    ExactName,
    Concept,
    Topic,
}

impl FromStr for MatchType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact_name" => Ok(MatchType::ExactName),
            "concept" => Ok(MatchType::Concept),
            "topic" => Ok(MatchType::Topic),
            other => Err(Error::Config(format!("unknown match type `{other}`"))),
        }
    }
}

/// An agent-forum community and its human-forum counterpart.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchedPair {
    #[serde(rename = "agent")]
    pub agent_community_id: String,
    #[serde(rename = "human")]
    pub human_community_id: String,
    pub match_type: MatchType,
}

impl MatchedPair {
    /// Label used for pair-level tables, e.g. `philosophy/philosophy`.
    pub fn label(&self) -> String {
        format!("{}/{}", self.human_community_id, self.agent_community_id)
    }
}

/// Reads a pairs file: a JSON list of `{agent, human, match_type}`.
pub fn load_pairs(path: &Path) -> Result<Vec<MatchedPair>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("pairs file {}: {e}", path.display())))
}

/// Checks that every pair names communities present in the two corpora.
pub fn validate_pairs(pairs: &[MatchedPair], agent: &Corpus, human: &Corpus) -> Result<()> {
    for p in pairs {
        agent.community(&p.agent_community_id)?;
        human.community(&p.human_community_id)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Comment, Platform};

    fn corpus(rows: &[(&str, Option<&str>, &str)]) -> Corpus {
        let comments = rows
            .iter()
            .enumerate()
            .map(|(i, (id, parent, author))| Comment {
                comment_id: id.to_string(),
                post_id: "p".into(),
                parent_id: parent.map(Into::into),
                author_id: author.to_string(),
                timestamp: i as i64,
                body: String::new(),
                community_id: "c".into(),
                platform: Platform::AgentForum,
            })
            .collect();
        Corpus::new(Platform::AgentForum, vec![], comments).unwrap()
    }

    #[test]
    fn flat_community_has_zero_nesting() {
        let c = corpus(&[("a", None, "x"), ("b", None, "y")]);
        assert_eq!(nesting_rate(&c, "c").unwrap(), 0.0);
        let share = author_concentration(&c, "c", 5).unwrap();
        assert!(share.no_nested_comments);
        assert_eq!(share.share, 0.0);
    }

    #[test]
    fn dangling_parent_counts_as_nested() {
        let c = corpus(&[("a", None, "x"), ("b", Some("ghost"), "y")]);
        assert_eq!(nesting_rate(&c, "c").unwrap(), 0.5);
    }

    #[test]
    fn single_author_concentration_is_one() {
        let c = corpus(&[("a", None, "x"), ("b", Some("a"), "x"), ("c", Some("b"), "x")]);
        assert_eq!(author_concentration(&c, "c", 5).unwrap().share, 1.0);
    }

    #[test]
    fn unknown_community_errors() {
        let c = corpus(&[("a", None, "x")]);
        assert!(matches!(nesting_rate(&c, "nope"), Err(Error::UnknownCommunity(_))));
    }

    #[test]
    fn zero_k_is_rejected() {
        let c = corpus(&[("a", None, "x")]);
        assert!(author_concentration(&c, "c", 0).is_err());
    }

    #[test]
    fn pairs_round_trip_through_json() {
        let json = r#"[{"agent": "philosophy", "human": "philosophy", "match_type": "exact_name"},
                       {"agent": "ai", "human": "science", "match_type": "topic"}]"#;
        let pairs: Vec<MatchedPair> = serde_json::from_str(json).unwrap();
        assert_eq!(pairs[1].match_type, MatchType::Topic);
        assert_eq!(pairs[1].label(), "science/ai");
    }
}
