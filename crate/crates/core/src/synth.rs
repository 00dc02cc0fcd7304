//! Seeded synthetic forums with known ground truth.
//!
//! Bodies are built from a word pool that no lexicon cue can match, alone or
//! across word boundaries, plus cues injected at recorded positions. The
//! ground truth is then derived by brute force from the generator's own
//! bookkeeping, without going through [`Corpus`] or the analysis modules,
//! so it can serve as an oracle for them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Zipf};
use serde::{Deserialize, Serialize};

use crate::authorshift::{build_timelines, challenged_tallies, first_challenge_event, ShiftMetric, Tally};
use crate::corpus::{Comment, Corpus, Platform, Post};
use crate::correction::{episode_metrics, matched_nonchallenge_anchor, sample_nonchallenge_anchors, SubtreeMetrics};
use crate::episodes::{evaluate_episodes, extract_challenges, RepairWindow, TimeScope};
use crate::error::{Error, Result};
use crate::lexicon::{
    CueCategory, CueMask, LexiconSet, LexiconVariant, CHALLENGE_CUES, HEDGING_CUES, REPAIR_CUES,
    STRICT_CHALLENGE_REMOVALS, STRICT_REPAIR_REMOVALS,
};
use crate::seed::labelled_rng;
use crate::structure::{select_communities, SelectionThresholds};

/// Filler vocabulary. Checked against every lexicon by [`check_word_pool`].
pub const WORD_POOL: &[&str] = &[
    "river", "amber", "copper", "lantern", "meadow", "granite", "harbor", "velvet", "orchid", "pixel", "quartz",
    "saddle", "timber", "walnut", "zephyr", "basalt", "cobalt", "falcon", "glacier", "hazel", "indigo", "jasper",
    "kettle", "marble", "nectar", "opal", "pepper", "quiver", "raven", "sable", "thistle", "umber", "violet",
    "willow", "yarrow", "cedar", "dune", "ember", "fern", "gravel", "heron", "iris", "juniper", "kelp", "lichen",
    "maple", "nutmeg", "otter", "pebble", "quill", "reed", "sorrel", "tundra", "urchin", "vapor", "wren", "yew",
    "zinnia", "badger", "cinder",
];

const BASE_TIMESTAMP: i64 = 1_700_000_000;
const MAX_GAP_SECONDS: i64 = 7200;

fn raw_list(category: CueCategory, variant: LexiconVariant) -> Vec<&'static str> {
    let (full, removed): (&[&str], &[&str]) = match category {
        CueCategory::Challenge => (CHALLENGE_CUES, STRICT_CHALLENGE_REMOVALS),
        CueCategory::Repair => (REPAIR_CUES, STRICT_REPAIR_REMOVALS),
        CueCategory::Hedging => (HEDGING_CUES, &[]),
    };
    full.iter()
        .copied()
        .filter(|c| variant == LexiconVariant::Full || !removed.contains(c))
        .collect()
}

/// Whether `text` (already lowercase) contains a cue of the list.
fn fires_raw(text: &str, category: CueCategory, variant: LexiconVariant) -> bool {
    raw_list(category, variant).iter().any(|c| text.contains(c))
}

const VARIANTS: [LexiconVariant; 2] = [LexiconVariant::Full, LexiconVariant::Strict];

/// Cues of `category` that fire no other category under either variant.
pub fn injectable_cues(category: CueCategory) -> Vec<&'static str> {
    raw_list(category, LexiconVariant::Full)
        .into_iter()
        .filter(|cue| {
            CueCategory::ALL
                .iter()
                .filter(|&&other| other != category)
                .all(|&other| VARIANTS.iter().all(|&v| !fires_raw(cue, other, v)))
        })
        .collect()
}

/// Verifies that no cue matches inside a pool word, across two pool words,
/// or across the boundary between an injectable cue and a pool word.
pub fn check_word_pool() -> Result<()> {
    let all_cues: Vec<&str> = CueCategory::ALL
        .iter()
        .flat_map(|&c| raw_list(c, LexiconVariant::Full))
        .collect();
    let fail = |what: String| Err(Error::Invariant(format!("word pool is not cue-free: {what}")));
    let mut texts = Vec::new();
    for w in WORD_POOL {
        if all_cues.iter().any(|c| c.contains(w)) {
            return fail(format!("a cue contains `{w}`"));
        }
        for v in WORD_POOL {
            texts.push(format!("{w} {v}"));
        }
    }
    for text in &texts {
        if let Some(c) = all_cues.iter().find(|c| text.contains(*c)) {
            return fail(format!("`{c}` in `{text}`"));
        }
    }
    for cat in CueCategory::ALL {
        for cue in injectable_cues(cat) {
            for w in WORD_POOL {
                for text in [format!("{w} {cue}"), format!("{cue} {w}")] {
                    for other in CueCategory::ALL {
                        for v in VARIANTS {
                            let expected = fires_raw(cue, other, v);
                            if fires_raw(&text, other, v) != expected {
                                return fail(format!("boundary `{text}` changes {other}/{v}"));
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CommentsPerPost {
    Fixed { n: usize },
    /// `1 + Geometric`, with the given mean.
    Geometric { mean: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_posts: usize,
    pub comments_per_post: CommentsPerPost,
    pub p_nest: f64,
    pub p_challenge: f64,
    pub p_followup: f64,
    pub p_repair: f64,
    pub p_hedge: f64,
    /// Share of challenged-author responses posted somewhere other than
    /// directly under the challenge.
    pub p_indirect: f64,
    /// Organic comments that may land between a challenge and its response.
    pub max_response_lag: usize,
    pub n_authors: usize,
    /// Zipf exponent of author activity; 0 is uniform.
    pub author_skew: f64,
    pub time_span_days: u32,
    pub n_communities: usize,
    pub platform: Platform,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_posts: 200,
            comments_per_post: CommentsPerPost::Geometric { mean: 12.0 },
            p_nest: 0.6,
            p_challenge: 0.2,
            p_followup: 0.4,
            p_repair: 0.5,
            p_hedge: 0.15,
            p_indirect: 0.2,
            max_response_lag: 6,
            n_authors: 60,
            author_skew: 1.0,
            time_span_days: 60,
            n_communities: 2,
            platform: Platform::HumanForum,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_nest", self.p_nest),
            ("p_challenge", self.p_challenge),
            ("p_followup", self.p_followup),
            ("p_repair", self.p_repair),
            ("p_hedge", self.p_hedge),
            ("p_indirect", self.p_indirect),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if self.n_posts == 0 || self.n_authors == 0 || self.n_communities == 0 || self.time_span_days == 0 {
            return Err(Error::Config("n_posts, n_authors, n_communities and time_span_days must be >= 1".into()));
        }
        match self.comments_per_post {
            CommentsPerPost::Fixed { n } if n == 0 => {
                Err(Error::Config("comments_per_post must be >= 1".into()))
            }
            CommentsPerPost::Geometric { mean } if !(mean >= 1.0 && mean.is_finite()) => {
                Err(Error::Config(format!("comments_per_post mean must be >= 1, got {mean}")))
            }
            _ if !(self.author_skew >= 0.0 && self.author_skew.is_finite()) => {
                Err(Error::Config("author_skew must be >= 0".into()))
            }
            _ => Ok(()),
        }
    }
}

/// The generator's own record of one comment.
#[derive(Debug, Clone)]
struct Draft {
    post: usize,
    parent: Option<usize>,
    author: usize,
    timestamp: i64,
    depth: usize,
    challenge_cue: Option<&'static str>,
    repair_cue: Option<&'static str>,
    hedge_cue: Option<&'static str>,
    words: u64,
    body: String,
}

struct Pending {
    remaining: usize,
    challenge: usize,
    author: usize,
    indirect: bool,
}

struct Generator<'a> {
    cfg: &'a SynthConfig,
    rng: ChaCha8Rng,
    zipf: Zipf<f64>,
    challenge_cues: Vec<&'static str>,
    repair_cues: Vec<&'static str>,
    hedge_cues: Vec<&'static str>,
    drafts: Vec<Draft>,
}

impl Generator<'_> {
    fn author(&mut self) -> usize {
        (self.zipf.sample(&mut self.rng) as usize).clamp(1, self.cfg.n_authors) - 1
    }

    fn words(&mut self, lo: usize, hi: usize, out: &mut Vec<String>) {
        let n = self.rng.random_range(lo..=hi);
        for _ in 0..n {
            out.push(WORD_POOL.choose(&mut self.rng).expect("pool is not empty").to_string());
        }
    }

    fn render(&mut self, cue: &str) -> String {
        let mut s = cue.to_string();
        if self.rng.random_bool(0.15) {
            s = s.to_uppercase();
        }
        if s.contains('\'') && self.rng.random_bool(0.5) {
            s = s.replace('\'', "\u{2019}");
        }
        s
    }

    fn body(&mut self, cues: &[&'static str]) -> (String, u64) {
        let mut pieces = Vec::new();
        self.words(1, 4, &mut pieces);
        let mut words = pieces.len() as u64;
        for cue in cues {
            let r = self.render(cue);
            pieces.push(r);
            words += cue.split_whitespace().count() as u64;
            let before = pieces.len();
            self.words(1, 3, &mut pieces);
            words += (pieces.len() - before) as u64;
        }
        (pieces.join(" "), words)
    }

    fn pick(&mut self, cues: &[&'static str]) -> &'static str {
        cues.choose(&mut self.rng).copied().expect("cue list is not empty")
    }

    fn maybe_hedge(&mut self) -> Option<&'static str> {
        if self.rng.random_bool(self.cfg.p_hedge) {
            let list = self.hedge_cues.clone();
            Some(self.pick(&list))
        } else {
            None
        }
    }

    fn push(&mut self, mut d: Draft) -> usize {
        let mut cues = Vec::new();
        cues.extend(d.challenge_cue);
        cues.extend(d.hedge_cue);
        cues.extend(d.repair_cue);
        let (body, words) = self.body(&cues);
        d.body = body;
        d.words = words;
        self.drafts.push(d);
        self.drafts.len() - 1
    }

    fn post(&mut self, post: usize) {
        let organic = match self.cfg.comments_per_post {
            CommentsPerPost::Fixed { n } => n,
            CommentsPerPost::Geometric { mean } => {
                1 + Geometric::new(1.0 / mean).expect("mean >= 1").sample(&mut self.rng) as usize
            }
        };
        let span = self.cfg.time_span_days as i64 * 86_400;
        let mut ts = BASE_TIMESTAMP + self.rng.random_range(0..span);
        let mut thread: Vec<usize> = Vec::new();
        let mut pending: Vec<Pending> = Vec::new();
        let mut organic_left = organic;
        while organic_left > 0 || !pending.is_empty() {
            ts += self.rng.random_range(1..=MAX_GAP_SECONDS);
            let due = pending.iter().position(|p| p.remaining == 0);
            let idx = match due.or(if organic_left == 0 { Some(0) } else { None }) {
                Some(k) => {
                    let p = pending.remove(k);
                    let parent = if p.indirect {
                        let others: Vec<usize> = thread.iter().copied().filter(|&j| j != p.challenge).collect();
                        *others.choose(&mut self.rng).expect("a challenge always has a parent")
                    } else {
                        p.challenge
                    };
                    let repair_cue = if self.rng.random_bool(self.cfg.p_repair) {
                        let list = self.repair_cues.clone();
                        Some(self.pick(&list))
                    } else {
                        None
                    };
                    let hedge_cue = self.maybe_hedge();
                    self.push(Draft {
                        post,
                        parent: Some(parent),
                        author: p.author,
                        timestamp: ts,
                        depth: self.drafts[parent].depth + 1,
                        challenge_cue: None,
                        repair_cue,
                        hedge_cue,
                        words: 0,
                        body: String::new(),
                    })
                }
                None => {
                    organic_left -= 1;
                    for p in &mut pending {
                        p.remaining -= 1;
                    }
                    self.organic(post, ts, &thread, &mut pending)
                }
            };
            thread.push(idx);
        }
    }

    fn organic(&mut self, post: usize, ts: i64, thread: &[usize], pending: &mut Vec<Pending>) -> usize {
        let mut author = self.author();
        let parent = if !thread.is_empty() && self.rng.random_bool(self.cfg.p_nest) {
            thread.choose(&mut self.rng).copied()
        } else {
            None
        };
        let mut challenge_cue = None;
        if let Some(p) = parent {
            if self.rng.random_bool(self.cfg.p_challenge) {
                let target = self.drafts[p].author;
                for _ in 0..10 {
                    if author != target {
                        break;
                    }
                    author = self.author();
                }
                if author != target {
                    let list = self.challenge_cues.clone();
                    challenge_cue = Some(self.pick(&list));
                }
            }
        }
        let hedge_cue = self.maybe_hedge();
        let idx = self.push(Draft {
            post,
            parent,
            author,
            timestamp: ts,
            depth: parent.map_or(0, |p| self.drafts[p].depth + 1),
            challenge_cue,
            repair_cue: None,
            hedge_cue,
            words: 0,
            body: String::new(),
        });
        if challenge_cue.is_some() && self.rng.random_bool(self.cfg.p_followup) {
            let remaining = self.rng.random_range(0..=self.cfg.max_response_lag);
            let indirect = self.rng.random_bool(self.cfg.p_indirect);
            pending.push(Pending {
                remaining,
                challenge: idx,
                author: self.drafts[parent.expect("challenges are nested")].author,
                indirect,
            });
        }
        idx
    }
}

fn comment_id(i: usize) -> String {
    format!("c{i:07}")
}

fn post_id(i: usize) -> String {
    format!("p{i:05}")
}

fn author_id(i: usize) -> String {
    format!("u{i:04}")
}

fn community_id(i: usize) -> String {
    format!("forum{i:02}")
}

/// Builds a corpus and its ground truth. Deterministic per config.
pub fn generate(config: &SynthConfig) -> Result<(Corpus, GroundTruth)> {
    config.validate()?;
    let mut g = Generator {
        cfg: config,
        rng: labelled_rng(config.seed, "synth"),
        zipf: Zipf::new(config.n_authors as f64, config.author_skew)
            .map_err(|e| Error::Config(format!("author distribution: {e}")))?,
        challenge_cues: injectable_cues(CueCategory::Challenge),
        repair_cues: injectable_cues(CueCategory::Repair),
        hedge_cues: injectable_cues(CueCategory::Hedging),
        drafts: Vec::new(),
    };
    let mut posts = Vec::with_capacity(config.n_posts);
    for p in 0..config.n_posts {
        let start = g.drafts.len();
        g.post(p);
        let author = g.author();
        let first_ts = g.drafts.get(start).map_or(BASE_TIMESTAMP, |d| d.timestamp);
        posts.push(Post {
            post_id: post_id(p),
            community_id: community_id(p % config.n_communities),
            author_id: author_id(author),
            timestamp: first_ts - 1,
            body: Some(WORD_POOL[p % WORD_POOL.len()].to_string()),
            stub: false,
        });
    }
    let drafts = g.drafts;
    let comments = drafts
        .iter()
        .enumerate()
        .map(|(i, d)| Comment {
            comment_id: comment_id(i),
            post_id: post_id(d.post),
            parent_id: d.parent.map(comment_id),
            author_id: author_id(d.author),
            timestamp: d.timestamp,
            body: d.body.clone(),
            community_id: community_id(d.post % config.n_communities),
            platform: config.platform,
        })
        .collect();
    let corpus = Corpus::new(config.platform, posts, comments)?;
    let truth = GroundTruth::derive(config, &drafts);
    Ok((corpus, truth))
}

/// Writes the corpus as JSONL and the ground truth as pretty JSON.
pub fn write_outputs(corpus: &Corpus, truth: &GroundTruth, corpus_out: impl Write, truth_out: impl Write) -> Result<()> {
    corpus
        .write_jsonl(corpus_out)
        .map_err(|e| Error::io("<synthetic corpus>", e))?;
    serde_json::to_writer_pretty(truth_out, truth)?;
    Ok(())
}

/// Per-variant cue flags, indexed `[full, strict]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VariantFlags {
    pub full: bool,
    pub strict: bool,
}

impl VariantFlags {
    fn of(cue: Option<&str>, category: CueCategory) -> Self {
        let f = |v| cue.is_some_and(|c| fires_raw(c, category, v));
        VariantFlags {
            full: f(LexiconVariant::Full),
            strict: f(LexiconVariant::Strict),
        }
    }

    pub fn get(&self, variant: LexiconVariant) -> bool {
        match variant {
            LexiconVariant::Full => self.full,
            LexiconVariant::Strict => self.strict,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SubtreeTruth {
    pub orig_return: bool,
    pub size: usize,
    pub depth: usize,
    pub repair_cue: VariantFlags,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommentTruth {
    pub comment_id: String,
    pub post_id: String,
    pub community_id: String,
    pub parent_id: Option<String>,
    pub author_id: String,
    pub timestamp: i64,
    pub depth: usize,
    pub challenge: VariantFlags,
    pub repair: VariantFlags,
    pub hedge: bool,
    pub words: u64,
    /// Present for nested comments.
    pub subtree: Option<SubtreeTruth>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeTruth {
    pub challenge: String,
    pub challenged: String,
    pub challenged_author: String,
    pub community_id: String,
    pub followup: bool,
    pub any_reply: bool,
    /// Keyed by window label.
    pub repairs: BTreeMap<String, bool>,
    /// Eligible locally matched controls.
    pub matched_candidates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorTruth {
    pub event: i64,
    pub tallies: BTreeMap<ShiftMetric, Tally>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommunityTruth {
    pub comments: usize,
    pub nested: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SynthConfig,
    pub comments: Vec<CommentTruth>,
    pub communities: BTreeMap<String, CommunityTruth>,
    /// Episodes in `(post, timestamp, id)` order for each lexicon variant.
    pub episodes: BTreeMap<LexiconVariant, Vec<EpisodeTruth>>,
    /// Challenged authors per community, from full-lexicon episodes.
    pub authors: BTreeMap<String, BTreeMap<String, AuthorTruth>>,
}

/// Windows covered by the oracle.
pub fn oracle_windows() -> Vec<RepairWindow> {
    let mut w = RepairWindow::standard_set();
    w.push(RepairWindow::Hours {
        hours: 24.0,
        scope: TimeScope::Corpus,
    });
    w
}

impl GroundTruth {
    fn derive(cfg: &SynthConfig, drafts: &[Draft]) -> Self {
        let n = drafts.len();
        let community = |d: &Draft| community_id(d.post % cfg.n_communities);
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut by_post: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let mut by_author: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, d) in drafts.iter().enumerate() {
            if let Some(p) = d.parent {
                children[p].push(i);
            }
            by_post.entry(d.post).or_default().push(i);
            by_author.entry(d.author).or_default().push(i);
        }
        let challenge: Vec<VariantFlags> = drafts
            .iter()
            .map(|d| VariantFlags::of(d.challenge_cue, CueCategory::Challenge))
            .collect();
        let repair: Vec<VariantFlags> = drafts
            .iter()
            .map(|d| VariantFlags::of(d.repair_cue, CueCategory::Repair))
            .collect();

        // every comment pushes its facts up its ancestor chain
        let mut subtree: Vec<SubtreeTruth> = vec![SubtreeTruth::default(); n];
        for (j, d) in drafts.iter().enumerate() {
            let mut a = d.parent;
            let mut dist = 1;
            while let Some(k) = a {
                let s = &mut subtree[k];
                s.size += 1;
                s.depth = s.depth.max(dist);
                if drafts[k].parent.is_some_and(|pk| drafts[pk].author == d.author) {
                    s.orig_return = true;
                }
                s.repair_cue.full |= repair[j].full;
                s.repair_cue.strict |= repair[j].strict;
                a = drafts[k].parent;
                dist += 1;
            }
        }
        let is_descendant = |j: usize, of: usize| {
            let mut a = drafts[j].parent;
            while let Some(k) = a {
                if k == of {
                    return true;
                }
                a = drafts[k].parent;
            }
            false
        };

        let comments: Vec<CommentTruth> = drafts
            .iter()
            .enumerate()
            .map(|(i, d)| CommentTruth {
                comment_id: comment_id(i),
                post_id: post_id(d.post),
                community_id: community(d),
                parent_id: d.parent.map(comment_id),
                author_id: author_id(d.author),
                timestamp: d.timestamp,
                depth: d.depth,
                challenge: challenge[i],
                repair: repair[i],
                hedge: d.hedge_cue.is_some(),
                words: d.words,
                subtree: d.parent.map(|_| subtree[i].clone()),
            })
            .collect();

        let mut communities: BTreeMap<String, CommunityTruth> = BTreeMap::new();
        for d in drafts {
            let e = communities.entry(community(d)).or_insert(CommunityTruth { comments: 0, nested: 0 });
            e.comments += 1;
            e.nested += d.parent.is_some() as usize;
        }

        let key = |i: usize| (drafts[i].timestamp, comment_id(i));
        let windows = oracle_windows();
        let mut episodes = BTreeMap::new();
        for variant in VARIANTS {
            let mut list = Vec::new();
            for (&_post, thread) in &by_post {
                for (pos, &c) in thread.iter().enumerate() {
                    let Some(p) = drafts[c].parent else { continue };
                    if !challenge[c].get(variant) || drafts[c].author == drafts[p].author {
                        continue;
                    }
                    let target = drafts[p].author;
                    let fires = |j: usize| drafts[j].author == target && repair[j].get(variant);
                    let after = &thread[pos + 1..];
                    let mut repairs = BTreeMap::new();
                    for w in &windows {
                        let hit = match *w {
                            RepairWindow::Direct => children[c].iter().any(|&j| fires(j)),
                            RepairWindow::NextComments { k } => after.iter().take(k).any(|&j| fires(j)),
                            RepairWindow::Hours { hours, scope } => {
                                let within = |j: usize| {
                                    key(j) > key(c)
                                        && (drafts[j].timestamp - drafts[c].timestamp) as f64 <= hours * 3600.0
                                };
                                match scope {
                                    TimeScope::SamePost => after.iter().any(|&j| within(j) && fires(j)),
                                    TimeScope::Corpus => by_author[&target].iter().any(|&j| within(j) && fires(j)),
                                }
                            }
                        };
                        repairs.insert(w.label(), hit);
                    }
                    let depth = drafts[c].depth as i64;
                    let matched_candidates = thread
                        .iter()
                        .copied()
                        .filter(|&j| {
                            j != c
                                && drafts[j].parent.is_some()
                                && !challenge[j].full
                                && (drafts[j].depth as i64 - depth).abs() <= 1
                                && !is_descendant(j, c)
                        })
                        .map(comment_id)
                        .collect();
                    list.push(EpisodeTruth {
                        challenge: comment_id(c),
                        challenged: comment_id(p),
                        challenged_author: author_id(target),
                        community_id: community(&drafts[c]),
                        followup: children[c].iter().any(|&j| drafts[j].author == target),
                        any_reply: !children[c].is_empty(),
                        repairs,
                        matched_candidates,
                    });
                }
            }
            episodes.insert(variant, list);
        }

        let mut authors: BTreeMap<String, BTreeMap<String, AuthorTruth>> = BTreeMap::new();
        for ep in &episodes[&LexiconVariant::Full] {
            let ts = drafts[ep_index(&ep.challenge)].timestamp;
            let entry = authors
                .entry(ep.community_id.clone())
                .or_default()
                .entry(ep.challenged_author.clone())
                .or_insert(AuthorTruth {
                    event: ts,
                    tallies: BTreeMap::new(),
                });
            entry.event = entry.event.min(ts);
        }
        let mut by_member: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
        for (i, d) in drafts.iter().enumerate() {
            by_member.entry((community(d), author_id(d.author))).or_default().push(i);
        }
        for (comm, members) in &mut authors {
            for (author, truth) in members.iter_mut() {
                let mut timeline = by_member.remove(&(comm.clone(), author.clone())).unwrap_or_default();
                timeline.sort_by_key(|&i| key(i));
                for metric in ShiftMetric::ALL {
                    let value = |i: usize| match metric {
                        ShiftMetric::Hedging => drafts[i].hedge_cue.is_some() as u64,
                        ShiftMetric::ChallengeCue => challenge[i].full as u64,
                        ShiftMetric::Length => drafts[i].words,
                    };
                    let mut t = Tally::default();
                    for &i in &timeline {
                        if drafts[i].timestamp < truth.event {
                            t.pre_n += 1;
                            t.pre_sum += value(i);
                        } else {
                            t.post_n += 1;
                            t.post_sum += value(i);
                        }
                    }
                    truth.tallies.insert(metric, t);
                }
            }
        }

        GroundTruth {
            config: cfg.clone(),
            comments,
            communities,
            episodes,
            authors,
        }
    }

    pub fn episodes(&self, variant: LexiconVariant) -> &[EpisodeTruth] {
        &self.episodes[&variant]
    }

    pub fn nested(&self) -> usize {
        self.communities.values().map(|c| c.nested).sum()
    }

    pub fn followups(&self, variant: LexiconVariant) -> usize {
        self.episodes(variant).iter().filter(|e| e.followup).count()
    }

    pub fn repairs(&self, variant: LexiconVariant, window: &RepairWindow) -> usize {
        let label = window.label();
        self.episodes(variant).iter().filter(|e| e.repairs[&label]).count()
    }
}

fn ep_index(id: &str) -> usize {
    id[1..].parse().expect("synthetic comment ids are numeric")
}

/// What the analysis modules report on a corpus, in the shape the oracle
/// checks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyzerOutputs {
    /// `(nested, comments)` per community.
    pub nesting: BTreeMap<String, (usize, usize)>,
    pub episodes: BTreeMap<LexiconVariant, Vec<EpisodeRecord>>,
    /// Subtree metrics of episode anchors and both baseline kinds.
    pub subtrees: Vec<SubtreeMetrics>,
    /// Sampled baseline anchors per community.
    pub sampled: BTreeMap<String, Vec<String>>,
    /// `(challenge, matched anchor)` for full-lexicon episodes.
    pub matched: Vec<(String, Option<String>)>,
    pub tallies: BTreeMap<String, BTreeMap<String, BTreeMap<ShiftMetric, Tally>>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EpisodeRecord {
    pub challenge: String,
    pub challenged_author: String,
    pub followup: bool,
    pub any_reply: bool,
    pub repairs: BTreeMap<String, bool>,
}

impl AnalyzerOutputs {
    /// Runs the analysis modules over `corpus`.
    pub fn collect(corpus: &Corpus, lexicons: &LexiconSet, seed: u64) -> Result<Self> {
        let nesting = select_communities(corpus, SelectionThresholds::default())?
            .into_iter()
            .map(|s| (s.community_id, (s.nested, s.comments)))
            .collect();
        let windows = oracle_windows();
        let mut episodes = BTreeMap::new();
        let mut full_episodes = Vec::new();
        for variant in VARIANTS {
            let chal = CueMask::compute(corpus, lexicons.challenge(variant));
            let rep = CueMask::compute(corpus, lexicons.repair(variant));
            let eps = extract_challenges(corpus, &chal);
            let outcomes = evaluate_episodes(&eps, corpus, &windows, &rep)?;
            episodes.insert(
                variant,
                outcomes
                    .into_iter()
                    .map(|o| EpisodeRecord {
                        challenge: o.episode.challenge,
                        challenged_author: o.episode.challenged_author,
                        followup: o.followup,
                        any_reply: o.any_reply,
                        repairs: o.repairs,
                    })
                    .collect(),
            );
            if variant == LexiconVariant::Full {
                full_episodes = eps;
            }
        }

        let chal = CueMask::compute(corpus, lexicons.challenge(LexiconVariant::Full));
        let rep = CueMask::compute(corpus, lexicons.repair(LexiconVariant::Full));
        let hedge = CueMask::compute(corpus, lexicons.hedging(LexiconVariant::Full));
        let mut subtrees = episode_metrics(&full_episodes, corpus, &rep)?;
        let mut sampled = BTreeMap::new();
        for (comm, eps) in crate::episodes::by_community(&full_episodes) {
            let s = sample_nonchallenge_anchors(corpus, comm, eps.len(), &chal, seed)?;
            for a in &s.anchors {
                subtrees.push(crate::correction::subtree_metrics(&a.anchor, corpus, &rep)?);
            }
            sampled.insert(comm.to_string(), s.anchors.into_iter().map(|a| a.anchor).collect());
        }
        let mut matched = Vec::with_capacity(full_episodes.len());
        for ep in &full_episodes {
            let m = matched_nonchallenge_anchor(ep, corpus, &chal, seed)?;
            if let Some(a) = &m {
                subtrees.push(crate::correction::subtree_metrics(&a.anchor, corpus, &rep)?);
            }
            matched.push((ep.challenge.clone(), m.map(|a| a.anchor)));
        }

        let mut tallies = BTreeMap::new();
        for comm in corpus.communities().keys() {
            let timelines = build_timelines(corpus, comm, &hedge, &chal)?;
            let events = first_challenge_event(&full_episodes, comm);
            if events.is_empty() {
                continue;
            }
            let per_metric = ShiftMetric::ALL
                .into_iter()
                .map(|m| (m, challenged_tallies(&timelines, &events, m)))
                .collect::<BTreeMap<_, _>>();
            let mut by_author: BTreeMap<String, BTreeMap<ShiftMetric, Tally>> = BTreeMap::new();
            for (m, rows) in per_metric {
                for (a, t) in rows {
                    by_author.entry(a).or_default().insert(m, t);
                }
            }
            tallies.insert(comm.clone(), by_author);
        }

        Ok(AnalyzerOutputs {
            nesting,
            episodes,
            subtrees,
            sampled,
            matched,
            tallies,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Divergence {
    pub metric: String,
    pub item: String,
    pub expected: String,
    pub actual: String,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} diverges at {}: expected {}, got {}",
            self.metric, self.item, self.expected, self.actual
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checks: usize,
    pub first_divergence: Option<Divergence>,
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.first_divergence {
            None => write!(f, "pass ({} checks)", self.checks),
            Some(d) => write!(f, "FAIL after {} checks: {d}", self.checks),
        }
    }
}

struct Checker {
    checks: usize,
    first: Option<Divergence>,
}

impl Checker {
    fn eq<T: PartialEq + fmt::Debug>(&mut self, metric: &str, item: &str, expected: T, actual: T) -> bool {
        if self.first.is_some() {
            return false;
        }
        self.checks += 1;
        if expected != actual {
            self.first = Some(Divergence {
                metric: metric.to_string(),
                item: item.to_string(),
                expected: format!("{expected:?}"),
                actual: format!("{actual:?}"),
            });
            return false;
        }
        true
    }

    fn done(&self) -> bool {
        self.first.is_some()
    }
}

/// First difference between two id lists, as `(item, expected, actual)`.
fn id_list_divergence(expected: &[&str], actual: &[&str]) -> Option<(String, String, String)> {
    let e: BTreeSet<&str> = expected.iter().copied().collect();
    let a: BTreeSet<&str> = actual.iter().copied().collect();
    if let Some(x) = e.symmetric_difference(&a).next() {
        return Some((
            x.to_string(),
            if e.contains(x) { "present" } else { "absent" }.into(),
            if a.contains(x) { "present" } else { "absent" }.into(),
        ));
    }
    expected
        .iter()
        .zip(actual)
        .position(|(x, y)| x != y)
        .map(|k| (format!("position {k}"), expected[k].to_string(), actual[k].to_string()))
}

/// Compares analyzer outputs against the ground truth, exactly.
pub fn verify(corpus: &Corpus, truth: &GroundTruth, outputs: &AnalyzerOutputs) -> VerifyReport {
    let mut c = Checker { checks: 0, first: None };
    run_checks(&mut c, corpus, truth, outputs);
    VerifyReport {
        passed: c.first.is_none(),
        checks: c.checks,
        first_divergence: c.first,
    }
}

fn run_checks(c: &mut Checker, corpus: &Corpus, truth: &GroundTruth, out: &AnalyzerOutputs) {
    if !c.eq("comment count", "corpus", truth.comments.len(), corpus.len()) {
        return;
    }
    for t in &truth.comments {
        let Some(i) = corpus.index_of(&t.comment_id) else {
            c.eq("comment", &t.comment_id, "present", "absent");
            return;
        };
        let k = corpus.comment(i);
        c.eq("parent", &t.comment_id, t.parent_id.as_deref(), k.parent_id.as_deref());
        c.eq("author", &t.comment_id, t.author_id.as_str(), k.author_id.as_str());
        c.eq("timestamp", &t.comment_id, t.timestamp, k.timestamp);
        c.eq("depth", &t.comment_id, t.depth, corpus.depth_of(i));
        if c.done() {
            return;
        }
    }

    for (comm, t) in &truth.communities {
        c.eq("nesting", comm, Some(&(t.nested, t.comments)), out.nesting.get(comm));
    }
    if c.done() {
        return;
    }

    for variant in VARIANTS {
        let expected = truth.episodes(variant);
        let actual = out.episodes.get(&variant).map(Vec::as_slice).unwrap_or(&[]);
        let metric = format!("challenge episodes ({variant})");
        let e_ids: Vec<&str> = expected.iter().map(|e| e.challenge.as_str()).collect();
        let a_ids: Vec<&str> = actual.iter().map(|e| e.challenge.as_str()).collect();
        if let Some((item, exp, act)) = id_list_divergence(&e_ids, &a_ids) {
            c.eq(&metric, &item, exp, act);
            return;
        }
        c.checks += 1;
        for (e, a) in expected.iter().zip(actual) {
            c.eq(&format!("challenged author ({variant})"), &e.challenge, &e.challenged_author, &a.challenged_author);
            c.eq(&format!("followup ({variant})"), &e.challenge, e.followup, a.followup);
            c.eq(&format!("any reply ({variant})"), &e.challenge, e.any_reply, a.any_reply);
            for (label, &hit) in &e.repairs {
                c.eq(&format!("repair {label} ({variant})"), &e.challenge, Some(&hit), a.repairs.get(label));
            }
            if c.done() {
                return;
            }
        }
    }

    let by_id: BTreeMap<&str, &CommentTruth> = truth.comments.iter().map(|t| (t.comment_id.as_str(), t)).collect();
    for m in &out.subtrees {
        let Some(t) = by_id.get(m.anchor.as_str()).and_then(|t| t.subtree.as_ref()) else {
            c.eq("subtree anchor", &m.anchor, "nested comment", "not nested");
            return;
        };
        c.eq("subtree return", &m.anchor, t.orig_return, m.orig_return);
        c.eq("subtree size", &m.anchor, t.size, m.size);
        c.eq("subtree depth", &m.anchor, t.depth, m.depth);
        c.eq("subtree multi-turn", &m.anchor, t.depth >= 2, m.multi_turn);
        c.eq("subtree repair cue", &m.anchor, t.repair_cue.full, m.repair_cue_present);
        if c.done() {
            return;
        }
    }

    for (comm, anchors) in &out.sampled {
        let pool = truth
            .comments
            .iter()
            .filter(|t| t.community_id == *comm && t.parent_id.is_some() && !t.challenge.full)
            .count();
        let want = truth
            .episodes(LexiconVariant::Full)
            .iter()
            .filter(|e| e.community_id == *comm)
            .count()
            .min(pool);
        c.eq("sampled anchor count", comm, want, anchors.len());
        for a in anchors {
            let ok = by_id
                .get(a.as_str())
                .is_some_and(|t| t.community_id == *comm && t.parent_id.is_some() && !t.challenge.full);
            c.eq("sampled anchor eligibility", a, true, ok);
        }
        if c.done() {
            return;
        }
    }

    let full = truth.episodes(LexiconVariant::Full);
    c.eq("matched episode count", "corpus", full.len(), out.matched.len());
    for (e, (chal, anchor)) in full.iter().zip(&out.matched) {
        c.eq("matched episode", &e.challenge, e.challenge.as_str(), chal.as_str());
        match anchor {
            None => {
                c.eq("matched control", &e.challenge, 0, e.matched_candidates.len());
            }
            Some(a) => {
                c.eq("matched control", &e.challenge, true, e.matched_candidates.contains(a));
            }
        }
        if c.done() {
            return;
        }
    }

    for (comm, authors) in &truth.authors {
        let got = out.tallies.get(comm);
        for (author, t) in authors {
            let item = format!("{comm}/{author}");
            let got = got.and_then(|g| g.get(author));
            for (metric, tally) in &t.tallies {
                c.eq(&format!("author tally {metric}"), &item, Some(tally), got.and_then(|g| g.get(metric)));
            }
            if c.done() {
                return;
            }
        }
        c.eq(
            "challenged authors",
            comm,
            authors.len(),
            got.map_or(0, |g| g.len()),
        );
    }
    c.eq("communities with challenged authors", "corpus", truth.authors.len(), out.tallies.len());
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::nesting_rate;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            n_posts: 40,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn pool_is_cue_free() {
        check_word_pool().unwrap();
    }

    #[test]
    fn injectable_sets_exclude_cross_category_cues() {
        let repair = injectable_cues(CueCategory::Repair);
        assert!(!repair.contains(&"i was wrong"));
        assert!(repair.contains(&"i agree"));
        assert_eq!(injectable_cues(CueCategory::Challenge).len(), CHALLENGE_CUES.len());
    }

    #[test]
    fn generation_is_reproducible() {
        let (a, ta) = generate(&small(3)).unwrap();
        let (b, tb) = generate(&small(3)).unwrap();
        assert_eq!(a.comments(), b.comments());
        assert_eq!(ta, tb);
        let (c, _) = generate(&small(4)).unwrap();
        assert_ne!(a.comments(), c.comments());
    }

    #[test]
    fn timestamps_increase_within_posts() {
        let (corpus, _) = generate(&small(5)).unwrap();
        for p in 0..corpus.posts().len() {
            let ts: Vec<i64> = corpus.post_comments(p).iter().map(|&i| corpus.comment(i).timestamp).collect();
            assert!(ts.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn no_nesting_means_zero_rate() {
        let cfg = SynthConfig { p_nest: 0.0, ..small(1) };
        let (corpus, truth) = generate(&cfg).unwrap();
        for comm in corpus.communities().keys() {
            assert_eq!(nesting_rate(&corpus, comm).unwrap(), 0.0);
        }
        assert!(truth.episodes(LexiconVariant::Full).is_empty());
    }

    #[test]
    fn saturated_repair() {
        let cfg = SynthConfig {
            p_challenge: 1.0,
            p_followup: 1.0,
            p_repair: 1.0,
            p_indirect: 0.0,
            ..small(2)
        };
        let (corpus, truth) = generate(&cfg).unwrap();
        let set = LexiconSet::builtin();
        let eps = extract_challenges(&corpus, set.challenge(LexiconVariant::Full));
        assert!(!eps.is_empty());
        let rates = crate::episodes::h2_rates(&eps, &corpus, &RepairWindow::Direct, set.repair(LexiconVariant::Full)).unwrap();
        assert_eq!(rates.repair_rate, Some(1.0));
        assert_eq!(truth.repairs(LexiconVariant::Full, &RepairWindow::Direct), eps.len());
    }

    #[test]
    fn oracle_agrees_on_the_reference_config() {
        let cfg = SynthConfig {
            n_posts: 200,
            p_nest: 0.6,
            p_challenge: 0.2,
            p_followup: 0.4,
            p_repair: 0.5,
            seed: 7,
            ..SynthConfig::default()
        };
        let (corpus, truth) = generate(&cfg).unwrap();
        let out = AnalyzerOutputs::collect(&corpus, &LexiconSet::builtin(), 7).unwrap();
        let report = verify(&corpus, &truth, &out);
        assert!(report.passed, "{report}");
    }

    #[test]
    fn mutated_body_is_named() {
        let (corpus, truth) = generate(&small(11)).unwrap();
        let set = LexiconSet::builtin();
        let mut comments = corpus.comments().to_vec();
        let victim = (0..comments.len())
            .find(|&i| {
                corpus.parent_of(i).is_some_and(|p| comments[p].author_id != comments[i].author_id)
                    && !set.challenge(LexiconVariant::Full).detect(&comments[i].body)
            })
            .unwrap();
        comments[victim].body.push_str(" citation");
        let victim_id = comments[victim].comment_id.clone();
        let mutated = Corpus::new(corpus.platform(), corpus.posts().to_vec(), comments).unwrap();
        let out = AnalyzerOutputs::collect(&mutated, &set, 1).unwrap();
        let report = verify(&mutated, &truth, &out);
        assert!(!report.passed);
        let d = report.first_divergence.unwrap();
        assert_eq!(d.item, victim_id, "{d}");
    }

    #[test]
    fn bad_probability_is_rejected() {
        let cfg = SynthConfig { p_nest: 1.5, ..small(0) };
        assert!(matches!(generate(&cfg), Err(Error::Config(_))));
    }
}
