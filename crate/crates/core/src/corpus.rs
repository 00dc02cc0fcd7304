//! Comment records, corpus ingestion and reply-tree construction.
//!
//! A [`Corpus`] holds the comments of one platform together with the indices
//! every analysis needs: resolved parents, chronological child lists, absolute
//! thread depth, per-post membership and per-author timelines. It is immutable
//! once built and can be shared freely across threads.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Datelike, NaiveDate, NaiveDateTime, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Platform {
    AgentForum,
    HumanForum,
}

impl Platform {
    pub fn as_str(self) -> &'static str {
        match self {
            Platform::AgentForum => "agent_forum",
            Platform::HumanForum => "human_forum",
        }
    }
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Platform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "agent_forum" | "agent" => Ok(Platform::AgentForum),
            "human_forum" | "human" => Ok(Platform::HumanForum),
            other => Err(Error::Config(format!("unknown platform `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comment {
    pub comment_id: String,
    pub post_id: String,
    /// Absent means a top-level reply to the post.
    pub parent_id: Option<String>,
    pub author_id: String,
    /// UTC seconds.
    pub timestamp: i64,
    pub body: String,
    pub community_id: String,
    pub platform: Platform,
}

impl Comment {
    /// Sort key used for every chronological ordering in the crate.
    pub fn chrono_key(&self) -> (i64, &str) {
        (self.timestamp, self.comment_id.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub post_id: String,
    pub community_id: String,
    pub author_id: String,
    pub timestamp: i64,
    pub body: Option<String>,
    /// True when the post was synthesized from its comments because no post
    /// record was supplied.
    #[serde(default)]
    pub stub: bool,
}

/// Why a comment with a parent identifier is not attached to its parent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OrphanReason {
    /// The parent identifier names no loaded comment.
    Dangling,
    /// The parent exists but belongs to another post.
    CrossPost,
    /// Following parents leads back to this comment; the edge was cut here.
    Cycle,
}

/// Indices of the posts and comments of one community.
#[derive(Debug, Clone, Default)]
pub struct CommunityIndex {
    pub posts: Vec<usize>,
    pub comments: Vec<usize>,
}

/// Reply tree of one post, keyed by comment identifiers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ThreadTree {
    pub post_id: String,
    /// Comments without a resolved parent, chronological. Orphans are included.
    pub roots: Vec<String>,
    /// Chronological children of every comment that has any.
    pub children: BTreeMap<String, Vec<String>>,
    /// Absolute depth; top-level comments sit at depth 0.
    pub depth: BTreeMap<String, usize>,
    pub orphans: Vec<String>,
    /// Comments whose parent edge was cut to break a reply cycle.
    pub cycle_breaks: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    platform: Platform,
    comments: Vec<Comment>,
    posts: Vec<Post>,
    comment_ix: HashMap<String, usize>,
    post_ix: HashMap<String, usize>,
    communities: BTreeMap<String, CommunityIndex>,
    parent: Vec<Option<usize>>,
    orphan: Vec<Option<OrphanReason>>,
    depth: Vec<usize>,
    children: Vec<Vec<usize>>,
    post_of: Vec<usize>,
    post_comments: Vec<Vec<usize>>,
    author_timelines: BTreeMap<String, Vec<usize>>,
    cap_hits: BTreeMap<String, bool>,
}

impl Corpus {
    /// Builds a corpus from raw records.
    ///
    /// Comments referencing a post that is not in `posts` get a stub post whose
    /// timestamp is the earliest of its comments. Comment order is preserved.
    pub fn new(platform: Platform, posts: Vec<Post>, comments: Vec<Comment>) -> Result<Self> {
        let mut comment_ix = HashMap::with_capacity(comments.len());
        for (i, c) in comments.iter().enumerate() {
            if c.comment_id.is_empty() {
                return Err(Error::Data(format!("comment at position {i} has an empty id")));
            }
            if c.parent_id.as_deref() == Some(c.comment_id.as_str()) {
                return Err(Error::Data(format!(
                    "comment `{}` names itself as parent",
                    c.comment_id
                )));
            }
            if c.timestamp < 0 {
                return Err(Error::Data(format!(
                    "comment `{}` has a negative timestamp",
                    c.comment_id
                )));
            }
            if comment_ix.insert(c.comment_id.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate comment id `{}`", c.comment_id)));
            }
        }

        let mut posts = posts;
        let mut post_ix = HashMap::with_capacity(posts.len());
        for (i, p) in posts.iter().enumerate() {
            if post_ix.insert(p.post_id.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate post id `{}`", p.post_id)));
            }
        }
        for c in &comments {
            match post_ix.get(&c.post_id) {
                Some(&pi) => {
                    let p: &mut Post = &mut posts[pi];
                    if p.stub && c.timestamp < p.timestamp {
                        p.timestamp = c.timestamp;
                    }
                }
                None => {
                    post_ix.insert(c.post_id.clone(), posts.len());
                    posts.push(Post {
                        post_id: c.post_id.clone(),
                        community_id: c.community_id.clone(),
                        author_id: String::new(),
                        timestamp: c.timestamp,
                        body: None,
                        stub: true,
                    });
                }
            }
        }

        let n = comments.len();
        let post_of: Vec<usize> = comments.iter().map(|c| post_ix[&c.post_id]).collect();

        let mut parent = vec![None; n];
        let mut orphan = vec![None; n];
        for (i, c) in comments.iter().enumerate() {
            if let Some(pid) = &c.parent_id {
                match comment_ix.get(pid) {
                    Some(&p) if post_of[p] == post_of[i] => parent[i] = Some(p),
                    Some(_) => orphan[i] = Some(OrphanReason::CrossPost),
                    None => orphan[i] = Some(OrphanReason::Dangling),
                }
            }
        }

        let mut canonical: Vec<usize> = (0..n).collect();
        canonical.par_sort_unstable_by(|&a, &b| comments[a].chrono_key().cmp(&comments[b].chrono_key()));

        break_cycles(&canonical, &mut parent, &mut orphan);

        let mut children = vec![Vec::new(); n];
        let mut post_comments = vec![Vec::new(); posts.len()];
        for &i in &canonical {
            if let Some(p) = parent[i] {
                children[p].push(i);
            }
            post_comments[post_of[i]].push(i);
        }

        let mut depth = vec![0usize; n];
        for &i in &canonical {
            if parent[i].is_none() {
                let mut stack = vec![(i, 0usize)];
                while let Some((c, d)) = stack.pop() {
                    depth[c] = d;
                    stack.extend(children[c].iter().map(|&k| (k, d + 1)));
                }
            }
        }

        let mut communities: BTreeMap<String, CommunityIndex> = BTreeMap::new();
        for (pi, p) in posts.iter().enumerate() {
            communities.entry(p.community_id.clone()).or_default().posts.push(pi);
        }
        for (i, c) in comments.iter().enumerate() {
            communities.entry(c.community_id.clone()).or_default().comments.push(i);
        }

        let mut author_timelines: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for &i in &canonical {
            author_timelines
                .entry(comments[i].author_id.clone())
                .or_default()
                .push(i);
        }

        Ok(Corpus {
            platform,
            comments,
            posts,
            comment_ix,
            post_ix,
            communities,
            parent,
            orphan,
            depth,
            children,
            post_of,
            post_comments,
            author_timelines,
            cap_hits: BTreeMap::new(),
        })
    }

    pub fn platform(&self) -> Platform {
        self.platform
    }

    /// All comments in load order.
    pub fn comments(&self) -> &[Comment] {
        &self.comments
    }

    pub fn comment(&self, idx: usize) -> &Comment {
        &self.comments[idx]
    }

    pub fn posts(&self) -> &[Post] {
        &self.posts
    }

    pub fn len(&self) -> usize {
        self.comments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.comments.is_empty()
    }

    pub fn index_of(&self, comment_id: &str) -> Option<usize> {
        self.comment_ix.get(comment_id).copied()
    }

    pub fn post_index_of(&self, post_id: &str) -> Option<usize> {
        self.post_ix.get(post_id).copied()
    }

    /// Resolved parent comment, `None` for top-level comments and orphans.
    pub fn parent_of(&self, idx: usize) -> Option<usize> {
        self.parent[idx]
    }

    pub fn orphan_reason(&self, idx: usize) -> Option<OrphanReason> {
        self.orphan[idx]
    }

    pub fn children_of(&self, idx: usize) -> &[usize] {
        &self.children[idx]
    }

    pub fn depth_of(&self, idx: usize) -> usize {
        self.depth[idx]
    }

    /// Post index the comment belongs to.
    pub fn post_of(&self, idx: usize) -> usize {
        self.post_of[idx]
    }

    /// Comments of a post in chronological order.
    pub fn post_comments(&self, post_idx: usize) -> &[usize] {
        &self.post_comments[post_idx]
    }

    pub fn communities(&self) -> &BTreeMap<String, CommunityIndex> {
        &self.communities
    }

    pub fn community(&self, community_id: &str) -> Result<&CommunityIndex> {
        self.communities
            .get(community_id)
            .ok_or_else(|| Error::UnknownCommunity(community_id.to_string()))
    }

    /// Chronological comments of an author across the whole corpus.
    pub fn author_timeline(&self, author_id: &str) -> &[usize] {
        self.author_timelines
            .get(author_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn author_timelines(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.author_timelines
    }

    /// Whether ingestion dropped comments of this community at the cap.
    pub fn cap_hits(&self) -> &BTreeMap<String, bool> {
        &self.cap_hits
    }

    pub fn orphan_count(&self) -> usize {
        self.orphan.iter().filter(|o| o.is_some()).count()
    }

    /// True when the comment's parent is a resolvable comment.
    pub fn is_nested_resolved(&self, idx: usize) -> bool {
        self.parent[idx].is_some()
    }

    /// Reply tree of one post.
    pub fn build_threads(&self, post_id: &str) -> Result<ThreadTree> {
        let pi = self
            .post_index_of(post_id)
            .ok_or_else(|| Error::UnknownPost(post_id.to_string()))?;
        let members = &self.post_comments[pi];
        let id = |i: usize| self.comments[i].comment_id.clone();
        let mut tree = ThreadTree {
            post_id: post_id.to_string(),
            roots: Vec::new(),
            children: BTreeMap::new(),
            depth: BTreeMap::new(),
            orphans: Vec::new(),
            cycle_breaks: Vec::new(),
        };
        for &i in members {
            if self.parent[i].is_none() {
                tree.roots.push(id(i));
            }
            if !self.children[i].is_empty() {
                tree.children
                    .insert(id(i), self.children[i].iter().map(|&k| id(k)).collect());
            }
            tree.depth.insert(id(i), self.depth[i]);
            match self.orphan[i] {
                Some(OrphanReason::Cycle) => {
                    tree.orphans.push(id(i));
                    tree.cycle_breaks.push(id(i));
                }
                Some(_) => tree.orphans.push(id(i)),
                None => {}
            }
        }
        Ok(tree)
    }

    /// Writes comments in load order using the ingestion JSONL schema.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for c in &self.comments {
            let rec = RecordOut {
                comment_id: &c.comment_id,
                post_id: &c.post_id,
                parent_id: c.parent_id.as_deref(),
                author_id: &c.author_id,
                timestamp: c.timestamp,
                body: &c.body,
                community: &c.community_id,
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    fn with_cap_hits(mut self, cap_hits: BTreeMap<String, bool>) -> Self {
        self.cap_hits = cap_hits;
        self
    }
}

/// Cuts one parent edge per reply cycle. Walks start in canonical order, and
/// the edge cut is the one that closes the loop on the current walk.
fn break_cycles(canonical: &[usize], parent: &mut [Option<usize>], orphan: &mut [Option<OrphanReason>]) {
    const UNSEEN: u8 = 0;
    const ACTIVE: u8 = 1;
    const DONE: u8 = 2;
    let mut state = vec![UNSEEN; parent.len()];
    let mut path = Vec::new();
    for &start in canonical {
        if state[start] != UNSEEN {
            continue;
        }
        path.clear();
        let mut cur = start;
        loop {
            match state[cur] {
                DONE => break,
                ACTIVE => {
                    let last = *path.last().expect("active node implies a non-empty walk");
                    parent[last] = None;
                    orphan[last] = Some(OrphanReason::Cycle);
                    break;
                }
                _ => {}
            }
            state[cur] = ACTIVE;
            path.push(cur);
            match parent[cur] {
                Some(p) => cur = p,
                None => break,
            }
        }
        for &p in &path {
            state[p] = DONE;
        }
    }
}

#[derive(Serialize)]
struct RecordOut<'a> {
    comment_id: &'a str,
    post_id: &'a str,
    parent_id: Option<&'a str>,
    author_id: &'a str,
    timestamp: i64,
    body: &'a str,
    community: &'a str,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFormat {
    Jsonl,
    Csv,
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" | "json" => Ok(InputFormat::Jsonl),
            "csv" => Ok(InputFormat::Csv),
            other => Err(Error::Config(format!("unknown input format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub format: InputFormat,
    pub platform: Platform,
    /// Per-community comment cap applied in file order after year filtering.
    pub max_comments_cap: Option<usize>,
    /// Inclusive UTC calendar-year range.
    pub year_range: Option<(i32, i32)>,
}

impl IngestOptions {
    pub fn new(format: InputFormat, platform: Platform) -> Self {
        IngestOptions {
            format,
            platform,
            max_comments_cap: None,
            year_range: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub loaded: usize,
    /// Malformed rows.
    pub skipped: usize,
    pub duplicates: usize,
    pub outside_year_range: usize,
    pub dropped_by_cap: usize,
    pub orphans: usize,
    pub cap_hit_per_community: BTreeMap<String, bool>,
    pub files: Vec<String>,
}

#[derive(Deserialize)]
struct RawRow {
    comment_id: Option<String>,
    post_id: Option<String>,
    parent_id: Option<String>,
    author_id: Option<String>,
    timestamp: Option<RawTimestamp>,
    body: Option<String>,
    #[serde(alias = "community_id")]
    community: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawTimestamp {
    Int(i64),
    Float(f64),
    Text(String),
}

/// Parses an epoch-seconds integer or an ISO-8601 timestamp.
pub fn parse_timestamp(raw: &str) -> Option<i64> {
    let raw = raw.trim();
    if let Ok(v) = raw.parse::<i64>() {
        return Some(v);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S%.f"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc().timestamp())
}

/// UTC calendar year of an epoch timestamp.
pub fn year_of(timestamp: i64) -> i32 {
    DateTime::<Utc>::from_timestamp(timestamp, 0)
        .map(|d| d.year())
        .unwrap_or(1970)
}

/// UTC calendar date of an epoch timestamp.
pub fn date_of(timestamp: i64) -> NaiveDate {
    DateTime::<Utc>::from_timestamp(timestamp, 0)
        .map(|d| d.date_naive())
        .unwrap_or_default()
}

impl RawRow {
    fn into_comment(self, platform: Platform) -> Option<Comment> {
        let non_empty = |s: Option<String>| s.filter(|s| !s.is_empty());
        let timestamp = match self.timestamp? {
            RawTimestamp::Int(v) => v,
            RawTimestamp::Float(v) if v.is_finite() && v.fract() == 0.0 => v as i64,
            RawTimestamp::Float(_) => return None,
            RawTimestamp::Text(s) => parse_timestamp(&s)?,
        };
        if timestamp < 0 {
            return None;
        }
        let comment_id = non_empty(self.comment_id)?;
        let parent_id = non_empty(self.parent_id);
        if parent_id.as_deref() == Some(comment_id.as_str()) {
            return None;
        }
        Some(Comment {
            comment_id,
            post_id: non_empty(self.post_id)?,
            parent_id,
            author_id: non_empty(self.author_id)?,
            timestamp,
            body: self.body.unwrap_or_default(),
            community_id: non_empty(self.community)?,
            platform,
        })
    }
}

/// Rows parsed from one file, in file order; `None` marks a malformed row.
fn read_file(path: &Path, options: &IngestOptions) -> Result<Vec<Option<Comment>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut rows = Vec::new();
    match options.format {
        InputFormat::Jsonl => {
            for line in reader.lines() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let row = serde_json::from_str::<RawRow>(&line)
                    .ok()
                    .and_then(|r| r.into_comment(options.platform));
                rows.push(row);
            }
        }
        InputFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
            let headers = rdr.headers()?.clone();
            for required in ["comment_id", "post_id", "parent_id", "author_id", "timestamp", "body"] {
                if !headers.iter().any(|h| h == required) {
                    return Err(Error::Schema {
                        path: path.to_path_buf(),
                        reason: format!("missing column `{required}`"),
                    });
                }
            }
            if !headers.iter().any(|h| h == "community" || h == "community_id") {
                return Err(Error::Schema {
                    path: path.to_path_buf(),
                    reason: "missing column `community`".into(),
                });
            }
            for record in rdr.records() {
                let row = record.ok().and_then(|r| {
                    let get = |name: &str| {
                        headers
                            .iter()
                            .position(|h| h == name)
                            .and_then(|i| r.get(i))
                            .map(str::to_string)
                    };
                    RawRow {
                        comment_id: get("comment_id"),
                        post_id: get("post_id"),
                        parent_id: get("parent_id"),
                        author_id: get("author_id"),
                        timestamp: get("timestamp").map(RawTimestamp::Text),
                        body: get("body"),
                        community: get("community").or_else(|| get("community_id")),
                    }
                    .into_comment(options.platform)
                });
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

fn input_files(path: &Path, format: InputFormat) -> Result<Vec<PathBuf>> {
    let meta = std::fs::metadata(path).map_err(|e| Error::io(path, e))?;
    if meta.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let ext = match format {
        InputFormat::Jsonl => ["jsonl", "json"].as_slice(),
        InputFormat::Csv => ["csv"].as_slice(),
    };
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| ext.contains(&e))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Loads a corpus from a file or from every matching file of a directory
/// (sorted by file name).
///
/// Malformed rows and repeated comment ids are skipped and counted. More
/// than half malformed rows is a fatal schema error. The year filter runs
/// before the per-community cap, and the cap keeps the first rows in file
/// order.
pub fn ingest(path: &Path, options: &IngestOptions) -> Result<(Corpus, IngestReport)> {
    let files = input_files(path, options.format)?;
    let per_file = files
        .par_iter()
        .map(|f| read_file(f, options))
        .collect::<Result<Vec<_>>>()?;

    let mut report = IngestReport {
        files: files.iter().map(|f| f.display().to_string()).collect(),
        ..Default::default()
    };
    let mut seen = HashSet::new();
    let mut kept = Vec::new();
    for row in per_file.into_iter().flatten() {
        report.rows_read += 1;
        let Some(comment) = row else {
            report.skipped += 1;
            continue;
        };
        if !seen.insert(comment.comment_id.clone()) {
            report.duplicates += 1;
            continue;
        }
        kept.push(comment);
    }
    if report.rows_read > 0 && report.skipped * 2 > report.rows_read {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            reason: format!(
                "{} of {} rows are malformed",
                report.skipped, report.rows_read
            ),
        });
    }

    if let Some((start, end)) = options.year_range {
        let before = kept.len();
        kept.retain(|c| (start..=end).contains(&year_of(c.timestamp)));
        report.outside_year_range = before - kept.len();
    }

    let mut per_community: HashMap<String, usize> = HashMap::new();
    let mut cap_hits: BTreeMap<String, bool> = BTreeMap::new();
    let mut keep_mask = Vec::with_capacity(kept.len());
    for c in &kept {
        let count = per_community.entry(c.community_id.clone()).or_default();
        *count += 1;
        let within = options.max_comments_cap.is_none_or(|cap| *count <= cap);
        cap_hits
            .entry(c.community_id.clone())
            .and_modify(|hit| *hit |= !within)
            .or_insert(!within);
        keep_mask.push(within);
    }
    let before = kept.len();
    let mut mask = keep_mask.into_iter();
    kept.retain(|_| mask.next().unwrap_or(false));
    report.dropped_by_cap = before - kept.len();

    let corpus = Corpus::new(options.platform, Vec::new(), kept)?.with_cap_hits(cap_hits.clone());
    report.loaded = corpus.len();
    report.orphans = corpus.orphan_count();
    report.cap_hit_per_community = cap_hits;
    Ok((corpus, report))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapAuditRow {
    pub community_id: String,
    pub loaded: usize,
    /// Percentage of loaded comments per UTC calendar year.
    pub year_share: BTreeMap<i32, f64>,
    pub cap_hit: bool,
}

/// Per-community year distribution of the loaded comments.
pub fn audit_cap(corpus: &Corpus) -> Vec<CapAuditRow> {
    corpus
        .communities()
        .iter()
        .map(|(id, index)| {
            let mut years: BTreeMap<i32, usize> = BTreeMap::new();
            for &i in &index.comments {
                *years.entry(year_of(corpus.comment(i).timestamp)).or_default() += 1;
            }
            let loaded = index.comments.len();
            CapAuditRow {
                community_id: id.clone(),
                loaded,
                year_share: years
                    .into_iter()
                    .map(|(y, n)| (y, 100.0 * n as f64 / loaded as f64))
                    .collect(),
                cap_hit: corpus.cap_hits().get(id).copied().unwrap_or(false),
            }
        })
        .collect()
}

/// Keeps `floor(fraction * posts)` posts drawn uniformly without replacement,
/// together with every comment of each kept post.
pub fn subsample_posts(corpus: &Corpus, fraction: f64, seed: u64) -> Result<Corpus> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "subsample fraction must be in (0, 1], got {fraction}"
        )));
    }
    let n_posts = corpus.posts().len();
    // Guard against 0.33 * 100 landing a hair below 33.
    let take = ((fraction * n_posts as f64) + 1e-9).floor() as usize;
    let mut keep = vec![false; n_posts];
    if take >= n_posts {
        keep.iter_mut().for_each(|k| *k = true);
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "subsample_posts"));
        for i in rand::seq::index::sample(&mut rng, n_posts, take) {
            keep[i] = true;
        }
    }
    let posts = corpus
        .posts()
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(p, _)| p.clone())
        .collect();
    let comments = corpus
        .comments()
        .iter()
        .enumerate()
        .filter(|(i, _)| keep[corpus.post_of(*i)])
        .map(|(_, c)| c.clone())
        .collect();
    Ok(Corpus::new(corpus.platform(), posts, comments)?.with_cap_hits(corpus.cap_hits.clone()))
}
