//! Cue lexicons and the case-insensitive substring detector.
//!
//! Matching is deliberately naive: the text is lowercased (with typographic
//! apostrophes folded to `'`) and searched for each cue as a contiguous
//! substring. There is no tokenization and no word-boundary check, so `"no,"`
//! fires inside `"casino,"`. The detector reproduces the measurement
//! instrument, pitfalls included.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::corpus::Corpus;
use crate::error::{Error, Result};

pub const CHALLENGE_CUES: &[&str] = &[
    "source?",
    "citation",
    "that's wrong",
    "that is wrong",
    "actually,",
    "actually ",
    "what do you mean",
    "what does that mean",
    "not allowed",
    "stop",
    "rule ",
    "you can't",
    "you cant",
    "disagree",
    "incorrect",
    "misleading",
    "prove it",
    "evidence?",
    "how so",
    "why do you think",
    "i don't think",
    "i dont think",
    "that doesn't",
    "that doesnt",
    "not true",
    "no,",
    "wrong",
];

pub const REPAIR_CUES: &[&str] = &[
    "to clarify",
    "i meant",
    "what i meant",
    "let me rephrase",
    "sorry",
    "apologies",
    "my mistake",
    "i was wrong",
    "you're right",
    "you are right",
    "fair point",
    "good point",
    "i stand corrected",
    "thanks for",
    "i see your point",
    "i agree",
    "that's fair",
    "updated",
    "corrected",
];

pub const HEDGING_CUES: &[&str] = &[
    "perhaps",
    "maybe",
    "i think",
    "it seems",
    "arguably",
    "possibly",
    "might",
    "could be",
    "in my opinion",
    "i believe",
    "not sure",
    "i suppose",
    "it appears",
    "one could argue",
    "it could be",
    "i would say",
    "from my perspective",
    "if i'm not mistaken",
];

/// Challenge cues dropped from the strict variant.
pub const STRICT_CHALLENGE_REMOVALS: &[&str] = &["actually,", "no,", "stop", "wrong", "rule "];

/// Repair cues dropped from the strict variant.
pub const STRICT_REPAIR_REMOVALS: &[&str] = &["i agree", "thanks for", "updated", "corrected"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CueCategory {
    Challenge,
    Repair,
    Hedging,
}

impl CueCategory {
    pub const ALL: [CueCategory; 3] = [CueCategory::Challenge, CueCategory::Repair, CueCategory::Hedging];

    pub fn as_str(self) -> &'static str {
        match self {
            CueCategory::Challenge => "challenge",
            CueCategory::Repair => "repair",
            CueCategory::Hedging => "hedging",
        }
    }

    fn builtin(self) -> &'static [&'static str] {
        match self {
            CueCategory::Challenge => CHALLENGE_CUES,
            CueCategory::Repair => REPAIR_CUES,
            CueCategory::Hedging => HEDGING_CUES,
        }
    }

    fn builtin_removals(self) -> &'static [&'static str] {
        match self {
            CueCategory::Challenge => STRICT_CHALLENGE_REMOVALS,
            CueCategory::Repair => STRICT_REPAIR_REMOVALS,
            CueCategory::Hedging => &[],
        }
    }
}

impl fmt::Display for CueCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CueCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "challenge" => Ok(CueCategory::Challenge),
            "repair" => Ok(CueCategory::Repair),
            "hedging" => Ok(CueCategory::Hedging),
            other => Err(Error::Config(format!("unknown cue category `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LexiconVariant {
    #[default]
    Full,
    Strict,
}

impl LexiconVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            LexiconVariant::Full => "full",
            LexiconVariant::Strict => "strict",
        }
    }
}

impl fmt::Display for LexiconVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LexiconVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" | "broad" => Ok(LexiconVariant::Full),
            "strict" => Ok(LexiconVariant::Strict),
            other => Err(Error::Config(format!("unknown lexicon variant `{other}`"))),
        }
    }
}

/// Lowercases text and folds typographic apostrophes to ASCII.
pub fn normalize(text: &str) -> String {
    text.chars()
        .flat_map(char::to_lowercase)
        .map(|ch| match ch {
            '\u{2019}' | '\u{2018}' | '\u{02BC}' => '\'',
            other => other,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CueLexicon {
    category: CueCategory,
    variant: LexiconVariant,
    cues: Vec<String>,
}

impl CueLexicon {
    /// Cues are normalized on construction. Empty lists and cues that collide
    /// after lowercasing are rejected.
    pub fn new<S: AsRef<str>>(category: CueCategory, variant: LexiconVariant, cues: &[S]) -> Result<Self> {
        if cues.is_empty() {
            return Err(Error::Config(format!("{variant} {category} lexicon has no cues")));
        }
        let mut seen = HashSet::new();
        let mut normalized = Vec::with_capacity(cues.len());
        for cue in cues {
            let cue = normalize(cue.as_ref());
            if cue.is_empty() {
                return Err(Error::Config(format!("{category} lexicon contains an empty cue")));
            }
            if !seen.insert(cue.clone()) {
                return Err(Error::Config(format!("duplicate {category} cue `{cue}`")));
            }
            normalized.push(cue);
        }
        Ok(CueLexicon {
            category,
            variant,
            cues: normalized,
        })
    }

    pub fn category(&self) -> CueCategory {
        self.category
    }

    pub fn variant(&self) -> LexiconVariant {
        self.variant
    }

    pub fn cues(&self) -> &[String] {
        &self.cues
    }

    pub fn len(&self) -> usize {
        self.cues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cues.is_empty()
    }

    pub fn contains_cue(&self, cue: &str) -> bool {
        let cue = normalize(cue);
        self.cues.iter().any(|c| *c == cue)
    }

    /// True iff the normalized text contains any cue.
    pub fn detect(&self, text: &str) -> bool {
        self.detect_normalized(&normalize(text))
    }

    /// Detection on text that already went through [`normalize`].
    pub fn detect_normalized(&self, normalized: &str) -> bool {
        self.cues.iter().any(|c| normalized.contains(c.as_str()))
    }

    /// Cues that fire on the text, in lexicon order.
    pub fn matches<'a>(&'a self, text: &str) -> Vec<&'a str> {
        let text = normalize(text);
        self.cues
            .iter()
            .filter(|c| text.contains(c.as_str()))
            .map(String::as_str)
            .collect()
    }
}

/// Anything that can say whether a corpus comment carries a cue.
///
/// Implemented by [`CueLexicon`] (detects on the fly) and by [`CueMask`]
/// (answers from a precomputed table), so the analysis routines can take
/// either.
pub trait CueDetector: Sync {
    fn fires(&self, corpus: &Corpus, idx: usize) -> bool;
}

impl CueDetector for CueLexicon {
    fn fires(&self, corpus: &Corpus, idx: usize) -> bool {
        self.detect(&corpus.comment(idx).body)
    }
}

impl<T: CueDetector + ?Sized> CueDetector for &T {
    fn fires(&self, corpus: &Corpus, idx: usize) -> bool {
        (**self).fires(corpus, idx)
    }
}

/// Detection results of one lexicon over every comment of a corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CueMask {
    category: CueCategory,
    variant: LexiconVariant,
    bits: Vec<bool>,
}

impl CueMask {
    pub fn compute(corpus: &Corpus, lexicon: &CueLexicon) -> Self {
        let bits = corpus
            .comments()
            .par_iter()
            .map(|c| lexicon.detect(&c.body))
            .collect();
        CueMask {
            category: lexicon.category(),
            variant: lexicon.variant(),
            bits,
        }
    }

    pub fn category(&self) -> CueCategory {
        self.category
    }

    pub fn variant(&self) -> LexiconVariant {
        self.variant
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

impl CueDetector for CueMask {
    fn fires(&self, _corpus: &Corpus, idx: usize) -> bool {
        self.bits[idx]
    }
}

/// All six lexicons: three categories in full and strict variants.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconSet {
    lexicons: BTreeMap<(CueCategory, LexiconVariant), CueLexicon>,
}

/// Override file layout. Categories left out keep their built-in cues.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct LexiconOverride {
    challenge: Option<Vec<String>>,
    repair: Option<Vec<String>>,
    hedging: Option<Vec<String>>,
    #[serde(default)]
    strict_removals: BTreeMap<String, Vec<String>>,
}

impl LexiconSet {
    pub fn builtin() -> Self {
        Self::assemble(|cat| cat.builtin().iter().map(|s| s.to_string()).collect(), |cat| {
            cat.builtin_removals().iter().map(|s| s.to_string()).collect()
        })
        .expect("built-in lexicons are valid")
    }

    /// Loads an override JSON document, e.g.
    /// `{"challenge": ["source?"], "strict_removals": {"challenge": []}}`.
    pub fn from_json_str(json: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(json)?;
        if let Some(map) = value.as_object() {
            for key in map.keys() {
                if !matches!(key.as_str(), "challenge" | "repair" | "hedging" | "strict_removals") {
                    return Err(Error::Config(format!("unknown lexicon category `{key}`")));
                }
            }
            if let Some(removals) = map.get("strict_removals").and_then(|v| v.as_object()) {
                for key in removals.keys() {
                    key.parse::<CueCategory>()?;
                }
            }
        }
        let ov: LexiconOverride =
            serde_json::from_value(value).map_err(|e| Error::Config(format!("lexicon override: {e}")))?;
        let lists = |cat: CueCategory| -> Vec<String> {
            let custom = match cat {
                CueCategory::Challenge => ov.challenge.clone(),
                CueCategory::Repair => ov.repair.clone(),
                CueCategory::Hedging => ov.hedging.clone(),
            };
            custom.unwrap_or_else(|| cat.builtin().iter().map(|s| s.to_string()).collect())
        };
        let removals = |cat: CueCategory| -> Vec<String> {
            ov.strict_removals
                .get(cat.as_str())
                .cloned()
                .unwrap_or_else(|| cat.builtin_removals().iter().map(|s| s.to_string()).collect())
        };
        Self::assemble(lists, removals)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    fn assemble(
        lists: impl Fn(CueCategory) -> Vec<String>,
        removals: impl Fn(CueCategory) -> Vec<String>,
    ) -> Result<Self> {
        let mut lexicons = BTreeMap::new();
        for cat in CueCategory::ALL {
            let full = CueLexicon::new(cat, LexiconVariant::Full, &lists(cat))?;
            let removed: HashSet<String> = removals(cat).iter().map(|s| normalize(s)).collect();
            let strict_cues: Vec<&String> = full.cues.iter().filter(|c| !removed.contains(*c)).collect();
            let strict = CueLexicon::new(cat, LexiconVariant::Strict, &strict_cues)?;
            lexicons.insert((cat, LexiconVariant::Full), full);
            lexicons.insert((cat, LexiconVariant::Strict), strict);
        }
        Ok(LexiconSet { lexicons })
    }

    pub fn get(&self, category: CueCategory, variant: LexiconVariant) -> &CueLexicon {
        &self.lexicons[&(category, variant)]
    }

    pub fn challenge(&self, variant: LexiconVariant) -> &CueLexicon {
        self.get(CueCategory::Challenge, variant)
    }

    pub fn repair(&self, variant: LexiconVariant) -> &CueLexicon {
        self.get(CueCategory::Repair, variant)
    }

    pub fn hedging(&self, variant: LexiconVariant) -> &CueLexicon {
        self.get(CueCategory::Hedging, variant)
    }

    pub fn iter(&self) -> impl Iterator<Item = &CueLexicon> {
        self.lexicons.values()
    }
}

impl Default for LexiconSet {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Precision and recall of a detector against annotated labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorValidation {
    pub precision: f64,
    pub recall: f64,
    pub n: usize,
}

impl DetectorValidation {
    pub fn new(precision: f64, recall: f64, n: usize) -> Result<Self> {
        for (name, v) in [("precision", precision), ("recall", recall)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(DetectorValidation { precision, recall, n })
    }

    pub fn adjust(&self, observed_rate: f64) -> Result<f64> {
        adjust_for_recall(observed_rate, self.recall)
    }
}

/// Corrects an observed rate for imperfect recall: `min(observed / recall, 1)`.
pub fn adjust_for_recall(observed_rate: f64, recall: f64) -> Result<f64> {
    if !(recall > 0.0 && recall <= 1.0) {
        return Err(Error::Config(format!(
            "recall must lie in (0, 1] for a recall correction, got {recall}"
        )));
    }
    if !(0.0..=1.0).contains(&observed_rate) {
        return Err(Error::Config(format!(
            "observed rate must lie in [0, 1], got {observed_rate}"
        )));
    }
    Ok((observed_rate / recall).min(1.0))
}

/// One row of a detector golden file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldenCase {
    pub category: CueCategory,
    pub variant: LexiconVariant,
    pub text: String,
    pub expected: bool,
    pub line: usize,
}

/// Parses a TSV of `category, variant, text, expected`. Blank lines and lines
/// starting with `#` are ignored; a header row starting with `category` is
/// skipped.
pub fn parse_golden(tsv: &str) -> Result<Vec<GoldenCase>> {
    let mut cases = Vec::new();
    for (i, line) in tsv.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() || line.starts_with('#') || line.starts_with("category\t") {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Data(format!(
                "golden line {line_no}: expected 4 tab-separated fields, got {}",
                fields.len()
            )));
        }
        let expected = match fields[3].trim() {
            "true" | "1" => true,
            "false" | "0" => false,
            other => return Err(Error::Data(format!("golden line {line_no}: bad boolean `{other}`"))),
        };
        cases.push(GoldenCase {
            category: fields[0].trim().parse()?,
            variant: fields[1].trim().parse()?,
            text: fields[2].to_string(),
            expected,
            line: line_no,
        });
    }
    Ok(cases)
}

/// Golden cases whose detection disagrees with the expectation.
pub fn golden_failures<'a>(set: &LexiconSet, cases: &'a [GoldenCase]) -> Vec<&'a GoldenCase> {
    cases
        .iter()
        .filter(|c| set.get(c.category, c.variant).detect(&c.text) != c.expected)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_sizes() {
        let set = LexiconSet::builtin();
        assert_eq!(set.challenge(LexiconVariant::Full).len(), 27);
        assert_eq!(set.challenge(LexiconVariant::Strict).len(), 22);
        assert_eq!(set.repair(LexiconVariant::Full).len(), 19);
        assert_eq!(set.repair(LexiconVariant::Strict).len(), 15);
        assert_eq!(set.hedging(LexiconVariant::Full).len(), 18);
        assert_eq!(set.hedging(LexiconVariant::Strict).len(), 18);
        assert!(set.hedging(LexiconVariant::Full).contains_cue("if i'm not mistaken"));
    }

    #[test]
    fn detection_examples() {
        let set = LexiconSet::builtin();
        let full = set.challenge(LexiconVariant::Full);
        let strict = set.challenge(LexiconVariant::Strict);
        assert!(full.detect("Source? I doubt this."));
        assert!(!full.detect(""));
        assert!(full.detect("I think you're wrong about this"));
        assert!(!strict.detect("I think you're wrong about this"));
        assert!(set.repair(LexiconVariant::Full).detect("Fair point, I stand corrected."));
    }

    #[test]
    fn trailing_space_cues_need_the_space() {
        let full = LexiconSet::builtin();
        let full = full.challenge(LexiconVariant::Full);
        assert!(full.detect("Actually I read it"));
        assert!(!full.detect("actually"));
        assert!(full.detect("see rule 3"));
        assert!(!full.detect("rules3"));
    }

    #[test]
    fn curly_apostrophes_are_folded() {
        let set = LexiconSet::builtin();
        assert!(set.repair(LexiconVariant::Full).detect("You\u{2019}re right"));
    }

    #[test]
    fn no_word_boundaries() {
        let set = LexiconSet::builtin();
        assert!(set.challenge(LexiconVariant::Full).detect("went to the casino, lost"));
    }

    #[test]
    fn recall_adjustment() {
        assert!((adjust_for_recall(0.005, 0.48).unwrap() - 0.0104166666).abs() < 1e-6);
        assert_eq!(adjust_for_recall(0.0, 0.48).unwrap(), 0.0);
        assert_eq!(adjust_for_recall(0.9, 0.48).unwrap(), 1.0);
        assert!(adjust_for_recall(0.1, 0.0).is_err());
    }

    #[test]
    fn override_with_single_cue() {
        let set = LexiconSet::from_json_str(r#"{"challenge": ["source?"]}"#).unwrap();
        assert_eq!(set.challenge(LexiconVariant::Full).len(), 1);
        assert_eq!(set.repair(LexiconVariant::Full).len(), 19);
    }

    #[test]
    fn override_rejects_unknown_category() {
        let err = LexiconSet::from_json_str(r#"{"praise": ["nice"]}"#).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = LexiconSet::from_json_str(r#"{"strict_removals": {"praise": []}}"#).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn override_rejects_duplicates_after_lowercasing() {
        assert!(LexiconSet::from_json_str(r#"{"hedging": ["Maybe", "maybe"]}"#).is_err());
    }
}
