use std::collections::BTreeSet;

use threadloop::lexicon::{golden_failures, parse_golden, GoldenCase};
use threadloop::{CueCategory, LexiconSet, LexiconVariant};

fn cases() -> Vec<GoldenCase> {
    parse_golden(include_str!("data/detector_golden.tsv")).unwrap()
}

#[test]
fn every_golden_case_agrees() {
    let cases = cases();
    assert!(cases.len() >= 60, "only {} cases", cases.len());
    let failures = golden_failures(&LexiconSet::builtin(), &cases);
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn golden_cases_exercise_every_cue() {
    let set = LexiconSet::builtin();
    let cases = cases();
    for cat in CueCategory::ALL {
        let lex = set.get(cat, LexiconVariant::Full);
        let hit: BTreeSet<&str> = cases
            .iter()
            .filter(|c| c.category == cat && c.variant == LexiconVariant::Full && c.expected)
            .flat_map(|c| lex.matches(&c.text))
            .collect();
        let missing: Vec<&String> = lex.cues().iter().filter(|q| !hit.contains(q.as_str())).collect();
        assert!(missing.is_empty(), "{cat}: {missing:?}");
    }
}

#[test]
fn strict_removals_have_negative_cases() {
    let cases = cases();
    let negatives: Vec<&str> = cases
        .iter()
        .filter(|c| c.variant == LexiconVariant::Strict && !c.expected)
        .map(|c| c.text.as_str())
        .collect();
    for cue in threadloop::lexicon::STRICT_CHALLENGE_REMOVALS
        .iter()
        .chain(threadloop::lexicon::STRICT_REPAIR_REMOVALS)
    {
        assert!(
            negatives.iter().any(|t| t.to_lowercase().contains(cue)),
            "no strict negative for `{cue}`"
        );
    }
}
