use threadloop::synth::{generate, verify, AnalyzerOutputs, CommentsPerPost, SynthConfig};
use threadloop::{LexiconSet, Platform};

fn check(cfg: &SynthConfig) {
    let (corpus, truth) = generate(cfg).unwrap();
    let out = AnalyzerOutputs::collect(&corpus, &LexiconSet::builtin(), cfg.seed).unwrap();
    let report = verify(&corpus, &truth, &out);
    assert!(report.passed, "seed {}: {report}", cfg.seed);
}

#[test]
fn analyzers_match_ground_truth_across_configs() {
    for seed in 0..8 {
        check(&SynthConfig {
            seed,
            n_posts: 60 + 20 * seed as usize,
            p_challenge: 0.1 + 0.05 * seed as f64,
            n_communities: 1 + seed as usize % 3,
            ..SynthConfig::default()
        });
    }
}

#[test]
fn flat_agent_like_corpora_verify() {
    check(&SynthConfig {
        seed: 11,
        p_nest: 0.08,
        p_followup: 0.02,
        platform: Platform::AgentForum,
        ..SynthConfig::default()
    });
}

#[test]
fn deep_fixed_size_threads_verify() {
    check(&SynthConfig {
        seed: 12,
        comments_per_post: CommentsPerPost::Fixed { n: 40 },
        p_nest: 0.95,
        p_followup: 0.9,
        p_indirect: 0.5,
        ..SynthConfig::default()
    });
}
