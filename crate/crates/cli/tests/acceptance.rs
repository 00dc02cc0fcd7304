//! One line per acceptance criterion. Exits non-zero when any fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use threadloop::corpus::{ingest, IngestOptions, InputFormat};
use threadloop::episodes::RepairWindow;
use threadloop::lexicon::{adjust_for_recall, golden_failures, parse_golden};
use threadloop::report::{analyze_corpus, h1_rows, h2_rows, h3_rows, AnalysisConfig};
use threadloop::seed::indexed_rng;
use threadloop::stats::{
    heterogeneity, leave_one_pair_out, mcnemar_exact, permutation_test_stratified, rule_of_three, sign_flip_paired,
    Alternative, PairTable, Resampling, Stratum,
};
use threadloop::synth::{generate, verify, AnalyzerOutputs, CommentsPerPost, SynthConfig};
use threadloop::{LexiconSet, LexiconVariant, Platform};

const ORACLE_SEEDS: u64 = 100;
const ORACLE_MAX_COMMENTS: usize = 5_000;
const ORACLE_BUDGET: Duration = Duration::from_secs(120);
const GOLDEN_MIN_CASES: usize = 60;
const LOO_TOLERANCE_PP: f64 = 0.1;
const MULTI_TURN_WORST_GAP: f64 = 33.8;
const RULE_OF_THREE_N: usize = 1006;
const RULE_OF_THREE_BOUND: f64 = 0.003;
const RECALL_TOLERANCE: f64 = 1e-6;
const SIGN_FLIP_TOLERANCE: f64 = 0.01;
const PERMUTATION_TOLERANCE: f64 = 0.02;
const MCNEMAR_TOLERANCE: f64 = 1e-4;
const PERF_COMMENTS: usize = 1_000_000;
const PERF_BUDGET: Duration = Duration::from_secs(300);
const PERF_MEMORY_BYTES: u64 = 4 << 30;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("synthetic oracle equivalence", oracle),
        ("detector golden suite", golden),
        ("published pair tables", tables),
        ("zero-event upper bound", zero_events),
        ("recall correction", recall),
        ("inference exactness", inference),
        ("determinism", determinism),
        ("performance", performance),
        ("real-data reproduction", real_data),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Outcome::Pass(d) => println!("PASS {name}: {d}"),
            Outcome::Skip(d) => println!("SKIP {name}: {d}"),
            Outcome::Fail(d) => {
                failed += 1;
                println!("FAIL {name}: {d}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data").join(name)
}

fn oracle_config(seed: u64) -> SynthConfig {
    let mut rng = indexed_rng(seed, 0);
    SynthConfig {
        seed,
        n_posts: rng.random_range(20..=250),
        comments_per_post: CommentsPerPost::Geometric {
            mean: rng.random_range(2.0..12.0),
        },
        p_nest: rng.random_range(0.05..0.95),
        p_challenge: rng.random_range(0.02..0.4),
        p_followup: rng.random_range(0.0..0.9),
        p_repair: rng.random_range(0.0..0.9),
        p_hedge: rng.random_range(0.0..0.4),
        p_indirect: rng.random_range(0.0..0.5),
        n_authors: rng.random_range(10..=200),
        author_skew: rng.random_range(0.0..1.5),
        n_communities: rng.random_range(1..=4),
        platform: if seed % 2 == 0 { Platform::HumanForum } else { Platform::AgentForum },
        ..SynthConfig::default()
    }
}

fn oracle() -> Outcome {
    let lex = LexiconSet::builtin();
    let start = Instant::now();
    let mut checks = 0;
    let mut largest = 0;
    for seed in 0..ORACLE_SEEDS {
        let cfg = oracle_config(seed);
        let (corpus, truth) = match generate(&cfg) {
            Ok(g) => g,
            Err(e) => return Outcome::Fail(format!("seed {seed}: {e}")),
        };
        if corpus.len() > ORACLE_MAX_COMMENTS {
            return Outcome::Fail(format!("seed {seed} produced {} comments", corpus.len()));
        }
        largest = largest.max(corpus.len());
        let out = match AnalyzerOutputs::collect(&corpus, &lex, seed) {
            Ok(o) => o,
            Err(e) => return Outcome::Fail(format!("seed {seed}: {e}")),
        };
        let report = verify(&corpus, &truth, &out);
        if !report.passed {
            return Outcome::Fail(format!("seed {seed}: {report}"));
        }
        checks += report.checks;
    }
    let elapsed = start.elapsed();
    let detail = format!(
        "{ORACLE_SEEDS} seeds, {checks} exact checks, largest corpus {largest} comments, {:.1}s",
        elapsed.as_secs_f64()
    );
    if elapsed <= ORACLE_BUDGET {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(format!("{detail} exceeds {}s", ORACLE_BUDGET.as_secs()))
    }
}

fn golden() -> Outcome {
    let text = match fs::read_to_string(data("detector_golden.tsv")) {
        Ok(t) => t,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let cases = match parse_golden(&text) {
        Ok(c) => c,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let failures = golden_failures(&LexiconSet::builtin(), &cases);
    let detail = format!("{}/{} cases agree", cases.len() - failures.len(), cases.len());
    if cases.len() >= GOLDEN_MIN_CASES && failures.is_empty() {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(format!("{detail}; first failure {:?}", failures.first()))
    }
}

// Printed leave-one-pair-out gaps: nesting, followup, repair, return, multi-turn.
const PRINTED_LOO: [(&str, [f64; 5]); 6] = [
    ("none", [60.0, 57.0, 2.6, 39.6, 38.4]),
    ("philosophy/philosophy", [57.8, 55.1, 2.3, 37.3, 36.1]),
    ("Showerthoughts/ponderings", [64.2, 58.1, 2.8, 41.1, 39.5]),
    ("todayilearned/todayilearned", [57.1, 58.4, 2.8, 40.9, 38.7]),
    ("science/ai", [59.0, 56.9, 2.8, 41.8, 39.0]),
    ("buildapc/builds", [61.7, 56.5, 2.6, 36.9, 38.5]),
];

fn tables() -> Outcome {
    let table = match PairTable::from_csv_path(&data("published_pairs.csv")) {
        Ok(t) => t,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let loo = match leave_one_pair_out(&table) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let metrics = ["nesting", "followup", "repair", "return", "multi_turn"];
    let mut worst_dev: f64 = 0.0;
    for (row, (dropped, printed)) in loo.iter().zip(PRINTED_LOO) {
        if row.dropped.as_deref().unwrap_or("none") != dropped {
            return Outcome::Fail(format!("row order: expected {dropped}, got {:?}", row.dropped));
        }
        for (m, want) in metrics.iter().zip(printed) {
            let dev = (row.gaps[*m] - want).abs();
            worst_dev = worst_dev.max(dev);
            if dev > LOO_TOLERANCE_PP + 1e-9 {
                return Outcome::Fail(format!("{dropped} {m}: {} vs printed {want}", row.gaps[*m]));
            }
        }
    }
    let het = match heterogeneity(&table) {
        Ok(h) => h,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let Some(mt) = het.iter().find(|r| r.metric == "multi_turn") else {
        return Outcome::Fail("no multi_turn heterogeneity row".into());
    };
    if (mt.worst_gap - MULTI_TURN_WORST_GAP).abs() > 1e-9 {
        return Outcome::Fail(format!("multi-turn worst gap {:.3}", mt.worst_gap));
    }
    Outcome::Pass(format!(
        "{} leave-one-out rows within {LOO_TOLERANCE_PP} pp (max deviation {worst_dev:.3}), multi-turn worst gap {:.3}",
        loo.len(),
        mt.worst_gap
    ))
}

fn zero_events() -> Outcome {
    match rule_of_three(RULE_OF_THREE_N) {
        Ok(b) if b < RULE_OF_THREE_BOUND => Outcome::Pass(format!("rule_of_three({RULE_OF_THREE_N}) = {b:.6}")),
        Ok(b) => Outcome::Fail(format!("rule_of_three({RULE_OF_THREE_N}) = {b}")),
        Err(e) => Outcome::Fail(e.to_string()),
    }
}

fn recall() -> Outcome {
    let exact = 0.005 / 0.48;
    match adjust_for_recall(0.005, 0.48) {
        Ok(v) if (v - exact).abs() <= RECALL_TOLERANCE && format!("{v:.4}") == "0.0104" => {
            Outcome::Pass(format!("adjust_for_recall(0.005, 0.48) = {v:.7}"))
        }
        Ok(v) => Outcome::Fail(format!("adjust_for_recall(0.005, 0.48) = {v}")),
        Err(e) => Outcome::Fail(e.to_string()),
    }
}

fn sign_flip_enumerated(d: &[i64]) -> f64 {
    let obs = d.iter().sum::<i64>().abs();
    let hits = (0u64..1 << d.len())
        .filter(|m| {
            let s: i64 = d.iter().enumerate().map(|(j, &x)| if m >> j & 1 == 1 { -x } else { x }).sum();
            s.abs() >= obs
        })
        .count();
    hits as f64 / (1u64 << d.len()) as f64
}

fn permutation_enumerated(strata: &[(usize, usize, usize, usize)]) -> f64 {
    let denom: i128 = strata.iter().map(|&(a, _, b, _)| (a * b) as i128).product();
    let gap = |a: usize, b: usize, ev: usize, total: usize| -> i128 {
        ((ev * b) as i128 - ((total - ev) * a) as i128) * denom / (a * b) as i128
    };
    let observed: i128 = strata.iter().map(|&(a, ae, b, be)| gap(a, b, ae, ae + be)).sum();
    let mut sums = vec![0i128];
    for &(a, ae, b, be) in strata {
        let n = a + b;
        let gaps: Vec<i128> = (0u32..1 << n)
            .filter(|m| m.count_ones() as usize == a)
            .map(|m| gap(a, b, (0..ae + be).filter(|&i| m >> i & 1 == 1).count(), ae + be))
            .collect();
        sums = sums.iter().flat_map(|s| gaps.iter().map(move |g| s + g)).collect();
    }
    sums.iter().filter(|s| s.abs() >= observed.abs()).count() as f64 / sums.len() as f64
}

fn inference() -> Outcome {
    let mut rng = indexed_rng(31, 0);
    let mut worst_flip: f64 = 0.0;
    for case in 0..20u64 {
        let n = rng.random_range(1..=12);
        let d: Vec<i64> = (0..n).map(|_| rng.random_range(-6..=6)).collect();
        let df: Vec<f64> = d.iter().map(|&x| x as f64).collect();
        let exact = sign_flip_enumerated(&d);
        let mc = match sign_flip_paired(&df, 20_000, case, Alternative::TwoSided) {
            Ok(r) => r.p_value,
            Err(e) => return Outcome::Fail(e.to_string()),
        };
        worst_flip = worst_flip.max((mc - exact).abs());
    }
    let mut worst_perm: f64 = 0.0;
    for case in 0..20u64 {
        let mut strata = Vec::new();
        let mut budget = 12usize;
        for _ in 0..rng.random_range(1..=3) {
            if budget < 2 {
                break;
            }
            let a = rng.random_range(1..=(budget - 1).min(5));
            let b = rng.random_range(1..=(budget - a).min(5));
            budget -= a + b;
            strata.push((a, rng.random_range(0..=a), b, rng.random_range(0..=b)));
        }
        let exact = permutation_enumerated(&strata);
        let lib: Vec<Stratum> = strata
            .iter()
            .map(|&(a, ae, b, be)| Stratum {
                a_n: a as u64,
                a_events: ae as u64,
                b_n: b as u64,
                b_events: be as u64,
            })
            .collect();
        let mc = match permutation_test_stratified(&lib, 20_000, case, Alternative::TwoSided) {
            Ok(r) => r.p_value,
            Err(e) => return Outcome::Fail(e.to_string()),
        };
        worst_perm = worst_perm.max((mc - exact).abs());
    }
    let mcnemar = mcnemar_exact(10, 2).unwrap_or(f64::NAN);
    let detail = format!(
        "sign-flip max error {worst_flip:.4}, stratified permutation max error {worst_perm:.4}, mcnemar(10, 2) = {mcnemar:.5}"
    );
    if worst_flip <= SIGN_FLIP_TOLERANCE
        && worst_perm <= PERMUTATION_TOLERANCE
        && (mcnemar - 0.03857).abs() <= MCNEMAR_TOLERANCE
    {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn run(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_threadloop"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn dir_bytes(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .map_err(|e| e.to_string())?
        .map(|e| {
            let p = e.map_err(|e| e.to_string())?.path();
            let bytes = fs::read(&p).map_err(|e| e.to_string())?;
            Ok((p.file_name().unwrap().to_string_lossy().into_owned(), bytes))
        })
        .collect::<Result<_, String>>()?;
    files.sort();
    Ok(files)
}

fn determinism() -> Outcome {
    match determinism_inner() {
        Ok(d) => Outcome::Pass(d),
        Err(e) => Outcome::Fail(e),
    }
}

fn determinism_inner() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let t = tmp.path();
    let p = |x: &str| t.join(x).display().to_string();
    run(&["synth", "--seed", "3", "--n-communities", "3", "--out", &p("human")])?;
    run(&[
        "synth", "--seed", "4", "--platform", "agent_forum", "--p-nest", "0.1", "--p-followup", "0.05",
        "--n-communities", "3", "--out", &p("agent"),
    ])?;
    let pairs = r#"[{"agent":"forum00","human":"forum00","match_type":"exact_name"},
{"agent":"forum01","human":"forum01","match_type":"concept"},
{"agent":"forum02","human":"forum02","match_type":"topic"}]"#;
    fs::write(t.join("pairs.json"), pairs).map_err(|e| e.to_string())?;
    let human = format!("human_forum={}", p("human/corpus.jsonl"));
    let agent = format!("agent_forum={}", p("agent/corpus.jsonl"));
    let report = |out: &str, threads: &str| {
        run(&[
            "report", "--input", &human, "--input", &agent, "--pairs", &p("pairs.json"), "--seed", "11",
            "--n-perm", "2000", "--n-boot", "1000", "--threads", threads, "--out", &p(out),
        ])
    };
    report("a", "1")?;
    report("b", "1")?;
    report("c", "2")?;
    let a = dir_bytes(&t.join("a"))?;
    if a.len() < 2 {
        return Err("report wrote no files".into());
    }
    for other in ["b", "c"] {
        let o = dir_bytes(&t.join(other))?;
        if o != a {
            let diff = a
                .iter()
                .zip(&o)
                .find(|(x, y)| x != y)
                .map(|(x, _)| x.0.clone())
                .unwrap_or_else(|| "file list".into());
            return Err(format!("run {other} differs in {diff}"));
        }
    }
    Ok(format!("{} report files byte-identical across repeat runs and 1 vs 2 threads", a.len()))
}

fn peak_rss_bytes() -> Option<u64> {
    let status = fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

fn performance() -> Outcome {
    match performance_inner() {
        Ok(o) => o,
        Err(e) => Outcome::Fail(e),
    }
}

fn performance_inner() -> Result<Outcome, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = tmp.path().join("corpus.jsonl");
    let cfg = SynthConfig {
        seed: 99,
        n_posts: PERF_COMMENTS / 12,
        comments_per_post: CommentsPerPost::Fixed { n: 12 },
        n_authors: 20_000,
        n_communities: 8,
        ..SynthConfig::default()
    };
    {
        let (corpus, _) = generate(&cfg).map_err(|e| e.to_string())?;
        let f = fs::File::create(&path).map_err(|e| e.to_string())?;
        corpus
            .write_jsonl(std::io::BufWriter::new(f))
            .map_err(|e| e.to_string())?;
    }
    // Reset the peak-RSS counter so generation does not count.
    let reset = fs::write("/proc/self/clear_refs", "5").is_ok();
    let start = Instant::now();
    let (corpus, _) =
        ingest(&path, &IngestOptions::new(InputFormat::Jsonl, Platform::HumanForum)).map_err(|e| e.to_string())?;
    let cfg = AnalysisConfig {
        lexicon: LexiconVariant::Full,
        window: RepairWindow::Direct,
        resampling: Some(Resampling::new(1)),
    };
    let (analyses, _) = analyze_corpus(&corpus, &LexiconSet::builtin(), None, &cfg).map_err(|e| e.to_string())?;
    let h1 = h1_rows(&analyses, &cfg);
    let h2 = h2_rows(&analyses, &cfg);
    let h3 = h3_rows(&analyses, &cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let peak = peak_rss_bytes();
    let detail = format!(
        "{} comments, {} h1 / {} h2 / {} h3 rows in {:.1}s, peak RSS {}{}",
        corpus.len(),
        h1.len(),
        h2.len(),
        h3.len(),
        elapsed.as_secs_f64(),
        peak.map(|b| format!("{:.0} MiB", b as f64 / (1 << 20) as f64))
            .unwrap_or_else(|| "unavailable".into()),
        if reset { "" } else { " (includes generation)" },
    );
    let within_memory = peak.is_some_and(|b| b <= PERF_MEMORY_BYTES);
    Ok(if corpus.len() >= PERF_COMMENTS && elapsed <= PERF_BUDGET && within_memory {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    })
}

fn real_data() -> Outcome {
    match std::env::var_os("THREADLOOP_REAL_DATA") {
        None => Outcome::Skip(
            "conditional on the original forum dumps, which are not redistributable; set THREADLOOP_REAL_DATA to a directory holding them"
                .into(),
        ),
        Some(dir) => Outcome::Fail(format!(
            "{} is set but real-data reproduction is not automated; compare report outputs by hand",
            Path::new(&dir).display()
        )),
    }
}
