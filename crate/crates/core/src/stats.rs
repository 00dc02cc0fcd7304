//! Resampling inference and table arithmetic.
//!
//! Every resampling iteration `i` draws from its own ChaCha stream
//! `(seed, i)`, so results are identical whatever the thread count.

use std::collections::{BTreeMap, HashSet};
use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Hypergeometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{digest_values, indexed_rng};

/// Which tail counts as extreme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    #[default]
    TwoSided,
    Greater,
    Less,
}

impl Alternative {
    fn extreme(self, permuted: f64, observed: f64) -> bool {
        let tol = 1e-12 * observed.abs().max(1.0);
        match self {
            Alternative::TwoSided => permuted.abs() >= observed.abs() - tol,
            Alternative::Greater => permuted >= observed - tol,
            Alternative::Less => permuted <= observed + tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferenceResult {
    pub statistic: f64,
    pub p_value: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    /// Permutations, sign patterns or bootstrap resamples used.
    pub n_resamples: u64,
    pub seed: u64,
    pub alternative: Alternative,
    /// SHA-256 of the inputs.
    pub input_digest: String,
}

/// Resampling budget and seed shared by the randomized summaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resampling {
    pub n_perm: u64,
    pub n_boot: u64,
    pub seed: u64,
}

impl Resampling {
    pub fn new(seed: u64) -> Self {
        Resampling {
            n_perm: 10_000,
            n_boot: 5_000,
            seed,
        }
    }
}

/// Add-one smoothed Monte Carlo p-value.
pub fn smoothed_p(extreme: u64, n_perm: u64) -> f64 {
    (1 + extreme) as f64 / (1 + n_perm) as f64
}

/// Binary outcomes of two groups within one stratum. In cross-platform use
/// group `a` is the human forum and group `b` the agent forum of a matched
/// pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stratum {
    pub a_n: u64,
    pub a_events: u64,
    pub b_n: u64,
    pub b_events: u64,
}

impl Stratum {
    pub fn from_outcomes(a: &[bool], b: &[bool]) -> Self {
        let events = |v: &[bool]| v.iter().filter(|&&x| x).count() as u64;
        Stratum {
            a_n: a.len() as u64,
            a_events: events(a),
            b_n: b.len() as u64,
            b_events: events(b),
        }
    }

    fn gap_with(&self, a_events: u64) -> f64 {
        let total = self.a_events + self.b_events;
        a_events as f64 / self.a_n as f64 - (total - a_events) as f64 / self.b_n as f64
    }

    pub fn gap(&self) -> f64 {
        self.gap_with(self.a_events)
    }
}

fn validate_strata(strata: &[Stratum]) -> Result<()> {
    if strata.is_empty() {
        return Err(Error::Data("permutation test needs at least one stratum".into()));
    }
    for (i, s) in strata.iter().enumerate() {
        if s.a_n == 0 || s.b_n == 0 {
            return Err(Error::Data(format!("stratum {i} has an empty group")));
        }
        if s.a_events > s.a_n || s.b_events > s.b_n {
            return Err(Error::Data(format!("stratum {i} has more events than outcomes")));
        }
    }
    Ok(())
}

fn strata_digest(strata: &[Stratum]) -> String {
    let flat: Vec<f64> = strata
        .iter()
        .flat_map(|s| [s.a_n, s.a_events, s.b_n, s.b_events].map(|v| v as f64))
        .collect();
    digest_values(&flat)
}

/// Mean over strata of (rate in `a` − rate in `b`).
pub fn stratified_gap(strata: &[Stratum]) -> f64 {
    strata.iter().map(Stratum::gap).sum::<f64>() / strata.len() as f64
}

/// Permutation test of the mean within-stratum rate gap. Group labels are
/// shuffled among the outcomes of each stratum independently.
pub fn permutation_test_stratified(
    strata: &[Stratum],
    n_perm: u64,
    seed: u64,
    alternative: Alternative,
) -> Result<InferenceResult> {
    validate_strata(strata)?;
    if n_perm == 0 {
        return Err(Error::Config("n_perm must be >= 1".into()));
    }
    let observed = stratified_gap(strata);
    let draws: Vec<Hypergeometric> = strata
        .iter()
        .map(|s| {
            Hypergeometric::new(s.a_n + s.b_n, s.a_events + s.b_events, s.a_n)
                .map_err(|e| Error::Invariant(format!("hypergeometric parameters: {e}")))
        })
        .collect::<Result<_>>()?;
    let extreme = (0..n_perm)
        .into_par_iter()
        .filter(|&i| {
            let mut rng = indexed_rng(seed, i);
            let stat = strata
                .iter()
                .zip(&draws)
                .map(|(s, d)| s.gap_with(d.sample(&mut rng)))
                .sum::<f64>()
                / strata.len() as f64;
            alternative.extreme(stat, observed)
        })
        .count() as u64;
    Ok(InferenceResult {
        statistic: observed,
        p_value: smoothed_p(extreme, n_perm),
        ci_low: None,
        ci_high: None,
        n_resamples: n_perm,
        seed,
        alternative,
        input_digest: strata_digest(strata),
    })
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Paired sign-flip test of the mean difference, Monte Carlo.
pub fn sign_flip_paired(differences: &[f64], n_perm: u64, seed: u64, alternative: Alternative) -> Result<InferenceResult> {
    if differences.is_empty() {
        return Err(Error::Data("sign-flip test needs at least one difference".into()));
    }
    if n_perm == 0 {
        return Err(Error::Config("n_perm must be >= 1".into()));
    }
    let observed = mean(differences);
    let extreme = (0..n_perm)
        .into_par_iter()
        .filter(|&i| {
            let mut rng = indexed_rng(seed, i);
            let s: f64 = differences
                .iter()
                .map(|&d| if rng.random::<bool>() { d } else { -d })
                .sum();
            alternative.extreme(s / differences.len() as f64, observed)
        })
        .count() as u64;
    Ok(InferenceResult {
        statistic: observed,
        p_value: smoothed_p(extreme, n_perm),
        ci_low: None,
        ci_high: None,
        n_resamples: n_perm,
        seed,
        alternative,
        input_digest: digest_values(differences),
    })
}

/// Largest input accepted by [`sign_flip_exact`].
pub const EXACT_SIGN_FLIP_MAX: usize = 20;

/// Paired sign-flip test enumerating all `2^n` sign patterns.
pub fn sign_flip_exact(differences: &[f64], alternative: Alternative) -> Result<InferenceResult> {
    let n = differences.len();
    if n == 0 {
        return Err(Error::Data("sign-flip test needs at least one difference".into()));
    }
    if n > EXACT_SIGN_FLIP_MAX {
        return Err(Error::Config(format!(
            "exact sign-flip supports at most {EXACT_SIGN_FLIP_MAX} differences, got {n}"
        )));
    }
    let observed = mean(differences);
    let patterns = 1u64 << n;
    let extreme = (0..patterns)
        .into_par_iter()
        .filter(|&mask| {
            let s: f64 = differences
                .iter()
                .enumerate()
                .map(|(j, &d)| if mask >> j & 1 == 1 { -d } else { d })
                .sum();
            alternative.extreme(s / n as f64, observed)
        })
        .count() as u64;
    Ok(InferenceResult {
        statistic: observed,
        p_value: extreme as f64 / patterns as f64,
        ci_low: None,
        ci_high: None,
        n_resamples: patterns,
        seed: 0,
        alternative,
        input_digest: digest_values(differences),
    })
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile bootstrap interval for the mean.
pub fn bootstrap_ci(values: &[f64], n_resamples: u64, level: f64, seed: u64) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::Data("bootstrap needs at least two values".into()));
    }
    if n_resamples == 0 {
        return Err(Error::Config("n_resamples must be >= 1".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("confidence level must be in (0, 1), got {level}")));
    }
    if values.iter().all(|&v| v == values[0]) {
        return Ok((values[0], values[0]));
    }
    let n = values.len();
    let mut means: Vec<f64> = (0..n_resamples)
        .into_par_iter()
        .map(|i| {
            let mut rng = indexed_rng(seed, i);
            (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64
        })
        .collect();
    means.sort_unstable_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok((quantile_sorted(&means, alpha), quantile_sorted(&means, 1.0 - alpha)))
}

/// Mean with a bootstrap interval and a sign-flip p-value, the usual
/// summary of a vector of paired differences.
pub fn paired_summary(differences: &[f64], resampling: Resampling) -> Result<InferenceResult> {
    let mut r = sign_flip_paired(differences, resampling.n_perm, resampling.seed, Alternative::TwoSided)?;
    if differences.len() >= 2 {
        let (lo, hi) = bootstrap_ci(differences, resampling.n_boot, 0.95, resampling.seed)?;
        r.ci_low = Some(lo);
        r.ci_high = Some(hi);
    }
    Ok(r)
}

/// Upper 95% bound on a rate when no events were seen in `n` trials.
pub fn rule_of_three(n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Data("rule of three needs n >= 1".into()));
    }
    Ok(3.0 / n as f64)
}

/// Two-sided exact McNemar test on discordant counts. `None` when both are
/// zero.
pub fn mcnemar_exact(b: u64, c: u64) -> Option<f64> {
    let n = b + c;
    if n == 0 {
        return None;
    }
    let k = b.min(c);
    // log C(n, i) - n ln 2, accumulated by recurrence
    let mut log_term = -(n as f64) * std::f64::consts::LN_2;
    let mut logs = Vec::with_capacity(k as usize + 1);
    for i in 0..=k {
        logs.push(log_term);
        log_term += ((n - i) as f64).ln() - ((i + 1) as f64).ln();
    }
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tail = top.exp() * logs.iter().map(|l| (l - top).exp()).sum::<f64>();
    Some((2.0 * tail).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub pair_id: String,
    pub metric: String,
    /// Rate as a fraction.
    pub human_value: f64,
    pub agent_value: f64,
    pub n_human: Option<u64>,
    pub n_agent: Option<u64>,
}

/// Per-pair, per-metric values for the two platforms.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct PairTable {
    rows: Vec<PairRow>,
}

#[derive(Deserialize)]
struct RawPairRow {
    pair_id: String,
    metric: String,
    #[serde(alias = "reddit_value")]
    human_value: String,
    #[serde(alias = "moltbook_value")]
    agent_value: String,
    #[serde(default, alias = "n_reddit")]
    n_human: Option<u64>,
    #[serde(default, alias = "n_moltbook")]
    n_agent: Option<u64>,
}

/// `"75.6%"` is a percentage, a bare number is a fraction.
fn parse_rate(raw: &str) -> Result<f64> {
    let raw = raw.trim();
    let (num, scale) = match raw.strip_suffix('%') {
        Some(p) => (p.trim(), 100.0),
        None => (raw, 1.0),
    };
    num.parse::<f64>()
        .map(|v| v / scale)
        .map_err(|_| Error::Data(format!("not a rate: `{raw}`")))
}

impl PairTable {
    pub fn new(rows: Vec<PairRow>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &rows {
            if !seen.insert((r.metric.as_str(), r.pair_id.as_str())) {
                return Err(Error::Data(format!("pair `{}` repeated for metric `{}`", r.pair_id, r.metric)));
            }
            for v in [r.human_value, r.agent_value] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Data(format!(
                        "value {v} for `{}`/`{}` is outside [0, 1]",
                        r.pair_id, r.metric
                    )));
                }
            }
        }
        Ok(PairTable { rows })
    }

    /// Reads CSV with columns `pair_id, metric, human_value, agent_value` and
    /// optional `n_human, n_agent`.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut rows = Vec::new();
        for rec in rdr.deserialize::<RawPairRow>() {
            let r = rec?;
            rows.push(PairRow {
                human_value: parse_rate(&r.human_value)?,
                agent_value: parse_rate(&r.agent_value)?,
                pair_id: r.pair_id,
                metric: r.metric,
                n_human: r.n_human,
                n_agent: r.n_agent,
            });
        }
        Self::new(rows)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io("<pair table>", e))?;
        Ok(())
    }

    pub fn rows(&self) -> &[PairRow] {
        &self.rows
    }

    /// Pair ids in order of first appearance.
    pub fn pairs(&self) -> Vec<&str> {
        first_seen(self.rows.iter().map(|r| r.pair_id.as_str()))
    }

    /// Metric names in order of first appearance.
    pub fn metrics(&self) -> Vec<&str> {
        first_seen(self.rows.iter().map(|r| r.metric.as_str()))
    }

    fn metric_rows<'a>(&'a self, metric: &'a str) -> impl Iterator<Item = &'a PairRow> + 'a {
        self.rows.iter().filter(move |r| r.metric == metric)
    }
}

fn first_seen<'a>(it: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut seen = HashSet::new();
    it.filter(|s| seen.insert(*s)).collect()
}

/// Mean gaps (human − agent, in percentage points) with one pair removed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LooRow {
    /// `None` for the full-sample row.
    pub dropped: Option<String>,
    pub gaps: BTreeMap<String, f64>,
}

/// The full-sample row followed by one row per dropped pair.
pub fn leave_one_pair_out(table: &PairTable) -> Result<Vec<LooRow>> {
    let pairs = table.pairs();
    if pairs.len() < 2 {
        return Err(Error::Data(format!("leave-one-pair-out needs at least 2 pairs, got {}", pairs.len())));
    }
    let row = |dropped: Option<&str>| LooRow {
        dropped: dropped.map(str::to_string),
        gaps: table
            .metrics()
            .into_iter()
            .filter_map(|m| {
                let kept: Vec<f64> = table
                    .metric_rows(m)
                    .filter(|r| Some(r.pair_id.as_str()) != dropped)
                    .map(|r| (r.human_value - r.agent_value) * 100.0)
                    .collect();
                (!kept.is_empty()).then(|| (m.to_string(), mean(&kept)))
            })
            .collect(),
    };
    let mut out = vec![row(None)];
    out.extend(pairs.iter().map(|p| row(Some(p))));
    Ok(out)
}

/// Cross-pair spread of one metric, in percent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeterogeneityRow {
    pub metric: String,
    pub human_min: f64,
    pub human_max: f64,
    pub agent_min: f64,
    pub agent_max: f64,
    /// Lowest human rate minus highest agent rate, in percentage points.
    pub worst_gap: f64,
}

pub fn heterogeneity(table: &PairTable) -> Result<Vec<HeterogeneityRow>> {
    if table.rows.is_empty() {
        return Err(Error::Data("heterogeneity needs at least one pair".into()));
    }
    Ok(table
        .metrics()
        .into_iter()
        .map(|m| {
            let (mut hmin, mut hmax, mut amin, mut amax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
            for r in table.metric_rows(m) {
                hmin = hmin.min(r.human_value);
                hmax = hmax.max(r.human_value);
                amin = amin.min(r.agent_value);
                amax = amax.max(r.agent_value);
            }
            HeterogeneityRow {
                metric: m.to_string(),
                human_min: hmin * 100.0,
                human_max: hmax * 100.0,
                agent_min: amin * 100.0,
                agent_max: amax * 100.0,
                worst_gap: (hmin - amax) * 100.0,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_of_three_values() {
        assert!(rule_of_three(1006).unwrap() < 0.003);
        assert_eq!(rule_of_three(3).unwrap(), 1.0);
        assert!((rule_of_three(300).unwrap() - 0.01).abs() < 1e-15);
        assert!(rule_of_three(0).is_err());
    }

    #[test]
    fn mcnemar_known_values() {
        let direct = 2.0 * (1.0 + 12.0 + 66.0) / 4096.0;
        assert!((mcnemar_exact(10, 2).unwrap() - direct).abs() < 1e-12);
        assert_eq!(mcnemar_exact(1, 1), Some(1.0));
        assert!(mcnemar_exact(22, 0).unwrap() < 1e-4);
        assert_eq!(mcnemar_exact(0, 0), None);
        assert_eq!(mcnemar_exact(3, 9), mcnemar_exact(9, 3));
    }

    #[test]
    fn mcnemar_survives_large_counts() {
        let p = mcnemar_exact(5000, 5000).unwrap();
        assert!(p > 0.9 && p <= 1.0);
    }

    #[test]
    fn all_zero_differences_give_p_one() {
        let d = [0.0; 8];
        assert_eq!(sign_flip_paired(&d, 500, 1, Alternative::TwoSided).unwrap().p_value, 1.0);
        assert_eq!(sign_flip_exact(&d, Alternative::TwoSided).unwrap().p_value, 1.0);
    }

    #[test]
    fn exact_sign_flip_small_case() {
        // patterns of (1, 1): means 1, 0, 0, -1; two of four reach |1|
        let r = sign_flip_exact(&[1.0, 1.0], Alternative::TwoSided).unwrap();
        assert_eq!(r.p_value, 0.5);
        let r = sign_flip_exact(&[1.0, 1.0], Alternative::Greater).unwrap();
        assert_eq!(r.p_value, 0.25);
    }

    #[test]
    fn identical_groups_are_not_significant() {
        let s = Stratum::from_outcomes(&[true, false, true, false], &[true, false, true, false]);
        let r = permutation_test_stratified(&[s], 2000, 5, Alternative::TwoSided).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!(r.p_value >= 0.5);
    }

    #[test]
    fn empty_stratum_is_rejected() {
        let s = Stratum::from_outcomes(&[true], &[]);
        assert!(permutation_test_stratified(&[s], 10, 0, Alternative::TwoSided).is_err());
    }

    #[test]
    fn bootstrap_constant_and_errors() {
        assert_eq!(bootstrap_ci(&[0.1; 10], 100, 0.95, 3).unwrap(), (0.1, 0.1));
        assert!(bootstrap_ci(&[1.0], 100, 0.95, 3).is_err());
    }

    #[test]
    fn bootstrap_is_thread_count_independent() {
        let v: Vec<f64> = (0..50).map(|i| (i * 7 % 13) as f64).collect();
        let a = bootstrap_ci(&v, 500, 0.95, 9).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| bootstrap_ci(&v, 500, 0.95, 9).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn percent_and_fraction_inputs() {
        let csv = "pair_id,metric,reddit_value,moltbook_value\na,m,75.6%,0.069\nb,m,50%,10%\n";
        let t = PairTable::from_csv_reader(csv.as_bytes()).unwrap();
        assert!((t.rows()[0].human_value - 0.756).abs() < 1e-12);
        assert!((t.rows()[1].agent_value - 0.1).abs() < 1e-12);
    }

    #[test]
    fn duplicate_pairs_and_bad_values_are_rejected() {
        assert!(PairTable::from_csv_reader("pair_id,metric,human_value,agent_value\na,m,0.1,0.2\na,m,0.1,0.2\n".as_bytes()).is_err());
        assert!(PairTable::from_csv_reader("pair_id,metric,human_value,agent_value\na,m,1.5,0.2\n".as_bytes()).is_err());
    }

    #[test]
    fn two_identical_pairs_leave_gap_unchanged() {
        let csv = "pair_id,metric,human_value,agent_value\na,m,0.6,0.1\nb,m,0.6,0.1\n";
        let rows = leave_one_pair_out(&PairTable::from_csv_reader(csv.as_bytes()).unwrap()).unwrap();
        for r in &rows {
            assert!((r.gaps["m"] - 50.0).abs() < 1e-9);
        }
        assert_eq!(rows.len(), 3);
    }

    #[test]
    fn identical_platforms_have_nonpositive_worst_gap() {
        let csv = "pair_id,metric,human_value,agent_value\na,m,0.3,0.3\nb,m,0.5,0.5\n";
        let h = heterogeneity(&PairTable::from_csv_reader(csv.as_bytes()).unwrap()).unwrap();
        assert!(h[0].worst_gap <= 0.0);
    }
}
