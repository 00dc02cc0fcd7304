use rand::Rng;
use threadloop::seed::indexed_rng;
use threadloop::stats::{mcnemar_exact, permutation_test_stratified, sign_flip_exact, sign_flip_paired, Alternative, Stratum};

/// Two-sided sign-flip p-value by enumeration, in integers.
fn sign_flip_oracle(d: &[i64]) -> f64 {
    let obs: i64 = d.iter().sum::<i64>().abs();
    let n = d.len();
    let hits = (0u64..1 << n)
        .filter(|mask| {
            let s: i64 = d.iter().enumerate().map(|(j, &x)| if mask >> j & 1 == 1 { -x } else { x }).sum();
            s.abs() >= obs
        })
        .count();
    hits as f64 / (1u64 << n) as f64
}

/// Two-sided stratified permutation p-value by enumerating every relabelling
/// of every stratum's units.
fn permutation_oracle(strata: &[(usize, usize, usize, usize)]) -> f64 {
    // Gap of a stratum scaled by a common denominator so sums stay integral.
    let denom: i128 = strata.iter().map(|&(a, _, b, _)| (a * b) as i128).product();
    let gap = |a_n: usize, b_n: usize, a_ev: usize, total: usize| -> i128 {
        let num = (a_ev * b_n) as i128 - ((total - a_ev) * a_n) as i128;
        num * denom / (a_n * b_n) as i128
    };
    let observed: i128 = strata.iter().map(|&(a, ae, b, be)| gap(a, b, ae, ae + be)).sum();
    // Per stratum: the multiset of scaled gaps over all subsets of units.
    let per: Vec<Vec<i128>> = strata
        .iter()
        .map(|&(a, ae, b, be)| {
            let n = a + b;
            let units: Vec<bool> = (0..n).map(|i| i < ae + be).collect();
            (0u32..1 << n)
                .filter(|m| m.count_ones() as usize == a)
                .map(|m| {
                    let ev = (0..n).filter(|&i| m >> i & 1 == 1 && units[i]).count();
                    gap(a, b, ev, ae + be)
                })
                .collect()
        })
        .collect();
    let mut sums = vec![0i128];
    for p in &per {
        sums = sums.iter().flat_map(|s| p.iter().map(move |g| s + g)).collect();
    }
    sums.iter().filter(|s| s.abs() >= observed.abs()).count() as f64 / sums.len() as f64
}

#[test]
fn monte_carlo_sign_flip_matches_enumeration() {
    let mut rng = indexed_rng(2024, 0);
    for case in 0..20u64 {
        let n = rng.random_range(1..=12);
        let d: Vec<i64> = (0..n).map(|_| rng.random_range(-5..=5)).collect();
        let df: Vec<f64> = d.iter().map(|&x| x as f64).collect();
        let exact = sign_flip_oracle(&d);
        let lib_exact = sign_flip_exact(&df, Alternative::TwoSided).unwrap().p_value;
        assert!((lib_exact - exact).abs() < 1e-12, "case {case}");
        let mc = sign_flip_paired(&df, 20_000, case, Alternative::TwoSided).unwrap().p_value;
        assert!((mc - exact).abs() <= 0.01, "case {case}: {d:?} mc {mc} exact {exact}");
    }
}

#[test]
fn stratified_permutation_matches_enumeration() {
    let mut rng = indexed_rng(77, 1);
    for case in 0..20u64 {
        let k = rng.random_range(1..=3);
        let mut budget = 12usize;
        let mut strata = Vec::new();
        for _ in 0..k {
            if budget < 2 {
                break;
            }
            let a = rng.random_range(1..=(budget - 1).min(5));
            let b = rng.random_range(1..=(budget - a).min(5));
            budget -= a + b;
            strata.push((a, rng.random_range(0..=a), b, rng.random_range(0..=b)));
        }
        let exact = permutation_oracle(&strata);
        let lib: Vec<Stratum> = strata
            .iter()
            .map(|&(a, ae, b, be)| Stratum {
                a_n: a as u64,
                a_events: ae as u64,
                b_n: b as u64,
                b_events: be as u64,
            })
            .collect();
        let p = permutation_test_stratified(&lib, 20_000, case, Alternative::TwoSided).unwrap().p_value;
        assert!((p - exact).abs() <= 0.02, "case {case}: {strata:?} mc {p} exact {exact}");
    }
}

#[test]
fn mcnemar_matches_binomial_sum() {
    // Two-sided: 2 * P(X <= 2), X ~ Bin(12, 1/2) = 2 * (1 + 12 + 66) / 4096.
    let direct = 2.0 * (1.0 + 12.0 + 66.0) / 4096.0;
    let p = mcnemar_exact(10, 2).unwrap();
    assert!((p - direct).abs() < 1e-12);
    assert!((p - 0.03857).abs() < 1e-4);
    assert_eq!(mcnemar_exact(0, 0), None);
    assert_eq!(mcnemar_exact(3, 3), Some(1.0));
}
