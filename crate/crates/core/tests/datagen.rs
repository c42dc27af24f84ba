//! Monte-Carlo checks of the synthetic generators against independent oracles.

use bone_core::datagen::{
    gen_bandit_stream, gen_dependent_segments, gen_drift_jumps, gen_heavy_tail, gen_periodic_drift, BanditParams,
    DependentSegmentsParams, DriftJumpsParams, HeavyTailParams, StreamRecord,
};

/// Median of |T| for a Student-t with 2.01 degrees of freedom (its 0.75 quantile),
/// computed with scipy.stats.t.ppf(0.75, 2.01).
const T201_MEDIAN_ABS: f64 = 0.8156941337147179;
/// scipy.stats.t.ppf(0.75, 5).
const T5_MEDIAN_ABS: f64 = 0.7266868437979397;

fn residuals(recs: &[StreamRecord]) -> Vec<f64> {
    recs.iter()
        .map(|r| {
            let th = r.true_theta.as_ref().unwrap();
            let x = r.x[0];
            r.y[0] - (th[0] + th[1] * x + th[2] * x * x)
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn sample_var(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
}

/// P(lo <= X <= hi) for X ~ Binomial(n, p), by the pmf recursion.
fn binomial_interval(n: usize, p: f64, lo: usize, hi: usize) -> f64 {
    let mut pmf = (1.0 - p).powi(n as i32);
    let mut total = 0.0;
    for k in 0..=hi.min(n) {
        if k >= lo {
            total += pmf;
        }
        pmf *= (n - k) as f64 / (k + 1) as f64 * p / (1.0 - p);
    }
    total
}

#[test]
fn periodic_labels_are_balanced() {
    let ok = (0..100u64)
        .filter(|&s| {
            let recs = gen_periodic_drift(720, s);
            let frac = recs.iter().map(|r| r.y[0]).sum::<f64>() / 720.0;
            (0.4..=0.6).contains(&frac)
        })
        .count();
    assert!(ok >= 90, "{ok} of 100 seeds balanced");
}

fn jump_counts() -> Vec<usize> {
    (0..200u64)
        .map(|s| {
            gen_drift_jumps(1000, s, &DriftJumpsParams::default())
                .unwrap()
                .iter()
                .filter(|r| r.is_changepoint == Some(true))
                .count()
        })
        .collect()
}

/// The requested 90% coverage of [6, 14] exceeds the binomial probability of that
/// interval (about 0.85), so this fails for most seed sets.
#[test]
#[ignore = "target coverage exceeds the binomial probability of the interval"]
fn jump_count_interval_ninety_percent() {
    let ok = jump_counts().iter().filter(|&&c| (6..=14).contains(&c)).count();
    assert!(ok >= 180, "{ok} of 200 seeds in [6, 14]");
}

#[test]
fn jump_count_interval_matches_binomial() {
    let counts = jump_counts();
    let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
    assert!((mean - 9.99).abs() < 3.0 * (999.0f64 * 0.01 * 0.99 / 200.0).sqrt(), "mean {mean}");
    let p = binomial_interval(999, 0.01, 6, 14);
    let frac = counts.iter().filter(|&&c| (6..=14).contains(&c)).count() as f64 / 200.0;
    let se = (p * (1.0 - p) / 200.0).sqrt();
    assert!((frac - p).abs() < 3.0 * se, "coverage {frac} vs binomial {p}");
}

/// A t(2.01) variance estimate over 1e5 draws is dominated by a few extreme draws;
/// its median is far below 201, so the 20% band is almost never met.
#[test]
#[ignore = "sample variance of t(2.01) does not concentrate at 1e5 draws"]
fn heavy_tail_variance_near_201() {
    let recs = gen_heavy_tail(100_000, 1, &HeavyTailParams { jump_prob: 0.0, ..Default::default() }).unwrap();
    let v = sample_var(&residuals(&recs));
    assert!((v - 201.0).abs() < 0.2 * 201.0, "variance {v}");
}

#[test]
fn heavy_tail_variance_at_five_dof() {
    let params = HeavyTailParams {
        jump_prob: 0.0,
        dof: 5.0,
        scale: 1.0,
    };
    let recs = gen_heavy_tail(100_000, 2, &params).unwrap();
    let v = sample_var(&residuals(&recs));
    assert!((v - 5.0 / 3.0).abs() < 0.2 * 5.0 / 3.0, "variance {v}");
    let m = median(residuals(&recs).iter().map(|r| r.abs()).collect());
    assert!((m - T5_MEDIAN_ABS).abs() < 0.05 * T5_MEDIAN_ABS, "median {m}");
}

#[test]
fn heavy_tail_median_abs_residual() {
    let recs = gen_heavy_tail(100_000, 3, &HeavyTailParams::default()).unwrap();
    let m = median(residuals(&recs).iter().map(|r| r.abs()).collect());
    assert!((m - T201_MEDIAN_ABS).abs() < 0.05 * T201_MEDIAN_ABS, "median {m}");
}

fn boundary_fraction(seeds: std::ops::Range<u64>) -> f64 {
    let (mut hits, mut total) = (0usize, 0usize);
    for s in seeds {
        for r in gen_bandit_stream(10_000, s, &BanditParams::default()).unwrap() {
            let p = r.arm_probs.unwrap();
            hits += p.iter().filter(|&&v| v == 0.0 || v == 1.0).count();
            total += p.len();
        }
    }
    hits as f64 / total as f64
}

/// The atom of a clipped zero-drift Gaussian walk at each wall is about
/// `sd / sqrt(2)` times the interior density, about 0.04 in total for sd 0.03.
#[test]
#[ignore = "boundary mass of the clipped walk is about 0.04, not above 0.2"]
fn bandit_boundary_fraction_above_fifth() {
    let f = boundary_fraction(0..5);
    assert!(f > 0.2, "boundary fraction {f}");
}

#[test]
fn bandit_boundary_fraction_matches_ladder_height() {
    let f = boundary_fraction(0..5);
    // interior density ~ 1 / (1 + 2a), atom a = sd * E[ladder height of N(0,1)] = sd / sqrt(2)
    let a = 0.03 / 2f64.sqrt();
    let expected = 2.0 * a / (1.0 + 2.0 * a);
    assert!((0.02..=0.08).contains(&f), "boundary fraction {f}");
    assert!((f - expected).abs() < 0.5 * expected, "boundary fraction {f} vs {expected}");
}

#[test]
fn bandit_increments_are_bounded_by_the_walk() {
    let recs = gen_bandit_stream(2000, 4, &BanditParams::default()).unwrap();
    let mut diffs = Vec::new();
    for w in recs.windows(2) {
        let (a, b) = (w[0].arm_probs.as_ref().unwrap(), w[1].arm_probs.as_ref().unwrap());
        diffs.extend((a - b).iter().copied());
    }
    let sd = sample_var(&diffs).sqrt();
    assert!(sd <= 0.03, "increment sd {sd}");
}

#[test]
fn segment_count_mean() {
    let mean = (0..100u64)
        .map(|s| {
            1 + gen_dependent_segments(500, s, &DependentSegmentsParams::default())
                .unwrap()
                .iter()
                .filter(|r| r.is_changepoint == Some(true))
                .count()
        })
        .sum::<usize>() as f64
        / 100.0;
    assert!((3.0..=7.0).contains(&mean), "mean segments {mean}");
}

#[test]
fn single_segment_without_hazard() {
    let params = DependentSegmentsParams {
        hazard: 0.0,
        ..Default::default()
    };
    let recs = gen_dependent_segments(300, 9, &params).unwrap();
    assert!(recs.iter().all(|r| r.true_theta == recs[0].true_theta));
}
