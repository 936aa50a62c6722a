//! Cross-checks the statistical tests against a from-scratch reference
//! implementation (including its own regularized incomplete beta/gamma
//! functions), kept deliberately independent of the library code path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use veracity_core::evaluation::{kruskal_wallis, two_sample_t_test, TTestVariant};

// ---------------------------------------------------------------------------
// Reference implementations (test-only)
// ---------------------------------------------------------------------------

fn ref_mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn ref_t_statistic(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let (m1, m2) = (ref_mean(a), ref_mean(b));
    let ss1: f64 = a.iter().map(|x| (x - m1).powi(2)).sum();
    let ss2: f64 = b.iter().map(|x| (x - m2).powi(2)).sum();
    let df = n1 + n2 - 2.0;
    let pooled = (ss1 + ss2) / df;
    let t = (m1 - m2) / (pooled * (1.0 / n1 + 1.0 / n2)).sqrt();
    (t, df)
}

/// Ranks via explicit tie groups over the pooled, index-sorted sample.
fn ref_ranks(pooled: &[f64]) -> Vec<f64> {
    let n = pooled.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start;
        while end + 1 < n && pooled[idx[end + 1]] == pooled[idx[start]] {
            end += 1;
        }
        let rank = (start + 1 + end + 1) as f64 / 2.0;
        for &k in &idx[start..=end] {
            ranks[k] = rank;
        }
        start = end + 1;
    }
    ranks
}

fn ref_h_statistic(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() + b.len();
    let mut pooled = a.to_vec();
    pooled.extend_from_slice(b);
    let ranks = ref_ranks(&pooled);
    let nf = n as f64;
    let r1: f64 = ranks[..a.len()].iter().sum();
    let r2: f64 = ranks[a.len()..].iter().sum();
    let h = 12.0 / (nf * (nf + 1.0)) * (r1.powi(2) / a.len() as f64 + r2.powi(2) / b.len() as f64)
        - 3.0 * (nf + 1.0);
    let mut sorted = pooled;
    sorted.sort_by(f64::total_cmp);
    let mut ties = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        ties += t.powi(3) - t;
        i = j + 1;
    }
    let correction = 1.0 - ties / (nf.powi(3) - nf);
    if correction <= 0.0 {
        0.0
    } else {
        (h / correction).max(0.0)
    }
}

#[allow(clippy::excessive_precision)] // canonical Lanczos table
fn ref_ln_gamma(x: f64) -> f64 {
    // Lanczos approximation, g = 7, n = 9
    const COEFFS: [f64; 9] = [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        (pi / (pi * x).sin()).ln() - ref_ln_gamma(1.0 - x)
    } else {
        let x = x - 1.0;
        let mut acc = COEFFS[0];
        for (i, &c) in COEFFS.iter().enumerate().skip(1) {
            acc += c / (x + i as f64);
        }
        let t = x + 7.5;
        0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
    }
}

/// Regularized incomplete beta via the Lentz continued fraction.
fn ref_beta_inc(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - (ref_ln_gamma(a) + ref_ln_gamma(b) - ref_ln_gamma(a + b));
    let front = ln_front.exp();
    let sym = x < (a + 1.0) / (a + b + 2.0);
    let (a, b, x) = if sym { (a, b, x) } else { (b, a, 1.0 - x) };
    // modified Lentz
    let tiny = 1e-300;
    let mut c = 1.0;
    let mut d = 1.0 - (a + b) * x / (a + 1.0);
    if d.abs() < tiny {
        d = tiny;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..300 {
        let m = m as f64;
        let numerator = m * (b - m) * x / ((a + 2.0 * m - 1.0) * (a + 2.0 * m));
        d = 1.0 + numerator * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + numerator / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        h *= d * c;
        let numerator = -(a + m) * (a + b + m) * x / ((a + 2.0 * m) * (a + 2.0 * m + 1.0));
        d = 1.0 + numerator * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + numerator / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-15 {
            break;
        }
    }
    if sym {
        front / a * h
    } else {
        1.0 - front / a * h
    }
}

/// Two-sided Student-t p-value through the incomplete beta identity.
fn ref_t_p_value(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    ref_beta_inc(df / 2.0, 0.5, x)
}

/// Lower regularized incomplete gamma by series expansion.
fn ref_gamma_inc_lower(s: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let mut term = 1.0 / s;
    let mut sum = term;
    for k in 1..500 {
        term *= x / (s + k as f64);
        sum += term;
        if term.abs() < sum.abs() * 1e-16 {
            break;
        }
    }
    (sum.ln() + s * x.ln() - x - ref_ln_gamma(s)).exp()
}

fn ref_chi2_sf(x: f64, df: f64) -> f64 {
    (1.0 - ref_gamma_inc_lower(df / 2.0, x / 2.0)).clamp(0.0, 1.0)
}

// ---------------------------------------------------------------------------
// Cross-checks
// ---------------------------------------------------------------------------

#[test]
fn twenty_seeded_pairs_match_the_reference_within_1e9() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..20 {
        let n1 = rng.random_range(5..40);
        let n2 = rng.random_range(5..40);
        let quantize = case % 3 == 0; // force ties in a third of the cases
        let mut draw = |n: usize, shift: f64| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let v: f64 = rng.random_range(0.0..1.0) + shift;
                    if quantize {
                        (v * 20.0).round() / 20.0
                    } else {
                        v
                    }
                })
                .collect()
        };
        let a = draw(n1, 0.0);
        let b = draw(n2, 0.15);

        let t = two_sample_t_test(&a, &b, TTestVariant::Pooled).unwrap();
        let (t_ref, df_ref) = ref_t_statistic(&a, &b);
        assert!(
            (t.statistic - t_ref).abs() < 1e-9,
            "case {case}: T {} vs reference {t_ref}",
            t.statistic
        );
        assert_eq!(t.df, df_ref);
        let p_ref = ref_t_p_value(t_ref, df_ref);
        assert!(
            (t.p_value - p_ref).abs() < 1e-9,
            "case {case}: t p {} vs reference {p_ref}",
            t.p_value
        );

        let h = kruskal_wallis(&a, &b).unwrap();
        let h_ref = ref_h_statistic(&a, &b);
        assert!(
            (h.statistic - h_ref).abs() < 1e-9,
            "case {case}: H {} vs reference {h_ref}",
            h.statistic
        );
        let hp_ref = ref_chi2_sf(h_ref, 1.0);
        assert!(
            (h.p_value - hp_ref).abs() < 1e-9,
            "case {case}: H p {} vs reference {hp_ref}",
            h.p_value
        );

        for p in [t.p_value, h.p_value] {
            assert!((0.0..=1.0).contains(&p));
        }
    }
}

#[test]
fn reference_special_functions_hit_known_values() {
    // ln Gamma(5) = ln 24
    assert!((ref_ln_gamma(5.0) - 24.0f64.ln()).abs() < 1e-12);
    // regularized incomplete beta at symmetric point: I_{1/2}(a, a) = 1/2
    assert!((ref_beta_inc(3.0, 3.0, 0.5) - 0.5).abs() < 1e-12);
    // chi-square(1) survival at 3.841459 is ~0.05
    assert!((ref_chi2_sf(3.841458820694124, 1.0) - 0.05).abs() < 1e-9);
}
