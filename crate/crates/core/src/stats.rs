//! One-way ANOVA, the F distribution, histograms and empirical CDFs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulate::OffsetTrial;

const BETA_EPS: f64 = 1e-15;
const BETA_MAX_ITER: usize = 10_000;
const TINY: f64 = 1e-300;

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for `I_x(a, b)` (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=BETA_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < BETA_EPS {
            break;
        }
    }
    h
}

/// Regularised incomplete beta function `I_x(a, b)`.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) || !(0.0..=1.0).contains(&x) {
        return Err(Error::domain(format!("incomplete beta needs a, b > 0 and x in [0, 1]; got x={x} a={a} b={b}")));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(x);
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    Ok(if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    })
}

/// CDF of the F distribution with `(d1, d2)` degrees of freedom.
pub fn f_cdf(f: f64, d1: f64, d2: f64) -> Result<f64> {
    if f <= 0.0 {
        return Ok(0.0);
    }
    if f.is_infinite() {
        return Ok(1.0);
    }
    regularized_incomplete_beta(d1 * f / (d1 * f + d2), d1 / 2.0, d2 / 2.0)
}

/// Upper tail `P(F > f)`, computed directly rather than as `1 - cdf`.
pub fn f_sf(f: f64, d1: f64, d2: f64) -> Result<f64> {
    if f <= 0.0 {
        return Ok(1.0);
    }
    if f.is_infinite() {
        return Ok(0.0);
    }
    regularized_incomplete_beta(d2 / (d2 + d1 * f), d2 / 2.0, d1 / 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f_statistic: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub p_value: f64,
    pub group_means: Vec<f64>,
    pub grand_mean: f64,
    pub ss_between: f64,
    pub ss_within: f64,
    /// Zero within-group variance with unequal means.
    pub degenerate: bool,
}

impl AnovaResult {
    pub fn to_key_value(&self, prefix: &str) -> String {
        format!(
            "{prefix}.f_statistic = {}\n{prefix}.df_between = {}\n{prefix}.df_within = {}\n{prefix}.p_value = {}\n{prefix}.grand_mean = {}\n{prefix}.degenerate = {}\n",
            self.f_statistic, self.df_between, self.df_within, self.p_value, self.grand_mean, self.degenerate
        )
    }
}

/// Order-independent sum: values are sorted first so any permutation of the
/// input gives a bit-identical result.
fn stable_sum(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

pub fn one_way_anova(groups: &[Vec<f64>]) -> Result<AnovaResult> {
    let k = groups.len();
    if k < 2 {
        return Err(Error::domain(format!("ANOVA needs at least 2 groups, got {k}")));
    }
    if let Some(g) = groups.iter().find(|g| g.len() < 2) {
        return Err(Error::domain(format!("every ANOVA group needs >= 2 values, found {}", g.len())));
    }
    if groups.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::domain("ANOVA input contains non-finite values"));
    }
    let n: usize = groups.iter().map(Vec::len).sum();
    let mut all: Vec<f64> = groups.iter().flatten().copied().collect();
    let grand_mean = stable_sum(&mut all) / n as f64;

    let mut group_means = Vec::with_capacity(k);
    let mut ssw_parts = Vec::with_capacity(k);
    let mut ssb_parts = Vec::with_capacity(k);
    for g in groups {
        let mut v = g.clone();
        let m = stable_sum(&mut v) / v.len() as f64;
        let mut sq: Vec<f64> = v.iter().map(|x| (x - m).powi(2)).collect();
        ssw_parts.push(stable_sum(&mut sq));
        ssb_parts.push(v.len() as f64 * (m - grand_mean).powi(2));
        group_means.push(m);
    }
    let ss_within: f64 = ssw_parts.iter().sum();
    let ss_between: f64 = ssb_parts.iter().sum();
    let (df_between, df_within) = (k - 1, n - k);

    let scale = all.iter().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let ssw_zero = ss_within <= 1e-24 * scale * scale * n as f64;
    let ssb_zero = ss_between <= 1e-24 * scale * scale * n as f64;
    let (f_statistic, p_value, degenerate) = match (ssw_zero, ssb_zero) {
        (_, true) => (0.0, 1.0, false),
        (true, false) => (f64::INFINITY, 0.0, true),
        _ => {
            let f = (ss_between / df_between as f64) / (ss_within / df_within as f64);
            (f, f_sf(f, df_between as f64, df_within as f64)?.clamp(0.0, 1.0), false)
        }
    };
    Ok(AnovaResult {
        f_statistic,
        df_between,
        df_within,
        p_value,
        group_means,
        grand_mean,
        ss_between,
        ss_within,
        degenerate,
    })
}

/// Groups `values` by `levels` (ascending level order) and runs one-way ANOVA.
pub fn anova_by_level(levels: &[f64], values: &[f64]) -> Result<AnovaResult> {
    if levels.len() != values.len() {
        return Err(Error::domain("levels and values must have equal length"));
    }
    let mut keys: Vec<f64> = levels.to_vec();
    keys.sort_by(f64::total_cmp);
    keys.dedup();
    let groups: Vec<Vec<f64>> = keys
        .iter()
        .map(|k| {
            levels
                .iter()
                .zip(values)
                .filter(|(l, _)| *l == k)
                .map(|(_, v)| *v)
                .collect()
        })
        .collect();
    one_way_anova(&groups)
}

/// Separate one-way ANOVAs of position error against each offset factor.
pub fn offset_anova(table: &[OffsetTrial]) -> Result<(AnovaResult, AnovaResult)> {
    if table.is_empty() {
        return Err(Error::domain("offset table is empty"));
    }
    let err: Vec<f64> = table.iter().map(|t| t.position_error_m).collect();
    let l2: Vec<f64> = table.iter().map(|t| t.offset2_level).collect();
    let l3: Vec<f64> = table.iter().map(|t| t.offset3_level).collect();
    Ok((anova_by_level(&l2, &err)?, anova_by_level(&l3, &err)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DistributionTable {
    Histogram {
        /// `counts.len() + 1` edges; bin `i` is `[edges[i], edges[i+1])`.
        edges: Vec<f64>,
        counts: Vec<usize>,
    },
    Cdf {
        values: Vec<f64>,
        fractions: Vec<f64>,
    },
}

impl DistributionTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        match self {
            DistributionTable::Histogram { edges, counts } => {
                out.push_str("lower,upper,count\n");
                for (i, c) in counts.iter().enumerate() {
                    out.push_str(&format!("{},{},{}\n", edges[i], edges[i + 1], c));
                }
            }
            DistributionTable::Cdf { values, fractions } => {
                out.push_str("value,fraction\n");
                for (v, f) in values.iter().zip(fractions) {
                    out.push_str(&format!("{v},{f}\n"));
                }
            }
        }
        out
    }
}

/// Fixed-width histogram with edges at multiples of `bin_width`, covering
/// `[floor(min/w)·w, ...)` up to and including the maximum.
pub fn histogram(values: &[f64], bin_width: f64) -> Result<DistributionTable> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    histogram_from(values, bin_width, (min / bin_width).floor() * bin_width)
}

/// Histogram whose first edge is `origin` (which must not exceed the minimum).
pub fn histogram_from(values: &[f64], bin_width: f64, origin: f64) -> Result<DistributionTable> {
    if values.is_empty() || !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::domain("histogram needs values and a positive bin width"));
    }
    if values.iter().any(|v| !v.is_finite()) || !origin.is_finite() {
        return Err(Error::domain("histogram input contains non-finite values"));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if origin > min {
        return Err(Error::domain(format!("histogram origin {origin} exceeds minimum {min}")));
    }
    let bin_of = |v: f64| ((v - origin) / bin_width).floor() as usize;
    let nb = bin_of(max) + 1;
    let mut counts = vec![0usize; nb];
    for &v in values {
        counts[bin_of(v).min(nb - 1)] += 1;
    }
    let edges = (0..=nb).map(|i| origin + i as f64 * bin_width).collect();
    Ok(DistributionTable::Histogram { edges, counts })
}

/// Empirical CDF evaluated at each distinct value.
pub fn cdf(values: &[f64]) -> Result<DistributionTable> {
    if values.is_empty() || values.iter().any(|v| v.is_nan()) {
        return Err(Error::domain("CDF needs non-empty, non-NaN values"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut xs = Vec::new();
    let mut fr = Vec::new();
    for (i, &x) in v.iter().enumerate() {
        if i + 1 < v.len() && v[i + 1] == x {
            continue;
        }
        xs.push(x);
        fr.push((i + 1) as f64 / n);
    }
    Ok(DistributionTable::Cdf {
        values: xs,
        fractions: fr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, FisherSnedecor};
    use statrs::function::beta::beta_reg;
    use statrs::function::gamma::ln_gamma as ref_ln_gamma;

    #[test]
    fn hand_example() {
        let r = one_way_anova(&[vec![1.0, 2.0, 3.0], vec![2.0, 3.0, 4.0], vec![3.0, 4.0, 5.0]]).unwrap();
        assert!((r.ss_between - 6.0).abs() < 1e-12);
        assert!((r.ss_within - 6.0).abs() < 1e-12);
        assert!((r.f_statistic - 3.0).abs() < 1e-12);
        assert_eq!((r.df_between, r.df_within), (2, 6));
        assert!((r.p_value - 0.125).abs() < 1e-3, "{}", r.p_value);
        assert_eq!(r.grand_mean, 3.0);
    }

    #[test]
    fn identical_groups() {
        let g = vec![1.0, 2.0, 7.0];
        let r = one_way_anova(&[g.clone(), g.clone(), g]).unwrap();
        assert_eq!(r.f_statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn degenerate_cases() {
        let r = one_way_anova(&[vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        assert!(r.degenerate && r.p_value == 0.0);
        let r = one_way_anova(&[vec![3.0, 3.0], vec![3.0, 3.0]]).unwrap();
        assert!(!r.degenerate && r.f_statistic == 0.0 && r.p_value == 1.0);
        assert!(one_way_anova(&[vec![1.0, 2.0]]).is_err());
        assert!(one_way_anova(&[vec![1.0, 2.0], vec![1.0]]).is_err());
    }

    #[test]
    fn special_functions_match_reference() {
        for &x in &[0.1, 0.5, 1.0, 2.5, 7.0, 33.3, 171.0] {
            assert!((ln_gamma(x) - ref_ln_gamma(x)).abs() < 1e-10 * (1.0 + ref_ln_gamma(x).abs()), "{x}");
        }
        for &(a, b) in &[(0.5, 0.5), (1.0, 3.0), (2.5, 7.5), (10.0, 200.0), (1.5, 4998.0)] {
            for i in 1..20 {
                let x = i as f64 / 20.0;
                let got = regularized_incomplete_beta(x, a, b).unwrap();
                let want = beta_reg(a, b, x);
                assert!((got - want).abs() < 1e-10, "a={a} b={b} x={x}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn f_cdf_spot_values() {
        for &(d1, d2) in &[(1.0, 1.0), (2.0, 6.0), (3.0, 9996.0), (5.0, 20.0), (30.0, 40.0)] {
            let dist = FisherSnedecor::new(d1, d2).unwrap();
            for &f in &[0.05, 0.5, 1.0, 1.7, 3.0, 10.0, 50.0] {
                let got = f_cdf(f, d1, d2).unwrap();
                assert!((got - dist.cdf(f)).abs() < 1e-8, "F({d1},{d2}) at {f}");
                assert!((f_sf(f, d1, d2).unwrap() - (1.0 - dist.cdf(f))).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn histogram_hand_example() {
        let h = histogram(&[0.0, 10.0, 20.0], 15.0).unwrap();
        assert_eq!(
            h,
            DistributionTable::Histogram {
                edges: vec![0.0, 15.0, 30.0],
                counts: vec![2, 1]
            }
        );
        let h = histogram(&[4.0], 1.0).unwrap();
        assert!(matches!(h, DistributionTable::Histogram { ref counts, .. } if counts == &vec![1]));
        assert!(histogram(&[], 1.0).is_err());
        assert!(histogram(&[1.0], 0.0).is_err());
        assert_eq!(
            cdf(&[4.0]).unwrap(),
            DistributionTable::Cdf {
                values: vec![4.0],
                fractions: vec![1.0]
            }
        );
    }

    #[test]
    fn offsets_constant_error() {
        let table: Vec<OffsetTrial> = (0..32)
            .map(|i| OffsetTrial {
                index: i,
                offset2_level: [0.0, 0.25, 0.5, 0.75][(i % 4) as usize],
                offset3_level: [0.0, 0.25, 0.5, 0.75][((i / 4) % 4) as usize],
                position_error_m: 1.5,
            })
            .collect();
        let (a, b) = offset_anova(&table).unwrap();
        assert_eq!((a.p_value, b.p_value), (1.0, 1.0));
    }

    proptest! {
        #[test]
        fn sum_of_squares_identity(groups in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 2..12), 2..6)) {
            let r = one_way_anova(&groups).unwrap();
            let all: Vec<f64> = groups.iter().flatten().copied().collect();
            let sst: f64 = all.iter().map(|v| (v - r.grand_mean).powi(2)).sum();
            prop_assert!((r.ss_between + r.ss_within - sst).abs() <= 1e-9 * sst.max(1e-300));
            prop_assert!((0.0..=1.0).contains(&r.p_value));
        }

        #[test]
        fn p_decreases_with_f(f1 in 0.01f64..20.0, f2 in 0.01f64..20.0, d1 in 1u32..10, d2 in 2u32..200) {
            let (lo, hi) = if f1 < f2 { (f1, f2) } else { (f2, f1) };
            prop_assert!(f_sf(hi, d1 as f64, d2 as f64).unwrap() <= f_sf(lo, d1 as f64, d2 as f64).unwrap());
        }

        #[test]
        fn permutation_invariance(mut rows in prop::collection::vec((0usize..4, 0usize..4, 0.0f64..50.0), 40..120), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let lv = [0.0, 0.25, 0.5, 0.75];
            // make sure every level has two members
            for (i, r) in rows.iter_mut().take(8).enumerate() { r.0 = i % 4; r.1 = i % 4; }
            let mk = |r: &[(usize, usize, f64)]| -> Vec<OffsetTrial> {
                r.iter().enumerate().map(|(i, &(a, b, e))| OffsetTrial {
                    index: i as u64, offset2_level: lv[a], offset3_level: lv[b], position_error_m: e,
                }).collect()
            };
            let base = offset_anova(&mk(&rows)).unwrap();
            rows.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let perm = offset_anova(&mk(&rows)).unwrap();
            prop_assert_eq!(base.0.f_statistic.to_bits(), perm.0.f_statistic.to_bits());
            prop_assert_eq!(base.1.p_value.to_bits(), perm.1.p_value.to_bits());
            prop_assert_eq!(base, perm);
        }

        #[test]
        fn cdf_monotone(v in prop::collection::vec(-1e6f64..1e6, 1..100)) {
            match cdf(&v).unwrap() {
                DistributionTable::Cdf { values, fractions } => {
                    prop_assert!(values.windows(2).all(|w| w[0] < w[1]));
                    prop_assert!(fractions.windows(2).all(|w| w[0] <= w[1]));
                    prop_assert_eq!(*fractions.last().unwrap(), 1.0);
                }
                _ => unreachable!(),
            }
            let mut r = v.clone();
            r.reverse();
            prop_assert_eq!(cdf(&v).unwrap(), cdf(&r).unwrap());
            prop_assert_eq!(histogram(&v, 1000.0).unwrap(), histogram(&r, 1000.0).unwrap());
            if let DistributionTable::Histogram { counts, .. } = histogram(&v, 1000.0).unwrap() {
                prop_assert_eq!(counts.iter().sum::<usize>(), v.len());
            }
        }
    }
}
