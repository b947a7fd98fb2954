//! Two-sample statistics over option counts, plus entropy and 1-D
//! Wasserstein distance.
//!
//! Option order is the ordinal scale for the CDF-based statistics. The KS
//! and Wasserstein values are computed from integer CDF gaps
//! `|A_j * n2 - B_j * n1|` (A, B cumulative counts) so that equal values from
//! different count vectors compare equal bit for bit.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::survey::ContingencyPair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StatKind {
    T1,
    Tks,
    Wasserstein,
    Entropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatValue {
    pub kind: StatKind,
    pub value: f64,
}

/// A statistic of two aligned count vectors. Implementations may assume both
/// vectors have the same length and both sums are positive.
pub trait CountStatistic: Sync {
    fn evaluate(&self, z_human: &[u64], z_llm: &[u64]) -> f64;
}

impl<F> CountStatistic for F
where
    F: Fn(&[u64], &[u64]) -> f64 + Sync,
{
    fn evaluate(&self, z_human: &[u64], z_llm: &[u64]) -> f64 {
        self(z_human, z_llm)
    }
}

/// The built-in two-sample statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Statistic {
    T1,
    Ks,
    Wasserstein,
}

impl Statistic {
    pub fn kind(self) -> StatKind {
        match self {
            Statistic::T1 => StatKind::T1,
            Statistic::Ks => StatKind::Tks,
            Statistic::Wasserstein => StatKind::Wasserstein,
        }
    }
}

impl CountStatistic for Statistic {
    fn evaluate(&self, z_human: &[u64], z_llm: &[u64]) -> f64 {
        match self {
            Statistic::T1 => t1_counts(z_human, z_llm),
            Statistic::Ks => ks_counts(z_human, z_llm),
            Statistic::Wasserstein => wasserstein_counts(z_human, z_llm),
        }
    }
}

pub(crate) fn t1_counts(z_human: &[u64], z_llm: &[u64]) -> f64 {
    let n1: u64 = z_human.iter().sum();
    let n2: u64 = z_llm.iter().sum();
    let n = (n1 + n2) as f64;
    let (n1, n2) = (n1 as f64, n2 as f64);
    let mut total = 0.0;
    for (&a, &b) in z_human.iter().zip(z_llm) {
        let pooled = (a + b) as f64;
        if pooled == 0.0 {
            // 0/0 for an option nobody chose: contributes nothing.
            continue;
        }
        let e1 = n1 * pooled / n;
        let e2 = n2 * pooled / n;
        let d1 = a as f64 - e1;
        let d2 = b as f64 - e2;
        total += d1 * d1 / e1 + d2 * d2 / e2;
    }
    total
}

fn cdf_gaps<'a>(z_human: &'a [u64], z_llm: &'a [u64]) -> impl Iterator<Item = u128> + 'a {
    let n1: u128 = z_human.iter().map(|&c| c as u128).sum();
    let n2: u128 = z_llm.iter().map(|&c| c as u128).sum();
    let (mut a, mut b) = (0u128, 0u128);
    z_human.iter().zip(z_llm).map(move |(&x, &y)| {
        a += x as u128;
        b += y as u128;
        (a * n2).abs_diff(b * n1)
    })
}

fn scaled_gap_total(z_human: &[u64], z_llm: &[u64], gap_sum: u128) -> f64 {
    let n1: u64 = z_human.iter().sum();
    let n2: u64 = z_llm.iter().sum();
    gap_sum as f64 / (n1 as f64 * n2 as f64)
}

pub(crate) fn ks_counts(z_human: &[u64], z_llm: &[u64]) -> f64 {
    let max = cdf_gaps(z_human, z_llm).max().unwrap_or(0);
    scaled_gap_total(z_human, z_llm, max)
}

pub(crate) fn wasserstein_counts(z_human: &[u64], z_llm: &[u64]) -> f64 {
    let sum = cdf_gaps(z_human, z_llm).sum();
    scaled_gap_total(z_human, z_llm, sum)
}

fn checked(pair: &ContingencyPair) -> Result<()> {
    if pair.n1() + pair.n2() == 0 {
        return Err(Error::EmptyCounts);
    }
    pair.check_testable()
}

/// Chi-squared-style two-sample statistic over option frequencies.
/// Options chosen by nobody contribute 0.
pub fn t1_statistic(pair: &ContingencyPair) -> Result<StatValue> {
    checked(pair)?;
    Ok(StatValue {
        kind: StatKind::T1,
        value: t1_counts(pair.z_human(), pair.z_llm()),
    })
}

/// Largest absolute gap between the two empirical CDFs.
pub fn ks_statistic(pair: &ContingencyPair) -> Result<StatValue> {
    checked(pair)?;
    Ok(StatValue {
        kind: StatKind::Tks,
        value: ks_counts(pair.z_human(), pair.z_llm()),
    })
}

/// W1 distance on the option index line with unit spacing: the L1 distance
/// between the two CDFs.
pub fn wasserstein_1d(pair: &ContingencyPair) -> Result<StatValue> {
    checked(pair)?;
    Ok(StatValue {
        kind: StatKind::Wasserstein,
        value: wasserstein_counts(pair.z_human(), pair.z_llm()),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    cumulative: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptyCounts);
        }
        let mut running = 0u64;
        let cumulative = counts
            .iter()
            .map(|&c| {
                running += c;
                running as f64 / total as f64
            })
            .collect();
        Ok(Self { cumulative })
    }

    pub fn values(&self) -> &[f64] {
        &self.cumulative
    }
}

pub fn empirical_cdf(counts: &[u64]) -> Result<EmpiricalCdf> {
    EmpiricalCdf::from_counts(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LogBase {
    #[default]
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "e")]
    E,
}

impl LogBase {
    fn ln(self) -> f64 {
        match self {
            LogBase::Two => std::f64::consts::LN_2,
            LogBase::E => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LogBase::Two => "2",
            LogBase::E => "e",
        }
    }
}

impl FromStr for LogBase {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "2" => Ok(LogBase::Two),
            "e" => Ok(LogBase::E),
            other => Err(format!("entropy base must be 2 or e, got {other:?}")),
        }
    }
}

/// Shannon entropy of the distribution given by `counts`, with 0 log 0 = 0.
pub fn shannon_entropy(counts: &[u64], base: LogBase) -> Result<StatValue> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::EmptyCounts);
    }
    let total = total as f64;
    let nats: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum();
    Ok(StatValue {
        kind: StatKind::Entropy,
        value: (nats / base.ln()).max(0.0),
    })
}

/// Entropy of a probability vector, 0 log 0 = 0.
pub fn shannon_entropy_probs(p: &[f64], base: LogBase) -> f64 {
    let nats: f64 = p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum();
    (nats / base.ln()).max(0.0)
}

/// W1 between two probability vectors on the unit-spaced option line.
pub fn wasserstein_probs(p: &[f64], q: &[f64]) -> f64 {
    let (mut a, mut b, mut total) = (0.0, 0.0, 0.0);
    for (x, y) in p.iter().zip(q) {
        a += x;
        b += y;
        total += (a - b).abs();
    }
    // the final CDF gap is 0 up to rounding
    total - (a - b).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair(h: &[u64], l: &[u64]) -> ContingencyPair {
        ContingencyPair::from_counts(h.to_vec(), l.to_vec()).unwrap()
    }

    // Direct transcription of the T1 formula with explicit combined
    // proportions; independent of `t1_counts`.
    fn t1_oracle(h: &[u64], l: &[u64]) -> f64 {
        let n1 = h.iter().sum::<u64>() as f64;
        let n2 = l.iter().sum::<u64>() as f64;
        let mut t = 0.0;
        for j in 0..h.len() {
            let c = (h[j] + l[j]) as f64 / (n1 + n2);
            if c == 0.0 {
                continue;
            }
            t += (h[j] as f64 - n1 * c).powi(2) / (n1 * c) + (l[j] as f64 - n2 * c).powi(2) / (n2 * c);
        }
        t
    }

    #[test]
    fn t1_examples() {
        assert_eq!(t1_statistic(&pair(&[5, 5], &[5, 5])).unwrap().value, 0.0);
        assert!((t1_statistic(&pair(&[10, 0], &[0, 10])).unwrap().value - 20.0).abs() < 1e-12);
        // 6,4 vs 2,8: c = [0.4, 0.6], expected [4, 6] per side; terms 1 + 2/3 + 1 + 2/3
        let v = t1_statistic(&pair(&[6, 4], &[2, 8])).unwrap().value;
        assert!((v - 3.3333333333333335).abs() < 1e-9, "{v}");
        assert!((v - t1_oracle(&[6, 4], &[2, 8])).abs() < 1e-9);
    }

    #[test]
    fn empty_sides_error() {
        assert!(t1_statistic(&pair(&[0, 0], &[0, 0])).is_err());
        assert!(ks_statistic(&pair(&[0, 0], &[1, 0])).is_err());
        assert!(wasserstein_1d(&pair(&[1, 0], &[0, 0])).is_err());
    }

    #[test]
    fn zero_category_contributes_nothing() {
        let a = t1_statistic(&pair(&[6, 0, 4], &[2, 0, 8])).unwrap().value;
        let b = t1_statistic(&pair(&[6, 4], &[2, 8])).unwrap().value;
        assert_eq!(a, b);
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(empirical_cdf(&[5, 5, 0, 0]).unwrap().values(), &[0.5, 1.0, 1.0, 1.0]);
        assert_eq!(empirical_cdf(&[0, 0, 0, 4]).unwrap().values(), &[0.0, 0.0, 0.0, 1.0]);
        let v = empirical_cdf(&[1, 2, 3, 4]).unwrap();
        for (a, b) in v.values().iter().zip([0.1, 0.3, 0.6, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(empirical_cdf(&[0, 0]).is_err());
    }

    #[test]
    fn ks_examples() {
        assert_eq!(ks_statistic(&pair(&[3, 4, 5], &[3, 4, 5])).unwrap().value, 0.0);
        assert_eq!(ks_statistic(&pair(&[10, 0], &[0, 10])).unwrap().value, 1.0);
        assert!((ks_statistic(&pair(&[6, 4], &[2, 8])).unwrap().value - 0.4).abs() < 1e-12);
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(shannon_entropy(&[10, 0, 0, 0], LogBase::Two).unwrap().value, 0.0);
        assert!((shannon_entropy(&[5, 5, 5, 5], LogBase::Two).unwrap().value - 2.0).abs() < 1e-12);
        let h = shannon_entropy(&[6, 4], LogBase::Two).unwrap().value;
        assert!((h - 0.970951).abs() < 1e-6, "{h}");
        let nats = shannon_entropy(&[6, 4], LogBase::E).unwrap().value;
        assert!((nats - h * std::f64::consts::LN_2).abs() < 1e-12);
        assert!(shannon_entropy(&[0, 0], LogBase::Two).is_err());
    }

    #[test]
    fn wasserstein_examples() {
        assert_eq!(wasserstein_1d(&pair(&[2, 3], &[4, 6])).unwrap().value, 0.0);
        assert_eq!(wasserstein_1d(&pair(&[10, 0], &[0, 10])).unwrap().value, 1.0);
        assert_eq!(wasserstein_1d(&pair(&[10, 0, 0], &[0, 0, 10])).unwrap().value, 2.0);
    }

    fn counts_pair() -> impl Strategy<Value = (Vec<u64>, Vec<u64>)> {
        (2usize..7).prop_flat_map(|k| {
            (
                prop::collection::vec(0u64..40, k),
                prop::collection::vec(0u64..40, k),
            )
                .prop_filter("both sides non-empty", |(h, l)| {
                    h.iter().sum::<u64>() > 0 && l.iter().sum::<u64>() > 0
                })
        })
    }

    proptest! {
        #[test]
        fn symmetric_under_swap((h, l) in counts_pair()) {
            let p = pair(&h, &l);
            let s = p.swapped();
            prop_assert!((t1_statistic(&p).unwrap().value - t1_statistic(&s).unwrap().value).abs() < 1e-9);
            prop_assert_eq!(ks_statistic(&p).unwrap().value, ks_statistic(&s).unwrap().value);
            prop_assert_eq!(wasserstein_1d(&p).unwrap().value, wasserstein_1d(&s).unwrap().value);
        }

        #[test]
        fn scale_family((h, l) in counts_pair(), m in 2u64..5) {
            let p = pair(&h, &l);
            let hm: Vec<u64> = h.iter().map(|c| c * m).collect();
            let lm: Vec<u64> = l.iter().map(|c| c * m).collect();
            let q = pair(&hm, &lm);
            prop_assert_eq!(ks_statistic(&p).unwrap().value, ks_statistic(&q).unwrap().value);
            prop_assert_eq!(wasserstein_1d(&p).unwrap().value, wasserstein_1d(&q).unwrap().value);
            let t = t1_statistic(&p).unwrap().value;
            prop_assert!((t1_statistic(&q).unwrap().value - m as f64 * t).abs() <= 1e-9 * (1.0 + t));
        }

        #[test]
        fn ks_wasserstein_sandwich((h, l) in counts_pair()) {
            let p = pair(&h, &l);
            let ks = ks_statistic(&p).unwrap().value;
            let w = wasserstein_1d(&p).unwrap().value;
            prop_assert!((0.0..=1.0).contains(&ks));
            prop_assert!(ks <= w + 1e-12);
            prop_assert!(w <= (p.k() - 1) as f64 * ks + 1e-12);
            prop_assert!(t1_statistic(&p).unwrap().value >= 0.0);
            prop_assert!((t1_statistic(&p).unwrap().value - t1_oracle(&h, &l)).abs() <= 1e-9 * (1.0 + t1_oracle(&h, &l)));
        }

        #[test]
        fn entropy_bounds_and_permutation_invariance(mut c in prop::collection::vec(0u64..50, 2..8)) {
            prop_assume!(c.iter().sum::<u64>() > 0);
            let h = shannon_entropy(&c, LogBase::Two).unwrap().value;
            prop_assert!(h >= 0.0 && h <= (c.len() as f64).log2() + 1e-12);
            c.reverse();
            prop_assert!((shannon_entropy(&c, LogBase::Two).unwrap().value - h).abs() < 1e-12);
        }

        #[test]
        fn cdf_shape(c in prop::collection::vec(0u64..50, 2..8)) {
            prop_assume!(c.iter().sum::<u64>() > 0);
            let cdf = empirical_cdf(&c).unwrap();
            let v = cdf.values();
            prop_assert!(v.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!((v[v.len() - 1] - 1.0).abs() < 1e-12);
            prop_assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }
}
