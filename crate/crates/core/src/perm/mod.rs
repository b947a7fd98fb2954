//! Turns statistics into reject / fail-to-reject decisions.
//!
//! Permutation p-values are computed on count-splits: drawing the human-side
//! counts from the pooled counts by a multivariate hypergeometric draw is the
//! same law as shuffling individual responses between the two groups.

mod exact;
mod ks;
pub mod rng;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Hypergeometric};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{ks_counts, CountStatistic, Statistic};
use crate::survey::ContingencyPair;

pub use exact::{count_splits, exact_permutation_pvalue};
pub use ks::{
    ks_asymptotic_threshold, ks_critical_value, ks_table, parse_ks_table, uses_table,
    CriticalMethod, Fraction, KsCritical, KsTable, TableKey, KS_TABLE_ALPHAS, KS_TABLE_CSV,
    KS_TABLE_MAX_N,
};

pub const DEFAULT_PERMUTATIONS: u64 = 10_000;
pub const DEFAULT_EXACT_THRESHOLD: u64 = 2_000_000;

/// Relative slack when comparing a resampled statistic to the observed one,
/// so that floating noise cannot turn a tie into a non-tie.
const TIE_RTOL: f64 = 1e-10;

pub(crate) fn at_least(value: f64, observed: f64) -> bool {
    value >= observed - TIE_RTOL * observed.abs().max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PermutationConfig {
    pub num_permutations: u64,
    pub seed: u64,
    /// Enumerate exactly when the pooled counts admit at most this many
    /// distinct splits; 0 forces Monte-Carlo.
    pub exact_threshold: u64,
    pub alpha: f64,
}

impl Default for PermutationConfig {
    fn default() -> Self {
        Self {
            num_permutations: DEFAULT_PERMUTATIONS,
            seed: 0,
            exact_threshold: DEFAULT_EXACT_THRESHOLD,
            alpha: 0.05,
        }
    }
}

impl PermutationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_permutations < 100 {
            return Err(Error::Config(format!(
                "num_permutations must be at least 100, got {}",
                self.num_permutations
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Which test produced a decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DecisionKind {
    #[serde(rename = "t1")]
    T1,
    #[serde(rename = "ks-perm")]
    KsPermutation,
    #[serde(rename = "ks-critical")]
    KsCritical,
}

impl DecisionKind {
    pub const ALL: [DecisionKind; 3] = [
        DecisionKind::T1,
        DecisionKind::KsPermutation,
        DecisionKind::KsCritical,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DecisionKind::T1 => "t1",
            DecisionKind::KsPermutation => "ks-perm",
            DecisionKind::KsCritical => "ks-critical",
        }
    }

    /// The statistic behind a permutation decision.
    pub fn statistic(self) -> Statistic {
        match self {
            DecisionKind::T1 => Statistic::T1,
            DecisionKind::KsPermutation | DecisionKind::KsCritical => Statistic::Ks,
        }
    }
}

impl fmt::Display for DecisionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DecisionKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "t1" => Ok(DecisionKind::T1),
            "ks-perm" => Ok(DecisionKind::KsPermutation),
            "ks-critical" => Ok(DecisionKind::KsCritical),
            other => Err(format!("unknown statistic {other:?} (t1, ks-perm, ks-critical)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    MonteCarlo,
    Exact,
    AsymptoticFormula,
    Table,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::MonteCarlo => "monte-carlo",
            Method::Exact => "exact",
            Method::AsymptoticFormula => "asymptotic-formula",
            Method::Table => "table",
        }
    }
}

impl From<CriticalMethod> for Method {
    fn from(m: CriticalMethod) -> Self {
        match m {
            CriticalMethod::AsymptoticFormula => Method::AsymptoticFormula,
            CriticalMethod::Table => Method::Table,
        }
    }
}

/// Outcome of one test on one pair. Permutation decisions carry a p-value,
/// critical-value decisions carry a threshold (absent for untestable table
/// cells).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestDecision {
    pub statistic_kind: DecisionKind,
    pub observed: f64,
    pub p_value: Option<f64>,
    pub critical_value: Option<f64>,
    pub reject: bool,
    pub alpha: f64,
    pub seed: u64,
    /// Resamples drawn; 0 for exact enumeration and critical-value paths.
    pub num_permutations: u64,
    pub method: Method,
    /// Pooled responses all chose one option.
    #[serde(default)]
    pub degenerate: bool,
    /// KS table cell where rejection is impossible.
    #[serde(default)]
    pub untestable: bool,
}

/// A permutation p-value with provenance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PermutationPValue {
    pub observed: f64,
    pub p_value: f64,
    pub method: Method,
    pub num_permutations: u64,
    pub degenerate: bool,
}

/// Draws human-side counts for one permutation: `n1` of the pooled responses
/// without replacement, category by category.
pub fn draw_split<R: Rng + ?Sized>(rng: &mut R, pooled: &[u64], n1: u64, out: &mut [u64]) {
    let mut total_left: u64 = pooled.iter().sum();
    let mut draws_left = n1;
    for (j, &c) in pooled.iter().enumerate() {
        if draws_left == 0 {
            out[j] = 0;
            continue;
        }
        let x = if c == 0 {
            0
        } else if c == total_left {
            draws_left
        } else if draws_left == total_left {
            c
        } else {
            Hypergeometric::new(total_left, c, draws_left)
                .expect("valid hypergeometric parameters")
                .sample(rng)
        };
        out[j] = x;
        total_left -= c;
        draws_left -= x;
    }
}

/// Monte-Carlo p-value `(1 + #{T_b >= T_obs}) / (B + 1)`.
pub fn monte_carlo_pvalue<S: CountStatistic + ?Sized, R: Rng + ?Sized>(
    pair: &ContingencyPair,
    statistic: &S,
    num_permutations: u64,
    rng: &mut R,
) -> Result<f64> {
    pair.check_testable()?;
    let observed = statistic.evaluate(pair.z_human(), pair.z_llm());
    let pooled = pair.pooled();
    let mut x = vec![0u64; pooled.len()];
    let mut y = vec![0u64; pooled.len()];
    let mut hits = 0u64;
    for _ in 0..num_permutations {
        draw_split(rng, &pooled, pair.n1(), &mut x);
        for j in 0..pooled.len() {
            y[j] = pooled[j] - x[j];
        }
        if at_least(statistic.evaluate(&x, &y), observed) {
            hits += 1;
        }
    }
    Ok((1 + hits) as f64 / (num_permutations + 1) as f64)
}

/// Permutation p-value for any count statistic, exact when the split space
/// is small enough and Monte-Carlo otherwise. The RNG stream is derived from
/// `config.seed` and `stream_labels`.
pub fn permutation_pvalue<S: CountStatistic + ?Sized>(
    pair: &ContingencyPair,
    statistic: &S,
    config: &PermutationConfig,
    stream_labels: &[&str],
) -> Result<PermutationPValue> {
    config.validate()?;
    pair.check_testable()?;
    let observed = statistic.evaluate(pair.z_human(), pair.z_llm());
    if pair.is_degenerate() {
        return Ok(PermutationPValue {
            observed,
            p_value: 1.0,
            method: Method::Exact,
            num_permutations: 0,
            degenerate: true,
        });
    }
    let pooled = pair.pooled();
    if count_splits(&pooled, pair.n1(), config.exact_threshold) <= config.exact_threshold {
        let p = exact::exact_tail(&pooled, pair.n1(), statistic, observed);
        return Ok(PermutationPValue {
            observed,
            p_value: p,
            method: Method::Exact,
            num_permutations: 0,
            degenerate: false,
        });
    }
    let mut rng = rng::stream(config.seed, stream_labels);
    let p = monte_carlo_pvalue(pair, statistic, config.num_permutations, &mut rng)?;
    Ok(PermutationPValue {
        observed,
        p_value: p,
        method: Method::MonteCarlo,
        num_permutations: config.num_permutations,
        degenerate: false,
    })
}

/// Permutation test of `kind` (T1 or KS) on a pair. The RNG stream is keyed
/// by the seed, question id, subgroup, and test kind, so results do not
/// depend on evaluation order.
pub fn permutation_test(
    pair: &ContingencyPair,
    kind: DecisionKind,
    config: &PermutationConfig,
) -> Result<TestDecision> {
    if kind == DecisionKind::KsCritical {
        return Err(Error::Config("ks-critical is not a permutation test".into()));
    }
    let subgroup = pair.subgroup().to_string();
    let labels = [pair.question_id(), subgroup.as_str(), kind.as_str()];
    let p = permutation_pvalue(pair, &kind.statistic(), config, &labels)?;
    Ok(TestDecision {
        statistic_kind: kind,
        observed: p.observed,
        p_value: Some(p.p_value),
        critical_value: None,
        reject: p.p_value <= config.alpha,
        alpha: config.alpha,
        seed: config.seed,
        num_permutations: p.num_permutations,
        method: p.method,
        degenerate: p.degenerate,
        untestable: false,
    })
}

/// KS decision against the critical value (table for small samples, formula
/// otherwise). Small samples at an untabulated alpha use the formula.
pub fn ks_decision(pair: &ContingencyPair, alpha: f64) -> Result<TestDecision> {
    pair.check_testable()?;
    let (n1, n2) = (pair.n1(), pair.n2());
    let observed = ks_counts(pair.z_human(), pair.z_llm());
    let critical = match ks_critical_value(n1, n2, alpha) {
        Err(Error::AlphaNotTabulated(_)) => KsCritical::Formula {
            threshold: ks_asymptotic_threshold(n1, n2, alpha),
        },
        other => other?,
    };
    let reject = match critical {
        KsCritical::Formula { threshold } => observed > threshold,
        KsCritical::Table { critical_d } => {
            // D = gap / (n1 n2); compare gap * den >= num * n1 * n2 exactly.
            let gap = (observed * (n1 * n2) as f64).round() as u128;
            gap * critical_d.den as u128 >= critical_d.num as u128 * (n1 * n2) as u128
        }
        KsCritical::Untestable => false,
    };
    Ok(TestDecision {
        statistic_kind: DecisionKind::KsCritical,
        observed,
        p_value: None,
        critical_value: critical.threshold(),
        reject,
        alpha,
        seed: 0,
        num_permutations: 0,
        method: critical.method().into(),
        degenerate: pair.is_degenerate(),
        untestable: critical == KsCritical::Untestable,
    })
}

/// Runs `kind` on a pair with the given config.
pub fn decide(pair: &ContingencyPair, kind: DecisionKind, config: &PermutationConfig) -> Result<TestDecision> {
    match kind {
        DecisionKind::KsCritical => ks_decision(pair, config.alpha),
        _ => permutation_test(pair, kind, config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survey::Subgroup;
    use proptest::prelude::*;

    fn pair(h: &[u64], l: &[u64]) -> ContingencyPair {
        ContingencyPair::new("q", Subgroup::new("age", "65+"), h.to_vec(), l.to_vec()).unwrap()
    }

    fn mc(threshold: u64) -> PermutationConfig {
        PermutationConfig {
            exact_threshold: threshold,
            ..Default::default()
        }
    }

    #[test]
    fn identical_counts_never_reject() {
        for t in [0, DEFAULT_EXACT_THRESHOLD] {
            let d = permutation_test(&pair(&[5, 5], &[5, 5]), DecisionKind::T1, &mc(t)).unwrap();
            assert_eq!(d.observed, 0.0);
            assert!(!d.reject);
            assert_eq!(d.p_value, Some(1.0));
        }
    }

    #[test]
    fn disjoint_twenty_rejects() {
        let p = pair(&[10, 0], &[0, 10]);
        let exact = permutation_test(&p, DecisionKind::T1, &mc(DEFAULT_EXACT_THRESHOLD)).unwrap();
        assert_eq!(exact.method, Method::Exact);
        assert!((exact.p_value.unwrap() - 1.0825e-5).abs() < 1e-8);
        let mc = permutation_test(&p, DecisionKind::T1, &mc(0)).unwrap();
        assert_eq!(mc.method, Method::MonteCarlo);
        assert!(mc.reject);
        // at most a handful of hits at p ~ 1e-5
        assert!(mc.p_value.unwrap() <= 3.0 / 10_001.0);
    }

    #[test]
    fn deterministic_given_seed() {
        let p = pair(&[12, 9, 4, 7], &[8, 14, 6, 2]);
        let a = permutation_test(&p, DecisionKind::KsPermutation, &mc(0)).unwrap();
        let b = permutation_test(&p, DecisionKind::KsPermutation, &mc(0)).unwrap();
        assert_eq!(a, b);
        let other_seed = PermutationConfig { seed: 99, ..mc(0) };
        let c = permutation_test(&p, DecisionKind::KsPermutation, &other_seed).unwrap();
        assert_ne!(a.p_value, c.p_value);
    }

    #[test]
    fn degenerate_pair_flagged() {
        let d = permutation_test(&pair(&[0, 4], &[0, 9]), DecisionKind::T1, &mc(0)).unwrap();
        assert!(d.degenerate);
        assert_eq!(d.p_value, Some(1.0));
        assert!(!d.reject);
    }

    #[test]
    fn config_validation() {
        let bad = PermutationConfig { num_permutations: 99, ..Default::default() };
        assert!(permutation_test(&pair(&[1, 2], &[2, 1]), DecisionKind::T1, &bad).is_err());
        let bad = PermutationConfig { alpha: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn ks_decisions() {
        let d = ks_decision(&pair(&[100, 0], &[0, 100]), 0.05).unwrap();
        assert!(d.reject);
        assert_eq!(d.method, Method::AsymptoticFormula);
        assert!((d.critical_value.unwrap() - 0.192065).abs() < 1e-5);

        let d = ks_decision(&pair(&[40, 60], &[40, 60]), 0.01).unwrap();
        assert!(!d.reject);

        let d = ks_decision(&pair(&[3, 0], &[0, 3]), 0.01).unwrap();
        assert!(d.untestable && !d.reject);
        assert_eq!(d.critical_value, None);

        // 5 vs 5, complete separation: D = 1 = table value 1/1 at 0.05.
        let d = ks_decision(&pair(&[5, 0], &[0, 5]), 0.05).unwrap();
        assert_eq!(d.method, Method::Table);
        assert!(d.reject);
        // 10 vs 10: table 7/10; D = 0.7 rejects, D = 0.6 does not.
        assert!(ks_decision(&pair(&[7, 3, 0], &[0, 3, 7]), 0.05).unwrap().reject);
        assert!(!ks_decision(&pair(&[6, 4, 0], &[0, 4, 6]), 0.05).unwrap().reject);
        // untabulated alpha on small samples falls back to the formula
        let d = ks_decision(&pair(&[5, 0], &[0, 5]), 0.1).unwrap();
        assert_eq!(d.method, Method::AsymptoticFormula);
    }

    #[test]
    fn split_draw_preserves_margins() {
        let mut rng = rng::stream(1, &["x"]);
        let pooled = [4, 0, 7, 3, 9];
        let mut x = [0u64; 5];
        for _ in 0..500 {
            draw_split(&mut rng, &pooled, 11, &mut x);
            assert_eq!(x.iter().sum::<u64>(), 11);
            assert!(x.iter().zip(&pooled).all(|(a, b)| a <= b));
        }
    }

    #[test]
    fn split_draw_frequencies_match_exact_law() {
        // Pooled [2, 3, 1] into n1 = 3: compare empirical split frequencies
        // with the hypergeometric weights.
        let pooled = [2u64, 3, 1];
        let mut expected = std::collections::BTreeMap::new();
        exact::for_each_split(&pooled, 3, |x, _, w| {
            expected.insert(x.to_vec(), w);
        });
        let mut rng = rng::stream(5, &["law"]);
        let trials = 200_000;
        let mut seen = std::collections::BTreeMap::<Vec<u64>, u64>::new();
        let mut x = [0u64; 3];
        for _ in 0..trials {
            draw_split(&mut rng, &pooled, 3, &mut x);
            *seen.entry(x.to_vec()).or_default() += 1;
        }
        for (split, w) in expected {
            let f = seen.get(&split).copied().unwrap_or(0) as f64 / trials as f64;
            let se = (w * (1.0 - w) / trials as f64).sqrt();
            assert!((f - w).abs() < 5.0 * se + 1e-9, "{split:?}: {f} vs {w}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn monte_carlo_pvalue_bounds(h in prop::collection::vec(0u64..30, 3), l in prop::collection::vec(0u64..30, 3)) {
            prop_assume!(h.iter().sum::<u64>() > 0 && l.iter().sum::<u64>() > 0);
            let p = pair(&h, &l);
            let cfg = PermutationConfig { num_permutations: 200, ..mc(0) };
            for kind in [DecisionKind::T1, DecisionKind::KsPermutation] {
                let d = permutation_test(&p, kind, &cfg).unwrap();
                let v = d.p_value.unwrap();
                prop_assert!((1.0 / 201.0 - 1e-15..=1.0).contains(&v));
                prop_assert_eq!(d.reject, v <= cfg.alpha);
                prop_assert!(d.critical_value.is_none());
            }
            let k = ks_decision(&p, 0.05).unwrap();
            prop_assert!(k.p_value.is_none());
        }
    }
}
