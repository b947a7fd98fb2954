//! Exact permutation null by enumerating count-splits.
//!
//! Reassigning pooled responses to groups of sizes n1 and n2 uniformly at
//! random induces a multivariate hypergeometric law on the human-side counts
//! `x` (with `x_j <= c_j`, `sum x = n1`, `c` the pooled counts). Each distinct
//! split is visited once and weighted by `prod C(c_j, x_j) / C(N, n1)`.

use crate::error::{Error, Result};
use crate::stats::CountStatistic;
use crate::survey::ContingencyPair;

use super::at_least;

/// Number of distinct count-splits of `pooled` with `n1` on the human side,
/// saturating at `cap + 1`.
pub fn count_splits(pooled: &[u64], n1: u64, cap: u64) -> u64 {
    let n1 = n1 as usize;
    let sat = cap.saturating_add(1);
    let mut ways = vec![0u64; n1 + 1];
    ways[0] = 1;
    for &c in pooled {
        let c = c as usize;
        let mut next = vec![0u64; n1 + 1];
        // Sliding window sum over ways[s - c ..= s]. Entries are capped at
        // `sat`, and a capped window sum is still >= sat whenever the true
        // sum is.
        let mut window = 0u128;
        for s in 0..=n1 {
            window += ways[s] as u128;
            if s > c {
                window -= ways[s - c - 1] as u128;
            }
            next[s] = window.min(sat as u128) as u64;
        }
        ways = next;
    }
    ways[n1].min(sat)
}

pub(crate) struct LnFactorials(Vec<f64>);

impl LnFactorials {
    pub(crate) fn new(n: u64) -> Self {
        let mut v = Vec::with_capacity(n as usize + 1);
        let mut acc = 0.0f64;
        v.push(0.0);
        for i in 1..=n {
            acc += (i as f64).ln();
            v.push(acc);
        }
        Self(v)
    }

    pub(crate) fn ln_choose(&self, n: u64, k: u64) -> f64 {
        self.0[n as usize] - self.0[k as usize] - self.0[(n - k) as usize]
    }
}

/// Visits every split with its probability under the permutation null.
type Visit<'a> = dyn FnMut(&[u64], &[u64], f64) + 'a;

pub(crate) fn for_each_split(pooled: &[u64], n1: u64, mut visit: impl FnMut(&[u64], &[u64], f64)) {
    let total: u64 = pooled.iter().sum();
    let lf = LnFactorials::new(total);
    let ln_norm = lf.ln_choose(total, n1);
    // suffix[j] = pooled mass in categories j.. (bounds the feasible x_j).
    let mut suffix = vec![0u64; pooled.len() + 1];
    for j in (0..pooled.len()).rev() {
        suffix[j] = suffix[j + 1] + pooled[j];
    }
    let mut x = vec![0u64; pooled.len()];
    let mut y = vec![0u64; pooled.len()];

    #[allow(clippy::too_many_arguments)]
    fn rec(
        j: usize,
        remaining: u64,
        ln_w: f64,
        pooled: &[u64],
        suffix: &[u64],
        lf: &LnFactorials,
        ln_norm: f64,
        x: &mut [u64],
        y: &mut [u64],
        visit: &mut Visit<'_>,
    ) {
        if j == pooled.len() {
            debug_assert_eq!(remaining, 0);
            visit(x, y, (ln_w - ln_norm).exp());
            return;
        }
        let lo = remaining.saturating_sub(suffix[j + 1]);
        let hi = pooled[j].min(remaining);
        for xj in lo..=hi {
            x[j] = xj;
            y[j] = pooled[j] - xj;
            let w = ln_w + lf.ln_choose(pooled[j], xj);
            rec(j + 1, remaining - xj, w, pooled, suffix, lf, ln_norm, x, y, visit);
        }
    }

    rec(0, n1, 0.0, pooled, &suffix, &lf, ln_norm, &mut x, &mut y, &mut visit);
}

/// Exact `P(T >= T_obs)` under the permutation null.
pub fn exact_permutation_pvalue<S: CountStatistic + ?Sized>(
    pair: &ContingencyPair,
    statistic: &S,
    limit: u64,
) -> Result<f64> {
    pair.check_testable()?;
    let pooled = pair.pooled();
    let splits = count_splits(&pooled, pair.n1(), limit);
    if splits > limit {
        return Err(Error::EnumerationTooLarge { splits, limit });
    }
    let observed = statistic.evaluate(pair.z_human(), pair.z_llm());
    Ok(exact_tail(&pooled, pair.n1(), statistic, observed))
}

pub(crate) fn exact_tail<S: CountStatistic + ?Sized>(
    pooled: &[u64],
    n1: u64,
    statistic: &S,
    observed: f64,
) -> f64 {
    // Normalizing by the enumerated mass (rather than trusting the weights to
    // sum to 1) makes a full tail exactly 1.
    let (mut tail, mut mass) = (0.0, 0.0);
    for_each_split(pooled, n1, |x, y, w| {
        mass += w;
        if at_least(statistic.evaluate(x, y), observed) {
            tail += w;
        }
    });
    (tail / mass).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::Statistic;

    fn pair(h: &[u64], l: &[u64]) -> ContingencyPair {
        ContingencyPair::from_counts(h.to_vec(), l.to_vec()).unwrap()
    }

    fn brute_count(pooled: &[u64], n1: u64) -> u64 {
        fn go(p: &[u64], left: u64) -> u64 {
            match p.split_first() {
                None => (left == 0) as u64,
                Some((&c, rest)) => (0..=c.min(left)).map(|x| go(rest, left - x)).sum(),
            }
        }
        go(pooled, n1)
    }

    #[test]
    fn split_counts_match_brute_force() {
        for (p, n1) in [(vec![2, 2], 2), (vec![3, 0, 4, 1], 4), (vec![5, 5, 5], 7), (vec![1, 1, 1, 1, 1], 2)] {
            assert_eq!(count_splits(&p, n1, u64::MAX - 1), brute_count(&p, n1), "{p:?}");
        }
        assert_eq!(count_splits(&[10, 10], 10, 5), 6);
    }

    #[test]
    fn weights_sum_to_one() {
        let mut total = 0.0;
        let mut n = 0;
        for_each_split(&[3, 4, 0, 2], 5, |_, _, w| {
            total += w;
            n += 1;
        });
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(n, count_splits(&[3, 4, 0, 2], 5, 1000));
    }

    #[test]
    fn small_hand_enumeration() {
        // Pooled [2,2] into 2+2: splits (2,0),(1,1),(0,2) with weights 1/6, 4/6, 1/6.
        // T1 is 4 at the extremes and 0 in the middle.
        let p = pair(&[1, 1], &[1, 1]);
        assert!((exact_permutation_pvalue(&p, &Statistic::T1, 100).unwrap() - 1.0).abs() < 1e-12);
        let p = pair(&[2, 0], &[0, 2]);
        assert!((exact_permutation_pvalue(&p, &Statistic::T1, 100).unwrap() - 2.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_twenty() {
        // 2 / C(20,10)
        let p = pair(&[10, 0], &[0, 10]);
        let v = exact_permutation_pvalue(&p, &Statistic::T1, 100).unwrap();
        assert!((v - 2.0 / 184756.0).abs() < 1e-15, "{v}");
    }

    #[test]
    fn too_large() {
        let p = pair(&[50, 50, 50, 50], &[50, 50, 50, 50]);
        assert!(matches!(
            exact_permutation_pvalue(&p, &Statistic::T1, 1000),
            Err(Error::EnumerationTooLarge { .. })
        ));
    }
}
