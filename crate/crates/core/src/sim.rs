//! Synthetic ground-truth scenarios for checking the tests: Type-I error,
//! power, and the entropy vs. Q trend under a mode-collapsed responder.

use std::io::Write;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{q_metric, DecisionMatrix, PairOutcome};
use crate::perm::{decide, rng, DecisionKind, PermutationConfig, TestDecision};
use crate::stats::{shannon_entropy_probs, wasserstein_probs, LogBase};
use crate::survey::{ContingencyPair, Subgroup};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScenario {
    #[serde(default)]
    pub name: String,
    pub human_dist: Vec<f64>,
    pub llm_dist: Vec<f64>,
    pub n1: u64,
    pub n2: u64,
    pub trials: u64,
    #[serde(default)]
    pub seed: u64,
}

fn check_dist(name: &str, p: &[f64]) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.len() < 2 || p.iter().any(|&x| x.is_nan() || x < 0.0) || (sum - 1.0).abs() > 1e-12 {
        return Err(Error::Config(format!(
            "{name} must have at least 2 non-negative entries summing to 1, got {p:?}"
        )));
    }
    Ok(())
}

impl SyntheticScenario {
    pub fn k(&self) -> usize {
        self.human_dist.len()
    }

    pub fn validate(&self) -> Result<()> {
        check_dist("human_dist", &self.human_dist)?;
        check_dist("llm_dist", &self.llm_dist)?;
        if self.human_dist.len() != self.llm_dist.len() {
            return Err(Error::Config("human_dist and llm_dist lengths differ".into()));
        }
        if self.n1 == 0 || self.n2 == 0 {
            return Err(Error::Config("n1 and n2 must be positive".into()));
        }
        Ok(())
    }
}

/// Multinomial(n, p) by sequential conditional binomials.
pub fn sample_counts<R: Rng + ?Sized>(rng: &mut R, n: u64, p: &[f64]) -> Vec<u64> {
    let mut out = vec![0u64; p.len()];
    let mut left = n;
    let mut mass = 1.0f64;
    for (j, &pj) in p.iter().enumerate() {
        if left == 0 {
            break;
        }
        if j + 1 == p.len() || pj >= mass {
            out[j] = left;
            break;
        }
        let q = (pj / mass).clamp(0.0, 1.0);
        let x = Binomial::new(left, q).expect("valid binomial").sample(rng);
        out[j] = x;
        left -= x;
        mass -= pj;
    }
    out
}

/// One synthetic pair; deterministic in `(scenario.seed, trial_index)`.
pub fn sample_pair(scenario: &SyntheticScenario, trial_index: u64) -> Result<ContingencyPair> {
    scenario.validate()?;
    let label = trial_index.to_string();
    let mut r = rng::stream(scenario.seed, &["sample", &scenario.name, &label]);
    let h = sample_counts(&mut r, scenario.n1, &scenario.human_dist);
    let l = sample_counts(&mut r, scenario.n2, &scenario.llm_dist);
    ContingencyPair::new(
        format!("{}#{trial_index}", scenario.name),
        Subgroup::new("sim", "trial"),
        h,
        l,
    )
}

/// Decisions for every trial of a scenario, in trial order.
pub fn simulate_decisions(
    scenario: &SyntheticScenario,
    kind: DecisionKind,
    config: &PermutationConfig,
) -> Result<Vec<TestDecision>> {
    scenario.validate()?;
    config.validate()?;
    (0..scenario.trials)
        .into_par_iter()
        .map(|t| decide(&sample_pair(scenario, t)?, kind, config))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RejectionRate {
    pub rejections: u64,
    pub trials: u64,
    pub rate: f64,
    /// Binomial standard error sqrt(r (1 - r) / trials).
    pub se: f64,
}

impl RejectionRate {
    pub fn from_counts(rejections: u64, trials: u64) -> Self {
        let rate = rejections as f64 / trials as f64;
        Self {
            rejections,
            trials,
            rate,
            se: (rate * (1.0 - rate) / trials as f64).sqrt(),
        }
    }
}

pub fn rejection_rate(
    scenario: &SyntheticScenario,
    kind: DecisionKind,
    config: &PermutationConfig,
) -> Result<RejectionRate> {
    if scenario.trials < 100 {
        return Err(Error::Config(format!("need at least 100 trials, got {}", scenario.trials)));
    }
    let decisions = simulate_decisions(scenario, kind, config)?;
    let rejections = decisions.iter().filter(|d| d.reject).count() as u64;
    Ok(RejectionRate::from_counts(rejections, scenario.trials))
}

/// How the simulated LLM answers in an entropy sweep.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Responder {
    /// All mass on the pooled human mode, regardless of subgroup.
    #[default]
    ModeCollapse,
    /// `(1 - weight) * human + weight * uniform`.
    Smoothed { weight: f64 },
    /// Human distribution moved one option up the scale (last option wraps).
    Shifted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridSpacing {
    Linear,
    /// Target entropies `H_max * (i / (m - 1))^2`, denser near zero.
    #[default]
    Quadratic,
}

/// Human distributions `(1 - t) * e_0 + t * uniform` whose entropies follow
/// the requested spacing from 0 to `log2 k`.
pub fn mixture_grid(k: usize, points: usize, spacing: GridSpacing) -> Vec<Vec<f64>> {
    let mix = |t: f64| -> Vec<f64> {
        (0..k)
            .map(|j| t / k as f64 + if j == 0 { 1.0 - t } else { 0.0 })
            .collect()
    };
    let h_max = (k as f64).log2();
    (0..points)
        .map(|i| {
            let frac = if points == 1 { 0.0 } else { i as f64 / (points - 1) as f64 };
            let target = h_max
                * match spacing {
                    GridSpacing::Linear => frac,
                    GridSpacing::Quadratic => frac * frac,
                };
            // Entropy is increasing in t on [0, 1]: bisect.
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if shannon_entropy_probs(&mix(mid), LogBase::Two) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let t = if i == 0 { 0.0 } else if i + 1 == points { 1.0 } else { 0.5 * (lo + hi) };
            mix(t)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub grid: Vec<Vec<f64>>,
    pub subgroups: usize,
    pub n1: u64,
    pub n2: u64,
    /// Independent repetitions averaged into each Q.
    pub replicates: u64,
    pub statistics: Vec<DecisionKind>,
    #[serde(default)]
    pub responder: Responder,
    pub permutation: PermutationConfig,
}

/// One row of a sweep, laid out like `q_metric.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub question: String,
    pub statistic: DecisionKind,
    pub alpha: f64,
    #[serde(rename = "Q")]
    pub q: f64,
    pub entropy: f64,
    pub wasserstein: f64,
}

fn responder_counts<R: Rng + ?Sized>(
    rng: &mut R,
    responder: Responder,
    human_dist: &[f64],
    pooled_human: &[u64],
    n2: u64,
) -> Vec<u64> {
    let k = human_dist.len();
    match responder {
        Responder::ModeCollapse => {
            let mut mode = 0;
            for j in 1..k {
                if pooled_human[j] > pooled_human[mode] {
                    mode = j;
                }
            }
            let mut out = vec![0u64; k];
            out[mode] = n2;
            out
        }
        Responder::Smoothed { weight } => {
            let p: Vec<f64> = human_dist
                .iter()
                .map(|&h| (1.0 - weight) * h + weight / k as f64)
                .collect();
            sample_counts(rng, n2, &normalized(&p))
        }
        Responder::Shifted => {
            let p: Vec<f64> = (0..k).map(|j| human_dist[(j + k - 1) % k]).collect();
            sample_counts(rng, n2, &p)
        }
    }
}

fn normalized(p: &[f64]) -> Vec<f64> {
    let s: f64 = p.iter().sum();
    p.iter().map(|x| x / s).collect()
}

/// Ground-truth responder distribution, for the Wasserstein column.
fn responder_dist(responder: Responder, human_dist: &[f64]) -> Vec<f64> {
    let k = human_dist.len();
    match responder {
        Responder::ModeCollapse => {
            let mut mode = 0;
            for j in 1..k {
                if human_dist[j] > human_dist[mode] {
                    mode = j;
                }
            }
            (0..k).map(|j| if j == mode { 1.0 } else { 0.0 }).collect()
        }
        Responder::Smoothed { weight } => normalized(
            &human_dist
                .iter()
                .map(|&h| (1.0 - weight) * h + weight / k as f64)
                .collect::<Vec<_>>(),
        ),
        Responder::Shifted => (0..k).map(|j| human_dist[(j + k - 1) % k]).collect(),
    }
}

/// Q per grid point, computed through the permutation engine and the Q
/// metric exactly as for real data, averaged over replicates.
pub fn entropy_sweep(config: &SweepConfig) -> Result<Vec<SweepPoint>> {
    config.permutation.validate()?;
    if config.subgroups == 0 || config.replicates == 0 || config.n1 == 0 || config.n2 == 0 {
        return Err(Error::Config("subgroups, replicates, n1, n2 must be positive".into()));
    }
    for p in &config.grid {
        check_dist("grid distribution", p)?;
    }
    let seed = config.permutation.seed;
    let jobs: Vec<(usize, u64)> = (0..config.grid.len())
        .flat_map(|g| (0..config.replicates).map(move |r| (g, r)))
        .collect();
    let per_job: Vec<Vec<(usize, DecisionKind, f64)>> = jobs
        .par_iter()
        .map(|&(g, r)| -> Result<Vec<(usize, DecisionKind, f64)>> {
            let dist = &config.grid[g];
            let question = format!("g{g:02}");
            let rep = r.to_string();
            let mut rng = rng::stream(seed, &["sweep", &question, &rep]);
            let humans: Vec<Vec<u64>> = (0..config.subgroups)
                .map(|_| sample_counts(&mut rng, config.n1, dist))
                .collect();
            let mut pooled = vec![0u64; dist.len()];
            for h in &humans {
                for (p, c) in pooled.iter_mut().zip(h) {
                    *p += c;
                }
            }
            let mut matrix = DecisionMatrix::new();
            let perm = PermutationConfig {
                seed: seed ^ r.wrapping_mul(0x9E37_79B9_7F4A_7C15),
                ..config.permutation
            };
            for (s, h) in humans.into_iter().enumerate() {
                let llm = responder_counts(&mut rng, config.responder, dist, &pooled, config.n2);
                let subgroup = Subgroup::new("synthetic", format!("s{s:02}"));
                let pair = ContingencyPair::new(question.clone(), subgroup.clone(), h, llm)?;
                for &kind in &config.statistics {
                    let decision = decide(&pair, kind, &perm)?;
                    matrix.insert(
                        question.clone(),
                        subgroup.clone(),
                        kind,
                        PairOutcome::Tested {
                            n1: pair.n1(),
                            n2: pair.n2(),
                            decision,
                        },
                    );
                }
            }
            config
                .statistics
                .iter()
                .map(|&kind| {
                    let q = q_metric(&matrix, &question, kind)?.value().unwrap_or(0.0);
                    Ok((g, kind, q))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut out = Vec::new();
    for (g, dist) in config.grid.iter().enumerate() {
        let llm = responder_dist(config.responder, dist);
        for &kind in &config.statistics {
            let qs: Vec<f64> = per_job
                .iter()
                .flatten()
                .filter(|(gg, kk, _)| *gg == g && *kk == kind)
                .map(|t| t.2)
                .collect();
            out.push(SweepPoint {
                question: format!("g{g:02}"),
                statistic: kind,
                alpha: config.permutation.alpha,
                q: qs.iter().sum::<f64>() / qs.len() as f64,
                entropy: shannon_entropy_probs(dist, LogBase::Two),
                wasserstein: wasserstein_probs(dist, &llm),
            });
        }
    }
    Ok(out)
}

pub fn write_sweep_csv<W: Write>(points: &[SweepPoint], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["question", "statistic", "alpha", "Q", "entropy", "wasserstein"])?;
    for p in points {
        out.write_record([
            p.question.clone(),
            p.statistic.to_string(),
            p.alpha.to_string(),
            p.q.to_string(),
            p.entropy.to_string(),
            p.wasserstein.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("entropy_sweep.csv", e))
}
