//! Runs the configured tests over every (question, subgroup) pair of a
//! dataset and aggregates them into a report.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{DecisionKey, DecisionMatrix, MisalignmentReport, PairOutcome, ReportConfig};
use crate::perm::{decide, DecisionKind, PermutationConfig, DEFAULT_EXACT_THRESHOLD, DEFAULT_PERMUTATIONS};
use crate::stats::{shannon_entropy, wasserstein_counts, LogBase};
use crate::survey::{Dataset, RefusedPolicy, Source};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestConfig {
    pub alpha: f64,
    pub statistics: Vec<DecisionKind>,
    pub num_permutations: u64,
    pub seed: u64,
    pub exact_threshold: u64,
    pub refused: RefusedPolicy,
    pub entropy_base: LogBase,
    pub wasserstein: bool,
    /// Worker threads; `None` uses rayon's default.
    #[serde(skip)]
    pub jobs: Option<usize>,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            statistics: DecisionKind::ALL.to_vec(),
            num_permutations: DEFAULT_PERMUTATIONS,
            seed: 0,
            exact_threshold: DEFAULT_EXACT_THRESHOLD,
            refused: RefusedPolicy::Include,
            entropy_base: LogBase::Two,
            wasserstein: false,
            jobs: None,
        }
    }
}

impl TestConfig {
    pub fn permutation(&self) -> PermutationConfig {
        PermutationConfig {
            num_permutations: self.num_permutations,
            seed: self.seed,
            exact_threshold: self.exact_threshold,
            alpha: self.alpha,
        }
    }

    pub fn report_config(&self) -> ReportConfig {
        ReportConfig {
            alpha: self.alpha,
            statistics: self.statistics.clone(),
            num_permutations: self.num_permutations,
            seed: self.seed,
            exact_threshold: self.exact_threshold,
            refused: self.refused,
            entropy_base: self.entropy_base,
            wasserstein: self.wasserstein,
            conventions: ReportConfig::default_conventions(),
        }
    }
}

/// Errors unless the human and LLM data cover the same questions.
pub fn check_question_sets(human: &Dataset, llm: &Dataset) -> Result<()> {
    let h = human.question_ids_with(Source::Human);
    let l = llm.question_ids_with(Source::Llm);
    if h == l {
        return Ok(());
    }
    Err(Error::QuestionSetMismatch {
        only_human: h.difference(&l).cloned().collect(),
        only_llm: l.difference(&h).cloned().collect(),
    })
}

/// Tests every pair in `dataset`. Pairs with an empty side are recorded as
/// untestable rather than failing the run.
pub fn run_tests(dataset: &Dataset, config: &TestConfig) -> Result<MisalignmentReport> {
    let perm = config.permutation();
    perm.validate()?;
    if config.statistics.is_empty() {
        return Err(Error::Config("no statistics selected".into()));
    }
    let keys = dataset.pair_keys();
    let evaluate = || -> Result<Vec<(DecisionKey, PairOutcome)>> {
        let nested: Vec<Vec<(DecisionKey, PairOutcome)>> = keys
            .par_iter()
            .map(|(qid, subgroup)| -> Result<Vec<(DecisionKey, PairOutcome)>> {
                let pair = dataset.contingency(qid, subgroup, config.refused);
                config
                    .statistics
                    .iter()
                    .map(|&kind| {
                        let key = DecisionKey {
                            question_id: qid.clone(),
                            subgroup: subgroup.clone(),
                            statistic: kind,
                        };
                        let outcome = match &pair {
                            Ok(p) => PairOutcome::Tested {
                                n1: p.n1(),
                                n2: p.n2(),
                                decision: decide(p, kind, &perm)?,
                            },
                            Err(Error::Untestable { reason, .. }) => PairOutcome::Untestable {
                                reason: reason.clone(),
                            },
                            Err(e) => return Err(Error::Config(e.to_string())),
                        };
                        Ok((key, outcome))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        Ok(nested.into_iter().flatten().collect())
    };
    let entries = match config.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(evaluate)?,
        None => evaluate()?,
    };
    let decisions: DecisionMatrix = entries.into_iter().collect();

    let mut entropy = BTreeMap::new();
    let mut wasserstein = config.wasserstein.then(BTreeMap::new);
    for q in dataset.questions() {
        let human = dataset.pooled_counts(q.question_id(), Source::Human, config.refused);
        if let Ok(h) = shannon_entropy(&human, config.entropy_base) {
            entropy.insert(q.question_id().to_string(), h.value);
        }
        if let Some(w) = wasserstein.as_mut() {
            let llm = dataset.pooled_counts(q.question_id(), Source::Llm, config.refused);
            if human.iter().sum::<u64>() > 0 && llm.iter().sum::<u64>() > 0 {
                w.insert(q.question_id().to_string(), wasserstein_counts(&human, &llm));
            }
        }
    }
    Ok(MisalignmentReport::aggregate(
        config.report_config(),
        decisions,
        entropy,
        wasserstein,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survey::{QuestionSpec, ResponseSample, Subgroup, Tally};

    fn tally(q: &str, sg: &Subgroup, src: Source, opt: usize, count: u64) -> Tally {
        Tally {
            sample: ResponseSample {
                question_id: q.into(),
                source: src,
                subgroup: sg.clone(),
                option_index: opt,
            },
            count,
        }
    }

    #[test]
    fn untestable_pairs_are_reported_not_fatal() {
        let a = Subgroup::new("age", "18-29");
        let b = Subgroup::new("age", "65+");
        let d = Dataset::new(
            vec![QuestionSpec::lettered("q1", 2).unwrap()],
            vec![
                tally("q1", &a, Source::Human, 0, 10),
                tally("q1", &a, Source::Llm, 1, 10),
                tally("q1", &b, Source::Human, 0, 10),
            ],
        )
        .unwrap();
        let r = run_tests(&d, &TestConfig { wasserstein: true, ..Default::default() }).unwrap();
        assert_eq!(r.decisions.len(), 6);
        assert_eq!(r.exclusions.len(), 3);
        for row in &r.q_by_question {
            assert_eq!(row.total, 1);
            assert_eq!(row.q, Some(1.0));
        }
        assert_eq!(r.entropy_by_question["q1"], 0.0);
        assert_eq!(r.wasserstein_by_question.as_ref().unwrap()["q1"], 1.0);
    }

    #[test]
    fn question_set_mismatch_lists_both_sides() {
        let sg = Subgroup::new("age", "65+");
        let qs = vec![QuestionSpec::lettered("q1", 2).unwrap(), QuestionSpec::lettered("q2", 2).unwrap()];
        let h = Dataset::new(qs.clone(), vec![tally("q1", &sg, Source::Human, 0, 1)]).unwrap();
        let l = Dataset::new(qs, vec![tally("q2", &sg, Source::Llm, 0, 1)]).unwrap();
        let msg = check_question_sets(&h, &l).unwrap_err().to_string();
        assert!(msg.contains("only human: [q1]") && msg.contains("only LLM: [q2]"), "{msg}");
    }
}
