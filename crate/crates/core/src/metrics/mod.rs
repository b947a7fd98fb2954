//! Aggregation of per-pair decisions into subgroup-level (S) and
//! question-level (Q) misalignment scores.
//!
//! S for a subgroup is the share of its testable questions that reject;
//! Q for a question is the share of its testable subgroups that reject.
//! Untestable pairs are left out of both numerator and denominator.

mod correlation;
mod report;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perm::{DecisionKind, TestDecision};
use crate::survey::Subgroup;

pub use correlation::{entropy_correlation, pearson, spearman, Correlation, CorrelationTarget};
pub use report::{
    MisalignmentReport, QRow, ReportConfig, SRow, DECISIONS_CSV, Q_METRIC_CSV, REPORT_JSON,
    S_METRIC_CSV,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum PairOutcome {
    Tested {
        n1: u64,
        n2: u64,
        decision: TestDecision,
    },
    Untestable {
        reason: String,
    },
}

impl PairOutcome {
    /// Whether this outcome counts toward S / Q denominators.
    pub fn is_testable(&self) -> bool {
        matches!(self, PairOutcome::Tested { decision, .. } if !decision.untestable)
    }

    pub fn rejects(&self) -> bool {
        matches!(self, PairOutcome::Tested { decision, .. } if decision.reject && !decision.untestable)
    }

    pub fn exclusion_reason(&self) -> Option<String> {
        match self {
            PairOutcome::Untestable { reason } => Some(reason.clone()),
            PairOutcome::Tested { decision, .. } if decision.untestable => {
                Some("KS table cell cannot reject at this sample size".into())
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DecisionKey {
    pub question_id: String,
    pub subgroup: Subgroup,
    pub statistic: DecisionKind,
}

/// Full (question x subgroup x statistic) decision matrix.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecisionMatrix {
    entries: BTreeMap<DecisionKey, PairOutcome>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    #[serde(flatten)]
    key: DecisionKey,
    #[serde(flatten)]
    outcome: PairOutcome,
}

impl Serialize for DecisionMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.entries.iter().map(|(k, v)| Entry {
            key: k.clone(),
            outcome: v.clone(),
        }))
    }
}

impl<'de> Deserialize<'de> for DecisionMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let entries: Vec<Entry> = Vec::deserialize(d)?;
        Ok(entries.into_iter().map(|e| (e.key, e.outcome)).collect())
    }
}

impl FromIterator<(DecisionKey, PairOutcome)> for DecisionMatrix {
    fn from_iter<I: IntoIterator<Item = (DecisionKey, PairOutcome)>>(iter: I) -> Self {
        Self {
            entries: iter.into_iter().collect(),
        }
    }
}

impl DecisionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        question_id: impl Into<String>,
        subgroup: Subgroup,
        statistic: DecisionKind,
        outcome: PairOutcome,
    ) {
        self.entries.insert(
            DecisionKey {
                question_id: question_id.into(),
                subgroup,
                statistic,
            },
            outcome,
        );
    }

    pub fn get(&self, question_id: &str, subgroup: &Subgroup, statistic: DecisionKind) -> Option<&PairOutcome> {
        self.entries.get(&DecisionKey {
            question_id: question_id.to_string(),
            subgroup: subgroup.clone(),
            statistic,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&DecisionKey, &PairOutcome)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn questions(&self) -> BTreeSet<&str> {
        self.entries.keys().map(|k| k.question_id.as_str()).collect()
    }

    pub fn subgroups(&self) -> BTreeSet<&Subgroup> {
        self.entries.keys().map(|k| &k.subgroup).collect()
    }

    pub fn statistics(&self) -> BTreeSet<DecisionKind> {
        self.entries.keys().map(|k| k.statistic).collect()
    }
}

/// `rejections / total` over testable pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Ratio {
    pub rejections: u64,
    pub total: u64,
}

impl Ratio {
    pub fn value(self) -> Option<f64> {
        (self.total > 0).then(|| self.rejections as f64 / self.total as f64)
    }

    fn add(&mut self, outcome: &PairOutcome) {
        if outcome.is_testable() {
            self.total += 1;
            self.rejections += outcome.rejects() as u64;
        }
    }
}

fn tally<'a>(outcomes: impl Iterator<Item = &'a PairOutcome>) -> Ratio {
    let mut r = Ratio::default();
    for o in outcomes {
        r.add(o);
    }
    r
}

/// Share of testable questions rejecting for `subgroup` under `statistic`.
pub fn s_metric(decisions: &DecisionMatrix, subgroup: &Subgroup, statistic: DecisionKind) -> Result<Ratio> {
    let r = tally(
        decisions
            .iter()
            .filter(|(k, _)| &k.subgroup == subgroup && k.statistic == statistic)
            .map(|(_, o)| o),
    );
    if r.total == 0 {
        return Err(Error::NothingTestable(format!("subgroup {subgroup} ({statistic})")));
    }
    Ok(r)
}

/// Share of testable subgroups rejecting for `question_id` under `statistic`.
pub fn q_metric(decisions: &DecisionMatrix, question_id: &str, statistic: DecisionKind) -> Result<Ratio> {
    let r = tally(
        decisions
            .iter()
            .filter(|(k, _)| k.question_id == question_id && k.statistic == statistic)
            .map(|(_, o)| o),
    );
    if r.total == 0 {
        return Err(Error::NothingTestable(format!("question {question_id} ({statistic})")));
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perm::Method;
    use proptest::prelude::*;

    pub(crate) fn forced(reject: bool) -> PairOutcome {
        PairOutcome::Tested {
            n1: 10,
            n2: 10,
            decision: TestDecision {
                statistic_kind: DecisionKind::T1,
                observed: if reject { 9.0 } else { 0.1 },
                p_value: Some(if reject { 0.001 } else { 0.6 }),
                critical_value: None,
                reject,
                alpha: 0.05,
                seed: 0,
                num_permutations: 0,
                method: Method::Exact,
                degenerate: false,
                untestable: false,
            },
        }
    }

    fn sg(i: usize) -> Subgroup {
        Subgroup::new("g", format!("s{i:02}"))
    }

    #[test]
    fn s_ratio_examples() {
        let mut m = DecisionMatrix::new();
        for (i, r) in [true, true, false, true].into_iter().enumerate() {
            m.insert(format!("q{i}"), sg(0), DecisionKind::T1, forced(r));
        }
        assert_eq!(s_metric(&m, &sg(0), DecisionKind::T1).unwrap().value(), Some(0.75));

        let mut m = DecisionMatrix::new();
        for i in 0..5 {
            m.insert(format!("q{i}"), sg(0), DecisionKind::T1, forced(false));
        }
        assert_eq!(s_metric(&m, &sg(0), DecisionKind::T1).unwrap().value(), Some(0.0));
        assert!(s_metric(&m, &sg(1), DecisionKind::T1).is_err());
        assert!(s_metric(&m, &sg(0), DecisionKind::KsPermutation).is_err());
    }

    #[test]
    fn ten_question_fixture() {
        // rejections at questions 0, 2, 3, 7, 9 -> 5 / 10; one untestable extra
        let mut m = DecisionMatrix::new();
        let rejecting = [0, 2, 3, 7, 9];
        for i in 0..10 {
            m.insert(format!("q{i}"), sg(0), DecisionKind::T1, forced(rejecting.contains(&i)));
        }
        m.insert("q10", sg(0), DecisionKind::T1, PairOutcome::Untestable { reason: "no LLM responses".into() });
        let r = s_metric(&m, &sg(0), DecisionKind::T1).unwrap();
        assert_eq!((r.rejections, r.total), (5, 10));
    }

    #[test]
    fn q_ratio_examples() {
        let mut m = DecisionMatrix::new();
        for i in 0..20 {
            m.insert("q", sg(i), DecisionKind::T1, forced(i < 7));
        }
        assert_eq!(q_metric(&m, "q", DecisionKind::T1).unwrap().value(), Some(0.35));
        let mut m = DecisionMatrix::new();
        for i in 0..4 {
            m.insert("q", sg(i), DecisionKind::T1, forced(i % 2 == 0));
            m.insert("r", sg(i), DecisionKind::T1, forced(true));
        }
        assert_eq!(q_metric(&m, "q", DecisionKind::T1).unwrap().value(), Some(0.5));
        assert_eq!(q_metric(&m, "r", DecisionKind::T1).unwrap().value(), Some(1.0));
    }

    #[test]
    fn untestable_ks_cell_is_excluded() {
        let mut o = forced(false);
        if let PairOutcome::Tested { decision, .. } = &mut o {
            decision.untestable = true;
        }
        assert!(!o.is_testable());
        assert!(o.exclusion_reason().is_some());
    }

    proptest! {
        #[test]
        fn transpose_swaps_s_and_q(cells in prop::collection::vec(prop::collection::vec(0u8..3, 1..6), 1..6)) {
            // 0 = fail to reject, 1 = reject, 2 = untestable
            let cols = cells.iter().map(|r| r.len()).min().unwrap();
            let mut m = DecisionMatrix::new();
            let mut t = DecisionMatrix::new();
            let outcome = |c: u8| if c == 2 {
                PairOutcome::Untestable { reason: "x".into() }
            } else {
                forced(c == 1)
            };
            for (i, row) in cells.iter().enumerate() {
                for (j, &c) in row.iter().take(cols).enumerate() {
                    m.insert(format!("q{i}"), sg(j), DecisionKind::T1, outcome(c));
                    t.insert(sg(j).to_string(), Subgroup::new("q", format!("q{i}")), DecisionKind::T1, outcome(c));
                }
            }
            for j in 0..cols {
                let s = s_metric(&m, &sg(j), DecisionKind::T1).ok();
                let q = q_metric(&t, &sg(j).to_string(), DecisionKind::T1).ok();
                prop_assert_eq!(s, q);
            }
            for i in 0..cells.len() {
                let q = q_metric(&m, &format!("q{i}"), DecisionKind::T1).ok();
                let s = s_metric(&t, &Subgroup::new("q", format!("q{i}")), DecisionKind::T1).ok();
                prop_assert_eq!(q, s);
            }
        }

        #[test]
        fn untestable_pairs_change_nothing(flags in prop::collection::vec(any::<bool>(), 1..12)) {
            let mut m = DecisionMatrix::new();
            for (i, &r) in flags.iter().enumerate() {
                m.insert(format!("q{i}"), sg(0), DecisionKind::T1, forced(r));
            }
            let before = s_metric(&m, &sg(0), DecisionKind::T1).unwrap();
            m.insert("zz", sg(0), DecisionKind::T1, PairOutcome::Untestable { reason: "empty".into() });
            prop_assert_eq!(s_metric(&m, &sg(0), DecisionKind::T1).unwrap(), before);
            let v = before.value().unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
