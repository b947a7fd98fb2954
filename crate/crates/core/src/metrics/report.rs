use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DecisionMatrix, PairOutcome, Ratio};
use crate::error::{Error, Result};
use crate::perm::DecisionKind;
use crate::stats::LogBase;
use crate::survey::{RefusedPolicy, Subgroup};

pub const REPORT_JSON: &str = "report.json";
pub const S_METRIC_CSV: &str = "s_metric.csv";
pub const Q_METRIC_CSV: &str = "q_metric.csv";
pub const DECISIONS_CSV: &str = "decisions.csv";

/// Every parameter that influenced a report, echoed into it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub alpha: f64,
    pub statistics: Vec<DecisionKind>,
    pub num_permutations: u64,
    pub seed: u64,
    pub exact_threshold: u64,
    pub refused: RefusedPolicy,
    pub entropy_base: LogBase,
    pub wasserstein: bool,
    pub conventions: BTreeMap<String, String>,
}

impl ReportConfig {
    pub fn default_conventions() -> BTreeMap<String, String> {
        [
            ("p_value", "(1 + #{T_perm >= T_obs}) / (B + 1) for monte-carlo; exact tail probability over count-splits for exact"),
            ("ties", "permuted statistics within 1e-10 relative of the observed value count as >= observed"),
            ("ks_table_rule", "reject when D >= tabulated critical D (n1, n2 <= 12)"),
            ("ks_formula_rule", "reject when D > sqrt(-ln(alpha/2)/2) * sqrt((n1+n2)/(n1 n2))"),
            ("untestable", "pairs with an empty side or a KS table cell that cannot reject are excluded from S and Q numerators and denominators"),
            ("entropy", "Shannon entropy of the question's human counts pooled over all subgroups"),
            ("wasserstein", "W1 on the option index line with unit spacing (L1 distance between CDFs), human vs LLM counts pooled over all subgroups"),
            ("ordinal_scale", "option order from the question manifest"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SRow {
    pub statistic: DecisionKind,
    pub subgroup: Subgroup,
    #[serde(rename = "S")]
    pub s: Option<f64>,
    pub rejections: u64,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QRow {
    pub statistic: DecisionKind,
    pub question: String,
    #[serde(rename = "Q")]
    pub q: Option<f64>,
    pub rejections: u64,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub question: String,
    pub subgroup: Subgroup,
    pub statistic: DecisionKind,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisalignmentReport {
    pub config: ReportConfig,
    pub s_by_subgroup: Vec<SRow>,
    pub q_by_question: Vec<QRow>,
    pub entropy_by_question: BTreeMap<String, f64>,
    pub wasserstein_by_question: Option<BTreeMap<String, f64>>,
    pub exclusions: Vec<Exclusion>,
    pub decisions: DecisionMatrix,
}

impl MisalignmentReport {
    /// Builds S, Q, and the exclusion list from a decision matrix.
    pub fn aggregate(
        config: ReportConfig,
        decisions: DecisionMatrix,
        entropy_by_question: BTreeMap<String, f64>,
        wasserstein_by_question: Option<BTreeMap<String, f64>>,
    ) -> Self {
        let mut s: BTreeMap<(DecisionKind, Subgroup), Ratio> = BTreeMap::new();
        let mut q: BTreeMap<(DecisionKind, String), Ratio> = BTreeMap::new();
        let mut exclusions = Vec::new();
        for (key, outcome) in decisions.iter() {
            s.entry((key.statistic, key.subgroup.clone())).or_default().add(outcome);
            q.entry((key.statistic, key.question_id.clone())).or_default().add(outcome);
            if let Some(reason) = outcome.exclusion_reason() {
                exclusions.push(Exclusion {
                    question: key.question_id.clone(),
                    subgroup: key.subgroup.clone(),
                    statistic: key.statistic,
                    reason,
                });
            }
        }
        let s_by_subgroup = s
            .into_iter()
            .map(|((statistic, subgroup), r)| SRow {
                statistic,
                subgroup,
                s: r.value(),
                rejections: r.rejections,
                total: r.total,
            })
            .collect();
        let q_by_question = q
            .into_iter()
            .map(|((statistic, question), r)| QRow {
                statistic,
                question,
                q: r.value(),
                rejections: r.rejections,
                total: r.total,
            })
            .collect();
        Self {
            config,
            s_by_subgroup,
            q_by_question,
            entropy_by_question,
            wasserstein_by_question,
            exclusions,
            decisions,
        }
    }

    /// Recomputes the aggregate from this report's own decisions.
    pub fn reaggregate(&self) -> Self {
        Self::aggregate(
            self.config.clone(),
            self.decisions.clone(),
            self.entropy_by_question.clone(),
            self.wasserstein_by_question.clone(),
        )
    }

    pub fn write_s_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["subgroup", "statistic", "alpha", "S", "rejections", "total"])?;
        for r in &self.s_by_subgroup {
            out.write_record([
                r.subgroup.to_string(),
                r.statistic.to_string(),
                self.config.alpha.to_string(),
                opt(r.s),
                r.rejections.to_string(),
                r.total.to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io(S_METRIC_CSV, e))
    }

    pub fn write_q_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["question", "statistic", "alpha", "Q", "entropy", "wasserstein"])?;
        for r in &self.q_by_question {
            let w = self
                .wasserstein_by_question
                .as_ref()
                .and_then(|m| m.get(&r.question).copied());
            out.write_record([
                r.question.clone(),
                r.statistic.to_string(),
                self.config.alpha.to_string(),
                opt(r.q),
                opt(self.entropy_by_question.get(&r.question).copied()),
                opt(w),
            ])?;
        }
        out.flush().map_err(|e| Error::io(Q_METRIC_CSV, e))
    }

    pub fn write_decisions_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "question",
            "subgroup",
            "statistic",
            "n1",
            "n2",
            "observed",
            "p_value",
            "critical_value",
            "reject",
            "alpha",
            "method",
            "seed",
            "num_permutations",
            "degenerate",
            "untestable",
            "reason",
        ])?;
        for (key, outcome) in self.decisions.iter() {
            let head = [
                key.question_id.clone(),
                key.subgroup.to_string(),
                key.statistic.to_string(),
            ];
            let tail: [String; 13] = match outcome {
                PairOutcome::Tested { n1, n2, decision: d } => [
                    n1.to_string(),
                    n2.to_string(),
                    d.observed.to_string(),
                    opt(d.p_value),
                    opt(d.critical_value),
                    d.reject.to_string(),
                    d.alpha.to_string(),
                    d.method.as_str().to_string(),
                    d.seed.to_string(),
                    d.num_permutations.to_string(),
                    d.degenerate.to_string(),
                    d.untestable.to_string(),
                    outcome.exclusion_reason().unwrap_or_default(),
                ],
                PairOutcome::Untestable { reason } => [
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    "false".into(),
                    self.config.alpha.to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                    "false".into(),
                    "true".into(),
                    reason.clone(),
                ],
            };
            out.write_record(head.iter().chain(tail.iter()))?;
        }
        out.flush().map_err(|e| Error::io(DECISIONS_CSV, e))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes report.json and the three CSVs into `dir` (created if needed).
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let open = |name: &str| -> Result<BufWriter<File>> {
            let p = dir.join(name);
            File::create(&p).map(BufWriter::new).map_err(|e| Error::io(p, e))
        };
        self.write_s_csv(open(S_METRIC_CSV)?)?;
        self.write_q_csv(open(Q_METRIC_CSV)?)?;
        self.write_decisions_csv(open(DECISIONS_CSV)?)?;
        let mut json = open(REPORT_JSON)?;
        json.write_all(self.to_json()?.as_bytes())
            .and_then(|_| json.write_all(b"\n"))
            .and_then(|_| json.flush())
            .map_err(|e| Error::io(dir.join(REPORT_JSON), e))
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::tests::forced;

    fn config() -> ReportConfig {
        ReportConfig {
            alpha: 0.05,
            statistics: vec![DecisionKind::T1],
            num_permutations: 1000,
            seed: 1,
            exact_threshold: 0,
            refused: RefusedPolicy::Include,
            entropy_base: LogBase::Two,
            wasserstein: false,
            conventions: ReportConfig::default_conventions(),
        }
    }

    fn report() -> MisalignmentReport {
        let mut m = DecisionMatrix::new();
        let a = Subgroup::new("age", "18-29");
        let b = Subgroup::new("age", "65+");
        m.insert("q1", a.clone(), DecisionKind::T1, forced(true));
        m.insert("q1", b.clone(), DecisionKind::T1, forced(false));
        m.insert("q2", a.clone(), DecisionKind::T1, forced(true));
        m.insert("q2", b.clone(), DecisionKind::T1, PairOutcome::Untestable { reason: "no LLM responses".into() });
        let entropy = [("q1".to_string(), 1.5), ("q2".to_string(), 0.5)].into_iter().collect();
        MisalignmentReport::aggregate(config(), m, entropy, None)
    }

    #[test]
    fn aggregation_counts() {
        let r = report();
        let s: Vec<_> = r.s_by_subgroup.iter().map(|r| (r.s, r.rejections, r.total)).collect();
        assert_eq!(s, vec![(Some(1.0), 2, 2), (Some(0.0), 0, 1)]);
        let q: Vec<_> = r.q_by_question.iter().map(|r| (r.q, r.rejections, r.total)).collect();
        assert_eq!(q, vec![(Some(0.5), 1, 2), (Some(1.0), 1, 1)]);
        assert_eq!(r.exclusions.len(), 1);
    }

    #[test]
    fn aggregation_is_idempotent_and_json_round_trips() {
        let r = report();
        assert_eq!(r.reaggregate(), r);
        let back: MisalignmentReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn csv_layouts() {
        let r = report();
        let mut s = Vec::new();
        r.write_s_csv(&mut s).unwrap();
        assert_eq!(
            String::from_utf8(s).unwrap(),
            "subgroup,statistic,alpha,S,rejections,total\nage:18-29,t1,0.05,1,2,2\nage:65+,t1,0.05,0,0,1\n"
        );
        let mut q = Vec::new();
        r.write_q_csv(&mut q).unwrap();
        assert_eq!(
            String::from_utf8(q).unwrap(),
            "question,statistic,alpha,Q,entropy,wasserstein\nq1,t1,0.05,0.5,1.5,\nq2,t1,0.05,1,0.5,\n"
        );
        let mut d = Vec::new();
        r.write_decisions_csv(&mut d).unwrap();
        let text = String::from_utf8(d).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.contains("q2,age:65+,t1,,,,,,false,0.05,,,,false,true,no LLM responses"));
    }
}
