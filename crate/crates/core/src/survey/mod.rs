//! Questions, responses, subgroups, and the per-pair contingency counts the
//! tests run on.

mod io;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub use io::{
    load_dataset, load_manifest, parse_manifest, read_dataset, write_manifest, DataFormat,
};

/// A multiple-choice question. Option order is the ordinal scale used by the
/// CDF-based statistics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionSpec {
    question_id: String,
    prompt_text: String,
    options: Vec<String>,
    refused_index: Option<usize>,
}

impl QuestionSpec {
    pub fn new(
        question_id: impl Into<String>,
        prompt_text: impl Into<String>,
        options: Vec<String>,
        refused_index: Option<usize>,
    ) -> Result<Self> {
        let question_id = question_id.into();
        let invalid = |reason: String| Error::InvalidQuestion {
            question: question_id.clone(),
            reason,
        };
        if question_id.is_empty() {
            return Err(invalid("empty question_id".into()));
        }
        if options.len() < 2 {
            return Err(invalid(format!("needs at least 2 options, got {}", options.len())));
        }
        let mut seen = BTreeSet::new();
        for o in &options {
            if o.is_empty() {
                return Err(invalid("empty option label".into()));
            }
            if !seen.insert(o.as_str()) {
                return Err(invalid(format!("duplicate option label {o:?}")));
            }
        }
        if let Some(r) = refused_index {
            if r >= options.len() {
                return Err(invalid(format!(
                    "refused index {r} out of range for {} options",
                    options.len()
                )));
            }
        }
        Ok(Self {
            question_id,
            prompt_text: prompt_text.into(),
            options,
            refused_index,
        })
    }

    /// Question with options labelled `A`, `B`, ... and no refused option.
    pub fn lettered(question_id: impl Into<String>, k: usize) -> Result<Self> {
        let options = (0..k).map(|i| option_letter(i).to_string()).collect();
        Self::new(question_id, "", options, None)
    }

    pub fn question_id(&self) -> &str {
        &self.question_id
    }

    pub fn prompt_text(&self) -> &str {
        &self.prompt_text
    }

    pub fn options(&self) -> &[String] {
        &self.options
    }

    pub fn k(&self) -> usize {
        self.options.len()
    }

    pub fn refused_index(&self) -> Option<usize> {
        self.refused_index
    }

    pub fn option_index(&self, label: &str) -> Option<usize> {
        self.options.iter().position(|o| o == label)
    }
}

/// Letter used for option `index` in prompts: A, B, ..., Z.
pub fn option_letter(index: usize) -> char {
    assert!(index < 26, "at most 26 lettered options");
    (b'A' + index as u8) as char
}

/// A flat demographic subgroup such as `age:65+`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Subgroup {
    pub dimension: String,
    pub value: String,
}

impl Subgroup {
    pub fn new(dimension: impl Into<String>, value: impl Into<String>) -> Self {
        Self {
            dimension: dimension.into(),
            value: value.into(),
        }
    }
}

impl fmt::Display for Subgroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.dimension, self.value)
    }
}

impl FromStr for Subgroup {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.split_once(':') {
            Some((d, v)) if !d.is_empty() && !v.is_empty() => Ok(Subgroup::new(d, v)),
            _ => Err(format!("subgroup {s:?} is not of the form dimension:value")),
        }
    }
}

impl Serialize for Subgroup {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Subgroup {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Human,
    Llm,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Human => "human",
            Source::Llm => "llm",
        }
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "human" => Ok(Source::Human),
            "llm" => Ok(Source::Llm),
            other => Err(format!("source must be human or llm, got {other:?}")),
        }
    }
}

/// One respondent's answer to one question.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ResponseSample {
    pub question_id: String,
    pub source: Source,
    pub subgroup: Subgroup,
    pub option_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefusedPolicy {
    #[default]
    Include,
    Drop,
}

impl FromStr for RefusedPolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "include" => Ok(RefusedPolicy::Include),
            "drop" => Ok(RefusedPolicy::Drop),
            other => Err(format!("refused policy must be include or drop, got {other:?}")),
        }
    }
}

/// Aligned human / LLM option counts for one (question, subgroup).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyPair {
    question_id: String,
    subgroup: Subgroup,
    z_human: Vec<u64>,
    z_llm: Vec<u64>,
}

impl ContingencyPair {
    pub fn new(
        question_id: impl Into<String>,
        subgroup: Subgroup,
        z_human: Vec<u64>,
        z_llm: Vec<u64>,
    ) -> Result<Self> {
        if z_human.len() != z_llm.len() {
            return Err(Error::LengthMismatch(z_human.len(), z_llm.len()));
        }
        Ok(Self {
            question_id: question_id.into(),
            subgroup,
            z_human,
            z_llm,
        })
    }

    /// Pair with no question/subgroup labels, for ad hoc statistics.
    pub fn from_counts(z_human: Vec<u64>, z_llm: Vec<u64>) -> Result<Self> {
        Self::new("", Subgroup::default(), z_human, z_llm)
    }

    pub fn question_id(&self) -> &str {
        &self.question_id
    }

    pub fn subgroup(&self) -> &Subgroup {
        &self.subgroup
    }

    pub fn z_human(&self) -> &[u64] {
        &self.z_human
    }

    pub fn z_llm(&self) -> &[u64] {
        &self.z_llm
    }

    pub fn k(&self) -> usize {
        self.z_human.len()
    }

    pub fn n1(&self) -> u64 {
        self.z_human.iter().sum()
    }

    pub fn n2(&self) -> u64 {
        self.z_llm.iter().sum()
    }

    /// Pooled counts `Z_j + Z'_j`.
    pub fn pooled(&self) -> Vec<u64> {
        self.z_human
            .iter()
            .zip(&self.z_llm)
            .map(|(a, b)| a + b)
            .collect()
    }

    /// The same pair with the two groups exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            question_id: self.question_id.clone(),
            subgroup: self.subgroup.clone(),
            z_human: self.z_llm.clone(),
            z_llm: self.z_human.clone(),
        }
    }

    /// Both groups non-empty.
    pub fn check_testable(&self) -> Result<()> {
        if self.n1() == 0 || self.n2() == 0 {
            return Err(Error::EmptyCounts);
        }
        Ok(())
    }

    /// All pooled mass on a single option; every relabelling gives the same
    /// statistic.
    pub fn is_degenerate(&self) -> bool {
        self.pooled().iter().filter(|&&c| c > 0).count() <= 1
    }
}

/// A sample together with its multiplicity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tally {
    pub sample: ResponseSample,
    pub count: u64,
}

fn tally_pair<'a>(
    tallies: impl Iterator<Item = (&'a ResponseSample, u64)>,
    question: &QuestionSpec,
    subgroup: &Subgroup,
    policy: RefusedPolicy,
) -> Result<ContingencyPair> {
    let k = question.k();
    let mut human = vec![0u64; k];
    let mut llm = vec![0u64; k];
    for (s, count) in tallies {
        if s.question_id != question.question_id || &s.subgroup != subgroup {
            continue;
        }
        if s.option_index >= k {
            return Err(Error::InvalidQuestion {
                question: question.question_id.clone(),
                reason: format!("option index {} out of range for k = {k}", s.option_index),
            });
        }
        match s.source {
            Source::Human => human[s.option_index] += count,
            Source::Llm => llm[s.option_index] += count,
        }
    }
    if let (RefusedPolicy::Drop, Some(r)) = (policy, question.refused_index) {
        human.remove(r);
        llm.remove(r);
    }
    let untestable = |reason: &str| Error::Untestable {
        question: question.question_id.clone(),
        subgroup: subgroup.to_string(),
        reason: reason.to_string(),
    };
    let (n1, n2): (u64, u64) = (human.iter().sum(), llm.iter().sum());
    match (n1, n2) {
        (0, 0) => Err(untestable("no human and no LLM responses")),
        (0, _) => Err(untestable("no human responses")),
        (_, 0) => Err(untestable("no LLM responses")),
        _ => ContingencyPair::new(question.question_id.clone(), subgroup.clone(), human, llm),
    }
}

/// Tallies the samples matching `(question, subgroup)` into a pair.
pub fn build_contingency(
    samples: &[ResponseSample],
    question: &QuestionSpec,
    subgroup: &Subgroup,
    policy: RefusedPolicy,
) -> Result<ContingencyPair> {
    tally_pair(samples.iter().map(|s| (s, 1)), question, subgroup, policy)
}

/// A validated dataset: the questions it references and the response
/// tallies over them.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    questions: BTreeMap<String, QuestionSpec>,
    tallies: Vec<Tally>,
}

impl Dataset {
    pub fn new(questions: Vec<QuestionSpec>, tallies: Vec<Tally>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for q in questions {
            insert_question(&mut map, q)?;
        }
        for t in &tallies {
            let q = map
                .get(&t.sample.question_id)
                .ok_or_else(|| Error::UnknownQuestion(t.sample.question_id.clone()))?;
            if t.sample.option_index >= q.k() {
                return Err(Error::InvalidQuestion {
                    question: q.question_id.clone(),
                    reason: format!("option index {} out of range", t.sample.option_index),
                });
            }
        }
        Ok(Self {
            questions: map,
            tallies,
        })
    }

    pub fn questions(&self) -> impl Iterator<Item = &QuestionSpec> {
        self.questions.values()
    }

    pub fn question(&self, id: &str) -> Option<&QuestionSpec> {
        self.questions.get(id)
    }

    pub fn tallies(&self) -> &[Tally] {
        &self.tallies
    }

    /// Expands tallies into one sample per response.
    pub fn samples(&self) -> impl Iterator<Item = &ResponseSample> {
        self.tallies
            .iter()
            .flat_map(|t| std::iter::repeat_n(&t.sample, t.count as usize))
    }

    pub fn num_samples(&self) -> u64 {
        self.tallies.iter().map(|t| t.count).sum()
    }

    /// Question ids that have at least one response from `source`.
    pub fn question_ids_with(&self, source: Source) -> BTreeSet<String> {
        self.tallies
            .iter()
            .filter(|t| t.sample.source == source)
            .map(|t| t.sample.question_id.clone())
            .collect()
    }

    /// Every (question, subgroup) key that appears in the data, sorted.
    pub fn pair_keys(&self) -> Vec<(String, Subgroup)> {
        let keys: BTreeSet<(String, Subgroup)> = self
            .tallies
            .iter()
            .map(|t| (t.sample.question_id.clone(), t.sample.subgroup.clone()))
            .collect();
        keys.into_iter().collect()
    }

    pub fn subgroups(&self) -> BTreeSet<Subgroup> {
        self.tallies
            .iter()
            .map(|t| t.sample.subgroup.clone())
            .collect()
    }

    pub fn contingency(
        &self,
        question_id: &str,
        subgroup: &Subgroup,
        policy: RefusedPolicy,
    ) -> Result<ContingencyPair> {
        let q = self
            .question(question_id)
            .ok_or_else(|| Error::UnknownQuestion(question_id.to_string()))?;
        tally_pair(
            self.tallies.iter().map(|t| (&t.sample, t.count)),
            q,
            subgroup,
            policy,
        )
    }

    /// Counts for one question and source summed over all subgroups.
    pub fn pooled_counts(&self, question_id: &str, source: Source, policy: RefusedPolicy) -> Vec<u64> {
        let Some(q) = self.question(question_id) else {
            return Vec::new();
        };
        let mut counts = vec![0u64; q.k()];
        for t in &self.tallies {
            if t.sample.question_id == question_id && t.sample.source == source {
                counts[t.sample.option_index] += t.count;
            }
        }
        if let (RefusedPolicy::Drop, Some(r)) = (policy, q.refused_index()) {
            counts.remove(r);
        }
        counts
    }

    /// Combines two datasets over compatible question manifests.
    pub fn merge(mut self, other: Dataset) -> Result<Dataset> {
        for q in other.questions.into_values() {
            insert_question(&mut self.questions, q)?;
        }
        self.tallies.extend(other.tallies);
        Ok(self)
    }

    /// Writes the canonical aggregated CSV (`question_id,subgroup,source,option,count`).
    pub fn write_aggregated<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut grouped: BTreeMap<(&str, &Subgroup, Source), Vec<u64>> = BTreeMap::new();
        for t in &self.tallies {
            let k = self.questions[&t.sample.question_id].k();
            grouped
                .entry((&t.sample.question_id, &t.sample.subgroup, t.sample.source))
                .or_insert_with(|| vec![0; k])[t.sample.option_index] += t.count;
        }
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["question_id", "subgroup", "source", "option", "count"])?;
        for ((qid, sg, src), counts) in grouped {
            let q = &self.questions[qid];
            let all_zero = counts.iter().all(|&c| c == 0);
            for (j, c) in counts.iter().enumerate() {
                if *c > 0 || (all_zero && j == 0) {
                    out.write_record([
                        qid,
                        &sg.to_string(),
                        src.as_str(),
                        &q.options()[j],
                        &c.to_string(),
                    ])?;
                }
            }
        }
        out.flush().map_err(|e| Error::io("<aggregated csv>", e))?;
        Ok(())
    }
}

fn insert_question(map: &mut BTreeMap<String, QuestionSpec>, q: QuestionSpec) -> Result<()> {
    match map.get(q.question_id()) {
        Some(existing) if existing.options != q.options => {
            Err(Error::ConflictingQuestion(q.question_id.clone()))
        }
        Some(_) => Ok(()),
        None => {
            map.insert(q.question_id.clone(), q);
            Ok(())
        }
    }
}
