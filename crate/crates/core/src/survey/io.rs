use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{insert_question, Dataset, QuestionSpec, ResponseSample, Source, Subgroup, Tally};
use crate::error::{Error, Result};

const AGGREGATED_HEADER: [&str; 5] = ["question_id", "subgroup", "source", "option", "count"];
const RESPONDENT_HEADER: [&str; 4] = ["question_id", "subgroup", "source", "option"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DataFormat {
    /// `question_id,subgroup,source,option,count`
    Aggregated,
    /// `question_id,subgroup,source,option`, one row per response
    Respondent,
    /// Pick from the header row.
    #[default]
    Auto,
}

impl FromStr for DataFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "aggregated" => Ok(DataFormat::Aggregated),
            "respondent" => Ok(DataFormat::Respondent),
            "auto" => Ok(DataFormat::Auto),
            other => Err(format!("unknown data format {other:?}")),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    question_id: String,
    #[serde(default)]
    prompt_text: String,
    options: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    refused_label: Option<String>,
}

/// Parses a question manifest (JSON array). Repeated ids are allowed only
/// when their option lists agree.
pub fn parse_manifest(json: &str) -> Result<Vec<QuestionSpec>> {
    let entries: Vec<ManifestEntry> = serde_json::from_str(json)?;
    let mut by_id = BTreeMap::new();
    let mut order = Vec::new();
    for e in entries {
        let refused_index = match &e.refused_label {
            None => None,
            Some(label) => Some(e.options.iter().position(|o| o == label).ok_or_else(|| {
                Error::InvalidQuestion {
                    question: e.question_id.clone(),
                    reason: format!("refused_label {label:?} is not one of the options"),
                }
            })?),
        };
        let q = QuestionSpec::new(e.question_id, e.prompt_text, e.options, refused_index)?;
        if !by_id.contains_key(q.question_id()) {
            order.push(q.question_id().to_string());
        }
        insert_question(&mut by_id, q)?;
    }
    Ok(order
        .into_iter()
        .map(|id| by_id.remove(&id).expect("inserted above"))
        .collect())
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<QuestionSpec>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text).map_err(|e| match e {
        Error::Json(j) => Error::Malformed {
            path: path.to_path_buf(),
            line: j.line() as u64,
            msg: j.to_string(),
        },
        other => other,
    })
}

pub fn write_manifest(questions: &[QuestionSpec]) -> Result<String> {
    let entries: Vec<ManifestEntry> = questions
        .iter()
        .map(|q| ManifestEntry {
            question_id: q.question_id().to_string(),
            prompt_text: q.prompt_text().to_string(),
            options: q.options().to_vec(),
            refused_label: q.refused_index().map(|r| q.options()[r].clone()),
        })
        .collect();
    Ok(serde_json::to_string_pretty(&entries)?)
}

/// Loads a response CSV against a question manifest. The returned dataset
/// carries only the questions the file references.
pub fn load_dataset(
    path: impl AsRef<Path>,
    format: DataFormat,
    questions: &[QuestionSpec],
) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file, path, format, questions)
}

pub fn read_dataset<R: Read>(
    reader: R,
    origin: &Path,
    format: DataFormat,
    questions: &[QuestionSpec],
) -> Result<Dataset> {
    let malformed = |line: u64, msg: String| Error::Malformed {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h?,
        None => return Err(malformed(1, "empty file, expected a header row".into())),
    };
    let header: Vec<&str> = header.iter().collect();
    let format = match format {
        DataFormat::Auto if header == AGGREGATED_HEADER => DataFormat::Aggregated,
        DataFormat::Auto => DataFormat::Respondent,
        f => f,
    };
    let expected: &[&str] = match format {
        DataFormat::Aggregated => &AGGREGATED_HEADER,
        _ => &RESPONDENT_HEADER,
    };
    if header != expected {
        return Err(malformed(1, format!("expected header {}", expected.join(","))));
    }

    let by_id: BTreeMap<&str, &QuestionSpec> =
        questions.iter().map(|q| (q.question_id(), q)).collect();
    let mut used: BTreeMap<String, QuestionSpec> = BTreeMap::new();
    let mut tallies: BTreeMap<ResponseKey, u64> = BTreeMap::new();

    for rec in records {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != expected.len() {
            return Err(malformed(
                line,
                format!("expected {} fields, got {}", expected.len(), rec.len()),
            ));
        }
        let qid = &rec[0];
        let q = by_id
            .get(qid)
            .ok_or_else(|| malformed(line, format!("question {qid:?} is not in the manifest")))?;
        let subgroup: Subgroup = rec[1].parse().map_err(|m| malformed(line, m))?;
        let source: Source = rec[2].parse().map_err(|m| malformed(line, m))?;
        let label = &rec[3];
        let option_index = q.option_index(label).ok_or_else(|| Error::UnknownOption {
            question: qid.to_string(),
            label: label.to_string(),
            options: q.options().to_vec(),
        })?;
        let count = match format {
            DataFormat::Aggregated => rec[4]
                .parse::<u64>()
                .map_err(|_| malformed(line, format!("count {:?} is not a non-negative integer", &rec[4])))?,
            _ => 1,
        };
        used.entry(qid.to_string()).or_insert_with(|| (*q).clone());
        *tallies
            .entry(ResponseKey {
                question_id: qid.to_string(),
                subgroup,
                source,
                option_index,
            })
            .or_default() += count;
    }

    let tallies = tallies
        .into_iter()
        .map(|(k, count)| Tally {
            sample: ResponseSample {
                question_id: k.question_id,
                source: k.source,
                subgroup: k.subgroup,
                option_index: k.option_index,
            },
            count,
        })
        .collect();
    Dataset::new(used.into_values().collect(), tallies)
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord)]
struct ResponseKey {
    question_id: String,
    subgroup: Subgroup,
    source: Source,
    option_index: usize,
}
