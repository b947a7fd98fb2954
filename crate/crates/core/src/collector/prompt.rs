use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::survey::{option_letter, QuestionSpec, Subgroup};

const INSTRUCTION: &str = "Please read the following multiple-choice question carefully and select ONE of the listed option's letters ONLY. Do NOT write anything else except the listed option's letter.";

const BUILTIN: [(&str, &str); 12] = [
    ("age", "as if you were a person aged {value}"),
    ("citizenship", "as if your citizenship status were {value}"),
    ("education", "as if your highest level of education were {value}"),
    ("gender", "as if your gender were {value}"),
    ("income", "as if your annual household income were {value}"),
    ("marital_status", "as if your marital status were {value}"),
    ("political_ideology", "as if your political ideology were {value}"),
    ("political_party", "as if your political party affiliation were {value}"),
    ("race", "as if your race were {value}"),
    ("region", "as if you were from the region {value}"),
    ("religion", "as if your religion were {value}"),
    ("religious_attendance", "as if you attended religious services {value}"),
];

/// Steering phrases per subgroup dimension; `{value}` is replaced by the
/// subgroup value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplates {
    templates: BTreeMap<String, String>,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            templates: BUILTIN
                .iter()
                .map(|(d, t)| (d.to_string(), t.to_string()))
                .collect(),
        }
    }
}

impl PromptTemplates {
    pub fn empty() -> Self {
        Self {
            templates: BTreeMap::new(),
        }
    }

    /// Adds or replaces the phrase for `dimension`.
    pub fn register(&mut self, dimension: impl Into<String>, template: impl Into<String>) -> Result<()> {
        let template = template.into();
        if !template.contains("{value}") {
            return Err(Error::Config(format!("template {template:?} has no {{value}} placeholder")));
        }
        self.templates.insert(dimension.into(), template);
        Ok(())
    }

    pub fn dimensions(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    pub fn steering(&self, subgroup: &Subgroup) -> Result<String> {
        let template = self
            .templates
            .get(&subgroup.dimension)
            .ok_or_else(|| Error::UnknownDimension {
                dimension: subgroup.dimension.clone(),
                registered: self.dimensions().collect::<Vec<_>>().join(", "),
            })?;
        Ok(template.replace("{value}", &display_value(&subgroup.dimension, &subgroup.value)))
    }
}

fn display_value(dimension: &str, value: &str) -> String {
    // "65+" reads as "65 or older" in the age phrase.
    match (dimension, value.strip_suffix('+')) {
        ("age", Some(n)) if !n.is_empty() && n.chars().all(|c| c.is_ascii_digit()) => {
            format!("{n} or older")
        }
        _ => value.to_string(),
    }
}

/// Steering sentence, fixed instruction, question text, then lettered options.
pub fn build_prompt(question: &QuestionSpec, subgroup: &Subgroup, templates: &PromptTemplates) -> Result<String> {
    let mut lines = vec![
        format!("Answer the following question {}", templates.steering(subgroup)?),
        INSTRUCTION.to_string(),
        question.prompt_text().to_string(),
    ];
    for (i, o) in question.options().iter().enumerate() {
        lines.push(format!("{}: {o}", option_letter(i)));
    }
    Ok(lines.join("\n"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_dimension_lists_registered() {
        let q = QuestionSpec::lettered("q", 2).unwrap();
        let err = build_prompt(&q, &Subgroup::new("favorite_color", "blue"), &PromptTemplates::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("favorite_color") && msg.contains("region"), "{msg}");
    }

    #[test]
    fn custom_template() {
        let mut t = PromptTemplates::empty();
        assert!(t.register("hobby", "as if you liked").is_err());
        t.register("hobby", "as if your main hobby were {value}").unwrap();
        assert_eq!(
            t.steering(&Subgroup::new("hobby", "chess")).unwrap(),
            "as if your main hobby were chess"
        );
    }

    #[test]
    fn age_phrasing() {
        let t = PromptTemplates::default();
        assert_eq!(t.steering(&Subgroup::new("age", "65+")).unwrap(), "as if you were a person aged 65 or older");
        assert_eq!(t.steering(&Subgroup::new("age", "18-29")).unwrap(), "as if you were a person aged 18-29");
    }
}
