use crate::survey::QuestionSpec;

/// Maps a reply such as `"B"`, `"b."`, `" (c) "` to an option index. Replies
/// with more than one letter are rejected.
pub fn parse_choice(raw: &str, question: &QuestionSpec) -> Option<usize> {
    let trimmed = raw.trim_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation());
    let mut chars = trimmed.chars();
    let c = chars.next()?;
    if chars.next().is_some() || !c.is_ascii_alphabetic() {
        return None;
    }
    let idx = (c.to_ascii_uppercase() as u8 - b'A') as usize;
    (idx < question.k()).then_some(idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepted_forms() {
        let q = QuestionSpec::lettered("q", 5).unwrap();
        assert_eq!(parse_choice("C", &q), Some(2));
        assert_eq!(parse_choice("b.", &q), Some(1));
        assert_eq!(parse_choice(" b)", &q), Some(1));
        assert_eq!(parse_choice("\n(E)\n", &q), Some(4));
        assert_eq!(parse_choice("'a'", &q), Some(0));
    }

    #[test]
    fn rejected_forms() {
        let q = QuestionSpec::lettered("q", 5).unwrap();
        assert_eq!(parse_choice("I think B is right", &q), None);
        assert_eq!(parse_choice("AB", &q), None);
        assert_eq!(parse_choice("F", &q), None);
        assert_eq!(parse_choice("", &q), None);
        assert_eq!(parse_choice("3", &q), None);
        assert_eq!(parse_choice("B: Somewhat safe", &q), None);
    }
}
