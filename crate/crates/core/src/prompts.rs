//! Prompt templates and the 1-shot exemplars that ship in the default config.
//!
//! Templates use `{name}` placeholders and `{{` / `}}` for literal braces.
//! Substitution is single-pass: inserted values are never re-scanned, so a
//! claim containing `{evidence}` renders verbatim.

pub const FILTER_TEMPLATE: &str = "\
List the sentences most relevant to Claim from Evidence and your own knowledge.
Claim: {claim}
Evidence:
{evidence}
Your output is: Sentences.";

pub const VERDICT_TEMPLATE: &str = "\
Verify the truth of Claim based on Evidence, with label 'True', 'False', or 'Uncertain', and explain why you get this conclusion.
Claim: {claim}
Evidence:
{evidence}
Your output is: Label; Explanation.";

pub const ONE_MODULE_TEMPLATE: &str = "\
Verify the truth of Claim with label 'True', 'False', or 'Uncertain', give evidence and explain why you get this conclusion.
Claim: {claim}
Your output is: Label; Evidence; Explanation.";

pub const DEFAULT_FILTER_EXEMPLAR: &str = "\
Example
Claim: The Eiffel Tower is located in Berlin.
Evidence:
1. Eiffel Tower: The Eiffel Tower is a wrought-iron lattice tower on the Champ de Mars in Paris, France.
2. Berlin travel guide: Top attractions in Berlin include the Brandenburg Gate and Museum Island.
3. Paris weather: The forecast for Paris this week shows mild temperatures.
Sentences:
1. The Eiffel Tower is a wrought-iron lattice tower on the Champ de Mars in Paris, France.
2. The Eiffel Tower was built for the 1889 World's Fair in Paris.";

pub const DEFAULT_VERDICT_EXEMPLAR: &str = "\
Example
Claim: The Eiffel Tower is located in Berlin.
Evidence:
evidence1: Eiffel Tower: The Eiffel Tower is a wrought-iron lattice tower on the Champ de Mars in Paris, France.
evidence2: Berlin travel guide: Top attractions in Berlin include the Brandenburg Gate and Museum Island.
Output: False; evidence1 places the Eiffel Tower on the Champ de Mars in Paris, France, and evidence2 lists Berlin attractions without the tower, so the claim that it stands in Berlin is contradicted.";

pub const DEFAULT_ONE_MODULE_EXEMPLAR: &str = "\
Example
Claim: The Eiffel Tower is located in Berlin.
Output: False; Evidence: The Eiffel Tower stands on the Champ de Mars in Paris, France. Explanation: The tower is in Paris, so the claim that it is located in Berlin is false.";

/// Substitutes `{name}` placeholders from `vars` in a single pass.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(pos) = rest.find(['{', '}']) {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if let Some(after) = tail.strip_prefix("{{") {
            out.push('{');
            rest = after;
        } else if let Some(after) = tail.strip_prefix("}}") {
            out.push('}');
            rest = after;
        } else if tail.starts_with('{') {
            match tail.find('}') {
                Some(end) => {
                    let name = &tail[1..end];
                    match vars.iter().find(|(k, _)| *k == name) {
                        Some((_, value)) => out.push_str(value),
                        None => out.push_str(&tail[..=end]),
                    }
                    rest = &tail[end + 1..];
                }
                None => {
                    out.push_str(tail);
                    rest = "";
                }
            }
        } else {
            out.push('}');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    out
}

/// Prepends a non-empty exemplar to a rendered instance.
pub fn with_exemplar(exemplar: &str, instance: String) -> String {
    let exemplar = exemplar.trim_end();
    if exemplar.is_empty() {
        instance
    } else {
        format!("{exemplar}\n\n{instance}")
    }
}

/// Collapses internal line breaks so each evidence entry stays on one line.
pub(crate) fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_substitutes_once() {
        let out = fill("a {x} b {y}", &[("x", "{y}"), ("y", "2")]);
        assert_eq!(out, "a {y} b 2");
    }

    #[test]
    fn fill_handles_literal_braces_and_unknown_names() {
        assert_eq!(fill("{{x}} {z}", &[("x", "1")]), "{x} {z}");
        assert_eq!(fill("open { only", &[]), "open { only");
        assert_eq!(fill("close } only", &[]), "close } only");
    }

    #[test]
    fn empty_exemplar_is_zero_shot() {
        assert_eq!(with_exemplar("  \n", "task".into()), "task");
        assert_eq!(with_exemplar("ex\n", "task".into()), "ex\n\ntask");
    }
}
