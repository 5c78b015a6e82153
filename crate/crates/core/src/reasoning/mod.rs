//! Structured five-step reasoning over a retrieved document.
//!
//! The model is prompted to restate the question, extract evidence, compute,
//! answer, and present — mirroring a single worked example embedded in the
//! prompt — and to put any final formula on a `FORMULA:` line. The formula
//! is re-evaluated by the exact calculator in [`formula`] and used to
//! cross-check (and, on disagreement, to overrule) the model's own answer.

mod formula;

pub use formula::{
    evaluate_formula, parse_formula, CalcError, Decimal, FormulaAst, SIGNIFICANT_DIGITS,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clients::{
    with_retries, ClientError, CompletionClient, CompletionRequest, TokenCounter,
    DEFAULT_MAX_RETRIES,
};
use crate::corpus::Chunk;

/// Question categories recognised in the model's restatement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    Numerical,
    Fact,
    MultiHop,
    Other,
}

/// Which source produced the final answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionReason {
    /// The calculator value overruled or backfilled the model answer.
    Calculator,
    /// The model answer stood (calculator agreed, failed, or was not
    /// applicable).
    Llm,
    /// The model emitted no formula, so there was nothing to check.
    LlmNoFormula,
}

/// The parsed fields of one five-step model response.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedRecap {
    pub restatement: String,
    pub question_type: QuestionType,
    pub evidence: Vec<String>,
    pub formula: Option<String>,
    pub llm_answer: String,
}

/// Full reasoning trace for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecapTrace {
    pub restatement: String,
    pub question_type: QuestionType,
    pub evidence: Vec<String>,
    /// Formula text as the model wrote it (`None` when it declared none).
    pub formula: Option<String>,
    /// Answer as the model presented it.
    pub llm_answer: String,
    /// Exact calculator value for the formula, when one evaluated cleanly.
    pub calc_answer: Option<Decimal>,
    /// Calculator failure message, when a formula was present but broken.
    pub calc_error: Option<String>,
    /// The answer the pipeline reports.
    pub selected_answer: String,
    pub selection_reason: SelectionReason,
}

/// Outcome of running the reasoning stage once.
#[derive(Debug, Clone)]
pub struct RecapRun {
    pub trace: RecapTrace,
    /// Completion calls made (1, or 2 when the first reply was unparseable).
    pub completion_calls: u32,
    /// Prompt + response tokens across those calls.
    pub tokens: u64,
}

/// Errors that abort the reasoning stage.
#[derive(Debug, Error)]
pub enum ReasoningError {
    #[error("model output missing an answer after one re-prompt")]
    Unparseable,
    #[error(transparent)]
    Client(#[from] ClientError),
}

/// Recoverable parse failure of a single model reply.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecapParseError {
    #[error("reply has neither a Present nor an Answer section")]
    MissingAnswer,
}

const RESTATE_LABEL: &str = "Restate:";
const EXTRACT_LABEL: &str = "Extract:";
const COMPUTE_LABEL: &str = "Compute:";
const ANSWER_LABEL: &str = "Answer:";
const PRESENT_LABEL: &str = "Present:";
const FORMULA_LABEL: &str = "FORMULA:";

/// Build the reasoning prompt: the template's `{document}` placeholder gets
/// the chunk texts (one per line), `{question}` the question.
pub fn build_recap_prompt(question: &str, chunks: &[Chunk], template: &str) -> String {
    let document = chunks
        .iter()
        .map(|c| c.text.as_str())
        .collect::<Vec<_>>()
        .join("\n");
    template
        .replace("{document}", &document)
        .replace("{question}", question)
}

/// Parse a five-step reply. Sections are introduced by their labels at line
/// start; everything degrades gracefully except a missing answer: without a
/// `Present:` or `Answer:` section there is nothing to report.
pub fn parse_recap_output(text: &str) -> Result<ParsedRecap, RecapParseError> {
    #[derive(Clone, Copy, PartialEq)]
    enum Section {
        None,
        Restate,
        Extract,
        Compute,
        Answer,
        Present,
    }
    let mut sections: [Vec<&str>; 6] = Default::default();
    let mut formula: Option<String> = None;
    let mut current = Section::None;
    for line in text.lines() {
        let trimmed = line.trim_start();
        if let Some(rest) = trimmed.strip_prefix(FORMULA_LABEL) {
            if formula.is_none() {
                let rest = rest.trim();
                formula = Some(rest.to_string());
            }
            continue;
        }
        let (section, rest) = if let Some(rest) = trimmed.strip_prefix(RESTATE_LABEL) {
            (Section::Restate, rest)
        } else if let Some(rest) = trimmed.strip_prefix(EXTRACT_LABEL) {
            (Section::Extract, rest)
        } else if let Some(rest) = trimmed.strip_prefix(COMPUTE_LABEL) {
            (Section::Compute, rest)
        } else if let Some(rest) = trimmed.strip_prefix(ANSWER_LABEL) {
            (Section::Answer, rest)
        } else if let Some(rest) = trimmed.strip_prefix(PRESENT_LABEL) {
            (Section::Present, rest)
        } else {
            (current, line)
        };
        current = section;
        let slot = current as usize;
        if current != Section::None && !rest.trim().is_empty() {
            sections[slot].push(rest.trim());
        }
    }

    let restatement = sections[Section::Restate as usize].join(" ");
    let question_type = classify(&restatement);
    let evidence: Vec<String> = sections[Section::Extract as usize]
        .join(" ")
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect();
    let formula = formula.filter(|f| !f.is_empty() && !f.eq_ignore_ascii_case("none"));

    let present = sections[Section::Present as usize].first().copied();
    let answer_section = sections[Section::Answer as usize].join(" ");
    let llm_answer = match present {
        Some(line) => line.to_string(),
        None if !answer_section.is_empty() => answer_section,
        _ => return Err(RecapParseError::MissingAnswer),
    };

    Ok(ParsedRecap {
        restatement,
        question_type,
        evidence,
        formula,
        llm_answer,
    })
}

/// Read the question type out of the restatement's `Type:` tail.
fn classify(restatement: &str) -> QuestionType {
    let lower = restatement.to_lowercase();
    let tail = match lower.rfind("type:") {
        Some(pos) => &lower[pos + "type:".len()..],
        None => return QuestionType::Other,
    };
    if tail.contains("numerical") || tail.contains("numeric") {
        QuestionType::Numerical
    } else if tail.contains("multi") {
        QuestionType::MultiHop
    } else if tail.contains("fact") {
        QuestionType::Fact
    } else {
        QuestionType::Other
    }
}

/// What the calculator produced for the model's formula.
#[derive(Debug, Clone, PartialEq)]
pub enum CalcOutcome {
    /// The model declared no formula.
    NoFormula,
    /// A formula was present but failed to parse or evaluate.
    Failed(CalcError),
    /// The formula evaluated to this exact value.
    Value(Decimal),
}

/// Choose the reported answer by cross-checking the model against the
/// calculator:
///
/// - no formula → model answer;
/// - calculator failed → model answer;
/// - model answer parses to a number that agrees with the calculator within
///   `tolerance` (relative) → model answer verbatim;
/// - numbers disagree, or the model answer is non-numeric on a numerical
///   question → calculator value;
/// - otherwise the model answer stands.
pub fn select_answer(
    llm_answer: &str,
    calc: &CalcOutcome,
    question_type: QuestionType,
    tolerance: f64,
) -> (String, SelectionReason) {
    let value = match calc {
        CalcOutcome::NoFormula => return (llm_answer.to_string(), SelectionReason::LlmNoFormula),
        CalcOutcome::Failed(_) => return (llm_answer.to_string(), SelectionReason::Llm),
        CalcOutcome::Value(v) => v,
    };
    match parse_numeric_answer(llm_answer) {
        Some(x) => {
            let v = value.to_f64();
            let denom = v.abs().max(1e-12);
            if ((x - v) / denom).abs() <= tolerance {
                (llm_answer.to_string(), SelectionReason::Llm)
            } else {
                (value.to_plain_string(), SelectionReason::Calculator)
            }
        }
        None if question_type == QuestionType::Numerical => {
            (value.to_plain_string(), SelectionReason::Calculator)
        }
        None => (llm_answer.to_string(), SelectionReason::Llm),
    }
}

/// First number found in an answer string, ignoring currency symbols,
/// thousands separators, and a percent sign.
pub fn parse_numeric_answer(text: &str) -> Option<f64> {
    let cleaned: String = text
        .chars()
        .filter(|c| !matches!(c, ',' | '$' | '€' | '£' | '¥'))
        .collect();
    let bytes: Vec<char> = cleaned.chars().collect();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() {
            let mut start = i;
            if start > 0 && bytes[start - 1] == '.' {
                // ".5" style fraction: back up over the point.
                start -= 1;
            }
            if start > 0 && bytes[start - 1] == '-' {
                start -= 1;
            }
            let mut end = i;
            let mut seen_point = bytes[start] == '.';
            while end < bytes.len() {
                let c = bytes[end];
                if c.is_ascii_digit() {
                    end += 1;
                } else if c == '.' && !seen_point {
                    seen_point = true;
                    end += 1;
                } else {
                    break;
                }
            }
            let candidate: String = bytes[start..end].iter().collect();
            let candidate = candidate.trim_end_matches('.');
            if let Ok(v) = candidate.parse::<f64>() {
                return Some(v);
            }
            i = end;
        } else {
            i += 1;
        }
    }
    None
}

/// Run the reasoning stage for one question over the given chunks: prompt,
/// parse (with a single corrective re-prompt on parse failure), evaluate any
/// formula, and select the final answer.
pub fn run_recap(
    question: &str,
    chunks: &[Chunk],
    client: &dyn CompletionClient,
    counter: &dyn TokenCounter,
    template: &str,
    tolerance: f64,
    max_output_tokens: u32,
) -> Result<RecapRun, ReasoningError> {
    let prompt = build_recap_prompt(question, chunks, template);
    let mut tokens = 0u64;
    let mut completion_calls = 0u32;
    let call = |prompt: String| -> Result<(String, u64), ClientError> {
        let request = CompletionRequest::new(prompt).with_max_output_tokens(max_output_tokens);
        let response = with_retries(DEFAULT_MAX_RETRIES, || client.complete(&request))?;
        let spent = (counter.count(&request.prompt) + counter.count(&response)) as u64;
        Ok((response, spent))
    };

    let (response, spent) = call(prompt.clone())?;
    tokens += spent;
    completion_calls += 1;
    let parsed = match parse_recap_output(&response) {
        Ok(parsed) => parsed,
        Err(first_err) => {
            log::warn!("reasoning reply unparseable ({first_err}); re-prompting once");
            let retry_prompt = format!(
                "{prompt}\nYour previous reply could not be parsed. Use the five labels \
                 exactly as in the example and finish with a Present: line containing \
                 only the final answer.\n"
            );
            let (second, spent) = call(retry_prompt)?;
            tokens += spent;
            completion_calls += 1;
            match parse_recap_output(&second) {
                Ok(parsed) => parsed,
                Err(_) => return Err(ReasoningError::Unparseable),
            }
        }
    };

    let (calc_outcome, calc_answer, calc_error) = match &parsed.formula {
        None => (CalcOutcome::NoFormula, None, None),
        Some(f) => match evaluate_formula(f) {
            Ok(value) => (CalcOutcome::Value(value.clone()), Some(value), None),
            Err(err) => {
                let message = err.to_string();
                (CalcOutcome::Failed(err), None, Some(message))
            }
        },
    };
    let (selected_answer, selection_reason) = select_answer(
        &parsed.llm_answer,
        &calc_outcome,
        parsed.question_type,
        tolerance,
    );
    Ok(RecapRun {
        trace: RecapTrace {
            restatement: parsed.restatement,
            question_type: parsed.question_type,
            evidence: parsed.evidence,
            formula: parsed.formula,
            llm_answer: parsed.llm_answer,
            calc_answer,
            calc_error,
            selected_answer,
            selection_reason,
        },
        completion_calls,
        tokens,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clients::{HeuristicTokenCounter, MockCompletionClient};
    use crate::corpus::ChunkKind;
    use crate::templates::PromptSet;

    fn chunk(text: &str) -> Chunk {
        Chunk {
            chunk_id: "d#c0".into(),
            doc_id: "d".into(),
            text: text.into(),
            kind: ChunkKind::Sentence,
            table_id: None,
            level: None,
            order: 0,
        }
    }

    #[test]
    fn prompt_carries_each_stage_label_exactly_once() {
        let prompt = build_recap_prompt(
            "How much did revenue grow?",
            &[chunk("Revenue was 100."), chunk("Revenue became 110.")],
            PromptSet::builtin().recap(),
        );
        for label in [
            RESTATE_LABEL,
            EXTRACT_LABEL,
            COMPUTE_LABEL,
            ANSWER_LABEL,
            PRESENT_LABEL,
        ] {
            assert_eq!(
                prompt.matches(label).count(),
                1,
                "label {label} must appear exactly once"
            );
        }
        // Exactly one worked example block.
        assert_eq!(prompt.matches("Example").count(), 1);
        assert!(prompt.contains("Revenue was 100.\nRevenue became 110."));
        assert!(prompt.contains("How much did revenue grow?"));
        assert!(prompt.contains("FORMULA: none"));
    }

    const GOOD_REPLY: &str = "\
Restate: The question asks for the change in revenue. Type: numerical.
Extract: revenue 2013 = 100; revenue 2014 = 110
Compute: the difference between the two years
FORMULA: 110-100
Answer: Revenue grew by 10.
Present: 10";

    #[test]
    fn parse_full_reply() {
        let parsed = parse_recap_output(GOOD_REPLY).unwrap();
        assert_eq!(parsed.question_type, QuestionType::Numerical);
        assert_eq!(parsed.evidence.len(), 2);
        assert_eq!(parsed.evidence[0], "revenue 2013 = 100");
        assert_eq!(parsed.formula.as_deref(), Some("110-100"));
        assert_eq!(parsed.llm_answer, "10");
        assert!(parsed.restatement.contains("change in revenue"));
    }

    #[test]
    fn parse_falls_back_to_answer_section() {
        let reply = "Restate: Which city? Type: fact.\nAnswer: Zurich is the answer.";
        let parsed = parse_recap_output(reply).unwrap();
        assert_eq!(parsed.llm_answer, "Zurich is the answer.");
        assert_eq!(parsed.question_type, QuestionType::Fact);
        assert_eq!(parsed.formula, None);
        // Neither Present nor Answer -> parse error.
        let err = parse_recap_output("Restate: something. Type: fact.").unwrap_err();
        assert_eq!(err, RecapParseError::MissingAnswer);
    }

    #[test]
    fn formula_none_and_missing_treated_as_no_formula() {
        let reply = "FORMULA: none\nPresent: Zurich";
        assert_eq!(parse_recap_output(reply).unwrap().formula, None);
        let reply2 = "Present: Zurich";
        assert_eq!(parse_recap_output(reply2).unwrap().formula, None);
        // First FORMULA line wins.
        let reply3 = "FORMULA: 1+1\nFORMULA: 2+2\nPresent: 2";
        assert_eq!(
            parse_recap_output(reply3).unwrap().formula.as_deref(),
            Some("1+1")
        );
    }

    #[test]
    fn classify_recognises_types() {
        assert_eq!(classify("... Type: numerical."), QuestionType::Numerical);
        assert_eq!(classify("... Type: fact."), QuestionType::Fact);
        assert_eq!(classify("... Type: multi-hop."), QuestionType::MultiHop);
        assert_eq!(classify("... Type: open."), QuestionType::Other);
        assert_eq!(classify("no type marker"), QuestionType::Other);
    }

    #[test]
    fn select_answer_rules() {
        let calc = CalcOutcome::Value(evaluate_formula("9.3-0.009").unwrap()); // 9.291
                                                                               // Numeric agreement within 1e-3: model kept verbatim.
        let (answer, reason) = select_answer("9.29%", &calc, QuestionType::Numerical, 1e-3);
        assert_eq!(answer, "9.29%");
        assert_eq!(reason, SelectionReason::Llm);
        // Numeric disagreement: calculator wins.
        let (answer, reason) = select_answer("12.4", &calc, QuestionType::Numerical, 1e-3);
        assert_eq!(answer, "9.291");
        assert_eq!(reason, SelectionReason::Calculator);
        // Non-numeric model answer on a numerical question: calculator wins.
        let (answer, reason) =
            select_answer("roughly stable", &calc, QuestionType::Numerical, 1e-3);
        assert_eq!(answer, "9.291");
        assert_eq!(reason, SelectionReason::Calculator);
        // Non-numeric model answer on a fact question: model wins.
        let (answer, reason) = select_answer("Zurich", &calc, QuestionType::Fact, 1e-3);
        assert_eq!(answer, "Zurich");
        assert_eq!(reason, SelectionReason::Llm);
        // No formula.
        let (answer, reason) =
            select_answer("Zurich", &CalcOutcome::NoFormula, QuestionType::Fact, 1e-3);
        assert_eq!(answer, "Zurich");
        assert_eq!(reason, SelectionReason::LlmNoFormula);
        // Calculator failure: model answer stands.
        let failed = CalcOutcome::Failed(CalcError::DivisionByZero);
        let (answer, reason) = select_answer("4.2", &failed, QuestionType::Numerical, 1e-3);
        assert_eq!(answer, "4.2");
        assert_eq!(reason, SelectionReason::Llm);
    }

    #[test]
    fn numeric_answer_parsing() {
        assert_eq!(parse_numeric_answer("9.29%"), Some(9.29));
        assert_eq!(parse_numeric_answer("$1,234.5 million"), Some(1234.5));
        assert_eq!(parse_numeric_answer("about -12 units"), Some(-12.0));
        assert_eq!(parse_numeric_answer("grew by .5 points"), Some(0.5));
        assert_eq!(parse_numeric_answer("no numbers here"), None);
        assert_eq!(parse_numeric_answer("ends with period 42."), Some(42.0));
    }

    #[test]
    fn run_recap_happy_path() {
        let client = MockCompletionClient::from_pairs(vec![("Question: How", GOOD_REPLY)]);
        let run = run_recap(
            "How much did revenue grow?",
            &[chunk("Revenue was 100 then 110.")],
            &client,
            &HeuristicTokenCounter,
            PromptSet::builtin().recap(),
            1e-3,
            1024,
        )
        .unwrap();
        assert_eq!(run.completion_calls, 1);
        assert!(run.tokens > 0);
        assert_eq!(run.trace.selected_answer, "10");
        assert_eq!(run.trace.selection_reason, SelectionReason::Llm);
        assert_eq!(
            run.trace.calc_answer.as_ref().map(|d| d.to_plain_string()),
            Some("10".to_string())
        );
    }

    #[test]
    fn run_recap_reprompts_once_then_fails() {
        // Sentinel reply ("NO_SCRIPTED_RESPONSE") never parses; after one
        // corrective re-prompt the stage gives up.
        let client = MockCompletionClient::from_pairs(Vec::<(String, String)>::new());
        let err = run_recap(
            "Any question",
            &[chunk("Some document text.")],
            &client,
            &HeuristicTokenCounter,
            PromptSet::builtin().recap(),
            1e-3,
            1024,
        )
        .unwrap_err();
        assert!(matches!(err, ReasoningError::Unparseable));
    }

    #[test]
    fn run_recap_recovers_on_second_attempt() {
        // The corrective re-prompt contains a distinctive reminder line the
        // first prompt lacks; script the good reply against it.
        let client = MockCompletionClient::from_pairs(vec![("could not be parsed", "Present: 64")]);
        let run = run_recap(
            "What is the figure?",
            &[chunk("The figure is 64.")],
            &client,
            &HeuristicTokenCounter,
            PromptSet::builtin().recap(),
            1e-3,
            1024,
        )
        .unwrap();
        assert_eq!(run.completion_calls, 2);
        assert_eq!(run.trace.selected_answer, "64");
        assert_eq!(run.trace.selection_reason, SelectionReason::LlmNoFormula);
    }

    #[test]
    fn broken_formula_recorded_and_llm_answer_stands() {
        let reply = "Restate: Delta? Type: numerical.\nFORMULA: 1/0\nPresent: 7";
        let client = MockCompletionClient::from_pairs(vec![("Question:", reply)]);
        let run = run_recap(
            "Delta?",
            &[chunk("irrelevant")],
            &client,
            &HeuristicTokenCounter,
            PromptSet::builtin().recap(),
            1e-3,
            1024,
        )
        .unwrap();
        assert_eq!(run.trace.selected_answer, "7");
        assert_eq!(run.trace.selection_reason, SelectionReason::Llm);
        assert_eq!(run.trace.calc_answer, None);
        assert!(run
            .trace
            .calc_error
            .as_deref()
            .unwrap()
            .contains("division by zero"));
    }
}
