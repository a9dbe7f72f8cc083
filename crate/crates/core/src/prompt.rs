//! Prompt templates, raw-history serialization, answer parsing and token
//! accounting.
//!
//! Generation and prediction templates live in `templates/` and are
//! embedded at compile time. Placeholders use `{{ name }}` syntax; inner
//! whitespace is ignored, so `{{ raw_narrative }}` and `{{narrative}}` are
//! both recognized. Substitution is single-pass over the template, so values
//! containing braces are inserted literally.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{QuestionSpec, ResponseSet};
use crate::error::{Error, Result};

pub const GENERATION_BASIC: &str = include_str!("../templates/generation_basic.txt");
pub const GENERATION_BOUNDED: &str = include_str!("../templates/generation_bounded.txt");
pub const GENERATION_CALCULUS: &str = include_str!("../templates/generation_calculus.txt");
pub const GENERATION_PMT: &str = include_str!("../templates/generation_pmt.txt");
pub const PREDICT_BASELINE: &str = include_str!("../templates/predict_baseline.txt");
pub const PREDICT_PERSONA: &str = include_str!("../templates/predict_persona.txt");
/// Reconstructed: the critique prompt for the feedback model.
pub const FEEDBACK: &str = include_str!("../templates/feedback.txt");
/// Reconstructed: regeneration from the incumbent persona plus feedback.
pub const REFINE: &str = include_str!("../templates/refine.txt");

/// Persona generation templates. The declaration order is the tie-break
/// order used by calibration.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum GenerationTemplate {
    Basic,
    Bounded,
    Calculus,
    Pmt,
}

impl GenerationTemplate {
    pub const ALL: [GenerationTemplate; 4] = [
        GenerationTemplate::Basic,
        GenerationTemplate::Bounded,
        GenerationTemplate::Calculus,
        GenerationTemplate::Pmt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GenerationTemplate::Basic => "basic",
            GenerationTemplate::Bounded => "bounded",
            GenerationTemplate::Calculus => "calculus",
            GenerationTemplate::Pmt => "pmt",
        }
    }

    pub fn template_text(self) -> &'static str {
        match self {
            GenerationTemplate::Basic => GENERATION_BASIC,
            GenerationTemplate::Bounded => GENERATION_BOUNDED,
            GenerationTemplate::Calculus => GENERATION_CALCULUS,
            GenerationTemplate::Pmt => GENERATION_PMT,
        }
    }
}

impl fmt::Display for GenerationTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GenerationTemplate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "basic" => Ok(GenerationTemplate::Basic),
            "bounded" => Ok(GenerationTemplate::Bounded),
            "calculus" => Ok(GenerationTemplate::Calculus),
            "pmt" => Ok(GenerationTemplate::Pmt),
            _ => Err(Error::UnknownTemplate(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionTemplate {
    /// Unpersonalized, standard privacy norms only.
    Baseline,
    Persona,
    /// Persona template with the verbatim history in the narrative slot.
    Raw,
}

impl PredictionTemplate {
    pub fn as_str(self) -> &'static str {
        match self {
            PredictionTemplate::Baseline => "baseline",
            PredictionTemplate::Persona => "persona",
            PredictionTemplate::Raw => "raw",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "stage", content = "kind", rename_all = "snake_case")]
pub enum TemplateKind {
    Generation(GenerationTemplate),
    Prediction(PredictionTemplate),
    Feedback,
    Refine,
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TemplateKind::Generation(g) => write!(f, "generation:{g}"),
            TemplateKind::Prediction(p) => write!(f, "prediction:{}", p.as_str()),
            TemplateKind::Feedback => f.write_str("feedback"),
            TemplateKind::Refine => f.write_str("refine"),
        }
    }
}

impl FromStr for TemplateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(TemplateKind::Prediction(PredictionTemplate::Baseline)),
            "persona" => Ok(TemplateKind::Prediction(PredictionTemplate::Persona)),
            "raw" => Ok(TemplateKind::Prediction(PredictionTemplate::Raw)),
            "feedback" => Ok(TemplateKind::Feedback),
            "refine" => Ok(TemplateKind::Refine),
            other => other.parse().map(TemplateKind::Generation),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub text: String,
    pub kind: TemplateKind,
    pub placeholders_filled: BTreeSet<String>,
    /// Non-fatal lint findings, e.g. an empty history.
    pub warnings: Vec<String>,
}

/// Substitutes `{{ name }}` placeholders. Every placeholder present in the
/// template must have a value.
pub fn fill(template: &str, values: &[(&str, &str)]) -> Result<(String, BTreeSet<String>)> {
    let mut out = String::with_capacity(template.len() + 256);
    let mut filled = BTreeSet::new();
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        let Some(close) = rest[open + 2..].find("}}") else {
            break;
        };
        let name = rest[open + 2..open + 2 + close].trim();
        let value = values
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::UnfilledPlaceholder(name.to_string()))?;
        out.push_str(&rest[..open]);
        out.push_str(value);
        filled.insert(name.to_string());
        rest = &rest[open + 2 + close + 2..];
    }
    out.push_str(rest);
    Ok((out, filled))
}

/// Delimited list of answer options in answer-set order: `"Yes", "No"`.
pub fn format_answer_range(answers: &[String]) -> String {
    answers
        .iter()
        .map(|a| format!("\"{a}\""))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Renders a respondent's question/answer history as text, one block per
/// question in the order given (callers pass dataset column order).
pub fn serialize_raw_narrative(qs: &[&QuestionSpec], rs: &ResponseSet) -> Result<String> {
    let mut blocks = Vec::with_capacity(qs.len());
    for q in qs {
        let answer = rs
            .answer(&q.id)
            .ok_or_else(|| Error::MissingAnswer(q.id.clone()))?;
        blocks.push(format!(
            "Question: {}\nAnswer Range: {}\nUser Answer: {}",
            q.text,
            format_answer_range(&q.answers),
            answer
        ));
    }
    Ok(blocks.join("\n\n"))
}

pub fn render_generation_prompt(kind: TemplateKind, raw_narrative: &str) -> Result<RenderedPrompt> {
    let TemplateKind::Generation(g) = kind else {
        return Err(Error::UnknownTemplate(format!(
            "{kind} is not a generation template"
        )));
    };
    let (text, placeholders_filled) = fill(
        g.template_text(),
        &[("raw_narrative", raw_narrative), ("narrative", raw_narrative)],
    )?;
    let mut warnings = Vec::new();
    if raw_narrative.trim().is_empty() {
        warnings.push(format!("{g} generation prompt rendered with an empty history"));
    }
    Ok(RenderedPrompt {
        text,
        kind,
        placeholders_filled,
        warnings,
    })
}

pub fn render_prediction_prompt(
    kind: TemplateKind,
    persona: Option<&str>,
    question: &str,
    answer_range: &[String],
) -> Result<RenderedPrompt> {
    let TemplateKind::Prediction(p) = kind else {
        return Err(Error::UnknownTemplate(format!(
            "{kind} is not a prediction template"
        )));
    };
    if answer_range.is_empty() {
        return Err(Error::InvalidRequest("empty answer range".into()));
    }
    let range = format_answer_range(answer_range);
    let (text, placeholders_filled) = match p {
        PredictionTemplate::Baseline => fill(
            PREDICT_BASELINE,
            &[("question", question), ("answer_range", &range)],
        )?,
        PredictionTemplate::Persona | PredictionTemplate::Raw => {
            let narrative = persona.ok_or_else(|| Error::MissingPersona(p.as_str().into()))?;
            fill(
                PREDICT_PERSONA,
                &[
                    ("narrative", narrative),
                    ("raw_narrative", narrative),
                    ("question", question),
                    ("answer_range", &range),
                ],
            )?
        }
    };
    Ok(RenderedPrompt {
        text,
        kind,
        placeholders_filled,
        warnings: Vec::new(),
    })
}

pub fn render_feedback_prompt(
    narrative: &str,
    prediction_results: &str,
    criteria: &str,
) -> Result<RenderedPrompt> {
    let (text, placeholders_filled) = fill(
        FEEDBACK,
        &[
            ("narrative", narrative),
            ("prediction_results", prediction_results),
            ("criteria", criteria),
        ],
    )?;
    Ok(RenderedPrompt {
        text,
        kind: TemplateKind::Feedback,
        placeholders_filled,
        warnings: Vec::new(),
    })
}

pub fn render_refine_prompt(narrative: &str, feedback: &str) -> Result<RenderedPrompt> {
    let (text, placeholders_filled) =
        fill(REFINE, &[("narrative", narrative), ("feedback", feedback)])?;
    Ok(RenderedPrompt {
        text,
        kind: TemplateKind::Refine,
        placeholders_filled,
        warnings: Vec::new(),
    })
}

const QUOTES: &[char] = &['"', '\'', '`', '\u{201c}', '\u{201d}', '\u{2018}', '\u{2019}', '*', '_'];
const TRAILING: &[char] = &['.', '!', ',', ';', ':'];

fn normalize(raw: &str) -> String {
    let mut s = raw.trim();
    loop {
        let before = s.len();
        s = s.trim_matches(QUOTES).trim();
        s = s.trim_end_matches(TRAILING).trim();
        if s.len() == before {
            break;
        }
    }
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Maps a model output onto a member of `answers`.
///
/// The output is trimmed and stripped of surrounding quotes/emphasis and
/// trailing punctuation, then matched against the answers exactly, then
/// case-insensitively. On numeric scales an integer token in range matches
/// its numeral. No substring extraction is attempted.
pub fn parse_answer(raw_output: &str, answers: &[String]) -> Result<String> {
    let unparseable = || Error::UnparseableAnswer {
        raw: raw_output.to_string(),
    };
    if answers.is_empty() {
        return Err(unparseable());
    }
    let norm = normalize(raw_output);
    if norm.is_empty() {
        return Err(unparseable());
    }
    let keyed: Vec<String> = answers.iter().map(|a| normalize(a)).collect();
    if let Some(i) = keyed.iter().position(|a| *a == norm) {
        return Ok(answers[i].clone());
    }
    let lower = norm.to_lowercase();
    if let Some(i) = keyed.iter().position(|a| a.to_lowercase() == lower) {
        return Ok(answers[i].clone());
    }
    let numeric: Option<Vec<i64>> = answers.iter().map(|a| a.trim().parse().ok()).collect();
    if let (Some(values), Ok(v)) = (numeric, norm.parse::<i64>()) {
        if let Some(i) = values.iter().position(|x| *x == v) {
            return Ok(answers[i].clone());
        }
    }
    Err(unparseable())
}

pub trait Tokenizer: Send + Sync {
    /// Label written into reports next to token counts.
    fn name(&self) -> &str;
    fn count(&self, text: &str) -> usize;
}

/// Counts runs of alphanumerics plus each standalone punctuation or symbol
/// character. A rough stand-in for subword tokenizers.
#[derive(Debug, Clone, Copy, Default)]
pub struct ApproxTokenizer;

impl Tokenizer for ApproxTokenizer {
    fn name(&self) -> &str {
        "approx-word-punct"
    }

    fn count(&self, text: &str) -> usize {
        let mut n = 0;
        let mut in_word = false;
        for c in text.chars() {
            if c.is_alphanumeric() {
                if !in_word {
                    n += 1;
                    in_word = true;
                }
            } else {
                in_word = false;
                if !c.is_whitespace() {
                    n += 1;
                }
            }
        }
        n
    }
}

/// Adapter for an external tokenizer supplied as a closure.
pub struct FnTokenizer<F> {
    name: String,
    f: F,
}

impl<F: Fn(&str) -> usize + Send + Sync> FnTokenizer<F> {
    pub fn new(name: impl Into<String>, f: F) -> Self {
        FnTokenizer {
            name: name.into(),
            f,
        }
    }
}

impl<F: Fn(&str) -> usize + Send + Sync> Tokenizer for FnTokenizer<F> {
    fn name(&self) -> &str {
        &self.name
    }

    fn count(&self, text: &str) -> usize {
        (self.f)(text)
    }
}

/// `100 * (1 - narrative / raw)`; `None` when `raw` is zero.
pub fn percent_reduction(raw_tokens: f64, narrative_tokens: f64) -> Option<f64> {
    (raw_tokens > 0.0).then(|| 100.0 * (1.0 - narrative_tokens / raw_tokens))
}
