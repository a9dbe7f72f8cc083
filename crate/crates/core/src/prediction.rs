//! Answer prediction under a given context (nothing, the verbatim history,
//! or a persona narrative), plus per-respondent template selection.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{QuestionSpec, ResponseSet};
use crate::error::{Error, Result};
use crate::gateway::{Gateway, ModelRequest, ModelSpec, Role};
use crate::prompt::{self, GenerationTemplate, PredictionTemplate, TemplateKind};
use crate::seed::sha256_hex;

/// What the prediction model is told about the respondent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Condition {
    Baseline,
    Raw,
    Persona(GenerationTemplate),
    /// Per-respondent best template chosen by calibration.
    BestPersona,
}

impl Condition {
    pub fn prediction_template(self) -> PredictionTemplate {
        match self {
            Condition::Baseline => PredictionTemplate::Baseline,
            Condition::Raw => PredictionTemplate::Raw,
            Condition::Persona(_) | Condition::BestPersona => PredictionTemplate::Persona,
        }
    }

    pub fn label(self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Baseline => f.write_str("baseline"),
            Condition::Raw => f.write_str("raw"),
            Condition::Persona(t) => write!(f, "persona:{t}"),
            Condition::BestPersona => f.write_str("persona:best"),
        }
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Condition::Baseline),
            "raw" => Ok(Condition::Raw),
            "persona:best" | "best" => Ok(Condition::BestPersona),
            other => {
                let t = other.strip_prefix("persona:").unwrap_or(other);
                t.parse().map(Condition::Persona)
            }
        }
    }
}

impl From<Condition> for String {
    fn from(c: Condition) -> String {
        c.to_string()
    }
}

impl TryFrom<String> for Condition {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// One prediction. `predicted` is `None` when no parseable answer was
/// obtained; such records are excluded from scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub run_id: String,
    pub respondent_id: String,
    pub question_id: String,
    pub condition: Condition,
    pub predicted: Option<String>,
    pub truth: Option<String>,
    pub raw_output: String,
    pub prompt_digest: String,
    pub retries_used: u32,
}

impl PredictionRecord {
    pub fn is_scorable(&self) -> bool {
        self.predicted.is_some() && self.truth.is_some()
    }

    pub fn is_correct(&self) -> bool {
        self.is_scorable() && self.predicted == self.truth
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PredictionTask<'a> {
    pub respondent_id: &'a str,
    pub condition: Condition,
    /// Persona narrative or serialized history; unused for the baseline.
    pub context: Option<&'a str>,
    pub question: &'a QuestionSpec,
    pub truth: Option<&'a str>,
    /// Free-form phase label for the request tag, e.g. `eval` or `gen/i2c3`.
    pub phase: &'a str,
}

pub struct Predictor<'g> {
    gateway: &'g Gateway,
    model: ModelSpec,
    parse_retries: u32,
    run_id: String,
}

struct Pending<'a> {
    task: PredictionTask<'a>,
    prompt: String,
    last_output: String,
}

impl<'g> Predictor<'g> {
    /// The prediction model always runs at its configured temperature
    /// (0 by default).
    pub fn new(gateway: &'g Gateway, model: ModelSpec) -> Self {
        Predictor {
            gateway,
            model,
            parse_retries: 2,
            run_id: String::new(),
        }
    }

    /// Re-asks after an unparseable answer, up to `n` extra times. Each
    /// re-ask uses a fresh sample index so it is not served from cache.
    pub fn with_parse_retries(mut self, n: u32) -> Self {
        self.parse_retries = n;
        self
    }

    pub fn with_run_id(mut self, run_id: impl Into<String>) -> Self {
        self.run_id = run_id.into();
        self
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn gateway(&self) -> &'g Gateway {
        self.gateway
    }

    fn render(&self, task: &PredictionTask<'_>) -> Result<String> {
        let kind = TemplateKind::Prediction(task.condition.prediction_template());
        let context = match task.condition {
            Condition::Baseline => None,
            _ => Some(task.context.ok_or_else(|| Error::MissingPersona(task.condition.label()))?),
        };
        Ok(prompt::render_prediction_prompt(kind, context, &task.question.text, &task.question.answers)?.text)
    }

    fn request(&self, task: &PredictionTask<'_>, prompt: &str) -> ModelRequest {
        ModelRequest::new(Role::Prediction, &self.model, prompt).tagged(format!(
            "{}/{}/{}/{}",
            task.respondent_id, task.condition, task.phase, task.question.id
        ))
    }

    pub fn predict(&self, task: PredictionTask<'_>) -> Result<PredictionRecord> {
        Ok(self.predict_many(&[task])?.remove(0))
    }

    /// Predicts every task, issuing each round of requests concurrently.
    /// Backend failures abort the batch; unparseable answers are retried
    /// and finally recorded with `predicted = None`.
    pub fn predict_many(&self, tasks: &[PredictionTask<'_>]) -> Result<Vec<PredictionRecord>> {
        let mut out: Vec<Option<PredictionRecord>> = vec![None; tasks.len()];
        let mut pending: Vec<(usize, Pending<'_>)> = Vec::with_capacity(tasks.len());
        for (i, t) in tasks.iter().enumerate() {
            pending.push((
                i,
                Pending {
                    task: *t,
                    prompt: self.render(t)?,
                    last_output: String::new(),
                },
            ));
        }
        for attempt in 0..=self.parse_retries {
            if pending.is_empty() {
                break;
            }
            let reqs: Vec<(ModelRequest, u32)> = pending
                .iter()
                .map(|(_, p)| (self.request(&p.task, &p.prompt), attempt))
                .collect();
            let results = self.gateway.complete_many(&reqs);
            let mut still = Vec::new();
            for ((i, mut p), res) in pending.into_iter().zip(results) {
                let resp = res?;
                match prompt::parse_answer(&resp.text, &p.task.question.answers) {
                    Ok(answer) => {
                        out[i] = Some(self.record(&p, Some(answer), resp.text, attempt));
                    }
                    Err(_) => {
                        log::debug!(
                            "unparseable answer for {}/{}: {:?}",
                            p.task.respondent_id,
                            p.task.question.id,
                            resp.text
                        );
                        p.last_output = resp.text;
                        still.push((i, p));
                    }
                }
            }
            pending = still;
        }
        for (i, p) in pending {
            let raw = p.last_output.clone();
            out[i] = Some(self.record(&p, None, raw, self.parse_retries));
        }
        Ok(out.into_iter().map(|r| r.expect("every task resolved")).collect())
    }

    fn record(&self, p: &Pending<'_>, predicted: Option<String>, raw_output: String, retries: u32) -> PredictionRecord {
        PredictionRecord {
            run_id: self.run_id.clone(),
            respondent_id: p.task.respondent_id.to_string(),
            question_id: p.task.question.id.clone(),
            condition: p.task.condition,
            predicted,
            truth: p.task.truth.map(str::to_string),
            raw_output,
            prompt_digest: sha256_hex(p.prompt.as_bytes()),
            retries_used: retries,
        }
    }

    /// Predicts `questions` for one respondent under one context and scores
    /// the result against `rs`.
    pub fn evaluate(
        &self,
        rs: &ResponseSet,
        condition: Condition,
        context: Option<&str>,
        questions: &[&QuestionSpec],
        phase: &str,
    ) -> Result<Evaluation> {
        let tasks: Vec<PredictionTask<'_>> = questions
            .iter()
            .map(|q| PredictionTask {
                respondent_id: &rs.respondent_id,
                condition,
                context,
                question: q,
                truth: rs.answer(&q.id),
                phase,
            })
            .collect();
        Evaluation::from_records(self.predict_many(&tasks)?)
    }
}

/// Scored predictions for one respondent and context.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub correct: usize,
    pub scorable: usize,
    pub unscorable: usize,
    pub records: Vec<PredictionRecord>,
}

impl Evaluation {
    pub fn from_records(records: Vec<PredictionRecord>) -> Result<Self> {
        let scorable = records.iter().filter(|r| r.is_scorable()).count();
        let correct = records.iter().filter(|r| r.is_correct()).count();
        let unscorable = records.iter().filter(|r| r.predicted.is_none()).count();
        if scorable == 0 {
            return Err(Error::NoScorable);
        }
        Ok(Evaluation {
            accuracy: correct as f64 / scorable as f64,
            correct,
            scorable,
            unscorable,
            records,
        })
    }

    /// Set when any prediction could not be parsed.
    pub fn audit_flag(&self) -> bool {
        self.unscorable > 0
    }

    pub fn unscorable_fraction(&self) -> f64 {
        self.unscorable as f64 / self.records.len().max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    /// Selection on a held-out slice of the non-generation questions.
    HeldOutCalibration,
    /// Selection on the evaluation questions themselves; optimistic.
    OracleEval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationChoice {
    pub respondent_id: String,
    pub chosen_template: GenerationTemplate,
    pub per_template_acc: BTreeMap<GenerationTemplate, f64>,
    pub mode: CalibrationMode,
}

/// Template with the highest accuracy; ties go to the earliest template in
/// the fixed order basic, bounded, calculus, pmt.
pub fn select_template(per_template_acc: &BTreeMap<GenerationTemplate, f64>) -> Option<GenerationTemplate> {
    let mut best: Option<(GenerationTemplate, f64)> = None;
    for t in GenerationTemplate::ALL {
        if let Some(&acc) = per_template_acc.get(&t) {
            if best.is_none_or(|(_, b)| acc > b) {
                best = Some((t, acc));
            }
        }
    }
    best.map(|(t, _)| t)
}

impl CalibrationChoice {
    /// Chooses among per-template persona predictions of one respondent.
    /// Templates with no scorable prediction take no part.
    pub fn from_records<'a>(
        respondent_id: &str,
        records: impl IntoIterator<Item = &'a PredictionRecord>,
        mode: CalibrationMode,
    ) -> Result<Self> {
        let mut tallies: BTreeMap<GenerationTemplate, (usize, usize)> = BTreeMap::new();
        for r in records {
            if let (Condition::Persona(t), true) = (r.condition, r.is_scorable()) {
                let e = tallies.entry(t).or_default();
                e.0 += r.is_correct() as usize;
                e.1 += 1;
            }
        }
        let per_template_acc: BTreeMap<GenerationTemplate, f64> = tallies
            .into_iter()
            .map(|(t, (c, n))| (t, c as f64 / n as f64))
            .collect();
        let chosen_template = select_template(&per_template_acc).ok_or(Error::NoScorable)?;
        Ok(CalibrationChoice {
            respondent_id: respondent_id.to_string(),
            chosen_template,
            per_template_acc,
            mode,
        })
    }
}

/// Evaluates each template's persona on `calib_qs` and picks the most
/// accurate one. Templates whose predictions are all unparseable take no
/// part.
pub fn calibrate_select(
    predictor: &Predictor<'_>,
    personas: &BTreeMap<GenerationTemplate, String>,
    calib_qs: &[&QuestionSpec],
    rs: &ResponseSet,
    mode: CalibrationMode,
) -> Result<CalibrationChoice> {
    if personas.is_empty() || calib_qs.is_empty() {
        return Err(Error::NoScorable);
    }
    let phase = match mode {
        CalibrationMode::HeldOutCalibration => "calib",
        CalibrationMode::OracleEval => "eval",
    };
    let tasks: Vec<PredictionTask<'_>> = personas
        .iter()
        .flat_map(|(t, text)| {
            calib_qs.iter().map(move |q| PredictionTask {
                respondent_id: &rs.respondent_id,
                condition: Condition::Persona(*t),
                context: Some(text.as_str()),
                question: q,
                truth: rs.answer(&q.id),
                phase,
            })
        })
        .collect();
    let records = predictor.predict_many(&tasks)?;
    CalibrationChoice::from_records(&rs.respondent_id, &records, mode)
}
