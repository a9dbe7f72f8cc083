//! Iterative persona optimization.
//!
//! Each iteration samples `B` candidate narratives (from the generation
//! template on the first pass, from the current best persona plus feedback
//! afterwards), scores every candidate by predicting the respondent's
//! generation-set answers, and keeps the best persona, replacing it only on
//! strict improvement. The loop ends when the best accuracy reaches the
//! early-stop threshold or the iteration budget runs out.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::{QuestionSpec, ResponseSet};
use crate::error::{Error, Result};
use crate::gateway::{Gateway, ModelRequest, ModelSpec, Role};
use crate::prediction::{Condition, Evaluation, PredictionRecord, PredictionTask, Predictor};
use crate::prompt::{self, ApproxTokenizer, GenerationTemplate, TemplateKind, Tokenizer};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Stop only on the accuracy threshold or the iteration budget.
    #[default]
    AlgorithmLiteral,
    /// Additionally stop after an iteration that did not improve the best.
    NoImprovement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerParams {
    /// Candidates per iteration (`B`).
    pub candidates: usize,
    /// Maximum iterations (`I`).
    pub iterations: usize,
    /// Generation temperature.
    pub temperature: f64,
    pub template: GenerationTemplate,
    pub early_stop_acc: f64,
    pub stop_rule: StopRule,
    /// Candidates with a larger share of unparseable predictions are
    /// discarded.
    pub max_unscorable_fraction: f64,
}

impl Default for OptimizerParams {
    fn default() -> Self {
        OptimizerParams {
            candidates: 5,
            iterations: 3,
            temperature: 1.5,
            template: GenerationTemplate::Basic,
            early_stop_acc: 1.0,
            stop_rule: StopRule::AlgorithmLiteral,
            max_unscorable_fraction: 0.5,
        }
    }
}

impl OptimizerParams {
    pub fn validate(&self) -> Result<()> {
        if self.candidates == 0 || self.iterations == 0 {
            return Err(Error::Config("candidates and iterations must be at least 1".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(Error::Config(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if !(self.early_stop_acc > 0.0 && self.early_stop_acc <= 1.0) {
            return Err(Error::Config(format!(
                "early_stop_acc must be in (0, 1], got {}",
                self.early_stop_acc
            )));
        }
        if !(0.0..=1.0).contains(&self.max_unscorable_fraction) {
            return Err(Error::Config("max_unscorable_fraction must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageStep {
    pub iteration: usize,
    pub candidate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Persona {
    pub respondent_id: String,
    pub template: GenerationTemplate,
    pub text: String,
    pub gen_accuracy: f64,
    pub iteration_found: usize,
    pub token_count: usize,
    /// Candidates this persona descends from, oldest first.
    pub lineage: Vec<LineageStep>,
    /// Unparseable predictions while scoring on the generation set.
    pub gen_unscorable: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackCriteria {
    pub predictiveness: bool,
    pub conciseness: bool,
    pub generalization: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackNote {
    pub text: String,
    pub covers: FeedbackCriteria,
    /// Mispredicted (or unparseable) generation questions, in question
    /// order; computed locally, not by the model.
    pub wrong_questions: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateStatus {
    Scored,
    /// Too many unparseable predictions.
    Discarded,
    /// Empty generation output or nothing scorable.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateOutcome {
    pub candidate: usize,
    pub status: CandidateStatus,
    pub accuracy: Option<f64>,
    pub unscorable: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSource {
    Template,
    Refine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    pub source: CandidateSource,
    pub candidates: Vec<CandidateOutcome>,
    pub best_so_far: Option<f64>,
    pub improved: bool,
    pub generation_calls: usize,
    pub prediction_calls: usize,
    pub feedback_calls: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ReachedThreshold,
    IterationBudget,
    NoImprovement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerTrace {
    pub iterations: Vec<IterationTrace>,
    pub stop_reason: StopReason,
}

impl OptimizerTrace {
    pub fn best_so_far(&self) -> Vec<Option<f64>> {
        self.iterations.iter().map(|it| it.best_so_far).collect()
    }

    pub fn generation_calls(&self) -> usize {
        self.iterations.iter().map(|it| it.generation_calls).sum()
    }

    pub fn feedback_calls(&self) -> usize {
        self.iterations.iter().map(|it| it.feedback_calls).sum()
    }

    pub fn prediction_calls(&self) -> usize {
        self.iterations.iter().map(|it| it.prediction_calls).sum()
    }
}

struct Best {
    persona: Persona,
    records: Vec<PredictionRecord>,
}

/// Runs persona generation, scoring and feedback against one gateway.
pub struct PersonaEngine<'g> {
    gateway: &'g Gateway,
    generation: ModelSpec,
    feedback: ModelSpec,
    predictor: Predictor<'g>,
    tokenizer: Arc<dyn Tokenizer>,
}

impl<'g> PersonaEngine<'g> {
    pub fn new(gateway: &'g Gateway, generation: ModelSpec, feedback: ModelSpec, predictor: Predictor<'g>) -> Self {
        PersonaEngine {
            gateway,
            generation,
            feedback,
            predictor,
            tokenizer: Arc::new(ApproxTokenizer),
        }
    }

    pub fn with_tokenizer(mut self, tokenizer: Arc<dyn Tokenizer>) -> Self {
        self.tokenizer = tokenizer;
        self
    }

    pub fn predictor(&self) -> &Predictor<'g> {
        &self.predictor
    }

    /// Predicts `qs` from `text` with the persona prompt and scores them
    /// against `rs`.
    pub fn evaluate_persona(
        &self,
        template: GenerationTemplate,
        text: &str,
        qs: &[&QuestionSpec],
        rs: &ResponseSet,
    ) -> Result<Evaluation> {
        if qs.is_empty() {
            return Err(Error::InvalidRequest("no questions to evaluate".into()));
        }
        self.predictor
            .evaluate(rs, Condition::Persona(template), Some(text), qs, "eval")
    }

    /// Asks the feedback model to critique `persona` given its predictions
    /// on the generation set.
    pub fn build_feedback(
        &self,
        persona: &str,
        records: &[PredictionRecord],
        qs: &[&QuestionSpec],
        tag: &str,
        sample_index: u32,
    ) -> Result<FeedbackNote> {
        let wrong: Vec<(&QuestionSpec, &PredictionRecord)> = qs
            .iter()
            .filter_map(|q| {
                records
                    .iter()
                    .find(|r| r.question_id == q.id)
                    .filter(|r| r.truth.is_some() && !r.is_correct())
                    .map(|r| (*q, r))
            })
            .collect();
        let results = if wrong.is_empty() {
            "All questions were predicted correctly.".to_string()
        } else {
            wrong
                .iter()
                .map(|(q, r)| {
                    format!(
                        "Question ID: {}\nQuestion: {}\nPredicted Answer: {}\nUser Answer: {}",
                        q.id,
                        q.text,
                        r.predicted.as_deref().unwrap_or("(no valid answer)"),
                        r.truth.as_deref().unwrap_or_default()
                    )
                })
                .collect::<Vec<_>>()
                .join("\n\n")
        };
        let covers = FeedbackCriteria {
            predictiveness: !wrong.is_empty(),
            conciseness: true,
            generalization: true,
        };
        let mut criteria = Vec::new();
        if covers.predictiveness {
            criteria.push(
                "- Predictiveness: for each wrong prediction above, identify what in the narrative led to it and what should change.",
            );
        }
        criteria.push(
            "- Conciseness: point out content that can be removed or shortened without losing predictive power.",
        );
        criteria.push(
            "- Generalization: point out rules that only restate individual questions and should be expressed as broader principles.",
        );
        let rendered = prompt::render_feedback_prompt(persona, &results, &criteria.join("\n"))?;
        let req = ModelRequest::new(Role::Feedback, &self.feedback, rendered.text).tagged(tag);
        let resp = self.gateway.complete(&req, sample_index)?;
        Ok(FeedbackNote {
            text: resp.text,
            covers,
            wrong_questions: wrong.iter().map(|(q, _)| q.id.clone()).collect(),
        })
    }

    /// Optimizes a persona for one respondent on its generation questions.
    pub fn optimize_persona(
        &self,
        qs_gen: &[&QuestionSpec],
        rs: &ResponseSet,
        params: &OptimizerParams,
    ) -> Result<(Persona, OptimizerTrace)> {
        params.validate()?;
        if qs_gen.is_empty() {
            return Err(Error::EmptyScope {
                respondent: rs.respondent_id.clone(),
                scope: "generation".into(),
            });
        }
        if let Some(q) = qs_gen.iter().find(|q| rs.answer(&q.id).is_none()) {
            return Err(Error::MissingAnswer(format!("{} (respondent `{}`)", q.id, rs.respondent_id)));
        }
        let raw = prompt::serialize_raw_narrative(qs_gen, rs)?;
        let template_prompt =
            prompt::render_generation_prompt(TemplateKind::Generation(params.template), &raw)?;
        for w in &template_prompt.warnings {
            log::warn!("{}: {w}", rs.respondent_id);
        }
        let rid = rs.respondent_id.as_str();
        let b = params.candidates;

        let mut best: Option<Best> = None;
        let mut feedback: Option<FeedbackNote> = None;
        let mut trace = Vec::new();
        let mut stop_reason = StopReason::IterationBudget;

        for i in 1..=params.iterations {
            let (source, gen_prompt) = match (&best, &feedback) {
                (Some(bst), Some(f)) => (
                    CandidateSource::Refine,
                    prompt::render_refine_prompt(&bst.persona.text, &f.text)?.text,
                ),
                _ => (CandidateSource::Template, template_prompt.text.clone()),
            };
            let reqs: Vec<(ModelRequest, u32)> = (0..b)
                .map(|c| {
                    let req = ModelRequest::new(Role::Generation, &self.generation, gen_prompt.as_str())
                        .with_temperature(params.temperature)
                        .tagged(format!("{rid}/{}/gen/i{i}c{}", params.template, c + 1));
                    (req, ((i - 1) * b + c) as u32)
                })
                .collect();
            // Sequential in sample order so scripted backends map listed
            // responses to candidates deterministically.
            let texts: Vec<Option<String>> = reqs
                .iter()
                .map(|(req, idx)| match self.gateway.complete(req, *idx) {
                    Ok(r) if !r.text.trim().is_empty() => Ok(Some(r.text.trim().to_string())),
                    Ok(_) | Err(Error::EmptyCompletion) => Ok(None),
                    Err(e) => Err(e),
                })
                .collect::<Result<_>>()?;

            let phases: Vec<String> = (0..b).map(|c| format!("gen/i{i}c{}", c + 1)).collect();
            let mut tasks = Vec::new();
            for (c, text) in texts.iter().enumerate() {
                if let Some(text) = text {
                    tasks.extend(qs_gen.iter().map(|q| PredictionTask {
                        respondent_id: rid,
                        condition: Condition::Persona(params.template),
                        context: Some(text.as_str()),
                        question: q,
                        truth: rs.answer(&q.id),
                        phase: &phases[c],
                    }));
                }
            }
            let mut records = self.predictor.predict_many(&tasks)?.into_iter();
            let prediction_calls: usize = tasks.len()
                + records.as_slice().iter().map(|r| r.retries_used as usize).sum::<usize>();

            let mut outcomes = Vec::with_capacity(b);
            let mut improved = false;
            for (c, text) in texts.into_iter().enumerate() {
                let Some(text) = text else {
                    outcomes.push(CandidateOutcome {
                        candidate: c + 1,
                        status: CandidateStatus::Failed,
                        accuracy: None,
                        unscorable: 0,
                    });
                    continue;
                };
                let recs: Vec<PredictionRecord> = records.by_ref().take(qs_gen.len()).collect();
                let eval = match Evaluation::from_records(recs) {
                    Ok(e) => e,
                    Err(Error::NoScorable) => {
                        outcomes.push(CandidateOutcome {
                            candidate: c + 1,
                            status: CandidateStatus::Failed,
                            accuracy: None,
                            unscorable: qs_gen.len(),
                        });
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                if eval.unscorable_fraction() > params.max_unscorable_fraction {
                    log::info!(
                        "{rid}: discarding candidate i{i}c{} ({} of {} unparseable)",
                        c + 1,
                        eval.unscorable,
                        eval.records.len()
                    );
                    outcomes.push(CandidateOutcome {
                        candidate: c + 1,
                        status: CandidateStatus::Discarded,
                        accuracy: Some(eval.accuracy),
                        unscorable: eval.unscorable,
                    });
                    continue;
                }
                outcomes.push(CandidateOutcome {
                    candidate: c + 1,
                    status: CandidateStatus::Scored,
                    accuracy: Some(eval.accuracy),
                    unscorable: eval.unscorable,
                });
                let replace = best
                    .as_ref()
                    .is_none_or(|bst| eval.accuracy > bst.persona.gen_accuracy);
                if replace {
                    let step = LineageStep {
                        iteration: i,
                        candidate: c + 1,
                    };
                    let mut lineage = match (&best, source) {
                        (Some(bst), CandidateSource::Refine) => bst.persona.lineage.clone(),
                        _ => Vec::new(),
                    };
                    lineage.push(step);
                    best = Some(Best {
                        persona: Persona {
                            respondent_id: rid.to_string(),
                            template: params.template,
                            token_count: self.tokenizer.count(&text),
                            text,
                            gen_accuracy: eval.accuracy,
                            iteration_found: i,
                            lineage,
                            gen_unscorable: eval.unscorable,
                        },
                        records: eval.records,
                    });
                    improved = true;
                }
            }

            let best_acc = best.as_ref().map(|bst| bst.persona.gen_accuracy);
            let mut it = IterationTrace {
                iteration: i,
                source,
                candidates: outcomes,
                best_so_far: best_acc,
                improved,
                generation_calls: b,
                prediction_calls,
                feedback_calls: 0,
            };
            let stop = if best_acc.is_some_and(|a| a >= params.early_stop_acc) {
                Some(StopReason::ReachedThreshold)
            } else if i == params.iterations {
                Some(StopReason::IterationBudget)
            } else if params.stop_rule == StopRule::NoImprovement && i > 1 && !improved {
                Some(StopReason::NoImprovement)
            } else {
                None
            };
            if let Some(reason) = stop {
                stop_reason = reason;
                trace.push(it);
                break;
            }
            feedback = match &best {
                Some(bst) => {
                    it.feedback_calls = 1;
                    Some(self.build_feedback(
                        &bst.persona.text,
                        &bst.records,
                        qs_gen,
                        &format!("{rid}/{}/feedback/i{i}", params.template),
                        // An unchanged incumbent yields the same prompt; a
                        // per-iteration index keeps it from being a cache hit.
                        (i - 1) as u32,
                    )?)
                }
                None => None,
            };
            trace.push(it);
        }

        let best = best.ok_or_else(|| Error::AllCandidatesFailed(rid.to_string()))?;
        Ok((
            best.persona,
            OptimizerTrace {
                iterations: trace,
                stop_reason,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Domain;
    use crate::gateway::{GatewayConfig, Matcher, ScriptedMock};
    use std::collections::HashMap;

    fn questions(n: usize) -> Vec<QuestionSpec> {
        (1..=n)
            .map(|i| QuestionSpec {
                id: format!("q{i}"),
                text: format!("Would you share item {i}?"),
                answers: vec!["Yes".into(), "No".into()],
                domain: Domain::Behavioral,
                discard_values: vec![],
            })
            .collect()
    }

    fn all_yes(qs: &[QuestionSpec]) -> ResponseSet {
        ResponseSet {
            respondent_id: "r1".into(),
            answers: qs.iter().map(|q| (q.id.clone(), "Yes".to_string())).collect(),
        }
    }

    /// Mock whose prediction answers depend on which persona is in the
    /// prompt: persona `name` gets the first `k` questions right.
    fn scored_mock(generated: &[&str], correct: HashMap<String, usize>) -> ScriptedMock {
        ScriptedMock::new()
            .strict(true)
            .rule(Matcher::role(Role::Generation), generated.iter().copied())
            .rule(Matcher::role(Role::Feedback), ["tighten it"; 8])
            .handler(move |req, _| {
                if req.role != Role::Prediction {
                    return None;
                }
                let (_, k) = correct.iter().find(|(name, _)| req.prompt.contains(&format!("<{name}>")))?;
                let q: usize = req.prompt.split("item ").nth(1)?.split('?').next()?.parse().ok()?;
                Some(if q <= *k { "Yes" } else { "No" }.into())
            })
    }

    fn engine_for(gw: &Gateway) -> PersonaEngine<'_> {
        PersonaEngine::new(
            gw,
            ModelSpec::new("gen", 1.5),
            ModelSpec::new("gen", 0.0),
            Predictor::new(gw, ModelSpec::new("pred", 0.0)),
        )
    }

    fn params(b: usize, i: usize) -> OptimizerParams {
        OptimizerParams {
            candidates: b,
            iterations: i,
            ..Default::default()
        }
    }

    #[test]
    fn perfect_candidate_stops_after_first_iteration() {
        let qs = questions(4);
        let refs: Vec<&QuestionSpec> = qs.iter().collect();
        let names = ["<c1>", "<c2>", "<c3>", "<c4>", "<c5>"];
        let correct = [("c1", 1), ("c2", 2), ("c3", 4), ("c4", 3), ("c5", 0)]
            .into_iter()
            .map(|(n, k)| (n.to_string(), k))
            .collect();
        let mock = Arc::new(scored_mock(&names, correct));
        let gw = Gateway::new(mock.clone(), GatewayConfig::default()).unwrap();
        let (p, trace) = engine_for(&gw)
            .optimize_persona(&refs, &all_yes(&qs), &params(5, 3))
            .unwrap();
        assert_eq!(p.gen_accuracy, 1.0);
        assert_eq!(p.text, "<c3>");
        assert_eq!(p.iteration_found, 1);
        assert_eq!(p.lineage, vec![LineageStep { iteration: 1, candidate: 3 }]);
        assert_eq!(trace.iterations.len(), 1);
        assert_eq!(trace.stop_reason, StopReason::ReachedThreshold);
        assert_eq!(mock.calls_with_role(Role::Generation), 5);
        assert_eq!(mock.calls_with_role(Role::Feedback), 0);
        assert_eq!(mock.calls_with_role(Role::Prediction), 20);
    }

    #[test]
    fn second_iteration_refines_from_best() {
        let qs = questions(4);
        let refs: Vec<&QuestionSpec> = qs.iter().collect();
        let correct = [("a1", 2), ("a2", 3), ("b1", 3), ("b2", 4)]
            .into_iter()
            .map(|(n, k)| (n.to_string(), k))
            .collect();
        let mock = Arc::new(scored_mock(&["<a1>", "<a2>", "<b1>", "<b2>"], correct));
        let gw = Gateway::new(mock.clone(), GatewayConfig::default()).unwrap();
        let (p, trace) = engine_for(&gw)
            .optimize_persona(&refs, &all_yes(&qs), &params(2, 3))
            .unwrap();
        assert_eq!(trace.best_so_far(), vec![Some(0.75), Some(1.0)]);
        assert_eq!(p.text, "<b2>");
        assert_eq!(
            p.lineage,
            vec![
                LineageStep { iteration: 1, candidate: 2 },
                LineageStep { iteration: 2, candidate: 2 }
            ]
        );
        let gen_calls: Vec<_> = mock
            .calls()
            .into_iter()
            .filter(|c| c.role == Role::Generation)
            .collect();
        assert_eq!(gen_calls.len(), 4);
        assert_eq!(gen_calls.iter().map(|c| c.sample_index).collect::<Vec<_>>(), [0, 1, 2, 3]);
        // Refinement prompts carry the incumbent and the feedback text.
        assert!(gen_calls[2].prompt.contains("<a2>") && gen_calls[2].prompt.contains("tighten it"));
        assert!(!gen_calls[0].prompt.contains("tighten it"));
        assert_eq!(mock.calls_with_role(Role::Feedback), 1);
    }

    #[test]
    fn full_budget_without_perfect_candidate() {
        let qs = questions(4);
        let refs: Vec<&QuestionSpec> = qs.iter().collect();
        let names: Vec<String> = (1..=15).map(|i| format!("<p{i}>")).collect();
        let correct = (1..=15).map(|i| (format!("p{i}"), 1 + i % 3)).collect();
        let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let mock = Arc::new(scored_mock(&name_refs, correct));
        let gw = Gateway::new(mock.clone(), GatewayConfig::default()).unwrap();
        let (p, trace) = engine_for(&gw)
            .optimize_persona(&refs, &all_yes(&qs), &params(5, 3))
            .unwrap();
        assert_eq!(trace.iterations.len(), 3);
        assert_eq!(trace.stop_reason, StopReason::IterationBudget);
        assert_eq!(mock.calls_with_role(Role::Generation), 15);
        assert_eq!(mock.calls_with_role(Role::Feedback), 2);
        assert_eq!(trace.generation_calls(), 15);
        assert_eq!(trace.feedback_calls(), 2);
        // First 0.75 candidate (p2) is never displaced by later ties.
        assert_eq!(p.text, "<p2>");
        assert_eq!(p.gen_accuracy, 0.75);
    }

    #[test]
    fn no_improvement_rule_stops_early() {
        let qs = questions(4);
        let refs: Vec<&QuestionSpec> = qs.iter().collect();
        let correct = [("x1", 2), ("x2", 1)].into_iter().map(|(n, k)| (n.to_string(), k)).collect();
        let mock = Arc::new(scored_mock(&["<x1>", "<x2>"], correct));
        let gw = Gateway::new(mock.clone(), GatewayConfig::default()).unwrap();
        let mut prm = params(1, 5);
        prm.stop_rule = StopRule::NoImprovement;
        let (_, trace) = engine_for(&gw).optimize_persona(&refs, &all_yes(&qs), &prm).unwrap();
        assert_eq!(trace.iterations.len(), 2);
        assert_eq!(trace.stop_reason, StopReason::NoImprovement);
    }

    #[test]
    fn mostly_unparseable_candidate_is_discarded() {
        let qs = questions(4);
        let refs: Vec<&QuestionSpec> = qs.iter().collect();
        let mock = Arc::new(
            ScriptedMock::new()
                .rule(Matcher::role(Role::Generation), ["<abstainer>", "<honest>"])
                .handler(|req, _| {
                    if req.prompt.contains("<abstainer>") {
                        // Right on item 1, gibberish elsewhere: 1/1 scorable.
                        return Some(if req.prompt.contains("item 1?") { "Yes" } else { "hmm" }.into());
                    }
                    Some(if req.prompt.contains("item 4?") { "No" } else { "Yes" }.into())
                }),
        );
        let gw = Gateway::new(mock, GatewayConfig::default()).unwrap();
        let (p, trace) = engine_for(&gw)
            .optimize_persona(&refs, &all_yes(&qs), &params(2, 1))
            .unwrap();
        assert_eq!(p.text, "<honest>");
        assert_eq!(trace.iterations[0].candidates[0].status, CandidateStatus::Discarded);
        assert_eq!(trace.iterations[0].candidates[0].accuracy, Some(1.0));
    }

    #[test]
    fn all_failed_candidates() {
        let qs = questions(2);
        let refs: Vec<&QuestionSpec> = qs.iter().collect();
        let mock = Arc::new(
            ScriptedMock::new()
                .rule(Matcher::role(Role::Generation), ["  "])
                .default_response("Yes"),
        );
        let gw = Gateway::new(mock.clone(), GatewayConfig::default()).unwrap();
        let err = engine_for(&gw).optimize_persona(&refs, &all_yes(&qs), &params(2, 2));
        assert!(matches!(err, Err(Error::AllCandidatesFailed(_))));
        // Without a best persona there is nothing to critique.
        assert_eq!(mock.calls_with_role(Role::Feedback), 0);
        assert_eq!(mock.calls_with_role(Role::Generation), 4);
    }

    #[test]
    fn evaluate_persona_accuracy() {
        let qs = questions(4);
        let refs: Vec<&QuestionSpec> = qs.iter().collect();
        let mock = Arc::new(ScriptedMock::new().handler(|req, _| {
            Some(if req.prompt.contains("item 2?") { "No" } else { "Yes" }.into())
        }));
        let gw = Gateway::new(mock, GatewayConfig::default()).unwrap();
        let ev = engine_for(&gw)
            .evaluate_persona(GenerationTemplate::Basic, "persona", &refs, &all_yes(&qs))
            .unwrap();
        assert_eq!(ev.accuracy, 0.75);
        assert!(!ev.audit_flag());
    }

    #[test]
    fn feedback_lists_exactly_the_mispredictions() {
        let qs = questions(4);
        let refs: Vec<&QuestionSpec> = qs.iter().collect();
        let mock = Arc::new(
            ScriptedMock::new()
                .rule(Matcher::role(Role::Feedback), ["drop the second paragraph"])
                .handler(|req, _| {
                    Some(if req.prompt.contains("item 2?") || req.prompt.contains("item 4?") {
                        "No"
                    } else {
                        "Yes"
                    }
                    .into())
                }),
        );
        let gw = Gateway::new(mock.clone(), GatewayConfig::default()).unwrap();
        let engine = engine_for(&gw);
        let ev = engine
            .evaluate_persona(GenerationTemplate::Basic, "P", &refs, &all_yes(&qs))
            .unwrap();
        let note = engine.build_feedback("P", &ev.records, &refs, "t", 0).unwrap();
        assert_eq!(note.text, "drop the second paragraph");
        assert_eq!(note.wrong_questions, ["q2", "q4"]);
        assert!(note.covers.predictiveness);
        let fb = mock.calls().into_iter().find(|c| c.role == Role::Feedback).unwrap();
        assert!(fb.prompt.contains("Question ID: q2") && fb.prompt.contains("Question ID: q4"));
        assert!(!fb.prompt.contains("Question ID: q1") && !fb.prompt.contains("Question ID: q3"));
    }

    #[test]
    fn feedback_without_mispredictions() {
        let qs = questions(2);
        let refs: Vec<&QuestionSpec> = qs.iter().collect();
        let mock = Arc::new(ScriptedMock::new().default_response("Yes"));
        let gw = Gateway::new(mock.clone(), GatewayConfig::default()).unwrap();
        let engine = engine_for(&gw);
        let ev = engine
            .evaluate_persona(GenerationTemplate::Basic, "P", &refs, &all_yes(&qs))
            .unwrap();
        let note = engine.build_feedback("P", &ev.records, &refs, "t", 0).unwrap();
        assert!(note.wrong_questions.is_empty());
        assert!(!note.covers.predictiveness && note.covers.conciseness && note.covers.generalization);
        let fb = mock.calls().into_iter().find(|c| c.role == Role::Feedback).unwrap();
        assert!(!fb.prompt.contains("Predictiveness"));
        assert!(fb.prompt.contains("Conciseness") && fb.prompt.contains("Generalization"));
    }

    #[test]
    fn params_validation() {
        assert!(params(0, 1).validate().is_err());
        assert!(params(1, 0).validate().is_err());
        let mut p = params(1, 1);
        p.early_stop_acc = 0.0;
        assert!(p.validate().is_err());
        p.early_stop_acc = 0.95;
        p.temperature = -1.0;
        assert!(p.validate().is_err());
    }
}
