use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{BackendKind, ConditionKind, Design, ExperimentConfig};
use super::evaluate::evaluate_run;
use super::manifest::{self, RunManifest};
use super::report::{emit_report, ReportFormat};
use super::{
    ArmCalibration, ArmPrediction, ArmSkip, ArmSplit, CrossStudyRecord, PersonaArchiveRecord, Survivor,
};
use crate::dataset::{self, QuestionSpec, QuestionSplit, ResponseSet, Scope, SkipRecord, SplitOutcome, SurveyDataset};
use crate::error::{Error, Result};
use crate::gateway::{Backend, Gateway, MockScript, RemoteBackend, ReplayBackend, ScriptedMock};
use crate::persona::PersonaEngine;
use crate::prediction::{CalibrationChoice, CalibrationMode, Condition, PredictionRecord, PredictionTask, Predictor};
use crate::prompt::{self, ApproxTokenizer, GenerationTemplate, Tokenizer};
use crate::records::{write_json, write_jsonl};
use crate::synthetic;

pub fn build_backend(cfg: &ExperimentConfig) -> Result<Arc<dyn Backend>> {
    let b = &cfg.backend;
    Ok(match b.kind {
        BackendKind::Remote => {
            let url = b
                .base_url
                .as_deref()
                .ok_or_else(|| Error::Config("remote backend requires backend.base_url".into()))?;
            Arc::new(RemoteBackend::from_env(url, &b.auth_env, Duration::from_secs(b.timeout_secs))?)
        }
        BackendKind::Replay => {
            let log = b
                .replay_log
                .as_deref()
                .ok_or_else(|| Error::Config("replay backend requires backend.replay_log".into()))?;
            Arc::new(ReplayBackend::load(log)?)
        }
        BackendKind::Mock => {
            let mut mock = match &b.mock.script {
                Some(p) => ScriptedMock::from_script(MockScript::load(p)?),
                None => ScriptedMock::new(),
            };
            if b.mock.builtin.as_deref() == Some("rule") {
                mock = mock.handler(|req, _| synthetic::rule_response(req));
            }
            Arc::new(mock)
        }
    })
}

/// Personas whose evaluation accuracy reaches `threshold`, in archive order.
pub fn filter_personas(archive: &[PersonaArchiveRecord], threshold: f64) -> Result<Vec<&PersonaArchiveRecord>> {
    let kept: Vec<_> = archive
        .iter()
        .filter(|r| r.eval_accuracy.is_some_and(|a| a >= threshold))
        .collect();
    if kept.is_empty() {
        return Err(Error::NoPersonasSurvive(threshold));
    }
    Ok(kept)
}

/// Everything a run produces before scoring.
#[derive(Default)]
struct Collected {
    splits: Vec<ArmSplit>,
    skipped: Vec<ArmSkip>,
    personas: Vec<PersonaArchiveRecord>,
    predictions: Vec<ArmPrediction>,
    calibration: Vec<ArmCalibration>,
    cross: Option<CrossStudyRecord>,
}

#[derive(Default)]
struct RespondentOutput {
    predictions: Vec<ArmPrediction>,
    personas: Vec<PersonaArchiveRecord>,
    calibration: Option<ArmCalibration>,
    skipped: Vec<ArmSkip>,
}

struct ArmPlan<'a> {
    arm: String,
    ds: &'a SurveyDataset,
    outcome: SplitOutcome,
    templates: Vec<GenerationTemplate>,
    iterations: Option<usize>,
    conditions: Vec<ConditionKind>,
}

pub struct Runner {
    cfg: ExperimentConfig,
    run_id: String,
    run_dir: PathBuf,
    source: SurveyDataset,
    target: Option<SurveyDataset>,
    gateway: Gateway,
    pool: rayon::ThreadPool,
    tokenizer: Arc<dyn Tokenizer>,
}

impl Runner {
    /// Opens `output_dir/<run id>` with the backend described by the config.
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        let backend = build_backend(&cfg)?;
        Self::with_backend(cfg, backend, None)
    }

    pub fn with_backend(cfg: ExperimentConfig, backend: Arc<dyn Backend>, run_dir: Option<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        let run_id = cfg.run_id();
        let run_dir = run_dir.unwrap_or_else(|| cfg.output_dir.join(&run_id));
        let source = load_dataset(&cfg.dataset.source)?;
        let target = cfg.dataset.target.as_deref().map(load_dataset).transpose()?;
        let mut gw_cfg = cfg.backend.gateway.clone();
        if gw_cfg.cache_enabled && gw_cfg.cache_dir.is_none() {
            gw_cfg.cache_dir = Some(run_dir.join("cache"));
        }
        let gateway = Gateway::new(backend, gw_cfg)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        Ok(Runner {
            cfg,
            run_id,
            run_dir,
            source,
            target,
            gateway,
            pool,
            tokenizer: Arc::new(ApproxTokenizer),
        })
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    /// Runs the configured design, writes all artifacts, scores them and
    /// emits the report. On failure, whatever finished is still written and
    /// the manifest is marked `aborted`.
    pub fn execute(&self) -> Result<super::RunSummary> {
        let started = chrono::Utc::now();
        std::fs::create_dir_all(&self.run_dir).map_err(|e| Error::io(&self.run_dir, e))?;
        write_json(&self.run_dir.join("config.json"), &self.cfg)?;
        log::info!("run {} ({}) in {}", self.run_id, self.cfg.design.as_str(), self.run_dir.display());

        let mut out = Collected::default();
        let result = self.run_design(&mut out);
        self.persist(&out)?;
        let summary = match result {
            Ok(()) => evaluate_run(&self.run_dir).and_then(|s| {
                emit_report(&s, &self.run_dir, ReportFormat::Both)?;
                Ok(s)
            }),
            Err(e) => Err(e),
        };
        let status = if summary.is_ok() { "complete" } else { "aborted" };
        let m = RunManifest::collect(self, started, status)?;
        manifest::write(&self.run_dir, &m)?;
        summary
    }

    fn persist(&self, out: &Collected) -> Result<()> {
        let d = &self.run_dir;
        write_jsonl(&d.join("splits.jsonl"), &out.splits)?;
        write_jsonl(&d.join("skipped.jsonl"), &out.skipped)?;
        write_jsonl(&d.join("personas.jsonl"), &out.personas)?;
        write_jsonl(&d.join("predictions.jsonl"), &out.predictions)?;
        write_jsonl(&d.join("calibration.jsonl"), &out.calibration)?;
        if let Some(c) = &out.cross {
            write_json(&d.join("cross_study.json"), c)?;
        }
        self.gateway.write_call_log(&d.join("calls.jsonl"))
    }

    pub(super) fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub(super) fn datasets(&self) -> (&SurveyDataset, Option<&SurveyDataset>) {
        (&self.source, self.target.as_ref())
    }

    fn run_design(&self, out: &mut Collected) -> Result<()> {
        let cfg = &self.cfg;
        let templates = cfg.templates();
        let conditions = cfg.conditions();
        match cfg.design {
            Design::InStudy | Design::TheoryComparison => {
                let arm = if cfg.design == Design::InStudy { "in_study" } else { "theory" };
                let outcome = dataset::split_questions(&self.source, cfg.split.ratio, cfg.seed, cfg.split.scope)?;
                self.run_arm(
                    ArmPlan {
                        arm: arm.into(),
                        ds: &self.source,
                        outcome,
                        templates,
                        iterations: None,
                        conditions,
                    },
                    out,
                )
            }
            Design::AttitudeBehavior => {
                let a2b = dataset::split_by_domain(&self.source, Scope::Attitude, Scope::Behavioral, cfg.seed);
                self.run_arm(
                    ArmPlan {
                        arm: "attitude_to_behavioral".into(),
                        ds: &self.source,
                        outcome: a2b,
                        templates: templates.clone(),
                        iterations: None,
                        conditions: conditions.clone(),
                    },
                    out,
                )?;
                let b2b = dataset::split_questions(&self.source, cfg.split.ratio, cfg.seed, Scope::Behavioral)?;
                self.run_arm(
                    ArmPlan {
                        arm: "behavioral_to_behavioral".into(),
                        ds: &self.source,
                        outcome: b2b,
                        templates,
                        iterations: None,
                        conditions,
                    },
                    out,
                )
            }
            Design::IterationSweep => {
                for &i in &cfg.sweep.iterations {
                    let outcome =
                        dataset::split_questions(&self.source, cfg.split.ratio, cfg.seed, cfg.split.scope)?;
                    self.run_arm(
                        ArmPlan {
                            arm: format!("iter{i}"),
                            ds: &self.source,
                            outcome,
                            templates: templates[..1].to_vec(),
                            iterations: Some(i),
                            conditions: vec![ConditionKind::Persona],
                        },
                        out,
                    )?;
                }
                Ok(())
            }
            Design::CrossStudy => self.run_cross_study(out),
        }
    }

    fn run_cross_study(&self, out: &mut Collected) -> Result<()> {
        let cfg = &self.cfg;
        let target = self
            .target
            .as_ref()
            .ok_or_else(|| Error::Config("cross_study design requires dataset.target".into()))?;
        let archive: Vec<PersonaArchiveRecord> = match &cfg.cross_study.persona_archive {
            Some(p) => crate::records::read_jsonl(p)?,
            None => {
                let outcome = dataset::split_questions(
                    &self.source,
                    cfg.split.ratio,
                    cfg.seed,
                    cfg.cross_study.source_scope,
                )?;
                let before = out.personas.len();
                self.run_arm(
                    ArmPlan {
                        arm: "source".into(),
                        ds: &self.source,
                        outcome,
                        templates: cfg.templates(),
                        iterations: None,
                        conditions: vec![ConditionKind::Persona],
                    },
                    out,
                )?;
                out.personas[before..].to_vec()
            }
        };
        let threshold = cfg.cross_study.selection_threshold;
        let target_qs: Vec<&QuestionSpec> = target
            .questions
            .iter()
            .filter(|q| cfg.cross_study.target_scope.admits(q.domain))
            .collect();
        let mut record = CrossStudyRecord {
            selection_threshold: threshold,
            candidates: archive.len(),
            survivors: Vec::new(),
            target_questions: target_qs.iter().map(|q| q.id.clone()).collect(),
            prediction_calls: 0,
        };
        let survivors = match filter_personas(&archive, threshold) {
            Ok(s) => s,
            Err(e) => {
                out.cross = Some(record);
                return Err(e);
            }
        };
        log::info!(
            "{} of {} personas pass the {threshold} threshold; predicting {} target questions each",
            survivors.len(),
            archive.len(),
            target_qs.len()
        );
        let results: Vec<Result<Vec<ArmPrediction>>> = self.pool.install(|| {
            survivors
                .par_iter()
                .map(|s| {
                    let predictor = self.predictor();
                    let tasks: Vec<PredictionTask<'_>> = target_qs
                        .iter()
                        .map(|q| PredictionTask {
                            respondent_id: &s.persona.respondent_id,
                            condition: Condition::Persona(s.persona.template),
                            context: Some(&s.persona.text),
                            question: q,
                            truth: None,
                            phase: "cross",
                        })
                        .collect();
                    Ok(predictor
                        .predict_many(&tasks)?
                        .into_iter()
                        .map(|record| ArmPrediction {
                            arm: "cross".into(),
                            record,
                        })
                        .collect())
                })
                .collect()
        });
        record.survivors = survivors
            .iter()
            .map(|s| Survivor {
                respondent_id: s.persona.respondent_id.clone(),
                template: s.persona.template,
                eval_accuracy: s.eval_accuracy.unwrap_or_default(),
            })
            .collect();
        let mut first_err = None;
        for r in results {
            match r {
                Ok(preds) => {
                    record.prediction_calls += preds
                        .iter()
                        .map(|p| 1 + p.record.retries_used as usize)
                        .sum::<usize>();
                    out.predictions.extend(preds);
                }
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        out.cross = Some(record);
        first_err.map_or(Ok(()), Err)
    }

    fn predictor(&self) -> Predictor<'_> {
        Predictor::new(&self.gateway, self.cfg.backend.models.prediction.clone())
            .with_parse_retries(self.cfg.prediction.parse_retries)
            .with_run_id(self.run_id.clone())
    }

    fn engine(&self) -> PersonaEngine<'_> {
        let m = &self.cfg.backend.models;
        PersonaEngine::new(&self.gateway, m.generation.clone(), m.feedback.clone(), self.predictor())
            .with_tokenizer(self.tokenizer.clone())
    }

    fn run_arm(&self, mut plan: ArmPlan<'_>, out: &mut Collected) -> Result<()> {
        let cal = &self.cfg.calibration;
        let best = plan.conditions.contains(&ConditionKind::BestTemplate);
        if best && cal.mode == CalibrationMode::HeldOutCalibration {
            dataset::assign_calibration(&mut plan.outcome.splits, cal.fraction, cal.min_questions, self.cfg.seed);
        }
        log::info!(
            "arm {}: {} respondents ({} skipped)",
            plan.arm,
            plan.outcome.splits.len(),
            plan.outcome.skipped.len()
        );
        out.splits.extend(plan.outcome.splits.iter().map(|s| ArmSplit {
            arm: plan.arm.clone(),
            split: s.clone(),
        }));
        out.skipped
            .extend(plan.outcome.skipped.iter().map(|SkipRecord { respondent_id, reason }| ArmSkip {
                arm: plan.arm.clone(),
                respondent_id: respondent_id.clone(),
                reason: reason.clone(),
            }));
        let results: Vec<Result<RespondentOutput>> = self.pool.install(|| {
            plan.outcome
                .splits
                .par_iter()
                .map(|s| self.respondent(&plan, s))
                .collect()
        });
        let mut first_err = None;
        for r in results {
            match r {
                Ok(o) => {
                    out.predictions.extend(o.predictions);
                    out.personas.extend(o.personas);
                    out.calibration.extend(o.calibration);
                    out.skipped.extend(o.skipped);
                }
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        first_err.map_or(Ok(()), Err)
    }

    fn respondent(&self, plan: &ArmPlan<'_>, split: &QuestionSplit) -> Result<RespondentOutput> {
        let ds = plan.ds;
        let rs = ds
            .respondent(&split.respondent_id)
            .ok_or_else(|| Error::Schema(format!("split for unknown respondent `{}`", split.respondent_id)))?;
        let gen_qs = ds.questions_ordered(&split.gen_ids);
        let eval_qs = ds.questions_ordered(&split.eval_ids);
        let arm = plan.arm.as_str();
        let predictor = self.predictor();
        let mut out = RespondentOutput::default();
        let wrap = |records: Vec<PredictionRecord>| {
            records.into_iter().map(|record| ArmPrediction {
                arm: arm.to_string(),
                record,
            })
        };
        let tasks = |condition: Condition, context| eval_tasks(rs, &eval_qs, condition, context, arm);

        if plan.conditions.contains(&ConditionKind::Baseline) {
            out.predictions.extend(wrap(predictor.predict_many(&tasks(Condition::Baseline, None))?));
        }
        let raw = prompt::serialize_raw_narrative(&gen_qs, rs)?;
        if plan.conditions.contains(&ConditionKind::Raw) {
            out.predictions.extend(wrap(predictor.predict_many(&tasks(Condition::Raw, Some(&raw)))?));
        }
        let wants_personas = plan.conditions.contains(&ConditionKind::Persona)
            || plan.conditions.contains(&ConditionKind::BestTemplate);
        if !wants_personas {
            return Ok(out);
        }

        let scored: HashSet<&String> = split.scored_ids().collect();
        let engine = self.engine();
        let raw_tokens = self.tokenizer.count(&raw);
        let mut persona_records = Vec::new();
        for &t in &plan.templates {
            let mut params = self.cfg.optimizer_params(t);
            if let Some(i) = plan.iterations {
                params.iterations = i;
            }
            let (persona, trace) = match engine.optimize_persona(&gen_qs, rs, &params) {
                Ok(x) => x,
                Err(e @ Error::AllCandidatesFailed(_)) => {
                    log::warn!("{arm}: {e}");
                    out.skipped.push(ArmSkip {
                        arm: arm.to_string(),
                        respondent_id: rs.respondent_id.clone(),
                        reason: format!("{t}: {e}"),
                    });
                    continue;
                }
                Err(e) => return Err(e),
            };
            let records = {
                let ts = eval_tasks(rs, &eval_qs, Condition::Persona(t), Some(&persona.text), arm);
                predictor.predict_many(&ts)?
            };
            let on_scored: Vec<_> = records.iter().filter(|r| scored.contains(&r.question_id)).collect();
            let scorable = on_scored.iter().filter(|r| r.is_scorable()).count();
            let correct = on_scored.iter().filter(|r| r.is_correct()).count();
            out.personas.push(PersonaArchiveRecord {
                arm: arm.to_string(),
                persona,
                eval_accuracy: (scorable > 0).then(|| correct as f64 / scorable as f64),
                eval_scorable: scorable,
                raw_token_count: raw_tokens,
                tokenizer: self.tokenizer.name().to_string(),
                trace,
            });
            persona_records.extend(records);
        }

        let mut best_records = Vec::new();
        if plan.conditions.contains(&ConditionKind::BestTemplate) {
            let mode = self.cfg.calibration.mode;
            let selection: HashSet<&String> = match mode {
                CalibrationMode::HeldOutCalibration => split.calibration_ids.iter().collect(),
                CalibrationMode::OracleEval => split.eval_ids.iter().collect(),
            };
            let choice = CalibrationChoice::from_records(
                &rs.respondent_id,
                persona_records.iter().filter(|r| selection.contains(&r.question_id)),
                mode,
            );
            match choice {
                Ok(choice) => {
                    let chosen = Condition::Persona(choice.chosen_template);
                    best_records.extend(
                        persona_records
                            .iter()
                            .filter(|r| r.condition == chosen)
                            .map(|r| PredictionRecord {
                                condition: Condition::BestPersona,
                                ..r.clone()
                            }),
                    );
                    out.calibration = Some(ArmCalibration {
                        arm: arm.to_string(),
                        choice,
                    });
                }
                Err(Error::NoScorable) => out.skipped.push(ArmSkip {
                    arm: arm.to_string(),
                    respondent_id: rs.respondent_id.clone(),
                    reason: "best template: no scorable calibration predictions".into(),
                }),
                Err(e) => return Err(e),
            }
        }
        out.predictions.extend(wrap(persona_records));
        out.predictions.extend(wrap(best_records));
        Ok(out)
    }
}

fn eval_tasks<'a>(
    rs: &'a ResponseSet,
    qs: &[&'a QuestionSpec],
    condition: Condition,
    context: Option<&'a str>,
    phase: &'a str,
) -> Vec<PredictionTask<'a>> {
    qs.iter()
        .map(|q| PredictionTask {
            respondent_id: &rs.respondent_id,
            condition,
            context,
            question: q,
            truth: rs.answer(&q.id),
            phase,
        })
        .collect()
}

fn load_dataset(path: &Path) -> Result<SurveyDataset> {
    let loaded = SurveyDataset::load(path)?;
    for w in &loaded.warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(loaded.dataset)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayOutcome {
    pub replay_dir: PathBuf,
    pub matched: Vec<String>,
    pub mismatched: Vec<String>,
    pub missing: Vec<String>,
}

impl ReplayOutcome {
    pub fn is_identical(&self) -> bool {
        self.mismatched.is_empty() && self.missing.is_empty()
    }
}

/// Re-executes a recorded run against its own call log into
/// `<run>/replay/` and compares artifact digests with the original.
pub fn replay_run(run_dir: &Path) -> Result<ReplayOutcome> {
    let mut cfg: ExperimentConfig = crate::records::read_json(&run_dir.join("config.json"))?;
    cfg.run_id = Some(cfg.run_id());
    let log = run_dir.join("calls.jsonl");
    cfg.backend.kind = BackendKind::Replay;
    cfg.backend.replay_log = Some(log.clone());
    cfg.backend.gateway.cache_enabled = false;
    cfg.backend.gateway.cache_dir = None;
    cfg.backend.gateway.max_calls = None;
    cfg.backend.gateway.max_tokens = None;
    let replay_dir = run_dir.join("replay");
    let runner = Runner::with_backend(cfg, Arc::new(ReplayBackend::load(&log)?), Some(replay_dir.clone()))?;
    runner.execute()?;

    let original: RunManifest = crate::records::read_json(&run_dir.join("manifest.json"))?;
    let replayed: RunManifest = crate::records::read_json(&replay_dir.join("manifest.json"))?;
    let mut out = ReplayOutcome {
        replay_dir,
        matched: Vec::new(),
        mismatched: Vec::new(),
        missing: Vec::new(),
    };
    for a in original.artifacts.iter().filter(|a| manifest::is_reproducible(&a.path)) {
        match replayed.artifacts.iter().find(|b| b.path == a.path) {
            Some(b) if b.sha256 == a.sha256 => out.matched.push(a.path.clone()),
            Some(_) => out.mismatched.push(a.path.clone()),
            None => out.missing.push(a.path.clone()),
        }
    }
    Ok(out)
}
