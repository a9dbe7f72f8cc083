use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Design, ExperimentConfig};
use super::{ArmCalibration, ArmPrediction, ArmSkip, ArmSplit, CrossStudyRecord, PersonaArchiveRecord};
use crate::dataset::{QuestionSplit, SurveyDataset};
use crate::error::{Error, Result};
use crate::metrics::{self, FidelityReport, ReportOptions};
use crate::prediction::{Condition, PredictionRecord};
use crate::prompt::{self, GenerationTemplate};
use crate::records::{read_json, read_jsonl, write_json};

/// Token accounting for one (arm, template): means over respondents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRow {
    pub arm: String,
    pub template: GenerationTemplate,
    pub respondents: usize,
    pub raw: f64,
    pub narrative: f64,
    /// Mean of the per-respondent reductions, in percent.
    pub reduction_pct: f64,
    pub tokenizer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestTemplateRow {
    pub arm: String,
    pub template: GenerationTemplate,
    pub count: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub iterations: usize,
    pub label: String,
    pub acc_s: Option<f64>,
    pub tv_complement_s: Option<f64>,
    pub mee_s: Option<f64>,
    pub wd_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub design: Design,
    pub reports: Vec<FidelityReport>,
    pub tokens: Vec<TokenRow>,
    pub best_template: Vec<BestTemplateRow>,
    pub sweep: Vec<SweepRow>,
    /// Skipped respondents per arm.
    pub skipped: BTreeMap<String, usize>,
    pub cross_study: Option<CrossStudyRecord>,
}

impl RunSummary {
    pub fn report(&self, label: &str) -> Option<&FidelityReport> {
        self.reports.iter().find(|r| r.label == label)
    }
}

fn read_optional<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if path.exists() {
        read_jsonl(path)
    } else {
        Ok(Vec::new())
    }
}

fn load(path: &Path) -> Result<SurveyDataset> {
    Ok(SurveyDataset::load(path)?.dataset)
}

/// Scores a finished run from the files in `run_dir` and writes
/// `summary.json`.
pub fn evaluate_run(run_dir: &Path) -> Result<RunSummary> {
    let cfg: ExperimentConfig = read_json(&run_dir.join("config.json"))?;
    let source = load(&cfg.dataset.source)?;
    let target = cfg.dataset.target.as_deref().map(load).transpose()?;
    let splits: Vec<ArmSplit> = read_optional(&run_dir.join("splits.jsonl"))?;
    let skipped: Vec<ArmSkip> = read_optional(&run_dir.join("skipped.jsonl"))?;
    let personas: Vec<PersonaArchiveRecord> = read_optional(&run_dir.join("personas.jsonl"))?;
    let predictions: Vec<ArmPrediction> = read_optional(&run_dir.join("predictions.jsonl"))?;
    let calibration: Vec<ArmCalibration> = read_optional(&run_dir.join("calibration.jsonl"))?;
    let cross_path = run_dir.join("cross_study.json");
    let cross: Option<CrossStudyRecord> = if cross_path.exists() {
        Some(read_json(&cross_path)?)
    } else {
        None
    };
    let opts = ReportOptions {
        n_resamples: cfg.report.bootstrap_resamples,
        level: cfg.report.confidence_level,
        seed: cfg.seed,
    };

    // Group predictions by (arm, condition) in order of first appearance.
    let mut groups: Vec<((String, Condition), Vec<PredictionRecord>)> = Vec::new();
    for p in predictions {
        let key = (p.arm, p.record.condition);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(p.record),
            None => groups.push((key, vec![p.record])),
        }
    }

    let mut reports = Vec::new();
    for ((arm, condition), records) in &groups {
        let label = format!("{arm}/{condition}");
        let report = if arm == "cross" {
            let (target, cross) = target
                .as_ref()
                .zip(cross.as_ref())
                .ok_or_else(|| Error::Schema("cross-study predictions without target dataset or filter record".into()))?;
            metrics::population_report_transfer(&label, records, target, &cross.target_questions, &opts)?
        } else {
            let arm_splits: Vec<QuestionSplit> = splits
                .iter()
                .filter(|s| &s.arm == arm)
                .map(|s| s.split.clone())
                .collect();
            metrics::population_report_random_split(&label, records, &arm_splits, &source, &opts)?
        };
        reports.push(report);

        let filter = cfg.cross_study.in_study_filter
            && cfg.design == Design::InStudy
            && matches!(condition, Condition::Persona(_));
        if filter {
            let Condition::Persona(t) = condition else { unreachable!() };
            let keep: HashSet<&str> = personas
                .iter()
                .filter(|p| &p.arm == arm && p.persona.template == *t)
                .filter(|p| p.eval_accuracy.is_some_and(|a| a >= cfg.cross_study.selection_threshold))
                .map(|p| p.persona.respondent_id.as_str())
                .collect();
            let kept: Vec<PredictionRecord> = records
                .iter()
                .filter(|r| keep.contains(r.respondent_id.as_str()))
                .cloned()
                .collect();
            let arm_splits: Vec<QuestionSplit> = splits
                .iter()
                .filter(|s| &s.arm == arm && keep.contains(s.split.respondent_id.as_str()))
                .map(|s| s.split.clone())
                .collect();
            if !kept.is_empty() {
                reports.push(metrics::population_report_random_split(
                    &format!("{label}/filtered"),
                    &kept,
                    &arm_splits,
                    &source,
                    &opts,
                )?);
            }
        }
    }

    let mut token_groups: BTreeMap<(String, GenerationTemplate), Vec<&PersonaArchiveRecord>> = BTreeMap::new();
    for p in &personas {
        token_groups
            .entry((p.arm.clone(), p.persona.template))
            .or_default()
            .push(p);
    }
    let tokens = token_groups
        .into_iter()
        .map(|((arm, template), ps)| {
            let n = ps.len() as f64;
            let reductions: Vec<f64> = ps
                .iter()
                .filter_map(|p| prompt::percent_reduction(p.raw_token_count as f64, p.persona.token_count as f64))
                .collect();
            TokenRow {
                arm,
                template,
                respondents: ps.len(),
                raw: ps.iter().map(|p| p.raw_token_count as f64).sum::<f64>() / n,
                narrative: ps.iter().map(|p| p.persona.token_count as f64).sum::<f64>() / n,
                reduction_pct: if reductions.is_empty() { 0.0 } else { metrics::mean(&reductions) },
                tokenizer: ps[0].tokenizer.clone(),
            }
        })
        .collect();

    let mut best_template = Vec::new();
    let mut arms: Vec<&str> = Vec::new();
    for c in &calibration {
        if !arms.contains(&c.arm.as_str()) {
            arms.push(&c.arm);
        }
    }
    for arm in arms {
        let chosen: Vec<GenerationTemplate> = calibration
            .iter()
            .filter(|c| c.arm == arm)
            .map(|c| c.choice.chosen_template)
            .collect();
        for t in cfg.templates() {
            let count = chosen.iter().filter(|c| **c == t).count();
            best_template.push(BestTemplateRow {
                arm: arm.to_string(),
                template: t,
                count,
                fraction: count as f64 / chosen.len() as f64,
            });
        }
    }

    let sweep = if cfg.design == Design::IterationSweep {
        cfg.sweep
            .iterations
            .iter()
            .filter_map(|i| {
                let prefix = format!("iter{i}/");
                reports.iter().find(|r| r.label.starts_with(&prefix)).map(|r| SweepRow {
                    iterations: *i,
                    label: r.label.clone(),
                    acc_s: r.macro_metrics.acc_s,
                    tv_complement_s: r.macro_metrics.tv_complement_s,
                    mee_s: r.macro_metrics.mee_s,
                    wd_s: r.macro_metrics.wd_s,
                })
            })
            .collect()
    } else {
        Vec::new()
    };

    let mut skipped_counts = BTreeMap::new();
    for s in &skipped {
        *skipped_counts.entry(s.arm.clone()).or_insert(0) += 1;
    }

    let summary = RunSummary {
        run_id: cfg.run_id(),
        design: cfg.design,
        reports,
        tokens,
        best_template,
        sweep,
        skipped: skipped_counts,
        cross_study: cross,
    };
    write_json(&run_dir.join("summary.json"), &summary)?;
    Ok(summary)
}
