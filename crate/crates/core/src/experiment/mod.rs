//! Config-driven experiment runs: splitting, persona optimization,
//! prediction, scoring, and the artifacts each run leaves on disk.
//!
//! A run directory holds:
//!
//! | file | content |
//! |---|---|
//! | `config.json` | resolved configuration |
//! | `splits.jsonl`, `skipped.jsonl` | per-respondent question splits and skip reasons |
//! | `personas.jsonl` | persona archive with evaluation accuracy and optimizer trace |
//! | `predictions.jsonl` | every prediction record |
//! | `calibration.jsonl` | per-respondent template choices |
//! | `cross_study.json` | persona filter outcome (cross-study runs) |
//! | `calls.jsonl` | every model call, replayable |
//! | `summary.json` | fidelity reports and derived tables |
//! | `tables/*.csv`, `plots/*.svg` | emitted report |
//! | `manifest.json` | digests of everything above |

mod config;
mod evaluate;
mod manifest;
mod report;
mod runner;

use serde::{Deserialize, Serialize};

use crate::dataset::QuestionSplit;
use crate::persona::{OptimizerTrace, Persona};
use crate::prediction::{CalibrationChoice, PredictionRecord};
use crate::prompt::GenerationTemplate;

pub use config::{
    BackendConfig, BackendKind, CalibrationConfig, ConditionKind, CrossStudyConfig, DatasetPaths, Design,
    ExperimentConfig, MockConfig, OptimizerConfig, PredictionConfig, ReportConfig, SplitConfig, SweepConfig,
};
pub use evaluate::{evaluate_run, BestTemplateRow, RunSummary, SweepRow, TokenRow};
pub use manifest::{ArtifactEntry, RunManifest};
pub use report::{bar_chart_svg, emit_report, Bar, ReportFormat};
pub use runner::{build_backend, filter_personas, replay_run, ReplayOutcome, Runner};

/// Sub-experiment a record belongs to, e.g. `in_study`, `iter2`,
/// `attitude_to_behavioral`, `source`, `cross`.
pub type Arm = String;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmSplit {
    pub arm: Arm,
    #[serde(flatten)]
    pub split: QuestionSplit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmSkip {
    pub arm: Arm,
    pub respondent_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmPrediction {
    pub arm: Arm,
    #[serde(flatten)]
    pub record: PredictionRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmCalibration {
    pub arm: Arm,
    #[serde(flatten)]
    pub choice: CalibrationChoice,
}

/// One optimized persona with how it fared on held-out questions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaArchiveRecord {
    pub arm: Arm,
    #[serde(flatten)]
    pub persona: Persona,
    /// Accuracy on the scored evaluation questions.
    pub eval_accuracy: Option<f64>,
    pub eval_scorable: usize,
    /// Token count of the serialized generation history.
    pub raw_token_count: usize,
    pub tokenizer: String,
    pub trace: OptimizerTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Survivor {
    pub respondent_id: String,
    pub template: GenerationTemplate,
    pub eval_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossStudyRecord {
    pub selection_threshold: f64,
    pub candidates: usize,
    pub survivors: Vec<Survivor>,
    pub target_questions: Vec<String>,
    /// Prediction requests issued for the transfer, retries included.
    pub prediction_calls: usize,
}
