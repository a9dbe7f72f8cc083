//! Optimized text personas for simulating individual survey answers about
//! privacy, and the metrics used to judge the simulations.
//!
//! The pipeline: load a [`dataset::SurveyDataset`], split each respondent's
//! answers into generation and evaluation questions, condense the generation
//! answers into a persona with [`persona::PersonaEngine`], predict the
//! evaluation answers with [`prediction::Predictor`], and score them with
//! [`metrics`]. [`experiment::Runner`] drives whole experiment designs from a
//! config file. All model traffic goes through [`gateway::Gateway`].

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod gateway;
pub mod metrics;
pub mod persona;
pub mod prediction;
pub mod prompt;
pub mod records;
pub mod seed;
pub mod synthetic;

pub use dataset::{QuestionSpec, QuestionSplit, ResponseSet, Scope, SurveyDataset};
pub use error::{Error, Result};
pub use experiment::{ExperimentConfig, RunSummary, Runner};
pub use gateway::{Gateway, GatewayConfig, ModelSettings, ModelSpec};
pub use metrics::FidelityReport;
pub use persona::{OptimizerParams, Persona, PersonaEngine};
pub use prediction::{CalibrationChoice, Condition, PredictionRecord, Predictor};
pub use prompt::GenerationTemplate;
