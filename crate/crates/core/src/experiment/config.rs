use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::Scope;
use crate::error::{Error, Result};
use crate::gateway::{GatewayConfig, ModelSettings};
use crate::persona::{OptimizerParams, StopRule};
use crate::prediction::CalibrationMode;
use crate::prompt::GenerationTemplate;
use crate::seed::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    InStudy,
    CrossStudy,
    TheoryComparison,
    AttitudeBehavior,
    IterationSweep,
}

impl Design {
    pub fn as_str(self) -> &'static str {
        match self {
            Design::InStudy => "in_study",
            Design::CrossStudy => "cross_study",
            Design::TheoryComparison => "theory_comparison",
            Design::AttitudeBehavior => "attitude_behavior",
            Design::IterationSweep => "iteration_sweep",
        }
    }

    fn single_iteration(self) -> bool {
        matches!(self, Design::TheoryComparison | Design::AttitudeBehavior)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionKind {
    Baseline,
    Raw,
    Persona,
    BestTemplate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetPaths {
    pub source: PathBuf,
    #[serde(default)]
    pub target: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub ratio: f64,
    pub scope: Scope,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            ratio: 0.8,
            scope: Scope::NonDemographic,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Defaults to all four for the theory and attitude/behavior designs,
    /// otherwise `[basic]`.
    pub templates: Option<Vec<GenerationTemplate>>,
    pub candidates: Option<usize>,
    /// Defaults to 1 for the theory and attitude/behavior designs, otherwise 3.
    pub iterations: Option<usize>,
    pub temperature: Option<f64>,
    pub early_stop_acc: Option<f64>,
    pub stop_rule: Option<StopRule>,
    pub max_unscorable_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub mode: CalibrationMode,
    pub fraction: f64,
    pub min_questions: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            mode: CalibrationMode::HeldOutCalibration,
            fraction: 0.2,
            min_questions: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictionConfig {
    pub parse_retries: u32,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        PredictionConfig { parse_retries: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossStudyConfig {
    pub selection_threshold: f64,
    /// Existing persona archive with evaluation accuracies; when absent the
    /// source personas are optimized as part of the run.
    pub persona_archive: Option<PathBuf>,
    pub source_scope: Scope,
    pub target_scope: Scope,
    /// Also report in-study persona metrics restricted to respondents that
    /// pass the selection threshold.
    pub in_study_filter: bool,
}

impl Default for CrossStudyConfig {
    fn default() -> Self {
        CrossStudyConfig {
            selection_threshold: 0.7,
            persona_archive: None,
            source_scope: Scope::Behavioral,
            target_scope: Scope::Behavioral,
            in_study_filter: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub iterations: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            iterations: vec![1, 2, 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub bootstrap_resamples: usize,
    pub confidence_level: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            bootstrap_resamples: 1000,
            confidence_level: 0.95,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Remote,
    Mock,
    Replay,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockConfig {
    /// JSON mock script.
    pub script: Option<PathBuf>,
    /// Built-in responder consulted when no script rule matches; `rule`
    /// follows the synthetic dataset's hidden rule.
    pub builtin: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub base_url: Option<String>,
    /// Environment variable holding the bearer token.
    pub auth_env: String,
    pub timeout_secs: u64,
    pub models: ModelSettings,
    pub gateway: GatewayConfig,
    pub mock: MockConfig,
    /// Call log served by the replay backend.
    pub replay_log: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Remote,
            base_url: None,
            auth_env: "PRIVSIM_API_KEY".into(),
            timeout_secs: 120,
            models: ModelSettings::default(),
            gateway: GatewayConfig::default(),
            mock: MockConfig::default(),
            replay_log: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub run_id: Option<String>,
    pub design: Design,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub dataset: DatasetPaths,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub conditions: Option<Vec<ConditionKind>>,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub prediction: PredictionConfig,
    #[serde(default)]
    pub cross_study: CrossStudyConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub report: ReportConfig,
    #[serde(default)]
    pub backend: BackendConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_workers() -> usize {
    4
}

impl ExperimentConfig {
    /// Reads TOML (`.toml`) or JSON (anything else). Relative paths are
    /// resolved against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.dataset.source);
        if let Some(t) = &mut self.dataset.target {
            fix(t);
        }
        if let Some(a) = &mut self.cross_study.persona_archive {
            fix(a);
        }
        if let Some(s) = &mut self.backend.mock.script {
            fix(s);
        }
        if let Some(r) = &mut self.backend.replay_log {
            fix(r);
        }
        if let Some(c) = &mut self.backend.gateway.cache_dir {
            fix(c);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.split.ratio > 0.0 && self.split.ratio < 1.0) {
            return bad(format!("split.ratio must be in (0, 1), got {}", self.split.ratio));
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.cross_study.selection_threshold) {
            return bad(format!(
                "cross_study.selection_threshold must be in [0, 1], got {}",
                self.cross_study.selection_threshold
            ));
        }
        if self.design == Design::CrossStudy && self.dataset.target.is_none() {
            return bad("cross_study design requires dataset.target".into());
        }
        if self.design.single_iteration() {
            if let Some(i) = self.optimizer.iterations.filter(|&i| i != 1) {
                return bad(format!(
                    "{} runs a single optimization iteration; optimizer.iterations = {i}",
                    self.design.as_str()
                ));
            }
        }
        if self.design == Design::IterationSweep
            && (self.sweep.iterations.is_empty() || self.sweep.iterations.contains(&0))
        {
            return bad("sweep.iterations must be a non-empty list of positive integers".into());
        }
        if self.templates().is_empty() {
            return bad("optimizer.templates is empty".into());
        }
        if !(self.calibration.fraction > 0.0 && self.calibration.fraction < 1.0) {
            return bad("calibration.fraction must be in (0, 1)".into());
        }
        if !(self.report.confidence_level > 0.0 && self.report.confidence_level < 1.0)
            || self.report.bootstrap_resamples == 0
        {
            return bad("report needs confidence_level in (0, 1) and bootstrap_resamples > 0".into());
        }
        match self.backend.kind {
            BackendKind::Remote if self.backend.base_url.is_none() => {
                return bad("remote backend requires backend.base_url".into())
            }
            BackendKind::Replay if self.backend.replay_log.is_none() => {
                return bad("replay backend requires backend.replay_log".into())
            }
            BackendKind::Mock if self.backend.mock.script.is_none() && self.backend.mock.builtin.is_none() => {
                return bad("mock backend requires backend.mock.script or backend.mock.builtin".into())
            }
            _ => {}
        }
        if let Some(b) = &self.backend.mock.builtin {
            if b != "rule" {
                return bad(format!("unknown builtin mock `{b}`"));
            }
        }
        self.optimizer_params(self.templates()[0]).validate()
    }

    pub fn templates(&self) -> Vec<GenerationTemplate> {
        match &self.optimizer.templates {
            Some(t) => t.clone(),
            None if self.design.single_iteration() => GenerationTemplate::ALL.to_vec(),
            None => vec![GenerationTemplate::Basic],
        }
    }

    pub fn conditions(&self) -> Vec<ConditionKind> {
        let mut c = match &self.conditions {
            Some(c) => c.clone(),
            None => match self.design {
                Design::InStudy => vec![ConditionKind::Baseline, ConditionKind::Raw, ConditionKind::Persona],
                Design::TheoryComparison | Design::AttitudeBehavior => {
                    vec![ConditionKind::Persona, ConditionKind::BestTemplate]
                }
                Design::CrossStudy | Design::IterationSweep => vec![ConditionKind::Persona],
            },
        };
        c.sort();
        c.dedup();
        c
    }

    pub fn optimizer_params(&self, template: GenerationTemplate) -> OptimizerParams {
        let d = OptimizerParams::default();
        let o = &self.optimizer;
        OptimizerParams {
            candidates: o.candidates.unwrap_or(d.candidates),
            iterations: o
                .iterations
                .unwrap_or(if self.design.single_iteration() { 1 } else { d.iterations }),
            temperature: o.temperature.unwrap_or(self.backend.models.generation.temperature),
            template,
            early_stop_acc: o.early_stop_acc.unwrap_or(d.early_stop_acc),
            stop_rule: o.stop_rule.unwrap_or(d.stop_rule),
            max_unscorable_fraction: o.max_unscorable_fraction.unwrap_or(d.max_unscorable_fraction),
        }
    }

    /// Digest of the settings that determine results. Worker count, output
    /// location, timeouts and gateway settings (retries, rate limits, budget
    /// caps, cache) are left out, so raising a budget and re-running resumes
    /// the same run.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.workers = 0;
        c.output_dir = PathBuf::new();
        c.backend.timeout_secs = 0;
        c.backend.gateway = GatewayConfig::default();
        sha256_hex(&serde_json::to_vec(&c).expect("config serializes"))
    }

    /// Explicit run id, or one derived from the config digest so that
    /// re-running the same config resumes the same run directory.
    pub fn run_id(&self) -> String {
        self.run_id
            .clone()
            .unwrap_or_else(|| format!("{}-{}", self.design.as_str(), &self.digest()[..12]))
    }
}
