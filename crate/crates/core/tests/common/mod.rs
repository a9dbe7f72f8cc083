#![allow(dead_code)]

pub mod golden;
pub mod oracle;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use privsim::experiment::{ExperimentConfig, RunSummary, Runner};
use privsim::gateway::ScriptedMock;
use privsim::synthetic;
use privsim::SurveyDataset;

pub const SEED: u64 = 11;

pub fn write_dataset(dir: &Path, ds: &SurveyDataset) -> PathBuf {
    let p = dir.join(format!("{}.json", ds.name));
    std::fs::write(&p, ds.to_json_string().unwrap()).unwrap();
    p
}

/// Synthetic source dataset plus a config whose body is appended to the
/// common header.
pub fn config(dir: &Path, design: &str, respondents: usize, questions: usize, extra: &str) -> ExperimentConfig {
    let ds = synthetic::rule_dataset("syn", respondents, questions, SEED);
    write_dataset(dir, &ds);
    let text = format!(
        r#"design = "{design}"
seed = {SEED}
workers = 4
{extra}
[dataset]
source = "syn.json"
{target}
[backend]
kind = "mock"
mock = {{ builtin = "rule" }}
"#,
        target = if dir.join("target.json").exists() {
            "target = \"target.json\""
        } else {
            ""
        }
    );
    let p = dir.join("config.toml");
    std::fs::write(&p, text).unwrap();
    ExperimentConfig::load(&p).unwrap()
}

pub fn rule_backend() -> Arc<ScriptedMock> {
    Arc::new(synthetic::rule_mock())
}

pub fn run_with(cfg: ExperimentConfig, mock: Arc<ScriptedMock>) -> (privsim::Result<RunSummary>, PathBuf) {
    let runner = Runner::with_backend(cfg, mock, None).unwrap();
    let dir = runner.run_dir().to_path_buf();
    (runner.execute(), dir)
}

pub fn run(cfg: ExperimentConfig) -> (RunSummary, PathBuf) {
    let (s, dir) = run_with(cfg, rule_backend());
    (s.unwrap(), dir)
}

/// Archive of ready-made personas with the given evaluation accuracies.
/// Persona `k` carries the rule values of respondent `r{k+1:03}` of the
/// synthetic source.
pub fn fixture_archive(accuracies: &[Option<f64>]) -> Vec<privsim::experiment::PersonaArchiveRecord> {
    use privsim::persona::{OptimizerTrace, Persona, StopReason};
    accuracies
        .iter()
        .enumerate()
        .map(|(k, acc)| {
            let id = format!("r{:03}", k + 1);
            let l = synthetic::latent_for(SEED, &id);
            privsim::experiment::PersonaArchiveRecord {
                arm: "source".into(),
                persona: Persona {
                    respondent_id: id.clone(),
                    template: privsim::GenerationTemplate::Basic,
                    text: format!("Fixture persona for {id}.\nBIN={} LIK={}", l.bin, l.lik),
                    gen_accuracy: 1.0,
                    iteration_found: 1,
                    token_count: 6,
                    lineage: Vec::new(),
                    gen_unscorable: 0,
                },
                eval_accuracy: *acc,
                eval_scorable: 10,
                raw_token_count: 100,
                tokenizer: "approx".into(),
                trace: OptimizerTrace {
                    iterations: Vec::new(),
                    stop_reason: StopReason::ReachedThreshold,
                },
            }
        })
        .collect()
}

/// Target study for cross-study runs (8 respondents, 10 questions) and an
/// optional ready-made source archive.
pub fn cross_setup(dir: &Path, archive: Option<&[Option<f64>]>) -> ExperimentConfig {
    // Distinct wording keeps target prompts apart from source prompts in the
    // gateway cache.
    let mut target = synthetic::rule_dataset("target", 8, 10, SEED + 1);
    for q in &mut target.questions {
        q.text.push_str(" (follow-up study)");
    }
    write_dataset(dir, &target);
    let extra = match archive {
        Some(accs) => {
            privsim::records::write_jsonl(&dir.join("archive.jsonl"), &fixture_archive(accs)).unwrap();
            "[cross_study]\npersona_archive = \"archive.jsonl\"\n"
        }
        None => "",
    };
    config(dir, "cross_study", 6, 12, extra)
}
