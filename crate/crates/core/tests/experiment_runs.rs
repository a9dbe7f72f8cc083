mod common;

use std::collections::BTreeMap;

use privsim::experiment::{replay_run, ArmSplit, CrossStudyRecord, RunManifest};
use privsim::gateway::Role;
use privsim::records::{read_json, read_jsonl};
use privsim::{synthetic, Error, GenerationTemplate};

use common::*;

#[test]
fn in_study_rule_mock_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "in_study", 20, 30, "");
    let (summary, run_dir) = run(cfg);

    let persona = summary.report("in_study/persona:basic").unwrap();
    assert_eq!(persona.macro_metrics.acc_s, Some(1.0));
    assert_eq!(persona.macro_metrics.tv_complement_s, Some(1.0));
    assert_eq!(persona.per_respondent.len(), 20);
    let raw = summary.report("in_study/raw").unwrap();
    assert_eq!(raw.macro_metrics.acc_s, Some(1.0));

    // Baseline predicts the first option everywhere, so its accuracy is the
    // share of first-option answers among each respondent's scored questions.
    let ds = synthetic::rule_dataset("syn", 20, 30, SEED);
    let splits: Vec<ArmSplit> = read_jsonl(&run_dir.join("splits.jsonl")).unwrap();
    assert_eq!(splits.len(), 20);
    let mut per: BTreeMap<String, f64> = BTreeMap::new();
    for s in &splits {
        let r = ds.respondent(&s.split.respondent_id).unwrap();
        let ids: Vec<&String> = s.split.scored_ids().collect();
        let first = ids
            .iter()
            .filter(|id| r.answer(id) == Some(ds.question(id).unwrap().answers[0].as_str()))
            .count();
        per.insert(r.respondent_id.clone(), first as f64 / ids.len() as f64);
    }
    let expected = per.values().sum::<f64>() / per.len() as f64;
    let baseline = summary.report("in_study/baseline").unwrap();
    assert_eq!(baseline.macro_metrics.acc_s, Some(expected));
    assert!(expected < 1.0);

    for f in ["summary.json", "manifest.json", "tables/summary.csv", "tables/tokens.csv", "plots/accuracy.svg"] {
        assert!(run_dir.join(f).exists(), "{f} missing");
    }
    let m: RunManifest = read_json(&run_dir.join("manifest.json")).unwrap();
    assert_eq!(m.status, "complete");
}

#[test]
fn token_table_uses_one_tokenizer_and_mean_reduction() {
    let dir = tempfile::tempdir().unwrap();
    let (summary, run_dir) = run(config(dir.path(), "in_study", 6, 20, ""));
    assert_eq!(summary.tokens.len(), 1);
    let row = &summary.tokens[0];
    assert_eq!(row.respondents, 6);
    assert!(row.raw > row.narrative);
    let personas: Vec<privsim::experiment::PersonaArchiveRecord> =
        read_jsonl(&run_dir.join("personas.jsonl")).unwrap();
    let per: Vec<f64> = personas
        .iter()
        .map(|p| 100.0 * (1.0 - p.persona.token_count as f64 / p.raw_token_count as f64))
        .collect();
    let mean = per.iter().sum::<f64>() / per.len() as f64;
    assert!((row.reduction_pct - mean).abs() < 1e-9);
    assert!(personas.iter().all(|p| p.tokenizer == row.tokenizer));
    let csv = std::fs::read_to_string(run_dir.join("tables/tokens.csv")).unwrap();
    assert!(csv.starts_with("arm,template,respondents,Raw,Narrative,%Reduction,tokenizer\n"));
}

#[test]
fn cross_study_filter_and_cartesian_calls() {
    let dir = tempfile::tempdir().unwrap();
    let accs = [Some(0.5), Some(0.6999), Some(0.7), Some(0.85), None, Some(1.0)];
    let cfg = cross_setup(dir.path(), Some(&accs));
    let mock = rule_backend();
    let (summary, run_dir) = run_with(cfg, mock.clone());
    let summary = summary.unwrap();

    let cross: CrossStudyRecord = read_json(&run_dir.join("cross_study.json")).unwrap();
    let kept: Vec<&str> = cross.survivors.iter().map(|s| s.respondent_id.as_str()).collect();
    assert_eq!(kept, ["r003", "r004", "r006"]);
    assert_eq!(cross.candidates, 6);
    // Behavioral questions of the target are the odd-numbered ones.
    assert_eq!(cross.target_questions.len(), 5);
    assert_eq!(mock.calls_with_role(Role::Prediction), 3 * 5);
    assert_eq!(cross.prediction_calls, 15);
    assert_eq!(mock.calls_with_role(Role::Generation), 0);
    let report = summary.report("cross/persona:basic").unwrap();
    assert_eq!(report.predictions, 15);
    assert!(report.macro_metrics.tv_complement_s.is_some());
    assert_eq!(report.macro_metrics.acc_s, None);
}

#[test]
fn cross_study_without_survivors_aborts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = cross_setup(dir.path(), Some(&[Some(0.2), Some(0.69)]));
    let (res, run_dir) = run_with(cfg, rule_backend());
    assert!(matches!(res, Err(Error::NoPersonasSurvive(t)) if t == 0.7));
    let m: RunManifest = read_json(&run_dir.join("manifest.json")).unwrap();
    assert_eq!(m.status, "aborted");
}

#[test]
fn cross_study_optimizes_source_when_no_archive() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = cross_setup(dir.path(), None);
    let mock = rule_backend();
    let (summary, run_dir) = run_with(cfg, mock.clone());
    summary.unwrap();
    let cross: CrossStudyRecord = read_json(&run_dir.join("cross_study.json")).unwrap();
    // Rule personas built from behavioral answers predict every behavioral
    // question, so all six pass.
    assert_eq!(cross.survivors.len(), 6);
    assert_eq!(cross.prediction_calls, 6 * cross.target_questions.len());
    // Respondents sharing rule values get byte-identical personas, whose
    // prompts are answered once and then served from the cache.
    let backend = mock
        .calls()
        .iter()
        .filter(|c| c.role == Role::Prediction && c.request_tag.contains("/cross/"))
        .count();
    assert!(backend > 0 && backend <= cross.prediction_calls);
}

#[test]
fn theory_comparison_ties_go_to_basic() {
    let dir = tempfile::tempdir().unwrap();
    let (summary, _) = run(config(dir.path(), "theory_comparison", 8, 20, ""));
    let rows: Vec<(GenerationTemplate, f64)> = summary
        .best_template
        .iter()
        .map(|r| (r.template, r.fraction))
        .collect();
    assert_eq!(
        rows,
        [
            (GenerationTemplate::Basic, 1.0),
            (GenerationTemplate::Bounded, 0.0),
            (GenerationTemplate::Calculus, 0.0),
            (GenerationTemplate::Pmt, 0.0),
        ]
    );
    for t in GenerationTemplate::ALL {
        let r = summary.report(&format!("theory/persona:{t}")).unwrap();
        assert_eq!(r.macro_metrics.acc_s, Some(1.0));
    }
    assert_eq!(summary.report("theory/persona:best").unwrap().macro_metrics.acc_s, Some(1.0));
}

#[test]
fn behavior_history_beats_attitude_history() {
    let dir = tempfile::tempdir().unwrap();
    let (summary, _) = run(config(dir.path(), "attitude_behavior", 10, 20, ""));
    let acc = |label: &str| summary.report(label).unwrap().macro_metrics.acc_s.unwrap();
    let b2b = acc("behavioral_to_behavioral/persona:basic");
    let a2b = acc("attitude_to_behavioral/persona:basic");
    assert_eq!(b2b, 1.0);
    assert!(a2b < b2b);
}

#[test]
fn sweep_rows_follow_iteration_budgets() {
    let dir = tempfile::tempdir().unwrap();
    let (summary, run_dir) = run(config(dir.path(), "iteration_sweep", 5, 10, ""));
    let its: Vec<usize> = summary.sweep.iter().map(|r| r.iterations).collect();
    assert_eq!(its, [1, 2, 3]);
    assert!(summary.sweep.iter().all(|r| r.tv_complement_s == Some(1.0)));
    assert!(run_dir.join("tables/sweep.csv").exists());
}

#[test]
fn replay_reproduces_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (_, run_dir) = run(config(dir.path(), "in_study", 6, 12, ""));
    let outcome = replay_run(&run_dir).unwrap();
    assert!(outcome.is_identical(), "{outcome:?}");
    for f in ["personas.jsonl", "predictions.jsonl", "tables/summary.csv", "summary.json"] {
        assert!(outcome.matched.iter().any(|m| m == f), "{f} not compared");
    }
}

#[test]
fn rerun_is_served_from_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "in_study", 4, 10, "");
    let (first, _) = run(cfg.clone());
    let mock = rule_backend();
    let (second, _) = run_with(cfg, mock.clone());
    assert_eq!(mock.calls().len(), 0);
    assert_eq!(second.unwrap().reports, first.reports);
}

#[test]
fn call_budget_aborts_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), "in_study", 4, 10, "");
    cfg.backend.gateway.max_calls = Some(10);
    let (res, run_dir) = run_with(cfg, rule_backend());
    assert!(matches!(res, Err(Error::BudgetExceeded(_))), "{res:?}");
    let m: RunManifest = read_json(&run_dir.join("manifest.json")).unwrap();
    assert_eq!(m.status, "aborted");
    assert!(m.budget.calls_used <= 10);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut capped = config(dir.path(), "in_study", 5, 12, "");
    let uncapped = capped.clone();
    capped.backend.gateway.max_calls = Some(40);
    let (res, interrupted_dir) = run_with(capped, rule_backend());
    assert!(matches!(res, Err(Error::BudgetExceeded(_))));

    let (resumed, resumed_dir) = run_with(uncapped.clone(), rule_backend());
    resumed.unwrap();
    assert_eq!(resumed_dir, interrupted_dir);
    let m: RunManifest = read_json(&resumed_dir.join("manifest.json")).unwrap();
    assert!(m.gateway.cache_hits > 0);

    let fresh_dir = dir.path().join("fresh");
    let runner = privsim::Runner::with_backend(uncapped, rule_backend(), Some(fresh_dir.clone())).unwrap();
    runner.execute().unwrap();
    let fresh: RunManifest = read_json(&fresh_dir.join("manifest.json")).unwrap();
    let digests = |m: &RunManifest| -> Vec<(String, String)> {
        m.artifacts
            .iter()
            .filter(|a| !matches!(a.path.as_str(), "config.json" | "calls.jsonl"))
            .map(|a| (a.path.clone(), a.sha256.clone()))
            .collect()
    };
    assert_eq!(digests(&m), digests(&fresh));
}

#[test]
fn scored_questions_never_overlap_generation_or_calibration() {
    let dir = tempfile::tempdir().unwrap();
    let (_, run_dir) = run(config(dir.path(), "theory_comparison", 8, 20, ""));
    let splits: Vec<ArmSplit> = read_jsonl(&run_dir.join("splits.jsonl")).unwrap();
    let preds: Vec<privsim::experiment::ArmPrediction> = read_jsonl(&run_dir.join("predictions.jsonl")).unwrap();
    for s in &splits {
        assert!(!s.split.calibration_ids.is_empty());
        for p in preds.iter().filter(|p| p.record.respondent_id == s.split.respondent_id) {
            assert!(!s.split.gen_ids.contains(&p.record.question_id));
        }
        for q in s.split.scored_ids() {
            assert!(!s.split.gen_ids.contains(q) && !s.split.calibration_ids.contains(q));
        }
    }
}
