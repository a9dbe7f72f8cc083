mod common;

use std::path::Path;

use common::golden;
use privsim::prompt::PredictionTemplate;
use privsim::seed::sha256_hex;
use privsim::GenerationTemplate;

#[test]
fn generation_prompts_match_golden() {
    for t in GenerationTemplate::ALL {
        golden::check_generation(t).unwrap();
    }
}

#[test]
fn baseline_prediction_prompt_matches_golden() {
    golden::check_prediction(PredictionTemplate::Baseline).unwrap();
}

#[test]
fn persona_and_raw_prediction_prompts_match_golden() {
    golden::check_prediction(PredictionTemplate::Persona).unwrap();
    golden::check_prediction(PredictionTemplate::Raw).unwrap();
}

#[test]
fn difference_is_located() {
    let err = golden::compare("predict_baseline.txt", "You are an AI simulator X").unwrap_err();
    assert!(err.contains("byte 24"), "{err}");
}

#[test]
fn template_files_match_checksums() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("templates");
    let sums = std::fs::read_to_string(dir.join("SHA256SUMS")).unwrap();
    let mut seen = 0;
    for line in sums.lines().filter(|l| !l.trim().is_empty()) {
        let (digest, name) = line.split_once("  ").unwrap();
        let bytes = std::fs::read(dir.join(name)).unwrap();
        assert_eq!(sha256_hex(&bytes), digest, "{name}");
        seen += 1;
    }
    assert_eq!(seen, 8);
}
