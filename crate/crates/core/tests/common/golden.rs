//! Rendered prompts against hand-extracted reference text. Slot values are
//! sentinels, so every other byte must come from the template.

use std::path::Path;

use privsim::prompt::{render_generation_prompt, render_prediction_prompt, PredictionTemplate, TemplateKind};
use privsim::GenerationTemplate;

pub const HISTORY: &str = "<<HISTORY>>";
pub const PERSONA: &str = "<<PERSONA>>";
pub const QUESTION: &str = "<<QUESTION>>";

fn golden(name: &str) -> String {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

pub fn compare(name: &str, got: &str) -> Result<(), String> {
    let want = golden(name);
    if got == want {
        return Ok(());
    }
    let at = got
        .bytes()
        .zip(want.bytes())
        .position(|(a, b)| a != b)
        .unwrap_or(got.len().min(want.len()));
    Err(format!("{name}: first difference at byte {at}"))
}

fn yes_no() -> Vec<String> {
    vec!["Yes".into(), "No".into()]
}

pub fn check_generation(t: GenerationTemplate) -> Result<(), String> {
    let p = render_generation_prompt(TemplateKind::Generation(t), HISTORY).map_err(|e| e.to_string())?;
    compare(&format!("generation_{t}.txt"), &p.text)
}

pub fn check_prediction(kind: PredictionTemplate) -> Result<(), String> {
    let (file, persona) = match kind {
        PredictionTemplate::Baseline => ("predict_baseline.txt", None),
        PredictionTemplate::Persona | PredictionTemplate::Raw => ("predict_persona.txt", Some(PERSONA)),
    };
    let p = render_prediction_prompt(TemplateKind::Prediction(kind), persona, QUESTION, &yes_no())
        .map_err(|e| e.to_string())?;
    compare(file, &p.text)
}

pub fn check_all() -> Result<(), String> {
    for t in GenerationTemplate::ALL {
        check_generation(t)?;
    }
    for k in [PredictionTemplate::Baseline, PredictionTemplate::Persona, PredictionTemplate::Raw] {
        check_prediction(k)?;
    }
    Ok(())
}
