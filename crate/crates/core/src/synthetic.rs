//! Synthetic survey data generated from a hidden per-respondent rule, and a
//! mock model that follows the same rule.
//!
//! Question `S{i}` is binary (behavioral) for odd `i` and a five-point
//! Likert item (attitude) for even `i`. Each respondent has two latent
//! values, `bin ∈ {0,1}` and `lik ∈ {0..4}`; the answer index is
//! `(bin + i) mod 2` or `(lik + i) mod 5`. A persona produced by the rule mock
//! states those values (`BIN=b LIK=l`), so predictions from it are exact,
//! while predictions from a persona built without one of the question kinds
//! fall back to the first option for that kind.

use rand::Rng;

use crate::dataset::{Domain, QuestionSpec, ResponseSet, SurveyDataset};
use crate::gateway::{ModelRequest, Role, ScriptedMock};
use crate::seed;

pub const BINARY: [&str; 2] = ["Yes", "No"];
pub const LIKERT: [&str; 5] = [
    "Strongly agree",
    "Agree",
    "Neither agree nor disagree",
    "Disagree",
    "Strongly disagree",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Latent {
    pub bin: usize,
    pub lik: usize,
}

pub fn is_binary(i: usize) -> bool {
    i % 2 == 1
}

fn labels(i: usize) -> &'static [&'static str] {
    if is_binary(i) {
        &BINARY
    } else {
        &LIKERT
    }
}

pub fn question(i: usize) -> QuestionSpec {
    let (text, domain) = if is_binary(i) {
        (
            format!("[S{i}] Would you let the service in scenario {i} use your personal data?"),
            Domain::Behavioral,
        )
    } else {
        (
            format!("[S{i}] I am comfortable with how scenario {i} handles personal information."),
            Domain::Attitude,
        )
    };
    QuestionSpec {
        id: format!("s{i:02}"),
        text,
        answers: labels(i).iter().map(|s| s.to_string()).collect(),
        domain,
        discard_values: Vec::new(),
    }
}

/// Answer index (0-based) the rule assigns to question `i`.
pub fn rule_index(latent: Latent, i: usize) -> usize {
    if is_binary(i) {
        (latent.bin + i) % 2
    } else {
        (latent.lik + i) % 5
    }
}

pub fn latent_for(seed: u64, respondent_id: &str) -> Latent {
    let mut rng = seed::stream(seed, "synthetic", respondent_id);
    Latent {
        bin: rng.random_range(0..2),
        lik: rng.random_range(0..5),
    }
}

/// `respondents × questions` dataset where everyone answers everything.
pub fn rule_dataset(name: &str, respondents: usize, questions: usize, seed: u64) -> SurveyDataset {
    let qs: Vec<QuestionSpec> = (1..=questions).map(question).collect();
    let rs = (1..=respondents)
        .map(|j| {
            let id = format!("r{j:03}");
            let latent = latent_for(seed, &id);
            ResponseSet {
                answers: (1..=questions)
                    .map(|i| (qs[i - 1].id.clone(), labels(i)[rule_index(latent, i)].to_string()))
                    .collect(),
                respondent_id: id,
            }
        })
        .collect();
    SurveyDataset::new(name, None, qs, rs).expect("synthetic dataset is valid")
}

fn scenario_number(s: &str) -> Option<usize> {
    s.split(']').next()?.parse().ok()
}

/// Latent values consistent with a serialized history; `None` where the
/// history has no question of that kind.
fn infer_from_history(prompt: &str) -> (Option<usize>, Option<usize>) {
    let mut bin = None;
    let mut lik = None;
    for block in prompt.split("Question: [S").skip(1) {
        let Some(i) = scenario_number(block) else { continue };
        let Some(answer) = block
            .split("User Answer: ")
            .nth(1)
            .and_then(|rest| rest.lines().next())
        else {
            continue;
        };
        let Some(idx) = labels(i).iter().position(|l| *l == answer.trim()) else {
            continue;
        };
        if is_binary(i) {
            bin.get_or_insert((idx + 2 - i % 2) % 2);
        } else {
            lik.get_or_insert((idx + 5 - i % 5) % 5);
        }
    }
    (bin, lik)
}

fn persona_value(prompt: &str, key: &str) -> Option<usize> {
    prompt.split(key).nth(1)?.chars().next()?.to_digit(10).map(|d| d as usize)
}

fn persona_text(bin: Option<usize>, lik: Option<usize>) -> String {
    let show = |v: Option<usize>| v.map_or("?".to_string(), |v| v.to_string());
    format!(
        "This person follows a fixed rule when deciding.\nBIN={} LIK={}",
        show(bin),
        show(lik)
    )
}

/// Response function of the rule-following mock model.
pub fn rule_response(req: &ModelRequest) -> Option<String> {
    let p = req.prompt.as_str();
    match req.role {
        Role::Feedback => Some("The narrative is consistent with every answer; keep it as short as it is.".into()),
        Role::Generation => {
            if p.contains("BIN=") {
                Some(persona_text(persona_value(p, "BIN="), persona_value(p, "LIK=")))
            } else {
                let (bin, lik) = infer_from_history(p);
                Some(persona_text(bin, lik))
            }
        }
        Role::Prediction => {
            let i = scenario_number(p.rsplit("[S").next()?)?;
            let (bin, lik) = if p.contains("BIN=") {
                (persona_value(p, "BIN="), persona_value(p, "LIK="))
            } else if p.contains("User Answer: ") {
                infer_from_history(p)
            } else {
                (None, None)
            };
            let known = if is_binary(i) { bin } else { lik };
            let idx = match known {
                Some(v) => rule_index(Latent { bin: v, lik: v }, i),
                None => 0,
            };
            Some(labels(i)[idx].to_string())
        }
    }
}

pub fn rule_mock() -> ScriptedMock {
    ScriptedMock::new().handler(|req, _| rule_response(req))
}
