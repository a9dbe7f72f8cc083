//! Survey data model: questions with ordered answer sets, respondents, and
//! per-respondent generation/evaluation splits.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Demographic,
    Attitude,
    Behavioral,
    Other,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Demographic => "demographic",
            Domain::Attitude => "attitude",
            Domain::Behavioral => "behavioral",
            Domain::Other => "other",
        }
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "demographic" => Ok(Domain::Demographic),
            "attitude" => Ok(Domain::Attitude),
            "behavioral" => Ok(Domain::Behavioral),
            "other" => Ok(Domain::Other),
            _ => Err(Error::Schema(format!("unknown domain `{s}`"))),
        }
    }
}

/// Which questions a split may draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    #[default]
    All,
    /// Everything except demographic questions.
    NonDemographic,
    Attitude,
    Behavioral,
}

impl Scope {
    pub fn admits(self, domain: Domain) -> bool {
        match self {
            Scope::All => true,
            Scope::NonDemographic => domain != Domain::Demographic,
            Scope::Attitude => domain == Domain::Attitude,
            Scope::Behavioral => domain == Domain::Behavioral,
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::All => "all",
            Scope::NonDemographic => "non_demographic",
            Scope::Attitude => "attitude",
            Scope::Behavioral => "behavioral",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionSpec {
    pub id: String,
    pub text: String,
    /// Ordered answer set; position `k` maps to the numeric value `k + 1`.
    pub answers: Vec<String>,
    pub domain: Domain,
    #[serde(default)]
    pub discard_values: Vec<String>,
}

impl QuestionSpec {
    pub fn support(&self) -> usize {
        self.answers.len()
    }

    /// 1-based position of `answer` in the ordered answer list.
    pub fn answer_to_numeric(&self, answer: &str) -> Result<usize> {
        self.answers
            .iter()
            .position(|a| a == answer)
            .map(|k| k + 1)
            .ok_or_else(|| Error::AnswerDomain {
                respondent: String::new(),
                question: self.id.clone(),
                answer: answer.to_string(),
            })
    }

    pub fn numeric_to_answer(&self, value: usize) -> Option<&str> {
        value
            .checked_sub(1)
            .and_then(|k| self.answers.get(k))
            .map(String::as_str)
    }

    /// True when every answer is an integer numeral (e.g. a 1-100 slider).
    pub fn is_numeric_scale(&self) -> bool {
        self.answers.iter().all(|a| a.trim().parse::<i64>().is_ok())
    }

    fn validate(&self) -> Result<()> {
        if self.answers.len() < 2 {
            return Err(Error::Schema(format!(
                "question `{}` needs at least 2 answers",
                self.id
            )));
        }
        let mut seen = HashSet::new();
        for a in &self.answers {
            if !seen.insert(a.as_str()) {
                return Err(Error::Schema(format!(
                    "question `{}` lists answer `{a}` twice",
                    self.id
                )));
            }
        }
        for d in &self.discard_values {
            if !seen.contains(d.as_str()) {
                return Err(Error::Schema(format!(
                    "question `{}` discards `{d}`, which is not one of its answers",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSet {
    pub respondent_id: String,
    /// question id -> answer; absent keys are non-responses.
    pub answers: BTreeMap<String, String>,
}

impl ResponseSet {
    pub fn answer(&self, question_id: &str) -> Option<&str> {
        self.answers.get(question_id).map(String::as_str)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SurveyDataset {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collected_at: Option<String>,
    pub questions: Vec<QuestionSpec>,
    pub respondents: Vec<ResponseSet>,
    #[serde(skip)]
    question_index: HashMap<String, usize>,
    #[serde(skip)]
    respondent_index: HashMap<String, usize>,
}

/// A loaded dataset together with non-fatal load warnings.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub dataset: SurveyDataset,
    pub warnings: Vec<String>,
}

const TOP_FIELDS: &[&str] = &["name", "collected_at", "questions", "respondents"];
const QUESTION_FIELDS: &[&str] = &["id", "text", "answers", "domain", "discard_values"];
const RESPONDENT_FIELDS: &[&str] = &["respondent_id", "answers"];

impl SurveyDataset {
    /// Builds and validates a dataset. Answers listed in a question's
    /// `discard_values` are removed.
    pub fn new(
        name: impl Into<String>,
        collected_at: Option<String>,
        questions: Vec<QuestionSpec>,
        respondents: Vec<ResponseSet>,
    ) -> Result<Self> {
        let mut ds = SurveyDataset {
            name: name.into(),
            collected_at,
            questions,
            respondents,
            question_index: HashMap::new(),
            respondent_index: HashMap::new(),
        };
        ds.finish()?;
        Ok(ds)
    }

    fn finish(&mut self) -> Result<()> {
        if self.questions.is_empty() {
            return Err(Error::Schema("dataset has no questions".into()));
        }
        if self.respondents.is_empty() {
            return Err(Error::Schema("dataset has no respondents".into()));
        }
        self.question_index.clear();
        for (i, q) in self.questions.iter().enumerate() {
            q.validate()?;
            if self.question_index.insert(q.id.clone(), i).is_some() {
                return Err(Error::Schema(format!("duplicate question id `{}`", q.id)));
            }
        }
        self.respondent_index.clear();
        for (ri, r) in self.respondents.iter_mut().enumerate() {
            if self
                .respondent_index
                .insert(r.respondent_id.clone(), ri)
                .is_some()
            {
                return Err(Error::Schema(format!(
                    "duplicate respondent id `{}`",
                    r.respondent_id
                )));
            }
            let mut kept = BTreeMap::new();
            for (qid, answer) in std::mem::take(&mut r.answers) {
                let Some(&qi) = self.question_index.get(&qid) else {
                    return Err(Error::Schema(format!(
                        "respondent `{}` answers unknown question `{qid}`",
                        r.respondent_id
                    )));
                };
                let q = &self.questions[qi];
                if q.discard_values.iter().any(|d| *d == answer) {
                    continue;
                }
                if !q.answers.iter().any(|a| *a == answer) {
                    return Err(Error::AnswerDomain {
                        respondent: r.respondent_id.clone(),
                        question: qid,
                        answer,
                    });
                }
                kept.insert(qid, answer);
            }
            r.answers = kept;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Loaded> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Loaded> {
        let root: Value = serde_json::from_str(text)?;
        let mut warnings = Vec::new();
        let top = root
            .as_object()
            .ok_or_else(|| Error::Schema("top level must be an object".into()))?;
        warn_unknown(top, TOP_FIELDS, "dataset", &mut warnings);

        let name = req_str(top, "name", "dataset")?;
        let collected_at = match top.get("collected_at") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => return Err(Error::Schema("`collected_at` must be a string".into())),
        };

        let questions = req_array(top, "questions", "dataset")?
            .iter()
            .enumerate()
            .map(|(i, v)| parse_question(v, i, &mut warnings))
            .collect::<Result<Vec<_>>>()?;
        let respondents = req_array(top, "respondents", "dataset")?
            .iter()
            .enumerate()
            .map(|(i, v)| parse_respondent(v, i, &mut warnings))
            .collect::<Result<Vec<_>>>()?;

        for w in &warnings {
            log::warn!("{w}");
        }
        let dataset = SurveyDataset::new(name, collected_at, questions, respondents)?;
        Ok(Loaded { dataset, warnings })
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn question(&self, id: &str) -> Option<&QuestionSpec> {
        self.question_index.get(id).map(|&i| &self.questions[i])
    }

    /// Column position of a question.
    pub fn column(&self, id: &str) -> Option<usize> {
        self.question_index.get(id).copied()
    }

    pub fn respondent(&self, id: &str) -> Option<&ResponseSet> {
        self.respondent_index.get(id).map(|&i| &self.respondents[i])
    }

    /// Resolves ids to question specs, in dataset column order.
    pub fn questions_ordered<'a, I, S>(&'a self, ids: I) -> Vec<&'a QuestionSpec>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut cols: Vec<usize> = ids
            .into_iter()
            .filter_map(|id| self.column(id.as_ref()))
            .collect();
        cols.sort_unstable();
        cols.dedup();
        cols.into_iter().map(|c| &self.questions[c]).collect()
    }

    /// Answered question ids of `r` admitted by `scope`, in column order.
    pub fn answered_in_scope(&self, r: &ResponseSet, scope: Scope) -> Vec<String> {
        self.questions
            .iter()
            .filter(|q| scope.admits(q.domain) && r.answers.contains_key(&q.id))
            .map(|q| q.id.clone())
            .collect()
    }

    /// Mapping domain -> question ids. Every question lands in exactly one
    /// class.
    pub fn partition_by_domain(&self) -> BTreeMap<Domain, BTreeSet<String>> {
        let mut out: BTreeMap<Domain, BTreeSet<String>> = BTreeMap::new();
        for q in &self.questions {
            out.entry(q.domain).or_default().insert(q.id.clone());
        }
        out
    }

    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("dataset serializes");
        seed::sha256_hex(&canonical)
    }
}

fn warn_unknown(
    obj: &serde_json::Map<String, Value>,
    known: &[&str],
    what: &str,
    warnings: &mut Vec<String>,
) {
    for k in obj.keys() {
        if !known.contains(&k.as_str()) {
            warnings.push(format!("ignoring unknown field `{k}` in {what}"));
        }
    }
}

fn req_str(obj: &serde_json::Map<String, Value>, key: &str, what: &str) -> Result<String> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(Error::Schema(format!("`{key}` in {what} must be a string"))),
        None => Err(Error::Schema(format!("{what} is missing `{key}`"))),
    }
}

fn req_array<'a>(
    obj: &'a serde_json::Map<String, Value>,
    key: &str,
    what: &str,
) -> Result<&'a Vec<Value>> {
    match obj.get(key) {
        Some(Value::Array(a)) => Ok(a),
        Some(_) => Err(Error::Schema(format!("`{key}` in {what} must be an array"))),
        None => Err(Error::Schema(format!("{what} is missing `{key}`"))),
    }
}

fn answer_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) if n.is_i64() || n.is_u64() => Some(n.to_string()),
        _ => None,
    }
}

fn string_list(v: &Value, key: &str, what: &str) -> Result<Vec<String>> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::Schema(format!("`{key}` in {what} must be an array")))?;
    arr.iter()
        .map(|a| {
            answer_string(a).ok_or_else(|| {
                Error::Schema(format!("`{key}` in {what} must hold strings or integers"))
            })
        })
        .collect()
}

fn parse_question(v: &Value, idx: usize, warnings: &mut Vec<String>) -> Result<QuestionSpec> {
    let what = format!("questions[{idx}]");
    let obj = v
        .as_object()
        .ok_or_else(|| Error::Schema(format!("{what} must be an object")))?;
    warn_unknown(obj, QUESTION_FIELDS, &what, warnings);
    let id = req_str(obj, "id", &what)?;
    let what = format!("question `{id}`");
    let text = req_str(obj, "text", &what)?;
    let answers = string_list(
        obj.get("answers")
            .ok_or_else(|| Error::Schema(format!("{what} is missing `answers`")))?,
        "answers",
        &what,
    )?;
    let domain: Domain = req_str(obj, "domain", &what)?.parse()?;
    let discard_values = match obj.get("discard_values") {
        None | Some(Value::Null) => Vec::new(),
        Some(d) => string_list(d, "discard_values", &what)?,
    };
    Ok(QuestionSpec {
        id,
        text,
        answers,
        domain,
        discard_values,
    })
}

fn parse_respondent(v: &Value, idx: usize, warnings: &mut Vec<String>) -> Result<ResponseSet> {
    let what = format!("respondents[{idx}]");
    let obj = v
        .as_object()
        .ok_or_else(|| Error::Schema(format!("{what} must be an object")))?;
    warn_unknown(obj, RESPONDENT_FIELDS, &what, warnings);
    let respondent_id = req_str(obj, "respondent_id", &what)?;
    let raw = match obj.get("answers") {
        Some(Value::Object(m)) => m,
        Some(_) => {
            return Err(Error::Schema(format!(
                "`answers` of respondent `{respondent_id}` must be an object"
            )))
        }
        None => {
            return Err(Error::Schema(format!(
                "respondent `{respondent_id}` is missing `answers`"
            )))
        }
    };
    let mut answers = BTreeMap::new();
    for (qid, a) in raw {
        if a.is_null() {
            continue;
        }
        let a = answer_string(a).ok_or_else(|| {
            Error::Schema(format!(
                "answer of respondent `{respondent_id}` to `{qid}` must be a string or integer"
            ))
        })?;
        answers.insert(qid.clone(), a);
    }
    Ok(ResponseSet {
        respondent_id,
        answers,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionSplit {
    pub respondent_id: String,
    /// Generation questions, in column order.
    pub gen_ids: Vec<String>,
    /// Evaluation questions, in column order.
    pub eval_ids: Vec<String>,
    /// Calibration slice of `eval_ids`, excluded from scoring when present.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub calibration_ids: Vec<String>,
    pub seed: u64,
}

impl QuestionSplit {
    /// Evaluation questions that count toward reported accuracy.
    pub fn scored_ids(&self) -> impl Iterator<Item = &String> {
        self.eval_ids
            .iter()
            .filter(|id| !self.calibration_ids.contains(id))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub respondent_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitOutcome {
    pub splits: Vec<QuestionSplit>,
    pub skipped: Vec<SkipRecord>,
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Shuffles each respondent's answered, in-scope questions with a stream
/// seeded by `(seed, respondent_id)` and assigns the first
/// `round(ratio * count)` to generation.
pub fn split_questions(
    ds: &SurveyDataset,
    ratio: f64,
    seed: u64,
    scope: Scope,
) -> Result<SplitOutcome> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!(
            "split ratio must be in (0, 1), got {ratio}"
        )));
    }
    let mut out = SplitOutcome::default();
    for r in &ds.respondents {
        let mut ids = ds.answered_in_scope(r, scope);
        if ids.is_empty() {
            let err = Error::EmptyScope {
                respondent: r.respondent_id.clone(),
                scope: scope.to_string(),
            };
            log::warn!("skipping respondent: {err}");
            out.skipped.push(SkipRecord {
                respondent_id: r.respondent_id.clone(),
                reason: err.to_string(),
            });
            continue;
        }
        let mut rng = seed::stream(seed, "split", &r.respondent_id);
        ids.shuffle(&mut rng);
        let n_gen = round_half_up(ratio * ids.len() as f64).min(ids.len());
        let eval = ids.split_off(n_gen);
        out.splits.push(QuestionSplit {
            respondent_id: r.respondent_id.clone(),
            gen_ids: in_column_order(ds, ids),
            eval_ids: in_column_order(ds, eval),
            calibration_ids: Vec::new(),
            seed,
        });
    }
    Ok(out)
}

/// Cross-domain split: generate from every answered `gen_scope` question,
/// evaluate on every answered `eval_scope` question. Respondents missing
/// either side are skipped.
pub fn split_by_domain(
    ds: &SurveyDataset,
    gen_scope: Scope,
    eval_scope: Scope,
    seed: u64,
) -> SplitOutcome {
    let mut out = SplitOutcome::default();
    for r in &ds.respondents {
        let gen_ids = ds.answered_in_scope(r, gen_scope);
        let eval_ids = ds.answered_in_scope(r, eval_scope);
        let missing = if gen_ids.is_empty() {
            Some(gen_scope)
        } else if eval_ids.is_empty() {
            Some(eval_scope)
        } else {
            None
        };
        if let Some(scope) = missing {
            out.skipped.push(SkipRecord {
                respondent_id: r.respondent_id.clone(),
                reason: Error::EmptyScope {
                    respondent: r.respondent_id.clone(),
                    scope: scope.to_string(),
                }
                .to_string(),
            });
            continue;
        }
        out.splits.push(QuestionSplit {
            respondent_id: r.respondent_id.clone(),
            gen_ids,
            eval_ids,
            calibration_ids: Vec::new(),
            seed,
        });
    }
    out
}

/// Carves a calibration slice out of each split's evaluation set:
/// `max(min_questions, round(fraction * |eval|))` questions, capped so at
/// least one scored question remains.
pub fn assign_calibration(
    splits: &mut [QuestionSplit],
    fraction: f64,
    min_questions: usize,
    seed: u64,
) {
    for s in splits {
        let n_eval = s.eval_ids.len();
        if n_eval < 2 {
            s.calibration_ids.clear();
            continue;
        }
        let want = round_half_up(fraction * n_eval as f64)
            .max(min_questions)
            .min(n_eval - 1);
        let mut ids = s.eval_ids.clone();
        let mut rng = seed::stream(seed, "calibration", &s.respondent_id);
        ids.shuffle(&mut rng);
        ids.truncate(want);
        let set: HashSet<&String> = ids.iter().collect();
        s.calibration_ids = s
            .eval_ids
            .iter()
            .filter(|id| set.contains(id))
            .cloned()
            .collect();
    }
}

fn in_column_order(ds: &SurveyDataset, mut ids: Vec<String>) -> Vec<String> {
    ids.sort_by_key(|id| ds.column(id).unwrap_or(usize::MAX));
    ids
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(id: &str, answers: &[&str], domain: Domain) -> QuestionSpec {
        QuestionSpec {
            id: id.into(),
            text: format!("text of {id}"),
            answers: answers.iter().map(|s| s.to_string()).collect(),
            domain,
            discard_values: vec![],
        }
    }

    fn resp(id: &str, pairs: &[(&str, &str)]) -> ResponseSet {
        ResponseSet {
            respondent_id: id.into(),
            answers: pairs
                .iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
        }
    }

    #[test]
    fn minimal_file_loads() {
        let json = r#"{"name":"tiny","questions":[{"id":"q1","text":"Share?","answers":["No","Yes"],"domain":"behavioral"}],
            "respondents":[{"respondent_id":"r1","answers":{"q1":"Yes"}}]}"#;
        let loaded = SurveyDataset::from_json_str(json).unwrap();
        assert_eq!(loaded.dataset.questions.len(), 1);
        assert_eq!(loaded.dataset.respondents.len(), 1);
        assert!(loaded.warnings.is_empty());
    }

    #[test]
    fn neutral_answers_are_discarded() {
        let json = r#"{"name":"spa","questions":[{"id":"iuipc1","text":"Privacy matters","domain":"attitude",
            "answers":["Strongly disagree","Disagree","Neutral","Agree","Strongly agree"],"discard_values":["Neutral"]}],
            "respondents":[{"respondent_id":"r1","answers":{"iuipc1":"Neutral"}},{"respondent_id":"r2","answers":{"iuipc1":"Agree"}}]}"#;
        let ds = SurveyDataset::from_json_str(json).unwrap().dataset;
        assert_eq!(ds.respondents[0].answer("iuipc1"), None);
        assert_eq!(ds.respondents[1].answer("iuipc1"), Some("Agree"));
    }

    #[test]
    fn out_of_domain_answer_is_reported() {
        let json = r#"{"name":"x","questions":[{"id":"q1","text":"?","answers":["Yes","No"],"domain":"behavioral"}],
            "respondents":[{"respondent_id":"r9","answers":{"q1":"Maybe"}}]}"#;
        match SurveyDataset::from_json_str(json) {
            Err(Error::AnswerDomain {
                respondent,
                question,
                answer,
            }) => {
                assert_eq!(respondent, "r9");
                assert_eq!(question, "q1");
                assert_eq!(answer, "Maybe");
            }
            other => panic!("expected AnswerDomain, got {other:?}"),
        }
    }

    #[test]
    fn schema_errors() {
        let dup = r#"{"name":"x","questions":[{"id":"q1","text":"?","answers":["Yes","No"],"domain":"other"},
            {"id":"q1","text":"?","answers":["Yes","No"],"domain":"other"}],"respondents":[{"respondent_id":"r","answers":{}}]}"#;
        assert!(matches!(SurveyDataset::from_json_str(dup), Err(Error::Schema(_))));
        let missing = r#"{"name":"x","questions":[{"id":"q1","answers":["Yes","No"],"domain":"other"}],"respondents":[]}"#;
        assert!(matches!(SurveyDataset::from_json_str(missing), Err(Error::Schema(_))));
        let one_answer = r#"{"name":"x","questions":[{"id":"q1","text":"?","answers":["Yes"],"domain":"other"}],"respondents":[{"respondent_id":"r","answers":{}}]}"#;
        assert!(matches!(SurveyDataset::from_json_str(one_answer), Err(Error::Schema(_))));
        let bad_discard = r#"{"name":"x","questions":[{"id":"q1","text":"?","answers":["Yes","No"],"discard_values":["Meh"],"domain":"other"}],"respondents":[{"respondent_id":"r","answers":{}}]}"#;
        assert!(matches!(SurveyDataset::from_json_str(bad_discard), Err(Error::Schema(_))));
        let unknown_q = r#"{"name":"x","questions":[{"id":"q1","text":"?","answers":["Yes","No"],"domain":"other"}],"respondents":[{"respondent_id":"r","answers":{"q2":"Yes"}}]}"#;
        assert!(matches!(SurveyDataset::from_json_str(unknown_q), Err(Error::Schema(_))));
    }

    #[test]
    fn unknown_fields_warn() {
        let json = r#"{"name":"x","wave":49,"questions":[{"id":"q1","text":"?","answers":["Yes","No"],"domain":"other","note":"x"}],
            "respondents":[{"respondent_id":"r","answers":{"q1":"No"},"weight":1.2}]}"#;
        let loaded = SurveyDataset::from_json_str(json).unwrap();
        assert_eq!(loaded.warnings.len(), 3);
    }

    #[test]
    fn integer_answers_and_nulls() {
        let json = r#"{"name":"x","questions":[{"id":"w","text":"Willingness","answers":[1,2,3,4,5],"domain":"behavioral"},
            {"id":"v","text":"?","answers":["a","b"],"domain":"other"}],
            "respondents":[{"respondent_id":"r","answers":{"w":4,"v":null}}]}"#;
        let ds = SurveyDataset::from_json_str(json).unwrap().dataset;
        assert_eq!(ds.respondents[0].answer("w"), Some("4"));
        assert_eq!(ds.respondents[0].answer("v"), None);
        assert!(ds.questions[0].is_numeric_scale());
    }

    #[test]
    fn answer_to_numeric_positions() {
        let yn = q("q", &["No", "Yes"], Domain::Other);
        assert_eq!(yn.answer_to_numeric("No").unwrap(), 1);
        assert_eq!(yn.answer_to_numeric("Yes").unwrap(), 2);
        assert!(matches!(
            yn.answer_to_numeric("Maybe"),
            Err(Error::AnswerDomain { .. })
        ));
        let likert7 = q(
            "l",
            &[
                "Strongly disagree",
                "Disagree",
                "Somewhat disagree",
                "Neither agree nor disagree",
                "Somewhat agree",
                "Agree",
                "Strongly agree",
            ],
            Domain::Attitude,
        );
        assert_eq!(
            likert7
                .answer_to_numeric("Neither agree nor disagree")
                .unwrap(),
            4
        );
        for v in 1..=7 {
            let a = likert7.numeric_to_answer(v).unwrap();
            assert_eq!(likert7.answer_to_numeric(a).unwrap(), v);
        }
        assert_eq!(likert7.numeric_to_answer(0), None);
        assert_eq!(likert7.numeric_to_answer(8), None);
    }

    fn ten_question_dataset() -> SurveyDataset {
        let questions: Vec<_> = (0..10)
            .map(|i| {
                q(
                    &format!("q{i}"),
                    &["No", "Yes"],
                    if i < 6 {
                        Domain::Attitude
                    } else {
                        Domain::Behavioral
                    },
                )
            })
            .collect();
        let all: Vec<(String, &str)> = (0..10).map(|i| (format!("q{i}"), "Yes")).collect();
        let pairs: Vec<(&str, &str)> = all.iter().map(|(a, b)| (a.as_str(), *b)).collect();
        let attitude_only: Vec<(&str, &str)> = pairs[..6].to_vec();
        SurveyDataset::new(
            "t",
            None,
            questions,
            vec![resp("r1", &pairs), resp("r2", &attitude_only)],
        )
        .unwrap()
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let ds = ten_question_dataset();
        let out = split_questions(&ds, 0.8, 11, Scope::All).unwrap();
        let s = &out.splits[0];
        assert_eq!(s.gen_ids.len(), 8);
        assert_eq!(s.eval_ids.len(), 2);
        assert!(s.gen_ids.iter().all(|g| !s.eval_ids.contains(g)));
        assert_eq!(out, split_questions(&ds, 0.8, 11, Scope::All).unwrap());
    }

    #[test]
    fn split_is_reproducible_and_seed_sensitive() {
        let ds = ten_question_dataset();
        let a = split_questions(&ds, 0.5, 3, Scope::All).unwrap();
        let b = split_questions(&ds, 0.5, 3, Scope::All).unwrap();
        assert_eq!(a.splits, b.splits);
        let differs = (0..20u64).any(|s| {
            split_questions(&ds, 0.5, s, Scope::All).unwrap().splits[0].gen_ids
                != a.splits[0].gen_ids
        });
        assert!(differs);
    }

    #[test]
    fn empty_scope_skips_with_record() {
        let ds = ten_question_dataset();
        let out = split_questions(&ds, 0.8, 1, Scope::Behavioral).unwrap();
        assert_eq!(out.splits.len(), 1);
        assert_eq!(out.skipped.len(), 1);
        assert_eq!(out.skipped[0].respondent_id, "r2");
        assert_eq!(out.splits[0].gen_ids.len() + out.splits[0].eval_ids.len(), 4);
    }

    #[test]
    fn bad_ratio_rejected() {
        let ds = ten_question_dataset();
        assert!(split_questions(&ds, 1.0, 1, Scope::All).is_err());
        assert!(split_questions(&ds, 0.0, 1, Scope::All).is_err());
    }

    #[test]
    fn domain_split_and_partition() {
        let ds = ten_question_dataset();
        let p = ds.partition_by_domain();
        assert_eq!(p[&Domain::Attitude].len(), 6);
        assert_eq!(p[&Domain::Behavioral].len(), 4);
        let out = split_by_domain(&ds, Scope::Attitude, Scope::Behavioral, 0);
        assert_eq!(out.splits.len(), 1);
        assert_eq!(out.skipped.len(), 1);
        assert_eq!(out.splits[0].gen_ids.len(), 6);
        assert_eq!(out.splits[0].eval_ids.len(), 4);
    }

    #[test]
    fn non_demographic_scope() {
        let ds = SurveyDataset::new(
            "d",
            None,
            vec![
                q("age", &["<30", "30+"], Domain::Demographic),
                q("b1", &["Yes", "No"], Domain::Behavioral),
                q("o1", &["Yes", "No"], Domain::Other),
            ],
            vec![resp("r", &[("age", "30+"), ("b1", "No"), ("o1", "Yes")])],
        )
        .unwrap();
        let r = &ds.respondents[0];
        assert_eq!(ds.answered_in_scope(r, Scope::NonDemographic), ["b1", "o1"]);
        assert_eq!(ds.answered_in_scope(r, Scope::All).len(), 3);
    }

    #[test]
    fn partition_single_class() {
        let ds = SurveyDataset::new(
            "o",
            None,
            vec![q("a", &["x", "y"], Domain::Other), q("b", &["x", "y"], Domain::Other)],
            vec![resp("r", &[])],
        )
        .unwrap();
        let p = ds.partition_by_domain();
        assert_eq!(p.len(), 1);
        assert_eq!(p[&Domain::Other].len(), 2);
    }

    #[test]
    fn calibration_slice() {
        let ds = ten_question_dataset();
        let mut out = split_questions(&ds, 0.5, 5, Scope::All).unwrap();
        assign_calibration(&mut out.splits, 0.2, 2, 5);
        let s = &out.splits[0];
        assert_eq!(s.eval_ids.len(), 5);
        assert_eq!(s.calibration_ids.len(), 2);
        assert!(s.calibration_ids.iter().all(|c| s.eval_ids.contains(c)));
        assert_eq!(s.scored_ids().count(), 3);
    }
}
