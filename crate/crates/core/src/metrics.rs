//! Individual- and population-level fidelity metrics.
//!
//! Answers enter as numeric values `1..=m` (the position of the answer in
//! the question's ordered answer set). Per-question distances compare the
//! empirical pmf of true answers with that of simulated answers:
//!
//! * total variation distance: `½ Σ_a |P(a) − P̂(a)|`, reported alongside
//!   its complement `1 − TVD`;
//! * mean estimation error: `100 · |μ̂ − μ| / μ` (in percent);
//! * Wasserstein distance: `Σ_v |C(v) − Ĉ(v)|` over the CDFs.
//!
//! Macro averages are unweighted means over questions (population metrics)
//! or respondents (accuracy). Confidence intervals are percentile bootstrap
//! intervals that resample respondents for accuracy and questions for the
//! population metrics.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{QuestionSplit, SurveyDataset};
use crate::error::{Error, Result};
use crate::prediction::PredictionRecord;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerDistribution {
    pub question_id: String,
    /// Probability of numeric answer `k + 1` at index `k`.
    pub pmf: Vec<f64>,
    pub support_count: usize,
}

impl AnswerDistribution {
    pub fn support(&self) -> usize {
        self.pmf.len()
    }

    pub fn cdf(&self) -> Vec<f64> {
        self.pmf
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect()
    }
}

/// Empirical pmf of `values` over `1..=m`.
pub fn distribution(question_id: &str, values: &[usize], m: usize) -> Result<AnswerDistribution> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut counts = vec![0usize; m];
    for &v in values {
        if v == 0 || v > m {
            return Err(Error::OutOfSupport { value: v, m });
        }
        counts[v - 1] += 1;
    }
    let n = values.len() as f64;
    Ok(AnswerDistribution {
        question_id: question_id.to_string(),
        pmf: counts.into_iter().map(|c| c as f64 / n).collect(),
        support_count: values.len(),
    })
}

fn same_support(p: &AnswerDistribution, q: &AnswerDistribution) -> Result<()> {
    if p.support() != q.support() {
        return Err(Error::SupportMismatch(p.support(), q.support()));
    }
    Ok(())
}

pub fn tvd(p: &AnswerDistribution, q: &AnswerDistribution) -> Result<f64> {
    same_support(p, q)?;
    let d: f64 = p.pmf.iter().zip(&q.pmf).map(|(a, b)| (a - b).abs()).sum();
    Ok(0.5 * d)
}

pub fn wasserstein(p: &AnswerDistribution, q: &AnswerDistribution) -> Result<f64> {
    same_support(p, q)?;
    Ok(p.cdf()
        .iter()
        .zip(q.cdf())
        .map(|(a, b)| (a - b).abs())
        .sum())
}

/// Relative error of the predicted mean, in percent. Truth and prediction
/// samples may differ in size (cross-study transfer compares a persona
/// panel against a separate population).
pub fn mee(truth_values: &[usize], pred_values: &[usize]) -> Result<f64> {
    if truth_values.is_empty() || pred_values.is_empty() {
        return Err(Error::EmptySample);
    }
    let mu = mean_usize(truth_values);
    let mu_hat = mean_usize(pred_values);
    Ok(100.0 * (mu_hat - mu).abs() / mu)
}

fn mean_usize(xs: &[usize]) -> f64 {
    xs.iter().map(|&x| x as f64).sum::<f64>() / xs.len() as f64
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Fraction of correct predictions among scorable records (those with both
/// a parsed prediction and a truth).
pub fn individual_accuracy<'a>(records: impl IntoIterator<Item = &'a PredictionRecord>) -> Result<f64> {
    let (correct, scorable) = records
        .into_iter()
        .filter(|r| r.is_scorable())
        .fold((0usize, 0usize), |(c, n), r| (c + r.is_correct() as usize, n + 1));
    if scorable == 0 {
        return Err(Error::NoScorable);
    }
    Ok(correct as f64 / scorable as f64)
}

/// Unweighted mean of per-respondent accuracies.
pub fn macro_accuracy(accs: &[f64]) -> Result<f64> {
    if accs.is_empty() {
        return Err(Error::NoScorable);
    }
    Ok(mean(accs))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroAverage {
    pub value: f64,
    pub used: usize,
    pub skipped: usize,
}

/// Mean over questions whose value is defined; `None` entries are skipped
/// and counted.
pub fn macro_average(per_question: &BTreeMap<String, Option<f64>>) -> Result<MacroAverage> {
    let used: Vec<f64> = per_question.values().filter_map(|v| *v).collect();
    if used.is_empty() {
        return Err(Error::AllSkipped);
    }
    Ok(MacroAverage {
        value: mean(&used),
        used: used.len(),
        skipped: per_question.len() - used.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lo: f64,
    pub hi: f64,
}

impl ConfidenceInterval {
    /// Interval of `1 − x` given the interval of `x`.
    pub fn complement(self) -> Self {
        ConfidenceInterval {
            lo: 1.0 - self.hi,
            hi: 1.0 - self.lo,
        }
    }
}

fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap interval of `statistic` over resamples (with
/// replacement) of `units`.
pub fn bootstrap_ci<T: Copy>(
    units: &[T],
    statistic: impl Fn(&[T]) -> f64,
    n_resamples: usize,
    level: f64,
    seed: u64,
) -> Result<ConfidenceInterval> {
    if units.len() < 2 {
        return Err(Error::TooFewUnits(units.len()));
    }
    if !(level > 0.0 && level < 1.0) || n_resamples == 0 {
        return Err(Error::Config(format!(
            "bootstrap needs level in (0,1) and resamples > 0, got {level}, {n_resamples}"
        )));
    }
    let mut rng = seed::stream(seed, "bootstrap", "");
    let mut buf = Vec::with_capacity(units.len());
    let mut stats = Vec::with_capacity(n_resamples);
    for _ in 0..n_resamples {
        buf.clear();
        buf.extend((0..units.len()).map(|_| units[rng.random_range(0..units.len())]));
        stats.push(statistic(&buf));
    }
    stats.sort_by(|a, b| a.total_cmp(b));
    let alpha = 1.0 - level;
    Ok(ConfidenceInterval {
        lo: percentile_sorted(&stats, alpha / 2.0),
        hi: percentile_sorted(&stats, 1.0 - alpha / 2.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub n_resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            n_resamples: 1000,
            level: 0.95,
            seed: 0,
        }
    }
}

/// Numeric truth and prediction samples for one question.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionSample {
    pub question_id: String,
    pub support: usize,
    pub truth: Vec<usize>,
    pub predicted: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionMetrics {
    pub question_id: String,
    pub n_truth: usize,
    pub n_predicted: usize,
    pub tvd: Option<f64>,
    pub tv_complement: Option<f64>,
    pub mee: Option<f64>,
    pub wd: Option<f64>,
}

impl QuestionMetrics {
    pub fn skipped(&self) -> bool {
        self.tvd.is_none()
    }
}

pub fn question_metrics(sample: &QuestionSample) -> Result<QuestionMetrics> {
    let mut row = QuestionMetrics {
        question_id: sample.question_id.clone(),
        n_truth: sample.truth.len(),
        n_predicted: sample.predicted.len(),
        tvd: None,
        tv_complement: None,
        mee: None,
        wd: None,
    };
    if sample.truth.is_empty() || sample.predicted.is_empty() {
        return Ok(row);
    }
    let p = distribution(&sample.question_id, &sample.truth, sample.support)?;
    let q = distribution(&sample.question_id, &sample.predicted, sample.support)?;
    let d = tvd(&p, &q)?;
    row.tvd = Some(d);
    row.tv_complement = Some(1.0 - d);
    row.mee = Some(mee(&sample.truth, &sample.predicted)?);
    row.wd = Some(wasserstein(&p, &q)?);
    Ok(row)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RespondentAccuracy {
    pub respondent_id: String,
    pub accuracy: f64,
    pub correct: usize,
    pub scorable: usize,
    pub unscorable: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub acc_s: Option<f64>,
    pub tvd_s: Option<f64>,
    pub tv_complement_s: Option<f64>,
    pub mee_s: Option<f64>,
    pub wd_s: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricIntervals {
    pub acc_s: Option<ConfidenceInterval>,
    pub tvd_s: Option<ConfidenceInterval>,
    pub tv_complement_s: Option<ConfidenceInterval>,
    pub mee_s: Option<ConfidenceInterval>,
    pub wd_s: Option<ConfidenceInterval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub label: String,
    pub per_question: Vec<QuestionMetrics>,
    pub per_respondent: Vec<RespondentAccuracy>,
    #[serde(rename = "macro")]
    pub macro_metrics: MacroMetrics,
    pub intervals: MetricIntervals,
    pub skipped_questions: usize,
    pub predictions: usize,
    pub parse_failures: usize,
    pub parse_failure_rate: f64,
    pub options: ReportOptions,
}

struct Tally {
    correct: usize,
    scorable: usize,
    unscorable: usize,
}

fn ci_or_none(
    units: &[f64],
    opts: &ReportOptions,
    label: &str,
    metric: &str,
) -> Result<Option<ConfidenceInterval>> {
    if units.len() < 2 {
        return Ok(None);
    }
    let s = seed::derive(opts.seed, label, metric);
    bootstrap_ci(units, mean, opts.n_resamples, opts.level, s).map(Some)
}

/// Builds a report from per-question samples and per-respondent accuracies.
pub fn assemble_report(
    label: &str,
    samples: &[QuestionSample],
    per_respondent: Vec<RespondentAccuracy>,
    predictions: usize,
    parse_failures: usize,
    opts: &ReportOptions,
) -> Result<FidelityReport> {
    let per_question = samples
        .iter()
        .map(question_metrics)
        .collect::<Result<Vec<_>>>()?;
    let used: Vec<&QuestionMetrics> = per_question.iter().filter(|q| !q.skipped()).collect();
    let tvds: Vec<f64> = used.iter().filter_map(|q| q.tvd).collect();
    let mees: Vec<f64> = used.iter().filter_map(|q| q.mee).collect();
    let wds: Vec<f64> = used.iter().filter_map(|q| q.wd).collect();
    let accs: Vec<f64> = per_respondent.iter().map(|r| r.accuracy).collect();

    let some_mean = |xs: &[f64]| (!xs.is_empty()).then(|| mean(xs));
    let tvd_s = some_mean(&tvds);
    let macro_metrics = MacroMetrics {
        acc_s: some_mean(&accs),
        tvd_s,
        tv_complement_s: tvd_s.map(|t| 1.0 - t),
        mee_s: some_mean(&mees),
        wd_s: some_mean(&wds),
    };
    let tvd_ci = ci_or_none(&tvds, opts, label, "tvd_s")?;
    let intervals = MetricIntervals {
        acc_s: ci_or_none(&accs, opts, label, "acc_s")?,
        tvd_s: tvd_ci,
        tv_complement_s: tvd_ci.map(ConfidenceInterval::complement),
        mee_s: ci_or_none(&mees, opts, label, "mee_s")?,
        wd_s: ci_or_none(&wds, opts, label, "wd_s")?,
    };
    Ok(FidelityReport {
        label: label.to_string(),
        skipped_questions: per_question.len() - used.len(),
        per_question,
        per_respondent,
        macro_metrics,
        intervals,
        predictions,
        parse_failures,
        parse_failure_rate: if predictions == 0 {
            0.0
        } else {
            parse_failures as f64 / predictions as f64
        },
        options: *opts,
    })
}

/// Population report for per-respondent random splits: each evaluation
/// question is aggregated over exactly the respondents whose scored set
/// contains it. Records outside the scored sets (generation or calibration
/// questions) are ignored. Respondents whose prediction failed to parse are
/// left out of both distributions for that question.
pub fn population_report_random_split(
    label: &str,
    records: &[PredictionRecord],
    splits: &[QuestionSplit],
    ds: &SurveyDataset,
    opts: &ReportOptions,
) -> Result<FidelityReport> {
    let scored: HashSet<(&str, &str)> = splits
        .iter()
        .flat_map(|s| {
            s.scored_ids()
                .map(move |q| (s.respondent_id.as_str(), q.as_str()))
        })
        .collect();
    let mut questions: Vec<&str> = scored.iter().map(|(_, q)| *q).collect();
    questions.sort_by_key(|q| ds.column(q).unwrap_or(usize::MAX));
    questions.dedup();

    let mut by_question: HashMap<&str, (Vec<usize>, Vec<usize>)> = HashMap::new();
    let mut tallies: BTreeMap<&str, Tally> = BTreeMap::new();
    let mut predictions = 0;
    let mut parse_failures = 0;
    for r in records {
        if !scored.contains(&(r.respondent_id.as_str(), r.question_id.as_str())) {
            continue;
        }
        let q = ds
            .question(&r.question_id)
            .ok_or_else(|| Error::Schema(format!("record for unknown question `{}`", r.question_id)))?;
        predictions += 1;
        let t = tallies.entry(r.respondent_id.as_str()).or_insert(Tally {
            correct: 0,
            scorable: 0,
            unscorable: 0,
        });
        match (&r.predicted, &r.truth) {
            (Some(p), Some(truth)) => {
                t.scorable += 1;
                t.correct += (p == truth) as usize;
                let e = by_question.entry(q.id.as_str()).or_default();
                e.0.push(q.answer_to_numeric(truth)?);
                e.1.push(q.answer_to_numeric(p)?);
            }
            (None, _) => {
                t.unscorable += 1;
                parse_failures += 1;
            }
            (Some(_), None) => {}
        }
    }

    let samples: Vec<QuestionSample> = questions
        .iter()
        .map(|qid| {
            let q = ds.question(qid).expect("split ids come from the dataset");
            let (truth, predicted) = by_question.remove(qid).unwrap_or_default();
            QuestionSample {
                question_id: q.id.clone(),
                support: q.support(),
                truth,
                predicted,
            }
        })
        .collect();

    let mut respondent_order: Vec<&str> = tallies.keys().copied().collect();
    respondent_order.sort_by_key(|id| {
        ds.respondents
            .iter()
            .position(|r| r.respondent_id == *id)
            .unwrap_or(usize::MAX)
    });
    let per_respondent = respondent_order
        .into_iter()
        .filter_map(|id| {
            let t = &tallies[id];
            (t.scorable > 0).then(|| RespondentAccuracy {
                respondent_id: id.to_string(),
                accuracy: t.correct as f64 / t.scorable as f64,
                correct: t.correct,
                scorable: t.scorable,
                unscorable: t.unscorable,
            })
        })
        .collect();
    assemble_report(label, &samples, per_respondent, predictions, parse_failures, opts)
}

/// Population report for transfer to another study: each target question's
/// predicted distribution (pooled over the persona panel) is compared with
/// the target population's true distribution. There is no individual
/// accuracy.
pub fn population_report_transfer(
    label: &str,
    records: &[PredictionRecord],
    target: &SurveyDataset,
    question_ids: &[String],
    opts: &ReportOptions,
) -> Result<FidelityReport> {
    let mut predictions = 0;
    let mut parse_failures = 0;
    let mut predicted: HashMap<&str, Vec<usize>> = HashMap::new();
    for r in records {
        let Some(q) = target.question(&r.question_id) else {
            continue;
        };
        predictions += 1;
        match &r.predicted {
            Some(p) => predicted.entry(q.id.as_str()).or_default().push(q.answer_to_numeric(p)?),
            None => parse_failures += 1,
        }
    }
    let samples = target
        .questions_ordered(question_ids)
        .into_iter()
        .map(|q| {
            let truth = target
                .respondents
                .iter()
                .filter_map(|r| r.answer(&q.id))
                .map(|a| q.answer_to_numeric(a))
                .collect::<Result<Vec<_>>>()?;
            Ok(QuestionSample {
                question_id: q.id.clone(),
                support: q.support(),
                truth,
                predicted: predicted.remove(q.id.as_str()).unwrap_or_default(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    assemble_report(label, &samples, Vec::new(), predictions, parse_failures, opts)
}
