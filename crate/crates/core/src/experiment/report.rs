use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::evaluate::RunSummary;
use crate::error::{Error, Result};
use crate::metrics::{ConfidenceInterval, FidelityReport};
use crate::records::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Table,
    Plot,
    Both,
}

fn f6(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

fn ci_cols(ci: Option<ConfidenceInterval>) -> [String; 2] {
    [f6(ci.map(|c| c.lo)), f6(ci.map(|c| c.hi))]
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    };
    w.write_record(header).map_err(to_err)?;
    for r in rows {
        w.write_record(&r).map_err(to_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    write_atomic(path, &bytes)
}

fn respondents(r: &FidelityReport) -> usize {
    r.per_respondent.len()
}

fn summary_rows(s: &RunSummary) -> Vec<Vec<String>> {
    s.reports
        .iter()
        .map(|r| {
            let m = &r.macro_metrics;
            let i = &r.intervals;
            let mut row = vec![
                r.label.clone(),
                respondents(r).to_string(),
                (r.per_question.len() - r.skipped_questions).to_string(),
            ];
            for (v, ci) in [
                (m.acc_s, i.acc_s),
                (m.tv_complement_s, i.tv_complement_s),
                (m.mee_s, i.mee_s),
                (m.wd_s, i.wd_s),
            ] {
                row.push(f6(v));
                row.extend(ci_cols(ci));
            }
            row.push(r.skipped_questions.to_string());
            row.push(f6(Some(r.parse_failure_rate)));
            row
        })
        .collect()
}

/// Writes `tables/*.csv` and/or `plots/*.svg` under `dir`.
pub fn emit_report(s: &RunSummary, dir: &Path, format: ReportFormat) -> Result<()> {
    if matches!(format, ReportFormat::Table | ReportFormat::Both) {
        let t = dir.join("tables");
        write_csv(
            &t.join("summary.csv"),
            &[
                "label",
                "respondents",
                "questions",
                "acc_s",
                "acc_s_lo",
                "acc_s_hi",
                "tv_complement_s",
                "tv_complement_s_lo",
                "tv_complement_s_hi",
                "mee_s",
                "mee_s_lo",
                "mee_s_hi",
                "wd_s",
                "wd_s_lo",
                "wd_s_hi",
                "skipped_questions",
                "parse_failure_rate",
            ],
            summary_rows(s),
        )?;
        let per_q = s
            .reports
            .iter()
            .flat_map(|r| {
                r.per_question.iter().map(|q| {
                    vec![
                        r.label.clone(),
                        q.question_id.clone(),
                        q.n_truth.to_string(),
                        q.n_predicted.to_string(),
                        f6(q.tvd),
                        f6(q.tv_complement),
                        f6(q.mee),
                        f6(q.wd),
                    ]
                })
            })
            .collect();
        write_csv(
            &t.join("per_question.csv"),
            &["label", "question_id", "n_truth", "n_predicted", "tvd", "tv_complement", "mee", "wd"],
            per_q,
        )?;
        if !s.tokens.is_empty() {
            write_csv(
                &t.join("tokens.csv"),
                &["arm", "template", "respondents", "Raw", "Narrative", "%Reduction", "tokenizer"],
                s.tokens
                    .iter()
                    .map(|r| {
                        vec![
                            r.arm.clone(),
                            r.template.to_string(),
                            r.respondents.to_string(),
                            format!("{:.2}", r.raw),
                            format!("{:.2}", r.narrative),
                            format!("{:.2}", r.reduction_pct),
                            r.tokenizer.clone(),
                        ]
                    })
                    .collect(),
            )?;
        }
        if !s.best_template.is_empty() {
            write_csv(
                &t.join("best_template.csv"),
                &["arm", "template", "count", "fraction"],
                s.best_template
                    .iter()
                    .map(|r| vec![r.arm.clone(), r.template.to_string(), r.count.to_string(), f6(Some(r.fraction))])
                    .collect(),
            )?;
        }
        if !s.sweep.is_empty() {
            write_csv(
                &t.join("sweep.csv"),
                &["iterations", "label", "acc_s", "tv_complement_s", "mee_s", "wd_s"],
                s.sweep
                    .iter()
                    .map(|r| {
                        vec![
                            r.iterations.to_string(),
                            r.label.clone(),
                            f6(r.acc_s),
                            f6(r.tv_complement_s),
                            f6(r.mee_s),
                            f6(r.wd_s),
                        ]
                    })
                    .collect(),
            )?;
        }
    }
    if matches!(format, ReportFormat::Plot | ReportFormat::Both) {
        let p = dir.join("plots");
        type Pick = fn(&FidelityReport) -> (Option<f64>, Option<ConfidenceInterval>);
        let charts: [(&str, &str, Option<f64>, Pick); 4] = [
            ("accuracy", "Individual accuracy", Some(1.0), |r| {
                (r.macro_metrics.acc_s, r.intervals.acc_s)
            }),
            ("tv_complement", "1 - TVD", Some(1.0), |r| {
                (r.macro_metrics.tv_complement_s, r.intervals.tv_complement_s)
            }),
            ("mee", "Mean estimation error (%)", None, |r| (r.macro_metrics.mee_s, r.intervals.mee_s)),
            ("wd", "Wasserstein distance", None, |r| (r.macro_metrics.wd_s, r.intervals.wd_s)),
        ];
        for (file, title, y_max, pick) in charts {
            let bars: Vec<Bar> = s
                .reports
                .iter()
                .filter_map(|r| {
                    let (v, ci) = pick(r);
                    v.map(|value| Bar {
                        label: r.label.clone(),
                        value,
                        ci,
                    })
                })
                .collect();
            if !bars.is_empty() {
                write_atomic(&p.join(format!("{file}.svg")), bar_chart_svg(title, &bars, y_max).as_bytes())?;
            }
        }
        if !s.best_template.is_empty() {
            let bars: Vec<Bar> = s
                .best_template
                .iter()
                .map(|r| Bar {
                    label: format!("{}/{}", r.arm, r.template),
                    value: r.fraction,
                    ci: None,
                })
                .collect();
            write_atomic(
                &p.join("best_template.svg"),
                bar_chart_svg("Share of respondents per best template", &bars, Some(1.0)).as_bytes(),
            )?;
        }
        if !s.sweep.is_empty() {
            let bars: Vec<Bar> = s
                .sweep
                .iter()
                .filter_map(|r| {
                    r.tv_complement_s.map(|value| Bar {
                        label: format!("I={}", r.iterations),
                        value,
                        ci: None,
                    })
                })
                .collect();
            write_atomic(
                &p.join("sweep.svg"),
                bar_chart_svg("1 - TVD by iteration budget", &bars, Some(1.0)).as_bytes(),
            )?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bar {
    pub label: String,
    pub value: f64,
    pub ci: Option<ConfidenceInterval>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Static bar chart with optional confidence whiskers.
pub fn bar_chart_svg(title: &str, bars: &[Bar], y_max: Option<f64>) -> String {
    const LEFT: f64 = 60.0;
    const TOP: f64 = 40.0;
    const PLOT_H: f64 = 240.0;
    const SLOT: f64 = 70.0;
    const BOTTOM: f64 = 140.0;
    let width = LEFT + SLOT * bars.len().max(1) as f64 + 20.0;
    let height = TOP + PLOT_H + BOTTOM;
    let top_value = y_max.unwrap_or_else(|| {
        bars.iter()
            .map(|b| b.ci.map_or(b.value, |c| c.hi.max(b.value)))
            .fold(0.0, f64::max)
            .max(1e-9)
            * 1.1
    });
    let y = |v: f64| TOP + PLOT_H * (1.0 - (v / top_value).clamp(0.0, 1.0));
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        width / 2.0,
        escape(title)
    );
    for k in 0..=4 {
        let v = top_value * k as f64 / 4.0;
        let _ = writeln!(
            svg,
            "<line x1=\"{LEFT}\" x2=\"{:.1}\" y1=\"{:.1}\" y2=\"{:.1}\" stroke=\"#ddd\"/><text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{v:.2}</text>",
            width - 20.0,
            y(v),
            y(v),
            LEFT - 6.0,
            y(v) + 4.0
        );
    }
    for (i, b) in bars.iter().enumerate() {
        let x = LEFT + SLOT * i as f64 + 12.0;
        let w = SLOT - 24.0;
        let _ = writeln!(
            svg,
            "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"{w:.1}\" height=\"{:.1}\" fill=\"#4c78a8\"/>",
            y(b.value),
            TOP + PLOT_H - y(b.value)
        );
        let cx = x + w / 2.0;
        if let Some(ci) = b.ci {
            let (lo, hi) = (y(ci.lo), y(ci.hi));
            let _ = writeln!(
                svg,
                "<path d=\"M{:.1},{hi:.1}H{:.1}M{cx:.1},{hi:.1}V{lo:.1}M{:.1},{lo:.1}H{:.1}\" stroke=\"#222\" fill=\"none\"/>",
                cx - 6.0,
                cx + 6.0,
                cx - 6.0,
                cx + 6.0
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{:.3}</text>"#,
            y(b.value) - 4.0,
            b.value
        );
        let ly = TOP + PLOT_H + 12.0;
        let _ = writeln!(
            svg,
            r#"<text x="{cx:.1}" y="{ly:.1}" text-anchor="end" transform="rotate(-40 {cx:.1} {ly:.1})">{}</text>"#,
            escape(&b.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
