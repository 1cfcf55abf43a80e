//! Table rendering and boxplot-ready summaries.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::probes::{Outcome, ProbeKind, ProbeReport};
use crate::stats::{quantile_sorted, sorted_copy, TUKEY_K};

/// p-values below this display as `0`.
pub const P_DISPLAY_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Csv,
    Markdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotSummary {
    pub label: String,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub lower_fence: f64,
    pub upper_fence: f64,
    pub outliers: Vec<f64>,
    pub n: usize,
}

pub fn boxplot_summary(values: &[f64], label: impl Into<String>) -> Result<BoxplotSummary> {
    let sorted = sorted_copy(values)?;
    let q1 = quantile_sorted(&sorted, 0.25);
    let median = quantile_sorted(&sorted, 0.5);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let lower_fence = q1 - TUKEY_K * iqr;
    let upper_fence = q3 + TUKEY_K * iqr;
    let outliers = sorted
        .iter()
        .copied()
        .filter(|&v| v < lower_fence || v > upper_fence)
        .collect();
    Ok(BoxplotSummary {
        label: label.into(),
        q1,
        median,
        q3,
        lower_fence,
        upper_fence,
        outliers,
        n: sorted.len(),
    })
}

pub fn format_statistic(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.0}")
    } else {
        format!("{v}")
    }
}

pub fn format_p(p: f64) -> String {
    if p < P_DISPLAY_FLOOR {
        "0".to_string()
    } else {
        format!("{p:.4}")
    }
}

pub fn format_beta(beta: f64) -> String {
    format!("{beta:.4}")
}

fn outcome_label(outcome: Outcome) -> &'static str {
    match outcome {
        Outcome::Reject => "reject",
        Outcome::FailToReject => "fail_to_reject",
        Outcome::NoEvidence => "no_evidence",
    }
}

struct Row {
    beta: Option<String>,
    condition: String,
    statistic: String,
    p: String,
    p_raw: String,
    decision: &'static str,
}

fn rows(report: &ProbeReport) -> Vec<Row> {
    let beta = report.beta.map(format_beta);
    report
        .per_condition
        .iter()
        .map(|c| {
            let (statistic, p, p_raw) = match &c.test {
                Some(t) => (format_statistic(t.statistic), format_p(t.p_value), format!("{:e}", t.p_value)),
                None => ("-".into(), "-".into(), "-".into()),
            };
            Row {
                beta: beta.clone(),
                condition: c.label.clone(),
                statistic,
                p,
                p_raw,
                decision: outcome_label(c.outcome),
            }
        })
        .collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Renders one row per condition. Visual reports lead with the bound.
pub fn render_table(report: &ProbeReport, format: TableFormat) -> String {
    let visual = report.probe_kind == ProbeKind::Visual;
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            let kind = if visual { "visual" } else { "textual" };
            let _ = writeln!(out, "# probe={kind} alpha={} verdict={}", report.alpha, report.verdict);
            let cols = if visual {
                "beta,condition,statistic,p_value,decision,p_value_raw"
            } else {
                "condition,statistic,p_value,decision,p_value_raw"
            };
            let _ = writeln!(out, "# columns: {cols}");
            let _ = writeln!(out, "# p_value is display-clamped to 0 below {P_DISPLAY_FLOOR:e}; p_value_raw is unclamped");
            let _ = writeln!(out, "{cols}");
            for r in rows(report) {
                if let Some(b) = &r.beta {
                    let _ = write!(out, "{b},");
                }
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    csv_field(&r.condition),
                    r.statistic,
                    r.p,
                    r.decision,
                    r.p_raw
                );
            }
        }
        TableFormat::Markdown => {
            if visual {
                out.push_str("| β | δ_j | stat. | p | decision |\n|---|---|---|---|---|\n");
            } else {
                out.push_str("| U* | stat. | p | decision |\n|---|---|---|---|\n");
            }
            for r in rows(report) {
                if let Some(b) = &r.beta {
                    let _ = write!(out, "| {b} ");
                }
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} |",
                    r.condition.replace('|', "\\|"),
                    r.statistic,
                    r.p,
                    r.decision
                );
            }
        }
    }
    out
}
