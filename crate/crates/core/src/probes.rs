//! The two probing protocols: keyword-manipulation superiority probing and
//! circular-shift stability probing.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{substitute_cue, Dataset};
use crate::error::{Error, Result};
use crate::report::{boxplot_summary, BoxplotSummary, P_DISPLAY_FLOOR};
use crate::scoring::{
    clip_score, generic_text_variant, EmbeddingProvider, EmbeddingRequest, TEXT_VARIANT_ORIG,
};
use crate::stats::{
    shapiro_wilk, stability_bound, stability_test, superiority_test, Decision, StabilityBound,
    TestResult, EXACT_CUTOFF, QUARTILE_METHOD,
};
use crate::transforms::{shift_schedule, shift_variant, VARIANT_FLIP, VARIANT_ORIG};

pub const DEFAULT_ALPHA: f64 = 0.01;
pub const DEFAULT_DIVISIONS: u32 = 8;
pub const DEFAULT_GENERIC_CUES: [&str; 4] = ["", "image, ", "photo, ", "picture, "];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub alpha: f64,
    pub divisions: u32,
    /// When set, prompts are re-split against this cue before probing.
    pub format_cue: Option<String>,
    pub generic_cues: Vec<String>,
    pub bound_override: Option<f64>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            alpha: DEFAULT_ALPHA,
            divisions: DEFAULT_DIVISIONS,
            format_cue: None,
            generic_cues: DEFAULT_GENERIC_CUES.iter().map(|s| s.to_string()).collect(),
            bound_override: None,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::validation(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.divisions < 2 {
            return Err(Error::validation(format!(
                "divisions must be at least 2, got {}",
                self.divisions
            )));
        }
        if let Some(b) = self.bound_override {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::validation(format!("bound override must be positive, got {b}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    Textual,
    Visual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Comprehends,
    DoesNotComprehend,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Comprehends => "comprehends",
            Verdict::DoesNotComprehend => "does_not_comprehend",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Reject,
    FailToReject,
    /// Every difference was zero; the test could not be run.
    NoEvidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundSource {
    Flip,
    Override,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generic_cue: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<u32>,
    pub test: Option<TestResult>,
    pub outcome: Outcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityCheck {
    pub condition: String,
    pub result: Option<TestResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Conventions that shaped the numbers in a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub zero_handling: String,
    pub tie_handling: String,
    pub exact_cutoff: usize,
    pub quartile_method: String,
    pub p_display_floor: f64,
    pub p_underflow: String,
    pub normality_gate: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub divisions: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound_source: Option<BoundSource>,
    pub format_cue: String,
}

impl ReportMetadata {
    fn new(format_cue: &str) -> Self {
        ReportMetadata {
            zero_handling: "zero differences discarded before ranking".into(),
            tie_handling: "average ranks; tie-corrected variance in the normal approximation".into(),
            exact_cutoff: EXACT_CUTOFF,
            quartile_method: QUARTILE_METHOD.into(),
            p_display_floor: P_DISPLAY_FLOOR,
            p_underflow: "normal-approximation tails below the smallest positive f64 are reported as 0".into(),
            normality_gate: "advisory; the Wilcoxon test always runs".into(),
            width: None,
            divisions: None,
            bound_source: None,
            format_cue: format_cue.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub probe_kind: ProbeKind,
    pub dataset: String,
    pub pairs: usize,
    pub provider: String,
    pub alpha: f64,
    /// Bound used by every stability test (visual probes only).
    pub beta: Option<f64>,
    /// Quartile evidence when the bound was derived from flips.
    pub bound: Option<StabilityBound>,
    pub per_condition: Vec<ConditionResult>,
    pub verdict: Verdict,
    pub normality: Vec<NormalityCheck>,
    pub distributions: Vec<BoxplotSummary>,
    pub metadata: ReportMetadata,
}

impl ProbeReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|source| Error::Json {
            context: "parsing probe report".into(),
            source,
        })
    }
}

/// All conditions must reject for a positive verdict.
fn verdict(rows: &[ConditionResult]) -> Verdict {
    if rows.is_empty() {
        return Verdict::Inconclusive;
    }
    if rows.iter().any(|r| r.outcome == Outcome::FailToReject) {
        Verdict::DoesNotComprehend
    } else if rows.iter().any(|r| r.outcome == Outcome::NoEvidence) {
        Verdict::Inconclusive
    } else {
        Verdict::Comprehends
    }
}

fn decided(label: String, outcome: Result<Decision>) -> Result<ConditionResult> {
    let row = ConditionResult {
        label,
        generic_cue: None,
        delta: None,
        test: None,
        outcome: Outcome::NoEvidence,
        note: None,
    };
    match outcome {
        Ok(d) => Ok(ConditionResult {
            outcome: if d.reject { Outcome::Reject } else { Outcome::FailToReject },
            test: Some(d.result),
            ..row
        }),
        Err(Error::Degenerate(msg)) => Ok(ConditionResult {
            note: Some(msg),
            ..row
        }),
        Err(e) => Err(e),
    }
}

fn normality(condition: &str, diffs: &[f64]) -> NormalityCheck {
    match shapiro_wilk(diffs) {
        Ok(r) => NormalityCheck {
            condition: condition.to_string(),
            result: Some(r),
            note: None,
        },
        Err(e) => NormalityCheck {
            condition: condition.to_string(),
            result: None,
            note: Some(e.to_string()),
        },
    }
}

fn scores(images: &[Vec<f64>], texts: &[Vec<f64>]) -> Result<Vec<f64>> {
    images
        .iter()
        .zip(texts)
        .map(|(i, t)| clip_score(i, t).map(|s| s.value()))
        .collect()
}

fn prepared(dataset: &Dataset, config: &ProbeConfig) -> Result<Dataset> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::validation("dataset has no pairs"));
    }
    Ok(match &config.format_cue {
        Some(cue) => dataset.redecompose(cue),
        None => dataset.clone(),
    })
}

fn generic_label(cue: &str) -> String {
    format!("U*={cue:?}")
}

/// Keyword-manipulation probe: for each generic cue, test whether original
/// prompts score higher than their generic counterparts.
pub fn probe_textual(
    dataset: &Dataset,
    provider: &dyn EmbeddingProvider,
    config: &ProbeConfig,
) -> Result<ProbeReport> {
    let dataset = prepared(dataset, config)?;
    let pairs = &dataset.pairs;

    let image_reqs: Vec<_> = pairs
        .iter()
        .map(|p| EmbeddingRequest::image(&p.id, VARIANT_ORIG))
        .collect();
    let text_reqs: Vec<_> = pairs
        .iter()
        .map(|p| EmbeddingRequest::text(&p.id, TEXT_VARIANT_ORIG, &p.prompt))
        .collect();
    let images = provider.fetch_many(&image_reqs)?;
    let original = scores(&images, &provider.fetch_many(&text_reqs)?)?;

    let mut per_condition = Vec::new();
    let mut normality_checks = Vec::new();
    let mut distributions = vec![boxplot_summary(&original, "s")?];
    for cue in &config.generic_cues {
        let variant = generic_text_variant(cue);
        let reqs: Vec<_> = pairs
            .iter()
            .map(|p| EmbeddingRequest::text(&p.id, &variant, &substitute_cue(p, cue).text))
            .collect();
        let generic = scores(&images, &provider.fetch_many(&reqs)?)?;
        let label = generic_label(cue);
        let diffs: Vec<f64> = original.iter().zip(&generic).map(|(s, u)| s - u).collect();
        normality_checks.push(normality(&label, &diffs));
        distributions.push(boxplot_summary(&generic, format!("s^u[{label}]"))?);
        let mut row = decided(label, superiority_test(&original, &generic, config.alpha))?;
        row.generic_cue = Some(cue.clone());
        log::info!("textual {}: {:?}", row.label, row.outcome);
        per_condition.push(row);
    }

    Ok(ProbeReport {
        probe_kind: ProbeKind::Textual,
        dataset: dataset.name.clone(),
        pairs: pairs.len(),
        provider: provider.describe(),
        alpha: config.alpha,
        beta: None,
        bound: None,
        verdict: verdict(&per_condition),
        per_condition,
        normality: normality_checks,
        distributions,
        metadata: ReportMetadata::new(&dataset.format_cue),
    })
}

/// Circular-shift probe: derive the bound from flip differences (or take the
/// override) and test stability at every scheduled shift.
pub fn probe_visual(
    dataset: &Dataset,
    provider: &dyn EmbeddingProvider,
    config: &ProbeConfig,
) -> Result<ProbeReport> {
    let dataset = prepared(dataset, config)?;
    let pairs = &dataset.pairs;
    let schedule = shift_schedule(dataset.width, config.divisions)?;

    let image_scores = |variant: &str, texts: &[Vec<f64>]| -> Result<Vec<f64>> {
        let reqs: Vec<_> = pairs
            .iter()
            .map(|p| EmbeddingRequest::image(&p.id, variant))
            .collect();
        scores(&provider.fetch_many(&reqs)?, texts)
    };
    let text_reqs: Vec<_> = pairs
        .iter()
        .map(|p| EmbeddingRequest::text(&p.id, TEXT_VARIANT_ORIG, &p.prompt))
        .collect();
    let texts = provider.fetch_many(&text_reqs)?;
    let original = image_scores(VARIANT_ORIG, &texts)?;
    let mut distributions = vec![boxplot_summary(&original, "s")?];

    let (bound, source) = match config.bound_override {
        Some(beta) => (
            StabilityBound {
                beta,
                q1: f64::NAN,
                q3: f64::NAN,
                iqr: f64::NAN,
                sample_size: 0,
            },
            BoundSource::Override,
        ),
        None => {
            let flipped = image_scores(VARIANT_FLIP, &texts)?;
            let flip_diffs: Vec<f64> = original
                .iter()
                .zip(&flipped)
                .map(|(s, f)| (s - f).abs())
                .collect();
            distributions.push(boxplot_summary(&flip_diffs, "|s-s^flip|")?);
            let bound = stability_bound(&flip_diffs)?;
            if !(bound.beta > 0.0) {
                return Err(Error::ZeroBound);
            }
            (bound, BoundSource::Flip)
        }
    };

    let mut per_condition = Vec::new();
    let mut normality_checks = Vec::new();
    for (j, &delta) in schedule.magnitudes.iter().enumerate() {
        let label = schedule.label(j + 1);
        let shifted = image_scores(&shift_variant(delta), &texts)?;
        let diffs: Vec<f64> = original.iter().zip(&shifted).map(|(s, d)| s - d).collect();
        normality_checks.push(normality(&label, &diffs));
        distributions.push(boxplot_summary(&shifted, format!("s^δ[{label}]"))?);
        let mut row = decided(label, stability_test(&original, &shifted, &bound, config.alpha))?;
        row.delta = Some(delta);
        log::info!("visual {} (δ={delta}): {:?}", row.label, row.outcome);
        per_condition.push(row);
    }

    let mut metadata = ReportMetadata::new(&dataset.format_cue);
    metadata.width = Some(dataset.width);
    metadata.divisions = Some(config.divisions);
    metadata.bound_source = Some(source);
    Ok(ProbeReport {
        probe_kind: ProbeKind::Visual,
        dataset: dataset.name.clone(),
        pairs: pairs.len(),
        provider: provider.describe(),
        alpha: config.alpha,
        beta: Some(bound.beta),
        bound: (source == BoundSource::Flip).then_some(bound),
        verdict: verdict(&per_condition),
        per_condition,
        normality: normality_checks,
        distributions,
        metadata,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionFlip {
    pub condition: String,
    pub before: Outcome,
    pub after: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionChange {
    pub label: String,
    pub before: BoxplotSummary,
    pub after: BoxplotSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDelta {
    pub probe_kind: ProbeKind,
    pub verdict_before: Verdict,
    pub verdict_after: Verdict,
    pub flips: Vec<DecisionFlip>,
    pub distributions: Vec<DistributionChange>,
}

impl ReportDelta {
    /// True when no condition changed its decision.
    pub fn is_empty(&self) -> bool {
        self.flips.is_empty()
    }
}

pub fn compare_reports(before: &ProbeReport, after: &ProbeReport) -> Result<ReportDelta> {
    if before.probe_kind != after.probe_kind {
        return Err(Error::validation(format!(
            "cannot compare a {:?} report with a {:?} report",
            before.probe_kind, after.probe_kind
        )));
    }
    let labels = |r: &ProbeReport| -> BTreeSet<String> {
        r.per_condition.iter().map(|c| c.label.clone()).collect()
    };
    if labels(before) != labels(after) {
        return Err(Error::validation(format!(
            "condition sets differ: {:?} vs {:?}",
            labels(before),
            labels(after)
        )));
    }
    let flips = before
        .per_condition
        .iter()
        .filter_map(|b| {
            let a = after.per_condition.iter().find(|a| a.label == b.label)?;
            (a.outcome != b.outcome).then(|| DecisionFlip {
                condition: b.label.clone(),
                before: b.outcome,
                after: a.outcome,
            })
        })
        .collect();
    let distributions = before
        .distributions
        .iter()
        .filter_map(|b| {
            let a = after.distributions.iter().find(|a| a.label == b.label)?;
            Some(DistributionChange {
                label: b.label.clone(),
                before: b.clone(),
                after: a.clone(),
            })
        })
        .collect();
    Ok(ReportDelta {
        probe_kind: before.probe_kind,
        verdict_before: before.verdict,
        verdict_after: after.verdict,
        flips,
        distributions,
    })
}
