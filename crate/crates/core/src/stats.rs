//! One-sided Wilcoxon signed-rank tests, the Shapiro-Wilk W test (Royston's
//! AS R94), linear-interpolation quartiles and the Tukey upper-fence bound.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest effective sample for which the exact null distribution is used.
pub const EXACT_CUTOFF: usize = 25;

/// Largest sample for which an exact distribution may be requested explicitly.
pub const EXACT_LIMIT: usize = 400;

/// Interpolation rule used for quartiles, recorded in report metadata.
pub const QUARTILE_METHOD: &str = "linear (position p*(n-1))";

pub const TUKEY_K: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    Greater,
    Less,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    NormalApprox,
    /// Shapiro-Wilk W with Royston's normalizing transformation.
    RoystonW,
}

/// How the Wilcoxon null distribution is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodChoice {
    /// Exact when `n_effective <= 25` and there are no ties, else normal.
    Auto,
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n_effective: usize,
    pub alternative: Option<Alternative>,
    pub method: Method,
}

/// A test result together with its decision at a significance level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub result: TestResult,
    pub alpha: f64,
    pub reject: bool,
}

impl Decision {
    fn at(result: TestResult, alpha: f64) -> Self {
        let reject = result.p_value < alpha;
        Decision {
            result,
            alpha,
            reject,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityBound {
    pub beta: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub sample_size: usize,
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Average ranks (1-based) of `values`, plus the sizes of tie groups.
fn average_ranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j share ranks i+1..=j
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

/// Null distribution of W+ over doubled ranks: `probs[s]` is the probability
/// that the doubled positive-rank sum equals `s`.
fn signed_rank_distribution(doubled_ranks: &[usize]) -> Vec<f64> {
    let total: usize = doubled_ranks.iter().sum();
    let mut probs = vec![0.0; total + 1];
    probs[0] = 1.0;
    let mut reach = 0;
    for &r in doubled_ranks {
        reach += r;
        for s in (0..=reach).rev() {
            let keep = probs[s] * 0.5;
            let add = if s >= r { probs[s - r] * 0.5 } else { 0.0 };
            probs[s] = keep + add;
        }
    }
    probs
}

fn exact_p(ranks: &[f64], w_plus: f64, alternative: Alternative) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let target = (2.0 * w_plus).round() as usize;
    let probs = signed_rank_distribution(&doubled);
    let p: f64 = match alternative {
        Alternative::Greater => probs[target..].iter().sum(),
        Alternative::Less => probs[..=target].iter().sum(),
    };
    p.clamp(0.0, 1.0)
}

fn normal_p(n: usize, ties: &[usize], w_plus: f64, alternative: Alternative) -> f64 {
    let n = n as f64;
    let mean = n * (n + 1.0) / 4.0;
    let tie_term: f64 = ties
        .iter()
        .map(|&t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum::<f64>()
        / 48.0;
    let sd = (n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term).sqrt();
    let normal = std_normal();
    let p = match alternative {
        Alternative::Greater => normal.sf((w_plus - mean - 0.5) / sd),
        Alternative::Less => normal.cdf((w_plus - mean + 0.5) / sd),
    };
    p.clamp(0.0, 1.0)
}

/// One-sided Wilcoxon signed-rank test of `values` (already-formed paired
/// differences) against median zero. Zeros are discarded before ranking and
/// tied magnitudes receive average ranks.
pub fn wilcoxon_one_sided(values: &[f64], alternative: Alternative) -> Result<TestResult> {
    wilcoxon_one_sided_with(values, alternative, MethodChoice::Auto)
}

pub fn wilcoxon_one_sided_with(
    values: &[f64],
    alternative: Alternative,
    choice: MethodChoice,
) -> Result<TestResult> {
    if values.is_empty() {
        return Err(Error::validation("wilcoxon test needs at least one value"));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::validation(format!("non-finite difference {bad}")));
    }
    let nonzero: Vec<f64> = values.iter().copied().filter(|&v| v != 0.0).collect();
    if nonzero.is_empty() {
        return Err(Error::Degenerate(format!(
            "all {} differences are zero",
            values.len()
        )));
    }
    let magnitudes: Vec<f64> = nonzero.iter().map(|v| v.abs()).collect();
    let (ranks, ties) = average_ranks(&magnitudes);
    let w_plus: f64 = nonzero
        .iter()
        .zip(&ranks)
        .filter(|(v, _)| **v > 0.0)
        .map(|(_, r)| r)
        .sum();
    let n = nonzero.len();

    let method = match choice {
        MethodChoice::Auto if n <= EXACT_CUTOFF && ties.is_empty() => Method::Exact,
        MethodChoice::Auto | MethodChoice::NormalApprox => Method::NormalApprox,
        MethodChoice::Exact if n <= EXACT_LIMIT => Method::Exact,
        MethodChoice::Exact => {
            return Err(Error::validation(format!(
                "exact distribution limited to n <= {EXACT_LIMIT}, got {n}"
            )))
        }
    };
    let p_value = match method {
        Method::Exact => exact_p(&ranks, w_plus, alternative),
        _ => normal_p(n, &ties, w_plus, alternative),
    };
    Ok(TestResult {
        statistic: w_plus,
        p_value,
        n_effective: n,
        alternative: Some(alternative),
        method,
    })
}

fn check_paired(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::validation(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::validation(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Tests `H0: original - generic <= 0` with the one-sided Wilcoxon test.
pub fn superiority_test(original: &[f64], generic: &[f64], alpha: f64) -> Result<Decision> {
    check_paired(original, generic)?;
    check_alpha(alpha)?;
    let diffs: Vec<f64> = original.iter().zip(generic).map(|(s, u)| s - u).collect();
    let result = wilcoxon_one_sided(&diffs, Alternative::Greater)?;
    Ok(Decision::at(result, alpha))
}

/// Tests `H0: |original - shifted| >= beta`; rejecting means stable at this shift.
pub fn stability_test(
    original: &[f64],
    shifted: &[f64],
    bound: &StabilityBound,
    alpha: f64,
) -> Result<Decision> {
    check_paired(original, shifted)?;
    check_alpha(alpha)?;
    if !(bound.beta > 0.0) {
        return Err(Error::ZeroBound);
    }
    let x: Vec<f64> = original
        .iter()
        .zip(shifted)
        .map(|(s, d)| (s - d).abs() - bound.beta)
        .collect();
    let result = wilcoxon_one_sided(&x, Alternative::Less)?;
    Ok(Decision::at(result, alpha))
}

/// Linear-interpolation quantile of sorted data at position `p * (n - 1)`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub(crate) fn sorted_copy(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::validation("empty sample"));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::validation(format!("non-finite value {bad}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted)
}

pub fn quartiles(values: &[f64]) -> Result<(f64, f64)> {
    let sorted = sorted_copy(values)?;
    Ok((quantile_sorted(&sorted, 0.25), quantile_sorted(&sorted, 0.75)))
}

/// Tukey upper fence `Q3 + 1.5 IQR` of the flip-induced absolute score differences.
pub fn stability_bound(flip_abs_diffs: &[f64]) -> Result<StabilityBound> {
    let (q1, q3) = quartiles(flip_abs_diffs)?;
    let iqr = q3 - q1;
    Ok(StabilityBound {
        beta: q3 + TUKEY_K * iqr,
        q1,
        q3,
        iqr,
        sample_size: flip_abs_diffs.len(),
    })
}

// Royston's polynomial coefficients, ascending powers.
const SW_C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056];
const SW_C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
const SW_C3: [f64; 4] = [0.5440, -0.39978, 0.025054, -6.714e-4];
const SW_C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
const SW_C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
const SW_C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
const SW_GAMMA: [f64; 2] = [-2.273, 0.459];
const SW_SMALL: f64 = 1e-19;

fn poly(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Coefficients `a_1..a_{n/2}` for the upper half of the order statistics.
fn shapiro_coefficients(n: usize) -> Vec<f64> {
    if n == 3 {
        return vec![std::f64::consts::FRAC_1_SQRT_2];
    }
    let half = n / 2;
    let an = n as f64;
    let normal = std_normal();
    let m: Vec<f64> = (1..=half)
        .map(|i| normal.inverse_cdf((i as f64 - 0.375) / (an + 0.25)))
        .collect();
    let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
    let ssumm2 = summ2.sqrt();
    let rsn = 1.0 / an.sqrt();
    let a1 = poly(&SW_C1, rsn) - m[0] / ssumm2;

    let mut a = vec![0.0; half];
    a[0] = a1;
    let (first_scaled, fac) = if n > 5 {
        let a2 = -m[1] / ssumm2 + poly(&SW_C2, rsn);
        let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1])
            / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2))
            .sqrt();
        a[1] = a2;
        (2, fac)
    } else {
        let fac = ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt();
        (1, fac)
    };
    for i in first_scaled..half {
        a[i] = -m[i] / fac;
    }
    a
}

/// Shapiro-Wilk W test for normality, valid for `3 <= n <= 5000`.
pub fn shapiro_wilk(values: &[f64]) -> Result<TestResult> {
    let n = values.len();
    if !(3..=5000).contains(&n) {
        return Err(Error::validation(format!(
            "shapiro-wilk requires 3 <= n <= 5000, got {n}"
        )));
    }
    let x = sorted_copy(values)?;
    let range = x[n - 1] - x[0];
    if !(range > 0.0) {
        return Err(Error::Degenerate("sample has zero variance".into()));
    }
    // scale by the range to keep sums well conditioned
    let x: Vec<f64> = x.iter().map(|v| (v - x[0]) / range).collect();
    let mean = x.iter().sum::<f64>() / n as f64;
    let ss: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    let a = shapiro_coefficients(n);
    let b: f64 = a
        .iter()
        .enumerate()
        .map(|(i, ai)| ai * (x[n - 1 - i] - x[i]))
        .sum();
    let w = (b * b / ss).min(1.0);

    let p_value = if n == 3 {
        let p = 1.0 - 6.0 / std::f64::consts::PI * w.sqrt().acos();
        p.max(0.0)
    } else {
        let y = (1.0 - w).ln();
        let an = n as f64;
        let normal = std_normal();
        if n <= 11 {
            let gamma = poly(&SW_GAMMA, an);
            if y >= gamma {
                SW_SMALL
            } else {
                let y = -(gamma - y).ln();
                let m = poly(&SW_C3, an);
                let s = poly(&SW_C4, an).exp();
                normal.sf((y - m) / s)
            }
        } else {
            let ln_n = an.ln();
            let m = poly(&SW_C5, ln_n);
            let s = poly(&SW_C6, ln_n).exp();
            normal.sf((y - m) / s)
        }
    };
    Ok(TestResult {
        statistic: w,
        p_value: p_value.clamp(0.0, 1.0),
        n_effective: n,
        alternative: None,
        method: Method::RoystonW,
    })
}
