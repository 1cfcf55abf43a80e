//! Fine-tuning objective and the knee-point rule for choosing its weight.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-3;

/// Minimum number of epochs for knee detection.
pub const MIN_KNEE_EPOCHS: usize = 5;

/// Difference-curve values within this distance of the maximum count as tied;
/// the earliest tied epoch wins.
const KNEE_TIE_TOLERANCE: f64 = 1e-12;

/// Smoothed L1 penalty `sqrt((x - y)^2 + eps^2)`.
pub fn charbonnier(x: f64, y: f64, epsilon: f64) -> f64 {
    let d = x - y;
    (d * d + epsilon * epsilon).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombinedLossInputs {
    /// Score of the shifted image under the tuned model.
    pub s_shift_tuned: f64,
    /// Score of the original image under the tuned model.
    pub s_orig_tuned: f64,
    /// Score of the original image under the frozen model.
    pub s_orig_frozen: f64,
    pub lambda: f64,
    pub epsilon: f64,
    /// Shift in pixels that produced `s_shift_tuned`.
    pub shift: u32,
}

impl CombinedLossInputs {
    /// Accepts the closed interval for `lambda` so that the `lambda = 0` and
    /// `lambda = 1` recording runs can be evaluated.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::validation(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::validation(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// `lambda * L(s_shift_tuned, s_orig_tuned) + (1 - lambda) * L(s_shift_tuned, s_orig_frozen)`.
pub fn combined_loss(inputs: &CombinedLossInputs) -> f64 {
    let invariance = charbonnier(inputs.s_shift_tuned, inputs.s_orig_tuned, inputs.epsilon);
    let regularization = charbonnier(inputs.s_shift_tuned, inputs.s_orig_frozen, inputs.epsilon);
    inputs.lambda * invariance + (1.0 - inputs.lambda) * regularization
}

/// Partial derivatives of [`combined_loss`] with respect to each score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossGradient {
    pub d_shift_tuned: f64,
    pub d_orig_tuned: f64,
    pub d_orig_frozen: f64,
}

pub fn combined_loss_gradient(inputs: &CombinedLossInputs) -> LossGradient {
    let a = inputs.s_shift_tuned;
    let inv = (a - inputs.s_orig_tuned) / charbonnier(a, inputs.s_orig_tuned, inputs.epsilon);
    let reg = (a - inputs.s_orig_frozen) / charbonnier(a, inputs.s_orig_frozen, inputs.epsilon);
    let lambda = inputs.lambda;
    LossGradient {
        d_shift_tuned: lambda * inv + (1.0 - lambda) * reg,
        d_orig_tuned: -lambda * inv,
        d_orig_frozen: -(1.0 - lambda) * reg,
    }
}

/// Per-epoch loss curve recorded at one `lambda` setting. Epochs are
/// consecutive integers starting at `first_epoch`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub lambda_setting: f64,
    pub first_epoch: i64,
    pub per_epoch_loss: Vec<f64>,
}

impl LossCurve {
    pub fn new(lambda_setting: f64, first_epoch: i64, per_epoch_loss: Vec<f64>) -> Result<Self> {
        if per_epoch_loss.len() < 2 {
            return Err(Error::validation("a loss curve needs at least two epochs"));
        }
        if let Some(bad) = per_epoch_loss.iter().find(|v| !v.is_finite()) {
            return Err(Error::validation(format!("non-finite loss value {bad}")));
        }
        Ok(LossCurve {
            lambda_setting,
            first_epoch,
            per_epoch_loss,
        })
    }

    pub fn epochs(&self) -> usize {
        self.per_epoch_loss.len()
    }

    pub fn loss_at(&self, epoch: i64) -> Option<f64> {
        let idx = usize::try_from(epoch - self.first_epoch).ok()?;
        self.per_epoch_loss.get(idx).copied()
    }

    /// Parses `epoch,loss` CSV.
    pub fn parse_csv(text: &str, lambda_setting: f64, path: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, header)) if header.trim().replace(' ', "") == "epoch,loss" => {}
            Some((n, other)) => {
                return Err(parse_err(n + 1, format!("expected header `epoch,loss`, got `{other}`")))
            }
            None => return Err(parse_err(1, "empty loss curve file".into())),
        }
        let mut first_epoch = None;
        let mut losses = Vec::new();
        for (n, line) in lines {
            let mut fields = line.split(',').map(str::trim);
            let (Some(e), Some(l), None) = (fields.next(), fields.next(), fields.next()) else {
                return Err(parse_err(n + 1, format!("expected two fields, got `{line}`")));
            };
            let epoch: i64 = e
                .parse()
                .map_err(|err| parse_err(n + 1, format!("bad epoch `{e}`: {err}")))?;
            let loss: f64 = l
                .parse()
                .map_err(|err| parse_err(n + 1, format!("bad loss `{l}`: {err}")))?;
            let start = *first_epoch.get_or_insert(epoch);
            if epoch != start + losses.len() as i64 {
                return Err(parse_err(
                    n + 1,
                    format!("epochs must be consecutive; expected {}, got {epoch}", start + losses.len() as i64),
                ));
            }
            losses.push(loss);
        }
        LossCurve::new(lambda_setting, first_epoch.unwrap_or(0), losses)
    }

    pub fn read_csv(path: &Path, lambda_setting: f64) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading loss curve {}", path.display()), e))?;
        Self::parse_csv(&text, lambda_setting, path)
    }
}

/// Kneedle difference curve for a decreasing convex curve: min-max normalize
/// both axes and take `(1 - y_norm) - x_norm`.
pub fn knee_difference_curve(losses: &[f64]) -> Option<Vec<f64>> {
    let n = losses.len();
    let lo = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if n < 2 || !(span > 0.0) {
        return None;
    }
    Some(
        losses
            .iter()
            .enumerate()
            .map(|(i, y)| {
                let x_norm = i as f64 / (n - 1) as f64;
                let y_norm = (y - lo) / span;
                (1.0 - y_norm) - x_norm
            })
            .collect(),
    )
}

/// Epoch of the maximum of the difference curve (sensitivity 1, no smoothing).
pub fn knee_point(curve: &LossCurve) -> Result<i64> {
    if curve.epochs() < MIN_KNEE_EPOCHS {
        return Err(Error::validation(format!(
            "knee detection needs at least {MIN_KNEE_EPOCHS} epochs, got {}",
            curve.epochs()
        )));
    }
    let diff = knee_difference_curve(&curve.per_epoch_loss)
        .ok_or_else(|| Error::NoKnee("loss curve is flat".into()))?;
    let max = diff.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max <= KNEE_TIE_TOLERANCE {
        return Err(Error::NoKnee(
            "difference curve never rises above the chord between the endpoints".into(),
        ));
    }
    let idx = diff
        .iter()
        .position(|&d| d >= max - KNEE_TIE_TOLERANCE)
        .expect("maximum is attained");
    Ok(curve.first_epoch + idx as i64)
}

/// Weight that equalizes the two weighted loss terms at the knee.
pub fn lambda_from_knees(l0_knee: f64, l1_knee: f64) -> Result<f64> {
    if !(l0_knee >= 0.0 && l1_knee >= 0.0) {
        return Err(Error::validation(format!(
            "knee losses must be non-negative, got l0={l0_knee}, l1={l1_knee}"
        )));
    }
    let total = l0_knee + l1_knee;
    if total == 0.0 {
        return Err(Error::Degenerate("both knee losses are zero".into()));
    }
    Ok(l0_knee / total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaRecord {
    pub knee_epoch: i64,
    pub l1_knee: f64,
    pub l0_knee: f64,
    pub lambda: f64,
}

/// Finds the knee on the `lambda = 1` curve, reads the `lambda = 0` curve at
/// the same epoch and solves for the balancing weight.
pub fn derive_lambda(curve_lambda1: &LossCurve, curve_lambda0: &LossCurve) -> Result<LambdaRecord> {
    if curve_lambda1.epochs() != curve_lambda0.epochs()
        || curve_lambda1.first_epoch != curve_lambda0.first_epoch
    {
        return Err(Error::validation(format!(
            "loss curves cover different epochs: {}+{} vs {}+{}",
            curve_lambda1.first_epoch,
            curve_lambda1.epochs(),
            curve_lambda0.first_epoch,
            curve_lambda0.epochs()
        )));
    }
    let knee_epoch = knee_point(curve_lambda1)?;
    let l1_knee = curve_lambda1.loss_at(knee_epoch).expect("knee within curve");
    let l0_knee = curve_lambda0.loss_at(knee_epoch).expect("same epoch range");
    Ok(LambdaRecord {
        knee_epoch,
        l1_knee,
        l0_knee,
        lambda: lambda_from_knees(l0_knee, l1_knee)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use num_rational::Rational64;
    use proptest::prelude::*;

    fn inputs(a: f64, b: f64, c: f64, lambda: f64, epsilon: f64) -> CombinedLossInputs {
        CombinedLossInputs {
            s_shift_tuned: a,
            s_orig_tuned: b,
            s_orig_frozen: c,
            lambda,
            epsilon,
            shift: 0,
        }
    }

    /// Exact rational Kneedle maximum over all points; first index on ties.
    fn brute_force_knee(losses: &[Rational64]) -> usize {
        let n = losses.len() as i64;
        let lo = *losses.iter().min().unwrap();
        let hi = *losses.iter().max().unwrap();
        let diff: Vec<Rational64> = losses
            .iter()
            .enumerate()
            .map(|(i, y)| Rational64::from_integer(1) - (y - lo) / (hi - lo) - Rational64::new(i as i64, n - 1))
            .collect();
        let best = *diff.iter().max().unwrap();
        diff.iter().position(|d| *d == best).unwrap()
    }

    #[test]
    fn charbonnier_examples() {
        assert_eq!(charbonnier(0.7, 0.7, DEFAULT_EPSILON), DEFAULT_EPSILON);
        assert_abs_diff_eq!(charbonnier(4.0, 1.0, 1e-3), 3.0, epsilon = 2e-7);
        assert!(charbonnier(4.0, 1.0, 1e-3) > 3.0);
        assert_eq!(charbonnier(1.0, 4.0, 1e-3), charbonnier(4.0, 1.0, 1e-3));
    }

    #[test]
    fn combined_loss_examples() {
        assert_eq!(combined_loss(&inputs(30.0, 30.0, 30.0, 0.4, 1e-3)), 1e-3);
        assert_abs_diff_eq!(combined_loss(&inputs(5.0, 5.0, 3.0, 0.5, 1e-12)), 1.0, epsilon = 1e-9);
        let at_one = inputs(31.0, 29.5, 12.0, 1.0, 1e-3);
        assert_eq!(combined_loss(&at_one), charbonnier(31.0, 29.5, 1e-3));
        assert!(inputs(1.0, 1.0, 1.0, 1.5, 1e-3).validate().is_err());
        assert!(inputs(1.0, 1.0, 1.0, 0.5, 0.0).validate().is_err());
    }

    #[test]
    fn knee_on_reciprocal_curve() {
        let losses: Vec<f64> = (0..20).map(|e| 1.0 / (e as f64 + 1.0)).collect();
        let exact: Vec<Rational64> = (0..20).map(|e| Rational64::new(1, e + 1)).collect();
        let expected = brute_force_knee(&exact);
        assert_eq!(expected, 3);
        let curve = LossCurve::new(1.0, 0, losses).unwrap();
        assert_eq!(knee_point(&curve).unwrap(), expected as i64);
    }

    #[test]
    fn no_knee_cases() {
        let linear = LossCurve::new(1.0, 0, (0..20).map(|e| -(e as f64)).collect()).unwrap();
        assert!(matches!(knee_point(&linear), Err(Error::NoKnee(_))));
        let flat = LossCurve::new(1.0, 0, vec![0.3; 10]).unwrap();
        assert!(matches!(knee_point(&flat), Err(Error::NoKnee(_))));
        let short = LossCurve::new(1.0, 0, vec![1.0, 0.5, 0.3, 0.2]).unwrap();
        assert!(knee_point(&short).is_err());
    }

    #[test]
    fn lambda_examples() {
        assert_abs_diff_eq!(lambda_from_knees(1.8854, 0.0212).unwrap(), 0.9889, epsilon = 5e-5);
        assert_eq!(lambda_from_knees(0.7, 0.7).unwrap(), 0.5);
        assert_eq!(lambda_from_knees(0.7, 0.0).unwrap(), 1.0);
        assert!(matches!(lambda_from_knees(0.0, 0.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn derive_lambda_reads_second_curve_at_knee() {
        let one = LossCurve::new(1.0, 1, (0..20).map(|e| 0.0848 / (e as f64 + 1.0)).collect()).unwrap();
        let zero = LossCurve::new(0.0, 1, (0..20).map(|e| 1.8854 + (e as f64 - 3.0) * 0.01).collect()).unwrap();
        let rec = derive_lambda(&one, &zero).unwrap();
        assert_eq!(rec.knee_epoch, 4);
        assert_abs_diff_eq!(rec.l1_knee, 0.0212, epsilon = 1e-15);
        assert_abs_diff_eq!(rec.l0_knee, 1.8854, epsilon = 1e-15);
        assert_abs_diff_eq!(rec.lambda, 0.9889, epsilon = 5e-5);
    }

    #[test]
    fn csv_parsing() {
        let p = Path::new("c.csv");
        let c = LossCurve::parse_csv("epoch,loss\n1,0.5\n2,0.25\n3,0.2\n", 1.0, p).unwrap();
        assert_eq!(c.first_epoch, 1);
        assert_eq!(c.per_epoch_loss, vec![0.5, 0.25, 0.2]);
        assert!(LossCurve::parse_csv("epoch,value\n1,0.5\n", 1.0, p).is_err());
        match LossCurve::parse_csv("epoch,loss\n1,0.5\n3,0.2\n", 1.0, p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn gradient_matches_central_differences(
            a in 0f64..100.0, b in 0f64..100.0, c in 0f64..100.0,
            lambda in 0.01f64..0.99, epsilon in 0.01f64..1.0,
        ) {
            let x = inputs(a, b, c, lambda, epsilon);
            let g = combined_loss_gradient(&x);
            let h = 1e-5;
            let fd = |f: &dyn Fn(f64) -> CombinedLossInputs, v: f64| {
                (combined_loss(&f(v + h)) - combined_loss(&f(v - h))) / (2.0 * h)
            };
            let pairs = [
                (g.d_shift_tuned, fd(&|v| inputs(v, b, c, lambda, epsilon), a)),
                (g.d_orig_tuned, fd(&|v| inputs(a, v, c, lambda, epsilon), b)),
                (g.d_orig_frozen, fd(&|v| inputs(a, b, v, lambda, epsilon), c)),
            ];
            for (analytic, numeric) in pairs {
                let scale = analytic.abs().max(numeric.abs()).max(1e-3);
                prop_assert!((analytic - numeric).abs() / scale < 1e-6, "{analytic} vs {numeric}");
            }
        }

        #[test]
        fn loss_linear_in_lambda(a in 0f64..100.0, b in 0f64..100.0, c in 0f64..100.0, l in 0f64..1.0) {
            let at = |lambda| combined_loss(&inputs(a, b, c, lambda, 1e-3));
            prop_assert!((at(l) - ((1.0 - l) * at(0.0) + l * at(1.0))).abs() < 1e-9);
        }

        #[test]
        fn charbonnier_monotone(d1 in 0f64..50.0, d2 in 0f64..50.0, e1 in 1e-6f64..1.0, e2 in 1e-6f64..1.0) {
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            prop_assert!(charbonnier(lo, 0.0, e1) <= charbonnier(hi, 0.0, e1));
            let (el, eh) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            prop_assert!(charbonnier(d1, 0.0, el) <= charbonnier(d1, 0.0, eh));
            prop_assert!(charbonnier(d1, 0.0, el) >= el);
            prop_assert!((charbonnier(d1, 0.0, 1e-9) - d1).abs() < 1e-8);
        }

        #[test]
        fn lambda_bounded_and_scale_free(l0 in 0f64..10.0, l1 in 0f64..10.0, k in 0.01f64..100.0) {
            prop_assume!(l0 + l1 > 1e-6);
            let lam = lambda_from_knees(l0, l1).unwrap();
            prop_assert!((0.0..=1.0).contains(&lam));
            prop_assert!((lam - lambda_from_knees(k * l0, k * l1).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn knee_affine_invariant(scale in 0.001f64..1000.0, offset in -100f64..100.0, p in 0.3f64..3.0) {
            let losses: Vec<f64> = (0..20).map(|e| (e as f64 + 1.0).powf(-p)).collect();
            let base = knee_point(&LossCurve::new(1.0, 0, losses.clone()).unwrap()).unwrap();
            let moved: Vec<f64> = losses.iter().map(|y| scale * y + offset).collect();
            prop_assert_eq!(knee_point(&LossCurve::new(1.0, 0, moved).unwrap()).unwrap(), base);
        }
    }
}
