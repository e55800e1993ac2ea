//! Accuracy rates over batches of estimates.

use crate::error::{Error, Result};
use crate::transforms::TransformCurve;

/// Fraction of `estimates` within `eps` of `truth`.
pub fn accuracy_rate(estimates: &[f64], truth: f64, eps: f64) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::input("no estimates"));
    }
    let hits = estimates
        .iter()
        .filter(|e| (*e - truth).abs() <= eps)
        .count();
    Ok(hits as f64 / estimates.len() as f64)
}

/// `‖φ − φ*‖₂ / ‖φ*‖₂` with curves read as real vectors.
pub fn relative_curve_error(estimate: &TransformCurve, truth: &TransformCurve) -> Result<f64> {
    if estimate.top() != truth.top() {
        return Err(Error::input("curves cover different value ranges"));
    }
    let norm = truth
        .phi()
        .iter()
        .map(|&v| (v as f64).powi(2))
        .sum::<f64>()
        .sqrt();
    if norm == 0.0 {
        return Err(Error::input("reference curve has zero norm"));
    }
    let diff = estimate
        .phi()
        .iter()
        .zip(truth.phi())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(diff / norm)
}

/// Fraction of curves whose relative error against `truth` is at most `eps`.
pub fn curve_accuracy_rate(
    estimates: &[TransformCurve],
    truth: &TransformCurve,
    eps: f64,
) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::input("no estimates"));
    }
    let mut hits = 0;
    for e in estimates {
        if relative_curve_error(e, truth)? <= eps {
            hits += 1;
        }
    }
    Ok(hits as f64 / estimates.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::gamma_curve;

    #[test]
    fn scalar_rates() {
        assert_eq!(accuracy_rate(&[1.4, 1.4], 1.4, 0.0).unwrap(), 1.0);
        assert_eq!(accuracy_rate(&[0.5, 2.0], 1.4, 0.05).unwrap(), 0.0);
        assert_eq!(accuracy_rate(&[1.40, 1.46], 1.4, 0.05).unwrap(), 0.5);
        assert!(accuracy_rate(&[], 1.0, 0.1).is_err());
    }

    #[test]
    fn curve_rates() {
        let truth = gamma_curve(2.0, 255).unwrap();
        let id = TransformCurve::identity(255);
        assert_eq!(
            curve_accuracy_rate(std::slice::from_ref(&truth), &truth, 0.0).unwrap(),
            1.0
        );
        assert_eq!(
            curve_accuracy_rate(std::slice::from_ref(&id), &truth, f64::INFINITY).unwrap(),
            1.0
        );
        let num: f64 = (0..=255usize)
            .map(|i| (i as f64 - truth.map(i) as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        let den: f64 = (0..=255usize)
            .map(|i| (truth.map(i) as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        let err = relative_curve_error(&id, &truth).unwrap();
        assert!((err - num / den).abs() < 1e-15);
        assert_eq!(
            curve_accuracy_rate(std::slice::from_ref(&id), &truth, err).unwrap(),
            1.0
        );
        assert_eq!(
            curve_accuracy_rate(&[id], &truth, err * 0.999).unwrap(),
            0.0
        );
        let zero = TransformCurve::constant(255, 0).unwrap();
        assert!(curve_accuracy_rate(&[truth], &zero, 0.1).is_err());
    }
}
