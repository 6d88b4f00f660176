//! Accuracy metrics: MAPE with its confidence interval, and (adjusted) R².

use thiserror::Error;

/// Predictions below this are raised to it before computing relative error.
pub const PREDICTION_FLOOR_MS: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {0} targets vs {1} predictions")]
    Dimension(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("target at position {index} is not positive ({value})")]
    NonPositiveTarget { index: usize, value: f64 },
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

/// Per-sample absolute percentage errors.
pub fn apes(y: &[f64], pred: &[f64]) -> Result<Vec<f64>, MetricError> {
    if y.len() != pred.len() {
        return Err(MetricError::Dimension(y.len(), pred.len()));
    }
    if y.is_empty() {
        return Err(MetricError::Empty);
    }
    y.iter()
        .zip(pred)
        .enumerate()
        .map(|(index, (&t, &p))| {
            if !(t > 0.0) {
                return Err(MetricError::NonPositiveTarget { index, value: t });
            }
            Ok(100.0 * (t - p.max(PREDICTION_FLOOR_MS)).abs() / t)
        })
        .collect()
}

/// Mean absolute percentage error, in percent.
pub fn mape(y: &[f64], pred: &[f64]) -> Result<f64, MetricError> {
    let a = apes(y, pred)?;
    Ok(a.iter().sum::<f64>() / a.len() as f64)
}

/// Mean of `apes` and the half-width of its normal-approximation 95% CI.
pub fn mape_ci95(apes: &[f64]) -> Result<(f64, f64), MetricError> {
    let n = apes.len();
    if n < 2 {
        return Err(MetricError::Degenerate(format!("need >= 2 samples, got {n}")));
    }
    let mean = apes.iter().sum::<f64>() / n as f64;
    let var = apes.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1) as f64;
    Ok((mean, 1.96 * var.sqrt() / (n as f64).sqrt()))
}

pub fn r2(y: &[f64], pred: &[f64]) -> Result<f64, MetricError> {
    if y.len() != pred.len() {
        return Err(MetricError::Dimension(y.len(), pred.len()));
    }
    if y.is_empty() {
        return Err(MetricError::Empty);
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let sst: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if !(sst > 0.0) {
        return Err(MetricError::Degenerate("targets are constant".into()));
    }
    let sse: f64 = y.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - sse / sst)
}

/// R² penalized for `p` regressors: `1 - (1 - R²)(n - 1)/(n - p - 1)`.
pub fn adjusted_r2(y: &[f64], pred: &[f64], p: usize) -> Result<f64, MetricError> {
    let n = y.len();
    if n <= p + 1 {
        return Err(MetricError::Degenerate(format!("n = {n} must exceed p + 1 = {}", p + 1)));
    }
    let r = r2(y, pred)?;
    Ok(adjust(r, n, p))
}

pub fn adjust(r2: f64, n: usize, p: usize) -> f64 {
    1.0 - (1.0 - r2) * (n - 1) as f64 / (n - p - 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mape_examples() {
        assert!((mape(&[100.0, 200.0], &[110.0, 180.0]).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(mape(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert!((mape(&[50.0], &[0.0]).unwrap() - 100.0).abs() < 1e-4);
        assert!((mape(&[50.0], &[-7.0]).unwrap() - 100.0).abs() < 1e-4);
        assert_eq!(mape(&[1.0], &[]), Err(MetricError::Dimension(1, 0)));
        assert!(matches!(mape(&[0.0], &[1.0]), Err(MetricError::NonPositiveTarget { index: 0, .. })));
    }

    #[test]
    fn adjusted_r2_examples() {
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert_eq!(adjusted_r2(&y, &y, 3).unwrap(), 1.0);
        let mean = vec![4.5; 10];
        assert!((adjusted_r2(&y, &mean, 1).unwrap() + 0.125).abs() < 1e-12);
        assert!((adjust(0.988, 20, 4) - 0.9848).abs() < 1e-12);
        assert!(adjusted_r2(&[1.0; 5], &[1.0; 5], 1).is_err());
        assert!(adjusted_r2(&y[..3], &y[..3], 2).is_err());
    }

    #[test]
    fn ci_examples() {
        assert_eq!(mape_ci95(&[5.0, 5.0, 5.0]).unwrap(), (5.0, 0.0));
        let (m, h) = mape_ci95(&[0.0, 20.0]).unwrap();
        assert_eq!(m, 10.0);
        assert!((h - 19.6).abs() < 1e-9);
        assert!(mape_ci95(&[1.0]).is_err());
    }
}
