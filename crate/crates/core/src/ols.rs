//! Multiple linear regression by least squares, and stepwise feature
//! selection driven by adjusted R².

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{Feature, FeatureVector, FEATURE_COUNT};
use crate::metrics;

/// Pivot size (on unit-norm columns) below which a column counts as dependent.
const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OlsError {
    #[error("column '{column}' is linearly dependent on the intercept and earlier columns")]
    RankDeficient { column: String },
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("non-finite value in design matrix or targets")]
    NonFinite,
    #[error("degenerate stepwise fit: {0}")]
    Degenerate(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsModel {
    pub features: Vec<Feature>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

impl OlsModel {
    pub fn predict(&self, x: &FeatureVector) -> f64 {
        self.features
            .iter()
            .zip(&self.coefficients)
            .fold(self.intercept, |acc, (&f, &a)| acc + a * x[f])
    }
}

/// Least-squares `y ≈ intercept + Σ coef_j · rows[i][j]`.
///
/// Columns are centered (absorbing the intercept) and scaled to unit norm,
/// then solved by Householder QR. Returns `(coefficients, intercept)`.
pub fn lstsq(rows: &[Vec<f64>], y: &[f64], names: &[String]) -> Result<(Vec<f64>, f64), OlsError> {
    let n = rows.len();
    let p = names.len();
    if y.len() != n {
        return Err(OlsError::Dimension(format!("{n} rows but {} targets", y.len())));
    }
    if n < p + 1 {
        return Err(OlsError::Dimension(format!("need n >= p + 1, got n = {n}, p = {p}")));
    }
    if let Some(r) = rows.iter().find(|r| r.len() != p) {
        return Err(OlsError::Dimension(format!("row has {} columns, expected {p}", r.len())));
    }
    if !y.iter().all(|v| v.is_finite()) || !rows.iter().flatten().all(|v| v.is_finite()) {
        return Err(OlsError::NonFinite);
    }

    let nf = n as f64;
    let y_mean = y.iter().sum::<f64>() / nf;
    let mut means = vec![0.0; p];
    for r in rows {
        for j in 0..p {
            means[j] += r[j];
        }
    }
    means.iter_mut().for_each(|m| *m /= nf);

    // Column-major centered design.
    let mut a: Vec<Vec<f64>> = (0..p).map(|j| rows.iter().map(|r| r[j] - means[j]).collect()).collect();
    let mut scale = vec![0.0; p];
    for j in 0..p {
        let norm = a[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        let raw = rows.iter().map(|r| r[j].abs()).fold(0.0, f64::max);
        if !(norm > 1e-12 * raw.max(f64::MIN_POSITIVE)) {
            return Err(OlsError::RankDeficient { column: names[j].clone() });
        }
        scale[j] = norm;
        a[j].iter_mut().for_each(|v| *v /= norm);
    }
    let mut b: Vec<f64> = y.iter().map(|v| v - y_mean).collect();

    for k in 0..p {
        let norm = a[k][k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < RANK_TOL {
            return Err(OlsError::RankDeficient { column: names[k].clone() });
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        let reflect = |col: &mut [f64]| {
            let dot: f64 = v.iter().zip(col.iter()).map(|(a, b)| a * b).sum();
            let f = 2.0 * dot / vnorm2;
            col.iter_mut().zip(&v).for_each(|(c, vi)| *c -= f * vi);
        };
        for col in a.iter_mut().skip(k + 1) {
            reflect(&mut col[k..]);
        }
        reflect(&mut b[k..]);
        a[k][k] = alpha;
        for x in a[k][k + 1..].iter_mut() {
            *x = 0.0;
        }
    }

    // Back substitution: R z = Qᵀ b.
    let mut z = vec![0.0; p];
    for k in (0..p).rev() {
        let mut s = b[k];
        for j in k + 1..p {
            s -= a[j][k] * z[j];
        }
        z[k] = s / a[k][k];
    }
    let coef: Vec<f64> = z.iter().zip(&scale).map(|(zi, s)| zi / s).collect();
    let intercept = y_mean - coef.iter().zip(&means).map(|(c, m)| c * m).sum::<f64>();
    if !coef.iter().all(|c| c.is_finite()) || !intercept.is_finite() {
        return Err(OlsError::NonFinite);
    }
    Ok((coef, intercept))
}

pub fn fit_ols(rows: &[FeatureVector], y: &[f64], features: &[Feature]) -> Result<OlsModel, OlsError> {
    let design: Vec<Vec<f64>> = rows.iter().map(|r| features.iter().map(|&f| r[f]).collect()).collect();
    let names: Vec<String> = features.iter().map(|f| f.name().to_string()).collect();
    let (coefficients, intercept) = lstsq(&design, y, &names)?;
    Ok(OlsModel {
        features: features.to_vec(),
        coefficients,
        intercept,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepwiseStep {
    pub feature: Feature,
    /// Adjusted R² of the model after this step; `None` when the feature
    /// was dependent on those before it and therefore skipped.
    pub adjusted_r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepwiseReport {
    pub steps: Vec<StepwiseStep>,
    pub chosen_k: usize,
}

pub const DEFAULT_STOP_DELTA: f64 = 0.0005;

/// Length of the leading run of steps that each raise adjusted R² by more
/// than `stop_delta` (an empty model scores 0). Skipped steps (`None`) are
/// passed over. Never less than 1.
pub fn choose_k(adjusted: &[Option<f64>], stop_delta: f64) -> usize {
    let mut prev = 0.0;
    let mut k = 0;
    for (i, a) in adjusted.iter().enumerate() {
        match a {
            Some(v) if *v - prev > stop_delta => {
                prev = *v;
                k = i + 1;
            }
            Some(_) => break,
            None => {}
        }
    }
    k.max(1)
}

/// Adds features one at a time in `order`, recording adjusted R² after each.
///
/// A feature collinear with those already added is recorded as skipped. The
/// returned model is refit on the non-skipped features of the first
/// `chosen_k` steps.
pub fn stepwise_select(
    rows: &[FeatureVector],
    y: &[f64],
    order: &[Feature],
    stop_delta: f64,
) -> Result<(OlsModel, StepwiseReport), OlsError> {
    let mut seen = [false; FEATURE_COUNT];
    for &f in order {
        if std::mem::replace(&mut seen[f.index()], true) {
            return Err(OlsError::Dimension(format!("feature {f} repeated in order")));
        }
    }
    if !(stop_delta >= 0.0) {
        return Err(OlsError::Dimension(format!("stop_delta must be >= 0, got {stop_delta}")));
    }
    if order.is_empty() {
        return Err(OlsError::Dimension("empty feature order".into()));
    }

    let mut steps = Vec::with_capacity(order.len());
    let mut active: Vec<Feature> = Vec::new();
    for &f in order {
        active.push(f);
        let adj = if y.len() <= active.len() + 1 {
            None
        } else {
            match fit_ols(rows, y, &active) {
                Ok(m) => {
                    let pred: Vec<f64> = rows.iter().map(|r| m.predict(r)).collect();
                    metrics::adjusted_r2(y, &pred, active.len()).ok()
                }
                Err(OlsError::RankDeficient { .. }) => None,
                Err(e) => return Err(e),
            }
        };
        if adj.is_none() {
            active.pop();
        }
        steps.push(StepwiseStep { feature: f, adjusted_r2: adj });
    }
    let adjusted: Vec<Option<f64>> = steps.iter().map(|s| s.adjusted_r2).collect();
    let chosen_k = choose_k(&adjusted, stop_delta);
    let chosen: Vec<Feature> = steps[..chosen_k]
        .iter()
        .filter(|s| s.adjusted_r2.is_some())
        .map(|s| s.feature)
        .collect();
    if chosen.is_empty() {
        return Err(OlsError::Degenerate(format!("feature {} could not be fit", order[0])));
    }
    let model = fit_ols(rows, y, &chosen).map_err(|e| OlsError::Degenerate(e.to_string()))?;
    Ok((model, StepwiseReport { steps, chosen_k }))
}
