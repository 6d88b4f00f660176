//! Epsilon-insensitive support vector regression solved by sequential
//! minimal optimization over the 2n-variable dual.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Curvature used in place of a non-positive second derivative.
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    Polynomial,
    Sigmoid,
    Rbf,
}

impl std::str::FromStr for Kernel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "linear" => Ok(Kernel::Linear),
            "polynomial" | "poly" => Ok(Kernel::Polynomial),
            "sigmoid" => Ok(Kernel::Sigmoid),
            "rbf" => Ok(Kernel::Rbf),
            _ => Err(format!("unknown kernel '{s}' (expected linear, polynomial, sigmoid or rbf)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrConfig {
    pub kernel: Kernel,
    pub gamma: f64,
    pub degree: u32,
    pub coef0: f64,
    pub c: f64,
    pub epsilon: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SvrConfig {
    fn default() -> Self {
        SvrConfig {
            kernel: Kernel::Rbf,
            gamma: 0.1,
            degree: 3,
            coef0: 0.0,
            c: 1.0,
            epsilon: 0.1,
            tolerance: 1e-3,
            max_iterations: 100_000,
        }
    }
}

impl SvrConfig {
    pub fn validate(&self) -> Result<(), SvrError> {
        let bad = |m: &str| Err(SvrError::Config(m.to_string()));
        if self.kernel != Kernel::Linear && !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be > 0");
        }
        if self.kernel == Kernel::Polynomial && self.degree == 0 {
            return bad("degree must be >= 1");
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return bad("C must be > 0");
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be >= 0");
        }
        if !(self.tolerance > 0.0) {
            return bad("tolerance must be > 0");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be >= 1");
        }
        if !self.coef0.is_finite() {
            return bad("coef0 must be finite");
        }
        Ok(())
    }

    fn k(&self, u: &[f64], v: &[f64]) -> f64 {
        match self.kernel {
            Kernel::Linear => dot(u, v),
            Kernel::Polynomial => (self.gamma * dot(u, v) + self.coef0).powi(self.degree as i32),
            Kernel::Sigmoid => (self.gamma * dot(u, v) + self.coef0).tanh(),
            Kernel::Rbf => {
                let d2: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
                (-self.gamma * d2).exp()
            }
        }
    }
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SvrError {
    #[error("invalid SVR config: {0}")]
    Config(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("degenerate training set: {0}")]
    Degenerate(String),
}

pub fn kernel_eval(cfg: &SvrConfig, u: &[f64], v: &[f64]) -> Result<f64, SvrError> {
    if u.len() != v.len() {
        return Err(SvrError::Dimension(format!("{} vs {} entries", u.len(), v.len())));
    }
    Ok(cfg.k(u, v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub config: SvrConfig,
    pub support: Vec<Vec<f64>>,
    /// `alpha - alpha*` per support vector, never zero.
    pub dual: Vec<f64>,
    pub bias: f64,
}

impl SvrModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.support
            .iter()
            .zip(&self.dual)
            .fold(self.bias, |acc, (sv, d)| acc + d * self.config.k(sv, x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub iterations: usize,
    pub converged: bool,
    /// Final maximal KKT violation gap of the working-set selection.
    pub gap: f64,
    /// Some step met a non-positive curvature (possible with sigmoid kernels).
    pub nonpositive_curvature: bool,
}

/// Fits the dual. Variables `0..n` are α (sign +1), `n..2n` are α* (sign -1).
pub fn fit_svr(cfg: &SvrConfig, xs: &[Vec<f64>], ys: &[f64]) -> Result<(SvrModel, SolverReport), SvrError> {
    cfg.validate()?;
    let n = xs.len();
    if ys.len() != n {
        return Err(SvrError::Dimension(format!("{n} rows but {} targets", ys.len())));
    }
    if n < 2 {
        return Err(SvrError::Degenerate(format!("need >= 2 samples, got {n}")));
    }
    let dim = xs[0].len();
    if xs.iter().any(|x| x.len() != dim) {
        return Err(SvrError::Dimension("rows differ in length".into()));
    }
    if !ys.iter().all(|v| v.is_finite()) || !xs.iter().flatten().all(|v| v.is_finite()) {
        return Err(SvrError::Degenerate("non-finite input".into()));
    }

    let mut kmat = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = cfg.k(&xs[i], &xs[j]);
            kmat[i * n + j] = v;
            kmat[j * n + i] = v;
        }
    }
    let kk = |a: usize, b: usize| kmat[(a % n) * n + (b % n)];
    let m = 2 * n;
    let c = cfg.c;
    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
    let mut alpha = vec![0.0; m];
    let mut grad: Vec<f64> = (0..m)
        .map(|t| if t < n { cfg.epsilon - ys[t] } else { cfg.epsilon + ys[t - n] })
        .collect();
    let up = |t: usize, a: f64| if t < n { a < c } else { a > 0.0 };
    let low = |t: usize, a: f64| if t < n { a > 0.0 } else { a < c };

    let mut report = SolverReport {
        iterations: 0,
        converged: false,
        gap: f64::INFINITY,
        nonpositive_curvature: false,
    };
    while report.iterations < cfg.max_iterations {
        // i: maximal violator in the up set (first index on ties).
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..m {
            if up(t, alpha[t]) {
                let v = -sign(t) * grad[t];
                if v > gmax {
                    gmax = v;
                    i = t;
                }
            }
        }
        // j: largest second-order decrease among the low set.
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..m {
            if !low(t, alpha[t]) {
                continue;
            }
            let yg = sign(t) * grad[t];
            gmax2 = gmax2.max(yg);
            if i == usize::MAX {
                continue;
            }
            let b = gmax + yg;
            if b > 0.0 {
                let mut a = kk(i, i) + kk(t, t) - 2.0 * kk(i, t);
                if a <= 0.0 {
                    a = TAU;
                }
                let obj = -(b * b) / a;
                if obj < best {
                    best = obj;
                    j = t;
                }
            }
        }
        report.gap = gmax + gmax2;
        // No usable pair means the gap is already non-positive.
        if report.gap < cfg.tolerance || i == usize::MAX || j == usize::MAX {
            report.converged = true;
            break;
        }
        report.iterations += 1;

        let (yi, yj) = (sign(i), sign(j));
        let qij = yi * yj * kk(i, j);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if yi != yj {
            let mut quad = kk(i, i) + kk(j, j) + 2.0 * qij;
            if quad <= 0.0 {
                report.nonpositive_curvature = true;
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = kk(i, i) + kk(j, j) - 2.0 * qij;
            if quad <= 0.0 {
                report.nonpositive_curvature = true;
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..m {
            let st = sign(t);
            grad[t] += st * (yi * kk(i, t) * di + yj * kk(j, t) * dj);
        }
    }
    if !report.converged {
        log::warn!(
            "SVR solver stopped after {} iterations with gap {:.3e} > tolerance {:.1e}",
            report.iterations,
            report.gap,
            cfg.tolerance
        );
    }
    if report.nonpositive_curvature {
        log::warn!("SVR solver met non-positive curvature; kernel may be indefinite");
    }

    // Bias: average over free variables, else the midpoint of the feasible interval.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum_free) = (0usize, 0.0);
    for t in 0..m {
        let yg = sign(t) * grad[t];
        let at_upper = alpha[t] >= c;
        let at_lower = alpha[t] <= 0.0;
        if at_upper {
            if sign(t) < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if at_lower {
            if sign(t) > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    let rho = if free > 0 { sum_free / free as f64 } else { (ub + lb) / 2.0 };

    let mut support = Vec::new();
    let mut dual = Vec::new();
    for i in 0..n {
        let d = alpha[i] - alpha[i + n];
        if d != 0.0 {
            support.push(xs[i].clone());
            dual.push(d);
        }
    }
    Ok((
        SvrModel {
            config: cfg.clone(),
            support,
            dual,
            bias: -rho,
        },
        report,
    ))
}

/// Per-sample violation of the epsilon-tube optimality conditions, given
/// each sample's dual coefficient (0 for non-support samples).
pub fn kkt_violations(model: &SvrModel, xs: &[Vec<f64>], ys: &[f64], duals: &[f64]) -> Vec<f64> {
    let c = model.config.c;
    let eps = model.config.epsilon;
    xs.iter()
        .zip(ys)
        .zip(duals)
        .map(|((x, &y), &d)| {
            let r = y - model.predict(x);
            if d == 0.0 {
                (r.abs() - eps).max(0.0)
            } else if d >= c {
                (eps - r).max(0.0)
            } else if d <= -c {
                (r + eps).max(0.0)
            } else if d > 0.0 {
                (r - eps).abs()
            } else {
                (r + eps).abs()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(kernel: Kernel) -> SvrConfig {
        SvrConfig {
            kernel,
            ..SvrConfig::default()
        }
    }

    /// Dual coefficient per training row, looked up by row identity.
    fn duals_for(m: &SvrModel, xs: &[Vec<f64>]) -> Vec<f64> {
        let mut used = vec![false; m.support.len()];
        xs.iter()
            .map(|x| {
                match (0..m.support.len()).find(|&k| !used[k] && m.support[k] == *x) {
                    Some(k) => {
                        used[k] = true;
                        m.dual[k]
                    }
                    None => 0.0,
                }
            })
            .collect()
    }

    #[test]
    fn kernel_examples() {
        let rbf = cfg(Kernel::Rbf);
        assert_eq!(kernel_eval(&rbf, &[0.3, -1.0], &[0.3, -1.0]).unwrap(), 1.0);
        assert_eq!(kernel_eval(&cfg(Kernel::Linear), &[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        let poly = SvrConfig {
            gamma: 1.0,
            coef0: 1.0,
            degree: 2,
            ..cfg(Kernel::Polynomial)
        };
        assert_eq!(kernel_eval(&poly, &[1.0, 0.0], &[1.0, 0.0]).unwrap(), 4.0);
        assert!(kernel_eval(&rbf, &[1.0], &[1.0, 2.0]).is_err());
        let sig = SvrConfig { gamma: 0.5, coef0: 0.1, ..cfg(Kernel::Sigmoid) };
        assert_eq!(kernel_eval(&sig, &[1.0, 2.0], &[2.0, 0.0]).unwrap(), (0.5f64 * 2.0 + 0.1).tanh());
    }

    #[test]
    fn everything_inside_tube() {
        let xs: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 / 10.0]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.5 * x[0] + 1.0).collect();
        let c = SvrConfig {
            epsilon: 1.0,
            ..cfg(Kernel::Linear)
        };
        let (m, rep) = fit_svr(&c, &xs, &ys).unwrap();
        assert!(rep.converged);
        assert!(m.support.is_empty());
        for (x, y) in xs.iter().zip(&ys) {
            assert!((m.predict(x) - y).abs() <= 1.0);
        }
    }

    #[test]
    fn fits_sine() {
        let xs: Vec<Vec<f64>> = (0..40).map(|i| vec![-3.0 + 6.0 * i as f64 / 39.0]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x[0].sin()).collect();
        let c = SvrConfig {
            gamma: 1.0,
            c: 10.0,
            epsilon: 0.01,
            ..cfg(Kernel::Rbf)
        };
        let (m, rep) = fit_svr(&c, &xs, &ys).unwrap();
        assert!(rep.converged);
        let mae: f64 = xs.iter().zip(&ys).map(|(x, y)| (m.predict(x) - y).abs()).sum::<f64>() / 40.0;
        assert!(mae < 0.05, "mae {mae}");
        for (x, y) in xs.iter().zip(&ys) {
            assert!((m.predict(x) - y).abs() <= c.epsilon + c.tolerance + 1e-9);
        }
        let v = kkt_violations(&m, &xs, &ys, &duals_for(&m, &xs));
        assert!(v.iter().all(|&e| e < c.tolerance), "{v:?}");
    }

    #[test]
    fn conflicting_duplicates_are_bound() {
        let xs = vec![vec![0.5], vec![0.5]];
        let ys = vec![0.0, 1.0];
        let c = SvrConfig {
            epsilon: 0.1,
            c: 2.0,
            ..cfg(Kernel::Rbf)
        };
        let (m, _) = fit_svr(&c, &xs, &ys).unwrap();
        assert_eq!(m.dual.len(), 2);
        assert!(m.dual.iter().all(|d| d.abs() == 2.0));
        assert!((m.predict(&[0.5]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn predict_examples() {
        let m = SvrModel {
            config: cfg(Kernel::Linear),
            support: vec![],
            dual: vec![],
            bias: 3.0,
        };
        assert_eq!(m.predict(&[1.0, 2.0]), 3.0);
        let m = SvrModel {
            config: cfg(Kernel::Linear),
            support: vec![vec![0.6, 0.8]],
            dual: vec![2.0],
            bias: 0.0,
        };
        assert!((m.predict(&[0.6, 0.8]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(fit_svr(&cfg(Kernel::Rbf), &[vec![1.0]], &[1.0]), Err(SvrError::Degenerate(_))));
        let bad = SvrConfig { c: 0.0, ..cfg(Kernel::Rbf) };
        assert!(matches!(fit_svr(&bad, &[vec![1.0], vec![2.0]], &[1.0, 2.0]), Err(SvrError::Config(_))));
    }

    #[test]
    fn sigmoid_kernel_reports_curvature() {
        let xs: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 - 10.0, (i % 3) as f64]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x[0] * 0.1).collect();
        let c = SvrConfig {
            gamma: 2.0,
            coef0: -1.0,
            c: 5.0,
            max_iterations: 2000,
            ..cfg(Kernel::Sigmoid)
        };
        let (m, _) = fit_svr(&c, &xs, &ys).unwrap();
        assert!(m.dual.iter().all(|d| d.abs() <= c.c));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn kkt_and_feasibility(
            rows in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 3..25),
            kernel in prop::sample::select(vec![Kernel::Linear, Kernel::Rbf, Kernel::Polynomial]),
            c in 0.1f64..20.0,
            eps in 0.0f64..0.3,
        ) {
            let xs: Vec<Vec<f64>> = rows.iter().map(|&(a, b)| vec![a, b]).collect();
            let ys: Vec<f64> = rows.iter().map(|&(a, b)| a * a - b + 0.3 * (3.0 * a).sin()).collect();
            let cfgv = SvrConfig { kernel, c, epsilon: eps, gamma: 0.5, coef0: 1.0, degree: 2, ..SvrConfig::default() };
            let (m, rep) = fit_svr(&cfgv, &xs, &ys).unwrap();
            prop_assert!(m.dual.iter().all(|d| d.abs() <= c && *d != 0.0));
            prop_assert!(m.dual.iter().sum::<f64>().abs() < 1e-8);
            if rep.converged {
                // Duplicate rows share one prediction, so check by position.
                let duals = duals_for(&m, &xs);
                let v = kkt_violations(&m, &xs, &ys, &duals);
                for e in v {
                    prop_assert!(e < cfgv.tolerance * 1.0001, "violation {}", e);
                }
            }
        }

        #[test]
        fn prediction_ignores_support_order(seed in 0u64..1000, x in prop::collection::vec(-1.0f64..1.0, 2)) {
            let xs: Vec<Vec<f64>> = (0..12).map(|i| vec![((i as u64 * 7 + seed) % 13) as f64 / 6.0 - 1.0, (i % 4) as f64 / 3.0]).collect();
            let ys: Vec<f64> = xs.iter().map(|v| (v[0] * 2.0).sin() + v[1]).collect();
            let (m, _) = fit_svr(&SvrConfig { epsilon: 0.05, c: 3.0, ..SvrConfig::default() }, &xs, &ys).unwrap();
            let mut rev = m.clone();
            rev.support.reverse();
            rev.dual.reverse();
            prop_assert!((m.predict(&x) - rev.predict(&x)).abs() < 1e-12);
        }
    }
}
