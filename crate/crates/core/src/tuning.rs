//! Exhaustive hyperparameter grid search scored by K-fold cross-validated
//! MAPE.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureVector;
use crate::metrics;
use crate::predictor::{self, fit_predictor, format_params, ModelKind, ModelSpec, ParamValue, Params, TrainedPredictor};
use crate::rng;

#[derive(Debug, Error)]
pub enum TuneError {
    #[error("invalid fold setup: {0}")]
    Config(String),
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("all {0} configurations failed; first failure: {1}")]
    AllConfigsFailed(usize, String),
    #[error("refitting the winning configuration failed: {0}")]
    Refit(#[from] predictor::FitError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub model_kind: ModelKind,
    pub axes: BTreeMap<String, Vec<ParamValue>>,
}

impl HyperGrid {
    pub fn validate(&self) -> Result<(), TuneError> {
        let allowed = self.model_kind.param_names();
        for (name, values) in &self.axes {
            if !allowed.contains(&name.as_str()) {
                return Err(TuneError::Grid(format!(
                    "'{name}' is not a {} parameter (accepted: {})",
                    self.model_kind,
                    allowed.join(", ")
                )));
            }
            if values.is_empty() {
                return Err(TuneError::Grid(format!("axis '{name}' has no values")));
            }
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.axes.values().map(Vec::len).product()
    }

    /// Parses a TOML grid: `model_kind = "gbt"` plus an `[axes]` table of arrays.
    pub fn from_toml(text: &str) -> Result<Self, TuneError> {
        let g: HyperGrid = toml::from_str(text).map_err(|e| TuneError::Grid(e.to_string()))?;
        g.validate()?;
        Ok(g)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("grid serializes")
    }
}

/// Cartesian product over axes in name order; the last axis varies fastest.
pub fn grid_expand(g: &HyperGrid) -> Vec<Params> {
    let axes: Vec<(&String, &Vec<ParamValue>)> = g.axes.iter().collect();
    let mut out = Vec::with_capacity(g.size());
    let mut pos = vec![0usize; axes.len()];
    loop {
        out.push(
            axes.iter()
                .zip(&pos)
                .map(|((name, vals), &i)| ((*name).clone(), vals[i].clone()))
                .collect(),
        );
        let mut a = axes.len();
        loop {
            if a == 0 {
                return out;
            }
            a -= 1;
            pos[a] += 1;
            if pos[a] < axes[a].1.len() {
                break;
            }
            pos[a] = 0;
        }
    }
}

/// Seeded shuffle of `0..n`, cut into `k` contiguous folds; the first
/// `n % k` folds hold one extra index.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, TuneError> {
    if k < 2 {
        return Err(TuneError::Config(format!("K-fold needs k >= 2, got k = {k}")));
    }
    if k > n {
        return Err(TuneError::Config(format!("K-fold needs k <= n, got k = {k} with {n} rows")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, 0xF01D));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(idx[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub index: usize,
    pub params: Params,
    /// Per-fold validation MAPE; empty when the configuration failed.
    pub fold_mape: Vec<f64>,
    pub mean_mape: Option<f64>,
    pub std_mape: Option<f64>,
    pub error: Option<String>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub model_kind: ModelKind,
    pub fold_count: usize,
    pub total_configs: usize,
    pub best_index: usize,
    pub rows: Vec<CvRow>,
    pub wall_time_s: f64,
    /// Time spent refitting the winner on all rows.
    pub refit_time_s: f64,
}

impl CvReport {
    pub fn best(&self) -> &CvRow {
        &self.rows[self.best_index]
    }

    /// CSV with one row per configuration. Wall times are included only when
    /// `timings` is set so that reports are reproducible byte for byte.
    pub fn to_csv(&self, timings: bool) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let mut header = vec!["config", "params", "mean_mape", "std_mape", "status", "best"];
        if timings {
            header.push("wall_time_s");
        }
        w.write_record(&header).expect("in-memory write");
        for r in &self.rows {
            let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            let mut rec = vec![
                r.index.to_string(),
                format_params(&r.params),
                num(r.mean_mape),
                num(r.std_mape),
                r.error.as_ref().map_or("ok".to_string(), |e| format!("failed: {e}")),
                (r.index == self.best_index).to_string(),
            ];
            if timings {
                rec.push(r.wall_time_s.to_string());
            }
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchOptions {
    pub k: usize,
    pub seed: u64,
    /// Worker threads for configuration-level parallelism; 1 is sequential.
    pub jobs: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions { k: 5, seed: 42, jobs: 1 }
    }
}

pub fn config_seed(seed: u64, index: usize) -> u64 {
    rng::derive_seed(seed, 0xC0F1_0000 + index as u64)
}

fn evaluate_config(
    kind: ModelKind,
    index: usize,
    params: &Params,
    rows: &[FeatureVector],
    targets: &[f64],
    folds: &[Vec<usize>],
    seed: u64,
) -> CvRow {
    let start = Instant::now();
    let mut row = CvRow {
        index,
        params: params.clone(),
        fold_mape: Vec::new(),
        mean_mape: None,
        std_mape: None,
        error: None,
        wall_time_s: 0.0,
    };
    let result = (|| -> Result<Vec<f64>, String> {
        let spec = ModelSpec::from_params(kind, params).map_err(|e| e.to_string())?;
        let cseed = config_seed(seed, index);
        let mut scores = Vec::with_capacity(folds.len());
        for (f, held) in folds.iter().enumerate() {
            let mut train: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, v)| v.iter().copied())
                .collect();
            train.sort_unstable();
            let tx: Vec<FeatureVector> = train.iter().map(|&i| rows[i]).collect();
            let ty: Vec<f64> = train.iter().map(|&i| targets[i]).collect();
            let p = fit_predictor(&spec, &tx, &ty, cseed).map_err(|e| e.to_string())?;
            let vy: Vec<f64> = held.iter().map(|&i| targets[i]).collect();
            let pred: Vec<f64> = held.iter().map(|&i| p.predict(&rows[i])).collect();
            if let Some(bad) = pred.iter().find(|v| !v.is_finite()) {
                return Err(format!("non-finite prediction {bad}"));
            }
            scores.push(metrics::mape(&vy, &pred).map_err(|e| e.to_string())?);
        }
        Ok(scores)
    })();
    match result {
        Ok(scores) => {
            let n = scores.len() as f64;
            let mean = scores.iter().sum::<f64>() / n;
            let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
            row.fold_mape = scores;
            row.mean_mape = Some(mean);
            row.std_mape = Some(var.sqrt());
        }
        Err(e) => {
            log::info!("{kind} config {index} failed: {e}");
            row.error = Some(e);
        }
    }
    row.wall_time_s = start.elapsed().as_secs_f64();
    row
}

/// Cross-validates every configuration of `grid` on the given training rows
/// only, then refits the configuration with the lowest mean MAPE (first in
/// enumeration order on ties) on all of them.
///
/// Each configuration's seed depends only on `(seed, index)`, so results do
/// not depend on `jobs`.
pub fn grid_search(
    grid: &HyperGrid,
    rows: &[FeatureVector],
    targets: &[f64],
    opts: SearchOptions,
) -> Result<(TrainedPredictor, CvReport), TuneError> {
    grid.validate()?;
    if rows.len() != targets.len() {
        return Err(TuneError::Config(format!("{} rows but {} targets", rows.len(), targets.len())));
    }
    let start = Instant::now();
    let folds = kfold_split(rows.len(), opts.k, opts.seed)?;
    let configs = grid_expand(grid);
    let run = |(i, p): (usize, &Params)| evaluate_config(grid.model_kind, i, p, rows, targets, &folds, opts.seed);
    let cv_rows: Vec<CvRow> = if opts.jobs <= 1 {
        configs.iter().enumerate().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| TuneError::Config(e.to_string()))?;
        pool.install(|| configs.par_iter().enumerate().map(run).collect())
    };

    let mut best: Option<(usize, f64)> = None;
    for r in &cv_rows {
        if let Some(m) = r.mean_mape {
            if best.is_none_or(|(_, b)| m < b) {
                best = Some((r.index, m));
            }
        }
    }
    let Some((best_index, _)) = best else {
        let first = cv_rows.iter().find_map(|r| r.error.clone()).unwrap_or_default();
        return Err(TuneError::AllConfigsFailed(cv_rows.len(), first));
    };
    let spec = ModelSpec::from_params(grid.model_kind, &configs[best_index]).map_err(predictor::FitError::from)?;
    let refit_start = Instant::now();
    let winner = fit_predictor(&spec, rows, targets, config_seed(opts.seed, best_index))?;
    let refit_time_s = refit_start.elapsed().as_secs_f64();
    let report = CvReport {
        model_kind: grid.model_kind,
        fold_count: opts.k,
        total_configs: configs.len(),
        best_index,
        rows: cv_rows,
        wall_time_s: start.elapsed().as_secs_f64(),
        refit_time_s,
    };
    Ok((winner, report))
}

fn axis(values: &[ParamValue]) -> Vec<ParamValue> {
    values.to_vec()
}

fn ints(v: &[i64]) -> Vec<ParamValue> {
    v.iter().map(|&i| ParamValue::Int(i)).collect()
}

fn floats(v: &[f64]) -> Vec<ParamValue> {
    v.iter().map(|&x| ParamValue::Float(x)).collect()
}

fn strs(v: &[&str]) -> Vec<ParamValue> {
    v.iter().map(|s| ParamValue::Str(s.to_string())).collect()
}

/// The shipped search spaces. They are deliberately small so that tuning
/// all five kinds on a ~2000-row corpus takes minutes on one core.
pub fn default_grid(kind: ModelKind) -> HyperGrid {
    let mut axes = BTreeMap::new();
    let mut put = |k: &str, v: Vec<ParamValue>| {
        axes.insert(k.to_string(), v);
    };
    match kind {
        ModelKind::Ols => {
            put("order", strs(&["canonical", "fscore"]));
            put("stop_delta", floats(&[0.0, 0.0005, 0.005]));
        }
        ModelKind::Mlp => {
            put(
                "hidden_layers",
                axis(&[ParamValue::IntList(vec![128, 64]), ParamValue::IntList(vec![128, 128])]),
            );
            put("activation", strs(&["tanh", "relu"]));
            put("learning_rate", floats(&[0.003, 0.01]));
            put("epochs", ints(&[150]));
            put("batch_size", ints(&[32]));
        }
        ModelKind::Svr => {
            put("kernel", strs(&["linear", "rbf"]));
            put("c", floats(&[1.0, 10.0, 100.0]));
            put("epsilon", floats(&[0.01, 0.05]));
            put("gamma", floats(&[0.05, 0.2]));
        }
        ModelKind::Rf => {
            put("n_estimators", ints(&[200]));
            put("max_depth", axis(&[ParamValue::Str("none".into()), ParamValue::Int(12)]));
            put("max_features", ints(&[4, 8]));
        }
        ModelKind::Gbt => {
            put("n_rounds", ints(&[300]));
            put("learning_rate", floats(&[0.1, 0.2]));
            put("max_depth", ints(&[3, 5]));
            put("lambda", floats(&[1.0]));
            put("subsample", floats(&[0.8, 1.0]));
            put("early_stopping_rounds", ints(&[20]));
        }
    }
    HyperGrid { model_kind: kind, axes }
}
