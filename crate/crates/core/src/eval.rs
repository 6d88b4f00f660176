//! Per-space accuracy reports, predicted-vs-measured export and
//! prediction-latency benchmarking.

use std::fmt;
use std::hint::black_box;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, Space, SplitPlan};
use crate::features::{FeatureVector, FEATURE_COUNT};
use crate::metrics::{self, MetricError};
use crate::predictor::{Payload, TrainedPredictor};

/// Anything that maps a feature vector to a latency in ms.
pub trait Predict {
    fn predict_ms(&self, fv: &FeatureVector) -> f64;

    /// Regressor count used for adjusted R².
    fn regressor_count(&self) -> usize {
        FEATURE_COUNT
    }

    fn label(&self) -> String {
        "custom".to_string()
    }

    fn device(&self) -> String {
        String::new()
    }

    fn training_time_s(&self) -> Option<f64> {
        None
    }

    fn tuning_time_s(&self) -> Option<f64> {
        None
    }
}

impl Predict for TrainedPredictor {
    fn predict_ms(&self, fv: &FeatureVector) -> f64 {
        self.predict(fv)
    }

    fn regressor_count(&self) -> usize {
        match &self.payload {
            Payload::Ols(m) => m.features.len(),
            _ => FEATURE_COUNT,
        }
    }

    fn label(&self) -> String {
        self.kind.name().to_string()
    }

    fn device(&self) -> String {
        self.metadata.device.clone()
    }

    fn training_time_s(&self) -> Option<f64> {
        self.metadata.training_time_s
    }

    fn tuning_time_s(&self) -> Option<f64> {
        self.metadata.tuning_time_s
    }
}

impl<F: Fn(&FeatureVector) -> f64> Predict for F {
    fn predict_ms(&self, fv: &FeatureVector) -> f64 {
        self(fv)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("test space {0} is empty")]
    EmptySpace(Space),
    #[error("plan index {index} is out of range for a dataset of {len} records")]
    PlanMismatch { index: usize, len: usize },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("benchmark needs reps >= 100, got {0}")]
    TooFewReps(usize),
    #[error("benchmark needs at least one row")]
    NoRows,
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for EvalError {
    fn from(e: std::io::Error) -> Self {
        EvalError::Io(e.to_string())
    }
}

impl From<csv::Error> for EvalError {
    fn from(e: csv::Error) -> Self {
        EvalError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceMetrics {
    pub space: Space,
    pub count: usize,
    pub mape_percent: f64,
    pub mape_ci95: f64,
    /// `None` when the group is too small or its targets are constant.
    pub adjusted_r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub host: String,
    pub reps: usize,
    pub calls: usize,
    pub mean_ns: f64,
    pub p50_ns: u64,
    pub p99_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub device: String,
    pub spaces: Vec<SpaceMetrics>,
    pub training_time_s: Option<f64>,
    pub tuning_time_s: Option<f64>,
    pub prediction_latency: Option<LatencyStats>,
}

impl EvalReport {
    pub fn space(&self, space: Space) -> Option<&SpaceMetrics> {
        self.spaces.iter().find(|m| m.space == space)
    }

    pub const CSV_COLUMNS: [&'static str; 13] = [
        "model",
        "device",
        "space",
        "count",
        "mape_percent",
        "mape_ci95",
        "adjusted_r2",
        "training_time_s",
        "tuning_time_s",
        "latency_host",
        "latency_mean_ns",
        "latency_p50_ns",
        "latency_p99_ns",
    ];

    /// One row per space; unmeasured fields are written as `n/a`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_COLUMNS)?;
        let lat = self.prediction_latency.as_ref();
        for m in &self.spaces {
            w.write_record([
                self.model.clone(),
                self.device.clone(),
                m.space.name().to_string(),
                m.count.to_string(),
                m.mape_percent.to_string(),
                m.mape_ci95.to_string(),
                opt(m.adjusted_r2),
                opt(self.training_time_s),
                opt(self.tuning_time_s),
                lat.map_or(NA.to_string(), |l| l.host.clone()),
                opt(lat.map(|l| l.mean_ns)),
                opt(lat.map(|l| l.p50_ns)),
                opt(lat.map(|l| l.p99_ns)),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

const NA: &str = "n/a";

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or(NA.to_string(), |v| v.to_string())
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "model: {}  device: {}", self.model, self.device)?;
        writeln!(f, "{:<6}{:>8}{:>12}{:>10}{:>12}", "space", "count", "MAPE %", "±CI95", "adj. R²")?;
        for m in &self.spaces {
            let r2 = m.adjusted_r2.map_or(NA.to_string(), |v| format!("{v:.4}"));
            writeln!(
                f,
                "{:<6}{:>8}{:>12.2}{:>10.2}{:>12}",
                m.space.name(),
                m.count,
                m.mape_percent,
                m.mape_ci95,
                r2
            )?;
        }
        let secs = |v: Option<f64>| v.map_or(NA.to_string(), |s| format!("{s:.3} s"));
        writeln!(f, "training time: {}", secs(self.training_time_s))?;
        writeln!(f, "tuning time:   {}", secs(self.tuning_time_s))?;
        match &self.prediction_latency {
            Some(l) => write!(
                f,
                "prediction latency ({}): mean {:.1} ns, p50 {} ns, p99 {} ns",
                l.host, l.mean_ns, l.p50_ns, l.p99_ns
            ),
            None => write!(f, "prediction latency: {NA}"),
        }
    }
}

fn check_plan(ds: &Dataset, plan: &SplitPlan) -> Result<(), EvalError> {
    for space in Space::ALL {
        let idx = plan.test(space);
        if idx.is_empty() {
            return Err(EvalError::EmptySpace(space));
        }
        if let Some(&index) = idx.iter().find(|&&i| i >= ds.len()) {
            return Err(EvalError::PlanMismatch { index, len: ds.len() });
        }
    }
    Ok(())
}

/// Scores `p` on each test space of `plan`. Train rows are never touched.
pub fn evaluate<P: Predict + ?Sized>(
    p: &P,
    ds: &Dataset,
    plan: &SplitPlan,
) -> Result<EvalReport, EvalError> {
    check_plan(ds, plan)?;
    let mut spaces = Vec::with_capacity(3);
    for space in Space::ALL {
        let idx = plan.test(space);
        let y: Vec<f64> = idx.iter().map(|&i| ds.get(i).latency_ms).collect();
        let pred: Vec<f64> = idx.iter().map(|&i| p.predict_ms(&ds.get(i).features)).collect();
        let a = metrics::apes(&y, &pred)?;
        let (mape_percent, mape_ci95) = if a.len() >= 2 {
            metrics::mape_ci95(&a)?
        } else {
            (a[0], 0.0)
        };
        let adjusted_r2 = metrics::adjusted_r2(&y, &pred, p.regressor_count()).ok();
        spaces.push(SpaceMetrics {
            space,
            count: idx.len(),
            mape_percent,
            mape_ci95,
            adjusted_r2,
        });
    }
    Ok(EvalReport {
        model: p.label(),
        device: p.device(),
        spaces,
        training_time_s: p.training_time_s(),
        tuning_time_s: p.tuning_time_s(),
        prediction_latency: None,
    })
}

pub const SCATTER_COLUMNS: [&str; 6] = [
    "space",
    "model_name",
    "variant",
    "input_size",
    "measured_ms",
    "predicted_ms",
];

/// Writes predicted-vs-measured rows for every test record, grouped by
/// space. Returns the number of rows written.
pub fn write_scatter<P: Predict + ?Sized, W: Write>(
    p: &P,
    ds: &Dataset,
    plan: &SplitPlan,
    out: W,
) -> Result<usize, EvalError> {
    check_plan(ds, plan)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SCATTER_COLUMNS)?;
    let mut rows = 0;
    for space in Space::ALL {
        for &i in plan.test(space) {
            let r = ds.get(i);
            w.write_record([
                space.name().to_string(),
                r.model_name.clone(),
                r.variant.clone(),
                r.input_size.to_string(),
                r.latency_ms.to_string(),
                p.predict_ms(&r.features).to_string(),
            ])?;
            rows += 1;
        }
    }
    w.flush()?;
    Ok(rows)
}

pub fn export_scatter<P: Predict + ?Sized>(
    p: &P,
    ds: &Dataset,
    plan: &SplitPlan,
    path: &Path,
) -> Result<usize, EvalError> {
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    let n = write_scatter(p, ds, plan, &mut out)?;
    out.flush()?;
    Ok(n)
}

/// Architecture, OS and hostname of the machine running the benchmark.
pub fn host_tag() -> String {
    let host = std::fs::read_to_string("/proc/sys/kernel/hostname")
        .ok()
        .or_else(|| std::env::var("HOSTNAME").ok())
        .or_else(|| std::env::var("COMPUTERNAME").ok())
        .map(|h| h.trim().to_string())
        .filter(|h| !h.is_empty())
        .unwrap_or_else(|| "unknown".to_string());
    format!("{}-{}/{}", std::env::consts::ARCH, std::env::consts::OS, host)
}

pub const MIN_BENCH_REPS: usize = 100;

/// Times `reps` passes of single-row predictions over `rows`, after one
/// untimed warm-up pass. Runs on the calling thread only.
pub fn bench_latency<P: Predict + ?Sized>(
    p: &P,
    rows: &[FeatureVector],
    reps: usize,
) -> Result<LatencyStats, EvalError> {
    if reps < MIN_BENCH_REPS {
        return Err(EvalError::TooFewReps(reps));
    }
    if rows.is_empty() {
        return Err(EvalError::NoRows);
    }
    for x in rows {
        black_box(p.predict_ms(black_box(x)));
    }
    let mut samples = Vec::with_capacity(reps * rows.len());
    for _ in 0..reps {
        for x in rows {
            let t0 = Instant::now();
            black_box(p.predict_ms(black_box(x)));
            samples.push(t0.elapsed().as_nanos() as u64);
        }
    }
    let calls = samples.len();
    let mean_ns = samples.iter().map(|&s| s as f64).sum::<f64>() / calls as f64;
    samples.sort_unstable();
    Ok(LatencyStats {
        host: host_tag(),
        reps,
        calls,
        mean_ns,
        p50_ns: percentile(&samples, 0.50),
        p99_ns: percentile(&samples, 0.99),
    })
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[u64], q: f64) -> u64 {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}
