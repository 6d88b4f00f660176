//! A fitted latency model with its input/output transforms, hyperparameter
//! handling shared by training and tuning, and the on-disk container.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{fit_standardizer, Standardizer};
use crate::features::{rank_scored, Feature, FeatureVector, FEATURE_COUNT};
use crate::mlp::{self, Activation, MlpConfig, MlpModel};
use crate::ols::{self, OlsModel, StepwiseReport};
use crate::rng;
use crate::svr::{self, Kernel, SolverReport, SvrConfig, SvrModel};
use crate::trees::{self, GbtConfig, GbtModel, RfConfig, RfModel};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const CONTAINER_MAGIC: &str = "LATPROPH-PREDICTOR";
pub const CONTAINER_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ols,
    Mlp,
    Svr,
    Rf,
    Gbt,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [ModelKind::Ols, ModelKind::Mlp, ModelKind::Svr, ModelKind::Rf, ModelKind::Gbt];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Ols => "ols",
            ModelKind::Mlp => "mlp",
            ModelKind::Svr => "svr",
            ModelKind::Rf => "rf",
            ModelKind::Gbt => "gbt",
        }
    }

    /// Hyperparameter names accepted by [`ModelSpec::from_params`].
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            ModelKind::Ols => &["log_target", "order", "stepwise", "stop_delta"],
            ModelKind::Mlp => &[
                "activation",
                "batch_size",
                "epochs",
                "hidden_layers",
                "learning_rate",
                "log_features",
                "log_target",
                "momentum",
            ],
            ModelKind::Svr => &[
                "c",
                "coef0",
                "degree",
                "epsilon",
                "gamma",
                "kernel",
                "log_features",
                "log_target",
                "max_iterations",
                "tolerance",
            ],
            ModelKind::Rf => &[
                "bootstrap",
                "log_target",
                "max_depth",
                "max_features",
                "min_samples_leaf",
                "min_samples_split",
                "n_estimators",
            ],
            ModelKind::Gbt => &[
                "early_stopping_rounds",
                "lambda",
                "learning_rate",
                "log_target",
                "max_depth",
                "min_samples_leaf",
                "n_rounds",
                "subsample",
                "valid_fraction",
            ],
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = ParamError;
    fn from_str(s: &str) -> Result<Self, ParamError> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ParamError(format!("unknown model kind '{s}' (expected ols, mlp, svr, rf or gbt)")))
    }
}

/// One hyperparameter value as written in grid files and `--set` flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    IntList(Vec<i64>),
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Bool(b) => write!(f, "{b}"),
            ParamValue::Int(i) => write!(f, "{i}"),
            ParamValue::Float(x) => write!(f, "{x:?}"),
            ParamValue::Str(s) => f.write_str(s),
            ParamValue::IntList(v) => {
                let parts: Vec<String> = v.iter().map(|i| i.to_string()).collect();
                write!(f, "[{}]", parts.join(" "))
            }
        }
    }
}

impl FromStr for ParamValue {
    type Err = ParamError;
    /// `true`/`false`, integers, floats, `[a, b, ...]` integer lists, else a string.
    fn from_str(s: &str) -> Result<Self, ParamError> {
        let s = s.trim();
        if let Ok(b) = s.parse::<bool>() {
            return Ok(ParamValue::Bool(b));
        }
        if let Ok(i) = s.parse::<i64>() {
            return Ok(ParamValue::Int(i));
        }
        if let Ok(x) = s.parse::<f64>() {
            return Ok(ParamValue::Float(x));
        }
        if let Some(inner) = s.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            return inner
                .split([',', ' '])
                .filter(|p| !p.is_empty())
                .map(|p| p.parse::<i64>().map_err(|_| ParamError(format!("bad integer '{p}' in list '{s}'"))))
                .collect::<Result<Vec<_>, _>>()
                .map(ParamValue::IntList);
        }
        if s.is_empty() {
            return Err(ParamError("empty parameter value".into()));
        }
        Ok(ParamValue::Str(s.to_string()))
    }
}

pub type Params = BTreeMap<String, ParamValue>;

pub fn format_params(p: &Params) -> String {
    p.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct ParamError(pub String);

struct Reader<'a> {
    params: &'a Params,
}

impl Reader<'_> {
    fn get(&self, name: &str) -> Option<&ParamValue> {
        self.params.get(name)
    }

    fn float(&self, name: &str, default: f64) -> Result<f64, ParamError> {
        match self.get(name) {
            None => Ok(default),
            Some(ParamValue::Float(x)) => Ok(*x),
            Some(ParamValue::Int(i)) => Ok(*i as f64),
            Some(v) => Err(ParamError(format!("{name}: expected a number, got '{v}'"))),
        }
    }

    fn count(&self, name: &str, default: usize) -> Result<usize, ParamError> {
        match self.get(name) {
            None => Ok(default),
            Some(ParamValue::Int(i)) if *i >= 0 => Ok(*i as usize),
            Some(v) => Err(ParamError(format!("{name}: expected a non-negative integer, got '{v}'"))),
        }
    }

    fn flag(&self, name: &str, default: bool) -> Result<bool, ParamError> {
        match self.get(name) {
            None => Ok(default),
            Some(ParamValue::Bool(b)) => Ok(*b),
            Some(v) => Err(ParamError(format!("{name}: expected true or false, got '{v}'"))),
        }
    }

    fn text<T: FromStr<Err = String>>(&self, name: &str, default: T) -> Result<T, ParamError> {
        match self.get(name) {
            None => Ok(default),
            Some(ParamValue::Str(s)) => s.parse().map_err(|e| ParamError(format!("{name}: {e}"))),
            Some(v) => Err(ParamError(format!("{name}: expected a name, got '{v}'"))),
        }
    }

    /// Integer depth, or `none` for unbounded.
    fn depth(&self, name: &str, default: Option<usize>) -> Result<Option<usize>, ParamError> {
        match self.get(name) {
            None => Ok(default),
            Some(ParamValue::Str(s)) if s == "none" => Ok(None),
            Some(ParamValue::Int(i)) if *i >= 0 => Ok(Some(*i as usize)),
            Some(v) => Err(ParamError(format!("{name}: expected a depth or 'none', got '{v}'"))),
        }
    }

    fn layers(&self, name: &str, default: Vec<usize>) -> Result<Vec<usize>, ParamError> {
        match self.get(name) {
            None => Ok(default),
            Some(ParamValue::Int(i)) if *i > 0 => Ok(vec![*i as usize]),
            Some(ParamValue::IntList(v)) if v.iter().all(|&i| i > 0) => Ok(v.iter().map(|&i| i as usize).collect()),
            Some(v) => Err(ParamError(format!("{name}: expected a list of positive widths, got '{v}'"))),
        }
    }
}

/// Order in which stepwise OLS adds features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OlsOrder {
    /// The fixed feature order of [`Feature::ALL`].
    Canonical,
    /// Descending split-count importance of a boosted ensemble fit on the
    /// same training rows.
    Fscore,
}

impl FromStr for OlsOrder {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "canonical" => Ok(OlsOrder::Canonical),
            "fscore" => Ok(OlsOrder::Fscore),
            _ => Err(format!("unknown order '{s}' (expected canonical or fscore)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Algo {
    Ols { stepwise: bool, stop_delta: f64, order: OlsOrder },
    Mlp(MlpConfig),
    Svr(SvrConfig),
    Rf(RfConfig),
    Gbt { config: GbtConfig, valid_fraction: f64 },
}

/// Fully resolved training recipe for one model kind.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub algo: Algo,
    /// Fit on ln(latency) and exponentiate predictions.
    pub log_target: bool,
    /// Replace each feature x by ln(1 + x) before standardization.
    pub log_features: bool,
    pub params: Params,
}

impl ModelSpec {
    pub fn kind(&self) -> ModelKind {
        match self.algo {
            Algo::Ols { .. } => ModelKind::Ols,
            Algo::Mlp(_) => ModelKind::Mlp,
            Algo::Svr(_) => ModelKind::Svr,
            Algo::Rf(_) => ModelKind::Rf,
            Algo::Gbt { .. } => ModelKind::Gbt,
        }
    }

    /// Builds a spec from named hyperparameters; omitted names take defaults.
    pub fn from_params(kind: ModelKind, params: &Params) -> Result<Self, ParamError> {
        let allowed = kind.param_names();
        if let Some(bad) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(ParamError(format!(
                "unknown {kind} parameter '{bad}' (accepted: {})",
                allowed.join(", ")
            )));
        }
        let r = Reader { params };
        let log_target = r.flag("log_target", kind != ModelKind::Ols)?;
        let log_features = r.flag("log_features", false)?;
        let algo = match kind {
            ModelKind::Ols => Algo::Ols {
                stepwise: r.flag("stepwise", true)?,
                stop_delta: r.float("stop_delta", ols::DEFAULT_STOP_DELTA)?,
                order: r.text("order", OlsOrder::Canonical)?,
            },
            ModelKind::Mlp => {
                let d = MlpConfig::default();
                Algo::Mlp(MlpConfig {
                    hidden_layers: r.layers("hidden_layers", d.hidden_layers)?,
                    activation: r.text::<Activation>("activation", d.activation)?,
                    learning_rate: r.float("learning_rate", d.learning_rate)?,
                    epochs: r.count("epochs", d.epochs)?,
                    batch_size: r.count("batch_size", d.batch_size)?,
                    momentum: r.float("momentum", d.momentum)?,
                    seed: 0,
                    input_dim: FEATURE_COUNT,
                })
            }
            ModelKind::Svr => {
                let d = SvrConfig::default();
                Algo::Svr(SvrConfig {
                    kernel: r.text::<Kernel>("kernel", d.kernel)?,
                    gamma: r.float("gamma", d.gamma)?,
                    degree: r.count("degree", d.degree as usize)? as u32,
                    coef0: r.float("coef0", d.coef0)?,
                    c: r.float("c", d.c)?,
                    epsilon: r.float("epsilon", d.epsilon)?,
                    tolerance: r.float("tolerance", d.tolerance)?,
                    max_iterations: r.count("max_iterations", d.max_iterations)?,
                })
            }
            ModelKind::Rf => {
                let d = RfConfig::default();
                let leaf = r.count("min_samples_leaf", d.min_samples_leaf)?;
                Algo::Rf(RfConfig {
                    n_estimators: r.count("n_estimators", d.n_estimators)?,
                    max_depth: r.depth("max_depth", d.max_depth)?,
                    min_samples_leaf: leaf,
                    min_samples_split: r.count("min_samples_split", (2 * leaf).max(2))?,
                    max_features: r.count("max_features", d.max_features)?,
                    bootstrap: r.flag("bootstrap", d.bootstrap)?,
                    seed: 0,
                })
            }
            ModelKind::Gbt => {
                let d = GbtConfig::default();
                let valid_fraction = r.float("valid_fraction", 0.15)?;
                if !(valid_fraction > 0.0 && valid_fraction < 1.0) {
                    return Err(ParamError("valid_fraction must lie in (0, 1)".into()));
                }
                Algo::Gbt {
                    config: GbtConfig {
                        n_rounds: r.count("n_rounds", d.n_rounds)?,
                        learning_rate: r.float("learning_rate", d.learning_rate)?,
                        max_depth: r.depth("max_depth", d.max_depth)?,
                        min_samples_leaf: r.count("min_samples_leaf", d.min_samples_leaf)?,
                        lambda: r.float("lambda", d.lambda)?,
                        subsample: r.float("subsample", d.subsample)?,
                        early_stopping_rounds: r.count("early_stopping_rounds", d.early_stopping_rounds)?,
                        seed: 0,
                    },
                    valid_fraction,
                }
            }
        };
        Ok(ModelSpec {
            algo,
            log_target,
            log_features,
            params: params.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", content = "fit", rename_all = "lowercase")]
pub enum Payload {
    Ols(OlsModel),
    Mlp(MlpModel),
    Svr(SvrModel),
    Rf(RfModel),
    Gbt(GbtModel),
}

impl Payload {
    pub fn kind(&self) -> ModelKind {
        match self {
            Payload::Ols(_) => ModelKind::Ols,
            Payload::Mlp(_) => ModelKind::Mlp,
            Payload::Svr(_) => ModelKind::Svr,
            Payload::Rf(_) => ModelKind::Rf,
            Payload::Gbt(_) => ModelKind::Gbt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metadata {
    pub device: String,
    /// SHA-256 over the training rows and targets.
    pub train_fingerprint: String,
    /// Seconds since the Unix epoch, taken from `SOURCE_DATE_EPOCH` when set.
    pub created: Option<u64>,
    pub toolkit_version: String,
    pub training_time_s: Option<f64>,
    pub tuning_time_s: Option<f64>,
    pub stepwise: Option<StepwiseReport>,
    pub solver: Option<SolverReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedPredictor {
    pub kind: ModelKind,
    pub params: Params,
    pub log_target: bool,
    pub log_features: bool,
    pub standardizer: Option<Standardizer>,
    pub payload: Payload,
    pub metadata: Metadata,
}

fn transform_features(fv: &FeatureVector, log: bool) -> FeatureVector {
    if log {
        FeatureVector(fv.0.map(|v| v.ln_1p()))
    } else {
        *fv
    }
}

impl TrainedPredictor {
    /// Predicted latency in ms.
    pub fn predict(&self, fv: &FeatureVector) -> f64 {
        let raw = match &self.payload {
            Payload::Ols(m) => m.predict(&transform_features(fv, self.log_features)),
            Payload::Rf(m) => m.predict(&fv.0),
            Payload::Gbt(m) => m.predict(&fv.0),
            Payload::Mlp(m) => m.predict(&self.model_input(fv)),
            Payload::Svr(m) => m.predict(&self.model_input(fv)),
        };
        if self.log_target {
            raw.exp()
        } else {
            raw
        }
    }

    fn model_input(&self, fv: &FeatureVector) -> [f64; FEATURE_COUNT] {
        let t = transform_features(fv, self.log_features);
        match &self.standardizer {
            Some(s) => s.apply(&t),
            None => t.0,
        }
    }

    pub fn check(&self) -> Result<(), String> {
        if self.payload.kind() != self.kind {
            return Err(format!("payload is {} but kind is {}", self.payload.kind(), self.kind));
        }
        if matches!(self.kind, ModelKind::Mlp | ModelKind::Svr) && self.standardizer.is_none() {
            return Err(format!("{} predictor is missing its standardizer", self.kind));
        }
        Ok(())
    }

    /// Split counts per feature for boosted predictors.
    pub fn fscores(&self) -> Option<Vec<(Feature, u64)>> {
        match &self.payload {
            Payload::Gbt(m) => Some(
                m.feature_importance(FEATURE_COUNT)
                    .into_iter()
                    .enumerate()
                    .map(|(i, c)| (Feature::ALL[i], c))
                    .collect(),
            ),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("training data: {0}")]
    Data(String),
    #[error(transparent)]
    Ols(#[from] ols::OlsError),
    #[error(transparent)]
    Mlp(#[from] mlp::MlpError),
    #[error(transparent)]
    Svr(#[from] svr::SvrError),
    #[error(transparent)]
    Tree(#[from] trees::TreeError),
}

pub fn fingerprint_rows(rows: &[FeatureVector], targets: &[f64]) -> String {
    let mut h = Sha256::new();
    for (r, t) in rows.iter().zip(targets) {
        for v in r.0.iter().chain(std::iter::once(t)) {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

fn source_date_epoch() -> Option<u64> {
    std::env::var("SOURCE_DATE_EPOCH").ok()?.trim().parse().ok()
}

/// Ranks features by split count of a small boosted ensemble on `(xs, ys)`.
fn fscore_order(xs: &[Vec<f64>], ys: &[f64], seed: u64) -> Result<Vec<Feature>, FitError> {
    let cfg = GbtConfig {
        n_rounds: 100,
        max_depth: Some(3),
        seed,
        ..GbtConfig::default()
    };
    let m = trees::fit_gbt(&cfg, xs, ys, None)?;
    let scores: Vec<(Feature, f64)> = m
        .feature_importance(FEATURE_COUNT)
        .into_iter()
        .enumerate()
        .map(|(i, c)| (Feature::ALL[i], c as f64))
        .collect();
    Ok(rank_scored(&scores))
}

/// Trains one predictor on `rows`/`targets` (latencies in ms).
///
/// Boosting with early stopping holds out a seeded `valid_fraction` of the
/// rows as its validation set.
pub fn fit_predictor(spec: &ModelSpec, rows: &[FeatureVector], targets: &[f64], seed: u64) -> Result<TrainedPredictor, FitError> {
    if rows.len() != targets.len() {
        return Err(FitError::Data(format!("{} rows but {} targets", rows.len(), targets.len())));
    }
    if rows.is_empty() {
        return Err(FitError::Data("no training rows".into()));
    }
    if spec.log_target {
        if let Some(t) = targets.iter().find(|t| !(**t > 0.0)) {
            return Err(FitError::Data(format!("log target needs positive latencies, got {t}")));
        }
    }
    let ys: Vec<f64> = if spec.log_target {
        targets.iter().map(|t| t.ln()).collect()
    } else {
        targets.to_vec()
    };
    let trows: Vec<FeatureVector> = rows.iter().map(|r| transform_features(r, spec.log_features)).collect();
    let raw: Vec<Vec<f64>> = rows.iter().map(|r| r.0.to_vec()).collect();
    let mut metadata = Metadata {
        train_fingerprint: fingerprint_rows(rows, targets),
        created: source_date_epoch(),
        toolkit_version: TOOLKIT_VERSION.to_string(),
        ..Metadata::default()
    };
    let mut standardizer = None;
    let mut standardized = || -> Result<Vec<Vec<f64>>, FitError> {
        let idx: Vec<usize> = (0..trows.len()).collect();
        let s = fit_standardizer(&trows, &idx).map_err(|e| FitError::Data(e.to_string()))?;
        let z = trows.iter().map(|r| s.apply(r).to_vec()).collect();
        standardizer = Some(s);
        Ok(z)
    };

    let payload = match &spec.algo {
        Algo::Ols {
            stepwise,
            stop_delta,
            order,
        } => {
            let order = match order {
                OlsOrder::Canonical => Feature::ALL.to_vec(),
                OlsOrder::Fscore => fscore_order(&raw, &ys, seed)?,
            };
            if *stepwise {
                let (m, report) = ols::stepwise_select(&trows, &ys, &order, *stop_delta)?;
                metadata.stepwise = Some(report);
                Payload::Ols(m)
            } else {
                Payload::Ols(ols::fit_ols(&trows, &ys, &order)?)
            }
        }
        Algo::Mlp(cfg) => {
            let z = standardized()?;
            let cfg = MlpConfig { seed, ..cfg.clone() };
            let (m, _) = mlp::train_mlp(&cfg, &z, &ys, None)?;
            Payload::Mlp(m)
        }
        Algo::Svr(cfg) => {
            let z = standardized()?;
            let (m, report) = svr::fit_svr(cfg, &z, &ys)?;
            metadata.solver = Some(report);
            Payload::Svr(m)
        }
        Algo::Rf(cfg) => Payload::Rf(trees::fit_rf(&RfConfig { seed, ..cfg.clone() }, &raw, &ys)?),
        Algo::Gbt { config, valid_fraction } => {
            let cfg = GbtConfig { seed, ..config.clone() };
            if cfg.early_stopping_rounds > 0 {
                let n = raw.len();
                let n_valid = ((n as f64 * valid_fraction).round() as usize).clamp(1, n.saturating_sub(2).max(1));
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut rng::stream(seed, 0xE57));
                let (v, t) = order.split_at(n_valid);
                let mut t = t.to_vec();
                let mut v = v.to_vec();
                t.sort_unstable();
                v.sort_unstable();
                let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<f64>) {
                    (idx.iter().map(|&i| raw[i].clone()).collect(), idx.iter().map(|&i| ys[i]).collect())
                };
                let (tx, ty) = pick(&t);
                let (vx, vy) = pick(&v);
                Payload::Gbt(trees::fit_gbt(&cfg, &tx, &ty, Some((&vx, &vy)))?)
            } else {
                Payload::Gbt(trees::fit_gbt(&cfg, &raw, &ys, None)?)
            }
        }
    };
    Ok(TrainedPredictor {
        kind: spec.kind(),
        params: spec.params.clone(),
        log_target: spec.log_target,
        log_features: spec.log_features,
        standardizer,
        payload,
        metadata,
    })
}

// ---------------------------------------------------------------------------
// Container

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a predictor container: {0}")]
    Format(String),
    #[error("container format version {found} is not supported (this build reads version {supported})")]
    Version { found: u32, supported: u32 },
    #[error("checksum mismatch: {0}")]
    Checksum(String),
}

/// Text header (magic, version, kind, payload length, SHA-256), a blank
/// line, then the JSON-encoded predictor.
pub fn encode_predictor(p: &TrainedPredictor) -> String {
    let body = serde_json::to_string(p).expect("predictor serializes");
    let digest = hex::encode(Sha256::digest(body.as_bytes()));
    format!(
        "{CONTAINER_MAGIC}\nversion: {CONTAINER_VERSION}\nkind: {}\nlength: {}\nsha256: {digest}\n\n{body}\n",
        p.kind,
        body.len()
    )
}

pub fn decode_predictor(text: &str) -> Result<TrainedPredictor, ContainerError> {
    let (header, rest) = text
        .split_once("\n\n")
        .ok_or_else(|| ContainerError::Checksum("missing payload".into()))?;
    let mut lines = header.lines();
    if lines.next() != Some(CONTAINER_MAGIC) {
        return Err(ContainerError::Format(format!("expected first line '{CONTAINER_MAGIC}'")));
    }
    let mut fields = BTreeMap::new();
    for line in lines {
        let (k, v) = line
            .split_once(": ")
            .ok_or_else(|| ContainerError::Format(format!("bad header line '{line}'")))?;
        fields.insert(k, v);
    }
    let field = |k: &str| fields.get(k).copied().ok_or_else(|| ContainerError::Format(format!("missing '{k}'")));
    let found: u32 = field("version")?
        .parse()
        .map_err(|_| ContainerError::Format("bad version".into()))?;
    if found != CONTAINER_VERSION {
        return Err(ContainerError::Version {
            found,
            supported: CONTAINER_VERSION,
        });
    }
    let length: usize = field("length")?
        .parse()
        .map_err(|_| ContainerError::Format("bad length".into()))?;
    let body = rest.strip_suffix('\n').unwrap_or(rest);
    if body.len() != length {
        return Err(ContainerError::Checksum(format!("payload is {} bytes, header says {length}", body.len())));
    }
    if hex::encode(Sha256::digest(body.as_bytes())) != field("sha256")? {
        return Err(ContainerError::Checksum("payload digest differs from header".into()));
    }
    let p: TrainedPredictor =
        serde_json::from_str(body).map_err(|e| ContainerError::Format(format!("payload: {e}")))?;
    if field("kind")? != p.kind.name() {
        return Err(ContainerError::Format("header kind differs from payload".into()));
    }
    p.check().map_err(ContainerError::Format)?;
    Ok(p)
}

pub fn save_predictor(p: &TrainedPredictor, path: &Path) -> Result<(), ContainerError> {
    std::fs::write(path, encode_predictor(p)).map_err(|source| ContainerError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_predictor(path: &Path) -> Result<TrainedPredictor, ContainerError> {
    let text = std::fs::read_to_string(path).map_err(|source| ContainerError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_predictor(&text)
}
