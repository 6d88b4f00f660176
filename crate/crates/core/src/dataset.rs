//! Measurement records, the per-device dataset, novelty-aware train/test
//! splits and feature standardization.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::features::{Feature, FeatureVector, FEATURE_COUNT};
use crate::rng;

/// Leading CSV columns; the 11 feature columns follow in canonical order.
pub const META_COLUMNS: [&str; 8] = [
    "model_name",
    "family",
    "variant",
    "input_size",
    "device",
    "replicates",
    "latency_ms",
    "latency_std_ms",
];

pub fn csv_header() -> Vec<&'static str> {
    META_COLUMNS
        .iter()
        .copied()
        .chain(Feature::ALL.iter().map(|f| f.name()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub model_name: String,
    pub family: String,
    pub variant: String,
    pub input_size: u64,
    pub device: String,
    pub features: FeatureVector,
    /// Mean inference time over `replicates` runs.
    pub latency_ms: f64,
    pub latency_std_ms: f64,
    pub replicates: u32,
}

impl MeasurementRecord {
    fn check(&self) -> Result<(), String> {
        if !(self.latency_ms > 0.0 && self.latency_ms.is_finite()) {
            return Err(format!("latency_ms must be > 0, got {}", self.latency_ms));
        }
        if !(self.latency_std_ms >= 0.0 && self.latency_std_ms.is_finite()) {
            return Err(format!("latency_std_ms must be >= 0, got {}", self.latency_std_ms));
        }
        if self.replicates < 1 {
            return Err("replicates must be >= 1".to_string());
        }
        if self.features[Feature::InputImageSize] != self.input_size as f64 {
            return Err(format!(
                "input_image_size {} does not match input_size {}",
                self.features[Feature::InputImageSize],
                self.input_size
            ));
        }
        if let Some(f) = Feature::ALL
            .iter()
            .find(|&&f| !(self.features[f] >= 0.0 && self.features[f].is_finite()))
        {
            return Err(format!("feature {f} must be finite and >= 0"));
        }
        Ok(())
    }

    fn key(&self) -> (&str, &str, u64) {
        (&self.model_name, &self.variant, self.input_size)
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("row {row}: schema error: {message}")]
    Schema { row: u64, message: String },
    #[error("row {row}: {message}")]
    Invariant { row: u64, message: String },
}

/// All measurements of one device.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub device: String,
    records: Vec<MeasurementRecord>,
}

impl Dataset {
    /// Validates and wraps records. Errors report 1-based record positions.
    pub fn new(device: impl Into<String>, records: Vec<MeasurementRecord>) -> Result<Self, DatasetError> {
        let device = device.into();
        let mut keys = BTreeSet::new();
        for (i, r) in records.iter().enumerate() {
            let row = i as u64 + 1;
            r.check().map_err(|message| DatasetError::Invariant { row, message })?;
            if r.device != device {
                return Err(DatasetError::Invariant {
                    row,
                    message: format!("device '{}' differs from dataset device '{device}'", r.device),
                });
            }
            if !keys.insert(r.key()) {
                return Err(DatasetError::Invariant {
                    row,
                    message: format!(
                        "duplicate key ({}, {}, {})",
                        r.model_name, r.variant, r.input_size
                    ),
                });
            }
        }
        Ok(Dataset { device, records })
    }

    pub fn records(&self) -> &[MeasurementRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, i: usize) -> &MeasurementRecord {
        &self.records[i]
    }

    pub fn features_at(&self, idx: &[usize]) -> Vec<FeatureVector> {
        idx.iter().map(|&i| self.records[i].features).collect()
    }

    pub fn latencies_at(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().map(|&i| self.records[i].latency_ms).collect()
    }

    /// SHA-256 of the canonical CSV serialization.
    pub fn fingerprint(&self) -> String {
        let mut buf = Vec::new();
        write_csv(self, &mut buf).expect("in-memory write");
        hex::encode(Sha256::digest(&buf))
    }

    /// SHA-256 over the canonical CSV rows at `idx`, in order.
    pub fn subset_fingerprint(&self, idx: &[usize]) -> String {
        let mut h = Sha256::new();
        for &i in idx {
            h.update(format_row(&self.records[i]).join(",").as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

fn format_row(r: &MeasurementRecord) -> Vec<String> {
    let mut row = vec![
        r.model_name.clone(),
        r.family.clone(),
        r.variant.clone(),
        r.input_size.to_string(),
        r.device.clone(),
        r.replicates.to_string(),
        r.latency_ms.to_string(),
        r.latency_std_ms.to_string(),
    ];
    row.extend(r.features.0.iter().map(|v| v.to_string()));
    row
}

pub fn write_csv<W: Write>(ds: &Dataset, out: W) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(csv_header())?;
    for r in &ds.records {
        w.write_record(format_row(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_measurements(ds: &Dataset, path: &Path) -> Result<(), DatasetError> {
    let io_err = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    write_csv(ds, std::io::BufWriter::new(file)).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(source),
        other => DatasetError::Schema {
            row: 0,
            message: format!("{other:?}"),
        },
    })
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, col: usize, row: u64) -> Result<T, DatasetError>
where
    T::Err: std::fmt::Display,
{
    let raw = &rec[col];
    raw.parse().map_err(|e| DatasetError::Schema {
        row,
        message: format!("column '{}': cannot parse {raw:?}: {e}", csv_header()[col]),
    })
}

/// Parses measurement CSV text. Row numbers in errors are file line numbers.
pub fn read_csv<R: Read>(input: R) -> Result<Dataset, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let header = rdr.headers().map_err(|e| DatasetError::Schema {
        row: 1,
        message: e.to_string(),
    })?;
    let expected = csv_header();
    if header.iter().collect::<Vec<_>>() != expected {
        let missing: Vec<_> = expected.iter().filter(|c| !header.iter().any(|h| h == **c)).collect();
        return Err(DatasetError::Schema {
            row: 1,
            message: if missing.is_empty() {
                format!("header must be exactly: {}", expected.join(","))
            } else {
                format!("missing column(s): {missing:?}")
            },
        });
    }

    let mut records = Vec::new();
    let mut device: Option<String> = None;
    let mut keys = BTreeSet::new();
    for result in rdr.records() {
        let rec = result.map_err(|e| DatasetError::Schema {
            row: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let row = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != expected.len() {
            return Err(DatasetError::Schema {
                row,
                message: format!("expected {} fields, found {}", expected.len(), rec.len()),
            });
        }
        let mut features = FeatureVector::default();
        for i in 0..FEATURE_COUNT {
            features.0[i] = parse_field(&rec, META_COLUMNS.len() + i, row)?;
        }
        let r = MeasurementRecord {
            model_name: rec[0].to_string(),
            family: rec[1].to_string(),
            variant: rec[2].to_string(),
            input_size: parse_field(&rec, 3, row)?,
            device: rec[4].to_string(),
            replicates: parse_field(&rec, 5, row)?,
            latency_ms: parse_field(&rec, 6, row)?,
            latency_std_ms: parse_field(&rec, 7, row)?,
            features,
        };
        r.check().map_err(|message| DatasetError::Invariant { row, message })?;
        let dev = device.get_or_insert_with(|| r.device.clone());
        if *dev != r.device {
            return Err(DatasetError::Invariant {
                row,
                message: format!("device '{}' differs from '{dev}'", r.device),
            });
        }
        if !keys.insert((r.model_name.clone(), r.variant.clone(), r.input_size)) {
            return Err(DatasetError::Invariant {
                row,
                message: format!("duplicate key ({}, {}, {})", r.model_name, r.variant, r.input_size),
            });
        }
        records.push(r);
    }
    Ok(Dataset {
        device: device.unwrap_or_default(),
        records,
    })
}

pub fn load_measurements(path: &Path) -> Result<Dataset, DatasetError> {
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(std::io::BufReader::new(file))
}

// ---------------------------------------------------------------------------
// Splits

/// Record indices of the training set and the three exploration test spaces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub train: Vec<usize>,
    /// New image sizes of seen (family, variant) pairs.
    pub test_nis: Vec<usize>,
    /// Unseen variants of seen families.
    pub test_ncv: Vec<usize>,
    /// Entirely unseen families.
    pub test_nca: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Space {
    Nis,
    Ncv,
    Nca,
}

impl Space {
    pub const ALL: [Space; 3] = [Space::Nis, Space::Ncv, Space::Nca];

    pub fn name(self) -> &'static str {
        match self {
            Space::Nis => "NIS",
            Space::Ncv => "NCV",
            Space::Nca => "NCA",
        }
    }
}

impl std::fmt::Display for Space {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl SplitPlan {
    pub fn test(&self, space: Space) -> &[usize] {
        match space {
            Space::Nis => &self.test_nis,
            Space::Ncv => &self.test_ncv,
            Space::Nca => &self.test_nca,
        }
    }

    pub fn test_len(&self) -> usize {
        self.test_nis.len() + self.test_ncv.len() + self.test_nca.len()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plan serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplitError {
    #[error("train ratio must lie in (0, 1), got {0}")]
    Ratio(f64),
    #[error("insufficient diversity: {0}")]
    InsufficientDiversity(String),
}

/// Holds out whole families (NCA), then whole variants of the remaining
/// families (NCV), then single input sizes of the remaining pairs (NIS),
/// until the test set reaches `n - round(train_ratio * n)` records (±2).
///
/// NCA and NCV each aim for at least a third of the test budget; NIS fills
/// the rest. Families and variants are drawn in a seeded random order and a
/// group is skipped when holding it out would overshoot the budget.
pub fn make_split(ds: &Dataset, train_ratio: f64, seed: u64) -> Result<SplitPlan, SplitError> {
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(SplitError::Ratio(train_ratio));
    }
    let recs = ds.records();
    let mut families: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut pairs: BTreeMap<(&str, &str), Vec<usize>> = BTreeMap::new();
    let mut sizes: BTreeMap<(&str, &str, u64), Vec<usize>> = BTreeMap::new();
    for (i, r) in recs.iter().enumerate() {
        families.entry(&r.family).or_default().push(i);
        pairs.entry((&r.family, &r.variant)).or_default().push(i);
        sizes.entry((&r.family, &r.variant, r.input_size)).or_default().push(i);
    }
    let mut variants_per_family: BTreeMap<&str, usize> = BTreeMap::new();
    let mut sizes_per_pair: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for &(f, _) in pairs.keys() {
        *variants_per_family.entry(f).or_default() += 1;
    }
    for &(f, v, _) in sizes.keys() {
        *sizes_per_pair.entry((f, v)).or_default() += 1;
    }
    if families.len() < 3 {
        return Err(SplitError::InsufficientDiversity(format!(
            "need >= 3 families, found {}",
            families.len()
        )));
    }
    if !variants_per_family.values().any(|&n| n >= 2) {
        return Err(SplitError::InsufficientDiversity(
            "no family has >= 2 variants".to_string(),
        ));
    }
    if let Some(((f, v), _)) = sizes_per_pair.iter().find(|(_, &n)| n < 2) {
        return Err(SplitError::InsufficientDiversity(format!(
            "({f}, {v}) has fewer than 2 input sizes"
        )));
    }

    let n = recs.len();
    let budget = n - (train_ratio * n as f64).round() as usize;
    let limit = budget + 2;
    let mut rng = rng::stream(seed, 0x5E17);
    let mut total = 0usize;

    // New CNN architectures: whole families.
    let mut fam_order: Vec<&str> = families.keys().copied().collect();
    fam_order.shuffle(&mut rng);
    let nca_target = budget.div_ceil(3);
    let mut nca_families: BTreeSet<&str> = BTreeSet::new();
    for reserve in [2usize, 0] {
        for &f in &fam_order {
            if total >= nca_target {
                break;
            }
            let size = families[f].len();
            if nca_families.contains(f) || nca_families.len() + 1 >= families.len() {
                continue;
            }
            if total + size + reserve <= limit {
                nca_families.insert(f);
                total += size;
            }
        }
        if !nca_families.is_empty() {
            break;
        }
    }
    if nca_families.is_empty() {
        return Err(SplitError::InsufficientDiversity(format!(
            "no family fits within the test budget of {budget} records"
        )));
    }

    // New CNN variants: whole variants of remaining multi-variant families.
    let mut pair_order: Vec<(&str, &str)> = pairs
        .keys()
        .copied()
        .filter(|(f, _)| !nca_families.contains(f))
        .collect();
    pair_order.shuffle(&mut rng);
    let ncv_target = (2 * budget).div_ceil(3);
    let mut ncv_pairs: BTreeSet<(&str, &str)> = BTreeSet::new();
    let mut left = variants_per_family.clone();
    for reserve in [1usize, 0] {
        for &p in &pair_order {
            if total >= ncv_target && !ncv_pairs.is_empty() {
                break;
            }
            if ncv_pairs.contains(&p) || left[p.0] <= 1 {
                continue;
            }
            let size = pairs[&p].len();
            if total + size + reserve <= limit {
                ncv_pairs.insert(p);
                *left.get_mut(p.0).unwrap() -= 1;
                total += size;
            }
        }
        if !ncv_pairs.is_empty() {
            break;
        }
    }

    // New image sizes: single sizes of remaining pairs, keeping one in train.
    let mut size_order: Vec<(&str, &str, u64)> = sizes
        .keys()
        .copied()
        .filter(|(f, v, _)| !nca_families.contains(f) && !ncv_pairs.contains(&(*f, *v)))
        .collect();
    size_order.shuffle(&mut rng);
    let mut nis_groups: BTreeSet<(&str, &str, u64)> = BTreeSet::new();
    let mut sizes_left = sizes_per_pair.clone();
    for &g in &size_order {
        if total >= budget {
            break;
        }
        let pair = (g.0, g.1);
        let size = sizes[&g].len();
        if sizes_left[&pair] <= 1 || total + size > limit {
            continue;
        }
        nis_groups.insert(g);
        *sizes_left.get_mut(&pair).unwrap() -= 1;
        total += size;
    }

    if total.abs_diff(budget) > 2 {
        return Err(SplitError::InsufficientDiversity(format!(
            "could only hold out {total} of the {budget} test records with whole families, variants and sizes"
        )));
    }

    let mut plan = SplitPlan {
        seed,
        train: Vec::new(),
        test_nis: Vec::new(),
        test_ncv: Vec::new(),
        test_nca: Vec::new(),
    };
    for (i, r) in recs.iter().enumerate() {
        let dest = if nca_families.contains(r.family.as_str()) {
            &mut plan.test_nca
        } else if ncv_pairs.contains(&(r.family.as_str(), r.variant.as_str())) {
            &mut plan.test_ncv
        } else if nis_groups.contains(&(r.family.as_str(), r.variant.as_str(), r.input_size)) {
            &mut plan.test_nis
        } else {
            &mut plan.train
        };
        dest.push(i);
    }
    Ok(plan)
}

// ---------------------------------------------------------------------------
// Standardization

/// Random access to feature rows; lets tests observe which rows are read.
pub trait FeatureRows {
    fn row_count(&self) -> usize;
    fn row(&self, i: usize) -> &FeatureVector;
}

impl FeatureRows for Dataset {
    fn row_count(&self) -> usize {
        self.len()
    }
    fn row(&self, i: usize) -> &FeatureVector {
        &self.records[i].features
    }
}

impl FeatureRows for [FeatureVector] {
    fn row_count(&self) -> usize {
        self.len()
    }
    fn row(&self, i: usize) -> &FeatureVector {
        &self[i]
    }
}

impl FeatureRows for Vec<FeatureVector> {
    fn row_count(&self) -> usize {
        self.len()
    }
    fn row(&self, i: usize) -> &FeatureVector {
        &self[i]
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("cannot fit a standardizer on an empty training set")]
pub struct EmptyTrainError;

/// Per-feature z-scoring with population statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [f64; FEATURE_COUNT],
    pub std: [f64; FEATURE_COUNT],
    /// Features that were constant on the training rows (std clamped to 1).
    pub constant: [bool; FEATURE_COUNT],
}

impl Standardizer {
    pub fn apply(&self, fv: &FeatureVector) -> [f64; FEATURE_COUNT] {
        std::array::from_fn(|i| (fv.0[i] - self.mean[i]) / self.std[i])
    }

    pub fn invert(&self, z: &[f64; FEATURE_COUNT]) -> FeatureVector {
        FeatureVector(std::array::from_fn(|i| z[i] * self.std[i] + self.mean[i]))
    }

    pub fn has_constant_features(&self) -> bool {
        self.constant.iter().any(|&c| c)
    }
}

pub fn fit_standardizer<R: FeatureRows + ?Sized>(rows: &R, train: &[usize]) -> Result<Standardizer, EmptyTrainError> {
    if train.is_empty() {
        return Err(EmptyTrainError);
    }
    let n = train.len() as f64;
    let mut mean = [0.0; FEATURE_COUNT];
    for &i in train {
        let r = rows.row(i);
        for k in 0..FEATURE_COUNT {
            mean[k] += r.0[k];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0; FEATURE_COUNT];
    for &i in train {
        let r = rows.row(i);
        for k in 0..FEATURE_COUNT {
            let d = r.0[k] - mean[k];
            var[k] += d * d;
        }
    }
    let mut std = [1.0; FEATURE_COUNT];
    let mut constant = [false; FEATURE_COUNT];
    for k in 0..FEATURE_COUNT {
        let s = (var[k] / n).sqrt();
        if s > 0.0 && s.is_finite() {
            std[k] = s;
        } else {
            constant[k] = true;
        }
    }
    if constant.iter().any(|&c| c) {
        log::warn!("standardizer: constant feature(s) on training rows; std clamped to 1");
    }
    Ok(Standardizer { mean, std, constant })
}
