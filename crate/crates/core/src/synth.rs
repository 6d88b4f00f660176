//! Random CNN architectures and a synthetic latency law, so the whole
//! pipeline runs without profiling real hardware.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetError, MeasurementRecord};
use crate::features::{extract_features, Feature, FeatureVector};
use crate::graph::{
    infer_shapes, ActivationFn, Conv2dParams, GraphBuilder, ModelGraph, Padding, PoolMode,
};
use crate::metrics::PREDICTION_FLOOR_MS;
use crate::rng;
use crate::zoo;

/// Channel count of every generated input image.
pub const INPUT_CHANNELS: u64 = 3;

pub const MAX_ATTEMPTS: u32 = 100;

/// Stride-2 operations allowed per generated network.
const MAX_DOWNSAMPLES: usize = 5;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
    #[error("invalid device profile {name:?}: {message}")]
    Profile { name: String, message: String },
    #[error("model {index}: no shape-valid graph after {attempts} attempts ({last})")]
    GenerationRetryExceeded {
        index: usize,
        attempts: u32,
        last: String,
    },
    #[error("{model} at input {size}: {message}")]
    Features {
        model: String,
        size: u64,
        message: String,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("profile file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlockFlags {
    pub residual: bool,
    pub depthwise: bool,
    pub batchnorm: bool,
    pub pooling: bool,
}

impl BlockFlags {
    pub const NONE: BlockFlags = BlockFlags {
        residual: false,
        depthwise: false,
        batchnorm: false,
        pooling: false,
    };
}

impl Default for BlockFlags {
    fn default() -> Self {
        BlockFlags {
            residual: true,
            depthwise: true,
            batchnorm: true,
            pooling: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    /// Number of pure-synthetic architectures (one family each).
    pub n_models: usize,
    /// Inclusive range of compute blocks before the head.
    pub depth: (usize, usize),
    /// Inclusive range of filters per convolution, before width scaling.
    pub filters: (u64, u64),
    pub kernels: Vec<u64>,
    pub strides: Vec<u64>,
    pub blocks: BlockFlags,
    pub input_sizes: Vec<u64>,
    /// Inclusive range of hidden fully-connected widths in the head.
    pub fc_width: (u64, u64),
    /// Width multipliers that turn one architecture into a family's variants.
    pub width_multipliers: Vec<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 42,
            n_models: 11,
            depth: (4, 16),
            filters: (16, 256),
            kernels: vec![1, 3, 5, 7],
            strides: vec![1, 2],
            blocks: BlockFlags::default(),
            input_sizes: zoo::sizes::MEDIUM.to_vec(),
            fc_width: (64, 1024),
            width_multipliers: vec![0.5, 0.75, 1.0, 1.5],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        if self.n_models < 1 {
            return bad("n_models must be >= 1");
        }
        if self.depth.0 < 1 || self.depth.0 > self.depth.1 {
            return bad("depth range must be ordered and start at >= 1");
        }
        if self.filters.0 < 1 || self.filters.0 > self.filters.1 {
            return bad("filter range must be ordered and start at >= 1");
        }
        if self.fc_width.0 < 1 || self.fc_width.0 > self.fc_width.1 {
            return bad("fc_width range must be ordered and start at >= 1");
        }
        if self.kernels.is_empty() || self.kernels.contains(&0) {
            return bad("kernels must be non-empty and positive");
        }
        if self.strides.is_empty() || self.strides.contains(&0) {
            return bad("strides must be non-empty and positive");
        }
        if self.input_sizes.is_empty() || self.input_sizes.contains(&0) {
            return bad("input_sizes must be non-empty and positive");
        }
        if self.width_multipliers.is_empty()
            || self.width_multipliers.iter().any(|w| !(w.is_finite() && *w > 0.0))
        {
            return bad("width_multipliers must be non-empty and positive");
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        let cfg: SynthConfig = toml::from_str(text).map_err(|e| SynthError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

// ---------------------------------------------------------------------------
// Architecture generation

#[derive(Debug, Clone, Copy, PartialEq)]
enum BlockKind {
    Plain,
    Residual,
    Separable,
}

#[derive(Debug, Clone, Copy)]
struct BlockPlan {
    kind: BlockKind,
    kernel: u64,
    stride: u64,
    filters: u64,
    bn: bool,
    pool: Option<(PoolMode, u64)>,
}

#[derive(Debug, Clone)]
struct ArchPlan {
    blocks: Vec<BlockPlan>,
    hidden: Vec<u64>,
    classes: u64,
}

fn log_uniform(r: &mut rng::Rng, lo: u64, hi: u64) -> u64 {
    if lo == hi {
        return lo;
    }
    let (a, b) = ((lo as f64).ln(), (hi as f64 + 1.0).ln());
    (r.random_range(a..b).exp().floor() as u64).clamp(lo, hi)
}

fn pick<T: Copy>(r: &mut rng::Rng, items: &[T]) -> T {
    items[r.random_range(0..items.len())]
}

fn draw_plan(cfg: &SynthConfig, r: &mut rng::Rng) -> ArchPlan {
    let depth = r.random_range(cfg.depth.0..=cfg.depth.1);
    let mut kinds = vec![BlockKind::Plain];
    if cfg.blocks.residual {
        kinds.push(BlockKind::Residual);
    }
    if cfg.blocks.depthwise {
        kinds.push(BlockKind::Separable);
    }
    let mut downsamples = 0;
    let mut blocks = Vec::with_capacity(depth);
    for _ in 0..depth {
        let kind = pick(r, &kinds);
        let kernel = pick(r, &cfg.kernels);
        let mut stride = pick(r, &cfg.strides);
        if stride > 1 {
            if downsamples >= MAX_DOWNSAMPLES {
                stride = 1;
            } else {
                downsamples += 1;
            }
        }
        let filters = log_uniform(r, cfg.filters.0, cfg.filters.1);
        let bn = cfg.blocks.batchnorm && r.random_bool(0.75);
        let pool = if cfg.blocks.pooling && downsamples < MAX_DOWNSAMPLES && r.random_bool(0.2) {
            downsamples += 1;
            let mode = if r.random_bool(0.5) { PoolMode::Max } else { PoolMode::Avg };
            Some((mode, pick(r, &[2u64, 3])))
        } else {
            None
        };
        blocks.push(BlockPlan {
            kind,
            kernel,
            stride,
            filters,
            bn,
            pool,
        });
    }
    let hidden = (0..r.random_range(0..=2usize))
        .map(|_| log_uniform(r, cfg.fc_width.0, cfg.fc_width.1))
        .collect();
    let classes = pick(r, &[10u64, 100, 1000]);
    ArchPlan {
        blocks,
        hidden,
        classes,
    }
}

fn scale(filters: u64, width: f64) -> u64 {
    let f = filters as f64 * width;
    if f < 8.0 {
        f.round().max(1.0) as u64
    } else {
        ((f / 8.0).round() * 8.0) as u64
    }
}

fn build_plan(plan: &ArchPlan, width: f64, name: String, family: String, variant: String) -> GraphBuilder {
    let mut b = GraphBuilder::new(name, family, variant);
    let mut x = b.input();
    let mut channels = INPUT_CHANNELS;
    let norm_act = |b: &mut GraphBuilder, x: &str, bn: bool, act: bool| {
        let y = if bn { b.batch_norm(x) } else { x.to_string() };
        if act {
            b.activation(&y, ActivationFn::Relu)
        } else {
            y
        }
    };
    for blk in &plan.blocks {
        let f = scale(blk.filters, width);
        let conv = |k, s| Conv2dParams::square(f, k, s, Padding::Same).with_bias(!blk.bn);
        x = match blk.kind {
            BlockKind::Plain => {
                let c = b.conv_with(&x, conv(blk.kernel, blk.stride));
                norm_act(&mut b, &c, blk.bn, true)
            }
            BlockKind::Residual => {
                let c = b.conv_with(&x, conv(blk.kernel, blk.stride));
                let y = norm_act(&mut b, &c, blk.bn, true);
                let c = b.conv_with(&y, conv(blk.kernel, 1));
                let main = norm_act(&mut b, &c, blk.bn, false);
                let shortcut = if blk.stride == 1 && channels == f {
                    x.clone()
                } else {
                    let c = b.conv_with(&x, conv(1, blk.stride));
                    norm_act(&mut b, &c, blk.bn, false)
                };
                let s = b.add(&[&main, &shortcut]);
                b.activation(&s, ActivationFn::Relu)
            }
            BlockKind::Separable => {
                let d = b.depthwise(&x, channels, blk.kernel, blk.stride);
                let y = norm_act(&mut b, &d, blk.bn, true);
                let c = b.conv_with(&y, conv(1, 1));
                norm_act(&mut b, &c, blk.bn, true)
            }
        };
        channels = f;
        if let Some((mode, k)) = blk.pool {
            x = b.pool(&x, mode, k, 2, Padding::Same);
        }
    }
    x = b.global_pool(&x, PoolMode::Avg);
    for &h in &plan.hidden {
        let d = b.dense(&x, scale(h, width), true);
        x = b.activation(&d, ActivationFn::Relu);
    }
    b.dense(&x, plan.classes, true);
    b
}

fn generate(
    cfg: &SynthConfig,
    index: usize,
    width: f64,
    name: String,
    family: String,
    variant: String,
) -> Result<ModelGraph, SynthError> {
    if index >= cfg.n_models {
        return Err(SynthError::Config(format!(
            "index {index} is out of range for n_models = {}",
            cfg.n_models
        )));
    }
    cfg.validate()?;
    let mut last = String::new();
    for attempt in 0..MAX_ATTEMPTS {
        let mut r = rng::stream(cfg.seed, index as u64 | (u64::from(attempt) << 32));
        let plan = draw_plan(cfg, &mut r);
        let graph = match build_plan(&plan, width, name.clone(), family.clone(), variant.clone()).build() {
            Ok(g) => g,
            Err(e) => {
                last = e.to_string();
                continue;
            }
        };
        let bad = cfg
            .input_sizes
            .iter()
            .find_map(|&s| infer_shapes(&graph, s, INPUT_CHANNELS).err().map(|e| (s, e)));
        match bad {
            None => return Ok(graph),
            Some((s, e)) => last = format!("input {s}: {e}"),
        }
    }
    Err(SynthError::GenerationRetryExceeded {
        index,
        attempts: MAX_ATTEMPTS,
        last,
    })
}

/// Draws architecture `index` from the stream `(cfg.seed, index)`.
///
/// The graph is shape-valid at every size in `cfg.input_sizes`. Its family
/// tag is `"synthetic"` and its variant is the index.
pub fn generate_cnn(cfg: &SynthConfig, index: usize) -> Result<ModelGraph, SynthError> {
    generate(
        cfg,
        index,
        1.0,
        format!("synthetic_{index}"),
        "synthetic".to_string(),
        index.to_string(),
    )
}

/// Architecture `index` with every filter and hidden width scaled by
/// `width`; used to give each synthetic family several variants.
pub fn generate_scaled(cfg: &SynthConfig, index: usize, width: f64) -> Result<ModelGraph, SynthError> {
    if !(width.is_finite() && width > 0.0) {
        return Err(SynthError::Config(format!("width multiplier must be positive, got {width}")));
    }
    let family = format!("synthetic_{index}");
    generate(cfg, index, width, format!("{family}_x{width}"), family, format!("x{width}"))
}

// ---------------------------------------------------------------------------
// Latency law

/// Coefficients of the synthetic latency law, in ms per unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawCoefficients {
    pub flops: f64,
    pub activations: f64,
    pub weighted_neurons: f64,
    /// Applied to conv plus fully-connected parameters.
    pub params: f64,
    pub layers: f64,
    /// Applied to `sqrt(flops * activations)`.
    pub cross: f64,
}

impl LawCoefficients {
    pub fn as_array(&self) -> [f64; 6] {
        [
            self.flops,
            self.activations,
            self.weighted_neurons,
            self.params,
            self.layers,
            self.cross,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfile {
    pub name: String,
    pub coefficients: LawCoefficients,
    /// Relative noise level (standard deviation of the multiplicative error).
    pub noise_cv: f64,
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<(), SynthError> {
        let err = |m: &str| {
            Err(SynthError::Profile {
                name: self.name.clone(),
                message: m.to_string(),
            })
        };
        let c = self.coefficients.as_array();
        if c.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return err("coefficients must be finite and >= 0");
        }
        if c.iter().all(|&v| v == 0.0) {
            return err("at least one coefficient must be positive");
        }
        if !(0.0..=0.5).contains(&self.noise_cv) {
            return err("noise_cv must lie in [0, 0.5]");
        }
        Ok(())
    }

    /// A faster, Xavier-class target.
    pub fn agx_like() -> Self {
        DeviceProfile {
            name: "agx-like".into(),
            coefficients: LawCoefficients {
                flops: 1.0e-9,
                activations: 2.0e-8,
                weighted_neurons: 2.0e-10,
                params: 1.0e-8,
                layers: 0.04,
                cross: 1.0e-8,
            },
            noise_cv: 0.05,
        }
    }

    /// A slower, TX2-class target.
    pub fn tx2_like() -> Self {
        DeviceProfile {
            name: "tx2-like".into(),
            coefficients: LawCoefficients {
                flops: 3.5e-9,
                activations: 6.0e-8,
                weighted_neurons: 5.0e-10,
                params: 3.0e-8,
                layers: 0.09,
                cross: 3.0e-8,
            },
            noise_cv: 0.05,
        }
    }

    pub fn shipped() -> Vec<DeviceProfile> {
        vec![Self::agx_like(), Self::tx2_like()]
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    profile: Vec<DeviceProfile>,
}

/// Parses `[[profile]]` tables from TOML.
pub fn profiles_from_toml(text: &str) -> Result<Vec<DeviceProfile>, SynthError> {
    let file: ProfileFile = toml::from_str(text).map_err(|e| SynthError::Parse(e.to_string()))?;
    if file.profile.is_empty() {
        return Err(SynthError::Parse("no [[profile]] tables".into()));
    }
    for p in &file.profile {
        p.validate()?;
    }
    Ok(file.profile)
}

pub fn profiles_to_toml(profiles: &[DeviceProfile]) -> String {
    toml::to_string(&ProfileFile {
        profile: profiles.to_vec(),
    })
    .expect("profiles serialize")
}

/// Noise-free latency of the law.
pub fn base_latency(fv: &FeatureVector, c: &LawCoefficients) -> f64 {
    let flops = fv[Feature::TotalFlops];
    let act = fv[Feature::SumActivations];
    c.flops * flops
        + c.activations * act
        + c.weighted_neurons * fv[Feature::WeightedSumNeurons]
        + c.params * (fv[Feature::ConvParams] + fv[Feature::FcParams])
        + c.layers * fv[Feature::TotalLayers]
        + c.cross * (flops * act).sqrt()
}

/// Latency in ms: the law times `1 + e`, with `e` normal with standard
/// deviation `noise_cv`, truncated to three standard deviations.
pub fn synth_latency(fv: &FeatureVector, dp: &DeviceProfile, noise_seed: u64) -> f64 {
    let base = base_latency(fv, &dp.coefficients);
    let eps = if dp.noise_cv > 0.0 {
        let normal = Normal::new(0.0, dp.noise_cv).expect("noise_cv is finite");
        let mut r = rng::seeded(noise_seed);
        loop {
            let e: f64 = normal.sample(&mut r);
            if e.abs() <= 3.0 * dp.noise_cv {
                break e;
            }
        }
    } else {
        0.0
    };
    (base * (1.0 + eps)).max(PREDICTION_FLOOR_MS)
}

// ---------------------------------------------------------------------------
// Corpus

/// Replicate count recorded for every synthetic measurement.
pub const SYNTH_REPLICATES: u32 = 50;

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    /// Every distinct graph, stylized families first.
    pub graphs: Vec<ModelGraph>,
    /// One dataset per profile, in profile order.
    pub datasets: Vec<Dataset>,
}

struct Entry {
    graph: usize,
    size: u64,
}

fn name_hash(name: &str) -> u64 {
    name.bytes()
        .fold(0xCBF2_9CE4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01B3))
}

/// Builds the stylized families at their profiled sizes plus `cfg.n_models`
/// synthetic families (one variant per width multiplier, profiled at
/// `cfg.input_sizes`), and measures every record with each profile.
pub fn build_synth_corpus(cfg: &SynthConfig, profiles: &[DeviceProfile]) -> Result<SynthCorpus, SynthError> {
    cfg.validate()?;
    if profiles.is_empty() {
        return Err(SynthError::Config("at least one device profile is required".into()));
    }
    for p in profiles {
        p.validate()?;
    }

    let mut graphs = Vec::new();
    let mut entries = Vec::new();
    for fam in zoo::families() {
        for v in fam.variants {
            let g = fam.build(v).map_err(|e| SynthError::Config(format!("{}: {e}", fam.name)))?;
            entries.extend(fam.sizes.iter().map(|&size| Entry {
                graph: graphs.len(),
                size,
            }));
            graphs.push(g);
        }
    }
    let synthetic: Vec<ModelGraph> = (0..cfg.n_models)
        .into_par_iter()
        .flat_map_iter(|k| cfg.width_multipliers.iter().map(move |&w| (k, w)))
        .map(|(k, w)| generate_scaled(cfg, k, w))
        .collect::<Result<_, _>>()?;
    for g in synthetic {
        entries.extend(cfg.input_sizes.iter().map(|&size| Entry {
            graph: graphs.len(),
            size,
        }));
        graphs.push(g);
    }

    let features: Vec<FeatureVector> = entries
        .par_iter()
        .map(|e| {
            let g = &graphs[e.graph];
            let fail = |message: String| SynthError::Features {
                model: g.name.clone(),
                size: e.size,
                message,
            };
            let sg = infer_shapes(g, e.size, INPUT_CHANNELS).map_err(|x| fail(x.to_string()))?;
            extract_features(&sg).map_err(|x| fail(x.to_string()))
        })
        .collect::<Result<_, _>>()?;

    let mut datasets = Vec::with_capacity(profiles.len());
    for p in profiles {
        let profile_seed = rng::derive_seed(cfg.seed, name_hash(&p.name));
        let records = entries
            .iter()
            .zip(&features)
            .enumerate()
            .map(|(i, (e, fv))| {
                let g = &graphs[e.graph];
                let latency_ms = synth_latency(fv, p, rng::derive_seed(profile_seed, i as u64));
                MeasurementRecord {
                    model_name: g.name.clone(),
                    family: g.family.clone(),
                    variant: g.variant.clone(),
                    input_size: e.size,
                    device: p.name.clone(),
                    features: *fv,
                    latency_ms,
                    latency_std_ms: latency_ms * p.noise_cv,
                    replicates: SYNTH_REPLICATES,
                }
            })
            .collect();
        datasets.push(Dataset::new(p.name.clone(), records)?);
    }
    Ok(SynthCorpus { graphs, datasets })
}
