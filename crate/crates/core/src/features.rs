//! FLOP accounting and the 11-entry architectural feature vector.
//!
//! Counting conventions (batch size 1):
//!
//! | layer      | category      | FLOPs                                              |
//! |------------|---------------|----------------------------------------------------|
//! | Conv2D     | conv2d        | `2·Kh·Kw·(Cin/groups)·Hout·Wout·Cout` (+ bias adds)|
//! | Dense      | dense         | `2·in·units` (+ `units` if bias)                   |
//! | Add        | add           | output elements per extra input                    |
//! | BatchNorm  | add + mul     | one add and one mul per element                    |
//! | Pool       | pooling       | `k²·out` (avg) or `(k²−1)·out` (max)               |
//! | GlobalPool | pooling       | same rule with the whole feature map as window     |
//! | Activation | mul           | one per element                                    |

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{LayerKind, LayerOp, PoolMode, ShapedGraph, TensorShape};

pub const FEATURE_COUNT: usize = 11;

/// The architectural features, in canonical (most- to least-important) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    TotalFlops,
    SumActivations,
    WeightedSumNeurons,
    ConvParams,
    TotalLayers,
    InputImageSize,
    FcParams,
    BnParams,
    BnLayers,
    ConvLayers,
    FcLayers,
}

impl Feature {
    pub const ALL: [Feature; FEATURE_COUNT] = [
        Feature::TotalFlops,
        Feature::SumActivations,
        Feature::WeightedSumNeurons,
        Feature::ConvParams,
        Feature::TotalLayers,
        Feature::InputImageSize,
        Feature::FcParams,
        Feature::BnParams,
        Feature::BnLayers,
        Feature::ConvLayers,
        Feature::FcLayers,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Feature> {
        Feature::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::TotalFlops => "total_flops",
            Feature::SumActivations => "sum_activations",
            Feature::WeightedSumNeurons => "weighted_sum_neurons",
            Feature::ConvParams => "conv_params",
            Feature::TotalLayers => "total_layers",
            Feature::InputImageSize => "input_image_size",
            Feature::FcParams => "fc_params",
            Feature::BnParams => "bn_params",
            Feature::BnLayers => "bn_layers",
            Feature::ConvLayers => "conv_layers",
            Feature::FcLayers => "fc_layers",
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown feature '{0}'")]
pub struct UnknownFeatureError(pub String);

impl FromStr for Feature {
    type Err = UnknownFeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Feature::ALL
            .iter()
            .copied()
            .find(|f| f.name() == s)
            .ok_or_else(|| UnknownFeatureError(s.to_string()))
    }
}

/// Fixed-order feature values; index with [`Feature`] or `usize`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; FEATURE_COUNT]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, f: Feature) -> f64 {
        self.0[f.index()]
    }
}

impl Index<Feature> for FeatureVector {
    type Output = f64;
    fn index(&self, f: Feature) -> &f64 {
        &self.0[f.index()]
    }
}

impl IndexMut<Feature> for FeatureVector {
    fn index_mut(&mut self, f: Feature) -> &mut f64 {
        &mut self.0[f.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FlopBreakdown {
    pub conv2d: u64,
    pub add: u64,
    pub mul: u64,
    pub pooling: u64,
    pub dense: u64,
    pub total: u64,
}

impl FlopBreakdown {
    pub const COLUMNS: [&'static str; 5] = [
        "flops_conv2d",
        "flops_add",
        "flops_mul",
        "flops_pooling",
        "flops_dense",
    ];

    fn checked_sum(self, other: FlopBreakdown) -> Option<FlopBreakdown> {
        Some(FlopBreakdown {
            conv2d: self.conv2d.checked_add(other.conv2d)?,
            add: self.add.checked_add(other.add)?,
            mul: self.mul.checked_add(other.mul)?,
            pooling: self.pooling.checked_add(other.pooling)?,
            dense: self.dense.checked_add(other.dense)?,
            total: self.total.checked_add(other.total)?,
        })
    }

    fn with_total(mut self) -> Option<FlopBreakdown> {
        self.total = self
            .conv2d
            .checked_add(self.add)?
            .checked_add(self.mul)?
            .checked_add(self.pooling)?
            .checked_add(self.dense)?;
        Some(self)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("FLOP count of layer '{0}' overflows u64")]
pub struct OverflowError(pub String);

fn mul_all(xs: &[u64]) -> Option<u64> {
    xs.iter().try_fold(1u64, |acc, &x| acc.checked_mul(x))
}

/// FLOPs of the single layer at `index`, using the shapes in `sg`.
pub fn layer_flops(sg: &ShapedGraph<'_>, index: usize) -> Result<FlopBreakdown, OverflowError> {
    let layer = &sg.graph.layers()[index];
    let out = sg.output(index);
    let first_in = sg.inputs_of(index).next();
    let overflow = || OverflowError(layer.id.clone());
    let mut fb = FlopBreakdown::default();
    match &layer.op {
        LayerOp::Conv2D(p) => {
            let cin = first_in.map(|s| s.channels()).unwrap_or(0) / p.groups;
            let macs = mul_all(&[p.kernel_h, p.kernel_w, cin, out.elements()]).ok_or_else(overflow)?;
            let bias = if p.use_bias { out.elements() } else { 0 };
            fb.conv2d = macs
                .checked_mul(2)
                .and_then(|v| v.checked_add(bias))
                .ok_or_else(overflow)?;
        }
        LayerOp::Dense(p) => {
            let fan_in = first_in.map(|s| s.elements()).unwrap_or(0);
            let bias = if p.use_bias { p.units } else { 0 };
            fb.dense = mul_all(&[2, fan_in, p.units])
                .and_then(|v| v.checked_add(bias))
                .ok_or_else(overflow)?;
        }
        LayerOp::Add => {
            let extra = sg.graph.input_indices(index).len() as u64 - 1;
            fb.add = out.elements().checked_mul(extra).ok_or_else(overflow)?;
        }
        LayerOp::BatchNorm => {
            fb.add = out.elements();
            fb.mul = out.elements();
        }
        LayerOp::Activation(_) => fb.mul = out.elements(),
        LayerOp::Pool(p) => {
            let area = p.kernel.checked_mul(p.kernel).ok_or_else(overflow)?;
            let per_out = match p.mode {
                PoolMode::Avg => area,
                PoolMode::Max => area - 1,
            };
            fb.pooling = per_out.checked_mul(out.elements()).ok_or_else(overflow)?;
        }
        LayerOp::GlobalPool(mode) => {
            if let Some(TensorShape::Spatial { h, w, c }) = first_in {
                let per_out = match mode {
                    PoolMode::Avg => h * w,
                    PoolMode::Max => h * w - 1,
                };
                fb.pooling = per_out.checked_mul(c).ok_or_else(overflow)?;
            }
        }
        LayerOp::Input | LayerOp::Concat | LayerOp::Flatten => {}
    }
    fb.with_total().ok_or_else(overflow)
}

/// FLOP breakdown of a whole shaped graph.
pub fn count_flops(sg: &ShapedGraph<'_>) -> Result<FlopBreakdown, OverflowError> {
    (0..sg.graph.len()).try_fold(FlopBreakdown::default(), |acc, i| {
        let lf = layer_flops(sg, i)?;
        acc.checked_sum(lf)
            .ok_or_else(|| OverflowError(sg.graph.layers()[i].id.clone()))
    })
}

/// Computes the 11 features of a shaped graph.
pub fn extract_features(sg: &ShapedGraph<'_>) -> Result<FeatureVector, OverflowError> {
    let flops = count_flops(sg)?;
    let mut fv = FeatureVector::default();
    fv[Feature::TotalFlops] = flops.total as f64;
    fv[Feature::InputImageSize] = sg.input_size as f64;

    for (i, layer) in sg.graph.layers().iter().enumerate() {
        let out = sg.output(i);
        let kind = layer.kind();
        if kind == LayerKind::Input {
            continue;
        }
        fv[Feature::TotalLayers] += 1.0;
        fv[Feature::SumActivations] += out.elements() as f64;
        let first_in = sg.inputs_of(i).next();
        match &layer.op {
            LayerOp::Conv2D(p) => {
                let cin = first_in.map(|s| s.channels()).unwrap_or(0) / p.groups;
                let filter_volume = (p.kernel_h * p.kernel_w * cin) as f64;
                fv[Feature::WeightedSumNeurons] += out.elements() as f64 * filter_volume;
                let bias = if p.use_bias { p.filters } else { 0 } as f64;
                fv[Feature::ConvParams] += filter_volume * p.filters as f64 + bias;
                fv[Feature::ConvLayers] += 1.0;
            }
            LayerOp::Dense(p) => {
                let fan_in = first_in.map(|s| s.elements()).unwrap_or(0) as f64;
                let bias = if p.use_bias { p.units } else { 0 } as f64;
                fv[Feature::WeightedSumNeurons] += p.units as f64;
                fv[Feature::FcParams] += fan_in * p.units as f64 + bias;
                fv[Feature::FcLayers] += 1.0;
            }
            LayerOp::BatchNorm => {
                fv[Feature::BnParams] += 4.0 * out.channels() as f64;
                fv[Feature::BnLayers] += 1.0;
            }
            _ => {}
        }
    }
    Ok(fv)
}

/// Orders features by descending importance score.
///
/// Ties and features missing from `importance` fall back to canonical order;
/// missing features always come after every scored one.
pub fn rank_features(importance: &BTreeMap<String, f64>) -> Result<Vec<Feature>, UnknownFeatureError> {
    let mut scored = Vec::with_capacity(importance.len());
    for (name, &score) in importance {
        scored.push((name.parse::<Feature>()?, score));
    }
    Ok(rank_scored(&scored))
}

/// Same as [`rank_features`] for already-typed scores.
pub fn rank_scored(scores: &[(Feature, f64)]) -> Vec<Feature> {
    let mut scored: Vec<(Feature, f64)> = scores.to_vec();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.dedup_by_key(|(f, _)| *f);
    let mut order: Vec<Feature> = scored.iter().map(|(f, _)| *f).collect();
    for f in Feature::ALL {
        if !order.contains(&f) {
            order.push(f);
        }
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{infer_shapes, GraphBuilder, Padding};

    #[test]
    fn single_conv_counts() {
        let mut b = GraphBuilder::new("t", "f", "v");
        b.conv_with(
            "input",
            crate::graph::Conv2dParams::square(16, 3, 1, Padding::Same).with_bias(false),
        );
        let g = b.build().unwrap();
        let sg = infer_shapes(&g, 8, 3).unwrap();
        let fb = count_flops(&sg).unwrap();
        assert_eq!(fb.conv2d, 55_296);
        assert_eq!(fb.total, 55_296);
        let fv = extract_features(&sg).unwrap();
        assert_eq!(fv[Feature::SumActivations], 1024.0);
        assert_eq!(fv[Feature::WeightedSumNeurons], 27_648.0);
        assert_eq!(fv[Feature::ConvParams], 432.0);
        assert_eq!(fv[Feature::ConvLayers], 1.0);
        assert_eq!(fv[Feature::TotalLayers], 1.0);
    }

    #[test]
    fn dense_counts() {
        let mut b = GraphBuilder::new("t", "f", "v");
        let f = b.flatten("input");
        b.dense(&f, 10, true);
        let g = b.build().unwrap();
        let sg = infer_shapes(&g, 2, 1).unwrap();
        let fv = extract_features(&sg).unwrap();
        assert_eq!(fv[Feature::FcParams], 50.0);
        assert_eq!(fv[Feature::FcLayers], 1.0);
        assert_eq!(fv[Feature::ConvLayers], 0.0);
        assert_eq!(fv[Feature::WeightedSumNeurons], 10.0);
        assert_eq!(count_flops(&sg).unwrap().dense, 2 * 4 * 10 + 10);
    }

    #[test]
    fn input_only_graph() {
        let g = GraphBuilder::new("t", "f", "v").build().unwrap();
        let sg = infer_shapes(&g, 32, 3).unwrap();
        assert_eq!(count_flops(&sg).unwrap().total, 0);
        let fv = extract_features(&sg).unwrap();
        for f in Feature::ALL {
            let expected = if f == Feature::InputImageSize { 32.0 } else { 0.0 };
            assert_eq!(fv[f], expected, "{f}");
        }
    }

    #[test]
    fn pooling_bn_activation_add() {
        let mut b = GraphBuilder::new("t", "f", "v");
        let c = b.conv("input", 4, 1, 1, Padding::Same);
        let n = b.batch_norm(&c);
        let a = b.activation(&n, crate::graph::ActivationFn::Relu);
        let s = b.add(&[&c, &a, &n]);
        let mx = b.pool(&s, PoolMode::Max, 2, 2, Padding::Valid);
        let av = b.pool(&s, PoolMode::Avg, 2, 2, Padding::Valid);
        let _ = b.concat(&[&mx, &av]);
        let g = b.build().unwrap();
        let sg = infer_shapes(&g, 4, 3).unwrap();
        let fb = count_flops(&sg).unwrap();
        // 4x4x4 = 64 elements; pool outputs 2x2x4 = 16.
        assert_eq!(fb.add, 64 + 2 * 64);
        assert_eq!(fb.mul, 64 + 64);
        assert_eq!(fb.pooling, 3 * 16 + 4 * 16);
        let fv = extract_features(&sg).unwrap();
        assert_eq!(fv[Feature::BnParams], 16.0);
        assert_eq!(fv[Feature::BnLayers], 1.0);
    }

    #[test]
    fn ranking() {
        let imp = BTreeMap::from([("total_flops".to_string(), 100.0), ("sum_activations".to_string(), 250.0)]);
        let order = rank_features(&imp).unwrap();
        assert_eq!(order[0], Feature::SumActivations);
        assert_eq!(order[1], Feature::TotalFlops);
        assert_eq!(&order[2..], &Feature::ALL[2..]);

        let equal: BTreeMap<String, f64> = Feature::ALL
            .iter()
            .rev()
            .map(|f| (f.name().to_string(), 3.0))
            .collect();
        assert_eq!(rank_features(&equal).unwrap(), Feature::ALL.to_vec());

        let bad = BTreeMap::from([("depth".to_string(), 1.0)]);
        assert_eq!(rank_features(&bad).unwrap_err(), UnknownFeatureError("depth".into()));
    }

    #[test]
    fn feature_names_round_trip() {
        for f in Feature::ALL {
            assert_eq!(f.name().parse::<Feature>().unwrap(), f);
            assert_eq!(Feature::from_index(f.index()), Some(f));
        }
    }
}
