//! Reference CNN architectures built with [`GraphBuilder`].
//!
//! `resnet_v1(50)` and `densenet(121)` follow the published layer layouts
//! closely enough to reproduce their FLOP counts. The other families are
//! stylized: they keep each family's characteristic blocks (inverted
//! residuals, grouped or depthwise convolutions, inception branches, dense
//! connectivity) but drop operators the layer vocabulary lacks, such as
//! squeeze-excitation and channel shuffle.

use crate::graph::{
    ActivationFn, Conv2dParams, GraphBuilder, GraphError, ModelGraph, Padding, PoolMode,
};

use ActivationFn::{Relu, Relu6, Swish};
use Padding::{Same, Valid};

/// Input-size lists (square side, pixels) of the benchmark families.
pub mod sizes {
    pub const GOOGLENET: &[u64] = &[
        224, 240, 256, 299, 320, 331, 448, 480, 512, 568, 600, 720, 800, 896, 1024,
    ];
    pub const INCEPTION: &[u64] = &[
        75, 90, 112, 128, 150, 224, 240, 256, 299, 320, 331, 448, 480, 512, 568, 600, 720, 800,
        896, 1024,
    ];
    pub const MEDIUM: &[u64] = &[
        32, 56, 64, 75, 90, 112, 128, 150, 224, 240, 256, 299, 320, 331, 448, 480, 512, 568, 600,
        720, 800, 896, 1024,
    ];
    pub const LARGE: &[u64] = &[
        32, 56, 64, 75, 90, 112, 128, 150, 224, 240, 256, 299, 320, 331, 448, 480, 512, 568, 600,
        720, 800, 896, 1024, 1200, 1600,
    ];
    pub const XLARGE: &[u64] = &[
        32, 56, 64, 75, 90, 112, 128, 150, 224, 240, 256, 299, 320, 331, 448, 480, 512, 568, 600,
        720, 800, 896, 1024, 1200, 1600, 1792, 2400,
    ];
}

/// A benchmark family: its variants and the input sizes it is profiled at.
#[derive(Debug, Clone, Copy)]
pub struct Family {
    pub name: &'static str,
    pub variants: &'static [&'static str],
    pub sizes: &'static [u64],
    build: fn(&str) -> Result<ModelGraph, GraphError>,
}

impl Family {
    pub fn build(&self, variant: &str) -> Result<ModelGraph, GraphError> {
        (self.build)(variant)
    }
}

fn parse_or<T: std::str::FromStr>(variant: &str, fallback: T) -> T {
    variant.parse().unwrap_or(fallback)
}

/// All stylized benchmark families, in a fixed order.
pub fn families() -> Vec<Family> {
    vec![
        Family {
            name: "googlenet",
            variants: &["v1"],
            sizes: sizes::GOOGLENET,
            build: |_| googlenet(),
        },
        Family {
            name: "inception_v3",
            variants: &["v3"],
            sizes: sizes::INCEPTION,
            build: |_| inception_v3(),
        },
        Family {
            name: "densenet",
            variants: &["121", "161", "169", "201"],
            sizes: sizes::MEDIUM,
            build: |v| densenet(parse_or(v, 121)),
        },
        Family {
            name: "xception",
            variants: &["v1"],
            sizes: sizes::MEDIUM,
            build: |_| xception(),
        },
        Family {
            name: "efficientnet",
            variants: &["b0", "b1", "b2", "b3"],
            sizes: sizes::LARGE,
            build: |v| efficientnet(parse_or(v.trim_start_matches('b'), 0)),
        },
        Family {
            name: "mnasnet",
            variants: &["0.5", "0.75", "1.0", "1.3"],
            sizes: sizes::LARGE,
            build: |v| mnasnet(parse_or(v, 1.0)),
        },
        Family {
            name: "resnet_v1",
            variants: &["18", "34", "50", "101", "152", "200"],
            sizes: sizes::XLARGE,
            build: |v| resnet_v1(parse_or(v, 50)),
        },
        Family {
            name: "resnet_v2",
            variants: &["18", "34", "50", "101", "152"],
            sizes: sizes::XLARGE,
            build: |v| resnet_v2(parse_or(v, 50)),
        },
        Family {
            name: "mobilenet_v1",
            variants: &["0.25", "0.5", "0.75", "1.0"],
            sizes: sizes::XLARGE,
            build: |v| mobilenet_v1(parse_or(v, 1.0)),
        },
        Family {
            name: "mobilenet_v2",
            variants: &["0.35", "0.5", "0.75", "1.0", "1.4"],
            sizes: sizes::XLARGE,
            build: |v| mobilenet_v2(parse_or(v, 1.0)),
        },
        Family {
            name: "resnext",
            variants: &["50", "101"],
            sizes: sizes::XLARGE,
            build: |v| resnext(parse_or(v, 50)),
        },
        Family {
            name: "shufflenet",
            variants: &["g1", "g2", "g3", "g4"],
            sizes: sizes::XLARGE,
            build: |v| shufflenet(parse_or(v.trim_start_matches('g'), 1)),
        },
    ]
}

fn scaled(channels: u64, multiplier: f64) -> u64 {
    make_divisible(channels as f64 * multiplier, 8)
}

/// Rounds to the nearest multiple of `divisor`, never dropping below 90%.
fn make_divisible(value: f64, divisor: u64) -> u64 {
    let d = divisor as f64;
    let mut v = ((value + d / 2.0) / d).floor().max(1.0) * d;
    if v < 0.9 * value {
        v += d;
    }
    v as u64
}

fn cbr(b: &mut GraphBuilder, x: &str, filters: u64, k: u64, s: u64, act: ActivationFn) -> String {
    b.conv_bn_act(
        x,
        Conv2dParams::square(filters, k, s, Same).with_bias(false),
        act,
    )
}

fn head(b: &mut GraphBuilder, x: &str, classes: u64) -> String {
    let g = b.global_pool(x, PoolMode::Avg);
    b.dense(&g, classes, true)
}

// ---------------------------------------------------------------------------
// ResNet family

fn resnet_layout(depth: u32) -> (bool, [u32; 4]) {
    match depth {
        18 => (false, [2, 2, 2, 2]),
        34 => (false, [3, 4, 6, 3]),
        50 => (true, [3, 4, 6, 3]),
        101 => (true, [3, 4, 23, 3]),
        152 => (true, [3, 8, 36, 3]),
        200 => (true, [3, 24, 36, 3]),
        _ => (true, [3, 4, 6, 3]),
    }
}

/// ResNet v1: stride on the first 1x1 of each downsampling bottleneck,
/// biased convolutions followed by batch norm.
pub fn resnet_v1(depth: u32) -> Result<ModelGraph, GraphError> {
    let (bottleneck, blocks) = resnet_layout(depth);
    let mut b = GraphBuilder::new(format!("resnet_v1_{depth}"), "resnet_v1", depth.to_string());
    let conv = |b: &mut GraphBuilder, x: &str, f, k, s| {
        let c = b.conv(x, f, k, s, Same);
        b.batch_norm(&c)
    };
    let x = conv(&mut b, "input", 64, 7, 2);
    let x = b.activation(&x, Relu);
    let mut x = b.pool(&x, PoolMode::Max, 3, 2, Same);
    let mut in_ch = 64;
    for (stage, &n) in blocks.iter().enumerate() {
        let width = 64u64 << stage;
        let out_ch = if bottleneck { width * 4 } else { width };
        for i in 0..n {
            let stride = if i == 0 && stage > 0 { 2 } else { 1 };
            let main = if bottleneck {
                let y = conv(&mut b, &x, width, 1, stride);
                let y = b.activation(&y, Relu);
                let y = conv(&mut b, &y, width, 3, 1);
                let y = b.activation(&y, Relu);
                conv(&mut b, &y, out_ch, 1, 1)
            } else {
                let y = conv(&mut b, &x, width, 3, stride);
                let y = b.activation(&y, Relu);
                conv(&mut b, &y, width, 3, 1)
            };
            let shortcut = if stride != 1 || in_ch != out_ch {
                conv(&mut b, &x, out_ch, 1, stride)
            } else {
                x.clone()
            };
            let s = b.add(&[&main, &shortcut]);
            x = b.activation(&s, Relu);
            in_ch = out_ch;
        }
    }
    head(&mut b, &x, 1000);
    b.build()
}

/// Pre-activation ResNet (v2).
pub fn resnet_v2(depth: u32) -> Result<ModelGraph, GraphError> {
    let (bottleneck, blocks) = resnet_layout(depth);
    let mut b = GraphBuilder::new(format!("resnet_v2_{depth}"), "resnet_v2", depth.to_string());
    let mut x = b.conv("input", 64, 7, 2, Same);
    x = b.pool(&x, PoolMode::Max, 3, 2, Same);
    let mut in_ch = 64;
    for (stage, &n) in blocks.iter().enumerate() {
        let width = 64u64 << stage;
        let out_ch = if bottleneck { width * 4 } else { width };
        for i in 0..n {
            let stride = if i == 0 && stage > 0 { 2 } else { 1 };
            let pre = b.batch_norm(&x);
            let pre = b.activation(&pre, Relu);
            let shortcut = if stride != 1 || in_ch != out_ch {
                b.conv(&pre, out_ch, 1, stride, Same)
            } else {
                x.clone()
            };
            let main = if bottleneck {
                let y = cbr(&mut b, &pre, width, 1, 1, Relu);
                let y = cbr(&mut b, &y, width, 3, stride, Relu);
                b.conv(&y, out_ch, 1, 1, Same)
            } else {
                let y = cbr(&mut b, &pre, width, 3, stride, Relu);
                b.conv(&y, width, 3, 1, Same)
            };
            x = b.add(&[&main, &shortcut]);
            in_ch = out_ch;
        }
    }
    let x = b.batch_norm(&x);
    let x = b.activation(&x, Relu);
    head(&mut b, &x, 1000);
    b.build()
}

/// ResNeXt 32x4d: bottlenecks with a 32-group 3x3 convolution.
pub fn resnext(depth: u32) -> Result<ModelGraph, GraphError> {
    let (_, blocks) = resnet_layout(depth);
    let mut b = GraphBuilder::new(format!("resnext_{depth}"), "resnext", depth.to_string());
    let x = cbr(&mut b, "input", 64, 7, 2, Relu);
    let mut x = b.pool(&x, PoolMode::Max, 3, 2, Same);
    let mut in_ch = 64;
    for (stage, &n) in blocks.iter().enumerate() {
        let width = 128u64 << stage;
        let out_ch = 256u64 << stage;
        for i in 0..n {
            let stride = if i == 0 && stage > 0 { 2 } else { 1 };
            let y = cbr(&mut b, &x, width, 1, 1, Relu);
            let y = b.conv_bn_act(
                &y,
                Conv2dParams::square(width, 3, stride, Same)
                    .with_groups(32)
                    .with_bias(false),
                Relu,
            );
            let y = b.conv_with(&y, Conv2dParams::square(out_ch, 1, 1, Same).with_bias(false));
            let y = b.batch_norm(&y);
            let shortcut = if stride != 1 || in_ch != out_ch {
                let s = b.conv_with(
                    &x,
                    Conv2dParams::square(out_ch, 1, stride, Same).with_bias(false),
                );
                b.batch_norm(&s)
            } else {
                x.clone()
            };
            let s = b.add(&[&y, &shortcut]);
            x = b.activation(&s, Relu);
            in_ch = out_ch;
        }
    }
    head(&mut b, &x, 1000);
    b.build()
}

// ---------------------------------------------------------------------------
// DenseNet

/// DenseNet-BC with bottleneck layers and 0.5 compression.
pub fn densenet(depth: u32) -> Result<ModelGraph, GraphError> {
    let (growth, stem, blocks): (u64, u64, [u32; 4]) = match depth {
        161 => (48, 96, [6, 12, 36, 24]),
        169 => (32, 64, [6, 12, 32, 32]),
        201 => (32, 64, [6, 12, 48, 32]),
        264 => (32, 64, [6, 12, 64, 48]),
        _ => (32, 64, [6, 12, 24, 16]),
    };
    let mut b = GraphBuilder::new(format!("densenet_{depth}"), "densenet", depth.to_string());
    let x = cbr(&mut b, "input", stem, 7, 2, Relu);
    let mut x = b.pool(&x, PoolMode::Max, 3, 2, Same);
    let mut channels = stem;
    for (i, &n) in blocks.iter().enumerate() {
        for _ in 0..n {
            let y = b.batch_norm(&x);
            let y = b.activation(&y, Relu);
            let y = b.conv_with(&y, Conv2dParams::square(4 * growth, 1, 1, Same).with_bias(false));
            let y = b.batch_norm(&y);
            let y = b.activation(&y, Relu);
            let y = b.conv_with(&y, Conv2dParams::square(growth, 3, 1, Same).with_bias(false));
            x = b.concat(&[&x, &y]);
            channels += growth;
        }
        if i + 1 < blocks.len() {
            channels /= 2;
            let y = b.batch_norm(&x);
            let y = b.activation(&y, Relu);
            let y = b.conv_with(&y, Conv2dParams::square(channels, 1, 1, Same).with_bias(false));
            x = b.pool(&y, PoolMode::Avg, 2, 2, Same);
        }
    }
    let x = b.batch_norm(&x);
    let x = b.activation(&x, Relu);
    head(&mut b, &x, 1000);
    b.build()
}

// ---------------------------------------------------------------------------
// Mobile families

pub fn mobilenet_v1(alpha: f64) -> Result<ModelGraph, GraphError> {
    let mut b = GraphBuilder::new(format!("mobilenet_v1_{alpha}"), "mobilenet_v1", alpha.to_string());
    let mut ch = scaled(32, alpha);
    let mut x = cbr(&mut b, "input", ch, 3, 2, Relu6);
    let plan: [(u64, u64); 13] = [
        (64, 1),
        (128, 2),
        (128, 1),
        (256, 2),
        (256, 1),
        (512, 2),
        (512, 1),
        (512, 1),
        (512, 1),
        (512, 1),
        (512, 1),
        (1024, 2),
        (1024, 1),
    ];
    for (filters, stride) in plan {
        let y = b.depthwise(&x, ch, 3, stride);
        let y = b.batch_norm(&y);
        let y = b.activation(&y, Relu6);
        ch = scaled(filters, alpha);
        x = cbr(&mut b, &y, ch, 1, 1, Relu6);
    }
    head(&mut b, &x, 1000);
    b.build()
}

struct MbStage {
    expand: u64,
    channels: u64,
    repeats: u32,
    stride: u64,
    kernel: u64,
}

const fn st(expand: u64, channels: u64, repeats: u32, stride: u64, kernel: u64) -> MbStage {
    MbStage {
        expand,
        channels,
        repeats,
        stride,
        kernel,
    }
}

fn inverted_residual(
    b: &mut GraphBuilder,
    x: &str,
    in_ch: u64,
    out_ch: u64,
    expand: u64,
    stride: u64,
    kernel: u64,
    act: ActivationFn,
) -> String {
    let hidden = in_ch * expand;
    let mut y = x.to_string();
    if expand != 1 {
        y = cbr(b, &y, hidden, 1, 1, act);
    }
    let d = b.depthwise(&y, hidden, kernel, stride);
    let d = b.batch_norm(&d);
    let d = b.activation(&d, act);
    let p = b.conv_with(&d, Conv2dParams::square(out_ch, 1, 1, Same).with_bias(false));
    let p = b.batch_norm(&p);
    if stride == 1 && in_ch == out_ch {
        b.add(&[&p, x])
    } else {
        p
    }
}

fn mobile_net(
    name: String,
    family: &str,
    variant: String,
    stem: u64,
    stages: &[MbStage],
    width: f64,
    depth: f64,
    head_ch: u64,
    act: ActivationFn,
) -> Result<ModelGraph, GraphError> {
    let mut b = GraphBuilder::new(name, family, variant);
    let mut ch = scaled(stem, width);
    let mut x = cbr(&mut b, "input", ch, 3, 2, act);
    for s in stages {
        let out = scaled(s.channels, width);
        let repeats = (s.repeats as f64 * depth).ceil() as u32;
        for i in 0..repeats {
            let stride = if i == 0 { s.stride } else { 1 };
            x = inverted_residual(&mut b, &x, ch, out, s.expand, stride, s.kernel, act);
            ch = out;
        }
    }
    let last = if width > 1.0 { scaled(head_ch, width) } else { head_ch };
    let x = cbr(&mut b, &x, last, 1, 1, act);
    head(&mut b, &x, 1000);
    b.build()
}

pub fn mobilenet_v2(alpha: f64) -> Result<ModelGraph, GraphError> {
    const STAGES: [MbStage; 7] = [
        st(1, 16, 1, 1, 3),
        st(6, 24, 2, 2, 3),
        st(6, 32, 3, 2, 3),
        st(6, 64, 4, 2, 3),
        st(6, 96, 3, 1, 3),
        st(6, 160, 3, 2, 3),
        st(6, 320, 1, 1, 3),
    ];
    mobile_net(
        format!("mobilenet_v2_{alpha}"),
        "mobilenet_v2",
        alpha.to_string(),
        32,
        &STAGES,
        alpha,
        1.0,
        1280,
        Relu6,
    )
}

pub fn mnasnet(alpha: f64) -> Result<ModelGraph, GraphError> {
    const STAGES: [MbStage; 7] = [
        st(1, 16, 1, 1, 3),
        st(3, 24, 3, 2, 3),
        st(3, 40, 3, 2, 5),
        st(6, 80, 3, 2, 5),
        st(6, 96, 2, 1, 3),
        st(6, 192, 4, 2, 5),
        st(6, 320, 1, 1, 3),
    ];
    mobile_net(
        format!("mnasnet_{alpha}"),
        "mnasnet",
        alpha.to_string(),
        32,
        &STAGES,
        alpha,
        1.0,
        1280,
        Relu,
    )
}

/// EfficientNet-like compound scaling (B0..B3) without squeeze-excitation.
pub fn efficientnet(level: u32) -> Result<ModelGraph, GraphError> {
    const STAGES: [MbStage; 7] = [
        st(1, 16, 1, 1, 3),
        st(6, 24, 2, 2, 3),
        st(6, 40, 2, 2, 5),
        st(6, 80, 3, 2, 3),
        st(6, 112, 3, 1, 5),
        st(6, 192, 4, 2, 5),
        st(6, 320, 1, 1, 3),
    ];
    let (width, depth) = match level {
        1 => (1.0, 1.1),
        2 => (1.1, 1.2),
        3 => (1.2, 1.4),
        _ => (1.0, 1.0),
    };
    mobile_net(
        format!("efficientnet_b{level}"),
        "efficientnet",
        format!("b{level}"),
        32,
        &STAGES,
        width,
        depth,
        1280,
        Swish,
    )
}

/// ShuffleNet v1 style units with grouped pointwise convolutions.
pub fn shufflenet(groups: u64) -> Result<ModelGraph, GraphError> {
    let groups = groups.clamp(1, 4);
    let stage_out: [u64; 3] = match groups {
        1 => [144, 288, 576],
        2 => [200, 400, 800],
        3 => [240, 480, 960],
        _ => [272, 544, 1088],
    };
    let mut b = GraphBuilder::new(format!("shufflenet_g{groups}"), "shufflenet", format!("g{groups}"));
    let x = cbr(&mut b, "input", 24, 3, 2, Relu);
    let mut x = b.pool(&x, PoolMode::Max, 3, 2, Same);
    let mut in_ch = 24u64;
    for (stage, (&out, repeats)) in stage_out.iter().zip([4u32, 8, 4]).enumerate() {
        for i in 0..repeats {
            let down = i == 0;
            let branch_out = if down { out - in_ch } else { out };
            let bottleneck = (out / 4).div_ceil(groups) * groups;
            let first_groups = if stage == 0 && i == 0 { 1 } else { groups };
            let y = b.conv_bn_act(
                &x,
                Conv2dParams::square(bottleneck, 1, 1, Same)
                    .with_groups(first_groups)
                    .with_bias(false),
                Relu,
            );
            let y = b.depthwise(&y, bottleneck, 3, if down { 2 } else { 1 });
            let y = b.batch_norm(&y);
            let y = b.conv_with(
                &y,
                Conv2dParams::square(branch_out, 1, 1, Same)
                    .with_groups(if branch_out % groups == 0 { groups } else { 1 })
                    .with_bias(false),
            );
            let y = b.batch_norm(&y);
            let merged = if down {
                let s = b.pool(&x, PoolMode::Avg, 3, 2, Same);
                b.concat(&[&s, &y])
            } else {
                b.add(&[&x, &y])
            };
            x = b.activation(&merged, Relu);
            in_ch = out;
        }
    }
    head(&mut b, &x, 1000);
    b.build()
}

// ---------------------------------------------------------------------------
// Inception-style families

fn inception_module(b: &mut GraphBuilder, x: &str, c: [u64; 6]) -> String {
    let b1 = cbr(b, x, c[0], 1, 1, Relu);
    let b2 = cbr(b, x, c[1], 1, 1, Relu);
    let b2 = cbr(b, &b2, c[2], 3, 1, Relu);
    let b3 = cbr(b, x, c[3], 1, 1, Relu);
    let b3 = cbr(b, &b3, c[4], 5, 1, Relu);
    let b4 = b.pool(x, PoolMode::Max, 3, 1, Same);
    let b4 = cbr(b, &b4, c[5], 1, 1, Relu);
    b.concat(&[&b1, &b2, &b3, &b4])
}

pub fn googlenet() -> Result<ModelGraph, GraphError> {
    let mut b = GraphBuilder::new("googlenet", "googlenet", "v1");
    let x = cbr(&mut b, "input", 64, 7, 2, Relu);
    let x = b.pool(&x, PoolMode::Max, 3, 2, Same);
    let x = cbr(&mut b, &x, 64, 1, 1, Relu);
    let x = cbr(&mut b, &x, 192, 3, 1, Relu);
    let mut x = b.pool(&x, PoolMode::Max, 3, 2, Same);
    let modules: [[u64; 6]; 9] = [
        [64, 96, 128, 16, 32, 32],
        [128, 128, 192, 32, 96, 64],
        [192, 96, 208, 16, 48, 64],
        [160, 112, 224, 24, 64, 64],
        [128, 128, 256, 24, 64, 64],
        [112, 144, 288, 32, 64, 64],
        [256, 160, 320, 32, 128, 128],
        [256, 160, 320, 32, 128, 128],
        [384, 192, 384, 48, 128, 128],
    ];
    for (i, m) in modules.iter().enumerate() {
        x = inception_module(&mut b, &x, *m);
        if i == 1 || i == 6 {
            x = b.pool(&x, PoolMode::Max, 3, 2, Same);
        }
    }
    head(&mut b, &x, 1000);
    b.build()
}

fn cbr_hw(b: &mut GraphBuilder, x: &str, f: u64, kh: u64, kw: u64) -> String {
    let p = Conv2dParams {
        filters: f,
        kernel_h: kh,
        kernel_w: kw,
        stride_h: 1,
        stride_w: 1,
        padding: Same,
        groups: 1,
        use_bias: false,
    };
    b.conv_bn_act(x, p, Relu)
}

/// Inception v3 with factorized 1x7/7x1 and 1x3/3x1 branches.
pub fn inception_v3() -> Result<ModelGraph, GraphError> {
    let mut b = GraphBuilder::new("inception_v3", "inception_v3", "v3");
    let x = cbr(&mut b, "input", 32, 3, 2, Relu);
    let x = cbr(&mut b, &x, 32, 3, 1, Relu);
    let x = cbr(&mut b, &x, 64, 3, 1, Relu);
    let x = b.pool(&x, PoolMode::Max, 3, 2, Same);
    let x = cbr(&mut b, &x, 80, 1, 1, Relu);
    let x = cbr(&mut b, &x, 192, 3, 1, Relu);
    let mut x = b.pool(&x, PoolMode::Max, 3, 2, Same);

    for pool_proj in [32, 64, 64] {
        let b1 = cbr(&mut b, &x, 64, 1, 1, Relu);
        let b2 = cbr(&mut b, &x, 48, 1, 1, Relu);
        let b2 = cbr(&mut b, &b2, 64, 5, 1, Relu);
        let b3 = cbr(&mut b, &x, 64, 1, 1, Relu);
        let b3 = cbr(&mut b, &b3, 96, 3, 1, Relu);
        let b3 = cbr(&mut b, &b3, 96, 3, 1, Relu);
        let b4 = b.pool(&x, PoolMode::Avg, 3, 1, Same);
        let b4 = cbr(&mut b, &b4, pool_proj, 1, 1, Relu);
        x = b.concat(&[&b1, &b2, &b3, &b4]);
    }

    let r1 = cbr(&mut b, &x, 384, 3, 2, Relu);
    let r2 = cbr(&mut b, &x, 64, 1, 1, Relu);
    let r2 = cbr(&mut b, &r2, 96, 3, 1, Relu);
    let r2 = cbr(&mut b, &r2, 96, 3, 2, Relu);
    let r3 = b.pool(&x, PoolMode::Max, 3, 2, Same);
    x = b.concat(&[&r1, &r2, &r3]);

    for c7 in [128, 160, 160, 192] {
        let b1 = cbr(&mut b, &x, 192, 1, 1, Relu);
        let b2 = cbr(&mut b, &x, c7, 1, 1, Relu);
        let b2 = cbr_hw(&mut b, &b2, c7, 1, 7);
        let b2 = cbr_hw(&mut b, &b2, 192, 7, 1);
        let b3 = cbr(&mut b, &x, c7, 1, 1, Relu);
        let b3 = cbr_hw(&mut b, &b3, c7, 7, 1);
        let b3 = cbr_hw(&mut b, &b3, c7, 1, 7);
        let b3 = cbr_hw(&mut b, &b3, c7, 7, 1);
        let b3 = cbr_hw(&mut b, &b3, 192, 1, 7);
        let b4 = b.pool(&x, PoolMode::Avg, 3, 1, Same);
        let b4 = cbr(&mut b, &b4, 192, 1, 1, Relu);
        x = b.concat(&[&b1, &b2, &b3, &b4]);
    }

    let r1 = cbr(&mut b, &x, 192, 1, 1, Relu);
    let r1 = cbr(&mut b, &r1, 320, 3, 2, Relu);
    let r2 = cbr(&mut b, &x, 192, 1, 1, Relu);
    let r2 = cbr_hw(&mut b, &r2, 192, 1, 7);
    let r2 = cbr_hw(&mut b, &r2, 192, 7, 1);
    let r2 = cbr(&mut b, &r2, 192, 3, 2, Relu);
    let r3 = b.pool(&x, PoolMode::Max, 3, 2, Same);
    x = b.concat(&[&r1, &r2, &r3]);

    for _ in 0..2 {
        let b1 = cbr(&mut b, &x, 320, 1, 1, Relu);
        let b2 = cbr(&mut b, &x, 384, 1, 1, Relu);
        let b2a = cbr_hw(&mut b, &b2, 384, 1, 3);
        let b2b = cbr_hw(&mut b, &b2, 384, 3, 1);
        let b3 = cbr(&mut b, &x, 448, 1, 1, Relu);
        let b3 = cbr(&mut b, &b3, 384, 3, 1, Relu);
        let b3a = cbr_hw(&mut b, &b3, 384, 1, 3);
        let b3b = cbr_hw(&mut b, &b3, 384, 3, 1);
        let b4 = b.pool(&x, PoolMode::Avg, 3, 1, Same);
        let b4 = cbr(&mut b, &b4, 192, 1, 1, Relu);
        x = b.concat(&[&b1, &b2a, &b2b, &b3a, &b3b, &b4]);
    }
    head(&mut b, &x, 1000);
    b.build()
}

fn separable(b: &mut GraphBuilder, x: &str, in_ch: u64, out_ch: u64) -> String {
    let d = b.depthwise(x, in_ch, 3, 1);
    let p = b.conv_with(&d, Conv2dParams::square(out_ch, 1, 1, Same).with_bias(false));
    b.batch_norm(&p)
}

pub fn xception() -> Result<ModelGraph, GraphError> {
    let mut b = GraphBuilder::new("xception", "xception", "v1");
    let x = cbr(&mut b, "input", 32, 3, 2, Relu);
    let mut x = cbr(&mut b, &x, 64, 3, 1, Relu);
    let mut ch = 64;
    for (i, out) in [128u64, 256, 728].into_iter().enumerate() {
        let res = b.conv_with(&x, Conv2dParams::square(out, 1, 2, Same).with_bias(false));
        let res = b.batch_norm(&res);
        let mut y = x.clone();
        if i > 0 {
            y = b.activation(&y, Relu);
        }
        let y = separable(&mut b, &y, ch, out);
        let y = b.activation(&y, Relu);
        let y = separable(&mut b, &y, out, out);
        let y = b.pool(&y, PoolMode::Max, 3, 2, Same);
        x = b.add(&[&y, &res]);
        ch = out;
    }
    for _ in 0..8 {
        let mut y = x.clone();
        for _ in 0..3 {
            y = b.activation(&y, Relu);
            y = separable(&mut b, &y, 728, 728);
        }
        x = b.add(&[&y, &x]);
    }
    let res = b.conv_with(&x, Conv2dParams::square(1024, 1, 2, Same).with_bias(false));
    let res = b.batch_norm(&res);
    let y = b.activation(&x, Relu);
    let y = separable(&mut b, &y, 728, 728);
    let y = b.activation(&y, Relu);
    let y = separable(&mut b, &y, 728, 1024);
    let y = b.pool(&y, PoolMode::Max, 3, 2, Same);
    let x = b.add(&[&y, &res]);
    let x = separable(&mut b, &x, 1024, 1536);
    let x = b.activation(&x, Relu);
    let x = separable(&mut b, &x, 1536, 2048);
    let x = b.activation(&x, Relu);
    head(&mut b, &x, 1000);
    b.build()
}

/// A small plain CNN used in documentation and examples.
pub fn plain_cnn() -> Result<ModelGraph, GraphError> {
    let mut b = GraphBuilder::new("plain_cnn", "plain", "small");
    let x = cbr(&mut b, "input", 16, 3, 1, Relu);
    let x = b.pool(&x, PoolMode::Max, 2, 2, Valid);
    let x = cbr(&mut b, &x, 32, 3, 1, Relu);
    let x = b.pool(&x, PoolMode::Max, 2, 2, Valid);
    let x = b.flatten(&x);
    let x = b.dense(&x, 64, true);
    let x = b.activation(&x, Relu);
    b.dense(&x, 10, true);
    b.build()
}
