mod common;

use latproph::features::{count_flops, extract_features, layer_flops, Feature};
use latproph::graph::{infer_shapes, parse_model, ActivationFn, GraphBuilder, LayerKind, Padding};
use latproph::synth::{generate_cnn, SynthConfig};
use proptest::prelude::*;

fn within(value: f64, target: f64, rel: f64) -> bool {
    (value - target).abs() <= rel * target
}

#[test]
fn bundled_reference_conv_flops() {
    let r = parse_model(&common::bundled_graph("resnet50.cnn")).unwrap();
    let conv = count_flops(&infer_shapes(&r, 224, 3).unwrap()).unwrap().conv2d as f64;
    assert!(within(conv, 7.71e9, 0.05), "resnet50 conv flops {conv:e}");
    let d = parse_model(&common::bundled_graph("densenet121.cnn")).unwrap();
    let conv = count_flops(&infer_shapes(&d, 224, 3).unwrap()).unwrap().conv2d as f64;
    assert!(within(conv, 5.67e9, 0.10), "densenet121 conv flops {conv:e}");
}

#[test]
fn conv_params_ignore_input_size_but_flops_do_not() {
    let g = parse_model(&common::bundled_graph("residual_block.cnn")).unwrap();
    let a = extract_features(&infer_shapes(&g, 112, 3).unwrap()).unwrap();
    let b = extract_features(&infer_shapes(&g, 224, 3).unwrap()).unwrap();
    assert_eq!(a[Feature::ConvParams], b[Feature::ConvParams]);
    assert_eq!(a[Feature::FcParams], b[Feature::FcParams]);
    assert!(b[Feature::TotalFlops] > a[Feature::TotalFlops]);
    assert!(b[Feature::SumActivations] > a[Feature::SumActivations]);
}

/// Stride-1, "same"-padded convolutions only.
fn stride_one_net(filters: &[u64], kernels: &[u64]) -> latproph::graph::ModelGraph {
    let mut b = GraphBuilder::new("s1", "t", "1");
    let mut x = b.input();
    for (&f, &k) in filters.iter().zip(kernels) {
        let c = b.conv(&x, f, k, 1, Padding::Same);
        x = b.activation(&c, ActivationFn::Relu);
    }
    b.build().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn doubling_size_quadruples_conv_activations(
        filters in prop::collection::vec(1u64..64, 1..6),
        kernel in prop::sample::select(vec![1u64, 3, 5, 7]),
        size in 1u64..200,
    ) {
        let kernels = vec![kernel; filters.len()];
        let g = stride_one_net(&filters, &kernels);
        let conv_acts = |s: u64| -> u64 {
            let sg = infer_shapes(&g, s, 3).unwrap();
            g.layers()
                .iter()
                .enumerate()
                .filter(|(_, l)| l.kind() == LayerKind::Conv2D)
                .map(|(i, _)| sg.output(i).elements())
                .sum()
        };
        prop_assert_eq!(conv_acts(2 * size), 4 * conv_acts(size));
    }

    #[test]
    fn flops_are_the_sum_of_layer_flops(seed in 0u64..10_000, index in 0usize..4, size in 16u64..512) {
        let cfg = SynthConfig { seed, n_models: 4, ..SynthConfig::default() };
        let g = generate_cnn(&cfg, index).unwrap();
        let sg = infer_shapes(&g, size, 3).unwrap();
        let total = count_flops(&sg).unwrap().total;
        let summed: u64 = (0..g.len()).map(|i| layer_flops(&sg, i).unwrap().total).sum();
        prop_assert_eq!(total, summed);
    }

    #[test]
    fn extraction_is_pure(seed in 0u64..10_000, index in 0usize..4, size in 16u64..512) {
        let cfg = SynthConfig { seed, n_models: 4, ..SynthConfig::default() };
        let g = generate_cnn(&cfg, index).unwrap();
        let a = extract_features(&infer_shapes(&g, size, 3).unwrap()).unwrap();
        let b = extract_features(&infer_shapes(&g.clone(), size, 3).unwrap()).unwrap();
        prop_assert_eq!(a.0.map(f64::to_bits), b.0.map(f64::to_bits));
    }
}
