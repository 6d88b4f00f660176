mod common;

use latproph::graph::{
    infer_shapes, parse_model, to_document, GraphBuilder, LayerKind, Padding, TensorShape,
};
use latproph::synth::{generate_cnn, SynthConfig};
use latproph::zoo;
use proptest::prelude::*;

fn synth_cfg(seed: u64) -> SynthConfig {
    SynthConfig {
        seed,
        n_models: 8,
        ..SynthConfig::default()
    }
}

#[test]
fn bundled_documents_parse_and_shape() {
    for name in [
        "plain_cnn.cnn",
        "residual_block.cnn",
        "depthwise_block.cnn",
        "resnet50.cnn",
        "densenet121.cnn",
    ] {
        let g = parse_model(&common::bundled_graph(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        infer_shapes(&g, 224, 3).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn plain_example_shapes() {
    let g = parse_model(&common::bundled_graph("plain_cnn.cnn")).unwrap();
    let sg = infer_shapes(&g, 32, 3).unwrap();
    let spatial = |h, w, c| Some(TensorShape::Spatial { h, w, c });
    assert_eq!(sg.shape_of("conv1"), spatial(16, 16, 32));
    assert_eq!(sg.shape_of("pool1"), spatial(8, 8, 32));
    assert_eq!(sg.shape_of("conv2"), spatial(8, 8, 64));
    assert_eq!(sg.shape_of("flat"), Some(TensorShape::Flat(4096)));
    assert_eq!(sg.shape_of("logits"), Some(TensorShape::Flat(10)));
}

#[test]
fn bundled_reference_graphs_match_the_zoo() {
    let r = parse_model(&common::bundled_graph("resnet50.cnn")).unwrap();
    assert_eq!(r, zoo::resnet_v1(50).unwrap());
    let d = parse_model(&common::bundled_graph("densenet121.cnn")).unwrap();
    assert_eq!(d, zoo::densenet(121).unwrap());
}

#[test]
fn layers_may_reference_later_declarations() {
    let doc = r#"{"name": "fwd", "family": "t", "variant": "1", "layers": [
        {"id": "fc", "kind": "Dense", "inputs": ["gp"], "params": {"units": 4}},
        {"id": "gp", "kind": "GlobalPool", "inputs": ["c"]},
        {"id": "c", "kind": "Conv2D", "inputs": ["in"], "params": {"filters": 8, "kernel": 3}},
        {"id": "in", "kind": "Input"}
    ]}"#;
    let g = parse_model(doc).unwrap();
    let sg = infer_shapes(&g, 10, 3).unwrap();
    assert_eq!(sg.shape_of("c"), Some(TensorShape::Spatial { h: 8, w: 8, c: 8 }));
    assert_eq!(sg.shape_of("fc"), Some(TensorShape::Flat(4)));
}

#[test]
fn zoo_documents_round_trip() {
    for fam in zoo::families() {
        for v in fam.variants.iter() {
            let g = fam.build(v).unwrap();
            assert_eq!(parse_model(&to_document(&g)).unwrap(), g, "{}", g.name);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn generated_documents_round_trip(seed in 0u64..10_000, index in 0usize..8) {
        let g = generate_cnn(&synth_cfg(seed), index).unwrap();
        let doc = to_document(&g);
        let back = parse_model(&doc).unwrap();
        prop_assert_eq!(&back, &g);
        prop_assert_eq!(to_document(&back), doc);
    }

    #[test]
    fn shape_inference_is_total(seed in 0u64..10_000, index in 0usize..8, size in 1u64..600) {
        let g = generate_cnn(&synth_cfg(seed), index).unwrap();
        let sg = infer_shapes(&g, size, 3).unwrap();
        let ids: Vec<&str> = sg.tensor_shapes().map(|(id, _)| id).collect();
        prop_assert_eq!(ids.len(), g.len());
        for l in g.layers() {
            prop_assert!(sg.shape_of(&l.id).is_some());
        }
    }

    #[test]
    fn spatial_dims_are_monotone_in_input_size(
        seed in 0u64..10_000,
        index in 0usize..8,
        size in 1u64..400,
        grow in 1u64..200,
    ) {
        let g = generate_cnn(&synth_cfg(seed), index).unwrap();
        let small = infer_shapes(&g, size, 3).unwrap();
        let large = infer_shapes(&g, size + grow, 3).unwrap();
        for (a, b) in small.shapes().iter().zip(large.shapes()) {
            if let (TensorShape::Spatial { h: h1, w: w1, .. }, TensorShape::Spatial { h: h2, w: w2, .. }) = (a, b) {
                prop_assert!(h2 >= h1 && w2 >= w1);
            }
        }
    }

    #[test]
    fn stride_one_same_conv_keeps_spatial_size(kernel in 1u64..=7, size in 1u64..300, filters in 1u64..64) {
        let mut b = GraphBuilder::new("one", "t", "1");
        b.conv("input", filters, kernel, 1, Padding::Same);
        let g = b.build().unwrap();
        let sg = infer_shapes(&g, size, 3).unwrap();
        prop_assert_eq!(sg.output(1), TensorShape::Spatial { h: size, w: size, c: filters });
        prop_assert_eq!(g.count_kind(LayerKind::Conv2D), 1);
    }
}
