#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use latproph::dataset::{Dataset, MeasurementRecord, SplitPlan};
use latproph::features::{Feature, FeatureVector, FEATURE_COUNT};

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn bundled_graph(name: &str) -> String {
    let path = repo_root().join("docs/graphs").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// A family/variant/size grid of records with a smooth made-up latency.
/// `shape[f]` lists, per variant of family `f`, the number of input sizes.
pub fn grid_dataset(shape: &[Vec<usize>]) -> Dataset {
    const SIZES: [u64; 8] = [32, 64, 96, 128, 160, 224, 299, 320];
    let mut records = Vec::new();
    for (f, variants) in shape.iter().enumerate() {
        for (v, &n_sizes) in variants.iter().enumerate() {
            for &size in SIZES.iter().take(n_sizes) {
                let mut x = [0.0; FEATURE_COUNT];
                let px = (size * size) as f64;
                x[Feature::TotalFlops.index()] = px * 1e4 * (f + 1) as f64 * (v + 1) as f64;
                x[Feature::SumActivations.index()] = px * (10 + f) as f64;
                x[Feature::TotalLayers.index()] = (10 + 3 * f + v) as f64;
                x[Feature::InputImageSize.index()] = size as f64;
                let latency_ms = 0.3 + 1e-9 * x[0] + 1e-7 * x[1];
                records.push(MeasurementRecord {
                    model_name: format!("fam{f}_v{v}"),
                    family: format!("fam{f}"),
                    variant: format!("v{v}"),
                    input_size: size,
                    device: "test".into(),
                    features: FeatureVector(x),
                    latency_ms,
                    latency_std_ms: 0.0,
                    replicates: 1,
                });
            }
        }
    }
    Dataset::new("test", records).expect("valid records")
}

/// Every way `plan` breaks the split contract for `ds` at `train_ratio`.
pub fn split_violations(ds: &Dataset, plan: &SplitPlan, train_ratio: f64) -> Vec<String> {
    let recs = ds.records();
    let mut bad = Vec::new();
    let mut seen = vec![0u8; ds.len()];
    for &i in plan.train.iter().chain(&plan.test_nis).chain(&plan.test_ncv).chain(&plan.test_nca) {
        seen[i] += 1;
    }
    if seen.iter().any(|&c| c != 1) {
        bad.push("records are not partitioned exactly once".to_string());
    }
    let train_families: BTreeSet<&str> = plan.train.iter().map(|&i| recs[i].family.as_str()).collect();
    let train_pairs: BTreeSet<(&str, &str)> = plan
        .train
        .iter()
        .map(|&i| (recs[i].family.as_str(), recs[i].variant.as_str()))
        .collect();
    let train_keys: BTreeSet<(&str, &str, u64)> = plan
        .train
        .iter()
        .map(|&i| (recs[i].family.as_str(), recs[i].variant.as_str(), recs[i].input_size))
        .collect();
    for &i in &plan.test_nca {
        if train_families.contains(recs[i].family.as_str()) {
            bad.push(format!("NCA family {} appears in train", recs[i].family));
        }
    }
    for &i in &plan.test_ncv {
        let r = &recs[i];
        if train_pairs.contains(&(r.family.as_str(), r.variant.as_str())) {
            bad.push(format!("NCV variant {}/{} appears in train", r.family, r.variant));
        }
        if !train_families.contains(r.family.as_str()) {
            bad.push(format!("NCV family {} is absent from train", r.family));
        }
    }
    for &i in &plan.test_nis {
        let r = &recs[i];
        if train_keys.contains(&(r.family.as_str(), r.variant.as_str(), r.input_size)) {
            bad.push(format!("NIS size {} of {}/{} appears in train", r.input_size, r.family, r.variant));
        }
        if !train_pairs.contains(&(r.family.as_str(), r.variant.as_str())) {
            bad.push(format!("NIS pair {}/{} is absent from train", r.family, r.variant));
        }
    }
    let target = (train_ratio * ds.len() as f64).round() as usize;
    if plan.train.len().abs_diff(target) > 2 {
        bad.push(format!("train has {} records, target {target}", plan.train.len()));
    }
    bad
}

/// A random grid shape: 3 to 9 families, the first with at least two
/// variants, each variant with 2 to 8 sizes.
pub fn random_shape<R: rand::Rng>(rng: &mut R) -> Vec<Vec<usize>> {
    let families = rng.random_range(3..10);
    (0..families)
        .map(|f| {
            let variants = if f == 0 { rng.random_range(2..5) } else { rng.random_range(1..5) };
            (0..variants).map(|_| rng.random_range(2..9)).collect()
        })
        .collect()
}
