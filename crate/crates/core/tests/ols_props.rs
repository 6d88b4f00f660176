use latproph::features::{Feature, FeatureVector};
use latproph::ols::{fit_ols, stepwise_select, DEFAULT_STOP_DELTA};
use latproph::rng;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

const USED: [Feature; 3] = [Feature::TotalFlops, Feature::SumActivations, Feature::TotalLayers];

fn random_rows(seed: u64, n: usize) -> (Vec<FeatureVector>, Vec<f64>) {
    let mut r = rng::seeded(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let mut fv = FeatureVector::default();
        fv[Feature::TotalFlops] = r.random_range(1e8..1e10);
        fv[Feature::SumActivations] = r.random_range(1e5..1e7);
        fv[Feature::TotalLayers] = r.random_range(10.0..300.0);
        y.push(
            2.0 + 3e-9 * fv[Feature::TotalFlops]
                + 4e-7 * fv[Feature::SumActivations]
                + 0.01 * fv[Feature::TotalLayers]
                + noise.sample(&mut r),
        );
        rows.push(fv);
    }
    (rows, y)
}

fn centered(v: &[f64]) -> Vec<f64> {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - m).collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
fn least_squares_overestimates_the_top_of_a_concave_law() {
    let mut r = rng::seeded(5);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for _ in 0..500 {
        let mut fv = FeatureVector::default();
        let flops = r.random_range(1e8..1e11);
        fv[Feature::TotalFlops] = flops;
        y.push(1e-4 * flops.sqrt());
        rows.push(fv);
    }
    let m = fit_ols(&rows, &y, &[Feature::TotalFlops]).unwrap();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| rows[a][Feature::TotalFlops].total_cmp(&rows[b][Feature::TotalFlops]));
    let top = &order[order.len() * 9 / 10..];
    let bias = top.iter().map(|&i| m.predict(&rows[i]) - y[i]).sum::<f64>() / top.len() as f64;
    assert!(bias > 0.0, "top-decile bias {bias}");
}

#[test]
fn stepwise_keeps_the_features_of_a_three_term_law() {
    let (rows, y) = random_rows(17, 400);
    let order = [
        Feature::TotalFlops,
        Feature::SumActivations,
        Feature::TotalLayers,
        Feature::ConvParams,
        Feature::FcParams,
    ];
    let mut rows = rows;
    let mut r = rng::seeded(18);
    for fv in &mut rows {
        fv[Feature::ConvParams] = r.random_range(1e5..1e7);
        fv[Feature::FcParams] = r.random_range(1e3..1e6);
    }
    let (model, report) = stepwise_select(&rows, &y, &order, DEFAULT_STOP_DELTA).unwrap();
    assert_eq!(report.chosen_k, 3);
    assert_eq!(model.features, USED);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn residuals_are_orthogonal_to_the_columns(seed in any::<u64>(), n in 10usize..200) {
        let (rows, y) = random_rows(seed, n);
        let m = fit_ols(&rows, &y, &USED).unwrap();
        let resid: Vec<f64> = rows.iter().zip(&y).map(|(r, t)| t - m.predict(r)).collect();
        let mean = resid.iter().sum::<f64>() / n as f64;
        let scale = y.iter().map(|v| v.abs()).fold(0.0, f64::max);
        prop_assert!(mean.abs() < 1e-9 * scale);
        for f in USED {
            let col: Vec<f64> = rows.iter().map(|r| r[f]).collect();
            let c = cosine(&centered(&col), &resid);
            prop_assert!(c.abs() < 1e-8, "{f}: cosine {c}");
        }
    }

    #[test]
    fn fit_is_affine_equivariant(seed in any::<u64>(), a in 0.01f64..100.0, b in -50.0f64..50.0) {
        let (rows, y) = random_rows(seed, 60);
        let base = fit_ols(&rows, &y, &USED).unwrap();
        let y2: Vec<f64> = y.iter().map(|v| a * v + b).collect();
        let moved = fit_ols(&rows, &y2, &USED).unwrap();
        for (c1, c2) in base.coefficients.iter().zip(&moved.coefficients) {
            prop_assert!((a * c1 - c2).abs() <= 1e-7 * (a * c1).abs().max(1e-12));
        }
        let want = a * base.intercept + b;
        prop_assert!((want - moved.intercept).abs() <= 1e-7 * want.abs().max(1.0));
    }
}
