use latproph::eval::{bench_latency, EvalError, MIN_BENCH_REPS};
use latproph::features::{Feature, FeatureVector};

fn rows() -> Vec<FeatureVector> {
    (0..50)
        .map(|i| {
            let mut fv = FeatureVector::default();
            fv[Feature::TotalFlops] = 1e9 + i as f64;
            fv
        })
        .collect()
}

fn cheap(fv: &FeatureVector) -> f64 {
    1e-9 * fv[Feature::TotalFlops] + 0.5
}

#[test]
fn repeated_benchmarks_agree_within_a_factor_of_three() {
    let rows = rows();
    let runs: Vec<u64> = (0..5)
        .map(|_| bench_latency(&cheap, &rows, 400).unwrap().p50_ns.max(1))
        .collect();
    let lo = *runs.iter().min().unwrap();
    let hi = *runs.iter().max().unwrap();
    assert!(hi <= 3 * lo.max(20), "p50 samples {runs:?}");
}

#[test]
fn percentiles_are_ordered() {
    let s = bench_latency(&cheap, &rows(), MIN_BENCH_REPS).unwrap();
    assert_eq!(s.calls, 50 * MIN_BENCH_REPS);
    assert!(s.p50_ns <= s.p99_ns);
    assert!(s.mean_ns > 0.0);
}

#[test]
fn too_few_reps_or_rows_are_errors() {
    assert!(matches!(bench_latency(&cheap, &rows(), 10), Err(EvalError::TooFewReps(10))));
    assert!(matches!(bench_latency(&cheap, &[], 100), Err(EvalError::NoRows)));
}
