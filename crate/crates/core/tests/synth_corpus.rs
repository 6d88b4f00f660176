mod common;

use std::sync::OnceLock;

use latproph::dataset::{read_csv, write_csv, Dataset};
use latproph::features::{Feature, FeatureVector};
use latproph::predictor::ModelKind;
use latproph::synth::{
    base_latency, build_synth_corpus, profiles_from_toml, synth_latency, DeviceProfile, SynthConfig,
    SynthCorpus,
};
use latproph::tuning::{default_grid, HyperGrid};
use proptest::prelude::*;

fn corpus() -> &'static SynthCorpus {
    static CORPUS: OnceLock<SynthCorpus> = OnceLock::new();
    CORPUS.get_or_init(|| build_synth_corpus(&SynthConfig::default(), &DeviceProfile::shipped()).unwrap())
}

fn csv_bytes(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::new();
    write_csv(ds, &mut out).unwrap();
    out
}

fn read_config(rel: &str) -> String {
    std::fs::read_to_string(common::repo_root().join(rel)).unwrap()
}

#[test]
fn default_corpus_has_about_two_thousand_rows() {
    let c = corpus();
    assert_eq!(c.datasets.len(), 2);
    for ds in &c.datasets {
        assert!((1900..=2100).contains(&ds.len()), "{} rows", ds.len());
    }
}

#[test]
fn profiles_share_features_but_not_latencies() {
    let c = corpus();
    let (a, b) = (&c.datasets[0], &c.datasets[1]);
    assert_eq!(a.len(), b.len());
    let mut slower = 0;
    for (ra, rb) in a.records().iter().zip(b.records()) {
        assert_eq!(ra.model_name, rb.model_name);
        assert_eq!(ra.input_size, rb.input_size);
        assert_eq!(ra.features, rb.features);
        if rb.latency_ms > ra.latency_ms {
            slower += 1;
        }
    }
    assert_eq!(slower, a.len(), "the tx2-like profile should be slower everywhere");
}

#[test]
fn corpus_csv_round_trips() {
    for ds in &corpus().datasets {
        let bytes = csv_bytes(ds);
        let back = read_csv(bytes.as_slice()).unwrap();
        assert_eq!(&back, ds);
        assert_eq!(csv_bytes(&back), bytes);
    }
}

#[test]
fn rebuilding_gives_identical_bytes() {
    let again = build_synth_corpus(&SynthConfig::default(), &DeviceProfile::shipped()).unwrap();
    for (a, b) in corpus().datasets.iter().zip(&again.datasets) {
        assert_eq!(csv_bytes(a), csv_bytes(b));
    }
}

#[test]
fn a_different_seed_changes_the_corpus() {
    let cfg = SynthConfig { seed: 7, n_models: 2, ..SynthConfig::default() };
    let other = build_synth_corpus(&cfg, &DeviceProfile::shipped()).unwrap();
    let synth = |c: &SynthCorpus| c.graphs.iter().filter(|g| g.family.starts_with("synthetic")).cloned().collect::<Vec<_>>();
    assert_ne!(synth(&other)[0], synth(corpus())[0]);
}

#[test]
fn bundled_configs_match_the_built_in_defaults() {
    assert_eq!(SynthConfig::from_toml(&read_config("configs/synth.toml")).unwrap(), SynthConfig::default());
    assert_eq!(profiles_from_toml(&read_config("configs/profiles.toml")).unwrap(), DeviceProfile::shipped());
    for kind in ModelKind::ALL {
        let text = read_config(&format!("configs/grids/{}.toml", kind.name()));
        assert_eq!(HyperGrid::from_toml(&text).unwrap(), default_grid(kind), "{}", kind.name());
    }
}

fn features() -> impl Strategy<Value = FeatureVector> {
    prop::array::uniform11(0.0f64..1e10).prop_map(FeatureVector)
}

proptest! {
    #[test]
    fn latency_law_is_monotone_in_flops(fv in features(), extra in 1.0f64..1e10) {
        for p in DeviceProfile::shipped() {
            let mut more = fv;
            more[Feature::TotalFlops] += extra;
            prop_assert!(base_latency(&more, &p.coefficients) > base_latency(&fv, &p.coefficients));
        }
    }

    #[test]
    fn noise_stays_within_three_sigma(fv in features(), seed in any::<u64>()) {
        for p in DeviceProfile::shipped() {
            let base = base_latency(&fv, &p.coefficients);
            let y = synth_latency(&fv, &p, seed);
            prop_assert!(y > 0.0);
            if base > 1e-3 {
                prop_assert!((y / base - 1.0).abs() <= 3.0 * p.noise_cv + 1e-12);
            }
        }
    }
}
