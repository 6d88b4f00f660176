mod common;

use latproph::dataset::{make_split, SplitError};
use latproph::rng;
use proptest::prelude::*;

#[test]
fn same_seed_gives_the_same_plan() {
    let ds = common::grid_dataset(&[vec![4, 5], vec![3, 3, 6], vec![8], vec![2, 7]]);
    let a = make_split(&ds, 0.7, 9).unwrap();
    let b = make_split(&ds, 0.7, 9).unwrap();
    assert_eq!(a.to_json(), b.to_json());
}

#[test]
fn too_few_families_is_rejected() {
    let ds = common::grid_dataset(&[vec![4, 4], vec![4]]);
    assert!(matches!(make_split(&ds, 0.7, 1), Err(SplitError::InsufficientDiversity(_))));
}

#[test]
fn bad_ratio_is_rejected() {
    let ds = common::grid_dataset(&[vec![4, 4], vec![4], vec![4]]);
    for r in [0.0, 1.0, -0.5, f64::NAN] {
        assert!(matches!(make_split(&ds, r, 1), Err(SplitError::Ratio(_))));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn plans_respect_the_split_contract(shape_seed in any::<u64>(), seed in any::<u64>()) {
        let shape = common::random_shape(&mut rng::seeded(shape_seed));
        let ds = common::grid_dataset(&shape);
        match make_split(&ds, 0.7, seed) {
            Ok(plan) => {
                let bad = common::split_violations(&ds, &plan, 0.7);
                prop_assert!(bad.is_empty(), "{:?}", bad);
                prop_assert!(!plan.test_nca.is_empty());
            }
            Err(e) => prop_assert!(matches!(e, SplitError::InsufficientDiversity(_)), "{e}"),
        }
    }
}
