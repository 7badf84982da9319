use mtlb::metrics::{auroc, regression_analog, t_test, TTestKind};
use proptest::prelude::*;

/// Fraction of (positive, negative) pairs ranked correctly, ties worth half.
fn pairwise(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    (pairs > 0.0).then(|| num / pairs)
}

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (1usize..=200).prop_flat_map(|n| {
        (
            prop::collection::vec((0u8..12).prop_map(|k| f64::from(k) * 0.25 - 1.0), n),
            prop::collection::vec(any::<bool>(), n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn rank_auroc_equals_pairwise((scores, labels) in instance()) {
        prop_assert_eq!(auroc(&scores, &labels), pairwise(&scores, &labels));
    }

    #[test]
    fn monotone_transform_and_label_flip((scores, labels) in instance()) {
        let Some(a) = auroc(&scores, &labels) else { return Ok(()) };
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp()).collect();
        prop_assert_eq!(auroc(&warped, &labels), Some(a));
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let b = auroc(&scores, &flipped).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }
}

#[test]
fn analog_endpoints() {
    assert_eq!(regression_analog(1.0), 1.0);
    assert_eq!(regression_analog(0.0), 0.5);
}

#[test]
fn welch_on_separated_samples() {
    let a = [0.71, 0.69, 0.73, 0.70, 0.72];
    let b = [0.80, 0.82, 0.79, 0.81, 0.83];
    let t = t_test(&a, &b, TTestKind::Welch).unwrap();
    assert!(t.p < 1e-4 && t.significant());
    let same = t_test(&a, &a, TTestKind::Welch).unwrap();
    assert!(!same.significant());
}
