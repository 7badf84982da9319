use std::collections::BTreeSet;
use std::sync::OnceLock;

use mtlb::data::record::Sex;
use mtlb::data::{generate_cohort, subsample, CohortDataset, GeneratorParams, Split, SubsampleMode, SubsampleSpec};
use proptest::prelude::*;

fn cohort() -> &'static CohortDataset {
    static DS: OnceLock<CohortDataset> = OnceLock::new();
    DS.get_or_init(|| generate_cohort(21, 600, &GeneratorParams::default()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn few_shot_keeps_round_fraction_of_train(fraction in 0.002f64..=1.0, seed in any::<u64>()) {
        let ds = cohort();
        let train = ds.indices(Split::Train);
        let spec = SubsampleSpec { mode: SubsampleMode::FewShot { fraction }, seed };
        let keep = (fraction * train.len() as f64).round() as usize;
        match subsample(ds, &train, &spec) {
            Ok(kept) => {
                prop_assert_eq!(kept.len(), keep);
                let all: BTreeSet<usize> = train.iter().copied().collect();
                let set: BTreeSet<usize> = kept.iter().copied().collect();
                prop_assert_eq!(set.len(), kept.len());
                prop_assert!(set.is_subset(&all));
                prop_assert_eq!(subsample(ds, &train, &spec).unwrap(), kept);
            }
            Err(_) => prop_assert_eq!(keep, 0),
        }
    }

    #[test]
    fn imbalance_removes_only_females(removal in 0.01f64..=1.0, seed in any::<u64>()) {
        let ds = cohort();
        let train = ds.indices(Split::Train);
        let spec = SubsampleSpec { mode: SubsampleMode::Imbalanced { female_removal: removal }, seed };
        let kept: BTreeSet<usize> = subsample(ds, &train, &spec).unwrap().into_iter().collect();
        let (males, females): (Vec<usize>, Vec<usize>) = train.iter().partition(|&&i| ds.records[i].sex == Sex::M);
        prop_assert!(males.iter().all(|i| kept.contains(i)));
        let kept_f = females.iter().filter(|i| kept.contains(i)).count();
        let dropped = (removal * females.len() as f64).round() as usize;
        prop_assert_eq!(kept_f, females.len() - dropped);
    }
}

#[test]
fn full_female_removal_leaves_every_male_and_no_female() {
    let ds = cohort();
    let train = ds.indices(Split::Train);
    let (tune, test) = (ds.indices(Split::Tune), ds.indices(Split::Test));
    let spec = SubsampleSpec {
        mode: SubsampleMode::Imbalanced { female_removal: 1.0 },
        seed: 0,
    };
    let kept: BTreeSet<usize> = subsample(ds, &train, &spec).unwrap().into_iter().collect();
    let males: BTreeSet<usize> = train.iter().copied().filter(|&i| ds.records[i].sex == Sex::M).collect();
    assert_eq!(kept, males);
    assert_eq!(ds.indices(Split::Tune), tune);
    assert_eq!(ds.indices(Split::Test), test);
}

#[test]
fn bad_fractions_are_config_errors() {
    let ds = cohort();
    let train = ds.indices(Split::Train);
    for f in [0.0, -0.1, 1.5, f64::NAN] {
        let spec = SubsampleSpec {
            mode: SubsampleMode::FewShot { fraction: f },
            seed: 0,
        };
        assert!(matches!(subsample(ds, &train, &spec), Err(mtlb::MtlbError::Config(_))));
    }
}
