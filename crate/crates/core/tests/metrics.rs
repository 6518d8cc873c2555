mod common;

use mcmh::chains::{ChainMask, Instance};
use mcmh::eval::metrics::{group_scores, map_report, permutation_test};
use mcmh::eval::{average_precision, map_score, Grouping, RankedResult};
use mcmh::kg::{EntityId, Label};
use mcmh::rng::{self, Stream};
use mcmh::Error;
use proptest::prelude::*;

use common::{oracle_ap, oracle_map, random_groups};

#[test]
fn map_matches_brute_force_on_random_groups() {
    let mut r = rng::stream(17, Stream::Eval);
    let mut compared = 0;
    for _ in 0..200 {
        let groups = random_groups(&mut r);
        match (map_score(&groups), oracle_map(&groups)) {
            (Ok(got), Some(want)) => {
                assert!((got - want).abs() < 1e-9, "{got} vs {want} on {groups:?}");
                compared += 1;
            }
            (Err(Error::MapUndefined), None) => {}
            (got, want) => panic!("{got:?} vs {want:?}"),
        }
    }
    assert!(compared > 150);
}

fn labels_from_bits(n: usize, bits: u32) -> Vec<(f64, Label)> {
    (0..n)
        .map(|i| (0.5, if bits >> i & 1 == 1 { Label::Positive } else { Label::Negative }))
        .collect()
}

/// A constant scorer averaged over every arrangement of `p` positives among
/// `n` items: `(H_n + (p - 1) / (n - 1) * (n - H_n)) / n`.
#[test]
fn constant_scorer_expectation() {
    for n in 2..=9usize {
        let harmonic: f64 = (1..=n).map(|k| 1.0 / k as f64).sum();
        for p in 1..=n {
            let expected = (harmonic + (p - 1) as f64 / (n - 1) as f64 * (n as f64 - harmonic)) / n as f64;
            let aps: Vec<f64> = (0u32..1 << n)
                .filter(|b| b.count_ones() as usize == p)
                .map(|b| average_precision(&labels_from_bits(n, b)).unwrap())
                .collect();
            let mean = aps.iter().sum::<f64>() / aps.len() as f64;
            assert!((mean - expected).abs() < 1e-12, "n={n} p={p}: {mean} vs {expected}");
        }
    }
}

#[test]
fn groups_without_positives_are_skipped() {
    let groups = vec![
        RankedResult { key: 0, items: vec![(0.9, Label::Positive), (0.1, Label::Negative)] },
        RankedResult { key: 1, items: vec![(0.9, Label::Negative)] },
        RankedResult { key: 2, items: vec![(0.2, Label::Positive), (0.8, Label::Negative)] },
    ];
    assert_eq!(map_score(&groups).unwrap(), 0.75);
    let report = map_report(&groups).unwrap();
    assert_eq!(report.skipped(), 1);
    assert_eq!(report.scored(), 2);
    assert!(matches!(map_score(&groups[1..2]), Err(Error::MapUndefined)));
}

#[test]
fn grouping_by_head_versus_global() {
    let inst = |h: u32, l: Label| Instance {
        head: EntityId(h),
        tail: EntityId(99),
        label: l,
        availability: ChainMask::zeros(1),
    };
    let instances = vec![inst(3, Label::Positive), inst(1, Label::Negative), inst(3, Label::Negative), inst(1, Label::Positive)];
    let scores = [0.4, 0.9, 0.6, 0.3];
    let by_head = group_scores(&instances, &scores, Grouping::ByHead);
    assert_eq!(by_head.iter().map(|g| g.key).collect::<Vec<_>>(), vec![1, 3]);
    assert_eq!(map_score(&by_head).unwrap(), 0.5);
    let global = group_scores(&instances, &scores, Grouping::Global);
    assert_eq!(global.len(), 1);
    assert!((map_score(&global).unwrap() - (1.0 / 3.0 + 2.0 / 4.0) / 2.0).abs() < 1e-15);
}

#[test]
fn permutation_test_separates_clear_and_null_differences() {
    let a: Vec<f64> = (0..30).map(|i| 0.8 + 0.001 * i as f64).collect();
    let b: Vec<f64> = (0..30).map(|i| 0.5 + 0.001 * i as f64).collect();
    assert!(permutation_test(&a, &b, 2000, 1) < 0.01);
    assert_eq!(permutation_test(&a, &a, 2000, 1), 1.0);
    assert_eq!(permutation_test(&a, &b, 500, 3), permutation_test(&a, &b, 500, 3));
}

fn items_strategy() -> impl Strategy<Value = Vec<(f64, Label)>> {
    prop::collection::vec((-5.0f64..5.0, any::<bool>()), 1..15).prop_map(|v| {
        v.into_iter()
            .map(|(s, l)| (s, if l { Label::Positive } else { Label::Negative }))
            .collect()
    })
}

proptest! {
    #[test]
    fn ap_matches_oracle(items in items_strategy()) {
        match (average_precision(&items), oracle_ap(&items)) {
            (Ok(a), Some(b)) => prop_assert!((a - b).abs() < 1e-9),
            (Err(Error::NoPositives), None) => {}
            (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
        }
    }

    #[test]
    fn strictly_increasing_transform_preserves_ap(items in items_strategy(), scale in 0.1f64..10.0, shift in -3.0f64..3.0) {
        let moved: Vec<(f64, Label)> = items.iter().map(|(s, l)| ((scale * s + shift).exp(), *l)).collect();
        if let Ok(a) = average_precision(&items) {
            prop_assert!((a - average_precision(&moved).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn ap_is_one_exactly_when_positives_lead(items in items_strategy()) {
        if let Ok(ap) = average_precision(&items) {
            let max_neg = items.iter().filter(|(_, l)| !l.is_positive()).map(|x| x.0).fold(f64::NEG_INFINITY, f64::max);
            let min_pos = items.iter().filter(|(_, l)| l.is_positive()).map(|x| x.0).fold(f64::INFINITY, f64::min);
            // ties resolve by input order, so equal scores count when the positive comes first
            let perfect = oracle_ap(&items) == Some(1.0);
            prop_assert_eq!(ap == 1.0, perfect);
            if min_pos > max_neg {
                prop_assert_eq!(ap, 1.0);
            }
            prop_assert!(ap > 0.0 && ap <= 1.0);
        }
    }
}
