use std::collections::BTreeSet;

use deeprace::corpus::Label;
use deeprace::eval::{confusion, iou, LocalizationTally};
use proptest::prelude::*;

fn label() -> impl Strategy<Value = Label> {
    prop_oneof![Just(Label::Clean), Just(Label::Buggy)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn rates_match_recount(pairs in prop::collection::vec((label(), label()), 0..200)) {
        let (pred, truth): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
        let cm = confusion(&pred, &truth).unwrap();
        let count = |p, t| pairs.iter().filter(|&&(a, b)| a == p && b == t).count();
        let (tp, fp) = (count(Label::Buggy, Label::Buggy), count(Label::Buggy, Label::Clean));
        let (fn_, tn) = (count(Label::Clean, Label::Buggy), count(Label::Clean, Label::Clean));
        prop_assert_eq!((cm.tp, cm.fp, cm.fn_, cm.tn), (tp, fp, fn_, tn));
        prop_assert_eq!(cm.total(), pairs.len());
        prop_assert_eq!(cm.precision(), (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64));
        prop_assert_eq!(cm.recall(), (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64));
        prop_assert_eq!(cm.accuracy(), (!pairs.is_empty()).then(|| (tp + tn) as f64 / pairs.len() as f64));
    }

    #[test]
    fn iou_bounds(
        n in 1usize..60,
        flagged in prop::collection::btree_set(1usize..60, 0..20),
        truth in prop::collection::btree_set(1usize..60, 0..20),
    ) {
        let clip = |s: &BTreeSet<usize>| s.iter().copied().filter(|&l| l <= n).collect::<BTreeSet<_>>();
        let (f, t) = (clip(&flagged), clip(&truth));
        let tally = LocalizationTally::new(&f, &t, n).unwrap();
        prop_assert_eq!(tally.a + tally.b, t.len());
        prop_assert_eq!(tally.a + tally.c, f.len());
        prop_assert!(tally.a + tally.b + tally.c <= n);
        let (discounted, standard) = iou(&f, &t, n).unwrap();
        prop_assert!((0.0..=1.0).contains(&standard));
        prop_assert!(discounted >= standard - 1e-12);
        prop_assert!(discounted >= 0.0);
        if !f.is_empty() {
            prop_assert_eq!(iou(&f, &f, n).unwrap(), (1.0, 1.0));
        }
    }
}

#[test]
fn spec_iou_examples() {
    let s = |v: &[usize]| v.iter().copied().collect::<BTreeSet<_>>();
    let (p, st) = iou(&s(&[4, 5, 9]), &s(&[4, 5, 7]), 10).unwrap();
    assert!((st - 0.5).abs() < 1e-9);
    assert!((p - 0.6451612903225806).abs() < 1e-9);
    assert_eq!(
        iou(&s(&[4, 5, 7, 8]), &s(&[4, 5, 7, 8]), 10).unwrap(),
        (1.0, 1.0)
    );
    assert_eq!(iou(&s(&[]), &s(&[4]), 10).unwrap(), (0.0, 0.0));
}
