use std::collections::BTreeMap;

use proptest::prelude::*;
use qflake_core::corpus::CaseId;
use qflake_core::evaluator::{binary_metrics, weighted_f1};
use qflake_core::inference::Outcome;
use qflake_core::RootCauseClass;

fn id(n: usize) -> CaseId {
    format!("org/repo#{}", n + 1).parse().unwrap()
}

fn outcome(p: u8) -> Outcome {
    match p {
        0 => Outcome::NonFlaky,
        1 => Outcome::Flaky,
        _ => Outcome::Unusable,
    }
}

fn binary_sets() -> impl Strategy<Value = Vec<(u8, bool)>> {
    prop::collection::vec((0u8..3, any::<bool>()), 1..60)
}

fn maps(rows: &[(u8, bool)], order: &[usize]) -> (BTreeMap<CaseId, Outcome>, BTreeMap<CaseId, bool>) {
    let mut p = BTreeMap::new();
    let mut g = BTreeMap::new();
    for (i, (pred, gold)) in rows.iter().enumerate() {
        p.insert(id(order[i]), outcome(*pred));
        g.insert(id(order[i]), *gold);
    }
    (p, g)
}

proptest! {
    #[test]
    fn binary_metrics_ignore_case_identity(rows in binary_sets(), seed in any::<u64>()) {
        let n = rows.len();
        let identity: Vec<usize> = (0..n).collect();
        // a pseudo-random relabelling of the case ids
        let mut shuffled = identity.clone();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let (p1, g1) = maps(&rows, &identity);
        let (p2, g2) = maps(&rows, &shuffled);
        prop_assert_eq!(binary_metrics(&p1, &g1).unwrap(), binary_metrics(&p2, &g2).unwrap());
    }

    #[test]
    fn swapping_classes_keeps_mcc_and_turns_recall_into_specificity(rows in binary_sets()) {
        let identity: Vec<usize> = (0..rows.len()).collect();
        let swapped: Vec<(u8, bool)> = rows
            .iter()
            .map(|(p, g)| (match p { 0 => 1, 1 => 0, x => *x }, !g))
            .collect();
        let (p1, g1) = maps(&rows, &identity);
        let (p2, g2) = maps(&swapped, &identity);
        let a = binary_metrics(&p1, &g1).unwrap();
        let b = binary_metrics(&p2, &g2).unwrap();
        prop_assert!((a.mcc - b.mcc).abs() < 1e-12);
        prop_assert!((b.recall - a.counts.specificity()).abs() < 1e-12);
        prop_assert_eq!(b.counts, a.counts.swapped());
    }

    #[test]
    fn totals_are_conserved_and_metrics_bounded(rows in binary_sets()) {
        let identity: Vec<usize> = (0..rows.len()).collect();
        let (p, g) = maps(&rows, &identity);
        let m = binary_metrics(&p, &g).unwrap();
        prop_assert!(m.totals.is_conserved());
        prop_assert_eq!(m.counts.total(), m.totals.usable);
        prop_assert!((0.0..=1.0).contains(&m.f1) && (0.0..=1.0).contains(&m.recall));
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&m.mcc));
    }

    #[test]
    fn weighted_f1_bounded(rows in prop::collection::vec((0usize..10, 0usize..9, prop::option::of(0usize..9)), 1..40)) {
        let mut p = BTreeMap::new();
        let mut g = BTreeMap::new();
        for (i, (pred, gold, extra)) in rows.iter().enumerate() {
            let o = if *pred == 9 { Outcome::Unusable } else { Outcome::RootCause(RootCauseClass::ALL[*pred]) };
            let mut labels = vec![RootCauseClass::ALL[*gold]];
            if let Some(e) = extra {
                if *e != *gold {
                    labels.push(RootCauseClass::ALL[*e]);
                }
            }
            p.insert(id(i), o);
            g.insert(id(i), labels);
        }
        match weighted_f1(&p, &g) {
            Ok(m) => {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&m.weighted_f1));
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&m.mcc));
                prop_assert!(m.totals.is_conserved());
            }
            Err(_) => prop_assert!(p.values().all(|o| *o == Outcome::Unusable)),
        }
    }
}
