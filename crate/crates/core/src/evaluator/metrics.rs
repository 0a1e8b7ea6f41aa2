use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::CaseId;
use crate::inference::Outcome;
use crate::taxonomy::RootCauseClass;

use super::EvalError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

impl BinaryCounts {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = Self::default();
        for (pred, gold) in pairs {
            match (pred, gold) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `2TP / (2TP + FP + FN)`, 0 when nothing is positive.
    pub fn f1(&self) -> f64 {
        let tp = self.tp as f64;
        ratio(2.0 * tp, 2.0 * tp + self.fp as f64 + self.fn_ as f64)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp as f64, (self.tp + self.fn_) as f64)
    }

    pub fn specificity(&self) -> f64 {
        ratio(self.tn as f64, (self.tn + self.fp) as f64)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp as f64, (self.tp + self.fp) as f64)
    }

    /// Matthews correlation; 0 when any marginal is empty.
    pub fn mcc(&self) -> f64 {
        let (tp, fp, fn_, tn) = (self.tp as f64, self.fp as f64, self.fn_ as f64, self.tn as f64);
        let den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
        if den == 0.0 {
            return 0.0;
        }
        (tp * tn - fp * fn_) / den.sqrt()
    }

    /// Positive and negative classes exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub attempted: u64,
    pub usable: u64,
    pub unusable: u64,
}

impl Totals {
    pub fn is_conserved(&self) -> bool {
        self.attempted == self.usable + self.unusable
    }

    pub fn is_reduced(&self) -> bool {
        self.usable < self.attempted
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryReport {
    pub counts: BinaryCounts,
    pub f1: f64,
    pub mcc: f64,
    pub recall: f64,
    pub totals: Totals,
}

fn check_keys<A, B>(preds: &BTreeMap<CaseId, A>, gold: &BTreeMap<CaseId, B>) -> Result<(), EvalError> {
    if let Some(id) = preds.keys().find(|k| !gold.contains_key(*k)) {
        return Err(EvalError::KeyMismatch(format!("prediction for {id} has no gold label")));
    }
    if let Some(id) = gold.keys().find(|k| !preds.contains_key(*k)) {
        return Err(EvalError::KeyMismatch(format!("gold label for {id} has no prediction")));
    }
    Ok(())
}

/// F1 / MCC / recall over usable binary outcomes. Unusable ones are
/// excluded from the counts but tallied.
pub fn binary_metrics(
    preds: &BTreeMap<CaseId, Outcome>,
    gold: &BTreeMap<CaseId, bool>,
) -> Result<BinaryReport, EvalError> {
    check_keys(preds, gold)?;
    let mut totals = Totals::default();
    let mut pairs = Vec::new();
    for (id, outcome) in preds {
        totals.attempted += 1;
        match outcome.as_flaky() {
            Some(p) => {
                totals.usable += 1;
                pairs.push((p, gold[id]));
            }
            None => totals.unusable += 1,
        }
    }
    let counts = BinaryCounts::from_pairs(pairs);
    Ok(BinaryReport {
        counts,
        f1: counts.f1(),
        mcc: counts.mcc(),
        recall: counts.recall(),
        totals,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub support: u64,
}

impl ClassCounts {
    pub fn f1(&self) -> f64 {
        let tp = self.tp as f64;
        ratio(2.0 * tp, 2.0 * tp + self.fp as f64 + self.fn_ as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassReport {
    pub per_class: BTreeMap<RootCauseClass, ClassCounts>,
    pub weighted_f1: f64,
    /// Multiclass MCC (Gorodkin's R_K statistic).
    pub mcc: f64,
    pub accuracy: f64,
    /// Usable predictions credited through a non-first gold label.
    pub multi_label_credit: u64,
    pub totals: Totals,
}

/// The gold label a prediction is scored against: the prediction itself
/// when it is any of the case's labels, else the first label.
pub fn effective_gold(pred: RootCauseClass, gold: &[RootCauseClass]) -> RootCauseClass {
    if gold.contains(&pred) {
        pred
    } else {
        gold[0]
    }
}

/// Support-weighted F1 over the nine classes with match-any credit for
/// multi-label cases. Errors when no usable prediction is left.
pub fn weighted_f1(
    preds: &BTreeMap<CaseId, Outcome>,
    gold: &BTreeMap<CaseId, Vec<RootCauseClass>>,
) -> Result<MulticlassReport, EvalError> {
    check_keys(preds, gold)?;
    let mut totals = Totals::default();
    let mut pairs: Vec<(RootCauseClass, RootCauseClass)> = Vec::new();
    let mut credit = 0;
    for (id, outcome) in preds {
        let labels = &gold[id];
        if labels.is_empty() {
            return Err(EvalError::KeyMismatch(format!("{id} has no gold root cause")));
        }
        totals.attempted += 1;
        match outcome {
            Outcome::RootCause(p) => {
                totals.usable += 1;
                let g = effective_gold(*p, labels);
                if g != labels[0] {
                    credit += 1;
                }
                pairs.push((*p, g));
            }
            _ => totals.unusable += 1,
        }
    }
    if pairs.is_empty() {
        return Err(EvalError::Undefined("no usable root-cause predictions".into()));
    }
    let mut per_class: BTreeMap<RootCauseClass, ClassCounts> = BTreeMap::new();
    for (p, g) in &pairs {
        per_class.entry(*g).or_default().support += 1;
        if p == g {
            per_class.entry(*g).or_default().tp += 1;
        } else {
            per_class.entry(*p).or_default().fp += 1;
            per_class.entry(*g).or_default().fn_ += 1;
        }
    }
    let n = pairs.len() as f64;
    let weighted = per_class.values().map(|c| c.support as f64 * c.f1()).sum::<f64>() / n;
    let correct = pairs.iter().filter(|(p, g)| p == g).count() as f64;
    let sum_pt: f64 = per_class
        .values()
        .map(|c| ((c.tp + c.fp) as f64) * (c.support as f64))
        .sum();
    let sum_p2: f64 = per_class.values().map(|c| ((c.tp + c.fp) as f64).powi(2)).sum();
    let sum_t2: f64 = per_class.values().map(|c| (c.support as f64).powi(2)).sum();
    let den = (n * n - sum_p2) * (n * n - sum_t2);
    let mcc = if den == 0.0 {
        0.0
    } else {
        (correct * n - sum_pt) / den.sqrt()
    };
    Ok(MulticlassReport {
        per_class,
        weighted_f1: weighted,
        mcc,
        accuracy: correct / n,
        multi_label_credit: credit,
        totals,
    })
}
