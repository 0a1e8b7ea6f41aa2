use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::store::DatasetCase;
use crate::taxonomy::{FixPattern, RootCause, RootCauseClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TaxonomyCell {
    pub cause: RootCause,
    pub fix: FixPattern,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaxonomyReport {
    /// Non-zero cells only, in row order.
    pub cells: Vec<TaxonomyCell>,
    pub cause_totals: BTreeMap<RootCause, u64>,
    pub fix_totals: BTreeMap<FixPattern, u64>,
    /// Number of (case, cause) pairs.
    pub grand_total: u64,
    pub flaky_cases: u64,
    pub multi_label_cases: u64,
}

/// Row order of the printed cause table.
pub const CAUSE_ROWS: [RootCause; 10] = [
    RootCause::Class(RootCauseClass::Randomness),
    RootCause::Class(RootCauseClass::SoftwareEnvironment),
    RootCause::Class(RootCauseClass::MultiThreading),
    RootCause::Class(RootCauseClass::FloatingPoint),
    RootCause::Class(RootCauseClass::Visualization),
    RootCause::Class(RootCauseClass::UnhandledExceptions),
    RootCause::Class(RootCauseClass::Network),
    RootCause::Class(RootCauseClass::UnorderedCollection),
    RootCause::Class(RootCauseClass::Others),
    RootCause::Unknown,
];

impl TaxonomyReport {
    pub fn count(&self, cause: RootCause, fix: FixPattern) -> u64 {
        self.cells
            .iter()
            .find(|c| c.cause == cause && c.fix == fix)
            .map_or(0, |c| c.count)
    }

    pub fn cause_total(&self, cause: RootCause) -> u64 {
        self.cause_totals.get(&cause).copied().unwrap_or(0)
    }

    pub fn fix_total(&self, fix: FixPattern) -> u64 {
        self.fix_totals.get(&fix).copied().unwrap_or(0)
    }

    /// Share of the grand total, in percent; 0 for an empty report.
    pub fn share(&self, n: u64) -> f64 {
        if self.grand_total == 0 {
            0.0
        } else {
            n as f64 / self.grand_total as f64 * 100.0
        }
    }
}

pub fn taxonomy_report(dataset: &[DatasetCase]) -> TaxonomyReport {
    let mut counts: BTreeMap<(RootCause, FixPattern), u64> = BTreeMap::new();
    let mut flaky_cases = 0;
    let mut multi = 0;
    for case in dataset.iter().filter(|c| c.labeled.flaky) {
        flaky_cases += 1;
        if case.labeled.root_causes.len() > 1 {
            multi += 1;
        }
        for pair in case.labeled.cause_fix_pairs() {
            *counts.entry(pair).or_default() += 1;
        }
    }
    let mut cells = Vec::new();
    let mut cause_totals = BTreeMap::new();
    let mut fix_totals = BTreeMap::new();
    for cause in CAUSE_ROWS {
        for fix in FixPattern::ALL {
            let count = counts.get(&(cause, fix)).copied().unwrap_or(0);
            if count > 0 {
                cells.push(TaxonomyCell { cause, fix, count });
                *cause_totals.entry(cause).or_default() += count;
                *fix_totals.entry(fix).or_default() += count;
            }
        }
    }
    TaxonomyReport {
        grand_total: counts.values().sum(),
        cells,
        cause_totals,
        fix_totals,
        flaky_cases,
        multi_label_cases: multi,
    }
}

/// Tab-delimited cause x fix table with totals and 1-decimal percentages.
pub fn render_taxonomy(report: &TaxonomyReport) -> String {
    let mut out = String::from("Cause category");
    for fix in FixPattern::ALL {
        let _ = write!(out, "\t{fix}");
    }
    out.push_str("\tGrand Total\tPercentage\n");
    for cause in CAUSE_ROWS {
        out.push_str(&cause.to_string());
        for fix in FixPattern::ALL {
            match report.count(cause, fix) {
                0 => out.push('\t'),
                n => {
                    let _ = write!(out, "\t{n}");
                }
            }
        }
        let n = report.cause_total(cause);
        let _ = writeln!(out, "\t{n}\t{:.1}%", report.share(n));
    }
    out.push_str("Grand Total");
    for fix in FixPattern::ALL {
        let _ = write!(out, "\t{}", report.fix_total(fix));
    }
    let _ = writeln!(
        out,
        "\t{}\t{:.0}%",
        report.grand_total,
        report.share(report.grand_total)
    );
    out.push_str("Percentage");
    for fix in FixPattern::ALL {
        let _ = write!(out, "\t{:.1}%", report.share(report.fix_total(fix)));
    }
    let _ = writeln!(out, "\t{:.0}%\t", report.share(report.grand_total));
    let _ = writeln!(
        out,
        "# {} flaky cases, {} with multiple labels",
        report.flaky_cases, report.multi_label_cases
    );
    out
}
