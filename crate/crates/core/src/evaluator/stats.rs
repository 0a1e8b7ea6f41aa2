use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::corpus::RepositoryRef;
use crate::store::DatasetCase;

/// Flaky-report prevalence for one repository.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepoStats {
    pub repo: RepositoryRef,
    /// Closed issue reports.
    pub t: u64,
    /// Flaky cases.
    pub f: u64,
    /// `F / T * 100`; 0 when T is 0.
    pub p: f64,
}

impl RepoStats {
    pub fn new(repo: RepositoryRef, t: u64, f: u64) -> Self {
        let p = if t == 0 { 0.0 } else { f as f64 / t as f64 * 100.0 };
        Self { repo, t, f, p }
    }

    pub fn p_display(&self) -> String {
        format!("{:.2}%", self.p)
    }
}

/// One row per repository in `totals` (closed-issue counts keyed by
/// `platform/name`) plus any repository that only appears in the dataset.
pub fn repo_stats(dataset: &[DatasetCase], totals: &BTreeMap<String, u64>) -> Vec<RepoStats> {
    let mut flaky: BTreeMap<(String, String), u64> = BTreeMap::new();
    for case in dataset {
        let id = case.id();
        let n = flaky.entry((id.platform.clone(), id.name.clone())).or_default();
        *n += u64::from(case.labeled.flaky);
    }
    for slug in totals.keys() {
        if let Some((platform, name)) = slug.split_once('/') {
            flaky.entry((platform.to_string(), name.to_string())).or_default();
        }
    }
    flaky
        .into_iter()
        .map(|((platform, name), f)| {
            let t = totals.get(&format!("{platform}/{name}")).copied().unwrap_or(0);
            RepoStats::new(RepositoryRef::new(platform, name), t, f)
        })
        .collect()
}

/// `ΣF / ΣT * 100`.
pub fn overall_rate(rows: &[RepoStats]) -> f64 {
    let (f, t) = rows.iter().fold((0, 0), |(f, t), r| (f + r.f, t + r.t));
    RepoStats::new(RepositoryRef::new("", ""), t, f).p
}

/// How a printed percentage relates to its own F and T.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RowConsistency {
    /// Matches F/T*100 rounded to 2 decimals.
    Consistent,
    /// Matches F/T*100 truncated, not rounded, to 2 decimals.
    Truncated,
    Inconsistent,
}

/// A row as printed in a published table, with its own percentage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrintedRow {
    pub platform: &'static str,
    pub repository: &'static str,
    pub language: &'static str,
    pub t: u64,
    pub f: u64,
    pub p_printed: f64,
}

impl PrintedRow {
    pub fn computed(&self) -> RepoStats {
        RepoStats::new(RepositoryRef::new(self.platform, self.repository), self.t, self.f)
    }

    pub fn consistency(&self) -> RowConsistency {
        let p = self.computed().p;
        if (p - self.p_printed).abs() < 0.005 {
            RowConsistency::Consistent
        } else if ((p * 100.0).floor() / 100.0 - self.p_printed).abs() < 1e-9 {
            RowConsistency::Truncated
        } else {
            RowConsistency::Inconsistent
        }
    }
}

/// The published repository table, verbatim.
pub const PUBLISHED_REPO_TABLE: [PrintedRow; 12] = [
    row("Qiskit", "qiskit", "Python", 4533, 29, 0.55),
    row("Qiskit", "qiskit-aer", "Python", 766, 3, 0.39),
    row("Qiskit", "qiskit-ibm-runtime", "Python", 849, 3, 0.35),
    row("Qiskit", "qiskit-ibm-provider", "Python", 341, 8, 0.23),
    row("Qiskit Community", "qiskit-nature", "Python", 385, 1, 0.26),
    row("Qiskit Community", "qiskit-experiments", "Python", 389, 3, 0.77),
    row("Qiskit Community", "qiskit-machine-learning", "Python", 306, 4, 1.30),
    row("Microsoft", "azure-quantum-python", "Python", 89, 3, 3.37),
    row("Microsoft", "QuantumLibraries", "Q#", 137, 4, 2.91),
    row("Microsoft", "Quantum", "Q#", 111, 4, 3.60),
    row("TensorFlow", "quantum", "Python", 306, 1, 0.32),
    row("NetKet", "netket", "Python", 416, 7, 1.68),
];

/// F total printed under the published table (its rows sum to 70).
pub const PUBLISHED_F_TOTAL: u64 = 71;
pub const PUBLISHED_T_TOTAL: u64 = 8628;

const fn row(
    platform: &'static str,
    repository: &'static str,
    language: &'static str,
    t: u64,
    f: u64,
    p: f64,
) -> PrintedRow {
    PrintedRow {
        platform,
        repository,
        language,
        t,
        f,
        p_printed: p,
    }
}

/// Delimited repository table. `reference` rows, when given, add the
/// printed percentage and a consistency flag per matching repository.
pub fn render_repo_table(rows: &[RepoStats], reference: Option<&[PrintedRow]>) -> String {
    let mut out = String::from("Platform\tRepository\tT\tF\tP");
    if reference.is_some() {
        out.push_str("\tP (published)\tcheck");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            r.repo.platform,
            r.repo.name,
            r.t,
            r.f,
            r.p_display()
        );
        if let Some(refs) = reference {
            match refs.iter().find(|p| r.repo.matches(p.platform, p.repository)) {
                Some(p) => {
                    let flag = if p.t != r.t || p.f != r.f {
                        "counts differ".to_string()
                    } else {
                        format!("{:?}", p.consistency()).to_lowercase()
                    };
                    let _ = write!(out, "\t{:.2}%\t{flag}", p.p_printed);
                }
                None => out.push_str("\t\t"),
            }
        }
        out.push('\n');
    }
    let (f, t) = rows.iter().fold((0, 0), |(f, t), r| (f + r.f, t + r.t));
    let _ = writeln!(out, "Total\t\t{t}\t{f}\t{:.2}%", overall_rate(rows));
    out
}
