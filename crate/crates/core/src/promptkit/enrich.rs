use serde::{Deserialize, Serialize};

use crate::codectx::CodeContext;
use crate::corpus::{CaseArtifact, CaseId};
use crate::simsearch::{cosine, EmbeddingIndex};

use super::{build_report_text, CodeLevel, Enrichment, PromptError};

/// A labeled case offered as a worked example.
#[derive(Debug, Clone, Copy)]
pub struct EnrichmentCandidate<'a> {
    pub case: &'a CaseArtifact,
    pub flaky: bool,
    /// Context at the level the condition uses, if any.
    pub code: Option<&'a CodeContext>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichmentExample {
    pub case_id: CaseId,
    pub flaky: bool,
    pub report_text: String,
    pub code: Option<CodeContext>,
    pub score: f64,
}

/// The candidate most similar to `query` under the enrichment's report
/// scope. `index` must hold embeddings for that scope. When `code_level`
/// asks for code, only candidates with that context present qualify.
pub fn select_enrichment(
    query: &CaseId,
    enrichment: Enrichment,
    code_level: CodeLevel,
    candidates: &[EnrichmentCandidate<'_>],
    index: &EmbeddingIndex,
) -> Result<EnrichmentExample, PromptError> {
    let report_level = enrichment
        .report_level()
        .ok_or_else(|| PromptError::Template("select_enrichment called with E_none".into()))?;
    let q = index
        .get(query)
        .ok_or_else(|| PromptError::NoEligibleExample(query.clone()))?;
    let mut best: Option<(f64, &EnrichmentCandidate<'_>)> = None;
    for cand in candidates {
        if &cand.case.id == query {
            continue;
        }
        if code_level != CodeLevel::None && !cand.code.is_some_and(|c| c.is_present()) {
            continue;
        }
        let Some(v) = index.get(&cand.case.id) else {
            continue;
        };
        let Ok(score) = cosine(&q, &v) else {
            continue;
        };
        let better = match best {
            None => true,
            Some((s, b)) => score > s || (score == s && cand.case.id < b.case.id),
        };
        if better {
            best = Some((score, cand));
        }
    }
    let (score, cand) = best.ok_or_else(|| PromptError::NoEligibleExample(query.clone()))?;
    Ok(EnrichmentExample {
        case_id: cand.case.id.clone(),
        flaky: cand.flaky,
        report_text: build_report_text(cand.case, report_level)?,
        code: match code_level {
            CodeLevel::None => None,
            _ => cand.code.cloned(),
        },
        score,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ArtifactKind, RepositoryRef};

    fn case(n: u64) -> CaseArtifact {
        CaseArtifact::new(
            &RepositoryRef::new("p", "r"),
            ArtifactKind::Issue,
            n,
            format!("t{n}"),
            "body",
        )
    }

    #[test]
    fn picks_twin_and_never_self() {
        let cases: Vec<CaseArtifact> = (1..=4).map(case).collect();
        let mut idx = EmbeddingIndex::new("m", Default::default());
        idx.vectors.insert(cases[0].id.clone(), vec![1.0, 0.0]);
        idx.vectors.insert(cases[1].id.clone(), vec![0.0, 1.0]);
        idx.vectors.insert(cases[2].id.clone(), vec![0.99, 0.05]);
        idx.vectors.insert(cases[3].id.clone(), vec![0.5, 0.5]);
        let cands: Vec<_> = cases
            .iter()
            .map(|c| EnrichmentCandidate {
                case: c,
                flaky: c.number % 2 == 1,
                code: None,
            })
            .collect();
        let ex = select_enrichment(&cases[0].id, Enrichment::Partial, CodeLevel::None, &cands, &idx).unwrap();
        assert_eq!(ex.case_id, cases[2].id);
        assert!(ex.flaky);

        let two = &cands[..2];
        let ex = select_enrichment(&cases[0].id, Enrichment::Full, CodeLevel::None, two, &idx).unwrap();
        assert_eq!(ex.case_id, cases[1].id);

        assert!(matches!(
            select_enrichment(&cases[0].id, Enrichment::Partial, CodeLevel::None, &cands[..1], &idx),
            Err(PromptError::NoEligibleExample(_))
        ));
    }

    #[test]
    fn code_conditions_need_example_code() {
        let cases: Vec<CaseArtifact> = (1..=2).map(case).collect();
        let mut idx = EmbeddingIndex::new("m", Default::default());
        idx.vectors.insert(cases[0].id.clone(), vec![1.0, 0.0]);
        idx.vectors.insert(cases[1].id.clone(), vec![1.0, 0.0]);
        let cands = [
            EnrichmentCandidate {
                case: &cases[0],
                flaky: true,
                code: None,
            },
            EnrichmentCandidate {
                case: &cases[1],
                flaky: true,
                code: None,
            },
        ];
        assert!(select_enrichment(&cases[0].id, Enrichment::Partial, CodeLevel::Partial, &cands, &idx).is_err());
    }
}
