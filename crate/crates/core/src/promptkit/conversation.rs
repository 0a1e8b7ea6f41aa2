use std::collections::BTreeMap;

use chrono::SecondsFormat;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codectx::{CodeContext, ContextLevel, FILE_UNIT};
use crate::corpus::{CaseArtifact, CaseId};
use crate::taxonomy::RootCauseClass;

use super::{render, CodeLevel, EnrichmentExample, ExperimentCondition, PromptError, ReportLevel, TemplateSet};

pub const COMMENTS_HEADER: &str = "Comments:";

/// Report text at the given level. `R_p` is title and opening post; `R_f`
/// appends the comment thread in order, so `R_p` is always a prefix of `R_f`.
pub fn build_report_text(case: &CaseArtifact, level: ReportLevel) -> Result<String, PromptError> {
    if case.description.trim().is_empty() {
        return Err(PromptError::EmptyDescription(case.id.clone()));
    }
    let mut text = format!("Title: {}\n\n{}", case.title.trim(), case.description.trim_end());
    if level == ReportLevel::Full {
        text.push_str("\n\n");
        text.push_str(COMMENTS_HEADER);
        let mut comments: Vec<_> = case.comments.iter().collect();
        comments.sort_by_key(|a| a.created_at);
        for c in comments {
            text.push_str(&format!(
                "\n\n[{} at {}]\n{}",
                c.author,
                c.created_at.to_rfc3339_opts(SecondsFormat::Secs, true),
                c.body.trim_end()
            ));
        }
    }
    Ok(text)
}

fn fence_language(path: &str) -> &'static str {
    match path.rsplit_once('.').map(|(_, e)| e.to_ascii_lowercase()).as_deref() {
        Some("py" | "pyi" | "pyw") => "python",
        Some("qs") => "qsharp",
        Some("cs") => "csharp",
        Some("cpp" | "cc" | "h" | "hpp") => "cpp",
        Some("toml") => "toml",
        Some("ini" | "cfg") => "ini",
        Some("yml" | "yaml") => "yaml",
        _ => "",
    }
}

/// Markdown code blocks, one per unit, each headed by its path.
pub fn render_code(ctx: &CodeContext) -> String {
    ctx.units
        .iter()
        .map(|u| {
            let header = if u.unit_name == FILE_UNIT {
                format!("File: {}", u.path)
            } else {
                format!("File: {} (function {})", u.path, u.unit_name)
            };
            format!(
                "{header}\n```{}\n{}\n```",
                fence_language(&u.path),
                u.text.trim_end_matches('\n')
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnKind {
    Instruction,
    Example,
    ExampleAnswer,
    Query,
    /// The model's own earlier answer, kept as conversational memory.
    Reply,
    FollowUp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub kind: TurnKind,
    pub content: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Rq3,
    Rq4,
    Rq5,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Rq3 => "rq3",
            Stage::Rq4 => "rq4",
            Stage::Rq5 => "rq5",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub case_id: CaseId,
    pub condition: ExperimentCondition,
    pub stage: Stage,
    pub template_id: String,
    pub template_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example_id: Option<CaseId>,
    pub turns: Vec<Turn>,
}

impl Conversation {
    /// SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("conversation serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn query(&self) -> Option<&Turn> {
        self.turns.iter().find(|t| t.kind == TurnKind::Query)
    }
}

pub fn class_list() -> String {
    RootCauseClass::ALL
        .iter()
        .map(|c| format!("\"{}\"", c.canonical_name()))
        .collect::<Vec<_>>()
        .join(", ")
}

fn require_code<'a>(
    case: &CaseArtifact,
    code_level: CodeLevel,
    code: Option<&'a CodeContext>,
) -> Result<Option<&'a CodeContext>, PromptError> {
    let Some(level) = code_level.context_level() else {
        return Ok(None);
    };
    match code {
        Some(ctx) if ctx.is_present() && ctx.level == level => Ok(Some(ctx)),
        _ => Err(PromptError::MissingCodeContext {
            case: case.id.clone(),
            level,
        }),
    }
}

fn render_example(example: &EnrichmentExample, templates: &TemplateSet) -> Result<[Turn; 2], PromptError> {
    let code = match &example.code {
        Some(ctx) => format!("\nCode before the fix:\n\n{}\n", render_code(ctx)),
        None => String::new(),
    };
    let vars = BTreeMap::from([("report", example.report_text.as_str()), ("code", code.as_str())]);
    let answer = if example.flaky { "FLAKY" } else { "NON-FLAKY" };
    Ok([
        Turn {
            role: Role::User,
            kind: TurnKind::Example,
            content: render(&templates.example, &vars)?,
        },
        Turn {
            role: Role::Assistant,
            kind: TurnKind::ExampleAnswer,
            content: answer.to_string(),
        },
    ])
}

/// The RQ3 (no code) or RQ4 (with code) conversation for one case.
///
/// Turn order: system instruction, optional example and its answer, query.
pub fn build_conversation(
    case: &CaseArtifact,
    condition: ExperimentCondition,
    code: Option<&CodeContext>,
    example: Option<&EnrichmentExample>,
    templates: &TemplateSet,
) -> Result<Conversation, PromptError> {
    let code = require_code(case, condition.code_level, code)?;
    let report = build_report_text(case, condition.report_level)?;
    let mut turns = vec![Turn {
        role: Role::System,
        kind: TurnKind::Instruction,
        content: templates.system.trim_end().to_string(),
    }];
    let example_id = match (condition.enrichment.report_level(), example) {
        (None, _) => None,
        (Some(_), None) => return Err(PromptError::NoEligibleExample(case.id.clone())),
        (Some(_), Some(ex)) => {
            if ex.case_id == case.id {
                return Err(PromptError::NoEligibleExample(case.id.clone()));
            }
            turns.extend(render_example(ex, templates)?);
            Some(ex.case_id.clone())
        }
    };
    let (stage, query) = match code {
        None => (
            Stage::Rq3,
            render(&templates.rq3, &BTreeMap::from([("report", report.as_str())]))?,
        ),
        Some(ctx) => {
            let code_text = render_code(ctx);
            (
                Stage::Rq4,
                render(
                    &templates.rq4,
                    &BTreeMap::from([("report", report.as_str()), ("code", code_text.as_str())]),
                )?,
            )
        }
    };
    turns.push(Turn {
        role: Role::User,
        kind: TurnKind::Query,
        content: query,
    });
    Ok(Conversation {
        case_id: case.id.clone(),
        condition,
        stage,
        template_id: templates.id.clone(),
        template_hash: templates.hash.clone(),
        example_id,
        turns,
    })
}

/// Extends an RQ3/RQ4 conversation with the model's reply and the RQ5
/// root-cause question.
pub fn rq5_followup(base: &Conversation, reply: &str, templates: &TemplateSet) -> Result<Conversation, PromptError> {
    if base.stage == Stage::Rq5 {
        return Err(PromptError::Template(
            "conversation already has a root-cause turn".into(),
        ));
    }
    let classes = class_list();
    let mut next = base.clone();
    next.stage = Stage::Rq5;
    next.turns.push(Turn {
        role: Role::Assistant,
        kind: TurnKind::Reply,
        content: reply.to_string(),
    });
    next.turns.push(Turn {
        role: Role::User,
        kind: TurnKind::FollowUp,
        content: render(&templates.rq5, &BTreeMap::from([("classes", classes.as_str())]))?,
    });
    Ok(next)
}

/// Level of code a condition needs, for callers picking a context.
pub fn needed_context(condition: &ExperimentCondition) -> Option<ContextLevel> {
    condition.code_level.context_level()
}
