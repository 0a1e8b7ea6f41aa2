use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PromptError;

pub const DEFAULT_TEMPLATE_ID: &str = "v1";

const TEMPLATE_NAMES: [&str; 5] = ["system", "rq3", "rq4", "rq5", "example"];

/// Prompt wording, versioned as data. The hash covers every file so results
/// can be tied to the exact text used.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub id: String,
    pub hash: String,
    pub system: String,
    pub rq3: String,
    pub rq4: String,
    pub rq5: String,
    pub example: String,
}

impl TemplateSet {
    fn from_parts(id: &str, parts: [String; 5]) -> Self {
        let mut h = Sha256::new();
        for (name, body) in TEMPLATE_NAMES.iter().zip(&parts) {
            h.update(name.as_bytes());
            h.update([0]);
            h.update(body.as_bytes());
            h.update([0]);
        }
        let [system, rq3, rq4, rq5, example] = parts;
        Self {
            id: id.to_string(),
            hash: hex::encode(h.finalize()),
            system,
            rq3,
            rq4,
            rq5,
            example,
        }
    }

    pub fn builtin(id: &str) -> Result<Self, PromptError> {
        match id {
            "v1" => Ok(Self::from_parts(
                "v1",
                [
                    include_str!("../../templates/v1/system.txt").to_string(),
                    include_str!("../../templates/v1/rq3.txt").to_string(),
                    include_str!("../../templates/v1/rq4.txt").to_string(),
                    include_str!("../../templates/v1/rq5.txt").to_string(),
                    include_str!("../../templates/v1/example.txt").to_string(),
                ],
            )),
            other => Err(PromptError::UnknownTemplate(other.to_string())),
        }
    }

    /// Loads `<dir>/{system,rq3,rq4,rq5,example}.txt`; the id is the
    /// directory name.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let id = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "custom".into());
        let read = |name: &str| {
            let p = dir.join(format!("{name}.txt"));
            std::fs::read_to_string(&p).map_err(|e| PromptError::Template(format!("{}: {e}", p.display())))
        };
        Ok(Self::from_parts(
            &id,
            [
                read("system")?,
                read("rq3")?,
                read("rq4")?,
                read("rq5")?,
                read("example")?,
            ],
        ))
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin(DEFAULT_TEMPLATE_ID).expect("builtin templates")
    }
}

/// Substitutes `{{name}}` placeholders. Values are inserted verbatim, so
/// braces inside reports are never re-expanded.
pub fn render(template: &str, vars: &BTreeMap<&str, &str>) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        let close = after
            .find("}}")
            .ok_or_else(|| PromptError::Template("unterminated placeholder".into()))?;
        let name = after[..close].trim();
        let value = vars
            .get(name)
            .ok_or_else(|| PromptError::Template(format!("no value for placeholder `{name}`")))?;
        out.push_str(value);
        rest = &after[close + 2..];
    }
    out.push_str(rest);
    Ok(out.trim_end().to_string())
}
