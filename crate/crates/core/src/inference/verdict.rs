use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::promptkit::Stage;
use crate::taxonomy::RootCauseClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "label", content = "class", rename_all = "snake_case")]
pub enum Outcome {
    Flaky,
    NonFlaky,
    RootCause(RootCauseClass),
    Unusable,
}

impl Outcome {
    pub fn is_usable(self) -> bool {
        self != Outcome::Unusable
    }

    pub fn as_flaky(self) -> Option<bool> {
        match self {
            Outcome::Flaky => Some(true),
            Outcome::NonFlaky => Some(false),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub stage: Stage,
    pub outcome: Outcome,
    pub raw_response: String,
    pub latency_ms: u64,
    pub provider: String,
}

static BINARY: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(non[-_ ]?)?flaky\b").unwrap());

static CLASSES: LazyLock<Vec<(RootCauseClass, Regex)>> = LazyLock::new(|| {
    RootCauseClass::ALL
        .iter()
        .map(|c| {
            let pat = format!(r"(?i)(^|[^\w]){}($|[^\w])", regex::escape(c.canonical_name()));
            (*c, Regex::new(&pat).unwrap())
        })
        .collect()
});

fn strip_decoration(raw: &str) -> &str {
    raw.trim()
        .trim_matches(|c: char| matches!(c, '"' | '\'' | '`' | '*' | '.'))
        .trim()
}

/// Strict match on the canonical token first, then a case-insensitive
/// search that must find exactly one distinct label. Everything else is
/// unusable.
pub fn parse_verdict(raw: &str, stage: Stage) -> Outcome {
    let bare = strip_decoration(raw);
    match stage {
        Stage::Rq3 | Stage::Rq4 => {
            match bare {
                "FLAKY" => return Outcome::Flaky,
                "NON-FLAKY" => return Outcome::NonFlaky,
                _ => {}
            }
            let mut found = BINARY.captures_iter(raw).map(|c| c.get(1).is_some());
            let Some(first) = found.next() else {
                return Outcome::Unusable;
            };
            if found.any(|x| x != first) {
                return Outcome::Unusable;
            }
            if first {
                Outcome::NonFlaky
            } else {
                Outcome::Flaky
            }
        }
        Stage::Rq5 => {
            if let Some(c) = RootCauseClass::ALL.iter().find(|c| c.canonical_name() == bare) {
                return Outcome::RootCause(*c);
            }
            let hits: Vec<RootCauseClass> = CLASSES
                .iter()
                .filter(|(_, re)| re.is_match(raw))
                .map(|(c, _)| *c)
                .collect();
            match hits[..] {
                [one] => Outcome::RootCause(one),
                _ => Outcome::Unusable,
            }
        }
    }
}
