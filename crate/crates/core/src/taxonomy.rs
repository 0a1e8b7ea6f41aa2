//! Root-cause and fix-pattern label spaces shared by the triage, prompting,
//! storage and evaluation stages.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// The nine root-cause classes a model is asked to choose from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RootCauseClass {
    Randomness,
    FloatingPoint,
    SoftwareEnvironment,
    MultiThreading,
    Visualization,
    UnhandledExceptions,
    Network,
    UnorderedCollection,
    Others,
}

impl RootCauseClass {
    pub const ALL: [RootCauseClass; 9] = [
        RootCauseClass::Randomness,
        RootCauseClass::FloatingPoint,
        RootCauseClass::SoftwareEnvironment,
        RootCauseClass::MultiThreading,
        RootCauseClass::Visualization,
        RootCauseClass::UnhandledExceptions,
        RootCauseClass::Network,
        RootCauseClass::UnorderedCollection,
        RootCauseClass::Others,
    ];

    /// Canonical name, exactly as listed to the model.
    pub fn canonical_name(self) -> &'static str {
        match self {
            RootCauseClass::Randomness => "Randomness (PRNG)",
            RootCauseClass::FloatingPoint => "Floating Point Operations",
            RootCauseClass::SoftwareEnvironment => "Software Environment",
            RootCauseClass::MultiThreading => "Multi-threading",
            RootCauseClass::Visualization => "Visualization",
            RootCauseClass::UnhandledExceptions => "Unhandled Exceptions",
            RootCauseClass::Network => "Network",
            RootCauseClass::UnorderedCollection => "Unordered Collection",
            RootCauseClass::Others => "Others",
        }
    }

    /// Case-insensitive parse of a canonical name.
    pub fn parse_canonical(s: &str) -> Option<Self> {
        let needle = s.trim();
        Self::ALL
            .into_iter()
            .find(|c| c.canonical_name().eq_ignore_ascii_case(needle))
    }
}

impl fmt::Display for RootCauseClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.canonical_name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown label `{0}`")]
pub struct UnknownLabel(pub String);

impl FromStr for RootCauseClass {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse_canonical(s).ok_or_else(|| UnknownLabel(s.to_string()))
    }
}

/// A labelled root cause: one of the nine classes or `Unknown` (reviewers
/// could not determine the cause). `Unknown` is never offered to a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RootCause {
    Class(RootCauseClass),
    Unknown,
}

impl RootCause {
    pub const UNKNOWN_NAME: &'static str = "Unknown";

    pub fn class(self) -> Option<RootCauseClass> {
        match self {
            RootCause::Class(c) => Some(c),
            RootCause::Unknown => None,
        }
    }

    /// Every value in table order, `Unknown` last.
    pub fn all() -> impl Iterator<Item = RootCause> {
        RootCauseClass::ALL
            .into_iter()
            .map(RootCause::Class)
            .chain(std::iter::once(RootCause::Unknown))
    }
}

impl From<RootCauseClass> for RootCause {
    fn from(c: RootCauseClass) -> Self {
        RootCause::Class(c)
    }
}

impl fmt::Display for RootCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RootCause::Class(c) => c.fmt(f),
            RootCause::Unknown => f.write_str(Self::UNKNOWN_NAME),
        }
    }
}

impl FromStr for RootCause {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim().eq_ignore_ascii_case(Self::UNKNOWN_NAME) {
            return Ok(RootCause::Unknown);
        }
        s.parse().map(RootCause::Class)
    }
}

/// Fix patterns observed for flaky tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FixPattern {
    FixSeed,
    AlterSoftwareEnv,
    MakeSingleThread,
    AdjustTolerance,
    AddExceptionHandler,
    Synchronize,
    UseKeysForOrder,
    Others,
}

impl FixPattern {
    pub const ALL: [FixPattern; 8] = [
        FixPattern::FixSeed,
        FixPattern::AlterSoftwareEnv,
        FixPattern::MakeSingleThread,
        FixPattern::AdjustTolerance,
        FixPattern::AddExceptionHandler,
        FixPattern::Synchronize,
        FixPattern::UseKeysForOrder,
        FixPattern::Others,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FixPattern::FixSeed => "Fix Seed",
            FixPattern::AlterSoftwareEnv => "Alter Software Env.",
            FixPattern::MakeSingleThread => "Make Single Thread",
            FixPattern::AdjustTolerance => "Adjust Tolerance",
            FixPattern::AddExceptionHandler => "Add Exception Handler",
            FixPattern::Synchronize => "Synchronize",
            FixPattern::UseKeysForOrder => "Use Keys for Order",
            FixPattern::Others => "Others",
        }
    }
}

impl fmt::Display for FixPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FixPattern {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let needle = s.trim();
        Self::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(needle))
            .ok_or_else(|| UnknownLabel(s.to_string()))
    }
}

macro_rules! serde_via_display {
    ($($t:ty),*) => {$(
        impl Serialize for $t {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let raw = String::deserialize(d)?;
                raw.parse().map_err(serde::de::Error::custom)
            }
        }
    )*};
}

serde_via_display!(RootCauseClass, RootCause, FixPattern);
