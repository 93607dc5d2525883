//! Domain vocabulary shared by every pipeline stage.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// A statement to verify, optionally carrying its dataset record id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Claim {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    pub text: String,
}

impl Claim {
    /// Builds a claim, rejecting text that is empty after trimming.
    pub fn new(text: impl Into<String>) -> Result<Self, Error> {
        Self::with_id(None, text)
    }

    pub fn with_id(id: Option<u64>, text: impl Into<String>) -> Result<Self, Error> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::InvalidClaim("claim text is empty".into()));
        }
        Ok(Self { id, text })
    }
}

/// Canonical verdict vocabulary used by datasets, reports and the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "SUPPORTED")]
    Supported,
    #[serde(rename = "REFUTED")]
    Refuted,
    #[serde(rename = "NEI")]
    NotEnoughInfo,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Supported, Label::Refuted, Label::NotEnoughInfo];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Supported => "SUPPORTED",
            Label::Refuted => "REFUTED",
            Label::NotEnoughInfo => "NEI",
        }
    }

    /// Position in [`Label::ALL`]; used as the confusion-matrix axis.
    pub fn index(self) -> usize {
        match self {
            Label::Supported => 0,
            Label::Refuted => 1,
            Label::NotEnoughInfo => 2,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "SUPPORTED" => Ok(Label::Supported),
            "REFUTED" => Ok(Label::Refuted),
            "NEI" => Ok(Label::NotEnoughInfo),
            other => Err(Error::UnknownLabel(other.to_string())),
        }
    }
}

/// Label tokens the language model is asked to emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RawLlmLabel {
    True_,
    False_,
    Uncertain,
}

impl RawLlmLabel {
    pub const ALL: [RawLlmLabel; 3] = [RawLlmLabel::True_, RawLlmLabel::False_, RawLlmLabel::Uncertain];

    /// The lowercase token as it appears in model output.
    pub fn token(self) -> &'static str {
        match self {
            RawLlmLabel::True_ => "true",
            RawLlmLabel::False_ => "false",
            RawLlmLabel::Uncertain => "uncertain",
        }
    }

    pub fn from_token(token: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.token().eq_ignore_ascii_case(token))
    }
}

pub fn map_label(raw: RawLlmLabel) -> Label {
    match raw {
        RawLlmLabel::True_ => Label::Supported,
        RawLlmLabel::False_ => Label::Refuted,
        RawLlmLabel::Uncertain => Label::NotEnoughInfo,
    }
}

/// Which stages of the pipeline run before the verdict prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Mode {
    /// Verdict from model knowledge alone.
    OneModule,
    /// Verdict over the full retrieved pool.
    TwoModule,
    /// Verdict over filtered and similarity-selected evidence.
    ThreeModule,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::ThreeModule, Mode::TwoModule, Mode::OneModule];

    pub fn number(self) -> u8 {
        match self {
            Mode::OneModule => 1,
            Mode::TwoModule => 2,
            Mode::ThreeModule => 3,
        }
    }
}

impl TryFrom<u8> for Mode {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(Mode::OneModule),
            2 => Ok(Mode::TwoModule),
            3 => Ok(Mode::ThreeModule),
            other => Err(format!("mode must be 1, 2 or 3, got {other}")),
        }
    }
}

impl From<Mode> for u8 {
    fn from(m: Mode) -> u8 {
        m.number()
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-module", self.number())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let n: u8 = s
            .trim()
            .parse()
            .map_err(|_| format!("mode must be 1, 2 or 3, got {s:?}"))?;
        Mode::try_from(n)
    }
}

/// How per-sentence similarities fold into one candidate score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Max,
    Mean,
}

impl FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "max" => Ok(Aggregation::Max),
            "mean" => Ok(Aggregation::Mean),
            other => Err(format!("aggregation must be max or mean, got {other:?}")),
        }
    }
}
