//! Shared domain types used across pipeline stages.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Which corpus a record came from. The four built-in kinds map onto the
/// canonical source schemas; anything else is carried through as `Custom`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum SourceId {
    ProductInfo,
    Review,
    Article,
    GeneralWeb,
    Custom(String),
}

impl SourceId {
    /// Sources whose records can be linked into the mixing graph by entity key.
    pub fn is_linkable(&self) -> bool {
        matches!(self, SourceId::ProductInfo | SourceId::Review)
    }

    pub fn as_str(&self) -> &str {
        match self {
            SourceId::ProductInfo => "product_info",
            SourceId::Review => "review",
            SourceId::Article => "article",
            SourceId::GeneralWeb => "general_web",
            SourceId::Custom(s) => s,
        }
    }
}

impl FromStr for SourceId {
    type Err = std::convert::Infallible;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "product_info" => SourceId::ProductInfo,
            "review" => SourceId::Review,
            "article" => SourceId::Article,
            "general_web" => SourceId::GeneralWeb,
            other => SourceId::Custom(other.to_string()),
        })
    }
}

impl From<String> for SourceId {
    fn from(s: String) -> Self {
        s.parse().unwrap()
    }
}

impl From<SourceId> for String {
    fn from(s: SourceId) -> Self {
        s.as_str().to_string()
    }
}

impl fmt::Display for SourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lang {
    Zh,
    En,
    Other,
}

impl Lang {
    pub fn as_str(&self) -> &str {
        match self {
            Lang::Zh => "zh",
            Lang::En => "en",
            Lang::Other => "other",
        }
    }
}

impl FromStr for Lang {
    type Err = std::convert::Infallible;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "zh" => Lang::Zh,
            "en" => Lang::En,
            _ => Lang::Other,
        })
    }
}

/// A normalized linear document, the unit flowing through filtering, dedup
/// and graph construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub text: String,
    pub source: SourceId,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    pub lang: Lang,
    #[serde(default)]
    pub token_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainTag {
    Domain,
    General,
}

/// One entry in a training sample's provenance: which node contributed
/// which slice of the concatenated text, in final (post-permutation) order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: SourceId,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    pub node: usize,
}

/// One concatenated, provenance-tagged training text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub text: String,
    pub provenance: Vec<Provenance>,
    pub tokens: u64,
    pub tag: DomainTag,
    pub lang: Lang,
}
