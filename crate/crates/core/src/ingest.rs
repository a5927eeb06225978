//! Parse raw per-source JSONL into validated records and normalize them to
//! linear documents.
//!
//! Input schemas (one JSON object per line):
//! - `product_info`: `{"id", "lang"?, "title"?, "properties"?, "description"?}`
//! - `review`:       `{"id", "lang"?, "text"}`
//! - `article`:      `{"id"?, "lang"?, "title"?, "body"}`
//! - `general_web`:  `{"lang"?, "text"}`

use crate::types::{Document, Lang, SourceId};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;
use std::collections::HashSet;
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IngestError {
    #[error("malformed record: {0}")]
    MalformedRecord(String),
    #[error("missing required field: {0}")]
    MissingRequiredField(&'static str),
    #[error("empty record: all field values blank")]
    EmptyRecord,
}

/// One semi-structured entry from one data source, fields in declaration order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceRecord {
    pub source_id: SourceId,
    pub entity_key: Option<String>,
    pub language: Lang,
    pub fields: Vec<(String, String)>,
    pub estimated_tokens: u64,
}

/// How records are rendered into document text. Fields named here are
/// treated as free text (no `name: ` prefix); everything else renders as
/// a `name: value` line.
#[derive(Debug, Clone)]
pub struct SerializationPolicy {
    pub free_text_fields: HashSet<String>,
}

impl Default for SerializationPolicy {
    fn default() -> Self {
        SerializationPolicy {
            free_text_fields: ["text", "body", "description"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

/// Character-class thresholds for [`detect_language`].
#[derive(Debug, Clone, Copy)]
pub struct LangThresholds {
    /// Classify as zh when at least this fraction of letters is CJK.
    pub zh_min_cjk: f64,
    /// Classify as en when at least this fraction of letters is ASCII.
    pub en_min_ascii: f64,
}

impl Default for LangThresholds {
    fn default() -> Self {
        LangThresholds {
            zh_min_cjk: 0.30,
            en_min_ascii: 0.70,
        }
    }
}

fn is_cjk(c: char) -> bool {
    matches!(c,
        '\u{4E00}'..='\u{9FFF}'
        | '\u{3400}'..='\u{4DBF}'
        | '\u{F900}'..='\u{FAFF}'
        | '\u{20000}'..='\u{2FA1F}')
}

/// Classify text as zh/en/other by character-class ratios over the
/// alphabetic-or-CJK characters.
pub fn detect_language(text: &str) -> Lang {
    detect_language_with(text, LangThresholds::default())
}

pub fn detect_language_with(text: &str, t: LangThresholds) -> Lang {
    let mut cjk = 0usize;
    let mut ascii = 0usize;
    let mut total = 0usize;
    for c in text.chars() {
        if is_cjk(c) {
            cjk += 1;
            total += 1;
        } else if c.is_ascii_alphabetic() {
            ascii += 1;
            total += 1;
        } else if c.is_alphabetic() {
            total += 1;
        }
    }
    if total == 0 {
        return Lang::Other;
    }
    let cjk_ratio = cjk as f64 / total as f64;
    let ascii_ratio = ascii as f64 / total as f64;
    if cjk_ratio >= t.zh_min_cjk {
        Lang::Zh
    } else if ascii_ratio >= t.en_min_ascii {
        Lang::En
    } else {
        Lang::Other
    }
}

fn get_str<'a>(obj: &'a serde_json::Map<String, Value>, key: &str) -> Result<Option<&'a str>, IngestError> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.as_str())),
        Some(other) => Err(IngestError::MalformedRecord(format!(
            "field {key:?} must be a string, got {other}"
        ))),
    }
}

/// Parse one raw JSONL line according to the source schema.
pub fn parse_source_record(raw: &str, source: &SourceId) -> Result<SourceRecord, IngestError> {
    let value: Value = serde_json::from_str(raw)
        .map_err(|e| IngestError::MalformedRecord(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| IngestError::MalformedRecord("line is not a JSON object".into()))?;

    let mut fields: Vec<(String, String)> = Vec::new();
    let entity_key: Option<String>;

    match source {
        SourceId::ProductInfo => {
            entity_key = Some(
                get_str(obj, "id")?
                    .filter(|s| !s.trim().is_empty())
                    .ok_or(IngestError::MissingRequiredField("id"))?
                    .to_string(),
            );
            if let Some(title) = get_str(obj, "title")? {
                fields.push(("title".into(), title.into()));
            }
            match obj.get("properties") {
                None | Some(Value::Null) => {}
                Some(Value::Object(props)) => {
                    for (name, val) in props {
                        let v = val.as_str().ok_or_else(|| {
                            IngestError::MalformedRecord(format!(
                                "property {name:?} must be a string"
                            ))
                        })?;
                        fields.push((name.clone(), v.to_string()));
                    }
                }
                Some(other) => {
                    return Err(IngestError::MalformedRecord(format!(
                        "field \"properties\" must be an object, got {other}"
                    )))
                }
            }
            if let Some(desc) = get_str(obj, "description")? {
                fields.push(("description".into(), desc.into()));
            }
        }
        SourceId::Review => {
            entity_key = Some(
                get_str(obj, "id")?
                    .filter(|s| !s.trim().is_empty())
                    .ok_or(IngestError::MissingRequiredField("id"))?
                    .to_string(),
            );
            let text = get_str(obj, "text")?.ok_or(IngestError::MissingRequiredField("text"))?;
            fields.push(("text".into(), text.into()));
        }
        SourceId::Article => {
            entity_key = get_str(obj, "id")?
                .filter(|s| !s.trim().is_empty())
                .map(String::from);
            if let Some(title) = get_str(obj, "title")? {
                fields.push(("title".into(), title.into()));
            }
            let body = get_str(obj, "body")?.ok_or(IngestError::MissingRequiredField("body"))?;
            fields.push(("body".into(), body.into()));
        }
        SourceId::GeneralWeb | SourceId::Custom(_) => {
            entity_key = get_str(obj, "id")?
                .filter(|s| !s.trim().is_empty())
                .map(String::from);
            let text = get_str(obj, "text")?.ok_or(IngestError::MissingRequiredField("text"))?;
            fields.push(("text".into(), text.into()));
        }
    }

    if fields.iter().all(|(_, v)| v.trim().is_empty()) {
        return Err(IngestError::EmptyRecord);
    }

    let language = match get_str(obj, "lang")? {
        Some("zh") => Lang::Zh,
        Some("en") => Lang::En,
        _ => {
            let joined: String = fields.iter().map(|(_, v)| v.as_str()).collect();
            detect_language(&joined)
        }
    };

    let estimated_tokens = fields.iter().map(|(_, v)| v.len() as u64).sum();

    Ok(SourceRecord {
        source_id: source.clone(),
        entity_key,
        language,
        fields,
        estimated_tokens,
    })
}

/// NFC, CRLF -> LF, trim, collapse runs of blank lines to a single blank line.
pub fn normalize_text(s: &str) -> String {
    let nfc: String = s.nfc().collect();
    let unified = nfc.replace("\r\n", "\n").replace('\r', "\n");
    let mut out = String::with_capacity(unified.len());
    let mut blank_run = 0usize;
    for line in unified.lines() {
        if line.trim().is_empty() {
            blank_run += 1;
            continue;
        }
        if !out.is_empty() {
            out.push('\n');
            if blank_run > 0 {
                out.push('\n');
            }
        }
        blank_run = 0;
        out.push_str(line.trim_end());
    }
    out.trim().to_string()
}

/// Render a validated record into its document form.
pub fn normalize_to_document(record: &SourceRecord, policy: &SerializationPolicy) -> Document {
    let mut lines: Vec<String> = Vec::with_capacity(record.fields.len());
    for (name, value) in &record.fields {
        let value = normalize_text(value);
        if value.is_empty() {
            continue;
        }
        if policy.free_text_fields.contains(name) {
            lines.push(value);
        } else {
            lines.push(format!("{name}: {value}"));
        }
    }
    let text = normalize_text(&lines.join("\n"));
    let token_count = text.len() as u64;
    Document {
        text,
        source: record.source_id.clone(),
        key: record.entity_key.clone(),
        lang: record.language,
        token_count,
    }
}

/// A rejected input line, destined for the error sidecar file.
#[derive(Debug, Clone, Serialize)]
pub struct LineError {
    pub line_no: usize,
    pub reason: String,
}

/// Parse and normalize every line of one source file. Every non-blank input
/// line yields exactly one document or one reported error; nothing is
/// silently dropped. Parallel over lines, output order preserved.
pub fn ingest_lines(
    lines: &[String],
    source: &SourceId,
    policy: &SerializationPolicy,
) -> (Vec<Document>, Vec<LineError>) {
    let results: Vec<(usize, Result<Document, IngestError>)> = lines
        .par_iter()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let res = parse_source_record(line, source).map(|r| normalize_to_document(&r, policy));
            (i + 1, res)
        })
        .collect();

    let mut docs = Vec::new();
    let mut errors = Vec::new();
    for (line_no, res) in results {
        match res {
            Ok(doc) => docs.push(doc),
            Err(e) => errors.push(LineError {
                line_no,
                reason: e.to_string(),
            }),
        }
    }
    (docs, errors)
}
