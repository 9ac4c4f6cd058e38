//! Tolerant extraction of a record from generated text.
//!
//! The decoder finds the first JSON-object-like region and scans it into
//! key/value pairs. It accepts missing quotes, single quotes, junk before
//! and after the object, reordered keys, and a missing closing brace; it
//! must never panic, whatever bytes it is fed. Validation against the
//! schema is strict: every feature and the label exactly once, numeric
//! values must parse, categorical values must be known categories.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::table::{FeatureKind, Record, Schema, Value};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecodeError {
    #[error("no JSON-object-like region found")]
    NoObjectFound,
    #[error("missing feature '{0}'")]
    MissingFeature(String),
    #[error("duplicate feature '{0}'")]
    DuplicateFeature(String),
    #[error("value for '{0}' is not a finite number")]
    TypeMismatch(String),
    #[error("value '{value}' is not a known category of '{name}'")]
    UnknownCategory { name: String, value: String },
    #[error("unknown key '{0}'")]
    UnknownKey(String),
}

impl DecodeError {
    /// Short stable kind tag, used for parse-failure accounting.
    pub fn kind(&self) -> &'static str {
        match self {
            DecodeError::NoObjectFound => "no_object",
            DecodeError::MissingFeature(_) => "missing_feature",
            DecodeError::DuplicateFeature(_) => "duplicate_feature",
            DecodeError::TypeMismatch(_) => "type_mismatch",
            DecodeError::UnknownCategory { .. } => "unknown_category",
            DecodeError::UnknownKey(_) => "unknown_key",
        }
    }
}

/// Scans a quoted string starting at `pos` (which holds the quote char).
/// Returns the unescaped content and the position after the closing quote
/// (or end of input if unterminated).
fn scan_quoted(bytes: &[u8], pos: usize) -> (String, usize) {
    let quote = bytes[pos];
    let mut out = String::new();
    let mut i = pos + 1;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' if i + 1 < bytes.len() => {
                let esc = bytes[i + 1];
                match esc {
                    b'n' => out.push('\n'),
                    b't' => out.push('\t'),
                    b'r' => out.push('\r'),
                    b'u' => {
                        if i + 5 < bytes.len() {
                            if let Ok(hex) = std::str::from_utf8(&bytes[i + 2..i + 6]) {
                                if let Ok(code) = u32::from_str_radix(hex, 16) {
                                    out.push(char::from_u32(code).unwrap_or('\u{fffd}'));
                                    i += 6;
                                    continue;
                                }
                            }
                        }
                        out.push('u');
                    }
                    _ => {
                        // Escaped quote, backslash, slash, or anything else:
                        // take the character literally.
                        let rest = &bytes[i + 1..];
                        let ch_len = utf8_len(rest[0]);
                        if let Ok(s) = std::str::from_utf8(&rest[..ch_len.min(rest.len())]) {
                            out.push_str(s);
                        }
                        i += 1 + ch_len.min(rest.len());
                        continue;
                    }
                }
                i += 2;
            }
            b if b == quote => return (out, i + 1),
            _ => {
                let ch_len = utf8_len(bytes[i]).min(bytes.len() - i);
                if let Ok(s) = std::str::from_utf8(&bytes[i..i + ch_len]) {
                    out.push_str(s);
                } else {
                    out.push('\u{fffd}');
                }
                i += ch_len;
            }
        }
    }
    (out, bytes.len())
}

fn utf8_len(first: u8) -> usize {
    match first {
        b if b < 0x80 => 1,
        b if b >= 0xF0 => 4,
        b if b >= 0xE0 => 3,
        b if b >= 0xC0 => 2,
        _ => 1,
    }
}

fn skip_ws_and_commas(bytes: &[u8], mut pos: usize) -> usize {
    while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b',') {
        pos += 1;
    }
    pos
}

/// Extracts key/value pairs from the first object-like region of `text`.
/// Returns `None` when no `{` exists at all.
pub(crate) fn extract_pairs(text: &str) -> Option<Vec<(String, String)>> {
    let bytes = text.as_bytes();
    let start = bytes.iter().position(|&b| b == b'{')?;
    let mut pairs = Vec::new();
    let mut pos = start + 1;

    loop {
        pos = skip_ws_and_commas(bytes, pos);
        if pos >= bytes.len() || bytes[pos] == b'}' {
            break;
        }
        // Key: quoted, or bare text up to the colon.
        let key = if bytes[pos] == b'"' || bytes[pos] == b'\'' {
            let (key, next) = scan_quoted(bytes, pos);
            pos = next;
            key
        } else {
            let key_start = pos;
            while pos < bytes.len() && bytes[pos] != b':' && bytes[pos] != b'}' {
                pos += 1;
            }
            if pos >= bytes.len() || bytes[pos] == b'}' {
                break; // trailing garbage without a colon
            }
            String::from_utf8_lossy(&bytes[key_start..pos]).trim().to_string()
        };
        pos = skip_ws_and_commas(bytes, pos);
        if pos >= bytes.len() || bytes[pos] != b':' {
            break;
        }
        pos += 1;
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos >= bytes.len() {
            break;
        }
        // Value: quoted, or bare text up to a comma or the closing brace.
        let value = if bytes[pos] == b'"' || bytes[pos] == b'\'' {
            let (value, next) = scan_quoted(bytes, pos);
            pos = next;
            value
        } else {
            let value_start = pos;
            while pos < bytes.len() && bytes[pos] != b',' && bytes[pos] != b'}' {
                pos += 1;
            }
            String::from_utf8_lossy(&bytes[value_start..pos]).trim().to_string()
        };
        pairs.push((key, value));
        pos = skip_ws_and_commas(bytes, pos);
        if pos >= bytes.len() || bytes[pos] == b'}' {
            break;
        }
    }
    Some(pairs)
}

/// Number of `{` regions in the text; more than one means the model kept
/// talking after its first sample ("first object wins").
pub fn count_objects(text: &str) -> usize {
    text.bytes().filter(|&b| b == b'{').count()
}

/// Parses generated text back into a schema-valid [`Record`].
pub fn decode_record(text: &str, schema: &Schema) -> Result<Record, DecodeError> {
    let pairs = extract_pairs(text).ok_or(DecodeError::NoObjectFound)?;
    if pairs.is_empty() {
        return Err(DecodeError::NoObjectFound);
    }

    let mut values: Vec<Option<Value>> = vec![None; schema.features.len()];
    let mut label: Option<String> = None;
    let mut seen = BTreeSet::new();

    for (raw_key, raw_value) in pairs {
        let key = raw_key.trim();
        if key == schema.label.name {
            if !seen.insert(key.to_string()) {
                return Err(DecodeError::DuplicateFeature(key.to_string()));
            }
            let value = raw_value.trim().to_string();
            if !schema.classes().contains(value.as_str()) {
                return Err(DecodeError::UnknownCategory {
                    name: key.to_string(),
                    value,
                });
            }
            label = Some(value);
            continue;
        }
        let index = schema
            .feature_index(key)
            .ok_or_else(|| DecodeError::UnknownKey(key.to_string()))?;
        if !seen.insert(key.to_string()) {
            return Err(DecodeError::DuplicateFeature(key.to_string()));
        }
        let spec = &schema.features[index];
        let value = match spec.kind {
            FeatureKind::Numerical => {
                let trimmed = raw_value.trim().to_string();
                Value::numeric(trimmed).map_err(|_| DecodeError::TypeMismatch(key.to_string()))?
            }
            FeatureKind::Categorical => {
                let trimmed = raw_value.trim().to_string();
                let known = spec
                    .categories
                    .as_ref()
                    .is_some_and(|c| c.contains(trimmed.as_str()));
                if !known {
                    return Err(DecodeError::UnknownCategory {
                        name: key.to_string(),
                        value: trimmed,
                    });
                }
                Value::Categorical(trimmed)
            }
        };
        values[index] = Some(value);
    }

    for (spec, slot) in schema.features.iter().zip(&values) {
        if slot.is_none() {
            return Err(DecodeError::MissingFeature(spec.name.clone()));
        }
    }
    let label = label.ok_or_else(|| DecodeError::MissingFeature(schema.label.name.clone()))?;

    Ok(Record {
        values: values.into_iter().map(|v| v.expect("checked")).collect(),
        label,
    })
}
