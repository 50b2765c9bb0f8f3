//! Canonical serialization and content digests.
//!
//! Every persisted record goes through one canonical JSON form: map keys
//! sorted, no insignificant whitespace, numbers in shortest round-trip
//! rendering. Digests are computed over canonical lines so they are stable
//! under storage-level reformatting (key order, whitespace, trailing
//! zeros) but sensitive to the order of records and of ordered fields.

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::ModelError;

/// Serialize a value to its canonical JSON line.
///
/// The value is first converted to a `serde_json::Value`, whose object maps
/// are BTree-backed and therefore key-sorted, then rendered compactly.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String, ModelError> {
    let v = serde_json::to_value(value).map_err(ModelError::Serialize)?;
    serde_json::to_string(&v).map_err(ModelError::Serialize)
}

/// Re-canonicalize a raw JSON document (parse, then render canonically).
pub fn canonicalize_str(raw: &str) -> Result<String, ModelError> {
    let v: serde_json::Value = serde_json::from_str(raw).map_err(ModelError::Serialize)?;
    serde_json::to_string(&v).map_err(ModelError::Serialize)
}

/// Hex SHA-256 over an iterator of canonical lines, one `\n` after each.
pub fn digest_lines<I, S>(lines: I) -> String
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut hasher = Sha256::new();
    for line in lines {
        hasher.update(line.as_ref().as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

/// Hex SHA-256 of a byte slice.
pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Schema-version header permitted as the first line of a JSONL file.
///
/// Header lines are ignored when digesting and when reading records.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SchemaHeader {
    pub schema_version: u32,
}

/// Current schema version written by this crate.
pub const SCHEMA_VERSION: u32 = 1;

fn is_header_line(line: &str) -> bool {
    serde_json::from_str::<serde_json::Value>(line)
        .ok()
        .and_then(|v| v.get("schema_version").cloned())
        .is_some_and(|v| v.is_number())
        && !line.contains("\"record_id\"")
}

/// Read line-delimited JSON records, skipping blank lines and an optional
/// schema-version header.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ModelError> {
    let file = fs::File::open(path).map_err(|e| ModelError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| ModelError::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if idx == 0 && is_header_line(trimmed) {
            continue;
        }
        let record: T = serde_json::from_str(trimmed).map_err(|e| ModelError::Record {
            path: path.display().to_string(),
            line: idx + 1,
            source: e,
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Write records as canonical JSONL with a schema-version header line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), ModelError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| ModelError::io(parent, e))?;
    }
    let mut buf = String::new();
    buf.push_str(&canonical_json(&SchemaHeader {
        schema_version: SCHEMA_VERSION,
    })?);
    buf.push('\n');
    for record in records {
        buf.push_str(&canonical_json(record)?);
        buf.push('\n');
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| ModelError::io(&tmp, e))?;
        f.write_all(buf.as_bytes()).map_err(|e| ModelError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| ModelError::io(path, e))?;
    Ok(())
}

/// Digest a JSONL file: each non-header line is re-canonicalized before
/// hashing, so the digest matches [`digest_lines`] over the typed records.
pub fn digest_jsonl_file(path: &Path) -> Result<String, ModelError> {
    let file = fs::File::open(path).map_err(|e| ModelError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut canon = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| ModelError::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || (idx == 0 && is_header_line(trimmed)) {
            continue;
        }
        canon.push(canonicalize_str(trimmed)?);
    }
    Ok(digest_lines(canon.iter().map(String::as_str)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_sorts_keys_and_strips_whitespace() {
        let raw = r#" { "b" : 2 , "a" : 1.50 } "#;
        assert_eq!(canonicalize_str(raw).unwrap(), r#"{"a":1.5,"b":2}"#);
    }

    #[test]
    fn digest_is_order_sensitive() {
        let a = digest_lines(["x", "y"]);
        let b = digest_lines(["y", "x"]);
        assert_ne!(a, b);
    }

    #[test]
    fn header_line_detection() {
        assert!(is_header_line(r#"{"schema_version":1}"#));
        assert!(!is_header_line(r#"{"record_id":"r1","schema_version":1}"#));
        assert!(!is_header_line(r#"{"current_query":"hi"}"#));
    }
}
