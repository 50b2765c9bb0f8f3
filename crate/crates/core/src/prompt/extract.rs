//! Lenient JSON extraction from model text.
//!
//! Models wrap JSON in prose and code fences, so parsing starts by
//! locating the first balanced `{...}` region that deserializes as an
//! object, after dropping fence lines.

use serde_json::{Map, Value};

fn strip_code_fences(raw: &str) -> String {
    raw.lines()
        .filter(|line| !line.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Slice of `s` covering the balanced object starting at byte `start`
/// (which must index a `{`). String literals and escapes are respected.
fn balanced_object(s: &str, start: usize) -> Option<&str> {
    let bytes = s.as_bytes();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&s[start..=i]);
                }
            }
            _ => {}
        }
    }
    None
}

/// First balanced JSON object in `raw` that parses, as a map.
pub(crate) fn first_json_object(raw: &str) -> Option<Map<String, Value>> {
    let cleaned = strip_code_fences(raw);
    let mut from = 0;
    while let Some(pos) = cleaned[from..].find('{') {
        let start = from + pos;
        if let Some(slice) = balanced_object(&cleaned, start) {
            if let Ok(Value::Object(map)) = serde_json::from_str::<Value>(slice) {
                return Some(map);
            }
        }
        from = start + 1;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_object_behind_prose_and_fences() {
        let raw = "sure! here you go\n```json\n{\"options\": [\"a\"]}\n```";
        let map = first_json_object(raw).unwrap();
        assert!(map.contains_key("options"));
    }

    #[test]
    fn skips_unbalanced_prefix_braces() {
        let raw = "{ broken {\"score\": 2}";
        let map = first_json_object(raw).unwrap();
        assert_eq!(map.get("score").unwrap().as_i64(), Some(2));
    }

    #[test]
    fn braces_inside_strings_do_not_confuse_depth() {
        let raw = r#"{"reason": "use { and } freely \" even escaped", "score": 1}"#;
        let map = first_json_object(raw).unwrap();
        assert_eq!(map.get("score").unwrap().as_i64(), Some(1));
    }

    #[test]
    fn no_object_yields_none() {
        assert!(first_json_object("not json").is_none());
        assert!(first_json_object("[1, 2, 3]").is_none());
        assert!(first_json_object("{ never closed").is_none());
    }
}
