//! Run manifests with a platform-stable configuration hash.
//!
//! The hash is SHA-256 over a canonical form of the configuration text:
//! object keys sorted, compact separators, and number literals kept as the
//! bytes that appeared in the file (never re-serialized through floats), so
//! the same configuration hashes identically on every platform.

use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Canonicalizes well-formed JSON text: sorts object keys, strips
/// whitespace, preserves string and number tokens verbatim.
pub fn canonical_json(text: &str) -> Result<String, String> {
    let mut parser = Canon {
        bytes: text.as_bytes(),
        pos: 0,
    };
    parser.skip_ws();
    let value = parser.value()?;
    parser.skip_ws();
    if parser.pos != parser.bytes.len() {
        return Err(format!("trailing data at byte {}", parser.pos));
    }
    let mut out = String::with_capacity(text.len());
    value.emit(&mut out);
    Ok(out)
}

pub fn config_hash(config_text: &str) -> Result<String, String> {
    let canonical = canonical_json(config_text)?;
    let digest = Sha256::digest(canonical.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

enum CanonValue {
    /// String, number, true, false or null: the raw token bytes.
    Token(String),
    Array(Vec<CanonValue>),
    /// Key tokens (with quotes) paired with values, sorted at emit time.
    Object(Vec<(String, CanonValue)>),
}

impl CanonValue {
    fn emit(&self, out: &mut String) {
        match self {
            CanonValue::Token(t) => out.push_str(t),
            CanonValue::Array(items) => {
                out.push('[');
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    v.emit(out);
                }
                out.push(']');
            }
            CanonValue::Object(pairs) => {
                let mut sorted: Vec<&(String, CanonValue)> = pairs.iter().collect();
                sorted.sort_by(|a, b| a.0.cmp(&b.0));
                out.push('{');
                for (i, (k, v)) in sorted.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(k);
                    out.push(':');
                    v.emit(out);
                }
                out.push('}');
            }
        }
    }
}

struct Canon<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Canon<'_> {
    fn skip_ws(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if matches!(b, b' ' | b'\t' | b'\n' | b'\r') {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn expect(&mut self, b: u8) -> Result<(), String> {
        if self.peek() == Some(b) {
            self.pos += 1;
            Ok(())
        } else {
            Err(format!("expected '{}' at byte {}", b as char, self.pos))
        }
    }

    fn value(&mut self) -> Result<CanonValue, String> {
        match self.peek() {
            Some(b'{') => self.object(),
            Some(b'[') => self.array(),
            Some(b'"') => Ok(CanonValue::Token(self.string()?)),
            Some(b) if b == b'-' || b.is_ascii_digit() => Ok(CanonValue::Token(self.number())),
            Some(b't') => self.literal("true"),
            Some(b'f') => self.literal("false"),
            Some(b'n') => self.literal("null"),
            _ => Err(format!("unexpected byte at {}", self.pos)),
        }
    }

    fn literal(&mut self, lit: &str) -> Result<CanonValue, String> {
        if self.bytes[self.pos..].starts_with(lit.as_bytes()) {
            self.pos += lit.len();
            Ok(CanonValue::Token(lit.to_string()))
        } else {
            Err(format!("bad literal at byte {}", self.pos))
        }
    }

    fn string(&mut self) -> Result<String, String> {
        let start = self.pos;
        self.expect(b'"')?;
        while let Some(b) = self.peek() {
            self.pos += 1;
            match b {
                b'"' => {
                    return Ok(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
                }
                b'\\' => {
                    // skip the escaped character (sufficient for \", \\ and
                    // the single-letter escapes; \uXXXX hex chars are plain
                    // ASCII and cannot contain '"')
                    self.pos += 1;
                }
                _ => {}
            }
        }
        Err("unterminated string".to_string())
    }

    fn number(&mut self) -> String {
        let start = self.pos;
        while let Some(b) = self.peek() {
            if b.is_ascii_digit() || matches!(b, b'-' | b'+' | b'.' | b'e' | b'E') {
                self.pos += 1;
            } else {
                break;
            }
        }
        String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned()
    }

    fn object(&mut self) -> Result<CanonValue, String> {
        self.expect(b'{')?;
        let mut pairs = Vec::new();
        self.skip_ws();
        if self.peek() == Some(b'}') {
            self.pos += 1;
            return Ok(CanonValue::Object(pairs));
        }
        loop {
            self.skip_ws();
            let key = self.string()?;
            self.skip_ws();
            self.expect(b':')?;
            self.skip_ws();
            let value = self.value()?;
            pairs.push((key, value));
            self.skip_ws();
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b'}') => {
                    self.pos += 1;
                    return Ok(CanonValue::Object(pairs));
                }
                _ => return Err(format!("expected ',' or '}}' at byte {}", self.pos)),
            }
        }
    }

    fn array(&mut self) -> Result<CanonValue, String> {
        self.expect(b'[')?;
        let mut items = Vec::new();
        self.skip_ws();
        if self.peek() == Some(b']') {
            self.pos += 1;
            return Ok(CanonValue::Array(items));
        }
        loop {
            self.skip_ws();
            items.push(self.value()?);
            self.skip_ws();
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b']') => {
                    self.pos += 1;
                    return Ok(CanonValue::Array(items));
                }
                _ => return Err(format!("expected ',' or ']' at byte {}", self.pos)),
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config: serde_json::Value,
    pub config_hash: String,
    pub artifact_version: String,
    pub started_unix_ms: u128,
    pub ended_unix_ms: u128,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub final_m0: f64,
    pub final_m1: f64,
    pub accumulated_loss: f64,
    pub clipped_mass: f64,
}

pub fn now_unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}
