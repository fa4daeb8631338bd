//! Canonical JSON encoding.
//!
//! Every document that is hashed, stored or compared against a golden file
//! goes through this writer: object keys are sorted, integers are written
//! verbatim and every floating-point number is written with exactly six
//! decimal places. Output is pretty-printed with two-space indentation and a
//! trailing newline.

use serde::Serialize;
use serde_json::{Map, Number, Value};

/// Number of decimals used for every non-integer number.
pub const FLOAT_DECIMALS: usize = 6;

/// Serialize `value` to its canonical text form.
pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let tree = serde_json::to_value(value)?;
    let mut out = String::new();
    write_value(&mut out, &tree, 0);
    out.push('\n');
    Ok(out)
}

/// Canonical bytes of `value`.
pub fn to_canonical_bytes<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<Vec<u8>> {
    to_canonical_string(value).map(String::into_bytes)
}

/// Single-line canonical form, used for append-only record logs.
pub fn to_canonical_line<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let tree = serde_json::to_value(value)?;
    let mut out = String::new();
    write_compact(&mut out, &tree);
    Ok(out)
}

fn write_number(out: &mut String, n: &Number) {
    if let Some(i) = n.as_i64() {
        out.push_str(&i.to_string());
    } else if let Some(u) = n.as_u64() {
        out.push_str(&u.to_string());
    } else {
        let f = n.as_f64().unwrap_or(0.0);
        let mut s = format!("{:.*}", FLOAT_DECIMALS, f);
        if s == "-0.000000" {
            s = "0.000000".to_string();
        }
        out.push_str(&s);
    }
}

fn write_string(out: &mut String, s: &str) {
    // serde_json's string escaping is already deterministic.
    out.push_str(&serde_json::to_string(s).expect("string encoding is infallible"));
}

fn sorted(map: &Map<String, Value>) -> Vec<(&String, &Value)> {
    let mut entries: Vec<_> = map.iter().collect();
    entries.sort_by(|a, b| a.0.cmp(b.0));
    entries
}

fn indent(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

fn write_value(out: &mut String, value: &Value, level: usize) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => write_number(out, n),
        Value::String(s) => write_string(out, s),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                indent(out, level + 1);
                write_value(out, item, level + 1);
                if i + 1 < items.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            indent(out, level);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            out.push_str("{\n");
            let entries = sorted(map);
            for (i, (k, v)) in entries.iter().enumerate() {
                indent(out, level + 1);
                write_string(out, k);
                out.push_str(": ");
                write_value(out, v, level + 1);
                if i + 1 < entries.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            indent(out, level);
            out.push('}');
        }
    }
}

fn write_compact(out: &mut String, value: &Value) {
    match value {
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_compact(out, item);
            }
            out.push(']');
        }
        Value::Object(map) => {
            out.push('{');
            for (i, (k, v)) in sorted(map).into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_string(out, k);
                out.push(':');
                write_compact(out, v);
            }
            out.push('}');
        }
        other => write_value(out, other, 0),
    }
}
