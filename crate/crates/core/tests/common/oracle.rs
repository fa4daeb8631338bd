//! Reference implementations written straight from the stated rules, used
//! to check the engine's results.

use sha2::{Digest, Sha256};

pub fn tokens(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in lower.chars() {
        if c.is_alphanumeric() {
            cur.push(c);
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 14695981039346656037;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(1099511628211);
    }
    h
}

/// Signed hashed bag of words, L2-normalized; `None` for text without tokens.
pub fn embed(text: &str, dim: usize) -> Option<Vec<f64>> {
    let toks = tokens(text);
    if toks.is_empty() {
        return None;
    }
    let mut v = vec![0.0; dim];
    for t in toks {
        let h = fnv1a(t.as_bytes());
        let sign = if h & 64 == 0 { 1.0 } else { -1.0 };
        v[(h % dim as u64) as usize] += sign;
    }
    let mut sq = 0.0f64;
    for x in &v {
        sq += x * x;
    }
    let n = sq.sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    Some(v)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
    }
    dot.clamp(-1.0, 1.0)
}

/// Embed everything, score, keep `score >= min`, stable-sort by descending
/// score and cut at `k`.
pub fn top_k(query: &str, docs: &[(String, String)], k: usize, min: f64) -> Vec<(String, f64)> {
    let q = embed(query, 64).expect("query has tokens");
    let mut scored: Vec<(String, f64)> = Vec::new();
    for (id, text) in docs {
        let s = cosine(&q, &embed(text, 64).expect("doc has tokens"));
        if s >= min {
            scored.push((id.clone(), s));
        }
    }
    // Vec::sort_by is stable: equal scores keep insertion order
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    scored.truncate(k);
    scored
}

pub fn color(text: &str) -> [u8; 3] {
    let d = Sha256::digest(text.as_bytes());
    [d[0], d[1], d[2]]
}

/// `(floor(x·W), floor(y·H), ceil(w·W), ceil(h·H))`.
pub fn pixel_rect(x: f64, y: f64, w: f64, h: f64, width: u32, height: u32) -> (u32, u32, u32, u32) {
    (
        (x * width as f64).floor() as u32,
        (y * height as f64).floor() as u32,
        (w * width as f64).ceil() as u32,
        (h * height as f64).ceil() as u32,
    )
}
