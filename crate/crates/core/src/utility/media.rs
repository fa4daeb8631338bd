//! Byte formats for mock media: binary PPM rasters, PGM depth maps,
//! run-length mask sets and silent PCM wave files.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::canonical;
use crate::domain::PixelRect;

pub type Rgb = [u8; 3];

/// Deterministic colour for a piece of text: the first three bytes of its
/// SHA-256 digest.
pub fn color_of(text: &str) -> Rgb {
    let d = Sha256::digest(text.as_bytes());
    [d[0], d[1], d[2]]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<Rgb>,
}

impl Raster {
    pub fn filled(width: u32, height: u32, color: Rgb) -> Self {
        Self {
            width,
            height,
            pixels: vec![color; (width * height) as usize],
        }
    }

    pub fn index(&self, x: u32, y: u32) -> usize {
        (y * self.width + x) as usize
    }

    pub fn get(&self, x: u32, y: u32) -> Rgb {
        self.pixels[self.index(x, y)]
    }

    pub fn set(&mut self, x: u32, y: u32, color: Rgb) {
        let i = self.index(x, y);
        self.pixels[i] = color;
    }

    pub fn fill_rect(&mut self, rect: PixelRect, color: Rgb) {
        for y in rect.y..rect.y + rect.h {
            for x in rect.x..rect.x + rect.w {
                self.set(x, y, color);
            }
        }
    }

    /// Binary PPM (`P6`, maxval 255).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.reserve(self.pixels.len() * 3);
        for p in &self.pixels {
            out.extend_from_slice(p);
        }
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self, String> {
        let (header, body) = parse_netpbm_header(bytes, b"P6")?;
        let (width, height) = header;
        let expected = (width * height * 3) as usize;
        if body.len() != expected {
            return Err(format!("pixel data is {} bytes, expected {expected}", body.len()));
        }
        let pixels = body.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Ok(Self { width, height, pixels })
    }
}

/// Parse `magic\nW H\n255\n`; returns dimensions and the remaining bytes.
fn parse_netpbm_header<'a>(bytes: &'a [u8], magic: &[u8]) -> Result<((u32, u32), &'a [u8]), String> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated netpbm header".into());
        }
        fields.push(&bytes[start..pos]);
    }
    // exactly one whitespace byte separates the header from the data
    pos += 1;
    if fields[0] != magic {
        return Err(format!("expected {} image", String::from_utf8_lossy(magic)));
    }
    let num = |f: &[u8]| -> Result<u32, String> {
        std::str::from_utf8(f)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| "bad netpbm number".to_string())
    };
    if num(fields[3])? != 255 {
        return Err("only maxval 255 is supported".into());
    }
    Ok(((num(fields[1])?, num(fields[2])?), bytes.get(pos..).unwrap_or(&[])))
}

/// Single-channel 8-bit raster (binary PGM).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayMap {
    pub width: u32,
    pub height: u32,
    pub values: Vec<u8>,
}

impl GrayMap {
    /// Left-to-right ramp from 0 to 255.
    pub fn horizontal_gradient(width: u32, height: u32) -> Self {
        let row: Vec<u8> = (0..width)
            .map(|x| if width > 1 { (x as u64 * 255 / (width as u64 - 1)) as u8 } else { 0 })
            .collect();
        let mut values = Vec::with_capacity((width * height) as usize);
        for _ in 0..height {
            values.extend_from_slice(&row);
        }
        Self { width, height, values }
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.values);
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self, String> {
        let ((width, height), body) = parse_netpbm_header(bytes, b"P5")?;
        if body.len() != (width * height) as usize {
            return Err("depth map size mismatch".into());
        }
        Ok(Self {
            width,
            height,
            values: body.to_vec(),
        })
    }
}

/// Binary mask stored as row-major runs of set pixels: `(start, length)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub label: String,
    pub runs: Vec<(u32, u32)>,
}

impl Mask {
    pub fn from_predicate(label: impl Into<String>, len: u32, mut set: impl FnMut(u32) -> bool) -> Self {
        let mut runs = Vec::new();
        let mut start: Option<u32> = None;
        for i in 0..len {
            match (set(i), start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    runs.push((s, i - s));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push((s, len - s));
        }
        Self {
            label: label.into(),
            runs,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn pixel_count(&self) -> u64 {
        self.runs.iter().map(|r| r.1 as u64).sum()
    }

    pub fn contains(&self, index: u32) -> bool {
        self.runs.iter().any(|&(s, l)| index >= s && index < s + l)
    }

    pub fn indices(&self) -> impl Iterator<Item = u32> + '_ {
        self.runs.iter().flat_map(|&(s, l)| s..s + l)
    }

    /// Tight bounding rectangle on a raster of the given width.
    pub fn bounding_rect(&self, width: u32) -> Option<PixelRect> {
        let mut it = self.indices();
        let first = it.next()?;
        let (mut x0, mut y0, mut x1, mut y1) = (first % width, first / width, first % width, first / width);
        for i in self.indices() {
            let (x, y) = (i % width, i / width);
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        Some(PixelRect {
            x: x0,
            y: y0,
            w: x1 - x0 + 1,
            h: y1 - y0 + 1,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSet {
    pub width: u32,
    pub height: u32,
    pub masks: Vec<Mask>,
}

impl MaskSet {
    pub fn to_bytes(&self) -> Vec<u8> {
        canonical::to_canonical_bytes(self).expect("mask sets serialize")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        serde_json::from_slice(bytes).map_err(|e| e.to_string())
    }

    /// Whether pixel `index` lies in any mask.
    pub fn covers(&self, index: u32) -> bool {
        self.masks.iter().any(|m| m.contains(index))
    }
}

pub const WAVE_SAMPLE_RATE: u32 = 8000;

/// Silent 16-bit mono PCM wave of `duration_ms`.
pub fn silent_wave(duration_ms: u64) -> Vec<u8> {
    let samples = duration_ms * WAVE_SAMPLE_RATE as u64 / 1000;
    let data_len = (samples * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&WAVE_SAMPLE_RATE.to_le_bytes());
    out.extend_from_slice(&(WAVE_SAMPLE_RATE * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    out.resize(44 + data_len as usize, 0);
    out
}

/// Duration of a PCM wave produced by [`silent_wave`].
pub fn wave_duration_ms(bytes: &[u8]) -> Option<u64> {
    if bytes.len() < 44 || &bytes[0..4] != b"RIFF" {
        return None;
    }
    let data_len = u32::from_le_bytes(bytes[40..44].try_into().ok()?) as u64;
    Some(data_len / 2 * 1000 / WAVE_SAMPLE_RATE as u64)
}
