//! On-disk formats: binary PGM input, the `OCDL` dictionary file, the CSV
//! training log and the `key=value` run manifest.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::pipeline::TrainLogRecord;
use crate::transforms::Signal;

pub const DICT_MAGIC: &[u8; 4] = b"OCDL";
pub const DICT_VERSION: u32 = 1;
/// magic + version + m + l1 + l2
pub const DICT_HEADER_LEN: usize = 20;
/// Tolerance on filter norms when loading a dictionary file.
pub const DICT_NORM_TOL: f64 = 1e-9;

pub const LOG_HEADER: &str = "t,elapsed_seconds,alpha,cbpdn_iters,fista_iters,test_functional";

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

/// Decodes a binary 8-bit PGM (`P5`, maxval 255) into `[0, 1]` intensities.
pub fn parse_pgm(bytes: &[u8]) -> Result<Signal> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(format_err(0, "expected binary PGM magic \"P5\""));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    let names = ["width", "height", "maxval"];
    for (field, name) in fields.iter_mut().zip(names) {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(b) = bytes.get(pos) {
                        pos += 1;
                        if *b == b'\n' || *b == b'\r' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(start, format!("expected {name}")));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| format_err(start, format!("{name} out of range")))?;
        if *field == 0 {
            return Err(format_err(start, format!("{name} must be positive")));
        }
        if name == "maxval" && *field != 255 {
            return Err(format_err(
                start,
                format!("maxval must be 255, got {field}"),
            ));
        }
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => {
            return Err(format_err(
                pos,
                "expected a single whitespace byte after maxval",
            ))
        }
    }
    let [width, height, _] = fields;
    let needed = width
        .checked_mul(height)
        .ok_or_else(|| format_err(pos, "image too large"))?;
    let payload = &bytes[pos..];
    if payload.len() < needed {
        return Err(format_err(
            bytes.len(),
            format!(
                "truncated payload: expected {needed} bytes starting at {pos}, found {}",
                payload.len()
            ),
        ));
    }
    let values = Array2::from_shape_fn((height, width), |(i, j)| {
        f64::from(payload[i * width + j]) / 255.0
    });
    Signal::new(values)
}

pub fn load_image(path: &Path) -> Result<Signal> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes)
}

/// Encodes values in `[0, 1]` (clamped) as an 8-bit binary PGM.
pub fn encode_pgm(image: &Signal) -> Vec<u8> {
    let (h, w) = image.dims();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(
        image
            .values()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

pub fn save_image(image: &Signal, path: &Path) -> Result<()> {
    fs::write(path, encode_pgm(image)).map_err(|e| Error::io(path, e))
}

/// Sorted list of `*.pgm` files directly inside `dir`.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_pgm = path
            .extension()
            .is_some_and(|ext| ext.eq_ignore_ascii_case("pgm"));
        if is_pgm && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn encode_dictionary(dict: &Dictionary) -> Vec<u8> {
    let (m, l1, l2) = dict.filters().dim();
    let mut out = Vec::with_capacity(DICT_HEADER_LEN + 8 * m * l1 * l2);
    out.extend_from_slice(DICT_MAGIC);
    for v in [DICT_VERSION, m as u32, l1 as u32, l2 as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in dict.filters().iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_dictionary(bytes: &[u8]) -> Result<Dictionary> {
    if bytes.len() < DICT_HEADER_LEN {
        return Err(format_err(bytes.len(), "dictionary header is truncated"));
    }
    if &bytes[..4] != DICT_MAGIC {
        return Err(format_err(0, "expected magic \"OCDL\""));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[4 * k..4 * k + 4].try_into().expect("4 bytes"));
    let version = word(1);
    if version != DICT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let (m, l1, l2) = (word(2) as usize, word(3) as usize, word(4) as usize);
    if m == 0 || l1 == 0 || l2 == 0 {
        return Err(Error::CorruptFile(format!("empty shape {m}x{l1}x{l2}")));
    }
    let expected = m
        .checked_mul(l1)
        .and_then(|v| v.checked_mul(l2))
        .and_then(|v| v.checked_mul(8))
        .ok_or_else(|| Error::CorruptFile("shape overflows".into()))?;
    let payload = &bytes[DICT_HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::CorruptFile(format!(
            "payload is {} bytes, shape {m}x{l1}x{l2} needs {expected}",
            payload.len()
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let filters = Array3::from_shape_vec((m, l1, l2), values).expect("length checked");
    Dictionary::with_tolerance(filters, DICT_NORM_TOL)
        .map_err(|e| Error::CorruptFile(e.to_string()))
}

pub fn save_dictionary(dict: &Dictionary, path: &Path) -> Result<()> {
    fs::write(path, encode_dictionary(dict)).map_err(|e| Error::io(path, e))
}

pub fn load_dictionary(path: &Path) -> Result<Dictionary> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dictionary(&bytes)
}

/// CSV text of a training log, header first. Floats use the shortest
/// representation that parses back to the same value.
pub fn format_log(records: &[TrainLogRecord]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for r in records {
        let _ = write!(
            out,
            "{},{:?},{:?},{},{},",
            r.t, r.elapsed_seconds, r.alpha, r.cbpdn_iters, r.fista_iters
        );
        if let Some(v) = r.test_functional {
            let _ = write!(out, "{v:?}");
        }
        out.push('\n');
    }
    out
}

pub fn write_log(records: &[TrainLogRecord], path: &Path) -> Result<()> {
    fs::write(path, format_log(records)).map_err(|e| Error::io(path, e))
}

/// Ordered `key=value` pairs, one per line.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest::new();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let body = line.trim_end_matches(['\n', '\r']);
            if !body.is_empty() && !body.starts_with('#') {
                let (k, v) = body
                    .split_once('=')
                    .ok_or_else(|| format_err(offset, "manifest line without '='"))?;
                m.set(k.trim(), v.trim());
            }
            offset += line.len();
        }
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_text().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}
