//! Text-header + binary-payload container shared by waveforms, captures and
//! model files.
//!
//! Layout:
//!
//! ```text
//! deepadc-container
//! version = 1
//! kind = waveform
//! key = value
//! ...
//! <blank line>
//! <little-endian payload bytes>
//! ```
//!
//! Keys keep their insertion order so that files are byte-reproducible.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &str = "deepadc-container";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    fields: Vec<(String, String)>,
    pub payload: Vec<u8>,
}

impl Container {
    pub fn new(kind: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            fields: Vec::new(),
            payload: Vec::new(),
        }
    }

    /// Appends a header field. Values may not contain newlines.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        debug_assert!(!value.contains('\n') && !key.contains('='));
        if let Some(slot) = self.fields.iter_mut().find(|(k, _)| k == key) {
            slot.1 = value;
        } else {
            self.fields.push((key.to_string(), value));
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn fields(&self) -> &[(String, String)] {
        &self.fields
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Format(format!("{} header is missing `{key}`", self.kind)))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| Error::Format(format!("bad value for `{key}`: {raw:?}")))
    }

    pub fn parse_list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let raw = self.require(key)?;
        if raw.trim().is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Format(format!("bad list entry for `{key}`: {s:?}")))
            })
            .collect()
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::Format(format!(
                "expected a `{kind}` container, found `{}`",
                self.kind
            )))
        }
    }

    pub fn push_f32(&mut self, values: impl IntoIterator<Item = f32>) {
        for v in values {
            self.payload.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn push_i16(&mut self, values: impl IntoIterator<Item = i16>) {
        for v in values {
            self.payload.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.payload.len() + 256);
        out.extend_from_slice(MAGIC.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(format!("version = {VERSION}\nkind = {}\n", self.kind).as_bytes());
        for (k, v) in &self.fields {
            out.extend_from_slice(format!("{k} = {v}\n").as_bytes());
        }
        out.push(b'\n');
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let split = bytes
            .windows(2)
            .position(|w| w == b"\n\n")
            .ok_or_else(|| Error::Format("container header is not terminated".into()))?;
        let header = std::str::from_utf8(&bytes[..split])
            .map_err(|_| Error::Format("container header is not UTF-8".into()))?;
        let mut lines = header.lines();
        if lines.next() != Some(MAGIC) {
            return Err(Error::Format("not a deepadc container".into()));
        }
        let mut kind = None;
        let mut fields = Vec::new();
        for line in lines {
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| Error::Format(format!("malformed header line {line:?}")))?;
            match k {
                "version" => {
                    let version: u32 = v
                        .parse()
                        .map_err(|_| Error::Format(format!("bad version {v:?}")))?;
                    if version != VERSION {
                        return Err(Error::Format(format!("unsupported version {version}")));
                    }
                }
                "kind" => kind = Some(v.to_string()),
                _ => fields.push((k.to_string(), v.to_string())),
            }
        }
        Ok(Self {
            kind: kind.ok_or_else(|| Error::Format("container has no kind".into()))?,
            fields,
            payload: bytes[split + 2..].to_vec(),
        })
    }

    pub fn read_f32(&self, offset: usize, count: usize) -> Result<Vec<f32>> {
        let bytes = self.slice(offset, count * 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn read_i16(&self, offset: usize, count: usize) -> Result<Vec<i16>> {
        let bytes = self.slice(offset, count * 2)?;
        Ok(bytes
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]))
            .collect())
    }

    fn slice(&self, offset: usize, len: usize) -> Result<&[u8]> {
        self.payload.get(offset..offset + len).ok_or_else(|| {
            Error::Format(format!(
                "payload too short: need {} bytes, have {}",
                offset + len,
                self.payload.len()
            ))
        })
    }

    /// Writes via a temporary sibling so a failed write never leaves a partial file.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Writes through a sibling `.partial` file so readers never see a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
