//! Small helpers for the line-oriented `key = value` headers used by the
//! scene, dataset and checkpoint files.

use crate::error::{parse, Result};
use std::collections::BTreeMap;
use std::str::FromStr;

pub(crate) struct Header {
    fields: BTreeMap<String, String>,
}

impl Header {
    pub(crate) fn parse<'a>(lines: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut fields = BTreeMap::new();
        for line in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| parse(format!("expected `key = value`, got `{line}`")))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self { fields })
    }

    pub(crate) fn raw(&self, key: &str) -> Result<&str> {
        self.fields
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| parse(format!("missing header field `{key}`")))
    }

    pub(crate) fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.raw(key)?;
        raw.parse()
            .map_err(|_| parse(format!("bad value `{raw}` for `{key}`")))
    }

    pub(crate) fn get_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let raw = self.raw(key)?;
        raw.split_whitespace()
            .map(|tok| {
                tok.parse()
                    .map_err(|_| parse(format!("bad list item `{tok}` for `{key}`")))
            })
            .collect()
    }
}

pub(crate) fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Splits a `magic` line plus `key = value` header terminated by
/// `end_header\n` from the binary body that follows.
pub(crate) fn split_header<'a>(bytes: &'a [u8], magic: &str) -> Result<(Header, &'a [u8])> {
    let marker = b"end_header\n";
    let split = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| parse("header is not terminated"))?;
    let text = std::str::from_utf8(&bytes[..split]).map_err(|_| parse("header is not UTF-8"))?;
    let mut lines = text.lines();
    if lines.next() != Some(magic) {
        return Err(parse(format!("missing `{magic}` magic line")));
    }
    Ok((Header::parse(lines)?, &bytes[split + marker.len()..]))
}

/// Decodes a body of little-endian `f64` values.
pub(crate) fn read_f64s(body: &[u8], expected: usize) -> Result<Vec<f64>> {
    if body.len() != expected * 8 {
        return Err(parse(format!("body has {} bytes, expected {}", body.len(), expected * 8)));
    }
    Ok(body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}
