//! Shared helpers for the line-oriented text formats.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `# key=value key=value ...` header line.
#[derive(Debug)]
pub(crate) struct KvHeader {
    pairs: Vec<(String, String)>,
}

impl KvHeader {
    pub(crate) fn parse(line: &str) -> Result<Self> {
        let body = line
            .strip_prefix('#')
            .ok_or_else(|| Error::parse(1, "missing `#` header line"))?;
        let mut pairs = Vec::new();
        for token in body.split_whitespace() {
            let (key, value) = token
                .split_once('=')
                .ok_or_else(|| Error::parse(1, format!("header token `{token}` is not key=value")))?;
            pairs.push((key.to_string(), value.to_string()));
        }
        Ok(Self { pairs })
    }

    pub(crate) fn has(&self, key: &str) -> bool {
        self.pairs.iter().any(|(k, _)| k == key)
    }

    pub(crate) fn get<V: FromStr>(&self, key: &str) -> Result<V> {
        let raw = self
            .pairs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::parse(1, format!("header is missing `{key}`")))?;
        raw.parse()
            .map_err(|_| Error::parse(1, format!("header value `{key}={raw}` is malformed")))
    }
}

/// Splits text into its first non-empty line and the numbered, non-empty
/// lines that follow it. Line numbers are 1-based.
pub(crate) fn split_header(text: &str) -> Result<(&str, Vec<(usize, &str)>)> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "input is empty"))?;
    Ok((header, lines.collect()))
}

pub(crate) fn field<V: FromStr>(line: usize, raw: Option<&str>, name: &str) -> Result<V> {
    let raw = raw.ok_or_else(|| Error::parse(line, format!("missing {name} column")))?;
    raw.parse()
        .map_err(|_| Error::parse(line, format!("malformed {name} `{raw}`")))
}

/// Dense row-major matrix text: `# rows cols generation tag` followed by one
/// line per row of whitespace-separated values with 17 significant digits.
pub(crate) fn write_row_major<T: Scalar>(
    rows: usize,
    cols: usize,
    generation: u32,
    tag: &str,
    data: &[T],
) -> String {
    let mut out = format!("# {rows} {cols} {generation} {tag}\n");
    for r in 0..rows {
        let line: Vec<String> = data[r * cols..(r + 1) * cols]
            .iter()
            .map(|v| format!("{v:.16e}"))
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub(crate) struct RowMajor<T> {
    pub rows: usize,
    pub cols: usize,
    pub generation: u32,
    pub tag: String,
    pub data: Vec<T>,
}

pub(crate) fn parse_row_major<T: Scalar>(text: &str) -> Result<RowMajor<T>> {
    let (header, lines) = split_header(text)?;
    let body = header
        .strip_prefix('#')
        .ok_or_else(|| Error::parse(1, "missing `#` header line"))?;
    let mut head = body.split_whitespace();
    let rows: usize = field(1, head.next(), "rows")?;
    let cols: usize = field(1, head.next(), "cols")?;
    let generation: u32 = field(1, head.next(), "generation")?;
    let tag: String = field(1, head.next(), "tag")?;
    let mut data = Vec::with_capacity(rows * cols);
    let mut last_line = 1;
    for (line, raw) in lines {
        last_line = line;
        for token in raw.split_whitespace() {
            data.push(field(line, Some(token), "value")?);
        }
    }
    if data.len() != rows * cols {
        return Err(Error::parse(
            last_line,
            format!("expected {} values for {rows}x{cols}, found {}", rows * cols, data.len()),
        ));
    }
    Ok(RowMajor {
        rows,
        cols,
        generation,
        tag,
        data,
    })
}
