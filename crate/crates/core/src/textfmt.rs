//! Shared pieces of the line-oriented text formats.
//!
//! Every text file starts with `# cachenet-<kind> v<version>` followed by an
//! optional `# config-hash=<hex> tool-version=<semver>` provenance line.

use std::fmt::Write as _;

use crate::{Error, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Config hash and tool version stamped into every output file.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub tool_version: String,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Self {
            config_hash: config_hash.into(),
            tool_version: TOOL_VERSION.to_owned(),
        }
    }
}

pub(crate) fn write_header(out: &mut String, kind: &str, version: u32, prov: Option<&Provenance>) {
    let _ = writeln!(out, "# cachenet-{kind} v{version}");
    if let Some(p) = prov {
        let _ = writeln!(
            out,
            "# config-hash={} tool-version={}",
            p.config_hash, p.tool_version
        );
    }
}

/// Consumes the header lines; returns the provenance and the 1-based number
/// of the first body line.
pub(crate) fn read_header<'a>(
    lines: &mut std::iter::Peekable<impl Iterator<Item = (usize, &'a str)>>,
    format: &'static str,
    kind: &str,
    version: u32,
) -> Result<Option<Provenance>> {
    let expected = format!("# cachenet-{kind} v{version}");
    match lines.next() {
        Some((_, l)) if l.trim_end() == expected => {}
        Some((n, l)) => {
            return Err(Error::parse(
                format,
                n,
                format!("expected `{expected}`, found `{}`", truncate(l)),
            ))
        }
        None => return Err(Error::parse(format, 1, "empty file")),
    }
    let mut prov = None;
    if let Some(&(n, l)) = lines.peek() {
        if let Some(rest) = l.strip_prefix("# config-hash=") {
            let (hash, tool) = rest
                .trim_end()
                .split_once(" tool-version=")
                .ok_or_else(|| Error::parse(format, n, "malformed provenance line"))?;
            prov = Some(Provenance {
                config_hash: hash.to_owned(),
                tool_version: tool.to_owned(),
            });
            lines.next();
        }
    }
    Ok(prov)
}

pub(crate) fn numbered(text: &str) -> std::iter::Peekable<impl Iterator<Item = (usize, &str)>> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l)).peekable()
}

pub(crate) fn truncate(s: &str) -> String {
    s.chars().take(60).collect()
}

pub(crate) fn parse_f64(s: &str, format: &'static str, line: usize, field: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::parse(format, line, format!("{field}: `{}` is not a number", truncate(s))))?;
    if !v.is_finite() {
        return Err(Error::parse(format, line, format!("{field} is not finite")));
    }
    Ok(v)
}

pub(crate) fn parse_usize(s: &str, format: &'static str, line: usize, field: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::parse(format, line, format!("{field}: `{}` is not an integer", truncate(s))))
}

/// Parses a TOML document preceded by the usual `#` header lines (which TOML
/// treats as comments). Errors carry the offending field path and line.
pub(crate) fn parse_toml<T: serde::de::DeserializeOwned>(
    text: &str,
    format: &'static str,
    kind: &str,
    version: u32,
) -> Result<(T, Option<Provenance>)> {
    let mut lines = numbered(text);
    let prov = read_header(&mut lines, format, kind, version)?;
    let value = toml_value(text, format)?;
    Ok((value, prov))
}

pub(crate) fn toml_value<T: serde::de::DeserializeOwned>(text: &str, format: &'static str) -> Result<T> {
    serde_path_to_error::deserialize(toml::Deserializer::new(text)).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let line = inner
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
            .unwrap_or(0);
        let reason = if path.is_empty() || path == "." {
            inner.message().to_owned()
        } else {
            format!("{path}: {}", inner.message())
        };
        Error::parse(format, line, reason)
    })
}
