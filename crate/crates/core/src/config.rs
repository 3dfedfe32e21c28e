//! Flat `key = value` configuration text.
//!
//! Blank lines and lines starting with `#` are ignored. Keys may appear at
//! most once per file.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parse config text into `(key, value)` pairs in file order.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut seen = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse { line: i + 1, msg: format!("expected key = value, got `{line}`") })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Parse { line: i + 1, msg: "empty key".into() });
        }
        if let Some(prev) = seen.insert(k.to_string(), i + 1) {
            return Err(Error::Parse { line: i + 1, msg: format!("key `{k}` already set on line {prev}") });
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Split a command-line override of the form `key=value`.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config { key: s.to_string(), msg: "override must look like key=value".into() })?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

pub fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| Error::Config { key: key.to_string(), msg: format!("cannot parse `{value}`: {e}") })
}

pub fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config { key: key.to_string(), msg: format!("expected a boolean, got `{value}`") }),
    }
}

/// Comma-separated list, e.g. `500,500`. An empty string is the empty list.
pub fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse_value(key, s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let kv = parse_key_values("# run\n\nepochs = 5\n  seed=7  \nhidden = 500, 500\n").unwrap();
        assert_eq!(
            kv,
            vec![("epochs".into(), "5".into()), ("seed".into(), "7".into()), ("hidden".into(), "500, 500".into())]
        );
        assert_eq!(parse_list::<usize>("hidden", "500, 500").unwrap(), vec![500, 500]);
        assert!(parse_list::<usize>("hidden", "").unwrap().is_empty());
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(matches!(parse_key_values("a = 1\nnonsense\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_key_values("a = 1\na = 2\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_value::<u32>("epochs", "x"), Err(Error::Config { .. })));
        assert!(parse_override("novalue").is_err());
        assert_eq!(parse_override("beta=0.5").unwrap(), ("beta".into(), "0.5".into()));
    }
}
