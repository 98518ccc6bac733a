//! Shared CSV plumbing: `# key=value` preambles and exact-header checks.

use std::io::BufRead;

use serde::de::DeserializeOwned;

use crate::error::{Error, Result};

/// Splits leading `# key=value` lines from the CSV body.
pub(crate) fn split_preamble(input: impl BufRead) -> Result<(Vec<(String, String)>, String)> {
    let mut metadata = Vec::new();
    let mut body = String::new();
    let mut in_preamble = true;
    for line in input.lines() {
        let line = line.map_err(|e| Error::format("csv", e.to_string()))?;
        if in_preamble {
            if let Some(rest) = line.strip_prefix('#') {
                let rest = rest.trim_start();
                let (k, v) = rest.split_once('=').unwrap_or((rest, ""));
                metadata.push((k.to_string(), v.to_string()));
                continue;
            }
            in_preamble = false;
        }
        body.push_str(&line);
        body.push('\n');
    }
    Ok((metadata, body))
}

pub(crate) fn parse_rows<T: DeserializeOwned>(body: &str, header: &str, what: &str) -> Result<Vec<T>> {
    let found = body.lines().next().unwrap_or("");
    if found != header {
        return Err(Error::format(
            what,
            format!("expected header {header:?}, found {found:?}"),
        ));
    }
    csv::Reader::from_reader(body.as_bytes())
        .deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::format(what, format!("row {}: {e}", i + 1)))
        })
        .collect()
}

/// Looks up a metadata value by key.
pub fn meta<'a>(metadata: &'a [(String, String)], key: &str) -> Option<&'a str> {
    metadata
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
}
