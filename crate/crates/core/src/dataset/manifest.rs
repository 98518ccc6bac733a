//! Per-example manifest CSV: `id,tag,original_label,assigned_label,source_index`.
//!
//! Lines starting with `#` before the header carry run metadata.

use std::io::{BufRead, Write};

use serde::Deserialize;

use super::Tag;
use crate::error::{Error, Result};

pub const MANIFEST_HEADER: &str = "id,tag,original_label,assigned_label,source_index";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub struct ManifestRecord {
    pub id: usize,
    pub tag: Tag,
    pub original_label: usize,
    pub assigned_label: usize,
    pub source_index: usize,
}

/// Writes `# key=value` metadata lines, the header, then one row per record.
pub fn write_manifest(
    mut out: impl Write,
    metadata: &[(String, String)],
    records: &[ManifestRecord],
) -> std::io::Result<()> {
    for (k, v) in metadata {
        writeln!(out, "# {k}={v}")?;
    }
    writeln!(out, "{MANIFEST_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.id, r.tag, r.original_label, r.assigned_label, r.source_index
        )?;
    }
    Ok(())
}

/// Reads a manifest, returning its metadata lines and records.
pub fn read_manifest(input: impl BufRead) -> Result<(Vec<(String, String)>, Vec<ManifestRecord>)> {
    let (metadata, body) = crate::csvio::split_preamble(input)?;
    let records = crate::csvio::parse_rows::<ManifestRecord>(&body, MANIFEST_HEADER, "manifest")?;
    for (i, r) in records.iter().enumerate() {
        if r.id != i {
            return Err(Error::format(
                "manifest",
                format!("ids must run 0..N-1 in order; row {i} has id {}", r.id),
            ));
        }
    }
    Ok((metadata, records))
}
