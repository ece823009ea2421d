//! Artifact writers: CSV and JSON with deterministic float formatting.
//!
//! Every float is printed with Rust's shortest round-trip representation
//! (`format!("{v}")`), so identical configs and seeds produce byte-identical
//! files and `parse::<f64>()` recovers the exact bits.

use std::fmt::Write as _;
use std::path::Path;

use crate::CliError;

/// Shortest decimal that parses back to exactly `v`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Writes a CSV file with the given header and rows, creating parent
/// directories as needed.
pub fn write_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut text = String::with_capacity(rows.len() * 32 + header.len() + 1);
    text.push_str(header);
    text.push('\n');
    for row in rows {
        let mut first = true;
        for cell in row {
            if !first {
                text.push(',');
            }
            first = false;
            text.push_str(cell);
        }
        text.push('\n');
    }
    write_text(path, &text)
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Numerical(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| {
                CliError::Numerical(format!("cannot create {}: {e}", dir.display()))
            })?;
        }
    }
    std::fs::write(path, text)
        .map_err(|e| CliError::Numerical(format!("cannot write {}: {e}", path.display())))
}

/// Renders a float table as an aligned text block for stdout (reports, not
/// artifacts — artifacts use `write_csv`).
pub fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            if i < widths.len() {
                widths[i] = widths[i].max(cell.len());
            }
        }
    }
    let mut out = String::new();
    for (i, h) in header.iter().enumerate() {
        if i > 0 {
            out.push_str("  ");
        }
        let _ = write!(out, "{h:>w$}", w = widths[i]);
    }
    out.push('\n');
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            let _ = write!(out, "{cell:>w$}", w = widths[i]);
        }
        out.push('\n');
    }
    out
}
