//! Reader and writer for a subset of the MGF peak-list format.
//!
//! Supported: `BEGIN IONS`, `TITLE=`, `PEPMASS=` (first token is the
//! precursor m/z), `<mz> <intensity>` peak lines and `END IONS`. Other
//! `KEY=VALUE` headers are ignored; blank lines and `#` comments are skipped
//! everywhere.

use std::fmt::Write as _;

use specflow_core::spectrum::Spectrum;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MgfError {
    #[error("line {line}: malformed block: {reason}")]
    MalformedBlock { line: usize, reason: String },
    #[error("line {line}: bad peak line `{text}`")]
    BadPeakLine { line: usize, text: String },
    #[error("block starting at line {line} has no PEPMASS")]
    MissingPrecursor { line: usize },
}

struct Block {
    start: usize,
    title: Option<String>,
    precursor: Option<f64>,
    peaks: Vec<(f64, f64)>,
}

pub fn parse_mgf(text: &str) -> Result<Vec<Spectrum>, MgfError> {
    let mut out = Vec::new();
    let mut block: Option<Block> = None;
    let mut last_line = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        last_line = line;
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        match (&mut block, l) {
            (None, "BEGIN IONS") => {
                block = Some(Block {
                    start: line,
                    title: None,
                    precursor: None,
                    peaks: Vec::new(),
                })
            }
            (None, _) => {
                return Err(MgfError::MalformedBlock {
                    line,
                    reason: format!("`{l}` outside BEGIN IONS/END IONS"),
                })
            }
            (Some(_), "BEGIN IONS") => {
                return Err(MgfError::MalformedBlock {
                    line,
                    reason: "BEGIN IONS before END IONS".into(),
                })
            }
            (Some(_), "END IONS") => {
                let b = block.take().expect("open block");
                out.push(finish(b)?);
            }
            (Some(b), _) => {
                if let Some((key, value)) = l.split_once('=') {
                    match key.trim().to_ascii_uppercase().as_str() {
                        "TITLE" => b.title = Some(value.trim().to_string()),
                        "PEPMASS" => {
                            let first = value.split_whitespace().next().unwrap_or("");
                            let mz = first.parse::<f64>().map_err(|_| MgfError::MalformedBlock {
                                line,
                                reason: format!("bad PEPMASS `{value}`"),
                            })?;
                            b.precursor = Some(mz);
                        }
                        _ => {}
                    }
                } else {
                    b.peaks.push(parse_peak(l, line)?);
                }
            }
        }
    }
    if let Some(b) = block {
        return Err(MgfError::MalformedBlock {
            line: last_line.max(b.start),
            reason: format!("block starting at line {} has no END IONS", b.start),
        });
    }
    Ok(out)
}

fn parse_peak(l: &str, line: usize) -> Result<(f64, f64), MgfError> {
    let bad = || MgfError::BadPeakLine {
        line,
        text: l.to_string(),
    };
    let mut it = l.split_whitespace();
    let mz = it.next().and_then(|x| x.parse::<f64>().ok()).ok_or_else(bad)?;
    let intensity = it.next().and_then(|x| x.parse::<f64>().ok()).ok_or_else(bad)?;
    if it.next().is_some() {
        return Err(bad());
    }
    Ok((mz, intensity))
}

fn finish(b: Block) -> Result<Spectrum, MgfError> {
    let precursor = b.precursor.ok_or(MgfError::MissingPrecursor { line: b.start })?;
    let title = b.title.ok_or_else(|| MgfError::MalformedBlock {
        line: b.start,
        reason: "missing TITLE".into(),
    })?;
    Spectrum::new(title, precursor, b.peaks).map_err(|e| MgfError::MalformedBlock {
        line: b.start,
        reason: e.to_string(),
    })
}

/// Numbers use Rust's shortest round-trip formatting, so reading back is exact.
pub fn serialize_mgf(spectra: &[Spectrum]) -> String {
    let mut out = String::new();
    for s in spectra {
        out.push_str("BEGIN IONS\n");
        writeln!(out, "TITLE={}", s.id).expect("string write");
        writeln!(out, "PEPMASS={:?}", s.precursor_mz).expect("string write");
        for (mz, i) in s.peaks() {
            writeln!(out, "{mz:?} {i:?}").expect("string write");
        }
        out.push_str("END IONS\n\n");
    }
    out
}
