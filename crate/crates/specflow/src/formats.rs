//! Line-oriented text formats.
//!
//! * SMILES corpus: `<smiles>` or `<smiles>\t<id>`; `#` lines and blank lines skipped.
//! * Fingerprint dump: `<id>\t<hex>`, bit `k` at byte `k / 8`, bit `k % 8`.
//! * Pairing file: `<spectrum id>\t<smiles>\t<formula>`.
//! * Candidate file: `<spectrum id>\t<trajectory index>\t<canonical smiles>`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use specflow_core::fingerprint::Fingerprint;
use specflow_core::molgraph::{formula_of, parse_smiles, write_canonical, Formula, MolecularGraph};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{file}:{line}: {message}")]
    Line { file: String, line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl FormatError {
    fn at(file: &str, line: usize, message: impl Into<String>) -> Self {
        FormatError::Line {
            file: file.to_string(),
            line,
            message: message.into(),
        }
    }
}

pub fn read_text(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), FormatError> {
    fs::write(path, text).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Non-comment, non-blank lines with their 1-based line numbers.
fn records(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub id: String,
    pub smiles: String,
    pub graph: MolecularGraph,
}

/// Parse a SMILES corpus. Records without an id get `mol<k>` (1-based record index).
pub fn parse_corpus(text: &str, file: &str) -> Result<Vec<CorpusEntry>, FormatError> {
    let mut out = Vec::new();
    for (line, rec) in records(text) {
        let mut fields = rec.split('\t');
        let smiles = fields.next().unwrap_or("").trim();
        let id = match fields.next() {
            Some(id) if !id.trim().is_empty() => id.trim().to_string(),
            _ => format!("mol{}", out.len() + 1),
        };
        let graph = parse_smiles(smiles).map_err(|e| FormatError::at(file, line, format!("`{smiles}`: {e}")))?;
        out.push(CorpusEntry {
            id,
            smiles: smiles.to_string(),
            graph,
        });
    }
    Ok(out)
}

pub fn write_fingerprint_dump(entries: &[(String, Fingerprint)]) -> String {
    let mut out = String::new();
    for (id, fp) in entries {
        writeln!(out, "{id}\t{}", hex::encode(fp.to_bytes())).expect("string write");
    }
    out
}

pub fn parse_fingerprint_dump(text: &str, nbits: usize, file: &str) -> Result<Vec<(String, Fingerprint)>, FormatError> {
    records(text)
        .map(|(line, rec)| {
            let (id, hexed) = rec
                .split_once('\t')
                .ok_or_else(|| FormatError::at(file, line, "expected `<id>\\t<hex>`"))?;
            let bytes = hex::decode(hexed.trim()).map_err(|e| FormatError::at(file, line, e.to_string()))?;
            let fp = Fingerprint::from_bytes(nbits, &bytes).map_err(|e| FormatError::at(file, line, e.to_string()))?;
            Ok((id.to_string(), fp))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairingEntry {
    pub id: String,
    pub smiles: String,
    pub graph: MolecularGraph,
    pub formula: Formula,
}

/// Parse a pairing file; the formula's heavy atoms must match the structure.
pub fn parse_pairing(text: &str, file: &str) -> Result<Vec<PairingEntry>, FormatError> {
    records(text)
        .map(|(line, rec)| {
            let fields: Vec<&str> = rec.split('\t').map(str::trim).collect();
            let [id, smiles, formula] = fields[..] else {
                return Err(FormatError::at(file, line, "expected `<id>\\t<smiles>\\t<formula>`"));
            };
            let graph = parse_smiles(smiles).map_err(|e| FormatError::at(file, line, format!("`{smiles}`: {e}")))?;
            let formula = Formula::parse(formula).map_err(|e| FormatError::at(file, line, format!("`{formula}`: {e}")))?;
            if !formula.same_heavy_atoms(&formula_of(&graph)) {
                return Err(FormatError::at(
                    file,
                    line,
                    format!("formula {formula} does not match structure {}", formula_of(&graph)),
                ));
            }
            Ok(PairingEntry {
                id: id.to_string(),
                smiles: smiles.to_string(),
                graph,
                formula,
            })
        })
        .collect()
}

pub fn write_pairing(entries: &[PairingEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        writeln!(out, "{}\t{}\t{}", e.id, e.smiles, e.formula).expect("string write");
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateLine {
    pub id: String,
    pub trajectory: usize,
    pub smiles: String,
}

pub fn write_candidates(lines: &[CandidateLine]) -> String {
    let mut out = String::new();
    for c in lines {
        writeln!(out, "{}\t{}\t{}", c.id, c.trajectory, c.smiles).expect("string write");
    }
    out
}

pub fn candidate_line(id: &str, trajectory: usize, g: &MolecularGraph) -> CandidateLine {
    CandidateLine {
        id: id.to_string(),
        trajectory,
        smiles: write_canonical(g),
    }
}

pub fn parse_candidates(text: &str, file: &str) -> Result<Vec<CandidateLine>, FormatError> {
    records(text)
        .map(|(line, rec)| {
            let fields: Vec<&str> = rec.split('\t').collect();
            let [id, traj, smiles] = fields[..] else {
                return Err(FormatError::at(file, line, "expected `<id>\\t<trajectory>\\t<smiles>`"));
            };
            let trajectory = traj
                .trim()
                .parse()
                .map_err(|_| FormatError::at(file, line, format!("bad trajectory index `{traj}`")))?;
            Ok(CandidateLine {
                id: id.to_string(),
                trajectory,
                smiles: smiles.trim().to_string(),
            })
        })
        .collect()
}
