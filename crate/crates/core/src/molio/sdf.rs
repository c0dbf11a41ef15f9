//! MDL MOL/SDF V2000 reader and writer.
//!
//! Column layout (1-based):
//! - counts line: atoms 1-3, bonds 4-6, version tag 35-39
//! - atom line: x 1-10, y 11-20, z 21-30, symbol 32-34
//! - bond line: first atom 1-3, second atom 4-6, type 7-9

use std::fmt::Write as _;

use thiserror::Error;

use super::element::Element;
use super::graph::{Atom, Bond, BondOrder, MolecularGraph};
use super::MolError;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("record {record}: {kind}")]
pub struct SdfError {
    pub record: usize,
    pub kind: SdfErrorKind,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SdfErrorKind {
    #[error("record truncated before {0}")]
    Truncated(&'static str),
    #[error("malformed counts line {0:?}")]
    MalformedCounts(String),
    #[error("V3000 records are not supported")]
    V3000,
    #[error("malformed atom line {line}: {text:?}")]
    MalformedAtom { line: usize, text: String },
    #[error("unknown element {0:?}")]
    UnknownElement(String),
    #[error("malformed bond line {line}: {text:?}")]
    MalformedBond { line: usize, text: String },
    #[error("bond index out of range: {i}-{j} with {atoms} atoms")]
    BondIndexOutOfRange { i: usize, j: usize, atoms: usize },
    #[error("unsupported bond type {0}")]
    BondType(u8),
    #[error("{0}")]
    Graph(#[from] MolError),
}

/// Fixed-width column slice; columns past the end of the line read as empty.
fn cols(line: &str, start: usize, end: usize) -> &str {
    let end = end.min(line.len());
    if start >= end {
        return "";
    }
    line.get(start..end).unwrap_or("")
}

/// Parses every record of an SDF/MOL text. Records are independent: a bad
/// record yields an error carrying its index and the rest are still returned.
pub fn parse_sdf(text: &str) -> Vec<Result<MolecularGraph, SdfError>> {
    let mut out = Vec::new();
    let mut lines: Vec<&str> = Vec::new();
    let mut index = 0;
    for line in text.lines() {
        let line = line.trim_end_matches('\r');
        if line.starts_with("$$$$") {
            out.push(parse_record(&lines).map_err(|kind| SdfError { record: index, kind }));
            index += 1;
            lines.clear();
        } else {
            lines.push(line);
        }
    }
    if lines.iter().any(|l| !l.trim().is_empty()) {
        out.push(parse_record(&lines).map_err(|kind| SdfError { record: index, kind }));
    }
    out
}

fn parse_record(lines: &[&str]) -> Result<MolecularGraph, SdfErrorKind> {
    if lines.len() < 4 {
        return Err(SdfErrorKind::Truncated("counts line"));
    }
    let name = lines[0].trim().to_string();
    let counts = lines[3];
    if counts.contains("V3000") {
        return Err(SdfErrorKind::V3000);
    }
    let malformed = || SdfErrorKind::MalformedCounts(counts.to_string());
    let n_atoms: usize = cols(counts, 0, 3).trim().parse().map_err(|_| malformed())?;
    let n_bonds: usize = cols(counts, 3, 6).trim().parse().map_err(|_| malformed())?;

    let mut atoms = Vec::with_capacity(n_atoms);
    for k in 0..n_atoms {
        let ln = 4 + k;
        let line = *lines.get(ln).ok_or(SdfErrorKind::Truncated("atom block"))?;
        let bad = || SdfErrorKind::MalformedAtom { line: ln + 1, text: line.to_string() };
        let mut coord = [0.0; 3];
        for (c, slot) in coord.iter_mut().enumerate() {
            *slot = cols(line, 10 * c, 10 * c + 10).trim().parse().map_err(|_| bad())?;
        }
        let sym = cols(line, 31, 34).trim();
        if sym.is_empty() {
            return Err(bad());
        }
        let element = Element::from_symbol(sym).ok_or_else(|| SdfErrorKind::UnknownElement(sym.to_string()))?;
        atoms.push(Atom::new(element, coord));
    }

    let mut bonds = Vec::with_capacity(n_bonds);
    for k in 0..n_bonds {
        let ln = 4 + n_atoms + k;
        let line = *lines.get(ln).ok_or(SdfErrorKind::Truncated("bond block"))?;
        let bad = || SdfErrorKind::MalformedBond { line: ln + 1, text: line.to_string() };
        let i: usize = cols(line, 0, 3).trim().parse().map_err(|_| bad())?;
        let j: usize = cols(line, 3, 6).trim().parse().map_err(|_| bad())?;
        let code: u8 = cols(line, 6, 9).trim().parse().map_err(|_| bad())?;
        if i == 0 || j == 0 || i > n_atoms || j > n_atoms {
            return Err(SdfErrorKind::BondIndexOutOfRange { i, j, atoms: n_atoms });
        }
        let order = BondOrder::from_sdf_code(code).ok_or(SdfErrorKind::BondType(code))?;
        bonds.push(Bond::new(i - 1, j - 1, order));
    }

    let mut mol = MolecularGraph::new(name, atoms, bonds)?;

    // Data items after "M  END": "> <key>" then value lines up to a blank line.
    let mut rest = lines[4 + n_atoms + n_bonds..].iter();
    let mut in_props = false;
    while let Some(line) = rest.next() {
        if line.starts_with("M  END") {
            in_props = true;
            continue;
        }
        if !in_props || !line.starts_with('>') {
            continue;
        }
        let Some(start) = line.find('<') else { continue };
        let Some(end) = line[start + 1..].find('>') else { continue };
        let key = line[start + 1..start + 1 + end].to_string();
        let mut value = Vec::new();
        for v in rest.by_ref() {
            if v.trim().is_empty() {
                break;
            }
            value.push(*v);
        }
        mol.properties.insert(key, value.join("\n"));
    }
    Ok(mol)
}

/// Writes one V2000 record including the trailing `$$$$`.
pub fn write_record(out: &mut String, mol: &MolecularGraph) {
    let name = mol.name.lines().next().unwrap_or("");
    let _ = writeln!(out, "{name}");
    let _ = writeln!(out, "  amdiff  3D");
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:>3}{:>3}  0  0  0  0  0  0  0  0999 V2000",
        mol.atoms().len(),
        mol.bonds().len()
    );
    for a in mol.atoms() {
        let _ = writeln!(
            out,
            "{:>10.4}{:>10.4}{:>10.4} {:<3} 0  0  0  0  0  0  0  0  0  0  0  0",
            a.coord[0],
            a.coord[1],
            a.coord[2],
            a.element.symbol()
        );
    }
    for b in mol.bonds() {
        let _ = writeln!(out, "{:>3}{:>3}{:>3}  0  0  0  0", b.i + 1, b.j + 1, b.order.sdf_code());
    }
    let _ = writeln!(out, "M  END");
    for (k, v) in &mol.properties {
        let _ = writeln!(out, "> <{k}>");
        let _ = writeln!(out, "{v}");
        let _ = writeln!(out);
    }
    let _ = writeln!(out, "$$$$");
}

/// Serializes molecules as a multi-record SDF.
pub fn emit_sdf<'a>(mols: impl IntoIterator<Item = &'a MolecularGraph>) -> String {
    let mut out = String::new();
    for m in mols {
        write_record(&mut out, m);
    }
    out
}
