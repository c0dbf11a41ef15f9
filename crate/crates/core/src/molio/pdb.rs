//! PDB ATOM record reader and pocket extraction.

use thiserror::Error;

use super::element::Element;
use super::graph::{dist, PocketAtom, PocketCloud, Vec3};
use super::MolError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PdbError {
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("no ATOM records")]
    NoAtoms,
    #[error("radius must be positive, got {0}")]
    Radius(f64),
    #[error(transparent)]
    Mol(#[from] MolError),
}

/// One parsed ATOM record.
#[derive(Debug, Clone, PartialEq)]
pub struct PdbAtom {
    pub name: String,
    pub residue: String,
    pub chain: String,
    pub seq: String,
    pub element: Element,
    pub coord: Vec3,
}

impl PdbAtom {
    pub fn label(&self) -> String {
        format!("{} {} {}", self.residue, self.chain, self.seq)
    }
}

fn field(line: &str, start: usize, end: usize) -> &str {
    let end = end.min(line.len());
    if start >= end {
        return "";
    }
    line.get(start..end).unwrap_or("").trim()
}

/// Reads heavy-atom ATOM records. HETATM records (waters, ligands, ions)
/// are not part of the protein and are skipped.
pub fn parse_pdb_atoms(text: &str) -> Result<Vec<PdbAtom>, PdbError> {
    let mut atoms = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if !line.starts_with("ATOM  ") && !line.starts_with("ATOM ") {
            continue;
        }
        let mut coord = [0.0; 3];
        for (k, slot) in coord.iter_mut().enumerate() {
            let s = field(line, 30 + 8 * k, 38 + 8 * k);
            *slot = s.parse().map_err(|_| PdbError::Line {
                line: ln + 1,
                msg: format!("unparseable coordinate {s:?}"),
            })?;
        }
        let name = field(line, 12, 16).to_string();
        let elem_col = field(line, 76, 78);
        let element = if elem_col.is_empty() {
            // Fall back to the atom name: first alphabetic character.
            name.chars()
                .find(|c| c.is_ascii_alphabetic())
                .and_then(|c| Element::from_symbol(&c.to_string()))
        } else {
            Element::from_symbol(elem_col)
        };
        let element = element.ok_or_else(|| PdbError::Line {
            line: ln + 1,
            msg: format!("unknown element {elem_col:?}"),
        })?;
        if element.is_hydrogen() {
            continue;
        }
        atoms.push(PdbAtom {
            name,
            residue: field(line, 17, 20).to_string(),
            chain: field(line, 21, 22).to_string(),
            seq: field(line, 22, 26).to_string(),
            element,
            coord,
        });
    }
    Ok(atoms)
}

/// Extracts the pocket: protein atoms within `radius` Å of `ligand_center`.
/// Atoms outside the ball are kept as context.
pub fn parse_pocket_pdb(text: &str, ligand_center: Vec3, radius: f64) -> Result<PocketCloud, PdbError> {
    if !(radius > 0.0) {
        return Err(PdbError::Radius(radius));
    }
    let atoms = parse_pdb_atoms(text)?;
    if atoms.is_empty() {
        return Err(PdbError::NoAtoms);
    }
    let mut pocket = Vec::new();
    let mut labels = Vec::new();
    let mut context = Vec::new();
    for a in atoms {
        let pa = PocketAtom { element: a.element, residue: a.residue.clone(), coord: a.coord };
        if dist(&a.coord, &ligand_center) <= radius {
            labels.push(a.label());
            pocket.push(pa);
        } else {
            context.push(pa);
        }
    }
    Ok(PocketCloud::new(pocket, labels, radius, context)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molio::graph::POCKET_FEATURES;
    use crate::molio::NUM_ATOM_TYPES;

    const TWO_RES: &str = "\
HEADER    TEST
ATOM      1  N   ALA A   1       1.000   0.000   0.000  1.00  0.00           N
ATOM      2  CA  ALA A   1       2.000   0.500   0.000  1.00  0.00           C
ATOM      3  OG  SER A   2       0.000   3.000   1.000  1.00  0.00           O
ATOM      4  H   SER A   2       0.000   3.500   1.000  1.00  0.00           H
HETATM    5  O   HOH A 101      20.000  20.000  20.000  1.00  0.00           O
END
";

    #[test]
    fn keeps_atoms_within_radius() {
        let p = parse_pocket_pdb(TWO_RES, [0.0; 3], 10.0).unwrap();
        assert_eq!(p.atoms.len(), 3);
        assert_eq!(p.residue_labels[0], "ALA A 1");
        assert!(p.context.is_empty());
    }

    #[test]
    fn tiny_radius_is_empty_pocket() {
        let err = parse_pocket_pdb(TWO_RES, [50.0, 0.0, 0.0], 0.001).unwrap_err();
        assert!(matches!(err, PdbError::Mol(MolError::EmptyPocket)));
    }

    #[test]
    fn no_atom_records() {
        assert_eq!(parse_pocket_pdb("HEADER\nEND\n", [0.0; 3], 5.0).unwrap_err(), PdbError::NoAtoms);
    }

    #[test]
    fn bad_coordinate_is_line_error() {
        let bad = TWO_RES.replace("   2.000   0.500", "   2.0x0   0.500");
        match parse_pocket_pdb(&bad, [0.0; 3], 10.0).unwrap_err() {
            PdbError::Line { line, .. } => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn residue_one_hot_per_atom() {
        let p = parse_pocket_pdb(TWO_RES, [0.0; 3], 10.0).unwrap();
        for a in &p.atoms {
            let f = a.features();
            assert_eq!(f.len(), POCKET_FEATURES);
            assert_eq!(f[NUM_ATOM_TYPES..].iter().filter(|&&x| x == 1.0).count(), 1);
        }
        assert_eq!(p.atoms[2].features()[NUM_ATOM_TYPES + 15], 1.0); // SER
    }
}
