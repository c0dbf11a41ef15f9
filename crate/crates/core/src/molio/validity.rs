use std::fmt;

use serde::{Deserialize, Serialize};

use super::graph::{dist, MolecularGraph};

/// Atoms closer than this are a clash.
pub const MIN_ATOM_DISTANCE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    Empty,
    Disconnected { components: usize },
    ValenceExceeded { atom: usize, element: String, valence: f64, max: u8 },
    NoValenceRule { atom: usize, element: String },
    Clash { i: usize, j: usize, distance: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "empty molecule"),
            Violation::Disconnected { components } => write!(f, "disconnected ({components} fragments)"),
            Violation::ValenceExceeded { element, valence, max, atom } => {
                write!(f, "valence {valence} > {max} for {element} (atom {atom})")
            }
            Violation::NoValenceRule { atom, element } => {
                write!(f, "no valence rule for {element} (atom {atom})")
            }
            Violation::Clash { i, j, distance } => {
                write!(f, "atoms {i} and {j} only {distance:.3} Å apart")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub valid: bool,
    pub violations: Vec<Violation>,
}

/// Connected, no atom over its maximum valence (missing valence is implicit
/// hydrogen), and no pair of atoms closer than 0.5 Å.
pub fn check_validity(mol: &MolecularGraph) -> ValidityReport {
    let mut violations = Vec::new();
    if mol.is_empty() {
        violations.push(Violation::Empty);
    }
    let comps = mol.components().len();
    if comps > 1 {
        violations.push(Violation::Disconnected { components: comps });
    }
    for (atom, (a, sum)) in mol.atoms().iter().zip(mol.bond_order_sums()).enumerate() {
        match a.element.max_valence() {
            Some(max) if sum > max as f64 + 1e-9 => violations.push(Violation::ValenceExceeded {
                atom,
                element: a.element.symbol().to_string(),
                valence: sum,
                max,
            }),
            Some(_) => {}
            None => violations.push(Violation::NoValenceRule { atom, element: a.element.symbol().to_string() }),
        }
    }
    let atoms = mol.atoms();
    for i in 0..atoms.len() {
        for j in i + 1..atoms.len() {
            let d = dist(&atoms[i].coord, &atoms[j].coord);
            if d < MIN_ATOM_DISTANCE {
                violations.push(Violation::Clash { i, j, distance: d });
            }
        }
    }
    ValidityReport { valid: violations.is_empty(), violations }
}
