//! Molecular data model, file I/O, bond perception and validity checking.

mod bonds;
mod element;
mod graph;
mod hash;
mod pdb;
mod sdf;
mod validity;

use thiserror::Error;

pub use bonds::{infer_bonds, BOND_TOLERANCE, DOUBLE_BOND_RATIO, TRIPLE_BOND_RATIO};
pub use element::{Element, ValenceTable, NUM_ATOM_TYPES, OTHER_TYPE};
pub use graph::{
    residue_index, Atom, Bond, BondOrder, MolecularGraph, PocketAtom, PocketCloud, Vec3, AMINO_ACIDS,
    POCKET_FEATURES,
};
pub use hash::canonical_hash;
pub use pdb::{parse_pdb_atoms, parse_pocket_pdb, PdbAtom, PdbError};
pub use sdf::{emit_sdf, parse_sdf, write_record, SdfError, SdfErrorKind};
pub use validity::{check_validity, ValidityReport, Violation, MIN_ATOM_DISTANCE};

pub(crate) use graph::{apply, dist, mean};
pub(crate) use hash::{combine, hash_str, mix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MolError {
    #[error("bond index out of range: {i}-{j} with {atoms} atoms")]
    BondIndexOutOfRange { i: usize, j: usize, atoms: usize },
    #[error("bond from atom {0} to itself")]
    SelfBond(usize),
    #[error("duplicate bond {0}-{1}")]
    DuplicateBond(usize, usize),
    #[error("non-finite coordinate on atom {0}")]
    NonFiniteCoordinate(usize),
    #[error("empty pocket: no protein atom within the cutoff")]
    EmptyPocket,
}

/// Reorders atoms so that new atom `k` is old atom `order[k]`.
pub fn permute(mol: &MolecularGraph, order: &[usize]) -> MolecularGraph {
    assert_eq!(order.len(), mol.len());
    let mut inverse = vec![0; order.len()];
    for (new, &old) in order.iter().enumerate() {
        inverse[old] = new;
    }
    let atoms = order.iter().map(|&o| mol.atoms()[o].clone()).collect();
    let bonds = mol
        .bonds()
        .iter()
        .map(|b| Bond::new(inverse[b.i], inverse[b.j], b.order))
        .collect();
    let mut out = MolecularGraph::new(mol.name.clone(), atoms, bonds).expect("permutation preserves validity");
    out.properties = mol.properties.clone();
    out
}

/// Rebuilds a molecule from sampled element/coordinate arrays using
/// distance-based bond perception.
pub fn molecule_from_cloud(name: &str, elements: &[Element], coords: &[Vec3]) -> Result<MolecularGraph, MolError> {
    let atoms = elements.iter().zip(coords).map(|(&e, &c)| Atom::new(e, c)).collect();
    MolecularGraph::new(name, atoms, infer_bonds(coords, elements))
}

#[cfg(test)]
pub(crate) fn sdf_tests_methane() -> &'static str {
    sdf::tests::METHANE
}
