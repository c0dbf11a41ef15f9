use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::element::{Element, NUM_ATOM_TYPES};
use super::MolError;

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Contribution to valence arithmetic; aromatic bonds count 1.5.
    pub fn value(self) -> f64 {
        match self {
            BondOrder::Single => 1.0,
            BondOrder::Double => 2.0,
            BondOrder::Triple => 3.0,
            BondOrder::Aromatic => 1.5,
        }
    }

    /// The V2000 bond-type code.
    pub fn sdf_code(self) -> u8 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }

    pub fn from_sdf_code(code: u8) -> Option<BondOrder> {
        match code {
            1 => Some(BondOrder::Single),
            2 => Some(BondOrder::Double),
            3 => Some(BondOrder::Triple),
            4 => Some(BondOrder::Aromatic),
            _ => None,
        }
    }

    /// Small integer label used by hashing and pattern matching.
    pub fn code(self) -> u8 {
        self.sdf_code()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub element: Element,
    pub coord: Vec3,
}

impl Atom {
    pub fn new(element: Element, coord: Vec3) -> Self {
        Atom { element, coord }
    }

    pub fn type_index(&self) -> usize {
        self.element.type_index()
    }

    pub fn type_one_hot(&self) -> [f64; NUM_ATOM_TYPES] {
        let mut v = [0.0; NUM_ATOM_TYPES];
        v[self.type_index()] = 1.0;
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bond {
    pub i: usize,
    pub j: usize,
    pub order: BondOrder,
}

impl Bond {
    pub fn new(i: usize, j: usize, order: BondOrder) -> Self {
        Bond { i, j, order }
    }

    pub fn other(&self, atom: usize) -> usize {
        if self.i == atom {
            self.j
        } else {
            self.i
        }
    }
}

/// A ligand: atoms with 3D coordinates (Å) and a bond list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MolecularGraph {
    pub name: String,
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    /// SDF data items carried through parsing and emission.
    #[serde(default)]
    pub properties: BTreeMap<String, String>,
}

impl MolecularGraph {
    /// Builds a graph, checking endpoint validity, duplicate bonds and
    /// coordinate finiteness.
    pub fn new(name: impl Into<String>, atoms: Vec<Atom>, bonds: Vec<Bond>) -> Result<Self, MolError> {
        let n = atoms.len();
        let mut seen = HashSet::with_capacity(bonds.len());
        for b in &bonds {
            if b.i >= n || b.j >= n {
                return Err(MolError::BondIndexOutOfRange { i: b.i, j: b.j, atoms: n });
            }
            if b.i == b.j {
                return Err(MolError::SelfBond(b.i));
            }
            if !seen.insert((b.i.min(b.j), b.i.max(b.j))) {
                return Err(MolError::DuplicateBond(b.i, b.j));
            }
        }
        for (idx, a) in atoms.iter().enumerate() {
            if a.coord.iter().any(|c| !c.is_finite()) {
                return Err(MolError::NonFiniteCoordinate(idx));
            }
        }
        Ok(MolecularGraph { name: name.into(), atoms, bonds, properties: BTreeMap::new() })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn coords(&self) -> Vec<Vec3> {
        self.atoms.iter().map(|a| a.coord).collect()
    }

    /// Replaces coordinates, keeping topology.
    pub fn with_coords(&self, coords: &[Vec3]) -> Result<Self, MolError> {
        assert_eq!(coords.len(), self.atoms.len());
        let atoms = self
            .atoms
            .iter()
            .zip(coords)
            .map(|(a, &c)| Atom::new(a.element, c))
            .collect();
        let mut g = MolecularGraph::new(self.name.clone(), atoms, self.bonds.clone())?;
        g.properties = self.properties.clone();
        Ok(g)
    }

    /// Per-atom neighbor lists `(neighbor, bond order)`.
    pub fn adjacency(&self) -> Vec<Vec<(usize, BondOrder)>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for b in &self.bonds {
            adj[b.i].push((b.j, b.order));
            adj[b.j].push((b.i, b.order));
        }
        adj
    }

    /// Sum of bond-order values per atom.
    pub fn bond_order_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.atoms.len()];
        for b in &self.bonds {
            sums[b.i] += b.order.value();
            sums[b.j] += b.order.value();
        }
        sums
    }

    /// Connected components as sorted atom index lists.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let adj = self.adjacency();
        let mut seen = vec![false; self.atoms.len()];
        let mut out = Vec::new();
        for start in 0..self.atoms.len() {
            if seen[start] {
                continue;
            }
            let mut stack = vec![start];
            let mut comp = Vec::new();
            seen[start] = true;
            while let Some(u) = stack.pop() {
                comp.push(u);
                for &(v, _) in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// The induced subgraph on `members` (atom order follows `members`).
    pub fn subgraph(&self, members: &[usize]) -> MolecularGraph {
        let mut remap = vec![usize::MAX; self.atoms.len()];
        for (new, &old) in members.iter().enumerate() {
            remap[old] = new;
        }
        let atoms = members.iter().map(|&i| self.atoms[i].clone()).collect();
        let bonds = self
            .bonds
            .iter()
            .filter(|b| remap[b.i] != usize::MAX && remap[b.j] != usize::MAX)
            .map(|b| Bond::new(remap[b.i], remap[b.j], b.order))
            .collect();
        MolecularGraph { name: self.name.clone(), atoms, bonds, properties: BTreeMap::new() }
    }

    /// Copy with hydrogens removed.
    pub fn heavy_atoms(&self) -> MolecularGraph {
        let keep: Vec<usize> = (0..self.atoms.len())
            .filter(|&i| !self.atoms[i].element.is_hydrogen())
            .collect();
        let mut g = self.subgraph(&keep);
        g.properties = self.properties.clone();
        g
    }

    /// Heavy-atom centroid (falls back to all atoms when there are no heavy atoms).
    pub fn centroid(&self) -> Vec3 {
        let heavy: Vec<&Atom> = self.atoms.iter().filter(|a| !a.element.is_hydrogen()).collect();
        let pts: Vec<Vec3> = if heavy.is_empty() {
            self.coords()
        } else {
            heavy.iter().map(|a| a.coord).collect()
        };
        mean(&pts)
    }
}

pub(crate) fn mean(points: &[Vec3]) -> Vec3 {
    let mut c = [0.0; 3];
    if points.is_empty() {
        return c;
    }
    for p in points {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    let n = points.len() as f64;
    [c[0] / n, c[1] / n, c[2] / n]
}

pub(crate) fn dist(a: &Vec3, b: &Vec3) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Number of pocket features: element alphabet one-hot plus 20 amino acids + other.
pub const POCKET_FEATURES: usize = NUM_ATOM_TYPES + 21;

pub const AMINO_ACIDS: [&str; 20] = [
    "ALA", "ARG", "ASN", "ASP", "CYS", "GLN", "GLU", "GLY", "HIS", "ILE", "LEU", "LYS", "MET",
    "PHE", "PRO", "SER", "THR", "TRP", "TYR", "VAL",
];

/// Residue one-hot index: position in [`AMINO_ACIDS`], 20 for anything else.
pub fn residue_index(name: &str) -> usize {
    AMINO_ACIDS.iter().position(|r| r.eq_ignore_ascii_case(name.trim())).unwrap_or(20)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PocketAtom {
    pub element: Element,
    pub residue: String,
    pub coord: Vec3,
}

impl PocketAtom {
    pub fn features(&self) -> [f64; POCKET_FEATURES] {
        let mut v = [0.0; POCKET_FEATURES];
        v[self.element.type_index()] = 1.0;
        v[NUM_ATOM_TYPES + residue_index(&self.residue)] = 1.0;
        v
    }
}

/// Protein atoms near a binding site: the pocket `R` plus the rest of the
/// chain kept as context `P`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PocketCloud {
    pub atoms: Vec<PocketAtom>,
    /// Residue label per pocket atom, e.g. `"ALA A 23"`.
    pub residue_labels: Vec<String>,
    pub center: Vec3,
    pub radius: f64,
    #[serde(default)]
    pub context: Vec<PocketAtom>,
}

impl PocketCloud {
    pub fn new(atoms: Vec<PocketAtom>, residue_labels: Vec<String>, radius: f64, context: Vec<PocketAtom>) -> Result<Self, MolError> {
        if atoms.is_empty() {
            return Err(MolError::EmptyPocket);
        }
        let center = mean(&atoms.iter().map(|a| a.coord).collect::<Vec<_>>());
        Ok(PocketCloud { atoms, residue_labels, center, radius, context })
    }

    pub fn coords(&self) -> Vec<Vec3> {
        self.atoms.iter().map(|a| a.coord).collect()
    }

    /// Rigid motion `x -> R x + t` applied to every atom and the center.
    pub fn transformed(&self, rot: &[[f64; 3]; 3], shift: &Vec3) -> PocketCloud {
        let f = |a: &PocketAtom| PocketAtom { coord: apply(rot, shift, &a.coord), ..a.clone() };
        PocketCloud {
            atoms: self.atoms.iter().map(f).collect(),
            residue_labels: self.residue_labels.clone(),
            center: apply(rot, shift, &self.center),
            radius: self.radius,
            context: self.context.iter().map(f).collect(),
        }
    }
}

pub(crate) fn apply(rot: &[[f64; 3]; 3], shift: &Vec3, p: &Vec3) -> Vec3 {
    let mut out = *shift;
    for r in 0..3 {
        for c in 0..3 {
            out[r] += rot[r][c] * p[c];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn atom(sym: &str) -> Atom {
        Atom::new(Element::from_symbol(sym).unwrap(), [0.0; 3])
    }

    #[test]
    fn rejects_bad_bonds() {
        let atoms = vec![atom("C"), atom("C")];
        assert!(matches!(
            MolecularGraph::new("x", atoms.clone(), vec![Bond::new(0, 2, BondOrder::Single)]),
            Err(MolError::BondIndexOutOfRange { .. })
        ));
        assert!(matches!(
            MolecularGraph::new(
                "x",
                atoms.clone(),
                vec![Bond::new(0, 1, BondOrder::Single), Bond::new(1, 0, BondOrder::Double)]
            ),
            Err(MolError::DuplicateBond(..))
        ));
        assert!(matches!(
            MolecularGraph::new("x", atoms, vec![Bond::new(1, 1, BondOrder::Single)]),
            Err(MolError::SelfBond(1))
        ));
    }

    #[test]
    fn rejects_non_finite_coordinates() {
        let atoms = vec![Atom::new(Element::C, [f64::NAN, 0.0, 0.0])];
        assert!(matches!(MolecularGraph::new("x", atoms, vec![]), Err(MolError::NonFiniteCoordinate(0))));
    }

    #[test]
    fn pocket_center_is_mean() {
        let atoms: Vec<PocketAtom> = [[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [1.0, 3.0, -3.0]]
            .iter()
            .map(|&c| PocketAtom { element: Element::C, residue: "ALA".into(), coord: c })
            .collect();
        let p = PocketCloud::new(atoms, vec!["ALA A 1".into(); 3], 10.0, vec![]).unwrap();
        let expected = [1.0, 1.0, -1.0];
        for k in 0..3 {
            assert!((p.center[k] - expected[k]).abs() < 1e-9);
        }
        assert!(matches!(PocketCloud::new(vec![], vec![], 1.0, vec![]), Err(MolError::EmptyPocket)));
    }

    #[test]
    fn residue_one_hot_has_single_bit() {
        let a = PocketAtom { element: Element::N, residue: "GLY".into(), coord: [0.0; 3] };
        let f = a.features();
        assert_eq!(f[NUM_ATOM_TYPES..].iter().filter(|&&x| x == 1.0).count(), 1);
        assert_eq!(f[..NUM_ATOM_TYPES].iter().filter(|&&x| x == 1.0).count(), 1);
    }
}
