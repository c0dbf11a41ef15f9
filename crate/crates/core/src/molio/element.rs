//! Periodic-table data used by parsing, bond perception, validity and
//! property calculations.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Static per-element data.
struct ElementData {
    symbol: &'static str,
    mass: f64,
    /// Single-bond covalent radius in Å.
    radius: f64,
    /// Allowed total bond-order sums, ascending.
    valences: &'static [u8],
}

// Covalent radii from Cordero et al., "Covalent radii revisited",
// Dalton Trans. 2008, 2832-2838 (sp3 carbon, low-spin metals).
// Masses are IUPAC standard atomic weights rounded to 3 decimals.
const TABLE: &[ElementData] = &[
    ElementData { symbol: "H", mass: 1.008, radius: 0.31, valences: &[1] },
    ElementData { symbol: "Li", mass: 6.94, radius: 1.28, valences: &[1] },
    ElementData { symbol: "B", mass: 10.81, radius: 0.84, valences: &[3] },
    ElementData { symbol: "C", mass: 12.011, radius: 0.76, valences: &[4] },
    ElementData { symbol: "N", mass: 14.007, radius: 0.71, valences: &[3] },
    ElementData { symbol: "O", mass: 15.999, radius: 0.66, valences: &[2] },
    ElementData { symbol: "F", mass: 18.998, radius: 0.57, valences: &[1] },
    ElementData { symbol: "Na", mass: 22.990, radius: 1.66, valences: &[1] },
    ElementData { symbol: "Mg", mass: 24.305, radius: 1.41, valences: &[2] },
    ElementData { symbol: "Al", mass: 26.982, radius: 1.21, valences: &[3] },
    ElementData { symbol: "Si", mass: 28.085, radius: 1.11, valences: &[4] },
    ElementData { symbol: "P", mass: 30.974, radius: 1.07, valences: &[3, 5] },
    ElementData { symbol: "S", mass: 32.06, radius: 1.05, valences: &[2, 4, 6] },
    ElementData { symbol: "Cl", mass: 35.45, radius: 1.02, valences: &[1] },
    ElementData { symbol: "K", mass: 39.098, radius: 2.03, valences: &[1] },
    ElementData { symbol: "Ca", mass: 40.078, radius: 1.76, valences: &[2] },
    ElementData { symbol: "Mn", mass: 54.938, radius: 1.39, valences: &[2, 3, 4, 6] },
    ElementData { symbol: "Fe", mass: 55.845, radius: 1.32, valences: &[2, 3, 6] },
    ElementData { symbol: "Co", mass: 58.933, radius: 1.26, valences: &[2, 3, 6] },
    ElementData { symbol: "Ni", mass: 58.693, radius: 1.24, valences: &[2, 3, 6] },
    ElementData { symbol: "Cu", mass: 63.546, radius: 1.32, valences: &[1, 2, 4] },
    ElementData { symbol: "Zn", mass: 65.38, radius: 1.22, valences: &[2, 4] },
    ElementData { symbol: "As", mass: 74.922, radius: 1.19, valences: &[3, 5] },
    ElementData { symbol: "Se", mass: 78.971, radius: 1.20, valences: &[2, 4, 6] },
    ElementData { symbol: "Br", mass: 79.904, radius: 1.20, valences: &[1] },
    ElementData { symbol: "I", mass: 126.904, radius: 1.39, valences: &[1] },
    ElementData { symbol: "Hg", mass: 200.592, radius: 1.32, valences: &[2] },
    // Placeholder emitted for the "other" atom type; has no valence rule.
    ElementData { symbol: "*", mass: 0.0, radius: 0.76, valences: &[] },
];

/// Size of the one-hot atom-type alphabet `{C,N,O,F,P,S,Cl,Br,I,other}`.
pub const NUM_ATOM_TYPES: usize = 10;

const TYPE_SYMBOLS: [&str; NUM_ATOM_TYPES - 1] = ["C", "N", "O", "F", "P", "S", "Cl", "Br", "I"];

/// Index of the catch-all type in the atom-type alphabet.
pub const OTHER_TYPE: usize = NUM_ATOM_TYPES - 1;

/// A chemical element drawn from the supported table.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Element(u8);

impl Element {
    pub const H: Element = Element(0);
    pub const C: Element = Element(3);
    pub const N: Element = Element(4);
    pub const O: Element = Element(5);
    pub const S: Element = Element(12);

    /// Case-insensitive lookup of an element symbol.
    pub fn from_symbol(symbol: &str) -> Option<Element> {
        let symbol = symbol.trim();
        TABLE
            .iter()
            .position(|e| e.symbol.eq_ignore_ascii_case(symbol))
            .map(|i| Element(i as u8))
    }

    /// The element decoded for an atom-type index; the "other" slot maps to `*`.
    pub fn from_type_index(index: usize) -> Element {
        match TYPE_SYMBOLS.get(index) {
            Some(sym) => Element::from_symbol(sym).expect("alphabet symbol in table"),
            None => Element::from_symbol("*").expect("placeholder in table"),
        }
    }

    pub fn symbol(self) -> &'static str {
        TABLE[self.0 as usize].symbol
    }

    pub fn mass(self) -> f64 {
        TABLE[self.0 as usize].mass
    }

    pub fn covalent_radius(self) -> f64 {
        TABLE[self.0 as usize].radius
    }

    /// Allowed total bond-order sums; empty for the placeholder element.
    pub fn valences(self) -> &'static [u8] {
        TABLE[self.0 as usize].valences
    }

    pub fn max_valence(self) -> Option<u8> {
        self.valences().last().copied()
    }

    pub fn is_hydrogen(self) -> bool {
        self == Element::H
    }

    /// Position in the atom-type alphabet.
    pub fn type_index(self) -> usize {
        TYPE_SYMBOLS
            .iter()
            .position(|s| *s == self.symbol())
            .unwrap_or(OTHER_TYPE)
    }
}

impl fmt::Debug for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl Serialize for Element {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.symbol())
    }
}

impl<'de> Deserialize<'de> for Element {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let sym = String::deserialize(d)?;
        Element::from_symbol(&sym)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown element {sym:?}")))
    }
}

/// The valence rules used by validity checking, keyed by element.
pub struct ValenceTable;

impl ValenceTable {
    pub fn allowed(element: Element) -> &'static [u8] {
        element.valences()
    }

    /// Every element in the table, for coverage checks.
    pub fn elements() -> impl Iterator<Item = Element> {
        (0..TABLE.len()).map(|i| Element(i as u8))
    }
}
