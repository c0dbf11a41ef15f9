//! Distance-based bond perception.

use super::element::Element;
use super::graph::{dist, Bond, BondOrder, Vec3};

/// Slack added to the covalent-radius sum when deciding connectivity.
pub const BOND_TOLERANCE: f64 = 0.4;
/// Below this fraction of the radius sum a bond is a double-bond candidate.
pub const DOUBLE_BOND_RATIO: f64 = 0.87;
/// Below this fraction of the radius sum a bond is a triple-bond candidate.
pub const TRIPLE_BOND_RATIO: f64 = 0.80;

/// Perceives bonds from coordinates: `(i, j)` is bonded iff
/// `d(i,j) <= r_i + r_j + 0.4`. Bonds start single; a promotion pass
/// then raises short bonds to double/triple, shortest relative length
/// first, while both endpoints have valence to spare.
pub fn infer_bonds(coords: &[Vec3], elements: &[Element]) -> Vec<Bond> {
    assert_eq!(coords.len(), elements.len());
    let n = coords.len();
    let mut bonds = Vec::new();
    let mut ratios = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let d = dist(&coords[i], &coords[j]);
            let single = elements[i].covalent_radius() + elements[j].covalent_radius();
            if d <= single + BOND_TOLERANCE {
                bonds.push(Bond::new(i, j, BondOrder::Single));
                ratios.push(d / single);
            }
        }
    }

    let mut sums = vec![0.0f64; n];
    for b in &bonds {
        sums[b.i] += 1.0;
        sums[b.j] += 1.0;
    }
    let mut order: Vec<usize> = (0..bonds.len()).filter(|&k| ratios[k] < DOUBLE_BOND_RATIO).collect();
    order.sort_by(|&a, &b| ratios[a].total_cmp(&ratios[b]).then(a.cmp(&b)));
    let room = |sums: &[f64], atom: usize, extra: f64| match elements[atom].max_valence() {
        Some(max) => sums[atom] + extra <= max as f64,
        None => false,
    };
    for k in order {
        let (i, j) = (bonds[k].i, bonds[k].j);
        let extra = if ratios[k] < TRIPLE_BOND_RATIO && room(&sums, i, 2.0) && room(&sums, j, 2.0) {
            2.0
        } else if room(&sums, i, 1.0) && room(&sums, j, 1.0) {
            1.0
        } else {
            continue;
        };
        bonds[k].order = if extra == 2.0 { BondOrder::Triple } else { BondOrder::Double };
        sums[i] += extra;
        sums[j] += extra;
    }
    bonds
}
