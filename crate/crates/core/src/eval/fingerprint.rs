use serde::{Deserialize, Serialize};

use crate::molio::{combine, hash_str, mix, MolecularGraph};
use crate::motif::ring_bonds;

pub const FINGERPRINT_BITS: usize = 2048;
const WORDS: usize = FINGERPRINT_BITS / 64;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitFingerprint(Vec<u64>);

impl Default for BitFingerprint {
    fn default() -> Self {
        BitFingerprint(vec![0; WORDS])
    }
}

impl BitFingerprint {
    pub fn from_bits(bits: impl IntoIterator<Item = usize>) -> Self {
        let mut fp = Self::default();
        for b in bits {
            fp.set(b);
        }
        fp
    }

    pub fn set(&mut self, bit: usize) {
        let b = bit % FINGERPRINT_BITS;
        self.0[b / 64] |= 1 << (b % 64);
    }

    pub fn get(&self, bit: usize) -> bool {
        self.0[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn count(&self) -> u32 {
        self.0.iter().map(|w| w.count_ones()).sum()
    }
}

/// `|a & b| / |a | b|`, 1 when both are empty.
pub fn tanimoto(a: &BitFingerprint, b: &BitFingerprint) -> f64 {
    let (mut inter, mut union) = (0u32, 0u32);
    for (x, y) in a.0.iter().zip(&b.0) {
        inter += (x & y).count_ones();
        union += (x | y).count_ones();
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Circular fingerprint: atom identifiers from element, degree, bond-order
/// sum and ring membership, refined twice over sorted (bond, neighbor)
/// lists. Every identifier seen at radius 0, 1 and 2 sets one bit.
pub fn circular_fingerprint(mol: &MolecularGraph) -> BitFingerprint {
    let adj = mol.adjacency();
    let rings = ring_bonds(mol);
    let mut in_ring = vec![false; mol.len()];
    for (b, &r) in mol.bonds().iter().zip(&rings) {
        if r {
            in_ring[b.i] = true;
            in_ring[b.j] = true;
        }
    }
    let sums = mol.bond_order_sums();
    let mut ids: Vec<u64> = mol
        .atoms()
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let h = combine(hash_str(a.element.symbol()), adj[i].len() as u64);
            combine(combine(h, (sums[i] * 2.0).round() as u64), in_ring[i] as u64)
        })
        .collect();
    let mut fp = BitFingerprint::default();
    for radius in 0..=2 {
        for &id in &ids {
            fp.set(mix(id) as usize);
        }
        if radius == 2 {
            break;
        }
        ids = (0..mol.len())
            .map(|i| {
                let mut env: Vec<(u64, u64)> = adj[i].iter().map(|&(j, o)| (o.code() as u64, ids[j])).collect();
                env.sort_unstable();
                env.iter().fold(combine(ids[i], radius as u64 + 1), |h, &(o, n)| combine(combine(h, o), n))
            })
            .collect();
    }
    fp
}
