//! Isomorphism-invariant molecular digests.

use super::graph::MolecularGraph;

/// 64-bit finalizer from splitmix64.
pub(crate) fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Order-sensitive combination of a running hash with one more word.
pub(crate) fn combine(h: u64, v: u64) -> u64 {
    mix(h ^ v.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2))
}

pub(crate) fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn count_classes(labels: &[u64]) -> usize {
    let mut v = labels.to_vec();
    v.sort_unstable();
    v.dedup();
    v.len()
}

/// Morgan-style refinement: atom labels start from (element, degree) and are
/// repeatedly rehashed with the sorted multiset of (bond order, neighbor
/// label) until the number of label classes stops growing. The digest hashes
/// the sorted final labels with the atom and bond counts.
pub fn canonical_hash(mol: &MolecularGraph) -> u64 {
    let adj = mol.adjacency();
    let mut labels: Vec<u64> = mol
        .atoms()
        .iter()
        .zip(&adj)
        .map(|(a, nb)| combine(hash_str(a.element.symbol()), nb.len() as u64))
        .collect();
    let mut classes = count_classes(&labels);
    loop {
        let next: Vec<u64> = (0..labels.len())
            .map(|i| {
                let mut env: Vec<(u8, u64)> = adj[i].iter().map(|&(j, o)| (o.code(), labels[j])).collect();
                env.sort_unstable();
                env.iter().fold(combine(labels[i], 0x5eed), |h, &(o, l)| combine(combine(h, o as u64), l))
            })
            .collect();
        let next_classes = count_classes(&next);
        labels = next;
        if next_classes <= classes {
            break;
        }
        classes = next_classes;
    }
    labels.sort_unstable();
    let seed = combine(mol.atoms().len() as u64, mol.bonds().len() as u64);
    labels.iter().fold(seed, |h, &l| combine(h, l))
}
