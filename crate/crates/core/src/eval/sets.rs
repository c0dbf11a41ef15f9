use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::fingerprint::{circular_fingerprint, tanimoto, BitFingerprint};
use crate::molio::{canonical_hash, check_validity, MolecularGraph};

/// Ring systems plus the linkers between them: atoms of degree at most one
/// are removed until none remain. Acyclic molecules strip to nothing.
pub fn scaffold(mol: &MolecularGraph) -> MolecularGraph {
    let n = mol.len();
    let adj = mol.adjacency();
    let mut alive = vec![true; n];
    let mut degree: Vec<usize> = adj.iter().map(|a| a.len()).collect();
    let mut stack: Vec<usize> = (0..n).filter(|&i| degree[i] <= 1).collect();
    while let Some(i) = stack.pop() {
        if !alive[i] {
            continue;
        }
        alive[i] = false;
        for &(j, _) in &adj[i] {
            if alive[j] {
                degree[j] -= 1;
                if degree[j] <= 1 {
                    stack.push(j);
                }
            }
        }
    }
    let keep: Vec<usize> = (0..n).filter(|&i| alive[i]).collect();
    mol.subgraph(&keep)
}

pub fn scaffold_hash(mol: &MolecularGraph) -> u64 {
    canonical_hash(&scaffold(mol))
}

/// Scaffold digests of a reference set, for novelty checks.
pub fn reference_hashes(mols: &[MolecularGraph]) -> HashSet<u64> {
    mols.iter().map(scaffold_hash).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SetMetrics {
    pub validity: Option<f64>,
    pub uniqueness: Option<f64>,
    pub diversity: Option<f64>,
    pub novelty: Option<f64>,
    pub n_generated: usize,
    pub n_valid: usize,
    pub n_unique: usize,
    pub n_scaffolds: usize,
}

/// Mergeable per-shard state: the union of two shards' accumulators gives
/// exactly the metrics of the concatenated set.
#[derive(Debug, Clone, Default)]
pub struct SetAccumulator {
    n_generated: usize,
    n_valid: usize,
    /// Valid molecules by canonical digest.
    unique: BTreeMap<u64, BitFingerprint>,
    scaffolds: BTreeSet<u64>,
}

impl SetAccumulator {
    pub fn add(&mut self, mol: &MolecularGraph) {
        self.n_generated += 1;
        if !check_validity(mol).valid {
            return;
        }
        self.n_valid += 1;
        let h = canonical_hash(mol);
        if !self.unique.contains_key(&h) {
            self.unique.insert(h, circular_fingerprint(mol));
            self.scaffolds.insert(scaffold_hash(mol));
        }
    }

    pub fn merge(&mut self, other: SetAccumulator) {
        self.n_generated += other.n_generated;
        self.n_valid += other.n_valid;
        self.unique.extend(other.unique);
        self.scaffolds.extend(other.scaffolds);
    }

    pub fn finish(&self, train: &HashSet<u64>, test: &HashSet<u64>) -> SetMetrics {
        let mut m = SetMetrics {
            n_generated: self.n_generated,
            n_valid: self.n_valid,
            n_unique: self.unique.len(),
            n_scaffolds: self.scaffolds.len(),
            ..SetMetrics::default()
        };
        if self.n_generated == 0 {
            return m;
        }
        m.validity = Some(self.n_valid as f64 / self.n_generated as f64);
        if self.n_valid == 0 {
            return m;
        }
        m.uniqueness = Some(self.unique.len() as f64 / self.n_valid as f64);
        let fps: Vec<&BitFingerprint> = self.unique.values().collect();
        let mut sum = 0.0;
        let mut pairs = 0usize;
        for i in 0..fps.len() {
            for j in i + 1..fps.len() {
                sum += 1.0 - tanimoto(fps[i], fps[j]);
                pairs += 1;
            }
        }
        m.diversity = Some(if pairs == 0 { 0.0 } else { sum / pairs as f64 });
        let novel = self.scaffolds.iter().filter(|h| !train.contains(h) && !test.contains(h)).count();
        m.novelty = Some(novel as f64 / self.scaffolds.len() as f64);
        m
    }
}

pub fn set_metrics(generated: &[MolecularGraph], train: &HashSet<u64>, test: &HashSet<u64>) -> SetMetrics {
    let mut acc = SetAccumulator::default();
    for m in generated {
        acc.add(m);
    }
    acc.finish(train, test)
}
