//! Fragment decomposition, motif vocabulary and the motif-view representation.
//!
//! A molecule is cut into motifs as follows:
//! 1. every ring system (rings sharing at least one atom) is one motif;
//! 2. every acyclic bond between two non-ring atoms is cut when both sides
//!    of it hold at least two heavy atoms;
//! 3. what remains of the non-ring atoms splits into connected components,
//!    each one a motif.
//!
//! Bonds crossing the partition become inter-motif edges.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::molio::{self, canonical_hash, emit_sdf, parse_sdf, MolecularGraph, Vec3};

#[derive(Debug, Error)]
pub enum MotifError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("unsupported vocabulary version {0}")]
    Version(u32),
    #[error("vocabulary entry {index}: {msg}")]
    Entry { index: usize, msg: String },
    #[error("vocabulary JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MotifId {
    /// Not yet looked up in a vocabulary.
    Unassigned,
    Known(usize),
    OutOfVocab,
}

impl MotifId {
    /// Index into the `W + 1` motif classes; misses map to the reserved slot `W`.
    pub fn class_index(self, vocab_size: usize) -> usize {
        match self {
            MotifId::Known(w) => w,
            _ => vocab_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Motif {
    pub id: MotifId,
    pub digest: u64,
    pub centroid: Vec3,
    /// Sorted atom indices of the parent molecule.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotifView {
    pub motifs: Vec<Motif>,
    /// Motif index pairs `(a, b)` with `a < b`, one per crossing bond.
    pub edges: Vec<(usize, usize)>,
}

impl MotifView {
    /// Motif index of every atom.
    pub fn membership(&self, n_atoms: usize) -> Vec<usize> {
        let mut m = vec![usize::MAX; n_atoms];
        for (k, motif) in self.motifs.iter().enumerate() {
            for &a in &motif.members {
                m[a] = k;
            }
        }
        m
    }

    pub fn len(&self) -> usize {
        self.motifs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.motifs.is_empty()
    }
}

/// Marks bonds that lie on a cycle (non-bridges).
pub(crate) fn ring_bonds(mol: &MolecularGraph) -> Vec<bool> {
    let n = mol.len();
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (k, b) in mol.bonds().iter().enumerate() {
        adj[b.i].push((b.j, k));
        adj[b.j].push((b.i, k));
    }
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut bridge = vec![false; mol.bonds().len()];
    let mut timer = 0;
    for root in 0..n {
        if disc[root] != usize::MAX {
            continue;
        }
        // Iterative DFS: (node, parent bond, next neighbor cursor).
        let mut stack: Vec<(usize, usize, usize)> = vec![(root, usize::MAX, 0)];
        disc[root] = timer;
        low[root] = timer;
        timer += 1;
        while let Some(&mut (u, pbond, ref mut cursor)) = stack.last_mut() {
            if *cursor < adj[u].len() {
                let (v, bk) = adj[u][*cursor];
                *cursor += 1;
                if bk == pbond {
                    continue;
                }
                if disc[v] == usize::MAX {
                    disc[v] = timer;
                    low[v] = timer;
                    timer += 1;
                    stack.push((v, bk, 0));
                } else {
                    low[u] = low[u].min(disc[v]);
                }
            } else {
                stack.pop();
                if let Some(&(p, _, _)) = stack.last() {
                    low[p] = low[p].min(low[u]);
                    if low[u] > disc[p] {
                        bridge[pbond] = true;
                    }
                }
            }
        }
    }
    bridge.iter().map(|b| !b).collect()
}

/// Heavy atoms reachable from `start` without crossing bond `skip`.
fn heavy_side(mol: &MolecularGraph, adj: &[Vec<(usize, usize)>], start: usize, skip: usize) -> usize {
    let mut seen = vec![false; mol.len()];
    let mut stack = vec![start];
    seen[start] = true;
    let mut count = 0;
    while let Some(u) = stack.pop() {
        if !mol.atoms()[u].element.is_hydrogen() {
            count += 1;
        }
        for &(v, bk) in &adj[u] {
            if bk != skip && !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    count
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut c = x;
        while self.0[c] != r {
            let next = self.0[c];
            self.0[c] = r;
            c = next;
        }
        r
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Splits a molecule into motifs. Motifs are ordered by their smallest atom index.
pub fn decompose(mol: &MolecularGraph) -> MotifView {
    let n = mol.len();
    let in_ring_bond = ring_bonds(mol);
    let mut ring_atom = vec![false; n];
    for (b, &r) in mol.bonds().iter().zip(&in_ring_bond) {
        if r {
            ring_atom[b.i] = true;
            ring_atom[b.j] = true;
        }
    }
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (k, b) in mol.bonds().iter().enumerate() {
        adj[b.i].push((b.j, k));
        adj[b.j].push((b.i, k));
    }

    let mut uf = UnionFind::new(n);
    for (k, b) in mol.bonds().iter().enumerate() {
        let joined = if in_ring_bond[k] {
            true
        } else if ring_atom[b.i] || ring_atom[b.j] {
            // Hydrogens stay with their ring atom; anything heavier is its own motif.
            mol.atoms()[b.i].element.is_hydrogen() || mol.atoms()[b.j].element.is_hydrogen()
        } else {
            heavy_side(mol, &adj, b.i, k) < 2 || heavy_side(mol, &adj, b.j, k) < 2
        };
        if joined {
            uf.union(b.i, b.j);
        }
    }

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for a in 0..n {
        groups.entry(uf.find(a)).or_default().push(a);
    }
    let mut members: Vec<Vec<usize>> = groups.into_values().collect();
    members.sort_by_key(|m| m[0]);
    let mut owner = vec![0; n];
    for (k, m) in members.iter().enumerate() {
        for &a in m {
            owner[a] = k;
        }
    }
    let motifs = members
        .into_iter()
        .map(|m| {
            let frag = mol.subgraph(&m);
            Motif { id: MotifId::Unassigned, digest: canonical_hash(&frag), centroid: frag.centroid(), members: m }
        })
        .collect();
    let edges = mol
        .bonds()
        .iter()
        .filter(|b| owner[b.i] != owner[b.j])
        .map(|b| (owner[b.i].min(owner[b.j]), owner[b.i].max(owner[b.j])))
        .collect();
    MotifView { motifs, edges }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocabEntry {
    pub digest: u64,
    pub exemplar: MolecularGraph,
    pub frequency: usize,
}

/// Corpus-derived motif vocabulary; an entry's position is its motif ID.
#[derive(Debug, Clone, PartialEq)]
pub struct MotifVocabulary {
    entries: Vec<VocabEntry>,
    pub min_frequency: usize,
}

pub const VOCAB_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct VocabFile {
    version: u32,
    min_frequency: usize,
    entries: Vec<VocabFileEntry>,
}

#[derive(Serialize, Deserialize)]
struct VocabFileEntry {
    digest: String,
    exemplar: String,
    frequency: usize,
}

impl MotifVocabulary {
    pub fn empty() -> Self {
        MotifVocabulary { entries: Vec::new(), min_frequency: 1 }
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    /// Vocabulary size `W`.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of motif classes including the out-of-vocabulary slot.
    pub fn num_classes(&self) -> usize {
        self.entries.len() + 1
    }

    pub fn lookup(&self, digest: u64) -> Option<usize> {
        self.entries.iter().position(|e| e.digest == digest)
    }

    pub fn to_json(&self) -> String {
        let file = VocabFile {
            version: VOCAB_VERSION,
            min_frequency: self.min_frequency,
            entries: self
                .entries
                .iter()
                .map(|e| VocabFileEntry {
                    digest: format!("{:016x}", e.digest),
                    exemplar: emit_sdf([&e.exemplar]),
                    frequency: e.frequency,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, MotifError> {
        let file: VocabFile = serde_json::from_str(text)?;
        if file.version != VOCAB_VERSION {
            return Err(MotifError::Version(file.version));
        }
        let entries = file
            .entries
            .into_iter()
            .enumerate()
            .map(|(index, e)| {
                let err = |msg: String| MotifError::Entry { index, msg };
                let digest = u64::from_str_radix(&e.digest, 16).map_err(|x| err(x.to_string()))?;
                let exemplar = parse_sdf(&e.exemplar)
                    .into_iter()
                    .next()
                    .ok_or_else(|| err("missing exemplar".into()))?
                    .map_err(|x| err(x.to_string()))?;
                Ok(VocabEntry { digest, exemplar, frequency: e.frequency })
            })
            .collect::<Result<_, MotifError>>()?;
        Ok(MotifVocabulary { entries, min_frequency: file.min_frequency })
    }
}

/// Counts every fragment of every molecule and keeps those seen at least
/// `min_frequency` times, sorted by descending frequency then digest.
pub fn build_vocabulary(mols: &[MolecularGraph], min_frequency: usize) -> Result<MotifVocabulary, MotifError> {
    if mols.is_empty() {
        return Err(MotifError::EmptyCorpus);
    }
    // digest -> (count, smallest exemplar text, exemplar)
    let mut seen: BTreeMap<u64, (usize, String, MolecularGraph)> = BTreeMap::new();
    for mol in mols {
        let view = decompose(mol);
        for m in &view.motifs {
            let mut frag = mol.subgraph(&m.members);
            frag.name = format!("motif-{:016x}", m.digest);
            let text = emit_sdf([&frag]);
            seen.entry(m.digest)
                .and_modify(|(count, best, ex)| {
                    *count += 1;
                    if text < *best {
                        *best = text.clone();
                        *ex = frag.clone();
                    }
                })
                .or_insert_with(|| (1, text.clone(), frag.clone()));
        }
    }
    let mut entries: Vec<VocabEntry> = seen
        .into_iter()
        .filter(|(_, (c, _, _))| *c >= min_frequency)
        .map(|(digest, (frequency, _, exemplar))| VocabEntry { digest, exemplar, frequency })
        .collect();
    entries.sort_by(|a, b| b.frequency.cmp(&a.frequency).then(a.digest.cmp(&b.digest)));
    Ok(MotifVocabulary { entries, min_frequency })
}

/// Looks each motif up by digest; misses become [`MotifId::OutOfVocab`].
pub fn assign_ids(view: &MotifView, vocab: &MotifVocabulary) -> MotifView {
    let mut out = view.clone();
    for m in &mut out.motifs {
        m.id = match vocab.lookup(m.digest) {
            Some(w) => MotifId::Known(w),
            None => MotifId::OutOfVocab,
        };
    }
    out
}

/// Decomposes and assigns IDs in one step.
pub fn motif_view(mol: &MolecularGraph, vocab: &MotifVocabulary) -> MotifView {
    assign_ids(&decompose(mol), vocab)
}

/// Centroid of the listed atoms of `coords`.
pub fn centroid_of(coords: &[Vec3], members: &[usize]) -> Vec3 {
    let pts: Vec<Vec3> = members.iter().map(|&a| coords[a]).collect();
    molio::mean(&pts)
}
