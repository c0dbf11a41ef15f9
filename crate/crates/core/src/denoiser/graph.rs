use ndarray::Array2;

use super::{feature_dim, DenoiserError, EDGE_TYPES, NODE_KINDS};
use crate::molio::{dist, Vec3, NUM_ATOM_TYPES, POCKET_FEATURES};
use crate::topo::{TopoFingerprint, FINGERPRINT_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeKind {
    LigandAtom = 0,
    Motif = 1,
    PocketAtom = 2,
    ProteinAtom = 3,
}

impl NodeKind {
    pub fn is_condition(self) -> bool {
        matches!(self, NodeKind::PocketAtom | NodeKind::ProteinAtom)
    }
}

/// Cross-view edge types: ligand atom receiving from its motif, and back.
pub const ATOM_FROM_MOTIF: usize = 16;
pub const MOTIF_FROM_ATOM: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    /// Receiving node.
    pub dst: usize,
    /// Sending node.
    pub src: usize,
    pub etype: usize,
}

#[derive(Debug, Clone)]
pub struct LigandNodes {
    pub coords: Vec<Vec3>,
    /// Atom type class per atom, `< NUM_ATOM_TYPES`.
    pub types: Vec<usize>,
    pub fingerprint: TopoFingerprint,
}

#[derive(Debug, Clone)]
pub struct MotifNodes {
    pub coords: Vec<Vec3>,
    /// Motif class per motif, `<= W` (`W` is out of vocabulary).
    pub classes: Vec<usize>,
    /// Motif index of every ligand atom.
    pub membership: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct PocketNodes {
    pub coords: Vec<Vec3>,
    pub features: Vec<[f64; POCKET_FEATURES]>,
    /// Protein atoms outside the pocket that still join the graph.
    pub context_coords: Vec<Vec3>,
    pub context_features: Vec<[f64; POCKET_FEATURES]>,
    pub fingerprint: TopoFingerprint,
    /// Fixed point the anchor term pulls against (the pocket center).
    pub anchor: Vec3,
}

/// Node order: ligand atoms, motifs, pocket atoms, protein context atoms.
/// Edges are grouped by receiver; within a receiver they are ordered by
/// length, then sender kind, then sender index.
#[derive(Debug, Clone)]
pub struct HeteroGraph {
    pub kinds: Vec<NodeKind>,
    pub coords: Vec<Vec3>,
    pub mutable: Vec<bool>,
    /// Input features, `N x feature_dim(W)`.
    pub features: Array2<f64>,
    pub edges: Vec<Edge>,
    pub k: usize,
    /// `k` was reduced to `N - 1`.
    pub k_clamped: bool,
    pub anchor: Vec3,
    pub n_ligand: usize,
    pub n_motif: usize,
    pub vocab_size: usize,
}

impl HeteroGraph {
    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn n_mutable(&self) -> usize {
        self.n_ligand + self.n_motif
    }

    /// Senders of every edge into `node`, in aggregation order.
    pub fn neighbors(&self, node: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.dst == node).map(|e| e.src).collect()
    }
}

fn fp_features(fp: &TopoFingerprint) -> [f64; FINGERPRINT_LEN] {
    let mut out = [0.0; FINGERPRINT_LEN];
    for (o, v) in out.iter_mut().zip(fp.0.iter()) {
        *o = v.asinh();
    }
    out
}

/// Builds the k-nearest-neighbor graph plus unconditional cross-view edges
/// between each ligand atom and its motif. Ties in distance go to the lower
/// node index; a cross-view edge replaces a coinciding k-NN edge.
pub fn build_graph(
    ligand: &LigandNodes,
    motifs: &MotifNodes,
    pocket: &PocketNodes,
    vocab_size: usize,
    k: usize,
) -> Result<HeteroGraph, DenoiserError> {
    if k == 0 {
        return Err(DenoiserError::ZeroK);
    }
    let (na, nm) = (ligand.coords.len(), motifs.coords.len());
    if ligand.types.len() != na || motifs.membership.len() != na || motifs.classes.len() != nm {
        return Err(DenoiserError::Input("ligand/motif array lengths disagree".into()));
    }
    if pocket.features.len() != pocket.coords.len() || pocket.context_features.len() != pocket.context_coords.len() {
        return Err(DenoiserError::Input("pocket array lengths disagree".into()));
    }
    if let Some(&m) = motifs.membership.iter().find(|&&m| m >= nm) {
        return Err(DenoiserError::Input(format!("atom assigned to missing motif {m}")));
    }
    if let Some(&t) = ligand.types.iter().find(|&&t| t >= NUM_ATOM_TYPES) {
        return Err(DenoiserError::Input(format!("atom type {t} out of range")));
    }
    if let Some(&c) = motifs.classes.iter().find(|&&c| c > vocab_size) {
        return Err(DenoiserError::Input(format!("motif class {c} out of range")));
    }

    let mut kinds = vec![NodeKind::LigandAtom; na];
    kinds.extend(std::iter::repeat_n(NodeKind::Motif, nm));
    kinds.extend(std::iter::repeat_n(NodeKind::PocketAtom, pocket.coords.len()));
    kinds.extend(std::iter::repeat_n(NodeKind::ProteinAtom, pocket.context_coords.len()));
    let coords: Vec<Vec3> = ligand
        .coords
        .iter()
        .chain(&motifs.coords)
        .chain(&pocket.coords)
        .chain(&pocket.context_coords)
        .copied()
        .collect();
    let n = coords.len();
    if n < 2 {
        return Err(DenoiserError::TooFewNodes(n));
    }
    if coords.iter().flatten().any(|v| !v.is_finite()) {
        return Err(DenoiserError::Input("non-finite coordinate".into()));
    }

    let fdim = feature_dim(vocab_size);
    let off_type = NODE_KINDS;
    let off_motif = off_type + NUM_ATOM_TYPES;
    let off_pocket = off_motif + vocab_size + 1;
    let off_fp = off_pocket + POCKET_FEATURES;
    let mut features = Array2::zeros((n, fdim));
    let lig_fp = fp_features(&ligand.fingerprint);
    let pocket_fp = fp_features(&pocket.fingerprint);
    for (i, kind) in kinds.iter().enumerate() {
        let mut row = features.row_mut(i);
        row[*kind as usize] = 1.0;
        let fp = match kind {
            NodeKind::LigandAtom => {
                row[off_type + ligand.types[i]] = 1.0;
                &lig_fp
            }
            NodeKind::Motif => {
                row[off_motif + motifs.classes[i - na]] = 1.0;
                &lig_fp
            }
            NodeKind::PocketAtom | NodeKind::ProteinAtom => {
                let p = i - na - nm;
                let f = if p < pocket.features.len() {
                    &pocket.features[p]
                } else {
                    &pocket.context_features[p - pocket.features.len()]
                };
                for (c, v) in f.iter().enumerate() {
                    row[off_pocket + c] = *v;
                }
                &pocket_fp
            }
        };
        for (c, v) in fp.iter().enumerate() {
            row[off_fp + c] = *v;
        }
    }

    let k_eff = k.min(n - 1);
    // (dst, src) -> etype, with cross-view types overriding.
    let mut incoming: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        order.clear();
        order.extend((0..n).filter(|&j| j != i));
        let d: Vec<f64> = (0..n).map(|j| dist(&coords[i], &coords[j])).collect();
        order.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
        for &j in &order[..k_eff] {
            incoming[i].push((j, NODE_KINDS * kinds[i] as usize + kinds[j] as usize));
        }
    }
    for (atom, &m) in motifs.membership.iter().enumerate() {
        let motif = na + m;
        for (dst, src, etype) in [(atom, motif, ATOM_FROM_MOTIF), (motif, atom, MOTIF_FROM_ATOM)] {
            match incoming[dst].iter_mut().find(|(s, _)| *s == src) {
                Some(slot) => slot.1 = etype,
                None => incoming[dst].push((src, etype)),
            }
        }
    }
    let mut edges = Vec::new();
    for (dst, list) in incoming.iter_mut().enumerate() {
        list.sort_by(|a, b| {
            dist(&coords[dst], &coords[a.0])
                .total_cmp(&dist(&coords[dst], &coords[b.0]))
                .then(kinds[a.0].cmp(&kinds[b.0]))
                .then(a.0.cmp(&b.0))
        });
        edges.extend(list.iter().map(|&(src, etype)| Edge { dst, src, etype }));
    }
    debug_assert!(edges.iter().all(|e| e.etype < EDGE_TYPES));

    Ok(HeteroGraph {
        mutable: kinds.iter().map(|k| !k.is_condition()).collect(),
        kinds,
        coords,
        features,
        edges,
        k: k_eff,
        k_clamped: k_eff < k,
        anchor: pocket.anchor,
        n_ligand: na,
        n_motif: nm,
        vocab_size,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn empty_pocket() -> PocketNodes {
        PocketNodes {
            coords: vec![],
            features: vec![],
            context_coords: vec![],
            context_features: vec![],
            fingerprint: TopoFingerprint::zeros(),
            anchor: [0.0; 3],
        }
    }

    fn ligand(coords: Vec<Vec3>) -> LigandNodes {
        LigandNodes { types: vec![0; coords.len()], coords, fingerprint: TopoFingerprint::zeros() }
    }

    #[test]
    fn one_nearest_neighbor() {
        let lig = ligand(vec![[0.0; 3], [1.0, 0.0, 0.0], [5.0, 0.0, 0.0]]);
        let motifs = MotifNodes { coords: vec![[100.0, 0.0, 0.0]], classes: vec![0], membership: vec![0, 0, 0] };
        let g = build_graph(&lig, &motifs, &empty_pocket(), 0, 1).unwrap();
        let knn: Vec<(usize, usize)> =
            g.edges.iter().filter(|e| e.etype < 16).map(|e| (e.dst, e.src)).collect();
        assert_eq!(knn, vec![(0, 1), (1, 0), (2, 1)]);
    }

    #[test]
    fn cross_view_edges_always_present() {
        let lig = ligand(vec![[0.0; 3], [1.0, 0.0, 0.0]]);
        let motifs = MotifNodes { coords: vec![[40.0, 0.0, 0.0]], classes: vec![0], membership: vec![0, 0] };
        let g = build_graph(&lig, &motifs, &empty_pocket(), 0, 1).unwrap();
        assert!(g.edges.contains(&Edge { dst: 2, src: 0, etype: MOTIF_FROM_ATOM }));
        assert!(g.edges.contains(&Edge { dst: 2, src: 1, etype: MOTIF_FROM_ATOM }));
        assert!(g.edges.contains(&Edge { dst: 0, src: 2, etype: ATOM_FROM_MOTIF }));
    }

    #[test]
    fn tie_goes_to_lower_index() {
        let lig = ligand(vec![[0.0; 3], [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]);
        let m = MotifNodes { coords: vec![[50.0, 0.0, 0.0]], classes: vec![0], membership: vec![0, 0, 0] };
        let g = build_graph(&lig, &m, &empty_pocket(), 0, 1).unwrap();
        let first = g.edges.iter().find(|e| e.dst == 0).unwrap();
        assert_eq!(first.src, 1);
    }

    #[test]
    fn k_clamped_and_guards() {
        let lig = ligand(vec![[0.0; 3], [1.0, 0.0, 0.0]]);
        let missing = MotifNodes { coords: vec![], classes: vec![], membership: vec![0, 0] };
        let g = build_graph(&lig, &missing, &empty_pocket(), 0, 5);
        assert!(g.is_err(), "membership points at a missing motif");
        let m = MotifNodes { coords: vec![[3.0, 0.0, 0.0]], classes: vec![0], membership: vec![0, 0] };
        let g = build_graph(&lig, &m, &empty_pocket(), 0, 5).unwrap();
        assert_eq!(g.k, 2);
        assert!(g.k_clamped);
        assert!(build_graph(&lig, &m, &empty_pocket(), 0, 0).is_err());
        let one = ligand(vec![[0.0; 3]]);
        let m1 = MotifNodes { coords: vec![], classes: vec![], membership: vec![0] };
        assert!(build_graph(&one, &m1, &empty_pocket(), 0, 1).is_err());
    }

    #[test]
    fn pocket_nodes_are_immutable() {
        let lig = ligand(vec![[0.0; 3]]);
        let m = MotifNodes { coords: vec![[0.1, 0.0, 0.0]], classes: vec![0], membership: vec![0] };
        let mut p = empty_pocket();
        p.coords = vec![[3.0, 0.0, 0.0]];
        p.features = vec![[0.0; POCKET_FEATURES]];
        let g = build_graph(&lig, &m, &p, 0, 2).unwrap();
        assert_eq!(g.mutable, vec![true, true, false]);
        assert_eq!(g.kinds[2], NodeKind::PocketAtom);
    }
}
