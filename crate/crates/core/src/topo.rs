//! Vietoris–Rips persistent homology (H0 and H1) and fixed-length
//! topological fingerprints.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::molio::{dist, Vec3};

/// Largest point cloud accepted by [`rips_persistence`].
pub const MAX_POINTS: usize = 1000;
/// Statistics per homology dimension in a fingerprint.
pub const STATS_PER_DIM: usize = 4;
pub const FINGERPRINT_LEN: usize = 2 * STATS_PER_DIM;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopoError {
    #[error("{0} points exceed the limit of {MAX_POINTS}")]
    TooManyPoints(usize),
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("max filtration must be positive and finite, got {0}")]
    BadFiltration(f64),
    #[error("homology dimension {0} not supported (0 or 1)")]
    Dimension(usize),
    #[error("entropy undefined: no finite bar with positive persistence")]
    EntropyUndefined,
    #[error("normalization singular: total persistence is 1")]
    NormalizationSingular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub birth: f64,
    pub death: f64,
    /// Never killed within the filtration; `death` is the truncation value.
    pub essential: bool,
}

impl Bar {
    pub fn persistence(&self) -> f64 {
        self.death - self.birth
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistenceDiagram {
    /// `dims[l]` holds the bars of homology dimension `l`.
    pub dims: Vec<Vec<Bar>>,
    pub max_filtration: f64,
}

impl PersistenceDiagram {
    pub fn bars(&self, dim: usize) -> &[Bar] {
        self.dims.get(dim).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn finite_bars(&self, dim: usize) -> impl Iterator<Item = &Bar> {
        self.bars(dim).iter().filter(|b| !b.essential)
    }

    /// `dim,birth,death` rows, one per bar.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dim,birth,death\n");
        for (dim, bars) in self.dims.iter().enumerate() {
            for b in bars {
                let _ = writeln!(out, "{dim},{},{}", b.birth, b.death);
            }
        }
        out
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra.max(rb)] = ra.min(rb);
        true
    }
}

/// Adds `col` into `acc` over Z2. Both are sorted ascending.
fn xor_into(acc: &mut Vec<usize>, col: &[usize]) {
    let mut out = Vec::with_capacity(acc.len() + col.len());
    let (mut a, mut b) = (0, 0);
    while a < acc.len() && b < col.len() {
        match acc[a].cmp(&col[b]) {
            std::cmp::Ordering::Less => {
                out.push(acc[a]);
                a += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(col[b]);
                b += 1;
            }
            std::cmp::Ordering::Equal => {
                a += 1;
                b += 1;
            }
        }
    }
    out.extend_from_slice(&acc[a..]);
    out.extend_from_slice(&col[b..]);
    *acc = out;
}

/// Persistence of the Rips filtration on Euclidean distance, truncated at
/// `max_filtration`. H0 uses union-find; H1 reduces the triangle boundary
/// columns over Z2. Essential classes die at `max_filtration`; zero-length
/// H1 bars are dropped while H0 always reports one bar per point.
pub fn rips_persistence(points: &[Vec3], max_filtration: f64, max_dim: usize) -> Result<PersistenceDiagram, TopoError> {
    let n = points.len();
    if n > MAX_POINTS {
        return Err(TopoError::TooManyPoints(n));
    }
    if n == 0 {
        return Err(TopoError::TooFewPoints { need: 1, got: 0 });
    }
    if !(max_filtration > 0.0 && max_filtration.is_finite()) {
        return Err(TopoError::BadFiltration(max_filtration));
    }
    if max_dim > 1 {
        return Err(TopoError::Dimension(max_dim));
    }

    let mut edges: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let d = dist(&points[i], &points[j]);
            if d <= max_filtration {
                edges.push((d, i, j));
            }
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut uf = UnionFind::new(n);
    let mut h0 = Vec::with_capacity(n);
    let mut positive = vec![false; edges.len()];
    for (k, &(d, i, j)) in edges.iter().enumerate() {
        if uf.union(i, j) {
            h0.push(Bar { birth: 0.0, death: d, essential: false });
        } else {
            positive[k] = true;
        }
    }
    let essential0 = n - h0.len();
    h0.extend((0..essential0).map(|_| Bar { birth: 0.0, death: max_filtration, essential: true }));
    let mut dims = vec![h0];
    if max_dim == 0 {
        return Ok(PersistenceDiagram { dims, max_filtration });
    }

    let n_positive = positive.iter().filter(|&&p| p).count();
    let mut h1 = Vec::new();
    if n_positive > 0 {
        let mut edge_index = vec![usize::MAX; n * n];
        for (k, &(_, i, j)) in edges.iter().enumerate() {
            edge_index[i * n + j] = k;
        }
        // Triangles as ascending edge-index triples; filtration is the
        // largest edge, so ordering by the largest index sorts by value.
        let mut tris: Vec<[usize; 3]> = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let ij = edge_index[i * n + j];
                if ij == usize::MAX {
                    continue;
                }
                for k in j + 1..n {
                    let (ik, jk) = (edge_index[i * n + k], edge_index[j * n + k]);
                    if ik != usize::MAX && jk != usize::MAX {
                        let mut t = [ij, ik, jk];
                        t.sort_unstable();
                        tris.push(t);
                    }
                }
            }
        }
        tris.sort_unstable_by_key(|t| (t[2], t[1], t[0]));

        let mut pivot_col: Vec<Option<Vec<usize>>> = vec![None; edges.len()];
        let mut paired = 0;
        for t in &tris {
            let mut col = t.to_vec();
            while let Some(&low) = col.last() {
                match &pivot_col[low] {
                    Some(other) => xor_into(&mut col, other),
                    None => break,
                }
            }
            if let Some(&low) = col.last() {
                let death = edges[t[2]].0;
                let birth = edges[low].0;
                if death > birth {
                    h1.push(Bar { birth, death, essential: false });
                }
                pivot_col[low] = Some(col);
                paired += 1;
                if paired == n_positive {
                    break;
                }
            }
        }
        for (k, p) in positive.iter().enumerate() {
            if *p && pivot_col[k].is_none() && edges[k].0 < max_filtration {
                h1.push(Bar { birth: edges[k].0, death: max_filtration, essential: true });
            }
        }
    }
    dims.push(h1);
    Ok(PersistenceDiagram { dims, max_filtration })
}

/// Shannon entropy (base 2) of the finite-bar persistence distribution of
/// dimension `dim`, and that entropy divided by log2 of the total persistence.
pub fn persistence_entropy(diagram: &PersistenceDiagram, dim: usize) -> Result<(f64, f64), TopoError> {
    let pers: Vec<f64> = diagram.finite_bars(dim).map(Bar::persistence).collect();
    entropy_of(&pers)
}

fn entropy_of(pers: &[f64]) -> Result<(f64, f64), TopoError> {
    let total: f64 = pers.iter().sum();
    if total <= 0.0 {
        return Err(TopoError::EntropyUndefined);
    }
    let e: f64 = pers
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| {
            let q = p / total;
            -q * q.log2()
        })
        .sum();
    let norm = total.log2();
    if norm == 0.0 {
        return Err(TopoError::NormalizationSingular);
    }
    Ok((e, e / norm))
}

/// Per dimension: `[normalized entropy, total persistence, max persistence,
/// finite-bar count]`, H0 block then H1 block.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TopoFingerprint(pub [f64; FINGERPRINT_LEN]);

impl TopoFingerprint {
    pub fn zeros() -> Self {
        TopoFingerprint([0.0; FINGERPRINT_LEN])
    }

    pub fn block(&self, dim: usize) -> &[f64] {
        &self.0[dim * STATS_PER_DIM..(dim + 1) * STATS_PER_DIM]
    }
}

/// Fingerprint with the filtration running to the point-set diameter.
pub fn fingerprint(points: &[Vec3]) -> Result<TopoFingerprint, TopoError> {
    let diameter = diameter(points);
    fingerprint_with(points, diameter.max(f64::MIN_POSITIVE))
}

/// Fingerprint with an explicit filtration cap.
pub fn fingerprint_with(points: &[Vec3], max_filtration: f64) -> Result<TopoFingerprint, TopoError> {
    if points.len() < 2 {
        return Err(TopoError::TooFewPoints { need: 2, got: points.len() });
    }
    Ok(fingerprint_of(&rips_persistence(points, max_filtration, 1)?))
}

pub fn fingerprint_of(diagram: &PersistenceDiagram) -> TopoFingerprint {
    let mut out = [0.0; FINGERPRINT_LEN];
    for dim in 0..2 {
        let pers: Vec<f64> = diagram.finite_bars(dim).map(Bar::persistence).collect();
        let block = &mut out[dim * STATS_PER_DIM..(dim + 1) * STATS_PER_DIM];
        block[0] = entropy_of(&pers).map(|(_, en)| en).unwrap_or(0.0);
        block[1] = pers.iter().sum();
        block[2] = pers.iter().copied().fold(0.0, f64::max);
        block[3] = pers.len() as f64;
    }
    TopoFingerprint(out)
}

pub fn diameter(points: &[Vec3]) -> f64 {
    let mut d: f64 = 0.0;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            d = d.max(dist(&points[i], &points[j]));
        }
    }
    d
}
