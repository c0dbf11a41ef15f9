use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::molio::{BondOrder, Element, MolecularGraph, Vec3};

/// Bonded path pattern such as `CCC`, `CC=O` or `C:C:C:C`. A bond symbol
/// between two elements fixes the order (`-`, `=`, `#`, `:`); no symbol
/// accepts any order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathPattern {
    pub text: String,
    pub elements: Vec<Element>,
    pub bonds: Vec<Option<BondOrder>>,
}

impl PathPattern {
    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let bad = |m: &str| EvalError::Pattern(format!("{text:?}: {m}"));
        let chars: Vec<char> = text.chars().collect();
        let mut elements = Vec::new();
        let mut bonds = Vec::new();
        let mut pending: Option<BondOrder> = None;
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let order = match c {
                '-' => Some(BondOrder::Single),
                '=' => Some(BondOrder::Double),
                '#' => Some(BondOrder::Triple),
                ':' => Some(BondOrder::Aromatic),
                _ => None,
            };
            if let Some(o) = order {
                if elements.is_empty() || pending.is_some() {
                    return Err(bad("misplaced bond symbol"));
                }
                pending = Some(o);
                i += 1;
                continue;
            }
            if !c.is_ascii_uppercase() {
                return Err(bad("expected an element symbol"));
            }
            let mut sym = c.to_string();
            if let Some(&n) = chars.get(i + 1) {
                if n.is_ascii_lowercase() {
                    sym.push(n);
                    i += 1;
                }
            }
            let el = Element::from_symbol(&sym).ok_or_else(|| bad("unknown element"))?;
            if !elements.is_empty() {
                bonds.push(pending.take());
            }
            elements.push(el);
            i += 1;
        }
        if pending.is_some() {
            return Err(bad("trailing bond symbol"));
        }
        if !(3..=4).contains(&elements.len()) {
            return Err(bad("angle patterns have 3 atoms, dihedral patterns 4"));
        }
        Ok(PathPattern { text: text.to_string(), elements, bonds })
    }

    pub fn is_dihedral(&self) -> bool {
        self.elements.len() == 4
    }

    fn reversed(&self) -> PathPattern {
        PathPattern {
            text: self.text.clone(),
            elements: self.elements.iter().rev().copied().collect(),
            bonds: self.bonds.iter().rev().copied().collect(),
        }
    }

    /// Atom paths matching the pattern, each path reported once regardless
    /// of direction.
    pub fn matches(&self, mol: &MolecularGraph) -> Vec<Vec<usize>> {
        let adj = mol.adjacency();
        let mut found = BTreeSet::new();
        for pat in [self.clone(), self.reversed()] {
            let mut path = Vec::new();
            for start in 0..mol.len() {
                extend(mol, &adj, &pat, start, &mut path, &mut found);
            }
        }
        found.into_iter().collect()
    }
}

fn extend(
    mol: &MolecularGraph,
    adj: &[Vec<(usize, BondOrder)>],
    pat: &PathPattern,
    atom: usize,
    path: &mut Vec<usize>,
    found: &mut BTreeSet<Vec<usize>>,
) {
    if mol.atoms()[atom].element != pat.elements[path.len()] || path.contains(&atom) {
        return;
    }
    path.push(atom);
    if path.len() == pat.elements.len() {
        let rev: Vec<usize> = path.iter().rev().copied().collect();
        found.insert(if rev < *path { rev } else { path.clone() });
    } else {
        let want = pat.bonds[path.len() - 1];
        for &(next, order) in &adj[atom] {
            if want.is_none_or(|w| w == order) {
                extend(mol, adj, pat, next, path, found);
            }
        }
    }
    path.pop();
}

fn sub(a: &Vec3, b: &Vec3) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Angle at `b` in degrees.
pub fn bond_angle(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let (u, v) = (sub(a, b), sub(c, b));
    let cos = dot(&u, &v) / (dot(&u, &u).sqrt() * dot(&v, &v).sqrt());
    cos.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Signed torsion about `b-c` in degrees, in `[-180, 180]`.
pub fn dihedral_angle(a: &Vec3, b: &Vec3, c: &Vec3, d: &Vec3) -> f64 {
    let b0 = sub(a, b);
    let axis = sub(c, b);
    let len = dot(&axis, &axis).sqrt();
    let b1 = [axis[0] / len, axis[1] / len, axis[2] / len];
    let b2 = sub(d, c);
    let reject = |v: [f64; 3]| {
        let k = dot(&v, &b1);
        [v[0] - k * b1[0], v[1] - k * b1[1], v[2] - k * b1[2]]
    };
    let (v, w) = (reject(b0), reject(b2));
    dot(&cross(&b1, &v), &w).atan2(dot(&v, &w)).to_degrees()
}

/// Angle or dihedral value of every match in a molecule set.
pub fn pattern_values(pattern: &PathPattern, mols: &[MolecularGraph]) -> Vec<f64> {
    let mut out = Vec::new();
    for mol in mols {
        let atoms = mol.atoms();
        for p in pattern.matches(mol) {
            let x: Vec<&Vec3> = p.iter().map(|&i| &atoms[i].coord).collect();
            out.push(if pattern.is_dihedral() {
                dihedral_angle(x[0], x[1], x[2], x[3])
            } else {
                bond_angle(x[0], x[1], x[2])
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub angle_width: f64,
    pub dihedral_width: f64,
    pub smoothing: f64,
}

impl Default for BinSpec {
    fn default() -> Self {
        BinSpec { angle_width: 2.0, dihedral_width: 5.0, smoothing: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub width: f64,
    pub reference: Vec<usize>,
    pub generated: Vec<usize>,
}

impl Histogram {
    fn bins(lo: f64, hi: f64, width: f64) -> usize {
        ((hi - lo) / width).ceil() as usize
    }

    fn fill(values: &[f64], lo: f64, width: f64, n: usize) -> Vec<usize> {
        let mut counts = vec![0; n];
        for v in values {
            let k = (((v - lo) / width).floor().max(0.0) as usize).min(n - 1);
            counts[k] += 1;
        }
        counts
    }

    pub fn new(reference: &[f64], generated: &[f64], dihedral: bool, spec: &BinSpec) -> Self {
        let (lo, hi, width) = if dihedral { (-180.0, 180.0, spec.dihedral_width) } else { (0.0, 180.0, spec.angle_width) };
        let n = Self::bins(lo, hi, width);
        Histogram {
            lo,
            width,
            reference: Self::fill(reference, lo, width, n),
            generated: Self::fill(generated, lo, width, n),
        }
    }

    fn density(counts: &[usize], smoothing: f64) -> Vec<f64> {
        let total: f64 = counts.iter().map(|&c| c as f64 + smoothing).sum();
        counts.iter().map(|&c| (c as f64 + smoothing) / total).collect()
    }

    /// `KL(reference || generated)` over smoothed bin frequencies.
    pub fn kl(&self, smoothing: f64) -> f64 {
        let p = Self::density(&self.reference, smoothing);
        let q = Self::density(&self.generated, smoothing);
        p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum::<f64>().max(0.0)
    }

    /// Columns `bin_left,ref_density,gen_density`.
    pub fn to_csv(&self, smoothing: f64) -> String {
        let p = Self::density(&self.reference, smoothing);
        let q = Self::density(&self.generated, smoothing);
        let mut s = String::from("bin_left,ref_density,gen_density\n");
        for (k, (a, b)) in p.iter().zip(&q).enumerate() {
            s.push_str(&format!("{},{a},{b}\n", self.lo + k as f64 * self.width));
        }
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AngleKl {
    pub angles: BTreeMap<String, f64>,
    pub dihedrals: BTreeMap<String, f64>,
    /// Patterns skipped, with the reason.
    pub omitted: BTreeMap<String, String>,
    #[serde(skip)]
    pub histograms: BTreeMap<String, Histogram>,
}

/// Per-pattern KL between reference and generated angle distributions.
pub fn angle_kl(
    reference: &[MolecularGraph],
    generated: &[MolecularGraph],
    patterns: &[&str],
    spec: &BinSpec,
) -> Result<AngleKl, EvalError> {
    if reference.is_empty() || generated.is_empty() {
        return Err(EvalError::Empty("molecule set"));
    }
    let mut out = AngleKl::default();
    for text in patterns {
        let pattern = PathPattern::parse(text)?;
        let r = pattern_values(&pattern, reference);
        let g = pattern_values(&pattern, generated);
        if r.is_empty() || g.is_empty() {
            let side = if r.is_empty() { "reference" } else { "generated" };
            out.omitted.insert(text.to_string(), format!("no matches in {side} set"));
            continue;
        }
        let h = Histogram::new(&r, &g, pattern.is_dihedral(), spec);
        let kl = h.kl(spec.smoothing);
        let map = if pattern.is_dihedral() { &mut out.dihedrals } else { &mut out.angles };
        map.insert(text.to_string(), kl);
        out.histograms.insert(text.to_string(), h);
    }
    Ok(out)
}
