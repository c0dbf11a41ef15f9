use serde::{Deserialize, Serialize};

use super::fingerprint::{circular_fingerprint, tanimoto, BitFingerprint};
use super::EvalError;
use crate::molio::{BondOrder, Element, MolecularGraph};

pub const MAX_PATTERN_ATOMS: usize = 12;

/// Small query graph. Atom `"*"` matches any element; a bond order of
/// `None` matches any order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryGraph {
    pub atoms: Vec<String>,
    pub bonds: Vec<(usize, usize, Option<u8>)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    MolecularWeight,
    RingCount,
    HeavyAtoms,
}

impl Property {
    fn label(self) -> &'static str {
        match self {
            Property::MolecularWeight => "MW",
            Property::RingCount => "ring count",
            Property::HeavyAtoms => "heavy atoms",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RuleSpec {
    Substructure { pattern: QueryGraph },
    PropertyRange { property: Property, min: f64, max: f64 },
    SimilarityFloor { floor: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleDef {
    pub name: String,
    #[serde(flatten)]
    pub spec: RuleSpec,
}

#[derive(Debug, Clone)]
enum Check {
    Substructure { elements: Vec<Option<Element>>, adj: Vec<Vec<(usize, Option<BondOrder>)>> },
    Range { property: Property, min: f64, max: f64 },
    Similarity { floor: f64, references: Vec<BitFingerprint> },
}

/// A compiled rule.
#[derive(Debug, Clone)]
pub struct FilterRule {
    pub name: String,
    check: Check,
}

impl FilterRule {
    /// Compiles a rule; similarity rules compare against `references`.
    pub fn compile(def: &RuleDef, references: &[MolecularGraph]) -> Result<Self, EvalError> {
        let bad = |m: String| EvalError::Rule { name: def.name.clone(), msg: m };
        let check = match &def.spec {
            RuleSpec::Substructure { pattern } => {
                let n = pattern.atoms.len();
                if n == 0 || n > MAX_PATTERN_ATOMS {
                    return Err(bad(format!("pattern has {n} atoms, allowed 1..={MAX_PATTERN_ATOMS}")));
                }
                let elements = pattern
                    .atoms
                    .iter()
                    .map(|s| match s.as_str() {
                        "*" => Ok(None),
                        sym => Element::from_symbol(sym).map(Some).ok_or_else(|| bad(format!("unknown element {sym:?}"))),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let mut adj = vec![Vec::new(); n];
                for &(i, j, code) in &pattern.bonds {
                    if i >= n || j >= n || i == j {
                        return Err(bad(format!("bad pattern bond {i}-{j}")));
                    }
                    let order = match code {
                        None => None,
                        Some(c) => Some(BondOrder::from_sdf_code(c).ok_or_else(|| bad(format!("bad bond order {c}")))?),
                    };
                    adj[i].push((j, order));
                    adj[j].push((i, order));
                }
                Check::Substructure { elements, adj }
            }
            RuleSpec::PropertyRange { property, min, max } => {
                if !(min <= max) {
                    return Err(bad("min above max".into()));
                }
                Check::Range { property: *property, min: *min, max: *max }
            }
            RuleSpec::SimilarityFloor { floor } => {
                if references.is_empty() {
                    return Err(bad("similarity rule needs reference ligands".into()));
                }
                Check::Similarity { floor: *floor, references: references.iter().map(circular_fingerprint).collect() }
            }
        };
        Ok(FilterRule { name: def.name.clone(), check })
    }

    /// `None` on pass, otherwise the reason.
    pub fn reject_reason(&self, mol: &MolecularGraph) -> Option<String> {
        match &self.check {
            Check::Substructure { elements, adj } => {
                has_match(elements, adj, mol).then(|| format!("{}: substructure present", self.name))
            }
            Check::Range { property, min, max } => {
                let v = property_value(*property, mol);
                let shown = if *property == Property::MolecularWeight { format!("{v:.0}") } else { format!("{v}") };
                let label = property.label();
                if v < *min {
                    Some(format!("{label} {shown} below range [{min}, {max}]"))
                } else if v > *max {
                    Some(format!("{label} {shown} above range [{min}, {max}]"))
                } else {
                    None
                }
            }
            Check::Similarity { floor, references } => {
                let fp = circular_fingerprint(mol);
                let best = references.iter().map(|r| tanimoto(&fp, r)).fold(0.0, f64::max);
                (best < *floor).then(|| format!("max similarity {best:.3} below floor {floor}"))
            }
        }
    }
}

/// Hydrogens implied by the lowest valence that covers each heavy atom's
/// bond-order sum.
pub fn implicit_hydrogens(mol: &MolecularGraph) -> usize {
    mol.atoms()
        .iter()
        .zip(mol.bond_order_sums())
        .filter(|(a, _)| !a.element.is_hydrogen())
        .map(|(a, sum)| {
            let used = (sum - 1e-9).ceil().max(0.0) as u32;
            a.element.valences().iter().map(|&v| v as u32).find(|&v| v >= used).map_or(0, |v| (v - used) as usize)
        })
        .sum()
}

pub fn molecular_weight(mol: &MolecularGraph) -> f64 {
    let explicit: f64 = mol.atoms().iter().map(|a| a.element.mass()).sum();
    explicit + implicit_hydrogens(mol) as f64 * Element::H.mass()
}

/// Independent cycles: bonds - atoms + components.
pub fn ring_count(mol: &MolecularGraph) -> usize {
    (mol.bonds().len() + mol.components().len()).saturating_sub(mol.len())
}

pub fn property_value(p: Property, mol: &MolecularGraph) -> f64 {
    match p {
        Property::MolecularWeight => molecular_weight(mol),
        Property::RingCount => ring_count(mol) as f64,
        Property::HeavyAtoms => mol.atoms().iter().filter(|a| !a.element.is_hydrogen()).count() as f64,
    }
}

/// Subgraph monomorphism search by backtracking: every query atom maps to a
/// distinct molecule atom and every query bond to a molecule bond.
fn has_match(elements: &[Option<Element>], adj: &[Vec<(usize, Option<BondOrder>)>], mol: &MolecularGraph) -> bool {
    let n = elements.len();
    if n > mol.len() {
        return false;
    }
    let madj = mol.adjacency();
    let order = query_order(adj);
    let mut map = vec![usize::MAX; n];
    let mut used = vec![false; mol.len()];
    search(0, &order, elements, adj, mol, &madj, &mut map, &mut used)
}

/// Breadth-first query order so each atom after the first usually has a
/// mapped neighbor.
fn query_order(adj: &[Vec<(usize, Option<BondOrder>)>]) -> Vec<usize> {
    let n = adj.len();
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut queue = std::collections::VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &(v, _) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
    }
    order
}

#[allow(clippy::too_many_arguments)]
fn search(
    depth: usize,
    order: &[usize],
    elements: &[Option<Element>],
    adj: &[Vec<(usize, Option<BondOrder>)>],
    mol: &MolecularGraph,
    madj: &[Vec<(usize, BondOrder)>],
    map: &mut [usize],
    used: &mut [bool],
) -> bool {
    if depth == order.len() {
        return true;
    }
    let q = order[depth];
    for cand in 0..mol.len() {
        if used[cand] || elements[q].is_some_and(|e| e != mol.atoms()[cand].element) {
            continue;
        }
        let fits = adj[q].iter().all(|&(p, want)| {
            map[p] == usize::MAX
                || madj[cand].iter().any(|&(m, o)| m == map[p] && want.is_none_or(|w| w == o))
        });
        if !fits {
            continue;
        }
        map[q] = cand;
        used[cand] = true;
        if search(depth + 1, order, elements, adj, mol, madj, map, used) {
            return true;
        }
        map[q] = usize::MAX;
        used[cand] = false;
    }
    false
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    /// Indices of molecules that passed every rule.
    pub passed: Vec<usize>,
    /// Index and first failing rule's reason.
    pub rejected: Vec<(usize, String)>,
}

/// Applies rules in order; a molecule stops at its first failing rule.
pub fn filter_pipeline(mols: &[MolecularGraph], rules: &[FilterRule]) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for (k, mol) in mols.iter().enumerate() {
        match rules.iter().find_map(|r| r.reject_reason(mol)) {
            Some(reason) => out.rejected.push((k, reason)),
            None => out.passed.push(k),
        }
    }
    out
}

fn ring_query(name: &str, size: usize) -> RuleDef {
    RuleDef {
        name: name.to_string(),
        spec: RuleSpec::Substructure {
            pattern: QueryGraph {
                atoms: vec!["*".into(); size],
                bonds: (0..size).map(|k| (k, (k + 1) % size, None)).collect(),
            },
        },
    }
}

fn pair_query(name: &str, a: &str, b: &str, order: u8) -> RuleDef {
    RuleDef {
        name: name.to_string(),
        spec: RuleSpec::Substructure {
            pattern: QueryGraph { atoms: vec![a.into(), b.into()], bonds: vec![(0, 1, Some(order))] },
        },
    }
}

/// Curated structural alerts: small and large rings and a few reactive
/// linkages.
pub fn default_rules() -> Vec<RuleDef> {
    vec![
        ring_query("no three-membered ring", 3),
        ring_query("no eight-membered ring", 8),
        pair_query("no peroxide", "O", "O", 1),
        pair_query("no disulfide", "S", "S", 1),
        pair_query("no azo", "N", "N", 2),
        RuleDef {
            name: "no isocyanate".into(),
            spec: RuleSpec::Substructure {
                pattern: QueryGraph {
                    atoms: vec!["N".into(), "C".into(), "O".into()],
                    bonds: vec![(0, 1, Some(2)), (1, 2, Some(2))],
                },
            },
        },
    ]
}
