//! Metrics over generated molecule sets and the structural filter pipeline.

mod angles;
mod filters;
mod fingerprint;
mod geometry;
mod sets;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use angles::{angle_kl, bond_angle, dihedral_angle, pattern_values, AngleKl, BinSpec, Histogram, PathPattern};
pub use filters::{
    default_rules, filter_pipeline, implicit_hydrogens, molecular_weight, property_value, ring_count, FilterOutcome,
    FilterRule, Property, QueryGraph, RuleDef, RuleSpec, MAX_PATTERN_ATOMS,
};
pub use fingerprint::{circular_fingerprint, tanimoto, BitFingerprint, FINGERPRINT_BITS};
pub use geometry::{npr_descriptors, npr_of_points, principal_moments, rmsd};
pub use sets::{reference_hashes, scaffold, scaffold_hash, set_metrics, SetAccumulator, SetMetrics};

use crate::molio::MolecularGraph;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("length mismatch: {0} vs {1} atoms")]
    LengthMismatch(usize, usize),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("need at least {need} atoms, got {got}")]
    TooFewAtoms { need: usize, got: usize },
    #[error("degenerate geometry: {0}")]
    Degenerate(&'static str),
    #[error("pattern {0}")]
    Pattern(String),
    #[error("rule {name}: {msg}")]
    Rule { name: String, msg: String },
}

pub const DEFAULT_ANGLE_PATTERNS: &[&str] = &["CCC", "CC=O", "CCO", "C:C:C", "CCCC", "C:C:C:C"];

/// Scores that need externally fitted tables and are not computed.
pub const UNAVAILABLE: &str = "unavailable";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(flatten)]
    pub sets: SetMetrics,
    pub angle_kl: BTreeMap<String, f64>,
    pub dihedral_kl: BTreeMap<String, f64>,
    pub omitted_patterns: BTreeMap<String, String>,
    /// Mean and standard deviation over pose pairs, Å.
    pub rmsd_stats: Option<(f64, f64)>,
    pub npr_points: Vec<(f64, f64)>,
    pub qed: String,
    pub sa: String,
}

/// Full metric battery. `poses` pairs index-matched conformations.
pub fn evaluate(
    generated: &[MolecularGraph],
    reference: &[MolecularGraph],
    train_hashes: &HashSet<u64>,
    test_hashes: &HashSet<u64>,
    patterns: &[&str],
    poses: &[(MolecularGraph, MolecularGraph)],
    bins: &BinSpec,
) -> Result<(MetricReport, BTreeMap<String, Histogram>), EvalError> {
    let sets = set_metrics(generated, train_hashes, test_hashes);
    let kl = if generated.is_empty() || reference.is_empty() {
        AngleKl::default()
    } else {
        angle_kl(reference, generated, patterns, bins)?
    };
    let rmsds = poses
        .iter()
        .map(|(a, b)| rmsd(&a.coords(), &b.coords()))
        .collect::<Result<Vec<f64>, _>>()?;
    let rmsd_stats = (!rmsds.is_empty()).then(|| {
        let n = rmsds.len() as f64;
        let mean = rmsds.iter().sum::<f64>() / n;
        (mean, (rmsds.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt())
    });
    let npr_points = generated.iter().filter_map(|m| npr_descriptors(m).ok()).collect();
    let report = MetricReport {
        sets,
        angle_kl: kl.angles,
        dihedral_kl: kl.dihedrals,
        omitted_patterns: kl.omitted,
        rmsd_stats,
        npr_points,
        qed: UNAVAILABLE.into(),
        sa: UNAVAILABLE.into(),
    };
    Ok((report, kl.histograms))
}
