//! Dataset bundle: ligand records paired with extracted pockets, stored as
//! one JSON file.

use std::path::{Path, PathBuf};

use amdiff_core::eval::rmsd;
use amdiff_core::molio::{emit_sdf, parse_pocket_pdb, parse_sdf, MolecularGraph, PocketCloud};
use serde::{Deserialize, Serialize};

use crate::run::read_text;
use crate::CliError;

pub const BUNDLE_VERSION: u32 = 1;
pub const BUNDLE_FILE: &str = "bundle.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleRecord {
    pub name: String,
    /// Single-record SDF text.
    pub ligand: String,
    pub pocket: PocketCloud,
}

impl BundleRecord {
    pub fn molecule(&self) -> Result<MolecularGraph, CliError> {
        parse_sdf(&self.ligand)
            .into_iter()
            .next()
            .ok_or_else(|| CliError::Input(format!("record {}: no ligand", self.name)))?
            .map_err(|e| CliError::Input(format!("record {}: {e}", self.name)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub version: u32,
    pub radius: f64,
    pub max_rmsd: f64,
    pub records: Vec<BundleRecord>,
}

impl Bundle {
    pub fn load(text: &str) -> Result<Self, CliError> {
        let b: Bundle = serde_json::from_str(text).map_err(|e| CliError::Input(format!("bundle: {e}")))?;
        if b.version != BUNDLE_VERSION {
            return Err(CliError::Input(format!("unsupported bundle version {}", b.version)));
        }
        if b.records.is_empty() {
            return Err(CliError::Empty("bundle has no records".into()));
        }
        Ok(b)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serializes")
    }
}

/// A pair that could not be ingested.
#[derive(Debug, Clone, PartialEq)]
pub struct Skip {
    pub name: String,
    pub reason: String,
}

/// Files read during ingestion, for the manifest.
pub type Inputs = Vec<(PathBuf, String)>;

fn files_with_ext(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, CliError> {
    let rd = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut out: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case(ext)))
        .collect();
    out.sort();
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Pairs `<stem>.sdf` with `<stem>.pdb`. The first record of a ligand file
/// is the pose of record; further records are alternative poses, kept when
/// within `max_rmsd` of it.
pub fn ingest_dirs(
    ligands: &Path,
    proteins: &Path,
    radius: f64,
    max_rmsd: f64,
) -> Result<(Bundle, Vec<Skip>, Inputs), CliError> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(CliError::Config(format!("radius must be positive, got {radius}")));
    }
    if !(max_rmsd >= 0.0) {
        return Err(CliError::Config(format!("max-rmsd must be >= 0, got {max_rmsd}")));
    }
    for d in [ligands, proteins] {
        if !d.is_dir() {
            return Err(CliError::Input(format!("{} is not a directory", d.display())));
        }
    }
    let mut records = Vec::new();
    let mut skips = Vec::new();
    let mut inputs = Vec::new();
    for lig_path in files_with_ext(ligands, "sdf")? {
        let name = stem(&lig_path);
        let prot_path = proteins.join(format!("{name}.pdb"));
        let skip = |reason: String| Skip { name: name.clone(), reason };
        if !prot_path.is_file() {
            skips.push(skip(format!("no protein file {}", prot_path.display())));
            continue;
        }
        let (lig_text, prot_text) = match (read_text(&lig_path), read_text(&prot_path)) {
            (Ok(l), Ok(p)) => (l, p),
            (Err(e), _) | (_, Err(e)) => {
                skips.push(skip(format!("unreadable: {e}")));
                continue;
            }
        };
        inputs.push((lig_path.clone(), lig_text.clone()));
        inputs.push((prot_path.clone(), prot_text.clone()));
        let mut parsed = parse_sdf(&lig_text).into_iter();
        let first = match parsed.next() {
            Some(Ok(m)) if !m.is_empty() => m,
            Some(Err(e)) => {
                skips.push(skip(format!("ligand: {e}")));
                continue;
            }
            _ => {
                skips.push(skip("ligand: no atoms".into()));
                continue;
            }
        };
        let first_coords = first.coords();
        let mut poses = vec![first];
        for alt in parsed.flatten() {
            let within = rmsd(&first_coords, &alt.coords()).is_ok_and(|r| r <= max_rmsd);
            if within && alt.len() == poses[0].len() {
                poses.push(alt);
            }
        }
        for (k, pose) in poses.into_iter().enumerate() {
            let rec_name = if k == 0 { name.clone() } else { format!("{name}#{k}") };
            match parse_pocket_pdb(&prot_text, pose.centroid(), radius) {
                Ok(pocket) => records.push(BundleRecord { name: rec_name, ligand: emit_sdf([&pose]), pocket }),
                Err(e) => skips.push(Skip { name: rec_name, reason: format!("pocket: {e}") }),
            }
        }
    }
    Ok((Bundle { version: BUNDLE_VERSION, radius, max_rmsd, records }, skips, inputs))
}
