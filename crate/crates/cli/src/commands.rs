//! One function per subcommand.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use amdiff_core::denoiser::{read_checkpoint, write_checkpoint, DenoiserParams};
use amdiff_core::diffusion::{
    sample_chains, train as run_training, LayoutChoice, LossBreakdown, ModelConfig, PocketContext, TrainExample,
};
use amdiff_core::eval::{
    evaluate, filter_pipeline, reference_hashes, BinSpec, FilterRule, MetricReport, RuleDef, DEFAULT_ANGLE_PATTERNS,
};
use amdiff_core::molio::{emit_sdf, parse_pdb_atoms, parse_pocket_pdb, parse_sdf, MolecularGraph, PocketCloud, Vec3};
use amdiff_core::motif::{build_vocabulary, MotifVocabulary};
use amdiff_core::topo::{fingerprint_of, rips_persistence, diameter};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bundle::{ingest_dirs, Bundle, BUNDLE_FILE};
use crate::run::{read_bytes, sha256_hex, RunDir};
use crate::{CliError, EvalArgs, FingerprintArgs, IngestArgs, RunConfig, SampleArgs, TrainArgs, VocabArgs};

pub const CHECKPOINT_FILE: &str = "checkpoint.amdf";
pub const VOCAB_FILE: &str = "vocab.json";
pub const LOSS_FILE: &str = "loss.csv";
pub const SAMPLES_FILE: &str = "samples.sdf";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";

fn failed(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

pub fn ingest(a: &IngestArgs) -> Result<(), CliError> {
    let (bundle, skips, inputs) = ingest_dirs(&a.ligands, &a.proteins, a.radius, a.max_rmsd)?;
    for s in &skips {
        log::warn!("skipped {}: {}", s.name, s.reason);
    }
    if bundle.records.is_empty() {
        return Err(CliError::Empty("no ligand-pocket pair could be ingested".into()));
    }
    let mut run = RunDir::open(&a.out, "ingest")?;
    for (path, text) in &inputs {
        run.record_input(path, text.as_bytes());
    }
    run.set_config(json!({ "radius": a.radius, "max_rmsd": a.max_rmsd }), None);
    run.write(BUNDLE_FILE, bundle.to_json().as_bytes())?;
    log::info!("bundled {} records, skipped {}", bundle.records.len(), skips.len());
    run.finish()?;
    Ok(())
}

fn load_bundle(run: &mut RunDir, path: &Path) -> Result<(Bundle, Vec<MolecularGraph>), CliError> {
    let bundle = Bundle::load(&run.input_text(path)?)?;
    let mols = bundle.records.iter().map(|r| r.molecule()).collect::<Result<Vec<_>, _>>()?;
    Ok((bundle, mols))
}

fn heavy(mols: &[MolecularGraph]) -> Vec<MolecularGraph> {
    mols.iter().map(MolecularGraph::heavy_atoms).collect()
}

pub fn vocab(a: &VocabArgs) -> Result<(), CliError> {
    if a.min_freq == 0 {
        return Err(CliError::Config("min-freq must be >= 1".into()));
    }
    let mut run = RunDir::open(&a.out, "vocab")?;
    let (_, mols) = load_bundle(&mut run, &a.bundle)?;
    let vocab = build_vocabulary(&heavy(&mols), a.min_freq).map_err(failed)?;
    run.set_config(json!({ "min_freq": a.min_freq }), None);
    run.write(VOCAB_FILE, vocab.to_json().as_bytes())?;
    log::info!("vocabulary of {} motifs", vocab.len());
    run.finish()?;
    Ok(())
}

/// Metadata stored alongside the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointExtra {
    pub model: ModelConfig,
    pub sample: amdiff_core::diffusion::SampleConfig,
    /// Motif-size layouts seen in training, with counts.
    pub layouts: Vec<(Vec<usize>, usize)>,
    /// Pocket radius used at ingestion, Å.
    pub radius: f64,
    pub vocab_digest: String,
}

fn loss_row(step: usize, l: &LossBreakdown) -> String {
    format!("{step},{},{},{},{},{}\n", l.atom_pos, l.atom_type, l.motif_pos, l.motif_id, l.total)
}

fn checkpoint_bytes(params: &DenoiserParams, steps: usize, extra: &serde_json::Value) -> Vec<u8> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, params, steps, extra).expect("writing to memory");
    buf
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let cfg_text = a.config.as_deref().map(read_bytes).transpose()?;
    let mut cfg = match &cfg_text {
        Some(b) => RunConfig::parse(std::str::from_utf8(b).map_err(|_| CliError::Config("config is not UTF-8".into()))?)?,
        None => RunConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(n) = a.steps {
        cfg.train.steps = n;
    }
    cfg.validate()?;

    let mut run = RunDir::open(&a.out, "train")?;
    if let (Some(p), Some(b)) = (&a.config, &cfg_text) {
        run.record_input(p, b);
    }
    let (bundle, mols) = load_bundle(&mut run, &a.bundle)?;
    let vocab = match &a.vocab {
        Some(p) => MotifVocabulary::from_json(&run.input_text(p)?).map_err(|e| CliError::Input(e.to_string()))?,
        None => build_vocabulary(&heavy(&mols), cfg.min_freq).map_err(failed)?,
    };
    if cfg.model.denoiser.vocab_size != vocab.len() {
        log::info!("network vocabulary size set to {}", vocab.len());
        cfg.model.denoiser.vocab_size = vocab.len();
    }
    cfg.validate()?;
    run.set_config(serde_json::to_value(&cfg).expect("config serializes"), Some(cfg.train.seed));

    let examples = bundle
        .records
        .iter()
        .zip(&mols)
        .map(|(r, m)| TrainExample::new(m, &vocab, &r.pocket, &cfg.model))
        .collect::<Result<Vec<_>, _>>()
        .map_err(failed)?;
    let mut hist: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for ex in &examples {
        *hist.entry(ex.layout.clone()).or_default() += 1;
    }
    let vocab_json = vocab.to_json();
    let extra = serde_json::to_value(CheckpointExtra {
        model: cfg.model.clone(),
        sample: cfg.sample.clone(),
        layouts: hist.into_iter().collect(),
        radius: bundle.radius,
        vocab_digest: sha256_hex(vocab_json.as_bytes()),
    })
    .expect("metadata serializes");
    run.write(VOCAB_FILE, vocab_json.as_bytes())?;

    let schedule = cfg.model.schedule().map_err(|e| CliError::Config(e.to_string()))?;
    // Weights and the training stream get distinct seeds derived from the master.
    let mut params = DenoiserParams::init(cfg.model.denoiser.clone(), cfg.train.seed);
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = cfg.train.seed.wrapping_add(1);

    let mut csv = String::from("step,L_a_pos,L_a_type,L_m_pos,L_m_id,total\n");
    let mut checkpoints = Vec::new();
    run_training(&examples, &mut params, &schedule, &cfg.model, &train_cfg, |step, loss, p| {
        csv.push_str(&loss_row(step, loss));
        let done = step + 1;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.train.steps {
            checkpoints.push((done, checkpoint_bytes(p, done, &extra)));
        }
        if done % 100 == 0 {
            log::info!("step {done} loss {:.6}", loss.total);
        }
    })
    .map_err(failed)?;
    if !params.all_finite() {
        return Err(CliError::Failed("training diverged: non-finite weights".into()));
    }
    for (step, bytes) in checkpoints {
        run.write(&format!("checkpoints/step_{step:06}.amdf"), &bytes)?;
    }
    run.write(CHECKPOINT_FILE, &checkpoint_bytes(&params, cfg.train.steps, &extra))?;
    run.write(LOSS_FILE, csv.as_bytes())?;
    run.finish()?;
    Ok(())
}

fn parse_first_ligand(text: &str, path: &Path) -> Result<MolecularGraph, CliError> {
    parse_sdf(text)
        .into_iter()
        .next()
        .ok_or_else(|| CliError::Input(format!("{}: no records", path.display())))?
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Cuts the pocket: around an explicit center or ligand at the training
/// radius, or the whole file when neither is given.
fn sample_pocket(run: &mut RunDir, a: &SampleArgs, radius: f64) -> Result<PocketCloud, CliError> {
    let text = run.input_text(&a.pocket)?;
    let center: Option<Vec3> = match (&a.center, &a.ligand) {
        (Some(c), _) => match c.as_slice() {
            &[x, y, z] => Some([x, y, z]),
            _ => return Err(CliError::Config("center needs three values".into())),
        },
        (None, Some(lp)) => Some(parse_first_ligand(&run.input_text(lp)?, lp)?.centroid()),
        (None, None) => None,
    };
    let bad = |e: amdiff_core::molio::PdbError| CliError::Input(format!("{}: {e}", a.pocket.display()));
    match center {
        Some(c) => parse_pocket_pdb(&text, c, radius).map_err(bad),
        None => {
            let pts: Vec<Vec3> = parse_pdb_atoms(&text).map_err(bad)?.iter().map(|p| p.coord).collect();
            let n = pts.len().max(1) as f64;
            let c = pts.iter().fold([0.0; 3], |s, p| [s[0] + p[0] / n, s[1] + p[1] / n, s[2] + p[2] / n]);
            let reach = pts
                .iter()
                .map(|p| ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt())
                .fold(0.0, f64::max);
            parse_pocket_pdb(&text, c, reach + 1e-6).map_err(bad)
        }
    }
}

pub fn sample(a: &SampleArgs) -> Result<(), CliError> {
    let mut run = RunDir::open(&a.out, "sample")?;
    let ck_bytes = run.input_bytes(&a.checkpoint)?;
    let ck = read_checkpoint(&mut ck_bytes.as_slice()).map_err(|e| CliError::Input(e.to_string()))?;
    let extra: CheckpointExtra = serde_json::from_value(ck.extra.clone())
        .map_err(|e| CliError::Input(format!("checkpoint metadata: {e}")))?;
    if extra.model.denoiser != ck.params.config {
        return Err(CliError::Input("checkpoint network config disagrees with its metadata".into()));
    }
    let schedule = extra.model.schedule().map_err(|e| CliError::Input(format!("checkpoint schedule: {e}")))?;
    let mut scfg = extra.sample.clone();
    if let Some(s) = a.scale {
        scfg.guidance_scale = s;
    }
    if let Some(g) = a.gamma {
        scfg.gamma = g;
    }
    scfg.snapshots = a.snapshots.clone();
    scfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(&t) = a.snapshots.iter().find(|&&t| t > schedule.steps()) {
        return Err(CliError::Config(format!("snapshot step {t} beyond the {}-step schedule", schedule.steps())));
    }
    let layouts = match &a.layout {
        Some(l) if l.is_empty() || l.contains(&0) => {
            return Err(CliError::Config("layout sizes must be positive".into()));
        }
        Some(l) => LayoutChoice::Fixed(l.clone()),
        None => LayoutChoice::Histogram(extra.layouts.clone()),
    };
    run.set_config(
        json!({ "n": a.n, "sample": scfg, "layout": a.layout, "center": a.center }),
        Some(a.seed),
    );
    let pocket = sample_pocket(&mut run, a, extra.radius)?;
    let ctx = PocketContext::new(&pocket, &extra.model).map_err(failed)?;
    let results = sample_chains(&ctx, &layouts, a.n, &ck.params, &schedule, &extra.model, &scfg, a.seed);
    let mut out = Vec::with_capacity(results.len());
    let mut n_valid = 0;
    for (i, r) in results.into_iter().enumerate() {
        let r = r.map_err(failed)?;
        let seed = a.seed.wrapping_add(i as u64);
        let mut mol = r.molecule;
        mol.name = format!("sample_{i}");
        mol.properties.insert("valid".into(), r.validity.valid.to_string());
        mol.properties.insert("seed".into(), seed.to_string());
        n_valid += r.validity.valid as usize;
        for snap in &r.snapshots {
            let mut m = snap.molecule.clone();
            m.name = format!("sample_{i} t={}", snap.t);
            run.write(&format!("snapshots/chain_{i:04}_t{:04}.sdf", snap.t), emit_sdf([&m]).as_bytes())?;
        }
        out.push(mol);
    }
    run.write(SAMPLES_FILE, emit_sdf(&out).as_bytes())?;
    log::info!("{n_valid}/{} samples valid", out.len());
    run.finish()?;
    Ok(())
}

fn sdf_files(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let rd = std::fs::read_dir(path).map_err(|e| CliError::io(path, e))?;
    let mut out: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("sdf")))
        .collect();
    out.sort();
    Ok(out)
}

/// Parsed records plus the number that failed to parse.
fn read_sdf_set(run: &mut RunDir, paths: &[PathBuf]) -> Result<(Vec<MolecularGraph>, usize), CliError> {
    let mut mols = Vec::new();
    let mut unparsed = 0;
    for p in paths {
        let bytes = run.input_bytes(p)?;
        for r in parse_sdf(&String::from_utf8_lossy(&bytes)) {
            match r {
                Ok(m) => mols.push(m),
                Err(e) => {
                    log::warn!("{}: skipped record: {e}", p.display());
                    unparsed += 1;
                }
            }
        }
    }
    Ok((mols, unparsed))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub metrics: MetricReport,
    pub unparsed: usize,
    pub n_reference: usize,
    pub filter_passed: Option<usize>,
    pub filter_rejected: Option<usize>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn report_csv(r: &EvalReport) -> String {
    let m = &r.metrics;
    let s = &m.sets;
    let mut rows: Vec<(String, String)> = vec![
        ("validity".into(), fmt_opt(s.validity)),
        ("uniqueness".into(), fmt_opt(s.uniqueness)),
        ("diversity".into(), fmt_opt(s.diversity)),
        ("novelty".into(), fmt_opt(s.novelty)),
        ("n_generated".into(), s.n_generated.to_string()),
        ("n_valid".into(), s.n_valid.to_string()),
        ("n_unique".into(), s.n_unique.to_string()),
        ("n_scaffolds".into(), s.n_scaffolds.to_string()),
        ("unparsed".into(), r.unparsed.to_string()),
        ("rmsd_mean".into(), fmt_opt(m.rmsd_stats.map(|x| x.0))),
        ("rmsd_std".into(), fmt_opt(m.rmsd_stats.map(|x| x.1))),
        ("qed".into(), m.qed.clone()),
        ("sa".into(), m.sa.clone()),
    ];
    rows.extend(m.angle_kl.iter().map(|(k, v)| (format!("angle_kl:{k}"), v.to_string())));
    rows.extend(m.dihedral_kl.iter().map(|(k, v)| (format!("dihedral_kl:{k}"), v.to_string())));
    let mut out = String::from("metric,value\n");
    for (k, v) in rows {
        out.push_str(&format!("{k},{v}\n"));
    }
    out
}

/// Pattern text made safe for a file name.
fn file_label(pattern: &str) -> String {
    pattern
        .chars()
        .map(|c| match c {
            '=' => 'd',
            '#' => 't',
            ':' => 'a',
            '-' => 's',
            c if c.is_ascii_alphanumeric() => c,
            _ => '_',
        })
        .collect()
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let rules: Option<Vec<RuleDef>> = match &a.rules {
        Some(p) => Some(
            serde_json::from_slice(&read_bytes(p)?).map_err(|e| CliError::Config(format!("rules file: {e}")))?,
        ),
        None => None,
    };
    let mut run = RunDir::open(&a.out, "eval")?;
    if let Some(p) = &a.rules {
        let b = read_bytes(p)?;
        run.record_input(p, &b);
    }
    let (generated, unparsed) = read_sdf_set(&mut run, &[a.generated.clone()])?;
    let mut ref_paths = Vec::new();
    for r in &a.reference {
        ref_paths.extend(sdf_files(r)?);
    }
    let (reference, _) = read_sdf_set(&mut run, &ref_paths)?;
    let patterns: Vec<String> = match &a.patterns {
        Some(p) => p.clone(),
        None => DEFAULT_ANGLE_PATTERNS.iter().map(|s| s.to_string()).collect(),
    };
    let pattern_refs: Vec<&str> = patterns.iter().map(String::as_str).collect();
    run.set_config(json!({ "patterns": patterns, "rules": rules }), None);

    // Index-matched pose pairs: same record name and atom count.
    let by_name: BTreeMap<&str, &MolecularGraph> = reference.iter().map(|m| (m.name.as_str(), m)).collect();
    let poses: Vec<(MolecularGraph, MolecularGraph)> = generated
        .iter()
        .filter_map(|g| by_name.get(g.name.as_str()).filter(|r| r.len() == g.len()).map(|r| (g.clone(), (*r).clone())))
        .collect();
    let refs = reference_hashes(&reference);
    let bins = BinSpec::default();
    let (metrics, hists) = evaluate(&generated, &reference, &HashSet::new(), &refs, &pattern_refs, &poses, &bins)
        .map_err(|e| CliError::Config(e.to_string()))?;
    for (name, h) in &hists {
        run.write(&format!("histograms/{}.csv", file_label(name)), h.to_csv(bins.smoothing).as_bytes())?;
    }
    let mut report = EvalReport {
        metrics,
        unparsed,
        n_reference: reference.len(),
        filter_passed: None,
        filter_rejected: None,
    };
    if let Some(defs) = &rules {
        let compiled = defs
            .iter()
            .map(|d| FilterRule::compile(d, &reference))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let outcome = filter_pipeline(&generated, &compiled);
        let passed: String = outcome.passed.iter().map(|&k| format!("{k}\t{}\n", generated[k].name)).collect();
        let rejected: String = outcome
            .rejected
            .iter()
            .map(|(k, why)| format!("{k}\t{}\t{why}\n", generated[*k].name))
            .collect();
        run.write("filters/passed.tsv", passed.as_bytes())?;
        run.write("filters/rejected.tsv", rejected.as_bytes())?;
        report.filter_passed = Some(outcome.passed.len());
        report.filter_rejected = Some(outcome.rejected.len());
    }
    run.write(REPORT_JSON, serde_json::to_string_pretty(&report).expect("report serializes").as_bytes())?;
    run.write(REPORT_CSV, report_csv(&report).as_bytes())?;
    run.finish()?;
    if generated.is_empty() {
        return Err(CliError::Empty("no generated molecule could be read".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FingerprintEntry {
    pub name: String,
    pub points: usize,
    pub max_filtration: f64,
    pub fingerprint: Vec<f64>,
}

pub fn fingerprint(a: &FingerprintArgs) -> Result<(), CliError> {
    if let Some(f) = a.max_filtration {
        if !(f > 0.0 && f.is_finite()) {
            return Err(CliError::Config(format!("max-filtration must be positive, got {f}")));
        }
    }
    let mut run = RunDir::open(&a.out, "fingerprint")?;
    let bytes = run.input_bytes(&a.input)?;
    let text = String::from_utf8_lossy(&bytes);
    let is_pdb = a.input.extension().is_some_and(|x| x.eq_ignore_ascii_case("pdb"));
    let sets: Vec<(String, Vec<Vec3>)> = if is_pdb {
        let atoms = parse_pdb_atoms(&text).map_err(|e| CliError::Input(e.to_string()))?;
        vec![(a.input.display().to_string(), atoms.iter().map(|p| p.coord).collect())]
    } else {
        parse_sdf(&text)
            .into_iter()
            .enumerate()
            .filter_map(|(k, r)| match r {
                Ok(m) => Some((if m.name.is_empty() { format!("record_{k}") } else { m.name.clone() }, m.coords())),
                Err(e) => {
                    log::warn!("record {k} skipped: {e}");
                    None
                }
            })
            .collect()
    };
    run.set_config(json!({ "max_filtration": a.max_filtration, "diagrams": a.diagrams }), None);
    let mut entries = Vec::new();
    for (k, (name, pts)) in sets.iter().enumerate() {
        if pts.len() < 2 {
            log::warn!("{name}: fewer than two points, skipped");
            continue;
        }
        let cap = a.max_filtration.unwrap_or_else(|| diameter(pts).max(f64::MIN_POSITIVE));
        let diagram = rips_persistence(pts, cap, 1).map_err(|e| CliError::Input(format!("{name}: {e}")))?;
        if a.diagrams {
            run.write(&format!("diagrams/{k:04}.csv"), diagram.to_csv().as_bytes())?;
        }
        entries.push(FingerprintEntry {
            name: name.clone(),
            points: pts.len(),
            max_filtration: cap,
            fingerprint: fingerprint_of(&diagram).0.to_vec(),
        });
    }
    if entries.is_empty() {
        run.finish()?;
        return Err(CliError::Empty("no point set to fingerprint".into()));
    }
    run.write("fingerprints.json", serde_json::to_string_pretty(&entries).expect("serializes").as_bytes())?;
    run.finish()?;
    Ok(())
}
