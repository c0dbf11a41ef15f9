//! Reverse-chain sampler over the joint atom/motif state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::categorical::{posterior_type, sample_categorical, softmax};
use super::continuous::{posterior_coefficients, predict_x0};
use super::guidance::cfg_combine;
use super::train::{ligand_fingerprint, PocketContext};
use super::{DiffusionError, DiffusionSchedule, ModelConfig};
use crate::denoiser::{build_graph, forward, Condition, DenoiserOutput, DenoiserParams, LigandNodes, MotifNodes};
use crate::molio::{
    apply, check_validity, mean, molecule_from_cloud, Element, MolecularGraph, ValidityReport, Vec3, NUM_ATOM_TYPES,
};
use crate::motif::{Motif, MotifId, MotifView};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    /// Guidance scale `s`; 1 is conditional only.
    pub guidance_scale: f64,
    /// Pull of motif centroids toward their atom means after every step.
    /// 0 turns the projection off.
    pub gamma: f64,
    /// Steps whose starting state is recorded; 0 records the final state.
    pub snapshots: Vec<usize>,
    /// Rotation applied to every Gaussian draw.
    #[serde(skip)]
    pub noise_rotation: Option<[[f64; 3]; 3]>,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig { guidance_scale: 2.0, gamma: 0.5, snapshots: Vec::new(), noise_rotation: None }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<(), DiffusionError> {
        if !(self.guidance_scale >= 0.0 && self.guidance_scale.is_finite()) {
            return Err(DiffusionError::Config("guidance_scale must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(DiffusionError::Config("gamma must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Model-frame state of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub atom_coords: Vec<Vec3>,
    pub atom_types: Vec<usize>,
    pub motif_coords: Vec<Vec3>,
    pub motif_classes: Vec<usize>,
    pub membership: Vec<usize>,
}

impl ChainState {
    /// Mean of each motif's member atoms.
    pub fn atom_means(&self) -> Vec<Vec3> {
        let mut sum = vec![[0.0; 3]; self.motif_coords.len()];
        let mut count = vec![0usize; self.motif_coords.len()];
        for (x, &m) in self.atom_coords.iter().zip(&self.membership) {
            for c in 0..3 {
                sum[m][c] += x[c];
            }
            count[m] += 1;
        }
        sum.iter().zip(&count).map(|(s, &n)| s.map(|v| v / n.max(1) as f64)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: usize,
    /// Atoms in Å with their current types and perceived bonds.
    pub molecule: MolecularGraph,
}

#[derive(Debug, Clone)]
pub struct SampleResult {
    pub molecule: MolecularGraph,
    pub view: MotifView,
    pub validity: ValidityReport,
    pub snapshots: Vec<Snapshot>,
}

/// `c' = gamma a + (1 - gamma) c` for every motif with atom mean `a`; member
/// atoms shift by `(1 - gamma)(c - a)`, so both views end up at `c'`.
pub fn consistency_project(atoms: &mut [Vec3], motifs: &mut [Vec3], membership: &[usize], gamma: f64) {
    if gamma == 0.0 {
        return;
    }
    let state = ChainState {
        atom_coords: atoms.to_vec(),
        atom_types: Vec::new(),
        motif_coords: motifs.to_vec(),
        motif_classes: Vec::new(),
        membership: membership.to_vec(),
    };
    let means = state.atom_means();
    for (k, c) in motifs.iter_mut().enumerate() {
        let a = means[k];
        let shift: Vec3 = std::array::from_fn(|d| (1.0 - gamma) * (c[d] - a[d]));
        *c = std::array::from_fn(|d| gamma * a[d] + (1.0 - gamma) * c[d]);
        for (x, _) in atoms.iter_mut().zip(membership).filter(|(_, &m)| m == k) {
            for d in 0..3 {
                x[d] += shift[d];
            }
        }
    }
}

/// Draws a motif-size layout in proportion to its corpus count.
pub fn draw_layout<R: Rng + ?Sized>(layouts: &[(Vec<usize>, usize)], rng: &mut R) -> Option<Vec<usize>> {
    let total: usize = layouts.iter().map(|(_, c)| c).sum();
    if total == 0 {
        return None;
    }
    let mut r = rng.random_range(0..total);
    for (layout, c) in layouts {
        if r < *c {
            return Some(layout.clone());
        }
        r -= c;
    }
    None
}

fn gauss3<R: Rng + ?Sized>(rng: &mut R, rot: Option<&[[f64; 3]; 3]>) -> Vec3 {
    let z: Vec3 = std::array::from_fn(|_| StandardNormal.sample(rng));
    match rot {
        Some(r) => apply(r, &[0.0; 3], &z),
        None => z,
    }
}

fn one_hot(class: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[class] = 1.0;
    v
}

fn argmax(p: &[f64]) -> usize {
    p.iter().enumerate().fold(0, |best, (i, &v)| if v > p[best] { i } else { best })
}

fn step_coords<R: Rng + ?Sized>(
    schedule: &DiffusionSchedule,
    xt: &[Vec3],
    eps: &[Vec3],
    t: usize,
    rot: Option<&[[f64; 3]; 3]>,
    rng: &mut R,
) -> Vec<Vec3> {
    let x0 = predict_x0(schedule, xt, eps, t);
    let (c0, ct) = posterior_coefficients(schedule, t);
    let sigma = schedule.sigma2(t).sqrt();
    xt.iter()
        .zip(&x0)
        .map(|(a, b)| {
            let z = if t > 1 { gauss3(rng, rot) } else { [0.0; 3] };
            std::array::from_fn(|c| c0 * b[c] + ct * a[c] + sigma * z[c])
        })
        .collect()
}

fn step_classes<R: Rng + ?Sized>(
    schedule: &DiffusionSchedule,
    current: &[usize],
    logits: ndarray::ArrayView2<'_, f64>,
    t: usize,
    rng: &mut R,
) -> Vec<usize> {
    let k = logits.ncols();
    current
        .iter()
        .zip(logits.rows())
        .map(|(&c, row)| {
            if k < 2 {
                return c;
            }
            let v0 = softmax(&row.to_vec());
            let probs = posterior_type(schedule, &one_hot(c, k), &v0, t);
            if t > 1 {
                sample_categorical(&probs, rng)
            } else {
                argmax(&probs)
            }
        })
        .collect()
}

fn guided(cond: DenoiserOutput, uncond: Option<DenoiserOutput>, s: f64) -> DenoiserOutput {
    let Some(u) = uncond else { return cond };
    let flat = |v: &[Vec3]| v.iter().flatten().copied().collect::<Vec<f64>>();
    let eps_flat = cfg_combine(&flat(&cond.eps), &flat(&u.eps), s);
    let eps = eps_flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let combine2 = |a: &ndarray::Array2<f64>, b: &ndarray::Array2<f64>| {
        let v = cfg_combine(a.as_slice().expect("standard layout"), b.as_slice().expect("standard layout"), s);
        ndarray::Array2::from_shape_vec(a.raw_dim(), v).expect("same shape")
    };
    DenoiserOutput {
        coords: cond.coords.clone(),
        eps,
        type_logits: combine2(&cond.type_logits, &u.type_logits),
        motif_logits: combine2(&cond.motif_logits, &u.motif_logits),
    }
}

fn world_molecule(state: &ChainState, frame: &super::Frame, name: &str) -> MolecularGraph {
    let elements: Vec<Element> = state.atom_types.iter().map(|&t| Element::from_type_index(t)).collect();
    let coords: Vec<Vec3> = state.atom_coords.iter().map(|p| frame.to_world(p)).collect();
    molecule_from_cloud(name, &elements, &coords).expect("finite coordinates and in-range bonds")
}

fn final_view(state: &ChainState, mol: &MolecularGraph, vocab_size: usize) -> MotifView {
    let nm = state.motif_coords.len();
    let mut members = vec![Vec::new(); nm];
    for (a, &m) in state.membership.iter().enumerate() {
        members[m].push(a);
    }
    let coords = mol.coords();
    let motifs = members
        .into_iter()
        .zip(&state.motif_classes)
        .map(|(members, &class)| {
            let pts: Vec<Vec3> = members.iter().map(|&a| coords[a]).collect();
            let sub = mol.subgraph(&members);
            Motif {
                id: if class < vocab_size { MotifId::Known(class) } else { MotifId::OutOfVocab },
                digest: crate::molio::canonical_hash(&sub),
                centroid: mean(&pts),
                members,
            }
        })
        .collect();
    let mut edges: Vec<(usize, usize)> = mol
        .bonds()
        .iter()
        .filter_map(|b| {
            let (x, y) = (state.membership[b.i], state.membership[b.j]);
            (x != y).then(|| (x.min(y), x.max(y)))
        })
        .collect();
    edges.sort_unstable();
    MotifView { motifs, edges }
}

/// Runs one reverse chain; `observe` sees the state at the start of every
/// step `t` and the final state at `t = 0`.
#[allow(clippy::too_many_arguments)]
pub fn sample_observed<R: Rng + ?Sized>(
    pocket: &PocketContext,
    layout: &[usize],
    params: &DenoiserParams,
    schedule: &DiffusionSchedule,
    model: &ModelConfig,
    cfg: &SampleConfig,
    name: &str,
    rng: &mut R,
    mut observe: impl FnMut(usize, &ChainState),
) -> Result<SampleResult, DiffusionError> {
    cfg.validate()?;
    if layout.is_empty() || layout.contains(&0) {
        return Err(DiffusionError::Input("layout needs at least one atom per motif".into()));
    }
    let w = params.config.vocab_size;
    let rot = cfg.noise_rotation.as_ref();
    let membership: Vec<usize> = layout.iter().enumerate().flat_map(|(k, &n)| std::iter::repeat_n(k, n)).collect();
    let na = membership.len();
    let mut state = ChainState {
        atom_coords: (0..na).map(|_| gauss3(rng, rot)).collect(),
        atom_types: (0..na).map(|_| rng.random_range(0..NUM_ATOM_TYPES)).collect(),
        motif_coords: (0..layout.len()).map(|_| gauss3(rng, rot)).collect(),
        motif_classes: (0..layout.len()).map(|_| rng.random_range(0..=w)).collect(),
        membership,
    };
    let mut snapshots = Vec::new();
    let record = |t: usize, state: &ChainState, snapshots: &mut Vec<Snapshot>| {
        if cfg.snapshots.contains(&t) {
            snapshots.push(Snapshot { t, molecule: world_molecule(state, &pocket.frame, &format!("{name} t={t}")) });
        }
    };
    for t in (1..=schedule.steps()).rev() {
        observe(t, &state);
        record(t, &state, &mut snapshots);
        let ligand = LigandNodes {
            coords: state.atom_coords.clone(),
            types: state.atom_types.clone(),
            fingerprint: ligand_fingerprint(&state.atom_coords, model),
        };
        let motifs = MotifNodes {
            coords: state.motif_coords.clone(),
            classes: state.motif_classes.clone(),
            membership: state.membership.clone(),
        };
        let wrap = |source| DiffusionError::Denoiser { index: t, source };
        let graph = build_graph(&ligand, &motifs, &pocket.nodes, w, params.config.k).map_err(wrap)?;
        let run = |c| {
            forward(&graph, params, t, c).map_err(wrap).map(|(mut out, _)| {
                model.coord_target.noise_in_place(schedule, t, &mut out.eps);
                out
            })
        };
        let cond = run(Condition::Pocket)?;
        let uncond = if cfg.guidance_scale == 1.0 { None } else { Some(run(Condition::Null)?) };
        let out = guided(cond, uncond, cfg.guidance_scale);
        let (eps_a, eps_m) = out.eps.split_at(na);
        state.atom_coords = step_coords(schedule, &state.atom_coords, eps_a, t, rot, rng);
        state.motif_coords = step_coords(schedule, &state.motif_coords, eps_m, t, rot, rng);
        state.atom_types = step_classes(schedule, &state.atom_types, out.type_logits.view(), t, rng);
        state.motif_classes = step_classes(schedule, &state.motif_classes, out.motif_logits.view(), t, rng);
        consistency_project(&mut state.atom_coords, &mut state.motif_coords, &state.membership, cfg.gamma);
    }
    observe(0, &state);
    record(0, &state, &mut snapshots);
    let molecule = world_molecule(&state, &pocket.frame, name);
    let view = final_view(&state, &molecule, w);
    let validity = check_validity(&molecule);
    Ok(SampleResult { molecule, view, validity, snapshots })
}

#[allow(clippy::too_many_arguments)]
pub fn sample<R: Rng + ?Sized>(
    pocket: &PocketContext,
    layout: &[usize],
    params: &DenoiserParams,
    schedule: &DiffusionSchedule,
    model: &ModelConfig,
    cfg: &SampleConfig,
    name: &str,
    rng: &mut R,
) -> Result<SampleResult, DiffusionError> {
    sample_observed(pocket, layout, params, schedule, model, cfg, name, rng, |_, _| {})
}

/// Where each chain's motif-size layout comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum LayoutChoice {
    Fixed(Vec<usize>),
    /// `(layout, count)` pairs from a training corpus.
    Histogram(Vec<(Vec<usize>, usize)>),
}

/// `n` independent chains in parallel; chain `i` owns the stream seeded with
/// `seed + i`, which first draws the layout when it comes from a histogram.
#[allow(clippy::too_many_arguments)]
pub fn sample_chains(
    pocket: &PocketContext,
    layouts: &LayoutChoice,
    n: usize,
    params: &DenoiserParams,
    schedule: &DiffusionSchedule,
    model: &ModelConfig,
    cfg: &SampleConfig,
    seed: u64,
) -> Vec<Result<SampleResult, DiffusionError>> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let layout = match layouts {
                LayoutChoice::Fixed(l) => l.clone(),
                LayoutChoice::Histogram(h) => draw_layout(h, &mut rng)
                    .ok_or_else(|| DiffusionError::Input("empty layout histogram".into()))?,
            };
            sample(pocket, &layout, params, schedule, model, cfg, &format!("sample-{i}"), &mut rng)
        })
        .collect()
}
