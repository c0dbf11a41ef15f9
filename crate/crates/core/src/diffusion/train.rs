//! Joint atom/motif training objective and the optimization loop.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::categorical::{q_sample_type, type_loss_and_grad};
use super::continuous::{loss_weight, q_sample_pos};
use super::{DiffusionError, DiffusionSchedule, ModelConfig};
use crate::denoiser::{backward, build_graph, forward, Condition, DenoiserParams, LigandNodes, MotifNodes, OutputGrad};
use crate::molio::{mean, MolecularGraph, PocketCloud, Vec3, POCKET_FEATURES};
use crate::motif::{motif_view, MotifVocabulary};
use crate::topo::{fingerprint_with, TopoFingerprint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Plain gradient descent without momentum.
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Weight of the atom-type loss.
    pub lambda1: f64,
    /// Weight of the motif-ID loss.
    pub lambda2: f64,
    /// Probability of replacing the pocket with the null condition.
    pub p_uncond: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
    /// Examples per step; 0 uses the whole corpus.
    pub batch_size: usize,
    /// Independent noise draws per example within a step.
    pub draws_per_example: usize,
    /// Unit weight on the coordinate loss instead of the per-step weight.
    pub simple_loss: bool,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm clip.
    pub grad_clip: Option<f64>,
    /// Cosine decay of the learning rate to zero over `steps`.
    pub lr_decay: bool,
    /// Keep an exponential moving average of the weights and hand it back
    /// instead of the raw iterate.
    pub ema_decay: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda1: 1.0,
            lambda2: 1.0,
            p_uncond: 0.1,
            learning_rate: 1e-3,
            steps: 1000,
            seed: 0,
            batch_size: 0,
            draws_per_example: 1,
            simple_loss: true,
            optimizer: OptimizerKind::Sgd,
            grad_clip: None,
            lr_decay: false,
            ema_decay: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), DiffusionError> {
        let bad = |m: &str| Err(DiffusionError::Config(m.to_string()));
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return bad("lambda1 and lambda2 must be >= 0");
        }
        if !(0.0..1.0).contains(&self.p_uncond) {
            return bad("p_uncond must be in [0, 1)");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.draws_per_example == 0 {
            return bad("draws_per_example must be >= 1");
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad("grad_clip must be positive");
            }
        }
        if let Some(d) = self.ema_decay {
            if !(0.0..1.0).contains(&d) {
                return bad("ema_decay must be in [0, 1)");
            }
        }
        Ok(())
    }
}

/// Maps world coordinates (Å) into the model frame, centered on the pocket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub center: Vec3,
    pub scale: f64,
}

impl Frame {
    pub fn to_model(&self, p: &Vec3) -> Vec3 {
        std::array::from_fn(|c| (p[c] - self.center[c]) / self.scale)
    }

    pub fn to_world(&self, p: &Vec3) -> Vec3 {
        std::array::from_fn(|c| p[c] * self.scale + self.center[c])
    }
}

/// Pocket nodes in the model frame with their cached fingerprint.
#[derive(Debug, Clone)]
pub struct PocketContext {
    pub frame: Frame,
    pub nodes: crate::denoiser::PocketNodes,
}

impl PocketContext {
    pub fn new(pocket: &PocketCloud, model: &ModelConfig) -> Result<Self, DiffusionError> {
        let frame = Frame { center: pocket.center, scale: model.coord_scale };
        let world: Vec<Vec3> = pocket.coords();
        let fp = if world.len() >= 2 {
            fingerprint_with(&world, model.topo_filtration).map_err(|e| DiffusionError::Input(e.to_string()))?
        } else {
            TopoFingerprint::zeros()
        };
        let mut context: Vec<_> = pocket.context.iter().collect();
        context.sort_by(|a, b| {
            crate::molio::dist(&a.coord, &pocket.center).total_cmp(&crate::molio::dist(&b.coord, &pocket.center))
        });
        context.truncate(model.context_atoms);
        let nodes = crate::denoiser::PocketNodes {
            coords: world.iter().map(|p| frame.to_model(p)).collect(),
            features: pocket.atoms.iter().map(|a| a.features()).collect(),
            context_coords: context.iter().map(|a| frame.to_model(&a.coord)).collect(),
            context_features: context.iter().map(|a| a.features()).collect::<Vec<[f64; POCKET_FEATURES]>>(),
            fingerprint: fp,
            anchor: [0.0; 3],
        };
        Ok(PocketContext { frame, nodes })
    }
}

/// Topological fingerprint of model-frame ligand coordinates, measured in Å.
pub fn ligand_fingerprint(coords: &[Vec3], model: &ModelConfig) -> TopoFingerprint {
    if coords.len() < 2 {
        return TopoFingerprint::zeros();
    }
    let world: Vec<Vec3> = coords.iter().map(|p| p.map(|v| v * model.coord_scale)).collect();
    fingerprint_with(&world, model.topo_filtration).unwrap_or_else(|_| TopoFingerprint::zeros())
}

/// One ligand-pocket pair prepared for training. Atoms are heavy atoms only
/// and ordered so every motif's members are contiguous.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub name: String,
    pub pocket: PocketContext,
    pub atom_coords: Vec<Vec3>,
    pub atom_types: Vec<usize>,
    pub motif_coords: Vec<Vec3>,
    pub motif_classes: Vec<usize>,
    pub membership: Vec<usize>,
    /// Atom count of each motif, in motif order.
    pub layout: Vec<usize>,
}

impl TrainExample {
    pub fn new(
        ligand: &MolecularGraph,
        vocab: &MotifVocabulary,
        pocket: &PocketCloud,
        model: &ModelConfig,
    ) -> Result<Self, DiffusionError> {
        if model.denoiser.vocab_size != vocab.len() {
            return Err(DiffusionError::Config(format!(
                "network vocabulary size {} but vocabulary has {} entries",
                model.denoiser.vocab_size,
                vocab.len()
            )));
        }
        let heavy = ligand.heavy_atoms();
        if heavy.is_empty() {
            return Err(DiffusionError::Input(format!("ligand {} has no heavy atoms", ligand.name)));
        }
        let view = motif_view(&heavy, vocab);
        let pocket_ctx = PocketContext::new(pocket, model)?;
        let frame = pocket_ctx.frame;
        let mut atom_coords = Vec::new();
        let mut atom_types = Vec::new();
        let mut membership = Vec::new();
        let mut motif_coords = Vec::new();
        let mut motif_classes = Vec::new();
        let mut layout = Vec::new();
        for (k, m) in view.motifs.iter().enumerate() {
            let pts: Vec<Vec3> = m.members.iter().map(|&a| frame.to_model(&heavy.atoms()[a].coord)).collect();
            motif_coords.push(mean(&pts));
            motif_classes.push(m.id.class_index(vocab.len()));
            layout.push(m.members.len());
            for (&a, p) in m.members.iter().zip(pts) {
                atom_coords.push(p);
                atom_types.push(heavy.atoms()[a].type_index());
                membership.push(k);
            }
        }
        Ok(TrainExample {
            name: ligand.name.clone(),
            pocket: pocket_ctx,
            atom_coords,
            atom_types,
            motif_coords,
            motif_classes,
            membership,
            layout,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub atom_pos: f64,
    pub atom_type: f64,
    pub motif_pos: f64,
    pub motif_id: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn add(&mut self, o: &LossBreakdown) {
        self.atom_pos += o.atom_pos;
        self.atom_type += o.atom_type;
        self.motif_pos += o.motif_pos;
        self.motif_id += o.motif_id;
        self.total += o.total;
    }

    fn scale(&mut self, s: f64) {
        self.atom_pos *= s;
        self.atom_type *= s;
        self.motif_pos *= s;
        self.motif_id *= s;
        self.total *= s;
    }

    pub fn combine(&self, lambda1: f64, lambda2: f64) -> f64 {
        self.atom_pos + lambda1 * self.atom_type + self.motif_pos + lambda2 * self.motif_id
    }
}

/// Random quantities of one training evaluation.
#[derive(Debug, Clone)]
pub struct NoiseDraw {
    pub t: usize,
    pub eps_atoms: Vec<Vec3>,
    pub eps_motifs: Vec<Vec3>,
    pub types_t: Vec<usize>,
    pub classes_t: Vec<usize>,
    pub condition: Condition,
}

fn gauss3<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    std::array::from_fn(|_| StandardNormal.sample(rng))
}

impl NoiseDraw {
    pub fn draw<R: Rng + ?Sized>(
        ex: &TrainExample,
        schedule: &DiffusionSchedule,
        vocab_size: usize,
        p_uncond: f64,
        rng: &mut R,
    ) -> Self {
        let t = rng.random_range(1..=schedule.steps());
        let eps_atoms = (0..ex.atom_coords.len()).map(|_| gauss3(rng)).collect();
        let eps_motifs = (0..ex.motif_coords.len()).map(|_| gauss3(rng)).collect();
        let types_t = ex
            .atom_types
            .iter()
            .map(|&c| q_sample_type(schedule, c, crate::molio::NUM_ATOM_TYPES, t, rng))
            .collect();
        let classes_t = ex
            .motif_classes
            .iter()
            .map(|&c| if vocab_size == 0 { c } else { q_sample_type(schedule, c, vocab_size + 1, t, rng) })
            .collect();
        let condition = if p_uncond > 0.0 && rng.random::<f64>() < p_uncond { Condition::Null } else { Condition::Pocket };
        NoiseDraw { t, eps_atoms, eps_motifs, types_t, classes_t, condition }
    }
}

/// Loss of one example under one draw, and optionally its parameter gradient.
pub fn example_loss(
    ex: &TrainExample,
    draw: &NoiseDraw,
    params: &DenoiserParams,
    schedule: &DiffusionSchedule,
    model: &ModelConfig,
    cfg: &TrainConfig,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Vec<f64>>), crate::denoiser::DenoiserError> {
    let t = draw.t;
    let w = params.config.vocab_size;
    let xt = q_sample_pos(schedule, &ex.atom_coords, t, &draw.eps_atoms);
    let mt = q_sample_pos(schedule, &ex.motif_coords, t, &draw.eps_motifs);
    let ligand = LigandNodes { fingerprint: ligand_fingerprint(&xt, model), coords: xt, types: draw.types_t.clone() };
    let motifs = MotifNodes { coords: mt, classes: draw.classes_t.clone(), membership: ex.membership.clone() };
    let graph = build_graph(&ligand, &motifs, &ex.pocket.nodes, w, params.config.k)?;
    let (mut out, tape) = forward(&graph, params, t, draw.condition)?;
    model.coord_target.noise_in_place(schedule, t, &mut out.eps);
    let slope = model.coord_target.noise_slope(schedule, t);

    let na = ex.atom_coords.len();
    let nm = ex.motif_coords.len();
    let weight = loss_weight(schedule, t, cfg.simple_loss);
    let mut og = OutputGrad::zeros(&graph);
    let mut loss = LossBreakdown::default();
    for (i, eps) in draw.eps_atoms.iter().chain(&draw.eps_motifs).enumerate() {
        let (n, slot) = if i < na { (na, &mut loss.atom_pos) } else { (nm, &mut loss.motif_pos) };
        for c in 0..3 {
            let r = out.eps[i][c] - eps[c];
            *slot += weight * r * r / n as f64;
            og.eps[i][c] = 2.0 * weight * r * slope / n as f64;
        }
    }
    for i in 0..na {
        let logits: Vec<f64> = out.type_logits.row(i).to_vec();
        let (l, g) = type_loss_and_grad(schedule, t, draw.types_t[i], ex.atom_types[i], &logits);
        loss.atom_type += l / na as f64;
        for (k, gv) in g.iter().enumerate() {
            og.type_logits[[i, k]] = cfg.lambda1 * gv / na as f64;
        }
    }
    for i in 0..nm {
        let logits: Vec<f64> = out.motif_logits.row(i).to_vec();
        let (l, g) = type_loss_and_grad(schedule, t, draw.classes_t[i], ex.motif_classes[i], &logits);
        loss.motif_id += l / nm as f64;
        for (k, gv) in g.iter().enumerate() {
            og.motif_logits[[i, k]] = cfg.lambda2 * gv / nm as f64;
        }
    }
    loss.total = loss.combine(cfg.lambda1, cfg.lambda2);
    let grad = want_grad.then(|| backward(&graph, params, &tape, &og));
    Ok((loss, grad))
}

/// Optimizer state over the flat parameter vector.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    clip: Option<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Optimizer {
    pub fn new(cfg: &TrainConfig, n_params: usize) -> Self {
        let (m, v) = match cfg.optimizer {
            OptimizerKind::Adam => (vec![0.0; n_params], vec![0.0; n_params]),
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
        };
        Optimizer { kind: cfg.optimizer, lr: cfg.learning_rate, clip: cfg.grad_clip, m, v, step: 0 }
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &mut [f64]) {
        if let Some(c) = self.clip {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > c {
                grad.iter_mut().for_each(|g| *g *= c / norm);
            }
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad.iter()) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2, eps) = (0.9, 0.999, 1e-8);
                let c1 = 1.0 - f64::powi(b1, self.step);
                let c2 = 1.0 - f64::powi(b2, self.step);
                for k in 0..params.len() {
                    self.m[k] = b1 * self.m[k] + (1.0 - b1) * grad[k];
                    self.v[k] = b2 * self.v[k] + (1.0 - b2) * grad[k] * grad[k];
                    params[k] -= self.lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + eps);
                }
            }
        }
    }
}

/// One optimization step over `batch`: independent noise per example,
/// gradients averaged over the batch.
pub fn train_step<R: Rng + ?Sized>(
    batch: &[&TrainExample],
    params: &mut DenoiserParams,
    optimizer: &mut Optimizer,
    schedule: &DiffusionSchedule,
    model: &ModelConfig,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<LossBreakdown, DiffusionError> {
    let w = params.config.vocab_size;
    let draws: Vec<NoiseDraw> = batch.iter().map(|ex| NoiseDraw::draw(ex, schedule, w, cfg.p_uncond, rng)).collect();
    let results: Vec<_> = batch
        .par_iter()
        .zip(&draws)
        .map(|(ex, d)| example_loss(ex, d, params, schedule, model, cfg, true))
        .collect();
    let mut grad = params.zeros_like();
    let mut loss = LossBreakdown::default();
    for (index, r) in results.into_iter().enumerate() {
        let (l, g) = r.map_err(|source| DiffusionError::Denoiser { index, source })?;
        loss.add(&l);
        for (a, b) in grad.iter_mut().zip(g.expect("gradient requested")) {
            *a += b;
        }
    }
    let inv = 1.0 / batch.len() as f64;
    loss.scale(inv);
    grad.iter_mut().for_each(|g| *g *= inv);
    optimizer.apply(&mut params.values, &mut grad);
    if !params.all_finite() {
        return Err(DiffusionError::Denoiser {
            index: 0,
            source: crate::denoiser::DenoiserError::NumericOverflow { layer: params.config.layers },
        });
    }
    Ok(loss)
}

/// Runs `cfg.steps` training steps, reporting each step's loss together
/// with the weights that will be returned (the running average when
/// `ema_decay` is set).
pub fn train(
    examples: &[TrainExample],
    params: &mut DenoiserParams,
    schedule: &DiffusionSchedule,
    model: &ModelConfig,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, &LossBreakdown, &DenoiserParams),
) -> Result<(), DiffusionError> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(DiffusionError::Input("no training examples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = Optimizer::new(cfg, params.values.len());
    let mut raw = cfg.ema_decay.map(|_| params.clone());
    let bs = if cfg.batch_size == 0 { examples.len() } else { cfg.batch_size.min(examples.len()) };
    for step in 0..cfg.steps {
        if cfg.lr_decay {
            let phase = std::f64::consts::PI * step as f64 / cfg.steps as f64;
            optimizer.set_learning_rate(cfg.learning_rate * 0.5 * (1.0 + phase.cos()));
        }
        let chosen: Vec<&TrainExample> = if bs == examples.len() {
            examples.iter().collect()
        } else {
            let mut idx = sample_indices(&mut rng, examples.len(), bs).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| &examples[i]).collect()
        };
        let batch: Vec<&TrainExample> =
            chosen.iter().flat_map(|ex| std::iter::repeat_n(*ex, cfg.draws_per_example)).collect();
        let loss = match (&mut raw, cfg.ema_decay) {
            (Some(raw), Some(decay)) => {
                let loss = train_step(&batch, raw, &mut optimizer, schedule, model, cfg, &mut rng)?;
                // Short warm-up so early averages are not dominated by the initialization.
                let d = decay.min((1.0 + step as f64) / (10.0 + step as f64));
                for (e, w) in params.values.iter_mut().zip(&raw.values) {
                    *e = d * *e + (1.0 - d) * w;
                }
                loss
            }
            _ => train_step(&batch, params, &mut optimizer, schedule, model, cfg, &mut rng)?,
        };
        on_step(step, &loss, params);
    }
    Ok(())
}

/// Mean loss over a fixed panel of `draws` noise draws per example, always
/// with the pocket condition. Same seed, same panel.
pub fn evaluate_loss(
    examples: &[TrainExample],
    params: &DenoiserParams,
    schedule: &DiffusionSchedule,
    model: &ModelConfig,
    cfg: &TrainConfig,
    seed: u64,
    draws: usize,
) -> Result<LossBreakdown, DiffusionError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = params.config.vocab_size;
    let jobs: Vec<(usize, NoiseDraw)> = examples
        .iter()
        .enumerate()
        .flat_map(|(i, ex)| (0..draws).map(move |_| i).zip(std::iter::repeat(ex)))
        .map(|(i, ex)| (i, NoiseDraw::draw(ex, schedule, w, 0.0, &mut rng)))
        .collect();
    let results: Vec<_> = jobs
        .par_iter()
        .map(|(i, d)| example_loss(&examples[*i], d, params, schedule, model, cfg, false))
        .collect();
    let mut total = LossBreakdown::default();
    for (index, r) in results.into_iter().enumerate() {
        let (l, _) = r.map_err(|source| DiffusionError::Denoiser { index, source })?;
        total.add(&l);
    }
    total.scale(1.0 / jobs.len().max(1) as f64);
    Ok(total)
}
