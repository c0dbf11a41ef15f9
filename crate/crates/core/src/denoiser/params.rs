//! Flat parameter storage with a named tensor layout, initialization and the
//! binary checkpoint format.

use std::io::{Read, Write};

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{feature_dim, DenoiserConfig, DenoiserError, EDGE_TYPES};
use crate::molio::NUM_ATOM_TYPES;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered tensor names and shapes. Dense layers store weight `(out, in)`
/// then bias `(1, out)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub entries: Vec<ParamEntry>,
    pub total: usize,
}

impl ParamLayout {
    pub fn new(cfg: &DenoiserConfig) -> Self {
        let h = cfg.hidden;
        let r = cfg.rbf_count;
        let mut entries = Vec::new();
        let mut total = 0;
        let mut push = |name: String, rows: usize, cols: usize| {
            entries.push(ParamEntry { name, rows, cols, offset: total });
            total += rows * cols;
        };
        let dense = |push: &mut dyn FnMut(String, usize, usize), name: &str, out: usize, inp: usize| {
            push(format!("{name}.w"), out, inp);
            push(format!("{name}.b"), 1, out);
        };
        dense(&mut push, "embed", h, feature_dim(cfg.vocab_size) + cfg.time_dim);
        push("null".into(), 1, h);
        for l in 0..cfg.layers {
            dense(&mut push, &format!("l{l}.mes1"), h, 2 * h + EDGE_TYPES + cfg.time_dim + r);
            dense(&mut push, &format!("l{l}.mes2"), h, h);
            dense(&mut push, &format!("l{l}.upd1"), h, 2 * h);
            dense(&mut push, &format!("l{l}.upd2"), h, h);
            dense(&mut push, &format!("l{l}.edge"), 1, h);
            dense(&mut push, &format!("l{l}.anc1"), h, h + r);
            dense(&mut push, &format!("l{l}.anc2"), 1, h);
        }
        dense(&mut push, "type1", h, h);
        dense(&mut push, "type2", NUM_ATOM_TYPES, h);
        dense(&mut push, "motif1", h, h);
        dense(&mut push, "motif2", cfg.vocab_size + 1, h);
        ParamLayout { entries, total }
    }

    pub fn get(&self, name: &str) -> &ParamEntry {
        self.entries.iter().find(|e| e.name == name).unwrap_or_else(|| panic!("no parameter {name}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub config: DenoiserConfig,
    pub layout: ParamLayout,
    pub values: Vec<f64>,
}

impl DenoiserParams {
    pub fn zeros(config: DenoiserConfig) -> Self {
        let layout = ParamLayout::new(&config);
        let values = vec![0.0; layout.total];
        DenoiserParams { config, layout, values }
    }

    /// Gaussian weights with variance `1/fan_in`; biases zero. The scalar
    /// coordinate heads start ten times smaller.
    pub fn init(config: DenoiserConfig, seed: u64) -> Self {
        let mut p = Self::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for e in p.layout.entries.clone() {
            let scale = if e.name == "null" {
                1.0
            } else if e.name.ends_with(".b") {
                continue;
            } else {
                let small = e.name.ends_with("edge.w") || e.name.ends_with("anc2.w");
                (1.0 / e.cols as f64).sqrt() * if small { 0.1 } else { 1.0 }
            };
            let normal = Normal::new(0.0, scale).expect("positive scale");
            for v in &mut p.values[e.range()] {
                *v = normal.sample(&mut rng);
            }
        }
        p
    }

    pub fn matrix(&self, name: &str) -> ArrayView2<'_, f64> {
        let e = self.layout.get(name);
        ArrayView2::from_shape((e.rows, e.cols), &self.values[e.range()]).expect("layout shape")
    }

    pub fn vector(&self, name: &str) -> ArrayView1<'_, f64> {
        let e = self.layout.get(name);
        ArrayView1::from(&self.values[e.range()])
    }

    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.values.len()]
    }

    pub fn slice_mut<'a>(&self, grad: &'a mut [f64], name: &str) -> &'a mut [f64] {
        let e = self.layout.get(name);
        &mut grad[e.range()]
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn matrix_mut<'a>(layout: &ParamLayout, grad: &'a mut [f64], name: &str) -> ArrayViewMut2<'a, f64> {
    let e = layout.get(name);
    ArrayViewMut2::from_shape((e.rows, e.cols), &mut grad[e.range()]).expect("layout shape")
}

pub(crate) fn vector_mut<'a>(layout: &ParamLayout, grad: &'a mut [f64], name: &str) -> ArrayViewMut1<'a, f64> {
    let e = layout.get(name);
    ArrayViewMut1::from(&mut grad[e.range()])
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AMDF";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    denoiser: DenoiserConfig,
    extra: serde_json::Value,
}

/// Header `AMDF`, version, H, L, V, W, T as little-endian u32, then a
/// length-prefixed JSON block (network config plus caller metadata), then
/// every tensor in layout order as little-endian f32.
pub fn write_checkpoint<W: Write>(
    out: &mut W,
    params: &DenoiserParams,
    steps: usize,
    extra: &serde_json::Value,
) -> std::io::Result<()> {
    let c = &params.config;
    out.write_all(CHECKPOINT_MAGIC)?;
    for v in [CHECKPOINT_VERSION, c.hidden as u32, c.layers as u32, NUM_ATOM_TYPES as u32, c.vocab_size as u32, steps as u32] {
        out.write_all(&v.to_le_bytes())?;
    }
    let meta = serde_json::to_vec(&CheckpointMeta { denoiser: c.clone(), extra: extra.clone() })
        .map_err(std::io::Error::other)?;
    out.write_all(&(meta.len() as u32).to_le_bytes())?;
    out.write_all(&meta)?;
    let mut blob = Vec::with_capacity(params.values.len() * 4);
    for &v in &params.values {
        blob.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.write_all(&blob)
}

pub struct Checkpoint {
    pub params: DenoiserParams,
    pub steps: usize,
    pub extra: serde_json::Value,
}

pub fn read_checkpoint<R: Read>(input: &mut R) -> Result<Checkpoint, DenoiserError> {
    let bad = |m: &str| DenoiserError::Checkpoint(m.to_string());
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| DenoiserError::Checkpoint(e.to_string()))?;
    if bytes.len() < 32 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap()) as usize;
    let (version, h, l, v, w, steps, meta_len) = (word(0), word(1), word(2), word(3), word(4), word(5), word(6));
    if version != CHECKPOINT_VERSION as usize {
        return Err(DenoiserError::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    if v != NUM_ATOM_TYPES {
        return Err(DenoiserError::Checkpoint(format!("atom type count {v}, expected {NUM_ATOM_TYPES}")));
    }
    let body = 32usize;
    let meta_bytes = bytes.get(body..body + meta_len).ok_or_else(|| bad("truncated config block"))?;
    let meta: CheckpointMeta =
        serde_json::from_slice(meta_bytes).map_err(|e| DenoiserError::Checkpoint(format!("config block: {e}")))?;
    let c = &meta.denoiser;
    if c.hidden != h || c.layers != l || c.vocab_size != w {
        return Err(bad("header and config block disagree"));
    }
    let mut params = DenoiserParams::zeros(meta.denoiser);
    let blob = &bytes[body + meta_len..];
    if blob.len() != params.values.len() * 4 {
        return Err(DenoiserError::Checkpoint(format!(
            "parameter blob has {} bytes, expected {}",
            blob.len(),
            params.values.len() * 4
        )));
    }
    for (v, chunk) in params.values.iter_mut().zip(blob.chunks_exact(4)) {
        *v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
    }
    Ok(Checkpoint { params, steps, extra: meta.extra })
}
