use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::graph::HeteroGraph;
use super::params::{matrix_mut, vector_mut, DenoiserParams};
use super::{DenoiserError, EDGE_TYPES};
use crate::molio::{Vec3, NUM_ATOM_TYPES};

/// Keeps edge lengths differentiable when two nodes coincide.
const LENGTH_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    Pocket,
    /// Pocket and protein embeddings replaced by the learned null vector.
    Null,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserOutput {
    /// Final coordinates of the mutable nodes (ligand atoms, then motifs).
    pub coords: Vec<Vec3>,
    /// Coordinate displacement of each mutable node, read as predicted noise.
    pub eps: Vec<Vec3>,
    pub type_logits: Array2<f64>,
    pub motif_logits: Array2<f64>,
}

/// Loss gradient with respect to every output of [`forward`].
#[derive(Debug, Clone)]
pub struct OutputGrad {
    pub eps: Vec<Vec3>,
    pub type_logits: Array2<f64>,
    pub motif_logits: Array2<f64>,
}

impl OutputGrad {
    pub fn zeros(graph: &HeteroGraph) -> Self {
        OutputGrad {
            eps: vec![[0.0; 3]; graph.n_mutable()],
            type_logits: Array2::zeros((graph.n_ligand, NUM_ATOM_TYPES)),
            motif_logits: Array2::zeros((graph.n_motif, graph.vocab_size + 1)),
        }
    }
}

struct LayerTape {
    diff: Array2<f64>,
    d: Array1<f64>,
    rbf: Array2<f64>,
    m_in: Array2<f64>,
    a1: Array2<f64>,
    z1: Array2<f64>,
    a2: Array2<f64>,
    m: Array2<f64>,
    u_in: Array2<f64>,
    ua: Array2<f64>,
    uz: Array2<f64>,
    s: Array1<f64>,
    dc: Array2<f64>,
    dcn: Array1<f64>,
    rbfc: Array2<f64>,
    anc_in: Array2<f64>,
    aa: Array2<f64>,
    az: Array2<f64>,
    a: Array1<f64>,
}

/// Intermediate values recorded by [`forward`] for [`backward`].
pub struct Tape {
    layers: Vec<LayerTape>,
    f_in: Array2<f64>,
    h_last: Array2<f64>,
    type_a: Array2<f64>,
    type_z: Array2<f64>,
    motif_a: Array2<f64>,
    motif_z: Array2<f64>,
    condition: Condition,
}

/// Sinusoidal embedding of the step index: `sin(t w_k), cos(t w_k)` with
/// geometrically spaced frequencies.
pub fn time_embedding(t: usize, dim: usize) -> Array1<f64> {
    let half = dim / 2;
    let mut out = Array1::zeros(dim);
    for k in 0..half {
        let freq = (-(10000f64.ln()) * k as f64 / half as f64).exp();
        out[k] = (t as f64 * freq).sin();
        out[half + k] = (t as f64 * freq).cos();
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(a: &Array2<f64>) -> Array2<f64> {
    a.mapv(|x| x * sigmoid(x))
}

fn silu_grad(g: &Array2<f64>, a: &Array2<f64>) -> Array2<f64> {
    let mut out = g.clone();
    out.zip_mut_with(a, |gv, &x| {
        let s = sigmoid(x);
        *gv *= s * (1.0 + x * (1.0 - s));
    });
    out
}

fn dense(x: &Array2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    x.dot(&w.t()) + &b
}

struct Rbf {
    centers: Vec<f64>,
    width: f64,
}

impl Rbf {
    fn new(count: usize, max: f64) -> Self {
        let width = max / (count - 1) as f64;
        Rbf { centers: (0..count).map(|k| k as f64 * width).collect(), width }
    }

    fn eval(&self, d: f64, out: &mut [f64]) {
        for (o, &c) in out.iter_mut().zip(&self.centers) {
            let z = (d - c) / self.width;
            *o = (-z * z).exp();
        }
    }

    /// `sum_r g_r * d phi_r / d d`.
    fn backprop(&self, d: f64, phi: ArrayView1<f64>, g: ArrayView1<f64>) -> f64 {
        let w2 = self.width * self.width;
        self.centers.iter().zip(phi).zip(g).map(|((&c, &p), &gv)| gv * p * (-2.0 * (d - c) / w2)).sum()
    }
}

fn all_finite(a: &Array2<f64>) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Runs the network. `t` is the diffusion step and only enters through the
/// time embedding.
pub fn forward(
    graph: &HeteroGraph,
    params: &DenoiserParams,
    t: usize,
    condition: Condition,
) -> Result<(DenoiserOutput, Tape), DenoiserError> {
    let cfg = &params.config;
    if graph.vocab_size != cfg.vocab_size {
        return Err(DenoiserError::Input(format!(
            "graph built for vocabulary {} but network has {}",
            graph.vocab_size, cfg.vocab_size
        )));
    }
    let n = graph.len();
    let ne = graph.edges.len();
    let hd = cfg.hidden;
    let r = cfg.rbf_count;
    let td = cfg.time_dim;
    let rbf = Rbf::new(r, cfg.rbf_max);
    let temb = time_embedding(t, td);
    let norm = graph.k as f64;

    let fdim = graph.features.ncols();
    let mut f_in = Array2::zeros((n, fdim + td));
    f_in.slice_mut(s![.., ..fdim]).assign(&graph.features);
    for mut row in f_in.rows_mut() {
        row.slice_mut(s![fdim..]).assign(&temb);
    }
    let mut h = dense(&f_in, params.matrix("embed.w"), params.vector("embed.b"));
    if condition == Condition::Null {
        let null = params.vector("null");
        for (i, kind) in graph.kinds.iter().enumerate() {
            if kind.is_condition() {
                h.row_mut(i).assign(&null);
            }
        }
    }
    let mut x = Array2::from_shape_fn((n, 3), |(i, c)| graph.coords[i][c]);
    let x0 = x.clone();

    let mut layers = Vec::with_capacity(cfg.layers);
    let m_width = 2 * hd + EDGE_TYPES + td + r;
    for l in 0..cfg.layers {
        let name = |p: &str| format!("l{l}.{p}");
        let mut diff = Array2::zeros((ne, 3));
        let mut d = Array1::zeros(ne);
        let mut rbf_e = Array2::zeros((ne, r));
        let mut m_in = Array2::zeros((ne, m_width));
        for (k, e) in graph.edges.iter().enumerate() {
            let mut sq = 0.0;
            for c in 0..3 {
                let v = x[[e.dst, c]] - x[[e.src, c]];
                diff[[k, c]] = v;
                sq += v * v;
            }
            d[k] = (sq + LENGTH_EPS).sqrt();
            rbf.eval(d[k], rbf_e.row_mut(k).as_slice_mut().unwrap());
            let mut row = m_in.row_mut(k);
            row.slice_mut(s![..hd]).assign(&h.row(e.dst));
            row.slice_mut(s![hd..2 * hd]).assign(&h.row(e.src));
            row[2 * hd + e.etype] = 1.0;
            row.slice_mut(s![2 * hd + EDGE_TYPES..2 * hd + EDGE_TYPES + td]).assign(&temb);
            row.slice_mut(s![2 * hd + EDGE_TYPES + td..]).assign(&rbf_e.row(k));
        }
        let a1 = dense(&m_in, params.matrix(&name("mes1.w")), params.vector(&name("mes1.b")));
        let z1 = silu(&a1);
        let a2 = dense(&z1, params.matrix(&name("mes2.w")), params.vector(&name("mes2.b")));
        let m = silu(&a2);

        let mut agg = Array2::zeros((n, hd));
        for (k, e) in graph.edges.iter().enumerate() {
            let mut row = agg.row_mut(e.dst);
            row.scaled_add(1.0 / norm, &m.row(k));
        }
        let mut u_in = Array2::zeros((n, 2 * hd));
        u_in.slice_mut(s![.., ..hd]).assign(&h);
        u_in.slice_mut(s![.., hd..]).assign(&agg);
        let ua = dense(&u_in, params.matrix(&name("upd1.w")), params.vector(&name("upd1.b")));
        let uz = silu(&ua);
        let h_new = &h + &dense(&uz, params.matrix(&name("upd2.w")), params.vector(&name("upd2.b")));

        let ew = params.matrix(&name("edge.w"));
        let eb = params.vector(&name("edge.b"))[0];
        let s_e: Array1<f64> = m.dot(&ew.row(0)) + eb;

        let mut dc = Array2::zeros((n, 3));
        let mut dcn = Array1::zeros(n);
        let mut rbfc = Array2::zeros((n, r));
        for i in 0..n {
            let mut sq = 0.0;
            for c in 0..3 {
                let v = x[[i, c]] - graph.anchor[c];
                dc[[i, c]] = v;
                sq += v * v;
            }
            dcn[i] = (sq + LENGTH_EPS).sqrt();
            rbf.eval(dcn[i], rbfc.row_mut(i).as_slice_mut().unwrap());
        }
        let mut anc_in = Array2::zeros((n, hd + r));
        anc_in.slice_mut(s![.., ..hd]).assign(&h_new);
        anc_in.slice_mut(s![.., hd..]).assign(&rbfc);
        let aa = dense(&anc_in, params.matrix(&name("anc1.w")), params.vector(&name("anc1.b")));
        let az = silu(&aa);
        let a: Array1<f64> = az.dot(&params.matrix(&name("anc2.w")).row(0)) + params.vector(&name("anc2.b"))[0];

        let mut x_new = x.clone();
        for (k, e) in graph.edges.iter().enumerate() {
            if graph.mutable[e.dst] {
                let coef = s_e[k] / ((d[k] + 1.0) * norm);
                for c in 0..3 {
                    x_new[[e.dst, c]] += diff[[k, c]] * coef;
                }
            }
        }
        for i in 0..n {
            if graph.mutable[i] {
                for c in 0..3 {
                    x_new[[i, c]] += dc[[i, c]] * a[i];
                }
            }
        }
        if !all_finite(&h_new) || !all_finite(&x_new) {
            return Err(DenoiserError::NumericOverflow { layer: l });
        }
        x = x_new;
        h = h_new;
        layers.push(LayerTape {
            diff,
            d,
            rbf: rbf_e,
            m_in,
            a1,
            z1,
            a2,
            m,
            u_in,
            ua,
            uz,
            s: s_e,
            dc,
            dcn,
            rbfc,
            anc_in,
            aa,
            az,
            a,
        });
    }

    let na = graph.n_ligand;
    let nm = graph.n_motif;
    let h_lig = h.slice(s![..na, ..]).to_owned();
    let h_mot = h.slice(s![na..na + nm, ..]).to_owned();
    let type_a = dense(&h_lig, params.matrix("type1.w"), params.vector("type1.b"));
    let type_z = silu(&type_a);
    let type_logits = dense(&type_z, params.matrix("type2.w"), params.vector("type2.b"));
    let motif_a = dense(&h_mot, params.matrix("motif1.w"), params.vector("motif1.b"));
    let motif_z = silu(&motif_a);
    let motif_logits = dense(&motif_z, params.matrix("motif2.w"), params.vector("motif2.b"));
    if !all_finite(&type_logits) || !all_finite(&motif_logits) {
        return Err(DenoiserError::NumericOverflow { layer: cfg.layers });
    }

    let nmut = graph.n_mutable();
    let coords: Vec<Vec3> = (0..nmut).map(|i| [x[[i, 0]], x[[i, 1]], x[[i, 2]]]).collect();
    let eps = (0..nmut)
        .map(|i| [x[[i, 0]] - x0[[i, 0]], x[[i, 1]] - x0[[i, 1]], x[[i, 2]] - x0[[i, 2]]])
        .collect();
    let out = DenoiserOutput { coords, eps, type_logits, motif_logits };
    let tape = Tape { layers, f_in, h_last: h, type_a, type_z, motif_a, motif_z, condition };
    Ok((out, tape))
}

/// Accumulates weight/bias gradients of `y = x W^T + b` and returns `dL/dx`.
fn dense_back(
    params: &DenoiserParams,
    grad: &mut [f64],
    name: &str,
    gy: &Array2<f64>,
    x: &Array2<f64>,
) -> Array2<f64> {
    {
        let mut gw = matrix_mut(&params.layout, grad, &format!("{name}.w"));
        gw += &gy.t().dot(x);
    }
    {
        let mut gb = vector_mut(&params.layout, grad, &format!("{name}.b"));
        gb += &gy.sum_axis(Axis(0));
    }
    gy.dot(&params.matrix(&format!("{name}.w")))
}

/// Reverse-mode pass: returns the gradient of the loss with respect to every
/// parameter, laid out like `params.values`.
pub fn backward(graph: &HeteroGraph, params: &DenoiserParams, tape: &Tape, g_out: &OutputGrad) -> Vec<f64> {
    let cfg = &params.config;
    let mut grad = params.zeros_like();
    let n = graph.len();
    let hd = cfg.hidden;
    let r = cfg.rbf_count;
    let td = cfg.time_dim;
    let rbf = Rbf::new(r, cfg.rbf_max);
    let norm = graph.k as f64;
    let na = graph.n_ligand;
    let nm = graph.n_motif;

    // Heads.
    let mut g_h = Array2::zeros((n, hd));
    let g_tz = dense_back(params, &mut grad, "type2", &g_out.type_logits, &tape.type_z);
    let g_ta = silu_grad(&g_tz, &tape.type_a);
    let h_lig = tape.h_last.slice(s![..na, ..]).to_owned();
    let g_hl = dense_back(params, &mut grad, "type1", &g_ta, &h_lig);
    g_h.slice_mut(s![..na, ..]).assign(&g_hl);
    let g_mz = dense_back(params, &mut grad, "motif2", &g_out.motif_logits, &tape.motif_z);
    let g_ma = silu_grad(&g_mz, &tape.motif_a);
    let h_mot = tape.h_last.slice(s![na..na + nm, ..]).to_owned();
    let g_hm = dense_back(params, &mut grad, "motif1", &g_ma, &h_mot);
    g_h.slice_mut(s![na..na + nm, ..]).assign(&g_hm);

    let mut g_x = Array2::zeros((n, 3));
    for (i, e) in g_out.eps.iter().enumerate() {
        for c in 0..3 {
            g_x[[i, c]] = e[c];
        }
    }

    for l in (0..cfg.layers).rev() {
        let lt = &tape.layers[l];
        let name = |p: &str| format!("l{l}.{p}");
        let ne = graph.edges.len();
        // Coordinate update: x' = x + mask * (edge term + anchor term).
        let mut g_dx = g_x.clone();
        for i in 0..n {
            if !graph.mutable[i] {
                g_dx.row_mut(i).fill(0.0);
            }
        }
        let mut g_s = Array1::zeros(ne);
        let mut g_diff = Array2::zeros((ne, 3));
        let mut g_d = Array1::zeros(ne);
        for (k, e) in graph.edges.iter().enumerate() {
            let i = e.dst;
            let dot: f64 = (0..3).map(|c| g_dx[[i, c]] * lt.diff[[k, c]]).sum();
            let denom = (lt.d[k] + 1.0) * norm;
            g_s[k] = dot / denom;
            let coef = lt.s[k] / denom;
            for c in 0..3 {
                g_diff[[k, c]] = g_dx[[i, c]] * coef;
            }
            g_d[k] = -dot * lt.s[k] / ((lt.d[k] + 1.0) * denom);
        }
        let mut g_a = Array2::zeros((n, 1));
        let mut g_dc = Array2::zeros((n, 3));
        for i in 0..n {
            g_a[[i, 0]] = (0..3).map(|c| g_dx[[i, c]] * lt.dc[[i, c]]).sum();
            for c in 0..3 {
                g_dc[[i, c]] = g_dx[[i, c]] * lt.a[i];
            }
        }
        let g_az = dense_back(params, &mut grad, &name("anc2"), &g_a, &lt.az);
        let g_aa = silu_grad(&g_az, &lt.aa);
        let g_anc_in = dense_back(params, &mut grad, &name("anc1"), &g_aa, &lt.anc_in);
        let mut g_hn = g_h.clone();
        g_hn += &g_anc_in.slice(s![.., ..hd]);
        for i in 0..n {
            let g_dcn = rbf.backprop(lt.dcn[i], lt.rbfc.row(i), g_anc_in.slice(s![i, hd..]));
            for c in 0..3 {
                g_dc[[i, c]] += g_dcn * lt.dc[[i, c]] / lt.dcn[i];
            }
        }
        let mut g_xp = g_x.clone();
        g_xp += &g_dc;

        // Edge scalar s = m . w + b.
        let g_s2 = g_s.clone().insert_axis(Axis(1));
        let mut g_m = dense_back(params, &mut grad, &name("edge"), &g_s2, &lt.m);

        // Residual node update.
        let g_uz = dense_back(params, &mut grad, &name("upd2"), &g_hn, &lt.uz);
        let g_ua = silu_grad(&g_uz, &lt.ua);
        let g_u_in = dense_back(params, &mut grad, &name("upd1"), &g_ua, &lt.u_in);
        let mut g_hp = g_hn.clone();
        g_hp += &g_u_in.slice(s![.., ..hd]);
        let g_agg = g_u_in.slice(s![.., hd..]);
        for (k, e) in graph.edges.iter().enumerate() {
            let mut row = g_m.row_mut(k);
            row.scaled_add(1.0 / norm, &g_agg.row(e.dst));
        }

        // Messages.
        let g_a2 = silu_grad(&g_m, &lt.a2);
        let g_z1 = dense_back(params, &mut grad, &name("mes2"), &g_a2, &lt.z1);
        let g_a1 = silu_grad(&g_z1, &lt.a1);
        let g_m_in = dense_back(params, &mut grad, &name("mes1"), &g_a1, &lt.m_in);
        let rbf_off = 2 * hd + EDGE_TYPES + td;
        for (k, e) in graph.edges.iter().enumerate() {
            let row = g_m_in.row(k);
            {
                let mut gd = g_hp.row_mut(e.dst);
                gd += &row.slice(s![..hd]);
            }
            {
                let mut gs = g_hp.row_mut(e.src);
                gs += &row.slice(s![hd..2 * hd]);
            }
            g_d[k] += rbf.backprop(lt.d[k], lt.rbf.row(k), row.slice(s![rbf_off..]));
            for c in 0..3 {
                let gv = g_diff[[k, c]] + g_d[k] * lt.diff[[k, c]] / lt.d[k];
                g_xp[[e.dst, c]] += gv;
                g_xp[[e.src, c]] -= gv;
            }
        }
        g_x = g_xp;
        g_h = g_hp;
    }

    // Input embedding and null vector.
    if tape.condition == Condition::Null {
        let mut g_null = Array1::zeros(hd);
        for (i, kind) in graph.kinds.iter().enumerate() {
            if kind.is_condition() {
                g_null += &g_h.row(i);
                g_h.row_mut(i).fill(0.0);
            }
        }
        let mut slot = vector_mut(&params.layout, &mut grad, "null");
        slot += &g_null;
    }
    dense_back(params, &mut grad, "embed", &g_h, &tape.f_in);
    grad
}
