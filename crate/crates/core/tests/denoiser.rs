use amdiff_core::denoiser::{
    backward, build_graph, forward, Condition, DenoiserConfig, DenoiserParams, HeteroGraph, LigandNodes, MotifNodes,
    OutputGrad, PocketNodes,
};
use amdiff_core::molio::{Vec3, POCKET_FEATURES};
use amdiff_core::topo::fingerprint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn config(vocab: usize) -> DenoiserConfig {
    DenoiserConfig { hidden: 6, layers: 2, k: 3, vocab_size: vocab, rbf_count: 5, rbf_max: 4.0, time_dim: 4 }
}

struct Scene {
    ligand: LigandNodes,
    motifs: MotifNodes,
    pocket: PocketNodes,
}

fn point(rng: &mut impl Rng, spread: f64) -> Vec3 {
    [rng.random_range(-spread..spread), rng.random_range(-spread..spread), rng.random_range(-spread..spread)]
}

fn scene(seed: u64, n_lig: usize, n_motif: usize, n_pocket: usize, vocab: usize) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lig: Vec<Vec3> = (0..n_lig).map(|_| point(&mut rng, 2.0)).collect();
    let pc: Vec<Vec3> = (0..n_pocket).map(|_| point(&mut rng, 4.0)).collect();
    let features = (0..n_pocket)
        .map(|k| {
            let mut f = [0.0; POCKET_FEATURES];
            f[k % 10] = 1.0;
            f[10 + (k * 7) % 21] = 1.0;
            f
        })
        .collect();
    Scene {
        ligand: LigandNodes {
            fingerprint: fingerprint(&lig).unwrap(),
            types: (0..n_lig).map(|_| rng.random_range(0..10)).collect(),
            coords: lig,
        },
        motifs: MotifNodes {
            coords: (0..n_motif).map(|_| point(&mut rng, 2.0)).collect(),
            classes: (0..n_motif).map(|_| rng.random_range(0..=vocab)).collect(),
            membership: (0..n_lig).map(|a| a * n_motif / n_lig).collect(),
        },
        pocket: PocketNodes {
            fingerprint: if n_pocket >= 2 { fingerprint(&pc).unwrap() } else { Default::default() },
            coords: pc,
            features,
            context_coords: vec![],
            context_features: vec![],
            anchor: point(&mut rng, 0.5),
        },
    }
}

fn graph(s: &Scene, vocab: usize, k: usize) -> HeteroGraph {
    build_graph(&s.ligand, &s.motifs, &s.pocket, vocab, k).unwrap()
}

fn random_output_grad(g: &HeteroGraph, rng: &mut impl Rng) -> OutputGrad {
    let mut og = OutputGrad::zeros(g);
    for e in &mut og.eps {
        for v in e.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
    }
    og.type_logits.mapv_inplace(|_| StandardNormal.sample(rng));
    og.motif_logits.mapv_inplace(|_| StandardNormal.sample(rng));
    og
}

fn linear_loss(g: &HeteroGraph, p: &DenoiserParams, t: usize, c: Condition, og: &OutputGrad) -> f64 {
    let (out, _) = forward(g, p, t, c).unwrap();
    let e: f64 = out.eps.iter().zip(&og.eps).map(|(a, b)| (0..3).map(|k| a[k] * b[k]).sum::<f64>()).sum();
    e + (&out.type_logits * &og.type_logits).sum() + (&out.motif_logits * &og.motif_logits).sum()
}

#[test]
fn gradients_match_central_differences() {
    for draw in 0..3u64 {
        let vocab = 2;
        // 3 ligand atoms, 1 motif, 2 pocket atoms.
        let s = scene(100 + draw, 3, 1, 2, vocab);
        let g = graph(&s, vocab, 3);
        assert_eq!(g.len(), 6);
        let p = DenoiserParams::init(config(vocab), 7 + draw);
        let mut rng = ChaCha8Rng::seed_from_u64(draw);
        let og = random_output_grad(&g, &mut rng);
        for cond in [Condition::Pocket, Condition::Null] {
            let t = 17 + draw as usize;
            let (_, tape) = forward(&g, &p, t, cond).unwrap();
            let grad = backward(&g, &p, &tape, &og);
            for entry in &p.layout.entries {
                let h = 1e-4;
                let mut num = vec![0.0; entry.len()];
                for (slot, idx) in entry.range().enumerate() {
                    let mut up = p.clone();
                    up.values[idx] += h;
                    let mut dn = p.clone();
                    dn.values[idx] -= h;
                    num[slot] = (linear_loss(&g, &up, t, cond, &og) - linear_loss(&g, &dn, t, cond, &og)) / (2.0 * h);
                }
                let ana = &grad[entry.range()];
                let diff: f64 = num.iter().zip(ana).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let scale = num.iter().map(|a| a * a).sum::<f64>().sqrt().max(ana.iter().map(|a| a * a).sum::<f64>().sqrt());
                let rel = if scale < 1e-10 { diff } else { diff / scale };
                assert!(rel <= 1e-4, "draw {draw} {cond:?} {}: relative error {rel:e}", entry.name);
            }
        }
    }
}

fn random_rotation(rng: &mut impl Rng) -> [[f64; 3]; 3] {
    let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn rigid(p: &Vec3, r: &[[f64; 3]; 3], b: &Vec3) -> Vec3 {
    std::array::from_fn(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + b[i])
}

fn moved_scene(s: &Scene, r: &[[f64; 3]; 3], b: &Vec3) -> Scene {
    let mv = |v: &Vec<Vec3>| v.iter().map(|p| rigid(p, r, b)).collect::<Vec<_>>();
    Scene {
        ligand: LigandNodes { coords: mv(&s.ligand.coords), ..s.ligand.clone() },
        motifs: MotifNodes { coords: mv(&s.motifs.coords), ..s.motifs.clone() },
        pocket: PocketNodes {
            coords: mv(&s.pocket.coords),
            anchor: rigid(&s.pocket.anchor, r, b),
            ..s.pocket.clone()
        },
    }
}

fn close(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= 1e-5 * scale.max(1.0)
}

#[test]
fn forward_is_rigid_motion_equivariant() {
    let vocab = 3;
    let cfg = DenoiserConfig { hidden: 16, layers: 3, k: 5, vocab_size: vocab, ..DenoiserConfig::default() };
    let p = DenoiserParams::init(cfg, 11);
    let s = scene(5, 8, 3, 12, vocab);
    let g = graph(&s, vocab, 5);
    let (base, _) = forward(&g, &p, 300, Condition::Pocket).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let r = random_rotation(&mut rng);
        let b = point(&mut rng, 10.0);
        let gm = graph(&moved_scene(&s, &r, &b), vocab, 5);
        let (out, _) = forward(&gm, &p, 300, Condition::Pocket).unwrap();
        for (x, y) in base.coords.iter().zip(&out.coords) {
            let want = rigid(x, &r, &b);
            for c in 0..3 {
                assert!(close(want[c], y[c], want[c].abs()), "{want:?} vs {y:?}");
            }
        }
        for (x, y) in base.type_logits.iter().zip(out.type_logits.iter()) {
            assert!(close(*x, *y, x.abs()));
        }
        for (x, y) in base.motif_logits.iter().zip(out.motif_logits.iter()) {
            assert!(close(*x, *y, x.abs()));
        }
    }
}

#[test]
fn forward_is_permutation_equivariant() {
    let vocab = 2;
    let cfg = DenoiserConfig { hidden: 12, layers: 2, k: 4, vocab_size: vocab, ..DenoiserConfig::default() };
    let p = DenoiserParams::init(cfg, 3);
    let s = scene(21, 6, 2, 7, vocab);
    let (base, _) = forward(&graph(&s, vocab, 4), &p, 50, Condition::Pocket).unwrap();

    // Reverse ligand atoms and motifs, rotate pocket order.
    let atom_perm: Vec<usize> = (0..6).rev().collect();
    let motif_perm = [1usize, 0];
    let mut motif_inv = [0usize; 2];
    for (new, &old) in motif_perm.iter().enumerate() {
        motif_inv[old] = new;
    }
    let pocket_perm: Vec<usize> = (0..7).map(|k| (k + 3) % 7).collect();
    let permuted = Scene {
        ligand: LigandNodes {
            coords: atom_perm.iter().map(|&o| s.ligand.coords[o]).collect(),
            types: atom_perm.iter().map(|&o| s.ligand.types[o]).collect(),
            fingerprint: s.ligand.fingerprint,
        },
        motifs: MotifNodes {
            coords: motif_perm.iter().map(|&o| s.motifs.coords[o]).collect(),
            classes: motif_perm.iter().map(|&o| s.motifs.classes[o]).collect(),
            membership: atom_perm.iter().map(|&o| motif_inv[s.motifs.membership[o]]).collect(),
        },
        pocket: PocketNodes {
            coords: pocket_perm.iter().map(|&o| s.pocket.coords[o]).collect(),
            features: pocket_perm.iter().map(|&o| s.pocket.features[o]).collect(),
            ..s.pocket.clone()
        },
    };
    let (out, _) = forward(&graph(&permuted, vocab, 4), &p, 50, Condition::Pocket).unwrap();
    for (new, &old) in atom_perm.iter().enumerate() {
        assert_eq!(out.coords[new], base.coords[old]);
        assert_eq!(out.type_logits.row(new), base.type_logits.row(old));
    }
    for (new, &old) in motif_perm.iter().enumerate() {
        assert_eq!(out.coords[6 + new], base.coords[6 + old]);
        assert_eq!(out.motif_logits.row(new), base.motif_logits.row(old));
    }
}

#[test]
fn pocket_coordinates_never_move() {
    let vocab = 1;
    let p = DenoiserParams::init(DenoiserConfig { hidden: 8, layers: 3, k: 4, vocab_size: vocab, ..Default::default() }, 2);
    let s = scene(8, 5, 2, 6, vocab);
    let g = graph(&s, vocab, 4);
    let before = g.coords.clone();
    let (out, _) = forward(&g, &p, 10, Condition::Pocket).unwrap();
    assert_eq!(g.coords, before);
    assert_eq!(out.coords.len(), 7);
}

#[test]
fn distant_pocket_atom_does_not_change_gradients() {
    let vocab = 2;
    let p = DenoiserParams::init(config(vocab), 4);
    let s = scene(30, 4, 2, 4, vocab);
    let g = graph(&s, vocab, 3);
    let mut far = s.pocket.clone();
    far.coords.push([500.0, 500.0, 500.0]);
    far.features.push(s.pocket.features[0]);
    let s2 = Scene { ligand: s.ligand.clone(), motifs: s.motifs.clone(), pocket: far };
    let g2 = graph(&s2, vocab, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let og = random_output_grad(&g, &mut rng);
    let (_, t1) = forward(&g, &p, 9, Condition::Pocket).unwrap();
    let (_, t2) = forward(&g2, &p, 9, Condition::Pocket).unwrap();
    let a = backward(&g, &p, &t1, &og);
    let b = backward(&g2, &p, &t2, &og);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{x} vs {y}");
    }
}
