use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use super::EvalError;
use crate::molio::{mean, MolecularGraph, Vec3};

/// Root-mean-square deviation of index-matched conformations, no alignment.
pub fn rmsd(a: &[Vec3], b: &[Vec3]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(EvalError::Empty("conformation"));
    }
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(p, q)| (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>())
        .sum();
    Ok((sum / a.len() as f64).sqrt())
}

/// Principal moments of the unit-mass inertia tensor about the centroid,
/// ascending.
pub fn principal_moments(points: &[Vec3]) -> [f64; 3] {
    let c = mean(points);
    let mut tensor = Matrix3::zeros();
    for p in points {
        let r = Vector3::new(p[0] - c[0], p[1] - c[1], p[2] - c[2]);
        tensor += Matrix3::identity() * r.norm_squared() - r * r.transpose();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(tensor).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    [ev[0].max(0.0), ev[1].max(0.0), ev[2].max(0.0)]
}

/// `(I1/I3, I2/I3)`. A collinear set has `I1 = 0` and gives `NPR1 = 0`.
pub fn npr_descriptors(mol: &MolecularGraph) -> Result<(f64, f64), EvalError> {
    npr_of_points(&mol.coords())
}

pub fn npr_of_points(points: &[Vec3]) -> Result<(f64, f64), EvalError> {
    if points.len() < 3 {
        return Err(EvalError::TooFewAtoms { need: 3, got: points.len() });
    }
    let [i1, i2, i3] = principal_moments(points);
    if i3 <= 0.0 {
        return Err(EvalError::Degenerate("all atoms coincide"));
    }
    let npr1 = if i1 <= 1e-9 * i3 { 0.0 } else { i1 / i3 };
    Ok((npr1, i2 / i3))
}
