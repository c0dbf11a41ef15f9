/// Classifier-free guidance `u + s (c - u)`. At `s == 1` the conditional
/// input is returned unchanged and at `s == 0` the unconditional one, so
/// those cases are exact rather than rounded.
pub fn cfg_combine(cond: &[f64], uncond: &[f64], s: f64) -> Vec<f64> {
    assert_eq!(cond.len(), uncond.len());
    if s == 1.0 {
        return cond.to_vec();
    }
    if s == 0.0 {
        return uncond.to_vec();
    }
    cond.iter().zip(uncond).map(|(c, u)| u + s * (c - u)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_case() {
        assert_eq!(cfg_combine(&[1.0], &[0.5], 2.0), vec![1.5]);
        assert_eq!(cfg_combine(&[0.1, 0.7], &[0.3, 0.2], 1.0), vec![0.1, 0.7]);
        assert_eq!(cfg_combine(&[0.1, 0.7], &[0.3, 0.2], 0.0), vec![0.3, 0.2]);
    }
}
