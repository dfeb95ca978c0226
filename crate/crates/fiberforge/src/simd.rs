//! Reassociation-friendly reductions for the hot kernels. Splitting the
//! accumulator breaks the sequential FP dependency so the autovectorizer can
//! use wide FMA lanes.

/// Dot product with eight independent accumulators.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let ra = &a[c * 8..c * 8 + 8];
        let rb = &b[c * 8..c * 8 + 8];
        for l in 0..8 {
            acc[l] += ra[l] * rb[l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for i in chunks * 8..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Self dot product (sum of squares).
#[inline]
pub fn dot_self(a: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let ra = &a[c * 8..c * 8 + 8];
        for l in 0..8 {
            acc[l] += ra[l] * ra[l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for v in &a[chunks * 8..] {
        s += v * v;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_dot() {
        let a: Vec<f64> = (0..103).map(|i| (i as f64).sin()).collect();
        let b: Vec<f64> = (0..103).map(|i| (i as f64).cos()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12 * naive.abs().max(1.0));
        let naive2: f64 = a.iter().map(|x| x * x).sum();
        assert!((dot_self(&a) - naive2).abs() < 1e-12 * naive2);
    }
}
