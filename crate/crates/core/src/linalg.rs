//! Small allocation-free helpers over `f64` slices.
//!
//! Solvers keep particle states in flat row-major buffers, so these are the
//! vector primitives the hot loops use. Reductions go through
//! [`pairwise_sum`], whose association order depends only on the length of
//! the input; results are therefore identical regardless of how many
//! workers produced the summands.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

#[inline]
pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    dist_sq(a, b).sqrt()
}

const PAIRWISE_BASE: usize = 8;

/// Sum with a fixed binary-tree association order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= PAIRWISE_BASE {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Pairwise sum of every `stride`-th element starting at `offset`.
pub fn pairwise_sum_strided(xs: &[f64], stride: usize, offset: usize) -> f64 {
    fn rec(xs: &[f64], stride: usize, offset: usize, lo: usize, hi: usize) -> f64 {
        if hi - lo <= PAIRWISE_BASE {
            return (lo..hi).map(|i| xs[i * stride + offset]).sum();
        }
        let mid = lo + (hi - lo) / 2;
        rec(xs, stride, offset, lo, mid) + rec(xs, stride, offset, mid, hi)
    }
    let n = xs.len() / stride;
    rec(xs, stride, offset, 0, n)
}

/// Component-wise mean of `n = rows.len() / dim` row vectors stored flat.
pub fn mean_rows(rows: &[f64], dim: usize, out: &mut [f64]) {
    let n = rows.len() / dim;
    debug_assert!(n > 0);
    for (c, o) in out.iter_mut().enumerate().take(dim) {
        *o = pairwise_sum_strided(rows, dim, c) / n as f64;
    }
}

/// Frobenius norm of a row-major `rows x cols` matrix.
pub fn frobenius(m: &[f64]) -> f64 {
    norm(m)
}

/// `out = m * v` for a row-major `rows x cols` matrix.
#[inline]
pub fn mat_vec(m: &[f64], rows: usize, cols: usize, v: &[f64], out: &mut [f64]) {
    for i in 0..rows {
        out[i] = dot(&m[i * cols..(i + 1) * cols], &v[..cols]);
    }
}

/// `out += m * v` for a row-major `rows x cols` matrix.
#[inline]
pub fn mat_vec_add(m: &[f64], rows: usize, cols: usize, v: &[f64], out: &mut [f64]) {
    for i in 0..rows {
        out[i] += dot(&m[i * cols..(i + 1) * cols], &v[..cols]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let xs: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&xs), 500_500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn strided_mean() {
        let rows = [1.0, 10.0, 3.0, 30.0, 5.0, 50.0];
        let mut out = [0.0; 2];
        mean_rows(&rows, 2, &mut out);
        assert_eq!(out, [3.0, 30.0]);
    }

    #[test]
    fn mat_vec_small() {
        let m = [1.0, 2.0, 3.0, 4.0];
        let mut out = [0.0; 2];
        mat_vec(&m, 2, 2, &[1.0, -1.0], &mut out);
        assert_eq!(out, [-1.0, -1.0]);
        mat_vec_add(&m, 2, 2, &[1.0, 0.0], &mut out);
        assert_eq!(out, [0.0, 2.0]);
    }
}
