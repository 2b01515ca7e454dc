//! Fixed-tree pairwise summation.
//!
//! The reduction tree depends only on the slice length, never on the number of
//! worker threads, so every quadrature in the crate is bit-reproducible.

const LEAF: usize = 64;
const SPLIT_PARALLEL: usize = 1 << 14;

pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= LEAF {
        let mut s = 0.0;
        for x in v {
            s += x;
        }
        return s;
    }
    let mid = v.len() / 2;
    let (a, b) = v.split_at(mid);
    if v.len() >= SPLIT_PARALLEL {
        let (sa, sb) = rayon::join(|| pairwise_sum(a), || pairwise_sum(b));
        sa + sb
    } else {
        pairwise_sum(a) + pairwise_sum(b)
    }
}

/// Pairwise sum of `f(i)` for `i in 0..n`, evaluated into a buffer first.
pub fn pairwise_sum_by<F: Fn(usize) -> f64 + Sync + Send>(n: usize, f: F) -> f64 {
    use rayon::prelude::*;
    let buf: Vec<f64> = (0..n).into_par_iter().map(f).collect();
    pairwise_sum(&buf)
}
