//! Deterministic summation helpers.

const LEAF: usize = 1024;
const PAIRWISE_ABOVE: usize = 4096;

/// Sums `term(0) + ... + term(n-1)`.
///
/// Short sums run left to right; longer ones switch to pairwise blocks so the
/// rounding error grows with `log n` instead of `n`. The split points depend
/// only on `n`, so the result is reproducible bit for bit.
pub(crate) fn sum_terms<F: Fn(usize) -> f64>(n: usize, term: F) -> f64 {
    if n <= PAIRWISE_ABOVE {
        (0..n).map(&term).sum()
    } else {
        pairwise(0, n, &term)
    }
}

fn pairwise<F: Fn(usize) -> f64>(lo: usize, hi: usize, term: &F) -> f64 {
    if hi - lo <= LEAF {
        (lo..hi).map(term).sum()
    } else {
        let mid = lo + (hi - lo) / 2;
        pairwise(lo, mid, term) + pairwise(mid, hi, term)
    }
}

pub(crate) fn mean_of<F: Fn(usize) -> f64>(n: usize, term: F) -> f64 {
    sum_terms(n, term) / n as f64
}
