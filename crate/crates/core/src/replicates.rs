//! Data-parallel replicate driver with a sequential fallback.
//!
//! Monte Carlo layers call [`run`], which dispatches over rayon when the
//! `parallel` feature (default) is enabled and degrades to a plain loop
//! without it. Work items own their random streams, so the output is
//! bit-identical regardless of scheduling; results come back in index order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..n`, collecting results in index order.
pub fn run<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        run_par(n, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_seq(n, f)
    }
}

/// Sequential reference implementation; always available.
pub fn run_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Rayon implementation.
#[cfg(feature = "parallel")]
pub fn run_par<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_arrive_in_index_order() {
        let out = run(100, |i| i * i);
        assert_eq!(out, (0..100).map(|i| i * i).collect::<Vec<_>>());
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_matches_sequential() {
        let f = |i: usize| {
            // some float work sensitive to evaluation order
            let mut acc = 0.0f64;
            for j in 0..100 {
                acc += ((i * 31 + j) as f64).sqrt().sin();
            }
            acc.to_bits()
        };
        assert_eq!(run_par(64, f), run_seq(64, f));
    }
}
