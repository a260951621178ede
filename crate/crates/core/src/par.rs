//! Chunked data-parallel helpers.
//!
//! Work is always split into fixed-size chunks whose boundaries do not depend
//! on the thread count, and per-chunk results are combined in chunk order. With
//! the `parallel` feature the chunks run on the rayon pool; without it they run
//! in a plain loop. Both paths produce bit-identical results.

use std::ops::Range;

/// Rows per chunk for row-parallel kernels.
pub const ROW_CHUNK: usize = 2048;

pub(crate) fn chunk_ranges(len: usize, chunk: usize) -> Vec<Range<usize>> {
    let chunk = chunk.max(1);
    (0..len.div_ceil(chunk))
        .map(|c| c * chunk..((c + 1) * chunk).min(len))
        .collect()
}

/// Applies `f` to every chunk of `0..len` and returns the results in chunk order.
pub fn map_chunks<T, F>(len: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, Range<usize>) -> T + Sync + Send,
{
    let ranges = chunk_ranges(len, chunk);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        ranges
            .into_par_iter()
            .enumerate()
            .map(|(i, r)| f(i, r))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        ranges.into_iter().enumerate().map(|(i, r)| f(i, r)).collect()
    }
}

/// Maps every index in `0..len` independently; output order matches input order.
pub fn map_indices<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..len).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..len).map(f).collect()
    }
}

/// Number of worker threads the chunked kernels will use.
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}
