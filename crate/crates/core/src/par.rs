//! Thin switch between rayon and sequential iteration.
//!
//! Every helper here writes results in index order and never reduces across
//! threads, so outputs are identical with or without the `parallel` feature.
//! Callers that need a reduction compute fixed-size partial results with
//! [`map_chunks`] and fold them in chunk order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Fixed work-block size for order-sensitive reductions. Independent of the
/// thread count so that block partials are the same on every machine.
pub const BLOCK: usize = 256;

/// `(0..n).map(f).collect()`, possibly in parallel.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Fill `out` in row chunks of width `width`; `f(row, chunk)`.
pub fn for_each_row<T, F>(out: &mut [T], width: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if width == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        out.par_chunks_mut(width)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    }
    #[cfg(not(feature = "parallel"))]
    {
        out.chunks_mut(width)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    }
}

/// Apply `f` to `[start, end)` ranges of `n` items split into [`BLOCK`]-sized
/// blocks, returning the per-block results in block order.
pub fn map_chunks<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, usize) -> T + Sync + Send,
{
    let blocks = n.div_ceil(BLOCK);
    map_range(blocks, |b| {
        let start = b * BLOCK;
        f(start, (start + BLOCK).min(n))
    })
}
