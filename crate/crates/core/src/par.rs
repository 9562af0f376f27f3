//! Data-parallel helpers. With the `parallel` feature these dispatch to rayon,
//! otherwise they run the same closures sequentially.

use std::ops::Range;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many work items the sequential path is used even when
/// `parallel` is enabled.
pub const PARALLEL_THRESHOLD: usize = 64;

/// Evaluates `f(i)` for `i in 0..len` and collects the results in order.
pub fn map_indices<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if len >= PARALLEL_THRESHOLD {
            return (0..len).into_par_iter().map(f).collect();
        }
    }
    (0..len).map(f).collect()
}

/// Fallible variant of [`map_indices`]; the first error (in some order) wins.
pub fn try_map_indices<T, E, F>(len: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if len >= PARALLEL_THRESHOLD {
            return (0..len).into_par_iter().map(f).collect();
        }
    }
    (0..len).map(f).collect()
}

/// Calls `f(j, chunk)` for every consecutive chunk of `chunk_len` elements.
/// With column-major storage and `chunk_len = nrows` this visits columns.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if chunk_len == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        if data.len() / chunk_len >= PARALLEL_THRESHOLD {
            data.par_chunks_mut(chunk_len)
                .enumerate()
                .for_each(|(j, c)| f(j, c));
            return;
        }
    }
    for (j, c) in data.chunks_mut(chunk_len).enumerate() {
        f(j, c);
    }
}

/// Fallible variant of [`for_each_chunk_mut`].
pub fn try_for_each_chunk_mut<T, E, F>(data: &mut [T], chunk_len: usize, f: F) -> Result<(), E>
where
    T: Send,
    E: Send,
    F: Fn(usize, &mut [T]) -> Result<(), E> + Sync + Send,
{
    if chunk_len == 0 {
        return Ok(());
    }
    #[cfg(feature = "parallel")]
    {
        if data.len() / chunk_len >= PARALLEL_THRESHOLD {
            return data
                .par_chunks_mut(chunk_len)
                .enumerate()
                .try_for_each(|(j, c)| f(j, c));
        }
    }
    for (j, c) in data.chunks_mut(chunk_len).enumerate() {
        f(j, c)?;
    }
    Ok(())
}

/// Splits `0..len` into blocks of `block` indices, maps each block and folds
/// the partial results with `reduce`. Block boundaries do not depend on the
/// thread count, so the reduction tree is deterministic.
pub fn block_reduce<T, M, R>(len: usize, block: usize, map: M, reduce: R) -> Option<T>
where
    T: Send,
    M: Fn(Range<usize>) -> T + Sync + Send,
    R: Fn(T, T) -> T + Sync + Send,
{
    let block = block.max(1);
    let nblocks = len.div_ceil(block);
    let ranges = move |b: usize| b * block..((b + 1) * block).min(len);
    let parts = map_indices(nblocks, |b| map(ranges(b)));
    parts.into_iter().reduce(reduce)
}
