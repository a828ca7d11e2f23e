//! Pixel-partitioned execution. Work is split into contiguous pixel ranges,
//! one per worker; each worker owns its range, so results do not depend on
//! the worker count.

use crate::error::Result;

fn chunk_len(pixels: usize, workers: usize) -> usize {
    pixels.div_ceil(workers.max(1)).max(1)
}

/// Calls `f(first_pixel, chunk)` over `k`-wide pixel records of `out`.
pub(crate) fn fill_pixels<F>(out: &mut [f64], k: usize, workers: usize, f: F) -> Result<()>
where
    F: Fn(usize, &mut [f64]) -> Result<()> + Sync,
{
    let pixels = out.len() / k;
    if workers <= 1 || pixels < 2 {
        return f(0, out);
    }
    let per = chunk_len(pixels, workers);
    let chunks: Vec<(usize, &mut [f64])> = out
        .chunks_mut(per * k)
        .enumerate()
        .map(|(i, c)| (i * per, c))
        .collect();
    run(chunks, workers, |(start, chunk)| f(start, chunk))
}

/// Calls `f(state_chunk, input_chunk)` over matching `k`-wide pixel records.
pub(crate) fn zip_pixels<F>(state: &mut [f64], input: &[f64], k: usize, workers: usize, f: F) -> Result<()>
where
    F: Fn(&mut [f64], &[f64]) -> Result<()> + Sync,
{
    let pixels = state.len() / k;
    if workers <= 1 || pixels < 2 {
        return f(state, input);
    }
    let per = chunk_len(pixels, workers) * k;
    let chunks: Vec<(&mut [f64], &[f64])> = state.chunks_mut(per).zip(input.chunks(per)).collect();
    run(chunks, workers, |(s, i)| f(s, i))
}

#[cfg(feature = "parallel")]
fn run<T: Send, F>(items: Vec<T>, workers: usize, f: F) -> Result<()>
where
    F: Fn(T) -> Result<()> + Sync,
{
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| crate::error::Error::InvalidArgument(format!("cannot start {workers} workers: {e}")))?;
    pool.install(|| items.into_par_iter().try_for_each(&f))
}

#[cfg(not(feature = "parallel"))]
fn run<T: Send, F>(items: Vec<T>, workers: usize, f: F) -> Result<()>
where
    F: Fn(T) -> Result<()> + Sync,
{
    if workers > 1 {
        log::warn!("built without the `parallel` feature; running {workers} workers sequentially");
    }
    items.into_iter().try_for_each(f)
}
