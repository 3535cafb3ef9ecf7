//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the `Parallel` mode dispatches to rayon;
//! without it both modes run on the calling thread. Every helper produces
//! results in index order and never splits a reduction across threads, so
//! output is bit-identical between the two modes.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parallelism {
    Sequential,
    Parallel,
}

impl Default for Parallelism {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Parallelism::Parallel
        } else {
            Parallelism::Sequential
        }
    }
}

/// `(0..len).map(f)` collected in order.
pub fn map_indexed<T, F>(len: usize, mode: Parallelism, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        Parallelism::Parallel => (0..len).into_par_iter().map(f).collect(),
        _ => (0..len).map(f).collect(),
    }
}

/// Applies `f(row_index, row)` to every `width`-sized chunk of `data`.
pub fn for_each_row<T, F>(data: &mut [T], width: usize, mode: Parallelism, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if width == 0 {
        return;
    }
    match mode {
        #[cfg(feature = "parallel")]
        Parallelism::Parallel => data
            .par_chunks_mut(width)
            .enumerate()
            .for_each(|(i, row)| f(i, row)),
        _ => data
            .chunks_mut(width)
            .enumerate()
            .for_each(|(i, row)| f(i, row)),
    }
}

/// Like [`for_each_row`] but hands out blocks of `rows_per_block` rows.
pub fn for_each_block<T, F>(data: &mut [T], width: usize, rows_per_block: usize, mode: Parallelism, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if width == 0 {
        return;
    }
    let chunk = width * rows_per_block.max(1);
    match mode {
        #[cfg(feature = "parallel")]
        Parallelism::Parallel => data
            .par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(b, block)| f(b * rows_per_block.max(1), block)),
        _ => data
            .chunks_mut(chunk)
            .enumerate()
            .for_each(|(b, block)| f(b * rows_per_block.max(1), block)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let a = map_indexed(100, Parallelism::Sequential, |i| (i as f64).sqrt());
        let b = map_indexed(100, Parallelism::Parallel, |i| (i as f64).sqrt());
        assert_eq!(a, b);

        let mut x = vec![0usize; 12];
        let mut y = vec![0usize; 12];
        for_each_row(&mut x, 3, Parallelism::Sequential, |i, r| r.iter_mut().for_each(|v| *v = i));
        for_each_row(&mut y, 3, Parallelism::Parallel, |i, r| r.iter_mut().for_each(|v| *v = i));
        assert_eq!(x, y);
        assert_eq!(x, vec![0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3]);
    }

    #[test]
    fn blocks_report_first_row() {
        let mut x = vec![0usize; 10];
        for_each_block(&mut x, 2, 2, Parallelism::Parallel, |r0, b| b.iter_mut().for_each(|v| *v = r0));
        assert_eq!(x, vec![0, 0, 0, 0, 2, 2, 2, 2, 4, 4]);
    }
}
