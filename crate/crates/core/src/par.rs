//! Execution backend for data-parallel inner loops.
//!
//! Every parallel helper here splits work into chunks whose boundaries depend
//! only on the input length and the requested chunk size, never on the
//! number of threads, and reduces in index order. Sequential and parallel runs
//! therefore agree bit for bit.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Sequential,
    /// Falls back to sequential execution when the `parallel` feature is off.
    Parallel,
}

impl Default for Backend {
    fn default() -> Self {
        Backend::auto()
    }
}

impl Backend {
    /// The backend used when nothing is requested explicitly.
    pub fn auto() -> Self {
        if cfg!(feature = "parallel") {
            Backend::Parallel
        } else {
            Backend::Sequential
        }
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Backend::Parallel
    }

    /// Order-preserving map.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Order-preserving map over indices `0..n`.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Applies `f` to consecutive `chunk`-sized slices (the last may be shorter)
    /// of both `input` and `output`, where `output` has `stride` entries per
    /// input item.
    pub fn for_each_chunk_mut<T, U, F>(self, input: &[T], output: &mut [U], stride: usize, chunk: usize, f: F)
    where
        T: Sync,
        U: Send,
        F: Fn(usize, &[T], &mut [U]) + Sync + Send,
    {
        assert_eq!(input.len() * stride, output.len());
        let chunk = chunk.max(1);
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            input
                .par_chunks(chunk)
                .zip(output.par_chunks_mut(chunk * stride))
                .enumerate()
                .for_each(|(i, (inp, out))| f(i * chunk, inp, out));
            return;
        }
        input
            .chunks(chunk)
            .zip(output.chunks_mut(chunk * stride))
            .enumerate()
            .for_each(|(i, (inp, out))| f(i * chunk, inp, out));
    }
}
