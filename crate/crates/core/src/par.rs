//! Batch-parallel helpers. With the `parallel` feature disabled every path
//! runs sequentially; results are returned in input order either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// Applies `f` to consecutive chunks of `items`.
pub fn map_chunks<T, R, F>(items: &[T], chunk: usize, exec: Execution, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&[T]) -> R + Sync + Send,
{
    let chunk = chunk.max(1);
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => items.par_chunks(chunk).map(f).collect(),
        _ => items.chunks(chunk).map(f).collect(),
    }
}

/// Applies `f` to every element of a range.
pub fn map_range<R, F>(range: std::ops::Range<usize>, exec: Execution, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => range.into_par_iter().map(f).collect(),
        _ => range.map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_paths_agree_and_keep_order() {
        let items: Vec<u32> = (0..1000).collect();
        let seq = map_chunks(&items, 7, Execution::Sequential, |c| c.iter().sum::<u32>());
        let par = map_chunks(&items, 7, Execution::Parallel, |c| c.iter().sum::<u32>());
        assert_eq!(seq, par);
        assert_eq!(map_range(0..50, Execution::Parallel, |i| i * 2), (0..50).map(|i| i * 2).collect::<Vec<_>>());
    }
}
