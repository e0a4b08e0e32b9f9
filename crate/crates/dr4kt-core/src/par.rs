//! Data-parallel map helpers with a sequential fallback.
//!
//! Every parallel site in this crate maps independent items (students,
//! sequences, grid points) to partial results and then reduces them in index
//! order, so the `parallel` feature changes wall-clock time but never the
//! bits of any result. The `*_seq` variants are always compiled; benches use
//! them to compare both paths in one binary.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `items` to a Vec, preserving order.
pub fn map_collect<'a, T, U, F>(items: &'a [T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&'a T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_collect_seq(items, f)
    }
}

/// Sequential twin of [`map_collect`].
pub fn map_collect_seq<'a, T, U, F>(items: &'a [T], f: F) -> Vec<U>
where
    F: Fn(&'a T) -> U,
{
    items.iter().map(f).collect()
}

/// Map indices `0..n` to a Vec, preserving order.
pub fn map_indices<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
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

/// Sequential twin of [`map_indices`].
pub fn map_indices_seq<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree_in_order() {
        let items: Vec<u64> = (0..1000).collect();
        let a = map_collect(&items, |x| x * x);
        let b = map_collect_seq(&items, |x| x * x);
        assert_eq!(a, b);
        assert_eq!(map_indices(100, |i| i * 3), map_indices_seq(100, |i| i * 3));
    }
}
