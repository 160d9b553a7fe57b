//! Order-preserving data-parallel primitives.
//!
//! With the `parallel` feature every helper fans out over rayon's global pool;
//! without it, or inside [`sequential`], the same closures run on the calling
//! thread. Outputs are always collected in input order and no floating-point
//! reduction happens across threads, so both paths produce identical bits.

use std::cell::Cell;

thread_local! {
    static FORCE_SEQUENTIAL: Cell<bool> = const { Cell::new(false) };
}

/// True when the crate was built with rayon support.
pub const fn enabled() -> bool {
    cfg!(feature = "parallel")
}

/// Runs `f` with every helper in this module pinned to the current thread.
pub fn sequential<R>(f: impl FnOnce() -> R) -> R {
    let prev = FORCE_SEQUENTIAL.with(|c| c.replace(true));
    let out = f();
    FORCE_SEQUENTIAL.with(|c| c.set(prev));
    out
}

#[cfg(feature = "parallel")]
fn go_parallel() -> bool {
    !FORCE_SEQUENTIAL.with(|c| c.get())
}

/// `(0..n).map(f).collect()`, possibly in parallel.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if go_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// `items.iter().map(f).collect()`, possibly in parallel.
pub fn map_slice<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if go_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}

/// Applies `f(chunk_index, chunk)` to consecutive `chunk_len`-sized pieces of `data`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    assert!(chunk_len > 0, "chunk_len must be positive");
    #[cfg(feature = "parallel")]
    if go_parallel() {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    data.chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

/// Runs two closures, concurrently when possible.
pub fn join<A, B, RA, RB>(a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    #[cfg(feature = "parallel")]
    if go_parallel() {
        return rayon::join(a, b);
    }
    (a(), b())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_range_preserves_order() {
        let v = map_range(1000, |i| i * 3);
        assert!(v.iter().enumerate().all(|(i, &x)| x == i * 3));
        let s = sequential(|| map_range(1000, |i| i * 3));
        assert_eq!(v, s);
    }

    #[test]
    fn chunks_cover_everything() {
        let mut data = vec![0usize; 103];
        for_each_chunk_mut(&mut data, 10, |ci, chunk| {
            for (j, x) in chunk.iter_mut().enumerate() {
                *x = ci * 10 + j;
            }
        });
        assert!(data.iter().enumerate().all(|(i, &x)| x == i));
    }

    #[test]
    fn sequential_flag_is_restored() {
        sequential(|| sequential(|| ()));
        assert!(!FORCE_SEQUENTIAL.with(|c| c.get()));
    }
}
