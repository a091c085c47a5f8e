//! Parallel iteration shim.
//!
//! With the `parallel` feature the re-exports come straight from rayon. The
//! fallback below mirrors the adaptor names the crate uses, mapped onto
//! plain sequential iterators, so call sites compile unchanged either way.

#[cfg(feature = "parallel")]
pub use rayon::prelude::{IntoParallelIterator, ParallelIterator};

#[cfg(not(feature = "parallel"))]
mod fallback {
    pub trait IntoParallelIterator: IntoIterator + Sized {
        fn into_par_iter(self) -> Self::IntoIter {
            self.into_iter()
        }
    }
    impl<T: IntoIterator + Sized> IntoParallelIterator for T {}

    /// Name-compatible stand-in so `use` lines match the rayon spelling.
    pub trait ParallelIterator: Iterator + Sized {}
    impl<T: Iterator + Sized> ParallelIterator for T {}
}

#[cfg(not(feature = "parallel"))]
pub use fallback::{IntoParallelIterator, ParallelIterator};
