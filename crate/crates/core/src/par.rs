//! Data-parallel execution and reproducible random substreams.
//!
//! Every Monte Carlo loop in the crate is written as a map over an index
//! range, where item `i` draws only from the substream `(seed, domain, i)`.
//! The result is therefore bit-identical whether the map runs on the rayon
//! pool or sequentially, and independent of the number of worker threads.
//!
//! With the `parallel` feature disabled the sequential path is the only one
//! compiled. With it enabled, [`set_execution`] switches between the two at
//! runtime (the benches use this to compare them).

use std::sync::atomic::{AtomicU8, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random generator used for all per-item substreams.
pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

static EXECUTION: AtomicU8 = AtomicU8::new(1);

pub fn set_execution(mode: Execution) {
    EXECUTION.store(matches!(mode, Execution::Parallel) as u8, Ordering::Relaxed);
}

pub fn execution() -> Execution {
    if cfg!(feature = "parallel") && EXECUTION.load(Ordering::Relaxed) == 1 {
        Execution::Parallel
    } else {
        Execution::Sequential
    }
}

/// Domain tags keep substreams of different stages apart even when they
/// share a user seed.
pub mod domain {
    pub const SOURCE: u64 = 0x5352_4345;
    pub const SPLIT: u64 = 0x5350_4c54;
    pub const DETECT: u64 = 0x4445_5443;
    pub const EVENTS: u64 = 0x4556_4e54;
    pub const TRACE: u64 = 0x5452_4345;
    pub const BOOTSTRAP: u64 = 0x424f_4f54;
    pub const DARK_SCAN: u64 = 0x4441_524b;
    pub const SCENARIO: u64 = 0x5343_454e;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed, e.g. one per intensity point of a scan.
pub fn derive_seed(seed: u64, domain: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(domain)) ^ index)
}

/// The generator for item `index` of a stage tagged `domain`.
pub fn substream(seed: u64, domain: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(domain)));
    rng.set_stream(index);
    rng
}

/// `(0..n).map(f).collect()`, in parallel when enabled.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if execution() == Execution::Parallel {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// Maps over a slice with the element index, in parallel when enabled.
pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(usize, &S) -> T + Sync + Send,
{
    map_indexed(items.len(), |i| f(i, &items[i]))
}
