//! Seeded, worker-count-independent Monte Carlo reductions.
//!
//! Samples are split into a fixed number of blocks, each drawn from its own
//! ChaCha stream keyed by `(seed, block)`. Blocks are reduced in index order,
//! so results are bitwise identical for any worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::linalg::C64;

pub type Rng = ChaCha8Rng;

pub const DEFAULT_BLOCKS: usize = 64;

pub fn stream_rng(seed: u64, stream: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Complex Gaussian with `E|z|^2 = variance`.
pub fn complex_gaussian(rng: &mut Rng, variance: f64) -> C64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(s * re, s * im)
}

/// Thermal coherent amplitude `sqrt(nbar / 2) (g1 + i g2)`.
pub fn thermal_amplitude(rng: &mut Rng, nbar: f64) -> C64 {
    complex_gaussian(rng, nbar)
}

/// Sizes of `blocks` nearly equal blocks covering `samples`.
pub fn block_sizes(samples: usize, blocks: usize) -> Vec<usize> {
    let blocks = blocks.min(samples).max(1);
    (0..blocks)
        .map(|b| samples / blocks + usize::from(b < samples % blocks))
        .collect()
}

/// Run `f(rng, count)` on every block, in parallel on `workers` threads, and
/// return the block results in block order.
pub fn run_blocks<T, F>(seed: u64, samples: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut Rng, usize) -> T + Sync,
{
    if samples == 0 {
        return Err(invalid("Monte Carlo needs at least one sample"));
    }
    let sizes = block_sizes(samples, DEFAULT_BLOCKS);
    let job = || {
        sizes
            .par_iter()
            .enumerate()
            .map(|(b, &n)| f(&mut stream_rng(seed, b as u64), n))
            .collect::<Vec<T>>()
    };
    if workers <= 1 {
        return Ok(sizes
            .iter()
            .enumerate()
            .map(|(b, &n)| f(&mut stream_rng(seed, b as u64), n))
            .collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| invalid(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(job))
}

/// Mean of a scalar with a batch-means standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Combine per-block `(sum, count)` pairs.
pub fn estimate(blocks: &[(f64, usize)]) -> Estimate {
    let n: usize = blocks.iter().map(|b| b.1).sum();
    let mean = blocks.iter().map(|b| b.0).sum::<f64>() / n as f64;
    let k = blocks.len();
    if k < 2 {
        return Estimate {
            mean,
            std_error: f64::NAN,
        };
    }
    let var: f64 = blocks
        .iter()
        .map(|&(s, c)| (s / c as f64 - mean).powi(2))
        .sum::<f64>()
        / (k - 1) as f64;
    Estimate {
        mean,
        std_error: (var / k as f64).sqrt(),
    }
}

/// Scalar Monte Carlo mean of `sample(rng)`.
pub fn mean_of<F>(seed: u64, samples: usize, workers: usize, sample: F) -> Result<Estimate>
where
    F: Fn(&mut Rng) -> f64 + Sync,
{
    let blocks = run_blocks(seed, samples, workers, |rng, n| {
        ((0..n).map(|_| sample(rng)).sum::<f64>(), n)
    })?;
    Ok(estimate(&blocks))
}
