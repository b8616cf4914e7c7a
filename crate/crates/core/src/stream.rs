//! Reproducible seed streams and sharded Monte Carlo plumbing.
//!
//! Every stochastic routine takes an explicit `(seed, shards)` pair.
//! Shard `k` draws from an independent ChaCha stream, shards are mapped
//! over a thread pool, and per-shard results are reduced in shard order,
//! so output depends only on `(seed, shards)` and never on scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::numeric::{log_sum_exp, Accumulator};

/// Independent RNG stream for one shard of a run.
pub fn shard_rng(seed: u64, shard: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(shard);
    rng
}

/// Split `total` samples over `shards` as evenly as possible.
pub fn split_samples(total: u64, shards: u32) -> Vec<u64> {
    let shards = shards.max(1) as u64;
    let base = total / shards;
    let extra = total % shards;
    (0..shards).map(|s| base + u64::from(s < extra)).collect()
}

/// Run one closure per shard with its own stream; results come back in
/// shard order independent of thread scheduling.
pub fn run_sharded<T: Send, F>(seed: u64, shards: u32, per_shard: F) -> Vec<T>
where
    F: Fn(u32, ChaCha8Rng) -> T + Sync,
{
    (0..shards.max(1))
        .into_par_iter()
        .map(|s| per_shard(s, shard_rng(seed, s as u64)))
        .collect()
}

/// Batch statistics for estimates of the form `log E[W]` where the weights
/// W = exp(L) arrive as log values. Batches are the unit of error
/// estimation; keep at least ~32 of them.
#[derive(Debug, Clone, Default)]
pub struct LogMeanBatches {
    /// per batch: (log sum of weights, log sum of squared weights, count)
    batches: Vec<(f64, f64, u64)>,
}

impl LogMeanBatches {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_batch(&mut self, log_weights: &[f64]) {
        if log_weights.is_empty() {
            return;
        }
        let lw = log_sum_exp(log_weights);
        let lw2: Vec<f64> = log_weights.iter().map(|&x| 2.0 * x).collect();
        self.batches
            .push((lw, log_sum_exp(&lw2), log_weights.len() as u64));
    }

    pub fn merge(&mut self, other: LogMeanBatches) {
        self.batches.extend(other.batches);
    }

    pub fn count(&self) -> u64 {
        self.batches.iter().map(|b| b.2).sum()
    }

    pub fn batch_count(&self) -> usize {
        self.batches.len()
    }

    /// log of the overall mean weight.
    pub fn log_mean(&self) -> f64 {
        let n = self.count();
        let logs: Vec<f64> = self.batches.iter().map(|b| b.0).collect();
        log_sum_exp(&logs) - (n as f64).ln()
    }

    /// Standard error of `log_mean`, by the delta method over batch means.
    pub fn log_mean_se(&self) -> f64 {
        let b = self.batches.len();
        if b < 2 {
            return f64::INFINITY;
        }
        let overall = self.log_mean();
        // ratios r_b = batch mean / overall mean, computed in log space
        let mut acc = Accumulator::new();
        let mut acc2 = Accumulator::new();
        for &(lw, _, n) in &self.batches {
            let r = (lw - (n as f64).ln() - overall).exp();
            acc.add(r);
            acc2.add(r * r);
        }
        let m = acc.value() / b as f64;
        let var = (acc2.value() / b as f64 - m * m).max(0.0) * b as f64 / (b as f64 - 1.0);
        (var / b as f64).sqrt() / m
    }

    /// Effective sample size (sum w)^2 / sum w^2.
    pub fn ess(&self) -> f64 {
        let lw: Vec<f64> = self.batches.iter().map(|b| b.0).collect();
        let lw2: Vec<f64> = self.batches.iter().map(|b| b.1).collect();
        (2.0 * log_sum_exp(&lw) - log_sum_exp(&lw2)).exp()
    }

    /// Bootstrap standard error of `log_mean` over batches.
    pub fn bootstrap_se(&self, resamples: u32, seed: u64) -> f64 {
        use rand::Rng;
        let b = self.batches.len();
        if b < 2 {
            return f64::INFINITY;
        }
        let mut rng = shard_rng(seed, u64::MAX);
        let mut stats = Vec::with_capacity(resamples as usize);
        for _ in 0..resamples {
            let mut logs = Vec::with_capacity(b);
            let mut n: u64 = 0;
            for _ in 0..b {
                let pick = &self.batches[rng.random_range(0..b)];
                logs.push(pick.0);
                n += pick.2;
            }
            stats.push(log_sum_exp(&logs) - (n as f64).ln());
        }
        crate::numeric::variance(&stats).sqrt()
    }
}
