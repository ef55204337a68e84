//! Latency measurement with fixed warm-up and a trimmed mean.

use std::hint::black_box;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    co_attention, motion_guidance_cascade, motion_guidance_fast, motion_guidance_naive, CoAttentionConfig,
    MotionGuidanceConfig,
};
use crate::error::{Error, Result};
use crate::network::{Network, NetworkConfig};
use crate::tensor::{Shape, Tensor};

/// Round counts. The default warms up for 10 rounds, times 60 and averages
/// the middle 20 after dropping the 20 fastest and 20 slowest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub warmup: usize,
    pub rounds: usize,
    /// Rounds dropped from each end of the sorted timings.
    pub trim: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { warmup: 10, rounds: 60, trim: 20 }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || 2 * self.trim >= self.rounds {
            return Err(Error::invalid(
                "BenchConfig",
                format!("trimming {} per side leaves nothing of {} rounds", self.trim, self.rounds),
            ));
        }
        Ok(())
    }
}

/// Per-round wall-clock times in milliseconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub rounds: usize,
    pub kept: usize,
    pub trimmed_mean_ms: f64,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

impl LatencyStats {
    /// Summarizes raw samples, trimming `trim` from each end.
    pub fn from_samples(samples: &[f64], trim: usize) -> Result<Self> {
        if samples.is_empty() || 2 * trim >= samples.len() {
            return Err(Error::invalid("LatencyStats", "not enough samples to trim"));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let kept = &sorted[trim..n - trim];
        let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
        Ok(Self {
            rounds: n,
            kept: kept.len(),
            trimmed_mean_ms: kept.iter().sum::<f64>() / kept.len() as f64,
            mean_ms: sorted.iter().sum::<f64>() / n as f64,
            median_ms: median,
            min_ms: sorted[0],
            max_ms: sorted[n - 1],
        })
    }
}

/// Runs `f` for the warm-up rounds untimed, then times each measured round.
pub fn measure(cfg: &BenchConfig, mut f: impl FnMut() -> Result<()>) -> Result<LatencyStats> {
    cfg.validate()?;
    for _ in 0..cfg.warmup {
        f()?;
    }
    let mut samples = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        let start = Instant::now();
        f()?;
        samples.push(start.elapsed().as_secs_f64() * 1e3);
    }
    LatencyStats::from_samples(&samples, cfg.trim)
}

/// What to time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchTarget {
    MotionGuidanceNaive,
    MotionGuidanceFast,
    MotionGuidanceCascade,
    CoAttention,
    /// Forward pass of the default network at the given spatial size.
    Network,
}

impl BenchTarget {
    pub const ALL: [BenchTarget; 5] = [
        BenchTarget::MotionGuidanceNaive,
        BenchTarget::MotionGuidanceFast,
        BenchTarget::MotionGuidanceCascade,
        BenchTarget::CoAttention,
        BenchTarget::Network,
    ];
}

/// Input shape and module settings of a bench case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchCase {
    pub target: BenchTarget,
    pub shape: Shape,
    pub guidance: MotionGuidanceConfig,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub case: BenchCase,
    pub stats: LatencyStats,
}

/// Times one case on random `f32` inputs.
pub fn bench_case(case: &BenchCase, cfg: &BenchConfig) -> Result<BenchResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(case.seed);
    let s = case.shape;
    let g = case.guidance;
    let stats = match case.target {
        BenchTarget::Network => {
            let net_cfg = NetworkConfig::new(NetworkConfig::default().widths, g, (s.h, s.w));
            let net = Network::<f32>::new(net_cfg, case.seed)?;
            let frames = Tensor::random_uniform(Shape::new(s.n, 3, s.h, s.w), 0.0, 1.0, &mut rng);
            let flows = Tensor::random_uniform(Shape::new(s.n, 3, s.h, s.w), 0.0, 1.0, &mut rng);
            measure(cfg, || net.forward(&frames, &flows).map(|o| drop(black_box(o))))?
        }
        BenchTarget::CoAttention => {
            let ca = CoAttentionConfig { compression: g.compression };
            ca.validate(s.c)?;
            let va = Tensor::<f32>::random_uniform(s, -1.0, 1.0, &mut rng);
            let vb = Tensor::<f32>::random_uniform(s, -1.0, 1.0, &mut rng);
            let ka = Tensor::random_uniform(ca.kernel_shape(s.c), -0.5, 0.5, &mut rng);
            let kb = Tensor::random_uniform(ca.kernel_shape(s.c), -0.5, 0.5, &mut rng);
            measure(cfg, || co_attention(&va, &vb, &ca, &ka, &kb).map(|o| drop(black_box(o))))?
        }
        target => {
            g.validate(s.c)?;
            let va = Tensor::<f32>::random_uniform(s, -1.0, 1.0, &mut rng);
            let vm = Tensor::<f32>::random_uniform(s, -1.0, 1.0, &mut rng);
            let kernels: Vec<_> =
                (0..g.cascade).map(|_| Tensor::random_uniform(g.kernel_shape(s.c), -0.5, 0.5, &mut rng)).collect();
            let k = &kernels[0];
            match target {
                BenchTarget::MotionGuidanceNaive => {
                    measure(cfg, || motion_guidance_naive(&va, &vm, &g, k).map(|o| drop(black_box(o))))?
                }
                BenchTarget::MotionGuidanceFast => {
                    measure(cfg, || motion_guidance_fast(&va, &vm, &g, k).map(|o| drop(black_box(o))))?
                }
                _ => measure(cfg, || motion_guidance_cascade(&va, &vm, &g, &kernels).map(|o| drop(black_box(o))))?,
            }
        }
    };
    Ok(BenchResult { case: case.clone(), stats })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trimmed_mean_drops_both_tails() {
        let samples: Vec<f64> = (1..=60).map(f64::from).collect();
        let s = LatencyStats::from_samples(&samples, 20).unwrap();
        assert_eq!(s.kept, 20);
        assert_eq!(s.trimmed_mean_ms, 30.5);
        assert_eq!((s.min_ms, s.max_ms, s.median_ms), (1.0, 60.0, 30.5));
        let spiky = [1.0, 1.0, 1.0, 1000.0];
        assert_eq!(LatencyStats::from_samples(&spiky, 1).unwrap().trimmed_mean_ms, 1.0);
    }

    #[test]
    fn rejects_overtrimming() {
        assert!(BenchConfig { warmup: 0, rounds: 4, trim: 2 }.validate().is_err());
        assert!(LatencyStats::from_samples(&[], 0).is_err());
    }

    #[test]
    fn warmup_rounds_are_run_but_not_timed() {
        let mut calls = 0;
        let cfg = BenchConfig { warmup: 3, rounds: 5, trim: 1 };
        let stats = measure(&cfg, || {
            calls += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(calls, 8);
        assert_eq!((stats.rounds, stats.kept), (5, 3));
    }

    #[test]
    fn every_target_runs() {
        let cfg = BenchConfig { warmup: 0, rounds: 1, trim: 0 };
        for target in BenchTarget::ALL {
            let shape = if target == BenchTarget::Network { Shape::new(1, 3, 32, 32) } else { Shape::new(1, 4, 6, 6) };
            let case = BenchCase { target, shape, guidance: MotionGuidanceConfig::new(3, 2, 2), seed: 1 };
            assert!(bench_case(&case, &cfg).unwrap().stats.min_ms >= 0.0);
        }
    }
}
