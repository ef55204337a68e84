//! Training, evaluation and ablation runs.

mod ablate;
mod eval;
mod sgd;

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::network::{Network, NetworkConfig};
use crate::synth::{augment, AugmentConfig, VideoClip};
use crate::tensor::Tensor;

pub use ablate::{
    ablate, kernel_grid, run_variant, table_variants, write_ablation, AblationReport, AblationRow, AblationSetup,
    AblationSummary, AblationVariant, DESK_LR_SCALE,
};
pub use eval::{evaluate, predict_clip, write_predictions, EvalOptions};
pub use sgd::Sgd;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Learning rate of the encoders and guidance kernels.
    pub lr_extractor: f64,
    /// Learning rate of the decoder and head.
    pub lr_fusion: f64,
    /// Multiplicative learning-rate decay per epoch.
    pub lr_decay: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Steps per epoch; `None` is one pass over all frames.
    pub steps_per_epoch: Option<usize>,
    /// Random flip, rotation and zoom of every training sample.
    pub augment: Option<AugmentConfig>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_extractor: 1e-4,
            lr_fusion: 1e-3,
            lr_decay: 0.9,
            weight_decay: 5e-4,
            momentum: 0.9,
            batch_size: 4,
            epochs: 10,
            steps_per_epoch: None,
            augment: Some(AugmentConfig::default()),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |d: &str| Err(Error::invalid("TrainConfig", d));
        if !(self.lr_extractor >= 0.0 && self.lr_fusion >= 0.0) {
            return bad("learning rates must be non-negative");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        if !(self.weight_decay >= 0.0 && (0.0..1.0).contains(&self.momentum)) {
            return bad("weight_decay must be non-negative and momentum in [0, 1)");
        }
        if self.batch_size == 0 || self.steps_per_epoch == Some(0) {
            return bad("batch size and steps per epoch must be positive");
        }
        Ok(())
    }

    /// Learning rates `(extractor, fusion)` during `epoch` (0-based).
    pub fn rates(&self, epoch: usize) -> (f64, f64) {
        let f = self.lr_decay.powi(epoch as i32);
        (self.lr_extractor * f, self.lr_fusion * f)
    }
}

/// Loss curve of a training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean BCE over all training frames before the first step.
    pub initial_loss: f64,
    /// Mean step loss of every epoch.
    pub epoch_losses: Vec<f64>,
    pub step_losses: Vec<f64>,
    /// Mean BCE over all training frames after the last step.
    pub final_loss: f64,
}

/// `(frames, flows, masks)` of one batch.
pub type Batch = (Tensor<f32>, Tensor<f32>, Tensor<f32>);

/// Stacks frame `t` of clip `c` for every `(c, t)` in `items`.
pub fn make_batch(clips: &[VideoClip], items: &[(usize, usize)]) -> Result<Batch> {
    let frames: Vec<_> = items.iter().map(|&(c, t)| clips[c].frames[t].clone()).collect();
    let flows: Vec<_> = items.iter().map(|&(c, t)| clips[c].flows[t].clone()).collect();
    let masks: Vec<_> = items.iter().map(|&(c, t)| clips[c].mask_tensor(t)).collect();
    Ok((Tensor::stack(&frames)?, Tensor::stack(&flows)?, Tensor::stack(&masks)?))
}

fn check_data(network: &NetworkConfig, clips: &[VideoClip]) -> Result<Vec<(usize, usize)>> {
    if clips.is_empty() {
        return Err(Error::invalid("train", "no training clips"));
    }
    for clip in clips {
        clip.validate()?;
        if clip.resolution() != network.input {
            return Err(Error::shape(
                "train",
                format!("clip {} is {:?}, network expects {:?}", clip.meta.name, clip.resolution(), network.input),
            ));
        }
    }
    Ok(clips.iter().enumerate().flat_map(|(c, clip)| (0..clip.len()).map(move |t| (c, t))).collect())
}

/// Mean BCE over every frame of `clips`, in batches of `batch_size`.
pub fn dataset_loss(network: &Network<f32>, clips: &[VideoClip], batch_size: usize) -> Result<f64> {
    let items = check_data(&network.config, clips)?;
    let mut total = 0.0;
    for chunk in items.chunks(batch_size.max(1)) {
        let (f, g, m) = make_batch(clips, chunk)?;
        total += f64::from(network.loss(&f, &g, &m)?) * chunk.len() as f64;
    }
    Ok(total / items.len() as f64)
}

/// Endless shuffled passes over the sample list.
struct Sampler {
    items: Vec<(usize, usize)>,
    pos: usize,
}

impl Sampler {
    fn next_batch(&mut self, size: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
        (0..size)
            .map(|_| {
                if self.pos == 0 {
                    self.items.shuffle(rng);
                }
                let item = self.items[self.pos];
                self.pos = (self.pos + 1) % self.items.len();
                item
            })
            .collect()
    }
}

/// Trains `network` in place with SGD. Deterministic in `cfg.seed`.
pub fn train(cfg: &TrainConfig, network: &mut Network<f32>, clips: &[VideoClip]) -> Result<TrainLog> {
    cfg.validate()?;
    let items = check_data(&network.config, clips)?;
    let steps = cfg.steps_per_epoch.unwrap_or_else(|| items.len().div_ceil(cfg.batch_size));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sampler = Sampler { items, pos: 0 };
    let mut sgd = Sgd::new(&network.params, cfg.momentum, cfg.weight_decay);
    let mut log = TrainLog { initial_loss: dataset_loss(network, clips, cfg.batch_size)?, ..TrainLog::default() };

    for epoch in 0..cfg.epochs {
        let (lr_e, lr_f) = cfg.rates(epoch);
        let mut sum = 0.0;
        for _ in 0..steps {
            let picked = sampler.next_batch(cfg.batch_size, &mut rng);
            let (frames, flows, masks) = match &cfg.augment {
                None => make_batch(clips, &picked)?,
                Some(aug) => {
                    let (mut f, mut g, mut m) = (Vec::new(), Vec::new(), Vec::new());
                    for &(c, t) in &picked {
                        let clip = &clips[c];
                        let (fa, ga, ma) = augment(&clip.frames[t], &clip.flows[t], &clip.masks[t], aug, &mut rng)?;
                        f.push(fa);
                        g.push(ga);
                        m.push(ma.to_tensor());
                    }
                    (Tensor::stack(&f)?, Tensor::stack(&g)?, Tensor::stack(&m)?)
                }
            };
            let (loss, grads) = network.loss_and_grad(&frames, &flows, &masks)?;
            let loss = f64::from(loss);
            if !loss.is_finite() {
                return Err(Error::NonFinite { op: "train" });
            }
            sgd.step(&mut network.params, &grads, lr_e, lr_f)?;
            log.step_losses.push(loss);
            sum += loss;
        }
        log.epoch_losses.push(if steps == 0 { 0.0 } else { sum / steps as f64 });
    }
    log.final_loss = dataset_loss(network, clips, cfg.batch_size)?;
    Ok(log)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub train_secs: f64,
    pub eval_secs: f64,
}

/// Everything a `train` invocation reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub train: TrainConfig,
    pub network: NetworkConfig,
    /// Where the training data came from.
    pub data: String,
    pub log: TrainLog,
    pub metrics: Option<MetricsReport>,
    pub timings: Timings,
    pub checkpoint: Option<PathBuf>,
}

/// Builds a network from `init_seed`, trains it and optionally evaluates it
/// on held-out clips.
pub fn run_experiment(
    network: &NetworkConfig,
    train_cfg: &TrainConfig,
    init_seed: u64,
    train_clips: &[VideoClip],
    eval: Option<(&[VideoClip], &EvalOptions)>,
) -> Result<(Network<f32>, RunRecord)> {
    let mut net = Network::<f32>::new(network.clone(), init_seed)?;
    let start = Instant::now();
    let log = train(train_cfg, &mut net, train_clips)?;
    let train_secs = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let metrics = match eval {
        Some((clips, opts)) => Some(evaluate(&net, clips, opts)?.0),
        None => None,
    };
    let record = RunRecord {
        train: train_cfg.clone(),
        network: network.clone(),
        data: format!("{} clips", train_clips.len()),
        log,
        metrics,
        timings: Timings { train_secs, eval_secs: start.elapsed().as_secs_f64() },
        checkpoint: None,
    };
    Ok((net, record))
}
