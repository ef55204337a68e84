use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attention::MotionGuidanceConfig;
use crate::error::{Error, Result};
use crate::metrics::FrameMetrics;
use crate::network::{EnhancementMode, FusionMode, Network, NetworkConfig};
use crate::synth::{generate_dataset, SynthConfig, VideoClip};
use crate::train::{evaluate, train, EvalOptions, TrainConfig};

/// Offset between the synthesis seeds of training and held-out clips.
const HELD_OUT_OFFSET: u64 = 5_000;
/// Spacing of synthesis seeds between run seeds.
const SEED_STRIDE: u64 = 10_000;

/// One model variant of an ablation grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationVariant {
    pub name: String,
    pub enhancement: EnhancementMode,
    pub fusion: FusionMode,
    pub window: usize,
    pub cascade: usize,
}

impl AblationVariant {
    pub fn apply(&self, base: &NetworkConfig) -> NetworkConfig {
        let d = base.guidance.first().map_or(2, |g| g.compression);
        base.clone()
            .with_enhancement(self.enhancement)
            .with_fusion(self.fusion)
            .with_guidance(MotionGuidanceConfig::new(self.window, d, self.cascade))
    }
}

/// Full model, then without motion guidance (element-wise product instead),
/// then additionally without progressive fusion (U-Net decoder).
pub fn table_variants(window: usize, cascade: usize) -> Vec<AblationVariant> {
    let v =
        |name: &str, enhancement, fusion| AblationVariant { name: name.into(), enhancement, fusion, window, cascade };
    vec![
        v("full", EnhancementMode::MotionGuidance, FusionMode::Progressive),
        v("-FG", EnhancementMode::ElementwiseMul, FusionMode::Progressive),
        v("-FG-U", EnhancementMode::ElementwiseMul, FusionMode::UnetBaseline),
    ]
}

/// Full model over every window size and cascade depth.
pub fn kernel_grid(windows: &[usize], cascades: &[usize]) -> Vec<AblationVariant> {
    windows
        .iter()
        .flat_map(|&window| {
            cascades.iter().map(move |&cascade| AblationVariant {
                name: format!("K{window}_x{cascade}"),
                enhancement: EnhancementMode::MotionGuidance,
                fusion: FusionMode::Progressive,
                window,
                cascade,
            })
        })
        .collect()
}

/// Everything shared by the rows of a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSetup {
    /// Widths, input size and compression; variants override the rest.
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub eval: EvalOptions,
    /// Clip generator; its seed offsets every data seed.
    pub synth: SynthConfig,
    pub train_clips: usize,
    pub test_clips: usize,
    /// Each seed fixes data, initialization and sample order.
    pub seeds: Vec<u64>,
}

/// Learning-rate multiplier of the desk grid over the full-scale rates, which
/// assume tens of thousands of steps rather than a thousand.
pub const DESK_LR_SCALE: f64 = 5.0;

impl Default for AblationSetup {
    fn default() -> Self {
        let synth = SynthConfig { height: 64, width: 96, radius: (7.0, 12.0), ..SynthConfig::default() };
        let full = TrainConfig::default();
        Self {
            network: NetworkConfig::new(vec![8, 16, 32, 64], MotionGuidanceConfig::new(3, 2, 3), (64, 96)),
            train: TrainConfig {
                lr_extractor: full.lr_extractor * DESK_LR_SCALE,
                lr_fusion: full.lr_fusion * DESK_LR_SCALE,
                steps_per_epoch: Some(100),
                ..full
            },
            eval: EvalOptions::default(),
            synth,
            train_clips: 8,
            test_clips: 4,
            seeds: vec![0, 1, 2],
        }
    }
}

impl AblationSetup {
    /// Training and held-out clips for `seed`.
    pub fn data(&self, seed: u64) -> Result<(Vec<VideoClip>, Vec<VideoClip>)> {
        let base = self.synth.seed.wrapping_add(seed.wrapping_mul(SEED_STRIDE));
        let train = generate_dataset(&SynthConfig { seed: base, ..self.synth.clone() }, self.train_clips)?;
        let test =
            generate_dataset(&SynthConfig { seed: base + HELD_OUT_OFFSET, ..self.synth.clone() }, self.test_clips)?;
        Ok((train, test))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    /// Held-out means over clips.
    pub metrics: FrameMetrics,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub train_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub variant: String,
    pub runs: usize,
    /// Means over seeds.
    pub metrics: FrameMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub setup: AblationSetup,
    pub variants: Vec<AblationVariant>,
    pub rows: Vec<AblationRow>,
    pub summary: Vec<AblationSummary>,
}

impl AblationReport {
    pub fn summary_for(&self, variant: &str) -> Option<&AblationSummary> {
        self.summary.iter().find(|s| s.variant == variant)
    }
}

fn run_on(
    setup: &AblationSetup,
    variant: &AblationVariant,
    seed: u64,
    train_clips: &[VideoClip],
    test_clips: &[VideoClip],
) -> Result<AblationRow> {
    let mut net = Network::<f32>::new(variant.apply(&setup.network), seed)?;
    let cfg = TrainConfig { seed, ..setup.train.clone() };
    let start = Instant::now();
    let log = train(&cfg, &mut net, train_clips)?;
    let train_secs = start.elapsed().as_secs_f64();
    let (report, _) = evaluate(&net, test_clips, &setup.eval)?;
    Ok(AblationRow {
        variant: variant.name.clone(),
        seed,
        metrics: report.mean,
        initial_loss: log.initial_loss,
        final_loss: log.final_loss,
        train_secs,
    })
}

/// Trains and evaluates one variant for one seed in isolation.
pub fn run_variant(setup: &AblationSetup, variant: &AblationVariant, seed: u64) -> Result<AblationRow> {
    let (train_clips, test_clips) = setup.data(seed)?;
    run_on(setup, variant, seed, &train_clips, &test_clips)
}

/// Runs every variant for every seed; `progress` sees each row as it finishes.
pub fn ablate(
    setup: &AblationSetup,
    variants: &[AblationVariant],
    mut progress: impl FnMut(&AblationRow),
) -> Result<AblationReport> {
    if variants.is_empty() || setup.seeds.is_empty() {
        return Err(Error::invalid("ablate", "empty grid"));
    }
    let mut rows = Vec::with_capacity(variants.len() * setup.seeds.len());
    for &seed in &setup.seeds {
        let (train_clips, test_clips) = setup.data(seed)?;
        for v in variants {
            let row = run_on(setup, v, seed, &train_clips, &test_clips)?;
            progress(&row);
            rows.push(row);
        }
    }
    let summary = variants
        .iter()
        .map(|v| {
            let runs: Vec<FrameMetrics> = rows.iter().filter(|r| r.variant == v.name).map(|r| r.metrics).collect();
            AblationSummary {
                variant: v.name.clone(),
                runs: runs.len(),
                metrics: FrameMetrics::mean(&runs).expect("every variant ran"),
            }
        })
        .collect();
    Ok(AblationReport { setup: setup.clone(), variants: variants.to_vec(), rows, summary })
}

#[derive(Serialize)]
struct CsvRow<'a> {
    variant: &'a str,
    seed: Option<u64>,
    #[serde(rename = "R")]
    r: f64,
    #[serde(rename = "F")]
    f: f64,
    #[serde(rename = "RF")]
    rf: f64,
    #[serde(rename = "MAE")]
    mae: f64,
    #[serde(rename = "Fbeta")]
    fbeta: f64,
    final_loss: Option<f64>,
}

/// Writes `<stem>.json` (full report) and `<stem>.csv` (one line per run,
/// then one mean line per variant with an empty seed).
pub fn write_ablation(stem: &Path, report: &AblationReport) -> Result<()> {
    if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let json = stem.with_extension("json");
    fs::write(&json, serde_json::to_vec_pretty(report)?).map_err(|e| Error::io(&json, e))?;
    let csv_path = stem.with_extension("csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    let line = |variant, seed, m: &FrameMetrics, final_loss| CsvRow {
        variant,
        seed,
        r: m.r,
        f: m.f,
        rf: m.rf,
        mae: m.mae,
        fbeta: m.fbeta,
        final_loss,
    };
    for r in &report.rows {
        w.serialize(line(&r.variant, Some(r.seed), &r.metrics, Some(r.final_loss)))?;
    }
    for s in &report.summary {
        w.serialize(line(&s.variant, None, &s.metrics, None))?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))
}
