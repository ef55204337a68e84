use std::path::Path;

use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{
    BinaryMask, FrameMetrics, MetricOptions, MetricsReport, ScoreMap, SequenceMetrics, MASK_THRESHOLD,
};
use crate::network::Network;
use crate::synth::{Transform, VideoClip};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Average the prediction with the unflipped prediction of the flipped input.
    pub flip: bool,
    pub metrics: MetricOptions,
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { flip: false, metrics: MetricOptions::default(), batch_size: 4 }
    }
}

/// Foreground probabilities for every frame of `clip`.
pub fn predict_clip(network: &Network<f32>, clip: &VideoClip, opts: &EvalOptions) -> Result<Vec<ScoreMap>> {
    clip.validate()?;
    let mut out = Vec::with_capacity(clip.len());
    let idx: Vec<usize> = (0..clip.len()).collect();
    let flow_max = clip.meta.flow_max.unwrap_or(crate::synth::FLOW_MAX);
    for chunk in idx.chunks(opts.batch_size.max(1)) {
        let frames = Tensor::stack(&chunk.iter().map(|&t| clip.frames[t].clone()).collect::<Vec<_>>())?;
        let flows = Tensor::stack(&chunk.iter().map(|&t| clip.flows[t].clone()).collect::<Vec<_>>())?;
        let prob = network.predict(&frames, &flows)?;
        let flipped = if opts.flip {
            let (mut f, mut g) = (Vec::new(), Vec::new());
            for &t in chunk {
                let (fa, ga, _) = Transform::flip().apply(&clip.frames[t], &clip.flows[t], &clip.masks[t], flow_max)?;
                f.push(fa);
                g.push(ga);
            }
            Some(network.predict(&Tensor::stack(&f)?, &Tensor::stack(&g)?)?)
        } else {
            None
        };
        for i in 0..chunk.len() {
            let mut scores = ScoreMap::from_tensor(&prob, i, 0)?;
            if let Some(fp) = &flipped {
                let back = ScoreMap::from_tensor(fp, i, 0)?.flip_horizontal();
                let avg = scores.data().iter().zip(back.data()).map(|(a, b)| 0.5 * (a + b)).collect();
                scores = ScoreMap::new(scores.height(), scores.width(), avg)?;
            }
            out.push(scores);
        }
    }
    Ok(out)
}

/// Per-clip and mean metrics, plus the predictions they were computed from.
pub fn evaluate(
    network: &Network<f32>,
    clips: &[VideoClip],
    opts: &EvalOptions,
) -> Result<(MetricsReport, Vec<Vec<ScoreMap>>)> {
    let mut sequences = Vec::with_capacity(clips.len());
    let mut predictions = Vec::with_capacity(clips.len());
    for (i, clip) in clips.iter().enumerate() {
        let scores = predict_clip(network, clip, opts)?;
        let frames = scores
            .iter()
            .zip(&clip.masks)
            .map(|(s, gt)| FrameMetrics::evaluate(s, gt, &opts.metrics))
            .collect::<Result<Vec<_>>>()?;
        let name = if clip.meta.name.is_empty() { format!("clip_{i:04}") } else { clip.meta.name.clone() };
        let metrics = FrameMetrics::mean(&frames).ok_or_else(|| Error::invalid("evaluate", "empty clip"))?;
        sequences.push(SequenceMetrics { name, metrics });
        predictions.push(scores);
    }
    Ok((MetricsReport::new(sequences)?, predictions))
}

/// Writes `<dir>/<clip>/NNNNN.pgm` binarized masks.
pub fn write_predictions(dir: &Path, clips: &[VideoClip], predictions: &[Vec<ScoreMap>]) -> Result<()> {
    for (i, (clip, preds)) in clips.iter().zip(predictions).enumerate() {
        let name = if clip.meta.name.is_empty() { format!("clip_{i:04}") } else { clip.meta.name.clone() };
        let sub = dir.join(name);
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        for (t, p) in preds.iter().enumerate() {
            let m = BinaryMask::from_scores(p, MASK_THRESHOLD);
            let img = GrayImage::from_fn(m.width() as u32, m.height() as u32, |x, y| {
                image::Luma([if m.get(y as usize, x as usize) { 255 } else { 0 }])
            });
            let path = sub.join(format!("{t:05}.pgm"));
            img.save(&path).map_err(|e| Error::Image { path: path.clone(), source: e })?;
        }
    }
    Ok(())
}
