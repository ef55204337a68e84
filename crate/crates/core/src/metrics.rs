//! Segmentation quality measures: region similarity R (intersection over
//! union), contour accuracy F, their mean, mean absolute error and F_β.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

/// Binarization threshold shared by mask prediction and the metrics.
pub const MASK_THRESHOLD: f64 = 0.5;

/// Weight of precision in F_β.
pub const DEFAULT_BETA2: f64 = 0.3;

/// `H×W` mask with values in `{0, 1}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    h: usize,
    w: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(h: usize, w: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::shape("BinaryMask::new", format!("{} values for {h}×{w}", data.len())));
        }
        Ok(Self { h, w, data })
    }

    pub fn empty(h: usize, w: usize) -> Self {
        Self { h, w, data: vec![false; h * w] }
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let data = (0..h).flat_map(|y| (0..w).map(move |x| (y, x))).map(|(y, x)| f(y, x)).collect();
        Self { h, w, data }
    }

    /// From `0`/`1` values; anything else is an error.
    pub fn from_values<T: Real>(h: usize, w: usize, values: &[T]) -> Result<Self> {
        if let Some(v) = values.iter().find(|&&v| v != T::zero() && v != T::one()) {
            return Err(Error::invalid("BinaryMask::from_values", format!("mask value {v} is not 0 or 1")));
        }
        Self::new(h, w, values.iter().map(|&v| v == T::one()).collect())
    }

    /// Plane `(n, c)` of a `{0, 1}` tensor.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, n: usize, c: usize) -> Result<Self> {
        let s = t.shape();
        Self::from_values(s.h, s.w, t.plane(n, c))
    }

    /// Foreground where `p ≥ threshold`.
    pub fn from_scores(scores: &ScoreMap, threshold: f64) -> Self {
        Self { h: scores.h, w: scores.w, data: scores.data.iter().map(|&p| p >= threshold).collect() }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.w + x]
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.h, self.w, |y, x| self.get(y, self.w - 1 - x))
    }

    /// `(1, 1, H, W)` tensor of zeros and ones.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|&b| if b { T::one() } else { T::zero() }).collect();
        Tensor::from_vec(Shape::new(1, 1, self.h, self.w), data).expect("length matches")
    }

    /// Mask pixels with at least one 4-neighbour of opposite value; outside
    /// the image counts as background.
    pub fn boundary(&self) -> Self {
        let (h, w) = (self.h as isize, self.w as isize);
        let at = |y: isize, x: isize| y >= 0 && x >= 0 && y < h && x < w && self.get(y as usize, x as usize);
        Self::from_fn(self.h, self.w, |y, x| {
            let (y, x) = (y as isize, x as isize);
            at(y, x) && [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|&(dy, dx)| !at(y + dy, x + dx))
        })
    }

    /// Every pixel within Chebyshev distance `r` of a foreground pixel.
    pub fn dilate(&self, r: usize) -> Self {
        if r == 0 {
            return self.clone();
        }
        // summed-area table of the mask
        let (h, w) = (self.h, self.w);
        let mut sat = vec![0usize; (h + 1) * (w + 1)];
        for y in 0..h {
            for x in 0..w {
                sat[(y + 1) * (w + 1) + x + 1] =
                    usize::from(self.get(y, x)) + sat[y * (w + 1) + x + 1] + sat[(y + 1) * (w + 1) + x]
                        - sat[y * (w + 1) + x];
            }
        }
        Self::from_fn(h, w, |y, x| {
            let (y0, x0) = (y.saturating_sub(r), x.saturating_sub(r));
            let (y1, x1) = ((y + r + 1).min(h), (x + r + 1).min(w));
            sat[y1 * (w + 1) + x1] + sat[y0 * (w + 1) + x0] > sat[y0 * (w + 1) + x1] + sat[y1 * (w + 1) + x0]
        })
    }

    fn check_same(&self, op: &'static str, other: &Self) -> Result<()> {
        if (self.h, self.w) != (other.h, other.w) {
            return Err(Error::shape(op, format!("{}×{} vs {}×{}", self.h, self.w, other.h, other.w)));
        }
        Ok(())
    }
}

/// `H×W` foreground scores in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl ScoreMap {
    pub fn new(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::shape("ScoreMap::new", format!("{} values for {h}×{w}", data.len())));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid("ScoreMap::new", format!("score {v} outside [0, 1]")));
        }
        Ok(Self { h, w, data })
    }

    pub fn from_tensor<T: Real>(t: &Tensor<T>, n: usize, c: usize) -> Result<Self> {
        let s = t.shape();
        Self::new(s.h, s.w, t.plane(n, c).iter().map(|v| v.to_f64_lossy()).collect())
    }

    pub fn from_mask(m: &BinaryMask) -> Self {
        Self { h: m.h, w: m.w, data: m.data.iter().map(|&b| f64::from(u8::from(b))).collect() }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn flip_horizontal(&self) -> Self {
        let data = (0..self.h)
            .flat_map(|y| (0..self.w).rev().map(move |x| (y, x)))
            .map(|(y, x)| self.data[y * self.w + x])
            .collect();
        Self { h: self.h, w: self.w, data }
    }
}

/// `|M ∩ GT| / |M ∪ GT|`; 1 when both masks are empty.
pub fn region_similarity(m: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    m.check_same("region_similarity", gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in m.data.iter().zip(&gt.data) {
        inter += usize::from(a && b);
        union += usize::from(a || b);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// `ceil(0.0075 · diagonal)` pixels.
pub fn default_tolerance(h: usize, w: usize) -> usize {
    (0.0075 * ((h * h + w * w) as f64).sqrt()).ceil() as usize
}

/// Boundary precision and recall at Chebyshev tolerance `tolerance_px`.
/// Both are 1 when both masks are empty.
pub fn contour_precision_recall(m: &BinaryMask, gt: &BinaryMask, tolerance_px: usize) -> Result<(f64, f64)> {
    m.check_same("contour_f", gt)?;
    let (bm, bg) = (m.boundary(), gt.boundary());
    let (nm, ng) = (bm.count(), bg.count());
    if nm == 0 && ng == 0 {
        return Ok((1.0, 1.0));
    }
    let matched = |b: &BinaryMask, reach: &BinaryMask| b.data.iter().zip(&reach.data).filter(|(&x, &y)| x && y).count();
    let pre = if nm == 0 { 0.0 } else { matched(&bm, &bg.dilate(tolerance_px)) as f64 / nm as f64 };
    let rec = if ng == 0 { 0.0 } else { matched(&bg, &bm.dilate(tolerance_px)) as f64 / ng as f64 };
    Ok((pre, rec))
}

/// Contour F-measure `2·Pre·Rec / (Pre + Rec)`, 0 when both vanish.
pub fn contour_f(m: &BinaryMask, gt: &BinaryMask, tolerance_px: usize) -> Result<f64> {
    let (p, r) = contour_precision_recall(m, gt, tolerance_px)?;
    Ok(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
}

pub fn j_and_f(r: f64, f: f64) -> f64 {
    (r + f) / 2.0
}

/// Mean absolute difference between scores and ground truth.
pub fn mae(s: &ScoreMap, gt: &BinaryMask) -> Result<f64> {
    if (s.h, s.w) != (gt.h, gt.w) {
        return Err(Error::shape("mae", format!("{}×{} vs {}×{}", s.h, s.w, gt.h, gt.w)));
    }
    if s.data.is_empty() {
        return Err(Error::invalid("mae", "empty map"));
    }
    let sum: f64 = s.data.iter().zip(&gt.data).map(|(&p, &g)| (p - f64::from(u8::from(g))).abs()).sum();
    Ok(sum / s.data.len() as f64)
}

/// How F_β binarizes the score map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdPolicy {
    /// Foreground where `score ≥ t`.
    Fixed(f64),
    /// Maximum over thresholds `k/255`, `k = 1..=255`.
    Sweep,
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        Self::Fixed(MASK_THRESHOLD)
    }
}

/// `(1 + β²)·Pre·Rec / (β²·Pre + Rec)` from pixel counts. A ratio with a zero
/// denominator is 0, except that an empty prediction of an empty ground
/// truth scores 1.
pub fn f_beta_from_counts(tp: usize, fp: usize, fn_: usize, beta2: f64) -> f64 {
    if tp + fp + fn_ == 0 {
        return 1.0;
    }
    let pre = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let rec = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let den = beta2 * pre + rec;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + beta2) * pre * rec / den
    }
}

pub fn f_beta(s: &ScoreMap, gt: &BinaryMask, beta2: f64, policy: ThresholdPolicy) -> Result<f64> {
    if (s.h, s.w) != (gt.h, gt.w) {
        return Err(Error::shape("f_beta", format!("{}×{} vs {}×{}", s.h, s.w, gt.h, gt.w)));
    }
    let at = |t: f64| {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (&p, &g) in s.data.iter().zip(&gt.data) {
            match (p >= t, g) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        f_beta_from_counts(tp, fp, fn_, beta2)
    };
    Ok(match policy {
        ThresholdPolicy::Fixed(t) => at(t),
        ThresholdPolicy::Sweep => (1..=255).map(|k| at(k as f64 / 255.0)).fold(0.0, f64::max),
    })
}

/// Settings shared by every frame of an evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricOptions {
    /// Contour tolerance in pixels; `None` uses [`default_tolerance`].
    pub tolerance_px: Option<usize>,
    pub beta2: f64,
    pub threshold: ThresholdPolicy,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self { tolerance_px: None, beta2: DEFAULT_BETA2, threshold: ThresholdPolicy::default() }
    }
}

/// All five quantities for one frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "RF")]
    pub rf: f64,
    #[serde(rename = "MAE")]
    pub mae: f64,
    #[serde(rename = "Fbeta")]
    pub fbeta: f64,
}

impl FrameMetrics {
    /// R and F use the mask binarized at [`MASK_THRESHOLD`]; MAE and F_β use the raw scores.
    pub fn evaluate(scores: &ScoreMap, gt: &BinaryMask, opts: &MetricOptions) -> Result<Self> {
        let m = BinaryMask::from_scores(scores, MASK_THRESHOLD);
        let r = region_similarity(&m, gt)?;
        let tol = opts.tolerance_px.unwrap_or_else(|| default_tolerance(gt.h, gt.w));
        let f = contour_f(&m, gt, tol)?;
        Ok(Self {
            r,
            f,
            rf: j_and_f(r, f),
            mae: mae(scores, gt)?,
            fbeta: f_beta(scores, gt, opts.beta2, opts.threshold)?,
        })
    }

    /// Componentwise mean; `None` for an empty slice.
    pub fn mean(items: &[Self]) -> Option<Self> {
        if items.is_empty() {
            return None;
        }
        let n = items.len() as f64;
        let sum = |f: fn(&Self) -> f64| items.iter().map(f).sum::<f64>() / n;
        let (r, f) = (sum(|m| m.r), sum(|m| m.f));
        Some(Self { r, f, rf: j_and_f(r, f), mae: sum(|m| m.mae), fbeta: sum(|m| m.fbeta) })
    }
}

/// Per-sequence means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetrics {
    pub name: String,
    #[serde(flatten)]
    pub metrics: FrameMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sequences: Vec<SequenceMetrics>,
    /// Mean over sequences.
    pub mean: FrameMetrics,
}

impl MetricsReport {
    pub fn new(sequences: Vec<SequenceMetrics>) -> Result<Self> {
        let per: Vec<FrameMetrics> = sequences.iter().map(|s| s.metrics).collect();
        let mean = FrameMetrics::mean(&per).ok_or_else(|| Error::invalid("MetricsReport", "no sequences"))?;
        Ok(Self { sequences, mean })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(h: usize, w: usize, y0: usize, x0: usize, side: usize) -> BinaryMask {
        BinaryMask::from_fn(h, w, |y, x| (y0..y0 + side).contains(&y) && (x0..x0 + side).contains(&x))
    }

    #[test]
    fn region_similarity_examples() {
        let full = BinaryMask::from_fn(4, 4, |_, _| true);
        let left = BinaryMask::from_fn(4, 4, |_, x| x < 2);
        let right = BinaryMask::from_fn(4, 4, |_, x| x >= 2);
        assert_eq!(region_similarity(&left, &full).unwrap(), 0.5);
        assert_eq!(region_similarity(&full, &full).unwrap(), 1.0);
        assert_eq!(region_similarity(&left, &right).unwrap(), 0.0);
        assert_eq!(region_similarity(&BinaryMask::empty(3, 3), &BinaryMask::empty(3, 3)).unwrap(), 1.0);
        assert!(region_similarity(&left, &BinaryMask::empty(4, 3)).is_err());
    }

    #[test]
    fn square_boundary_is_its_ring() {
        let b = square(8, 8, 2, 2, 3).boundary();
        assert_eq!(b.count(), 8);
        assert!(!b.get(3, 3));
        // border pixels are boundary because outside counts as background
        let full = BinaryMask::from_fn(3, 3, |_, _| true).boundary();
        assert_eq!(full.count(), 8);
    }

    #[test]
    fn shifted_square_at_zero_tolerance() {
        let gt = square(8, 8, 2, 2, 3);
        let m = square(8, 8, 2, 3, 3);
        let (p, r) = contour_precision_recall(&m, &gt, 0).unwrap();
        assert_eq!((p, r), (0.5, 0.5));
        assert_eq!(contour_f(&m, &gt, 0).unwrap(), 0.5);
        assert_eq!(contour_f(&m, &gt, 1).unwrap(), 1.0);
    }

    #[test]
    fn contour_conventions() {
        let a = square(8, 8, 1, 1, 4);
        for t in 0..4 {
            assert_eq!(contour_f(&a, &a, t).unwrap(), 1.0);
        }
        assert_eq!(contour_f(&BinaryMask::empty(8, 8), &a, 2).unwrap(), 0.0);
        assert_eq!(contour_f(&a, &BinaryMask::empty(8, 8), 2).unwrap(), 0.0);
        assert_eq!(contour_f(&BinaryMask::empty(8, 8), &BinaryMask::empty(8, 8), 0).unwrap(), 1.0);
    }

    #[test]
    fn default_tolerance_scales_with_diagonal() {
        assert_eq!(default_tolerance(8, 8), 1);
        assert_eq!(default_tolerance(480, 854), 8);
    }

    #[test]
    fn j_and_f_examples() {
        assert_eq!(j_and_f(1.0, 1.0), 1.0);
        assert_eq!(j_and_f(0.0, 0.0), 0.0);
        assert!((j_and_f(0.8, 0.6) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn mae_examples() {
        let g = square(5, 5, 1, 1, 2);
        assert_eq!(mae(&ScoreMap::from_mask(&g), &g).unwrap(), 0.0);
        assert_eq!(mae(&ScoreMap::new(5, 5, vec![0.5; 25]).unwrap(), &g).unwrap(), 0.5);
        let s = ScoreMap::new(3, 3, vec![0.1, 0.9, 0.4, 0.0, 1.0, 0.3, 0.7, 0.2, 0.6]).unwrap();
        let g = BinaryMask::from_fn(3, 3, |y, x| (y + x) % 2 == 0);
        let want = (0.9 + 0.9 + 0.6 + 0.0 + 0.0 + 0.3 + 0.3 + 0.2 + 0.4) / 9.0;
        assert!((mae(&s, &g).unwrap() - want).abs() < 1e-12);
        assert!(ScoreMap::new(1, 1, vec![1.5]).is_err());
    }

    #[test]
    fn f_beta_closed_forms() {
        // Pre 0.5, Rec 1
        assert!((f_beta_from_counts(2, 2, 0, 0.3) - 1.3 * 0.5 / 1.15).abs() < 1e-12);
        assert!((f_beta_from_counts(2, 2, 0, 0.3) - 0.5652).abs() < 1e-4);
        // Pre = Rec = 0.75 for any β²
        for b in [0.3, 1.0, 2.0] {
            assert!((f_beta_from_counts(3, 1, 1, b) - 0.75).abs() < 1e-12);
        }
        assert_eq!(f_beta_from_counts(0, 3, 2, 0.3), 0.0);
        let g = square(6, 6, 1, 1, 3);
        let perfect = ScoreMap::from_mask(&g);
        assert_eq!(f_beta(&perfect, &g, 0.3, ThresholdPolicy::default()).unwrap(), 1.0);
        assert_eq!(f_beta(&perfect, &g, 0.3, ThresholdPolicy::Sweep).unwrap(), 1.0);
    }

    #[test]
    fn sweep_never_loses_to_fixed_threshold() {
        let g = square(6, 6, 1, 1, 3);
        let s = ScoreMap::new(6, 6, (0..36).map(|i| (i % 7) as f64 / 7.0).collect()).unwrap();
        let fixed = f_beta(&s, &g, 0.3, ThresholdPolicy::default()).unwrap();
        let sweep = f_beta(&s, &g, 0.3, ThresholdPolicy::Sweep).unwrap();
        assert!(sweep >= fixed);
    }

    #[test]
    fn report_means_and_json_keys() {
        let a = FrameMetrics { r: 0.8, f: 0.6, rf: 0.7, mae: 0.1, fbeta: 0.9 };
        let b = FrameMetrics { r: 0.4, f: 0.2, rf: 0.3, mae: 0.3, fbeta: 0.5 };
        let report = MetricsReport::new(vec![
            SequenceMetrics { name: "a".into(), metrics: a },
            SequenceMetrics { name: "b".into(), metrics: b },
        ])
        .unwrap();
        assert!((report.mean.r - 0.6).abs() < 1e-12);
        assert!((report.mean.rf - (report.mean.r + report.mean.f) / 2.0).abs() < 1e-12);
        let v: serde_json::Value = serde_json::from_str(&report.to_json().unwrap()).unwrap();
        for key in ["name", "R", "F", "RF", "MAE", "Fbeta"] {
            assert!(v["sequences"][0].get(key).is_some(), "{key}");
        }
        assert!(MetricsReport::new(Vec::new()).is_err());
    }

    #[test]
    fn frame_metrics_of_perfect_prediction() {
        let g = square(16, 16, 4, 5, 6);
        let m = FrameMetrics::evaluate(&ScoreMap::from_mask(&g), &g, &MetricOptions::default()).unwrap();
        assert_eq!(m, FrameMetrics { r: 1.0, f: 1.0, rf: 1.0, mae: 0.0, fbeta: 1.0 });
    }
}
