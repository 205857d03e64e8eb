//! Evaluation metrics: execution rate, SSIM, content and position
//! similarity over shape inventories, and the batch aggregate where failed
//! samples score zero.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inventory::{ShapeRecord, SlideSize};
use crate::raster::{self, RasterImage};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot compare a zero-sized image")]
    Degenerate,
    #[error("batch is empty")]
    EmptyBatch,
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_RANGE: f64 = 255.0;

fn gaussian_1d(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

fn luma_f64(img: &RasterImage) -> Vec<f64> {
    raster::to_grayscale(img).values.iter().map(|&v| v as f64).collect()
}

/// Window side used for an image; shrinks (keeping it odd) when the image
/// is smaller than the standard 11 px window.
pub fn ssim_window(width: usize, height: usize) -> usize {
    let w = SSIM_WINDOW.min(width).min(height);
    if w.is_multiple_of(2) {
        w - 1
    } else {
        w
    }
}

/// Mean SSIM over all positions where the Gaussian window fits entirely.
pub fn ssim_luma(a: &[f64], b: &[f64], width: usize, height: usize) -> Result<f64, EvalError> {
    if width == 0 || height == 0 || a.len() != width * height || b.len() != a.len() {
        return Err(EvalError::Degenerate);
    }
    let win = ssim_window(width, height);
    let kernel = gaussian_1d(win, SSIM_SIGMA);
    let (ow, oh) = (width - win + 1, height - win + 1);

    let products: [Vec<f64>; 5] = [
        a.to_vec(),
        b.to_vec(),
        a.iter().map(|x| x * x).collect(),
        b.iter().map(|x| x * x).collect(),
        a.iter().zip(b).map(|(x, y)| x * y).collect(),
    ];
    let filtered = products.map(|src| {
        let mut horiz = vec![0.0; ow * height];
        for y in 0..height {
            for x in 0..ow {
                horiz[y * ow + x] = kernel.iter().enumerate().map(|(k, w)| w * src[y * width + x + k]).sum();
            }
        }
        let mut out = vec![0.0; ow * oh];
        for y in 0..oh {
            for x in 0..ow {
                out[y * ow + x] = kernel.iter().enumerate().map(|(k, w)| w * horiz[(y + k) * ow + x]).sum();
            }
        }
        out
    });
    let [mu_a, mu_b, aa, bb, ab] = &filtered;
    let c1 = (SSIM_K1 * SSIM_RANGE).powi(2);
    let c2 = (SSIM_K2 * SSIM_RANGE).powi(2);
    let mut total = 0.0;
    for i in 0..ow * oh {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = aa[i] - ma * ma;
        let var_b = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
    }
    Ok(total / (ow * oh) as f64)
}

/// SSIM of `candidate` against `reference`, after resampling the candidate
/// to the reference's size. Clamped to `[0, 1]`.
pub fn ssim(reference: &RasterImage, candidate: &RasterImage) -> Result<f64, EvalError> {
    let (w, h) = (reference.width(), reference.height());
    let resized = raster::resize_bilinear(candidate, w, h);
    let value = ssim_luma(&luma_f64(reference), &luma_f64(&resized), w, h)?;
    Ok(value.clamp(0.0, 1.0))
}

/// Longest common subsequence over chars divided by the longer length.
pub fn text_similarity(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for ca in &a {
        for (j, cb) in b.iter().enumerate() {
            cur[j + 1] = if ca == cb {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()] as f64 / a.len().max(b.len()) as f64
}

fn center_distance(a: &ShapeRecord, b: &ShapeRecord) -> f64 {
    let (ax, ay) = a.bbox.center();
    let (bx, by) = b.bbox.center();
    (ax - bx).hypot(ay - by)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    /// (reference index, generated index)
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_ref: Vec<usize>,
    pub unmatched_gen: Vec<usize>,
    pub ref_len: usize,
    pub gen_len: usize,
}

impl Matching {
    fn denominator(&self) -> usize {
        self.ref_len.max(self.gen_len)
    }
}

/// Greedy one-to-one matching between shapes of the same type, preferring
/// higher text similarity, then closer centres.
pub fn match_shapes(reference: &[ShapeRecord], generated: &[ShapeRecord]) -> Matching {
    let mut candidates = Vec::new();
    for (i, r) in reference.iter().enumerate() {
        for (j, g) in generated.iter().enumerate() {
            if r.type_name == g.type_name {
                candidates.push((text_similarity(&r.text, &g.text), center_distance(r, g), i, j));
            }
        }
    }
    candidates.sort_by(|x, y| {
        y.0.total_cmp(&x.0)
            .then(x.1.total_cmp(&y.1))
            .then(x.2.cmp(&y.2))
            .then(x.3.cmp(&y.3))
    });
    let mut ref_used = vec![false; reference.len()];
    let mut gen_used = vec![false; generated.len()];
    let mut pairs = Vec::new();
    for (_, _, i, j) in candidates {
        if !ref_used[i] && !gen_used[j] {
            ref_used[i] = true;
            gen_used[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    Matching {
        pairs,
        unmatched_ref: (0..reference.len()).filter(|&i| !ref_used[i]).collect(),
        unmatched_gen: (0..generated.len()).filter(|&j| !gen_used[j]).collect(),
        ref_len: reference.len(),
        gen_len: generated.len(),
    }
}

pub fn content_similarity(reference: &[ShapeRecord], generated: &[ShapeRecord], m: &Matching) -> f64 {
    if m.denominator() == 0 {
        return 1.0;
    }
    let total: f64 = m
        .pairs
        .iter()
        .map(|&(i, j)| text_similarity(&reference[i].text, &generated[j].text))
        .sum();
    total / m.denominator() as f64
}

pub fn pair_position_score(a: &ShapeRecord, b: &ShapeRecord, slide: SlideSize) -> f64 {
    let (ax, ay) = a.bbox.center();
    let (bx, by) = b.bbox.center();
    (1.0 - ((ax - bx).abs() + (ay - by).abs()) / (slide.width_in + slide.height_in)).clamp(0.0, 1.0)
}

pub fn position_similarity(
    reference: &[ShapeRecord],
    generated: &[ShapeRecord],
    m: &Matching,
    slide: SlideSize,
) -> f64 {
    if m.denominator() == 0 {
        return 1.0;
    }
    let total: f64 = m
        .pairs
        .iter()
        .map(|&(i, j)| pair_position_score(&reference[i], &generated[j], slide))
        .sum();
    total / m.denominator() as f64
}

/// One side of a comparison: an inventory and optionally its render.
#[derive(Debug, Clone, Default)]
pub struct SlideObservation {
    pub shapes: Vec<ShapeRecord>,
    pub image: Option<RasterImage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub sample_id: String,
    pub executed: bool,
    pub content: Option<f64>,
    pub position: Option<f64>,
    pub ssim: Option<f64>,
    /// Externally supplied; never computed here.
    #[serde(default)]
    pub clip: Option<f64>,
    /// Mean of the available metrics times 100, or 0 for failed samples.
    pub contribution: f64,
}

impl SampleMetrics {
    pub fn failed(sample_id: impl Into<String>) -> Self {
        Self {
            sample_id: sample_id.into(),
            executed: false,
            content: None,
            position: None,
            ssim: None,
            clip: None,
            contribution: 0.0,
        }
    }

    pub fn executed(
        sample_id: impl Into<String>,
        content: Option<f64>,
        position: Option<f64>,
        ssim: Option<f64>,
    ) -> Self {
        let mut m = Self {
            sample_id: sample_id.into(),
            executed: true,
            content,
            position,
            ssim,
            clip: None,
            contribution: 0.0,
        };
        m.refresh_contribution();
        m
    }

    fn available(&self) -> Vec<f64> {
        [self.content, self.position, self.clip, self.ssim]
            .into_iter()
            .flatten()
            .collect()
    }

    pub fn refresh_contribution(&mut self) {
        let values = self.available();
        self.contribution = if self.executed && !values.is_empty() {
            values.iter().sum::<f64>() / values.len() as f64 * 100.0
        } else {
            0.0
        };
    }
}

pub fn evaluate_sample(
    sample_id: &str,
    reference: &SlideObservation,
    generated: Option<&SlideObservation>,
    slide: SlideSize,
) -> Result<SampleMetrics, EvalError> {
    let Some(generated) = generated else {
        return Ok(SampleMetrics::failed(sample_id));
    };
    let m = match_shapes(&reference.shapes, &generated.shapes);
    let ssim = match (&reference.image, &generated.image) {
        (Some(a), Some(b)) => Some(ssim(a, b)?),
        _ => None,
    };
    Ok(SampleMetrics::executed(
        sample_id,
        Some(content_similarity(&reference.shapes, &generated.shapes, &m)),
        Some(position_similarity(&reference.shapes, &generated.shapes, &m, slide)),
        ssim,
    ))
}

/// Attaches externally computed CLIP scores by sample id.
pub fn merge_clip_scores(samples: &mut [SampleMetrics], clip: &BTreeMap<String, f64>) {
    for s in samples.iter_mut() {
        if let Some(v) = clip.get(&s.sample_id) {
            s.clip = Some(v.clamp(0.0, 1.0));
            s.refresh_contribution();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub sample_count: usize,
    pub executed_count: usize,
    pub execution_rate: f64,
    /// Means over executed samples, in percent.
    pub content: Option<f64>,
    pub position: Option<f64>,
    pub ssim: Option<f64>,
    pub clip: Option<f64>,
    pub overall: f64,
    /// Metrics that entered the per-sample means.
    pub metrics_used: Vec<String>,
    pub samples: Vec<SampleMetrics>,
}

fn mean_pct(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64 * 100.0)
}

pub fn batch_report(samples: &[SampleMetrics]) -> Result<BatchReport, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::EmptyBatch);
    }
    let executed: Vec<&SampleMetrics> = samples.iter().filter(|s| s.executed).collect();
    let n = samples.len() as f64;
    let content = mean_pct(executed.iter().filter_map(|s| s.content));
    let position = mean_pct(executed.iter().filter_map(|s| s.position));
    let ssim = mean_pct(executed.iter().filter_map(|s| s.ssim));
    let clip = mean_pct(executed.iter().filter_map(|s| s.clip));
    let metrics_used = [("content", content), ("position", position), ("clip", clip), ("ssim", ssim)]
        .iter()
        .filter(|(_, v)| v.is_some())
        .map(|(k, _)| k.to_string())
        .collect();
    Ok(BatchReport {
        sample_count: samples.len(),
        executed_count: executed.len(),
        execution_rate: executed.len() as f64 / n * 100.0,
        content,
        position,
        ssim,
        clip,
        overall: samples.iter().map(|s| s.contribution).sum::<f64>() / n,
        metrics_used,
        samples: samples.to_vec(),
    })
}

pub fn render_table(report: &BatchReport) -> String {
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.1}"));
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<24} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "sample", "exec", "content", "position", "clip", "ssim", "score"
    );
    for s in &report.samples {
        let pct = |v: Option<f64>| fmt(v.map(|x| x * 100.0));
        let _ = writeln!(
            out,
            "{:<24} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8.1}",
            s.sample_id,
            if s.executed { "yes" } else { "no" },
            pct(s.content),
            pct(s.position),
            pct(s.clip),
            pct(s.ssim),
            s.contribution
        );
    }
    let _ = writeln!(
        out,
        "{:<24} {:>5.1}% {:>8} {:>8} {:>8} {:>8} {:>8.1}",
        "overall",
        report.execution_rate,
        fmt(report.content),
        fmt(report.position),
        fmt(report.clip),
        fmt(report.ssim),
        report.overall
    );
    let _ = writeln!(out, "metrics averaged: {}", report.metrics_used.join(", "));
    out
}
