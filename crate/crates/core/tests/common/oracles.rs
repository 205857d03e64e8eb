//! Straightforward reference computations used to cross-check the library.

use slidegen_core::raster::RasterImage;

pub fn luma(img: &RasterImage) -> Vec<f64> {
    img.pixels()
        .chunks(3)
        .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64).round())
        .collect()
}

/// Population mean and standard deviation, two passes.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn normalize(xs: &[f64], eps: f64) -> Vec<f64> {
    let (mean, sd) = mean_sd(xs);
    xs.iter().map(|x| 1.0 / (1.0 + (-(x - mean) / (sd + eps)).exp())).collect()
}

/// Minimum within-cluster sum of squares over every split of the sorted
/// values into three non-empty contiguous groups. Returns the group index
/// (0, 1, 2) of each input value, with equal values kept together.
pub fn optimal_three_clusters(xs: &[f64]) -> Vec<usize> {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let sse = |lo: usize, hi: usize| {
        let part = &sorted[lo..hi];
        let m = part.iter().sum::<f64>() / part.len() as f64;
        part.iter().map(|x| (x - m).powi(2)).sum::<f64>()
    };
    let mut best = (f64::INFINITY, 0, 0);
    for i in 1..n - 1 {
        if sorted[i] == sorted[i - 1] {
            continue;
        }
        for j in i + 1..n {
            if sorted[j] == sorted[j - 1] {
                continue;
            }
            let cost = sse(0, i) + sse(i, j) + sse(j, n);
            if cost < best.0 {
                best = (cost, i, j);
            }
        }
    }
    let (lo_max, mid_max) = (sorted[best.1 - 1], sorted[best.2 - 1]);
    xs.iter()
        .map(|&x| if x <= lo_max { 0 } else if x <= mid_max { 1 } else { 2 })
        .collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn gaussian_weights(win: usize, sigma: f64) -> Vec<Vec<f64>> {
    let c = (win / 2) as f64;
    let mut w = vec![vec![0.0; win]; win];
    let mut total = 0.0;
    for (i, row) in w.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
            *v = (-d2 / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    for row in &mut w {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    w
}

/// SSIM with explicit 2-D Gaussian windows at every valid position and
/// two-pass weighted moments.
pub fn ssim(a: &[f64], b: &[f64], width: usize, height: usize) -> f64 {
    let mut win = 11.min(width).min(height);
    if win % 2 == 0 {
        win -= 1;
    }
    let w = gaussian_weights(win, 1.5);
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=height - win {
        for x0 in 0..=width - win {
            let at = |img: &[f64], i: usize, j: usize| img[(y0 + i) * width + x0 + j];
            let (mut ma, mut mb) = (0.0, 0.0);
            for (i, row) in w.iter().enumerate() {
                for (j, wt) in row.iter().enumerate() {
                    ma += wt * at(a, i, j);
                    mb += wt * at(b, i, j);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for (i, row) in w.iter().enumerate() {
                for (j, wt) in row.iter().enumerate() {
                    let (da, db) = (at(a, i, j) - ma, at(b, i, j) - mb);
                    va += wt * da * da;
                    vb += wt * db * db;
                    cov += wt * da * db;
                }
            }
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}
