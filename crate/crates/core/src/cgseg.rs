//! Recursive colour-gradient segmentation.
//!
//! An image is split into a `g x g` grid, each cell is scored by its mean
//! Sobel magnitude, and cells scoring above `T` times the median are
//! activated. Holes in the activation mask are filled, 4-connected
//! components become regions, and each region's sub-image is segmented
//! again until the configured depth is reached.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{self, GradientField, PixelRect, RasterError, RasterImage};

#[derive(Debug, Error)]
pub enum CgsegError {
    #[error("image {width}x{height} is smaller than a {grid}x{grid} grid")]
    TooSmall {
        width: usize,
        height: usize,
        grid: usize,
    },
    #[error("invalid segmentation config: {0}")]
    Config(String),
    #[error("debug output path is empty")]
    EmptyPath,
    #[error(transparent)]
    Raster(#[from] RasterError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CgsegConfig {
    /// Cells per side.
    pub grid: usize,
    pub max_depth: usize,
    /// Activation multiplier applied to the median cell score.
    pub threshold: f64,
}

impl Default for CgsegConfig {
    fn default() -> Self {
        Self {
            grid: 20,
            max_depth: 2,
            threshold: 1.5,
        }
    }
}

impl CgsegConfig {
    pub fn validate(&self) -> Result<(), CgsegError> {
        if self.grid < 2 {
            return Err(CgsegError::Config(format!("grid must be >= 2, got {}", self.grid)));
        }
        if self.max_depth < 1 {
            return Err(CgsegError::Config("max_depth must be >= 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(CgsegError::Config(format!(
                "threshold must be positive, got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Square boolean grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridMask {
    grid: usize,
    cells: Vec<bool>,
}

impl GridMask {
    pub fn new(grid: usize) -> Self {
        assert!(grid >= 2, "grid must be at least 2");
        Self {
            grid,
            cells: vec![false; grid * grid],
        }
    }

    pub fn from_cells(grid: usize, cells: Vec<bool>) -> Self {
        assert!(grid >= 2, "grid must be at least 2");
        assert_eq!(cells.len(), grid * grid, "mask must hold grid*grid cells");
        Self { grid, cells }
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.grid + col]
    }

    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        self.cells[row * self.grid + col] = on;
    }

    pub fn active_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }
}

/// A segmented block. `bbox` is expressed in the root image's frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub bbox: PixelRect,
    pub depth: usize,
    #[serde(skip)]
    pub image: Option<RasterImage>,
}

/// Start/end offsets of grid cell `index` along an axis of length `len`.
pub fn cell_span(index: usize, len: usize, grid: usize) -> (usize, usize) {
    (index * len / grid, (index + 1) * len / grid)
}

/// Mean gradient magnitude per grid cell, row-major `g x g`.
pub fn cell_scores(grad: &GradientField, grid: usize) -> Result<Vec<f64>, CgsegError> {
    if grad.width < grid || grad.height < grid || grid == 0 {
        return Err(CgsegError::TooSmall {
            width: grad.width,
            height: grad.height,
            grid,
        });
    }
    let mut scores = Vec::with_capacity(grid * grid);
    for row in 0..grid {
        let (y0, y1) = cell_span(row, grad.height, grid);
        for col in 0..grid {
            let (x0, x1) = cell_span(col, grad.width, grid);
            let mut sum = 0.0;
            for y in y0..y1 {
                sum += grad.magnitudes[y * grad.width + x0..y * grad.width + x1]
                    .iter()
                    .sum::<f64>();
            }
            scores.push(sum / ((y1 - y0) * (x1 - x0)) as f64);
        }
    }
    Ok(scores)
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Activates cells whose score strictly exceeds `threshold * median`.
pub fn activation_mask(scores: &[f64], threshold: f64) -> GridMask {
    let grid = (scores.len() as f64).sqrt().round() as usize;
    assert_eq!(grid * grid, scores.len(), "scores must form a square grid");
    let cutoff = threshold * median(scores);
    GridMask::from_cells(grid, scores.iter().map(|&s| s > cutoff).collect())
}

const NEIGHBOURS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

fn neighbours(row: usize, col: usize, grid: usize) -> impl Iterator<Item = (usize, usize)> {
    NEIGHBOURS.iter().filter_map(move |&(dr, dc)| {
        let r = row as isize + dr;
        let c = col as isize + dc;
        (r >= 0 && c >= 0 && (r as usize) < grid && (c as usize) < grid)
            .then_some((r as usize, c as usize))
    })
}

/// Hole filling: inactive cells not 4-reachable from the border through
/// other inactive cells become active.
pub fn fill_mask(mask: &GridMask) -> GridMask {
    let g = mask.grid;
    let mut outside = vec![false; g * g];
    let mut queue = VecDeque::new();
    for i in 0..g {
        for (r, c) in [(0, i), (g - 1, i), (i, 0), (i, g - 1)] {
            if !mask.get(r, c) && !outside[r * g + c] {
                outside[r * g + c] = true;
                queue.push_back((r, c));
            }
        }
    }
    while let Some((r, c)) = queue.pop_front() {
        for (nr, nc) in neighbours(r, c, g) {
            if !mask.get(nr, nc) && !outside[nr * g + nc] {
                outside[nr * g + nc] = true;
                queue.push_back((nr, nc));
            }
        }
    }
    let cells = mask
        .cells
        .iter()
        .zip(&outside)
        .map(|(&active, &out)| active || !out)
        .collect();
    GridMask::from_cells(g, cells)
}

/// 4-connected components of active cells as pixel boxes, in reading order.
pub fn connected_regions(mask: &GridMask, width: usize, height: usize) -> Vec<PixelRect> {
    let g = mask.grid;
    let mut seen = vec![false; g * g];
    let mut boxes = Vec::new();
    for start in 0..g * g {
        if !mask.cells[start] || seen[start] {
            continue;
        }
        let (mut rmin, mut rmax, mut cmin, mut cmax) = (g, 0, g, 0);
        let mut queue = VecDeque::from([(start / g, start % g)]);
        seen[start] = true;
        while let Some((r, c)) = queue.pop_front() {
            rmin = rmin.min(r);
            rmax = rmax.max(r);
            cmin = cmin.min(c);
            cmax = cmax.max(c);
            for (nr, nc) in neighbours(r, c, g) {
                let idx = nr * g + nc;
                if mask.cells[idx] && !seen[idx] {
                    seen[idx] = true;
                    queue.push_back((nr, nc));
                }
            }
        }
        let x0 = cell_span(cmin, width, g).0;
        let x1 = cell_span(cmax, width, g).1;
        let y0 = cell_span(rmin, height, g).0;
        let y1 = cell_span(rmax, height, g).1;
        boxes.push(PixelRect::new(x0, y0, x1 - x0, y1 - y0));
    }
    boxes.sort_by_key(|b| (b.y, b.x, b.h, b.w));
    boxes
}

/// Activation and filled masks for one level of segmentation.
pub fn level_masks(img: &RasterImage, cfg: &CgsegConfig) -> Result<(GridMask, GridMask), CgsegError> {
    let grad = raster::sobel_magnitude(&raster::to_grayscale(img));
    let scores = cell_scores(&grad, cfg.grid)?;
    let active = activation_mask(&scores, cfg.threshold);
    let filled = fill_mask(&active);
    Ok((active, filled))
}

/// Segments `img` into regions, parents before their children.
pub fn cgseg(img: &RasterImage, cfg: &CgsegConfig) -> Vec<Region> {
    cgseg_from_depth(img, cfg, 0)
}

/// Runs segmentation as if already `depth` levels deep.
pub fn cgseg_from_depth(img: &RasterImage, cfg: &CgsegConfig, depth: usize) -> Vec<Region> {
    let mut out = Vec::new();
    segment_into(img, cfg, depth, 0, 0, &mut out);
    out
}

fn segment_into(
    img: &RasterImage,
    cfg: &CgsegConfig,
    depth: usize,
    off_x: usize,
    off_y: usize,
    out: &mut Vec<Region>,
) {
    if depth >= cfg.max_depth || img.width() < cfg.grid || img.height() < cfg.grid {
        return;
    }
    let Ok((_, filled)) = level_masks(img, cfg) else {
        return;
    };
    for rect in connected_regions(&filled, img.width(), img.height()) {
        let sub = raster::crop(img, rect).expect("component boxes lie inside the image");
        out.push(Region {
            bbox: rect.translate(off_x, off_y),
            depth: depth + 1,
            image: Some(sub.clone()),
        });
        segment_into(&sub, cfg, depth + 1, off_x + rect.x, off_y + rect.y, out);
    }
}

/// Fraction of grid cells active in the filled top-level mask.
pub fn coverage_ratio(img: &RasterImage, cfg: &CgsegConfig) -> Result<f64, CgsegError> {
    let (_, filled) = level_masks(img, cfg)?;
    Ok(filled.active_count() as f64 / (cfg.grid * cfg.grid) as f64)
}

const TINT: [u8; 3] = [255, 64, 64];
const OUTLINE: [[u8; 3]; 3] = [[0, 170, 0], [0, 0, 255], [255, 140, 0]];

/// Renders the top-level filled mask as a tint and every region as an
/// outline coloured by depth.
pub fn render_debug_mask(img: &RasterImage, cfg: &CgsegConfig) -> Result<RasterImage, CgsegError> {
    let mut out = img.clone();
    if img.width() < cfg.grid || img.height() < cfg.grid {
        return Ok(out);
    }
    let (_, filled) = level_masks(img, cfg)?;
    for row in 0..cfg.grid {
        let (y0, y1) = cell_span(row, img.height(), cfg.grid);
        for col in 0..cfg.grid {
            if !filled.get(row, col) {
                continue;
            }
            let (x0, x1) = cell_span(col, img.width(), cfg.grid);
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = out.get(x, y);
                    let blended = [0, 1, 2].map(|c| ((p[c] as u16 + TINT[c] as u16) / 2) as u8);
                    out.put(x, y, blended);
                }
            }
        }
    }
    for region in cgseg(img, cfg) {
        let color = OUTLINE[(region.depth - 1) % OUTLINE.len()];
        let b = region.bbox;
        for x in b.x..b.right() {
            out.put(x, b.y, color);
            out.put(x, b.bottom() - 1, color);
        }
        for y in b.y..b.bottom() {
            out.put(b.x, y, color);
            out.put(b.right() - 1, y, color);
        }
    }
    Ok(out)
}

pub fn debug_mask_png(img: &RasterImage, cfg: &CgsegConfig, path: &Path) -> Result<(), CgsegError> {
    if path.as_os_str().is_empty() {
        return Err(CgsegError::EmptyPath);
    }
    render_debug_mask(img, cfg)?.save_png(path)?;
    Ok(())
}
