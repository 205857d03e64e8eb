//! Pixel buffers, luma conversion, Sobel gradients and cropping.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("image file not found: {0}")]
    NotFound(String),
    #[error("failed to decode image {path}: {message}")]
    Decode { path: String, message: String },
    #[error("failed to write image {path}: {message}")]
    Write { path: String, message: String },
    #[error("invalid image dimensions {width}x{height}")]
    BadDimensions { width: usize, height: usize },
    #[error("pixel buffer has {actual} bytes, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("rect {rect:?} lies outside a {width}x{height} image")]
    OutOfBounds {
        rect: PixelRect,
        width: usize,
        height: usize,
    },
}

/// Axis-aligned pixel box with its origin at the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl PixelRect {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    pub fn right(&self) -> usize {
        self.x + self.w
    }

    pub fn bottom(&self) -> usize {
        self.y + self.h
    }

    pub fn fits_within(&self, width: usize, height: usize) -> bool {
        self.w > 0 && self.h > 0 && self.right() <= width && self.bottom() <= height
    }

    pub fn contains(&self, other: &PixelRect) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    pub fn translate(&self, dx: usize, dy: usize) -> Self {
        Self::new(self.x + dx, self.y + dy, self.w, self.h)
    }
}

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::BadDimensions { width, height });
        }
        let expected = width * height * 3;
        if pixels.len() != expected {
            return Err(RasterError::BufferSize {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut pixels = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn full_rect(&self) -> PixelRect {
        PixelRect::new(0, 0, self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Paints a solid rectangle, clipped to the image.
    pub fn fill_rect(&mut self, rect: PixelRect, rgb: [u8; 3]) {
        for y in rect.y..rect.bottom().min(self.height) {
            for x in rect.x..rect.right().min(self.width) {
                self.put(x, y, rgb);
            }
        }
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), RasterError> {
        let path = path.as_ref();
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .expect("buffer length checked at construction");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| RasterError::Write {
                path: path.display().to_string(),
                message: e.to_string(),
            })
    }
}

/// Row-major 8-bit luma image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<u8>,
}

impl GrayImage {
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.values[y * self.width + x]
    }

    /// Expands luma back to RGB with equal channels.
    pub fn to_rgb(&self) -> RasterImage {
        RasterImage::from_fn(self.width, self.height, |x, y| {
            let v = self.get(x, y);
            [v, v, v]
        })
    }
}

/// Per-pixel gradient magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub magnitudes: Vec<f64>,
}

impl GradientField {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.magnitudes[y * self.width + x]
    }
}

/// Decodes a PNG, compositing any alpha channel over white.
pub fn load_image(path: impl AsRef<Path>) -> Result<RasterImage, RasterError> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(RasterError::NotFound(path.display().to_string()));
    }
    let decoded = image::ImageReader::open(path)
        .and_then(|r| r.with_guessed_format())
        .map_err(|e| RasterError::Decode {
            path: path.display().to_string(),
            message: e.to_string(),
        })?
        .decode()
        .map_err(|e| RasterError::Decode {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    let rgba = decoded.to_rgba8();
    let (w, h) = rgba.dimensions();
    let mut pixels = Vec::with_capacity(w as usize * h as usize * 3);
    for px in rgba.pixels() {
        let [r, g, b, a] = px.0;
        let alpha = a as u32;
        for c in [r, g, b] {
            // c*a + 255*(255-a), rounded
            let v = (c as u32 * alpha + 255 * (255 - alpha) + 127) / 255;
            pixels.push(v as u8);
        }
    }
    RasterImage::new(w as usize, h as usize, pixels)
}

/// Rec. 601 luma, rounded to nearest.
pub fn to_grayscale(img: &RasterImage) -> GrayImage {
    let values = img
        .pixels
        .chunks_exact(3)
        .map(|p| {
            let y = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
            y.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayImage {
        width: img.width,
        height: img.height,
        values,
    }
}

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// Sobel gradient magnitude with edge-replication padding.
pub fn sobel_magnitude(gray: &GrayImage) -> GradientField {
    let (w, h) = (gray.width, gray.height);
    let mut magnitudes = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let mut gx = 0.0;
            let mut gy = 0.0;
            for (ky, dy) in (-1isize..=1).enumerate() {
                let sy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                for (kx, dx) in (-1isize..=1).enumerate() {
                    let sx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    let v = gray.values[sy * w + sx] as f64;
                    gx += SOBEL_X[ky][kx] * v;
                    gy += SOBEL_Y[ky][kx] * v;
                }
            }
            magnitudes.push((gx * gx + gy * gy).sqrt());
        }
    }
    GradientField {
        width: w,
        height: h,
        magnitudes,
    }
}

pub fn crop(img: &RasterImage, rect: PixelRect) -> Result<RasterImage, RasterError> {
    if !rect.fits_within(img.width, img.height) {
        return Err(RasterError::OutOfBounds {
            rect,
            width: img.width,
            height: img.height,
        });
    }
    let mut pixels = Vec::with_capacity(rect.w * rect.h * 3);
    for y in rect.y..rect.bottom() {
        let start = (y * img.width + rect.x) * 3;
        pixels.extend_from_slice(&img.pixels[start..start + rect.w * 3]);
    }
    RasterImage::new(rect.w, rect.h, pixels)
}

/// Bilinear resampling with pixel-centre alignment.
pub fn resize_bilinear(img: &RasterImage, width: usize, height: usize) -> RasterImage {
    assert!(width > 0 && height > 0, "target dimensions must be positive");
    if (width, height) == (img.width, img.height) {
        return img.clone();
    }
    let axis = |dst: usize, src: usize, len: usize| {
        let pos = ((dst as f64 + 0.5) * src as f64 / len as f64 - 0.5).clamp(0.0, (src - 1) as f64);
        let lo = pos.floor() as usize;
        (lo, (lo + 1).min(src - 1), pos - lo as f64)
    };
    RasterImage::from_fn(width, height, |x, y| {
        let (x0, x1, fx) = axis(x, img.width, width);
        let (y0, y1, fy) = axis(y, img.height, height);
        let (p00, p10, p01, p11) = (img.get(x0, y0), img.get(x1, y0), img.get(x0, y1), img.get(x1, y1));
        [0, 1, 2].map(|c| {
            let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
            let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
            (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8
        })
    })
}
