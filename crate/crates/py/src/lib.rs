//! Python bindings for slidegen-core.

use std::fmt::Display;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use slidegen_core::cgseg::{self, CgsegConfig};
use slidegen_core::eval::{self, SampleMetrics};
use slidegen_core::inventory::SlideSize;
use slidegen_core::kb::{self, KbKind, MockEmbedder, VectorIndex};
use slidegen_core::pipeline::{self, SlideGeometry};
use slidegen_core::raster::{self, PixelRect, RasterImage};
use slidegen_core::scm::{self, ComplexityFeatures, ComplexityRecord, ScmWeights};

fn value_err(e: impl Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// 8-bit RGB image.
#[pyclass(name = "Image", module = "slidegen", frozen)]
struct PyImage {
    inner: RasterImage,
}

#[pymethods]
impl PyImage {
    #[new]
    fn new(width: usize, height: usize, data: Vec<u8>) -> PyResult<Self> {
        Ok(Self {
            inner: RasterImage::new(width, height, data).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: raster::load_image(path).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Self {
            inner: RasterImage::filled(width, height, rgb),
        }
    }

    /// Copy with `rect` (x, y, w, h) painted in `rgb`.
    fn with_rect(&self, rect: (usize, usize, usize, usize), rgb: [u8; 3]) -> Self {
        let mut inner = self.inner.clone();
        inner.fill_rect(PixelRect::new(rect.0, rect.1, rect.2, rect.3), rgb);
        Self { inner }
    }

    fn save_png(&self, path: &str) -> PyResult<()> {
        self.inner.save_png(path).map_err(value_err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{})", self.inner.width(), self.inner.height())
    }
}

fn seg_config(grid: usize, threshold: f64, max_depth: usize) -> PyResult<CgsegConfig> {
    let cfg = CgsegConfig {
        grid,
        max_depth,
        threshold,
    };
    cfg.validate().map_err(value_err)?;
    Ok(cfg)
}

/// Regions as dicts with `x`, `y`, `w`, `h` and `depth`.
#[pyfunction]
#[pyo3(signature = (image, grid=20, threshold=1.5, max_depth=2))]
fn segment<'py>(
    py: Python<'py>,
    image: &PyImage,
    grid: usize,
    threshold: f64,
    max_depth: usize,
) -> PyResult<Bound<'py, PyList>> {
    let cfg = seg_config(grid, threshold, max_depth)?;
    let out = PyList::empty(py);
    for r in cgseg::cgseg(&image.inner, &cfg) {
        let d = PyDict::new(py);
        d.set_item("x", r.bbox.x)?;
        d.set_item("y", r.bbox.y)?;
        d.set_item("w", r.bbox.w)?;
        d.set_item("h", r.bbox.h)?;
        d.set_item("depth", r.depth)?;
        out.append(d)?;
    }
    Ok(out)
}

#[pyfunction]
#[pyo3(signature = (image, grid=20, threshold=1.5, max_depth=2))]
fn coverage(image: &PyImage, grid: usize, threshold: f64, max_depth: usize) -> PyResult<f64> {
    let cfg = seg_config(grid, threshold, max_depth)?;
    cgseg::coverage_ratio(&image.inner, &cfg).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (values, epsilon=1e-6))]
fn normalize(values: Vec<f64>, epsilon: f64) -> PyResult<Vec<f64>> {
    scm::normalize(&values, epsilon).map_err(value_err)
}

/// Complexity scores for `(element_count, type_count, coverage)` triples.
#[pyfunction]
#[pyo3(signature = (features, alpha=1.0/3.0, beta=1.0/3.0, gamma=1.0/3.0))]
fn score_cohort(features: Vec<(usize, usize, f64)>, alpha: f64, beta: f64, gamma: f64) -> PyResult<Vec<f64>> {
    let weights = ScmWeights::new(alpha, beta, gamma).map_err(value_err)?;
    let mut records: Vec<ComplexityRecord> = features
        .into_iter()
        .enumerate()
        .map(|(i, (element_count, type_count, coverage))| {
            ComplexityRecord::new(
                i.to_string(),
                ComplexityFeatures {
                    element_count,
                    type_count,
                    coverage,
                },
            )
        })
        .collect();
    scm::score_cohort(&mut records, &weights).map_err(value_err)?;
    Ok(records.iter().map(|r| r.z.unwrap_or_default()).collect())
}

/// Tier names per score plus the three ascending centres.
#[pyfunction]
fn kmeans_tier(scores: Vec<f64>) -> PyResult<(Vec<String>, [f64; 3])> {
    let t = scm::kmeans_tier(&scores).map_err(value_err)?;
    Ok((t.tiers.iter().map(|t| t.to_string()).collect(), t.centers))
}

#[pyfunction]
fn ssim(reference: &PyImage, candidate: &PyImage) -> PyResult<f64> {
    eval::ssim(&reference.inner, &candidate.inner).map_err(value_err)
}

/// Pixel box in a `width_px` x `height_px` design to inches on the slide.
#[pyfunction]
#[pyo3(signature = (rect, width_px, height_px, slide_width=13.333, slide_height=7.5))]
fn scale_position(
    rect: (usize, usize, usize, usize),
    width_px: usize,
    height_px: usize,
    slide_width: f64,
    slide_height: f64,
) -> (f64, f64, f64, f64) {
    let geom = SlideGeometry::new(
        SlideSize {
            width_in: slide_width,
            height_in: slide_height,
        },
        width_px,
        height_px,
    );
    let b = pipeline::scale_position(&PixelRect::new(rect.0, rect.1, rect.2, rect.3), &geom);
    (b.x, b.y, b.w, b.h)
}

fn metric(d: &Bound<'_, PyDict>, key: &str) -> PyResult<Option<f64>> {
    match d.get_item(key)? {
        Some(v) if !v.is_none() => Ok(Some(v.extract()?)),
        _ => Ok(None),
    }
}

/// Aggregates per-sample dicts (`id`, `executed`, and optional `content`,
/// `position`, `ssim`, `clip` in [0, 1]) into percentages.
#[pyfunction]
fn batch_report<'py>(py: Python<'py>, samples: Vec<Bound<'py, PyDict>>) -> PyResult<Bound<'py, PyDict>> {
    let mut parsed = Vec::with_capacity(samples.len());
    for s in &samples {
        let id: String = s
            .get_item("id")?
            .ok_or_else(|| PyValueError::new_err("sample without id"))?
            .extract()?;
        let executed: bool = match s.get_item("executed")? {
            Some(v) => v.extract()?,
            None => true,
        };
        let mut m = if executed {
            SampleMetrics::executed(id, metric(s, "content")?, metric(s, "position")?, metric(s, "ssim")?)
        } else {
            SampleMetrics::failed(id)
        };
        if executed {
            m.clip = metric(s, "clip")?;
            m.refresh_contribution();
        }
        parsed.push(m);
    }
    let r = eval::batch_report(&parsed).map_err(value_err)?;
    let out = PyDict::new(py);
    out.set_item("sample_count", r.sample_count)?;
    out.set_item("executed_count", r.executed_count)?;
    out.set_item("execution_rate", r.execution_rate)?;
    out.set_item("content", r.content)?;
    out.set_item("position", r.position)?;
    out.set_item("ssim", r.ssim)?;
    out.set_item("clip", r.clip)?;
    out.set_item("overall", r.overall)?;
    out.set_item(
        "contributions",
        r.samples.iter().map(|s| s.contribution).collect::<Vec<_>>(),
    )?;
    Ok(out)
}

/// Knowledge base indexed with the deterministic hashing embedder.
#[pyclass(name = "KnowledgeBase", module = "slidegen", frozen)]
struct PyKnowledgeBase {
    index: VectorIndex,
    embedder: MockEmbedder,
}

#[pymethods]
impl PyKnowledgeBase {
    /// `kind` is "shape_type" or "operation_function".
    #[staticmethod]
    #[pyo3(signature = (path, kind, dimension=256, seed=0))]
    fn load(path: &str, kind: &str, dimension: usize, seed: u64) -> PyResult<Self> {
        let kind = match kind {
            "shape_type" => KbKind::ShapeType,
            "operation_function" => KbKind::OperationFunction,
            other => return Err(PyValueError::new_err(format!("unknown kind {other:?}"))),
        };
        let entries = kb::load_kb(path).map_err(value_err)?;
        let embedder = MockEmbedder::new(dimension, seed);
        let index = kb::build_index(&entries, &embedder, kind).map_err(value_err)?;
        Ok(Self { index, embedder })
    }

    fn __len__(&self) -> usize {
        self.index.len()
    }

    /// Top `k` entries as `(id, name, score)`.
    #[pyo3(signature = (query, k=5))]
    fn retrieve(&self, query: &str, k: usize) -> PyResult<Vec<(String, String, f64)>> {
        let hits = kb::retrieve_top_k(&self.index, query, k, &self.embedder).map_err(value_err)?;
        Ok(hits.into_iter().map(|h| (h.id, h.name, h.score)).collect())
    }
}

#[pymodule]
fn slidegen(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyImage>()?;
    m.add_class::<PyKnowledgeBase>()?;
    m.add_function(wrap_pyfunction!(segment, m)?)?;
    m.add_function(wrap_pyfunction!(coverage, m)?)?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(score_cohort, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans_tier, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(scale_position, m)?)?;
    m.add_function(wrap_pyfunction!(batch_report, m)?)?;
    Ok(())
}
