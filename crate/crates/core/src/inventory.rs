//! Shape inventories extracted from slide decks.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InventoryError {
    #[error("failed to read inventory {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed inventory {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("shape {index} has negative size")]
    NegativeSize { index: usize },
}

/// Box in inches, origin at the slide's top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InchBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl InchBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }
}

/// Slide page size in inches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlideSize {
    pub width_in: f64,
    pub height_in: f64,
}

impl Default for SlideSize {
    /// 16:9 widescreen.
    fn default() -> Self {
        Self {
            width_in: 13.333,
            height_in: 7.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeRecord {
    pub type_name: String,
    pub bbox: InchBox,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub style: BTreeMap<String, serde_json::Value>,
}

impl ShapeRecord {
    pub fn new(type_name: &str, bbox: InchBox, text: &str) -> Self {
        Self {
            type_name: type_name.to_string(),
            bbox,
            text: text.to_string(),
            style: BTreeMap::new(),
        }
    }
}

pub fn parse_inventory(json: &str, origin: &str) -> Result<Vec<ShapeRecord>, InventoryError> {
    let shapes: Vec<ShapeRecord> = serde_json::from_str(json).map_err(|source| InventoryError::Parse {
        path: origin.to_string(),
        source,
    })?;
    if let Some(index) = shapes.iter().position(|s| s.bbox.w < 0.0 || s.bbox.h < 0.0) {
        return Err(InventoryError::NegativeSize { index });
    }
    Ok(shapes)
}

pub fn load_inventory(path: impl AsRef<Path>) -> Result<Vec<ShapeRecord>, InventoryError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| InventoryError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_inventory(&text, &path.display().to_string())
}
