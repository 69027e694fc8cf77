//! Patch feature extraction from image tiles.
//!
//! Two extractors share the [`FeatureExtractor`] contract: a pretrained
//! backbone loaded from ONNX (feature `onnx`) and a deterministic handcrafted
//! fallback that needs no model file.

mod fallback;
#[cfg(feature = "onnx")]
mod onnx;
pub mod ops;

use std::path::PathBuf;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::ImageTile;

pub use fallback::{FallbackExtractor, FALLBACK_BLOCK, FALLBACK_DIM, FALLBACK_SEED};
#[cfg(feature = "onnx")]
pub use onnx::{validate_model, OnnxExtractor};

/// Patch features of one tile, `P × C` with `P = h · w` in row-major grid order.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchGrid {
    pub features: Array2<f64>,
    pub grid_shape: (usize, usize),
    /// Tile side length in pixels.
    pub tile_size: usize,
    pub tile_offset: usize,
}

/// Half-open pixel rectangle `[row0, row1) × [col0, col1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelRect {
    pub row0: usize,
    pub row1: usize,
    pub col0: usize,
    pub col1: usize,
}

impl PatchGrid {
    pub fn patch_count(&self) -> usize {
        self.features.nrows()
    }

    pub fn channels(&self) -> usize {
        self.features.ncols()
    }

    /// Pixel region summarized by patch `(r, c)`. The rectangles partition the tile.
    pub fn receptive_rect(&self, r: usize, c: usize) -> PixelRect {
        let (h, w) = self.grid_shape;
        let n = self.tile_size;
        PixelRect {
            row0: r * n / h,
            row1: (r + 1) * n / h,
            col0: c * n / w,
            col1: (c + 1) * n / w,
        }
    }
}

/// Names and shapes of the two tapped backbone stages plus input preprocessing,
/// as written by the export tool next to the model file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneMetadata {
    pub input_name: String,
    pub input_shape: Vec<usize>,
    pub tap_names: Vec<String>,
    /// `(C, h, w)` per tap, shallow first. A leading batch axis of 1 is accepted.
    pub tap_shapes: Vec<Vec<usize>>,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl BackboneMetadata {
    pub fn read(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let meta: Self = serde_json::from_str(&text)?;
        if meta.tap_names.len() != 2 || meta.tap_shapes.len() != 2 {
            return Err(Error::Model(format!(
                "{}: expected exactly two taps, found {} names and {} shapes",
                path.display(),
                meta.tap_names.len(),
                meta.tap_shapes.len()
            )));
        }
        Ok(meta)
    }

    /// `(C, h, w)` of tap `k`, dropping a leading unit batch axis.
    pub fn tap_chw(&self, k: usize) -> Result<(usize, usize, usize)> {
        match self.tap_shapes[k].as_slice() {
            [c, h, w] | [1, c, h, w] => Ok((*c, *h, *w)),
            other => Err(Error::Model(format!(
                "tap {:?} has shape {other:?}, expected (C, h, w)",
                self.tap_names[k]
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExtractorSpec {
    OnnxBackbone {
        model_path: PathBuf,
        /// Sidecar JSON; defaults to `manifest.json` beside the model.
        #[serde(default)]
        metadata_path: Option<PathBuf>,
        #[serde(default = "default_pooling")]
        pooling_window: usize,
    },
    Fallback,
}

fn default_pooling() -> usize {
    3
}

impl Default for ExtractorSpec {
    fn default() -> Self {
        ExtractorSpec::Fallback
    }
}

impl ExtractorSpec {
    pub fn onnx(model_path: impl Into<PathBuf>) -> Self {
        ExtractorSpec::OnnxBackbone {
            model_path: model_path.into(),
            metadata_path: None,
            pooling_window: default_pooling(),
        }
    }

    pub fn metadata_path(&self) -> Option<PathBuf> {
        match self {
            ExtractorSpec::OnnxBackbone {
                model_path,
                metadata_path,
                ..
            } => Some(metadata_path.clone().unwrap_or_else(|| {
                model_path
                    .parent()
                    .unwrap_or_else(|| std::path::Path::new("."))
                    .join("manifest.json")
            })),
            ExtractorSpec::Fallback => None,
        }
    }

    pub fn build(&self) -> Result<Box<dyn FeatureExtractor>> {
        match self {
            ExtractorSpec::Fallback => Ok(Box::new(FallbackExtractor::new())),
            #[cfg(feature = "onnx")]
            ExtractorSpec::OnnxBackbone { .. } => Ok(Box::new(OnnxExtractor::new(self)?)),
            #[cfg(not(feature = "onnx"))]
            ExtractorSpec::OnnxBackbone { .. } => Err(Error::Model(
                "this build has no ONNX support (enable the `onnx` feature)".into(),
            )),
        }
    }
}

pub trait FeatureExtractor: Send + Sync {
    /// Side length of the square tiles this extractor accepts.
    fn tile_size(&self) -> Option<usize>;

    fn extract(&self, tile: &ImageTile) -> Result<PatchGrid>;
}

pub(crate) fn check_tile(tile: &ImageTile, expected: Option<usize>) -> Result<()> {
    let (c, h, w) = tile.pixels.dim();
    if c != 3 || h != w {
        return Err(Error::DimensionMismatch {
            context: format!("tile pixel shape {:?}", tile.pixels.dim()),
            expected: 3,
            found: c,
        });
    }
    if let Some(n) = expected {
        if h != n {
            return Err(Error::DimensionMismatch {
                context: "tile size vs extractor resolution".into(),
                expected: n,
                found: h,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn receptive_rects_partition_tile() {
        let g = PatchGrid {
            features: Array2::zeros((12, 1)),
            grid_shape: (3, 4),
            tile_size: 10,
            tile_offset: 0,
        };
        let mut cover = vec![0u8; 100];
        for r in 0..3 {
            for c in 0..4 {
                let rect = g.receptive_rect(r, c);
                for y in rect.row0..rect.row1 {
                    for x in rect.col0..rect.col1 {
                        cover[y * 10 + x] += 1;
                    }
                }
            }
        }
        assert!(cover.iter().all(|&c| c == 1));
    }

    #[test]
    fn metadata_shapes() {
        let meta = BackboneMetadata {
            input_name: "x".into(),
            input_shape: vec![1, 3, 256, 256],
            tap_names: vec!["a".into(), "b".into()],
            tap_shapes: vec![vec![1, 512, 32, 32], vec![1024, 16, 16]],
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        };
        assert_eq!(meta.tap_chw(0).unwrap(), (512, 32, 32));
        assert_eq!(meta.tap_chw(1).unwrap(), (1024, 16, 16));
    }

    #[test]
    fn default_metadata_location() {
        let spec = ExtractorSpec::onnx("/models/wrn.onnx");
        assert_eq!(
            spec.metadata_path().unwrap(),
            PathBuf::from("/models/manifest.json")
        );
        assert_eq!(ExtractorSpec::Fallback.metadata_path(), None);
    }
}
