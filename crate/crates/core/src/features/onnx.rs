use std::path::Path;
use std::sync::Arc;

use ndarray::{concatenate, Array2, Array3, Axis};
use tract_onnx::prelude::*;

use super::ops::{avg_pool_same, resize_bilinear};
use super::{check_tile, BackboneMetadata, ExtractorSpec, FeatureExtractor, PatchGrid};
use crate::error::{Error, Result};
use crate::imaging::ImageTile;

fn model_err(context: &str) -> impl FnOnce(TractError) -> Error + '_ {
    move |e| Error::Model(format!("{context}: {e:#}"))
}

/// Loads `model_path`, checks it against the sidecar metadata and returns a
/// runnable plan whose outputs are the two tapped stages, shallow first.
pub fn validate_model(model_path: &Path, meta: &BackboneMetadata) -> Result<Arc<TypedRunnableModel>> {
    let size = match meta.input_shape.as_slice() {
        [1, 3, h, w] if h == w => *h,
        other => {
            return Err(Error::Model(format!(
                "input shape {other:?} is not [1, 3, n, n]"
            )))
        }
    };
    let mut model = tract_onnx::onnx()
        .model_for_path(model_path)
        .map_err(model_err(&model_path.display().to_string()))?;

    let inputs = model.input_outlets().map_err(model_err("inputs"))?.to_vec();
    if inputs.len() != 1 {
        return Err(Error::Model(format!(
            "expected one model input, found {}",
            inputs.len()
        )));
    }
    let input_node = &model.node(inputs[0].node).name;
    if *input_node != meta.input_name {
        return Err(Error::Model(format!(
            "model input is {input_node:?}, metadata names {:?}",
            meta.input_name
        )));
    }

    let mut taps = Vec::with_capacity(2);
    for name in &meta.tap_names {
        let outlet = model
            .find_outlet_label(name)
            .ok_or_else(|| Error::Model(format!("tap {name:?} not found in model graph")))?;
        taps.push(outlet);
    }
    model
        .select_output_outlets(&taps)
        .map_err(model_err("selecting taps"))?;
    let model = model
        .with_input_fact(
            0,
            InferenceFact::dt_shape(f32::datum_type(), tvec!(1, 3, size, size)),
        )
        .map_err(model_err("input fact"))?
        .into_optimized()
        .map_err(model_err("optimizing model"))?;

    for k in 0..2 {
        let (c, h, w) = meta.tap_chw(k)?;
        let fact = model.output_fact(k).map_err(model_err("output fact"))?;
        let shape: Option<Vec<usize>> = fact.shape.as_concrete().map(|s| s.to_vec());
        let ok = match shape.as_deref() {
            Some([1, fc, fh, fw]) => (*fc, *fh, *fw) == (c, h, w),
            _ => false,
        };
        if !ok || fact.datum_type != f32::datum_type() {
            return Err(Error::Model(format!(
                "tap {:?} produces {:?} {:?}, metadata expects f32 [1, {c}, {h}, {w}]",
                meta.tap_names[k], fact.datum_type, shape
            )));
        }
    }
    model.into_runnable().map_err(model_err("building plan"))
}

/// Mid-level features from a pretrained backbone: both taps are smoothed with
/// a local average, the deeper one is resized to the shallower grid and the
/// two are concatenated along channels.
#[derive(Debug)]
pub struct OnnxExtractor {
    plan: Arc<TypedRunnableModel>,
    meta: BackboneMetadata,
    pooling_window: usize,
    size: usize,
}

impl OnnxExtractor {
    pub fn new(spec: &ExtractorSpec) -> Result<Self> {
        let ExtractorSpec::OnnxBackbone {
            model_path,
            pooling_window,
            ..
        } = spec
        else {
            return Err(Error::Internal("OnnxExtractor built from fallback spec".into()));
        };
        let meta_path = spec.metadata_path().expect("onnx spec has metadata path");
        let meta = BackboneMetadata::read(&meta_path)?;
        let plan = validate_model(model_path, &meta)?;
        let size = meta.input_shape[2];
        Ok(Self {
            plan,
            meta,
            pooling_window: *pooling_window,
            size,
        })
    }

    pub fn metadata(&self) -> &BackboneMetadata {
        &self.meta
    }

    fn input_tensor(&self, tile: &ImageTile) -> Tensor {
        let n = self.size;
        let mut data = Vec::with_capacity(3 * n * n);
        for ((c, _, _), &p) in tile.pixels.indexed_iter() {
            let v = (p as f64 / 255.0 - self.meta.mean[c]) / self.meta.std[c];
            data.push(v as f32);
        }
        Tensor::from_shape(&[1, 3, n, n], &data).expect("shape matches data length")
    }
}

fn to_chw(value: &TValue, context: &str) -> Result<Array3<f64>> {
    let view = value
        .to_plain_array_view::<f32>()
        .map_err(model_err(context))?;
    let shape = view.shape().to_vec();
    let [1, c, h, w] = shape[..] else {
        return Err(Error::Model(format!("{context}: unexpected shape {shape:?}")));
    };
    let data: Vec<f64> = view.iter().map(|&v| v as f64).collect();
    Ok(Array3::from_shape_vec((c, h, w), data).expect("shape matches data length"))
}

impl FeatureExtractor for OnnxExtractor {
    fn tile_size(&self) -> Option<usize> {
        Some(self.size)
    }

    fn extract(&self, tile: &ImageTile) -> Result<PatchGrid> {
        check_tile(tile, Some(self.size))?;
        let outputs = self
            .plan
            .run(tvec!(self.input_tensor(tile).into()))
            .map_err(model_err("running backbone"))?;
        let shallow = avg_pool_same(to_chw(&outputs[0], "shallow tap")?.view(), self.pooling_window);
        let deep = avg_pool_same(to_chw(&outputs[1], "deep tap")?.view(), self.pooling_window);
        let (_, h, w) = shallow.dim();
        let deep = resize_bilinear(deep.view(), h, w);
        let stacked = concatenate(Axis(0), &[shallow.view(), deep.view()])
            .expect("spatial shapes agree after resize");
        let channels = stacked.dim().0;
        // (C, h, w) -> (h·w, C)
        let features: Array2<f64> = stacked
            .into_shape_with_order((channels, h * w))
            .expect("contiguous")
            .reversed_axes()
            .as_standard_layout()
            .into_owned();
        Ok(PatchGrid {
            features,
            grid_shape: (h, w),
            tile_size: self.size,
            tile_offset: tile.time_offset,
        })
    }
}
