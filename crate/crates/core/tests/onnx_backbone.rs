#![cfg(feature = "onnx")]
//! Backbone adapter against a tiny two-stage pooling network written as ONNX
//! protobuf, with the sidecar manifest an export tool would produce.

use std::path::{Path, PathBuf};

use ndarray::{Array3, Array4};
use prost::Message;
use tempfile::TempDir;
use tract_onnx::pb::{
    attribute_proto::AttributeType, tensor_proto::DataType, tensor_shape_proto, type_proto,
    AttributeProto, GraphProto, ModelProto, NodeProto, OperatorSetIdProto, TensorShapeProto,
    TypeProto, ValueInfoProto,
};
use wavetile::features::{validate_model, BackboneMetadata, ExtractorSpec};
use wavetile::imaging::{ImageTile, Role};
use wavetile::{Detector, Error, ErrorKind, PipelineConfig};

const SIZE: usize = 16;

fn value_info(name: &str, shape: &[i64]) -> ValueInfoProto {
    let dim = shape
        .iter()
        .map(|&d| tensor_shape_proto::Dimension {
            value: Some(tensor_shape_proto::dimension::Value::DimValue(d)),
            ..Default::default()
        })
        .collect();
    ValueInfoProto {
        name: name.into(),
        r#type: Some(TypeProto {
            value: Some(type_proto::Value::TensorType(type_proto::Tensor {
                elem_type: DataType::Float as i32,
                shape: Some(TensorShapeProto { dim }),
            })),
            ..Default::default()
        }),
        ..Default::default()
    }
}

fn ints(name: &str, values: &[i64]) -> AttributeProto {
    AttributeProto {
        name: name.into(),
        r#type: AttributeType::Ints as i32,
        ints: values.to_vec(),
        ..Default::default()
    }
}

fn pool(input: &str, output: &str) -> NodeProto {
    NodeProto {
        name: format!("pool_{output}"),
        op_type: "AveragePool".into(),
        input: vec![input.into()],
        output: vec![output.into()],
        attribute: vec![ints("kernel_shape", &[2, 2]), ints("strides", &[2, 2])],
        ..Default::default()
    }
}

/// `image [1,3,16,16] → shallow [1,3,8,8] → deep [1,3,4,4]`, each stage a
/// 2×2 average pool. Only `deep` is a declared graph output.
fn write_model(dir: &Path) -> PathBuf {
    let graph = GraphProto {
        name: "tiny".into(),
        node: vec![pool("image", "shallow"), pool("shallow", "deep")],
        input: vec![value_info("image", &[1, 3, SIZE as i64, SIZE as i64])],
        output: vec![value_info("deep", &[1, 3, 4, 4])],
        ..Default::default()
    };
    let model = ModelProto {
        ir_version: 7,
        opset_import: vec![OperatorSetIdProto {
            domain: String::new(),
            version: 13,
        }],
        producer_name: "test".into(),
        graph: Some(graph),
        ..Default::default()
    };
    let path = dir.join("backbone.onnx");
    std::fs::write(&path, model.encode_to_vec()).unwrap();
    path
}

fn metadata() -> BackboneMetadata {
    BackboneMetadata {
        input_name: "image".into(),
        input_shape: vec![1, 3, SIZE, SIZE],
        tap_names: vec!["shallow".into(), "deep".into()],
        tap_shapes: vec![vec![3, 8, 8], vec![1, 3, 4, 4]],
        mean: [0.5, 0.25, 0.0],
        std: [0.5, 2.0, 1.0],
    }
}

fn write_manifest(path: &Path, meta: &BackboneMetadata) {
    std::fs::write(path, serde_json::to_string_pretty(meta).unwrap()).unwrap();
}

fn setup() -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    let model = write_model(dir.path());
    write_manifest(&dir.path().join("manifest.json"), &metadata());
    (dir, model)
}

fn test_tile() -> ImageTile {
    let pixels = Array3::from_shape_fn((3, SIZE, SIZE), |(c, y, x)| {
        ((c * 71 + y * 13 + x * 29 + y * x) % 256) as u8
    });
    ImageTile {
        pixels,
        time_offset: 48,
        role: Role::Test,
        data_rows: SIZE,
    }
}

// Oracles: direct sums written independently of the adapter.

fn block_mean(m: &Array3<f64>, f: usize) -> Array3<f64> {
    let (c, h, w) = m.dim();
    Array3::from_shape_fn((c, h / f, w / f), |(k, y, x)| {
        let mut s = 0.0;
        for dy in 0..f {
            for dx in 0..f {
                s += m[[k, y * f + dy, x * f + dx]];
            }
        }
        s / (f * f) as f64
    })
}

fn smooth3(m: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = m.dim();
    Array3::from_shape_fn((c, h, w), |(k, y, x)| {
        let mut s = 0.0;
        for yy in y.saturating_sub(1)..(y + 2).min(h) {
            for xx in x.saturating_sub(1)..(x + 2).min(w) {
                s += m[[k, yy, xx]];
            }
        }
        s / 9.0
    })
}

fn tent_weights(out: usize, in_len: usize, out_len: usize) -> Vec<f64> {
    let src = ((out as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5).clamp(0.0, (in_len - 1) as f64);
    (0..in_len)
        .map(|i| (1.0 - (src - i as f64).abs()).max(0.0))
        .collect()
}

fn upsample(m: &Array3<f64>, h: usize, w: usize) -> Array3<f64> {
    let (c, ih, iw) = m.dim();
    Array3::from_shape_fn((c, h, w), |(k, y, x)| {
        let wy = tent_weights(y, ih, h);
        let wx = tent_weights(x, iw, w);
        let mut s = 0.0;
        for i in 0..ih {
            for j in 0..iw {
                s += wy[i] * wx[j] * m[[k, i, j]];
            }
        }
        s
    })
}

#[test]
fn features_match_direct_computation() {
    let (_dir, model) = setup();
    let extractor = ExtractorSpec::onnx(&model).build().unwrap();
    assert_eq!(extractor.tile_size(), Some(SIZE));

    let tile = test_tile();
    let grid = extractor.extract(&tile).unwrap();
    assert_eq!(grid.grid_shape, (8, 8));
    assert_eq!(grid.features.dim(), (64, 6));
    assert_eq!(grid.tile_offset, 48);

    let meta = metadata();
    let input = Array3::from_shape_fn((3, SIZE, SIZE), |(c, y, x)| {
        // the network runs in f32
        ((tile.pixels[[c, y, x]] as f64 / 255.0 - meta.mean[c]) / meta.std[c]) as f32 as f64
    });
    let shallow = block_mean(&input, 2);
    let deep = block_mean(&shallow, 2);
    let a = smooth3(&shallow);
    let b = upsample(&smooth3(&deep), 8, 8);
    for y in 0..8 {
        for x in 0..8 {
            for c in 0..3 {
                let row = grid.features.row(y * 8 + x);
                assert!((row[c] - a[[c, y, x]]).abs() < 1e-5, "shallow {c} {y} {x}");
                assert!((row[3 + c] - b[[c, y, x]]).abs() < 1e-5, "deep {c} {y} {x}");
            }
        }
    }
}

#[test]
fn explicit_metadata_path() {
    let dir = TempDir::new().unwrap();
    let model = write_model(dir.path());
    let meta_path = dir.path().join("backbone.json");
    write_manifest(&meta_path, &metadata());
    let spec = ExtractorSpec::OnnxBackbone {
        model_path: model,
        metadata_path: Some(meta_path),
        pooling_window: 1,
    };
    let grid = spec.build().unwrap().extract(&test_tile()).unwrap();
    assert_eq!(grid.features.dim(), (64, 6));
}

fn model_error(meta: BackboneMetadata) -> String {
    let (dir, model) = setup();
    let path = dir.path().join("bad.json");
    write_manifest(&path, &meta);
    let err = validate_model(&model, &meta).unwrap_err();
    assert!(matches!(err, Error::Model(_)), "{err}");
    err.to_string()
}

#[test]
fn rejects_mismatched_metadata() {
    let mut meta = metadata();
    meta.input_name = "pixels".into();
    assert!(model_error(meta).contains("pixels"));

    let mut meta = metadata();
    meta.tap_names[0] = "layer9".into();
    assert!(model_error(meta).contains("layer9"));

    let mut meta = metadata();
    meta.tap_shapes[1] = vec![3, 2, 2];
    assert!(model_error(meta).contains("deep"));

    let mut meta = metadata();
    meta.input_shape = vec![1, 3, 16, 8];
    assert!(model_error(meta).contains("[1, 3, n, n]"));

    let mut meta = metadata();
    meta.input_shape = vec![1, 3, 32, 32];
    model_error(meta);
}

#[test]
fn missing_manifest_and_model() {
    let dir = TempDir::new().unwrap();
    let model = write_model(dir.path());
    let err = ExtractorSpec::onnx(&model).build().err().unwrap();
    assert!(matches!(err, Error::Io { .. }), "{err}");

    write_manifest(&dir.path().join("manifest.json"), &metadata());
    let err = ExtractorSpec::onnx(dir.path().join("absent.onnx")).build().err().unwrap();
    assert_eq!(err.kind(), ErrorKind::Compute);

    std::fs::write(dir.path().join("garbage.onnx"), b"not a model").unwrap();
    let err = ExtractorSpec::onnx(dir.path().join("garbage.onnx")).build().err().unwrap();
    assert!(matches!(err, Error::Model(_)), "{err}");
}

#[test]
fn wrong_tile_size_is_rejected() {
    let (_dir, model) = setup();
    let extractor = ExtractorSpec::onnx(&model).build().unwrap();
    let tile = ImageTile {
        pixels: Array3::zeros((3, 8, 8)),
        time_offset: 0,
        role: Role::Train,
        data_rows: 8,
    };
    assert!(extractor.extract(&tile).is_err());
}

#[test]
fn pipeline_runs_with_backbone() {
    let (dir, model) = setup();
    let series = |shift: f64| {
        let values = Array4::from_shape_fn((1, 1, 2, 160), |(_, _, d, t)| {
            (t as f64 * (0.4 + 0.3 * d as f64) + shift).sin()
        })
        .into_shape_with_order((2, 160))
        .unwrap();
        wavetile::series::MultivariateSeries::new(values, "s").unwrap()
    };
    let config = PipelineConfig {
        window: SIZE,
        stride: 8,
        extractor: ExtractorSpec::onnx(&model),
        coreset_ratio: 0.1,
        ..PipelineConfig::default()
    };
    let detector = Detector::fit(&series(0.0), &config).unwrap();
    let detection = detector.score(&series(0.3)).unwrap();
    assert_eq!(detection.scores.len(), 160);
    assert!(detection.scores.iter().all(|s| s.is_finite()));

    let saved = dir.path().join("state");
    detector.save(&saved).unwrap();
    let reloaded = Detector::load(&saved).unwrap();
    assert_eq!(reloaded.score(&series(0.3)).unwrap().scores, detection.scores);

    let wrong = PipelineConfig {
        window: 32,
        stride: 16,
        ..config
    };
    let err = Detector::fit(&series(0.0), &wrong).err().unwrap();
    assert_eq!(err.kind(), ErrorKind::Config);
}
