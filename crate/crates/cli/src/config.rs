//! Resolution of the pipeline configuration from an optional TOML/JSON file
//! and command-line overrides.

use std::path::{Path, PathBuf};

use clap::Args;
use serde_json::{json, Map, Value};
use wavetile::imaging::ChannelMask;
use wavetile::{Error, PipelineConfig, Result};

#[derive(Args, Debug, Clone, Default)]
pub struct PipelineFlags {
    /// TOML or JSON file mirroring the pipeline configuration; flags override it
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Dimension aggregation: `pca` or `rm` (random mapping)
    #[arg(long, value_parser = ["pca", "rm", "random"])]
    pub mapping: Option<String>,
    /// Tile size n in samples
    #[arg(long)]
    pub window: Option<usize>,
    /// Tile stride in samples (defaults to half the window)
    #[arg(long)]
    pub stride: Option<usize>,
    /// Fraction of training patches kept in the memory bank
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Neighbourhood size used to reweight nearest-neighbour distances
    #[arg(long)]
    pub neighbors: Option<usize>,
    /// Score by plain nearest-neighbour distance
    #[arg(long)]
    pub no_reweight: bool,
    /// Dimensions per random-mapping sample
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Section length for score partitioning
    #[arg(long = "n-sp")]
    pub n_sp: Option<usize>,
    /// Enabled image channels: RGB, GB, RB, RG, R, G or B
    #[arg(long, value_parser = parse_channels)]
    pub channels: Option<ChannelMask>,
    /// ONNX backbone; its manifest.json is expected next to it
    #[arg(long, value_name = "ONNX", conflicts_with = "fallback_extractor")]
    pub backbone: Option<PathBuf>,
    /// Use the built-in model-free patch features
    #[arg(long)]
    pub fallback_extractor: bool,
    /// Also report whether the score peak hits the single labelled segment
    #[arg(long)]
    pub ucr: bool,
}

fn parse_channels(s: &str) -> std::result::Result<ChannelMask, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn config_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::InvalidParameter(format!("{}: {e}", path.display()))
}

fn read_file(path: &Path) -> Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path).map_err(|e| config_error(path, e))?;
    let value: Value = match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text).map_err(|e| config_error(path, e))?,
        _ => serde_json::from_str(&text).map_err(|e| config_error(path, e))?,
    };
    match value {
        Value::Object(map) => Ok(map),
        _ => Err(config_error(path, "expected a table of settings")),
    }
}

impl PipelineFlags {
    /// File settings, then flags, then defaults for anything left unset.
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut map = match &self.config {
            Some(path) => read_file(path)?,
            None => Map::new(),
        };
        let mut set = |key: &str, value: Value| {
            map.insert(key.to_string(), value);
        };
        if let Some(m) = &self.mapping {
            set("mapping", json!(if m == "pca" { "pca" } else { "random" }));
        }
        if let Some(v) = self.window {
            set("window", json!(v));
        }
        if let Some(v) = self.stride {
            set("stride", json!(v));
        }
        if let Some(v) = self.ratio {
            set("coreset_ratio", json!(v));
        }
        if let Some(v) = self.neighbors {
            set("neighbors", json!(v));
        }
        if self.no_reweight {
            set("reweight", json!(false));
        }
        if let Some(v) = self.p {
            set("p", json!(v));
        }
        if let Some(v) = self.seed {
            set("seed", json!(v));
        }
        if let Some(v) = self.channels {
            set("channels", json!(v.to_string()));
        }
        if let Some(path) = &self.backbone {
            set("extractor", json!({ "kind": "onnx_backbone", "model_path": path }));
        }
        if self.fallback_extractor {
            set("extractor", json!({ "kind": "fallback" }));
        }
        if let Some(window) = map.get("window").and_then(Value::as_u64) {
            map.entry("stride").or_insert(json!(window / 2));
        }
        if self.n_sp.is_some() || self.ucr {
            let eval = map
                .entry("evaluation")
                .or_insert_with(|| Value::Object(Map::new()));
            let Value::Object(eval) = eval else {
                return Err(Error::InvalidParameter("`evaluation` must be a table".into()));
            };
            if let Some(v) = self.n_sp {
                eval.insert("n_sp".into(), json!(v));
            }
            if self.ucr {
                eval.insert("ucr".into(), json!(true));
            }
        }
        let config = PipelineConfig::from_json(&Value::Object(map).to_string())?;
        config.validate()?;
        Ok(config)
    }
}

/// Writes the resolved configuration as `config.json` in `dir`.
pub fn echo(config: &PipelineConfig, dir: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(config)? + "\n";
    wavetile::write_atomic(&dir.join("config.json"), text.as_bytes())
}
