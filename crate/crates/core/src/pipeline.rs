//! End-to-end detector: fit on an anomaly-free training series, then score
//! test series time step by time step.

use std::path::Path;

use ndarray::{concatenate, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{
    apply_pca_map, apply_random_map, fit_pca_map, generate_random_matrix, pca_frequency_points,
    pca_output_width, AggregatedScalogram, MappingMethod, PcaMap, RandomMatrix,
};
use crate::cwt::{FrequencyGrid, ScalogramStack, WaveletSpec};
use crate::error::{Error, Result};
use crate::evaluation::EvalConfig;
use crate::features::{ExtractorSpec, FeatureExtractor, PatchGrid};
use crate::imaging::{
    embed_channels, fit_channel_normalization, normalize_for_imaging, tile, ChannelMask,
    ChannelNormalization, FullImage, ImageTile, ImagingParams, Role, DEFAULT_HEADROOM,
    DEFAULT_WINDOW,
};
use crate::memory_bank::{MemoryBank, MemoryBankParams, DEFAULT_CORESET_RATIO, DEFAULT_NEIGHBORS};
use crate::npy;
use crate::scores::{assemble, edge_correct, edge_floor, TileScores};
use crate::series::MultivariateSeries;

pub const DEFAULT_LHS_DIVISOR: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mapping: MappingMethod,
    /// First wavelet feeds the red channel, second the green one.
    pub wavelets: Vec<WaveletSpec>,
    pub window: usize,
    pub stride: usize,
    pub headroom: f64,
    /// Overrides the frequency-point policy when set.
    pub frequency_points: Option<usize>,
    pub p: usize,
    pub seed: u64,
    pub coreset_ratio: f64,
    pub neighbors: usize,
    pub reweight: bool,
    pub extractor: ExtractorSpec,
    pub channels: ChannelMask,
    pub evaluation: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mapping: MappingMethod::Pca,
            wavelets: vec![WaveletSpec::morlet(), WaveletSpec::ricker()],
            window: DEFAULT_WINDOW,
            stride: DEFAULT_WINDOW / 2,
            headroom: DEFAULT_HEADROOM,
            frequency_points: None,
            p: DEFAULT_LHS_DIVISOR,
            seed: 0,
            coreset_ratio: DEFAULT_CORESET_RATIO,
            neighbors: DEFAULT_NEIGHBORS,
            reweight: true,
            extractor: ExtractorSpec::Fallback,
            channels: ChannelMask::ALL,
            evaluation: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn imaging(&self) -> ImagingParams {
        ImagingParams {
            headroom: self.headroom,
            window: self.window,
            stride: self.stride,
            channels: self.channels,
        }
    }

    pub fn memory_bank(&self) -> MemoryBankParams {
        MemoryBankParams {
            coreset_ratio: self.coreset_ratio,
            neighbors: self.neighbors,
            reweight: self.reweight,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.imaging().validate()?;
        self.memory_bank().validate()?;
        self.evaluation.validate()?;
        if self.wavelets.is_empty() || self.wavelets.len() > 2 {
            return Err(Error::InvalidParameter(format!(
                "between one and two wavelets are supported, got {}",
                self.wavelets.len()
            )));
        }
        for w in &self.wavelets {
            w.validate()?;
        }
        if self.channels.green && self.wavelets.len() < 2 {
            return Err(Error::InvalidParameter(
                "green channel enabled but only one wavelet configured".into(),
            ));
        }
        if self.p == 0 {
            return Err(Error::InvalidParameter("p must be >= 1".into()));
        }
        if let Some(points) = self.frequency_points {
            if points < 2 {
                return Err(Error::InvalidParameter(
                    "at least two frequency points are required".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::InvalidParameter(format!("configuration: {e}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FittedMapping {
    Pca(Vec<PcaMap>),
    Random(RandomMatrix),
}

/// Everything learned from the training series.
pub struct Detector {
    config: PipelineConfig,
    grid: FrequencyGrid,
    dims: usize,
    width: usize,
    mapping: FittedMapping,
    normalization: Vec<ChannelNormalization>,
    bank: MemoryBank,
    train_floor: f64,
    extractor: Box<dyn FeatureExtractor>,
}

/// Scores of one test series.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    /// Edge-corrected per-time-step anomaly score.
    pub scores: Vec<f64>,
    /// Score before edge correction.
    pub raw_scores: Vec<f64>,
    /// Aggregated row of the per-step maximum (earliest on ties).
    pub peak_row: Vec<usize>,
    /// Frequency of `peak_row` in cycles per sample; only for the random
    /// mapping, whose rows are frequency bins.
    pub peak_frequency: Option<Vec<f64>>,
    pub edge_floor: f64,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

impl Detector {
    pub fn fit(train: &MultivariateSeries, config: &PipelineConfig) -> Result<Self> {
        stage("config", config.validate())?;
        let extractor = stage("features", config.extractor.build())?;
        if let Some(size) = extractor.tile_size() {
            if size != config.window {
                return Err(Error::InvalidParameter(format!(
                    "backbone expects {size} pixel tiles but the window is {}",
                    config.window
                ))
                .in_stage("config"));
            }
        }
        let (dims, len, n) = (train.dims(), train.len(), config.window);
        if len < n {
            return Err(Error::SeriesTooShort(format!(
                "training series has {len} samples, fewer than the window {n}"
            ))
            .in_stage("config"));
        }

        let freqs = match (config.frequency_points, config.mapping) {
            (Some(points), _) => points,
            (None, MappingMethod::Pca) => stage("aggregation", pca_frequency_points(n, len, dims))?,
            (None, MappingMethod::Random) => n,
        };
        let grid = stage("cwt", FrequencyGrid::new(n, freqs))?;
        let stack = stage("cwt", ScalogramStack::compute(train, &config.wavelets, &grid))?.normalize();

        let (mapping, aggregated) = match config.mapping {
            MappingMethod::Pca => {
                let width = pca_output_width(n, dims, freqs, len);
                let maps: Vec<PcaMap> = (0..config.wavelets.len())
                    .map(|i| fit_pca_map(&stack, i, width))
                    .collect::<Result<_>>()
                    .map_err(|e| e.in_stage("aggregation"))?;
                let agg = maps
                    .iter()
                    .enumerate()
                    .map(|(i, m)| apply_pca_map(&stack, i, m))
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| e.in_stage("aggregation"))?;
                (FittedMapping::Pca(maps), agg)
            }
            MappingMethod::Random => {
                let matrix = stage(
                    "aggregation",
                    generate_random_matrix(config.wavelets.len(), dims, freqs, config.p, config.seed),
                )?;
                let agg = stage("aggregation", apply_random_map(&stack, &matrix))?;
                (FittedMapping::Random(matrix), agg)
            }
        };
        let width = aggregated[0].width();
        drop(stack);

        let normalization = aggregated
            .iter()
            .enumerate()
            .map(|(i, agg)| {
                if config.channels.enabled(i) {
                    fit_channel_normalization(agg)
                } else {
                    // unused channel: identity range keeps the state well formed
                    Ok(ChannelNormalization { s_min: 0.0, s_max: 1.0 })
                }
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.in_stage("imaging"))?;

        let mut detector = Self {
            config: config.clone(),
            grid,
            dims,
            width,
            mapping,
            normalization,
            bank: MemoryBank::from_parts(Array2::zeros((1, 1)), config.memory_bank())?,
            train_floor: 0.0,
            extractor,
        };

        let tiles = stage("imaging", detector.tiles_from_aggregate(&aggregated, len, Role::Train))?;
        let grids = stage("features", detector.extract_all(&tiles))?;
        let views: Vec<_> = grids.iter().map(|g| g.features.view()).collect();
        let pool = concatenate(Axis(0), &views)
            .map_err(|e| Error::Internal(e.to_string()).in_stage("memory_bank"))?;
        detector.bank = stage("memory_bank", MemoryBank::build(pool.view(), config.memory_bank()))?;

        let train_trace = stage("scoring", detector.score_grids(&grids, len))?;
        detector.train_floor = train_trace.0.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(detector)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Number of aggregated rows `Ω̂`.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn mapping(&self) -> &FittedMapping {
        &self.mapping
    }

    pub fn normalization(&self) -> &[ChannelNormalization] {
        &self.normalization
    }

    pub fn memory_bank(&self) -> &MemoryBank {
        &self.bank
    }

    /// Minimum assembled score over the training series.
    pub fn train_floor(&self) -> f64 {
        self.train_floor
    }

    /// Aggregated scalograms of `series` under the fitted mapping.
    pub fn aggregate(&self, series: &MultivariateSeries) -> Result<Vec<AggregatedScalogram>> {
        if series.dims() != self.dims {
            return Err(Error::DimensionMismatch {
                context: "series dimensions vs fitted detector".into(),
                expected: self.dims,
                found: series.dims(),
            });
        }
        let stack = stage(
            "cwt",
            ScalogramStack::compute(series, &self.config.wavelets, &self.grid),
        )?
        .normalize();
        let agg = match &self.mapping {
            FittedMapping::Pca(maps) => maps
                .iter()
                .enumerate()
                .map(|(i, m)| apply_pca_map(&stack, i, m))
                .collect::<Result<Vec<_>>>(),
            FittedMapping::Random(matrix) => apply_random_map(&stack, matrix),
        };
        stage("aggregation", agg)
    }

    fn image_from_aggregate(&self, agg: &[AggregatedScalogram], len: usize) -> Result<FullImage> {
        let planes: Vec<Array2<f64>> = agg
            .iter()
            .zip(&self.normalization)
            .map(|(a, norm)| normalize_for_imaging(a, norm, self.config.headroom))
            .collect();
        embed_channels(
            planes.first().map(|p| p.view()),
            planes.get(1).map(|p| p.view()),
            len,
            self.width,
            self.config.channels,
        )
    }

    fn tiles_from_aggregate(
        &self,
        agg: &[AggregatedScalogram],
        len: usize,
        role: Role,
    ) -> Result<Vec<ImageTile>> {
        let image = self.image_from_aggregate(agg, len)?;
        tile(
            &image,
            self.config.window,
            self.config.stride,
            role,
            self.config.channels,
        )
    }

    /// Full-length RGB image and its tiles for `series`.
    pub fn render(&self, series: &MultivariateSeries, role: Role) -> Result<(FullImage, Vec<ImageTile>)> {
        let agg = self.aggregate(series)?;
        let image = stage("imaging", self.image_from_aggregate(&agg, series.len()))?;
        let tiles = stage(
            "imaging",
            tile(&image, self.config.window, self.config.stride, role, self.config.channels),
        )?;
        Ok((image, tiles))
    }

    fn extract_all(&self, tiles: &[ImageTile]) -> Result<Vec<PatchGrid>> {
        tiles
            .par_iter()
            .map(|t| self.extractor.extract(t))
            .collect()
    }

    fn score_grids(&self, grids: &[PatchGrid], len: usize) -> Result<(Vec<f64>, Vec<usize>)> {
        let tiles = grids
            .iter()
            .map(|g| TileScores::new(g, self.bank.score(g.features.view())?))
            .collect::<Result<Vec<_>>>()?;
        let trace = assemble(&tiles, len, self.width)?.collapse();
        Ok((trace.scores, trace.peak_row))
    }

    pub fn score(&self, test: &MultivariateSeries) -> Result<Detection> {
        let len = test.len();
        let n = self.config.window;
        if len <= 2 * n {
            return Err(Error::SeriesTooShort(format!(
                "test series has {len} samples; more than {} are needed",
                2 * n
            ))
            .in_stage("config"));
        }
        let agg = self.aggregate(test)?;
        let tiles = stage("imaging", self.tiles_from_aggregate(&agg, len, Role::Test))?;
        let grids = stage("features", self.extract_all(&tiles))?;
        let (raw_scores, peak_row) = stage("scoring", self.score_grids(&grids, len))?;
        let floor = edge_floor(&[self.train_floor], &raw_scores);
        let mut scores = raw_scores.clone();
        stage("scoring", edge_correct(&mut scores, floor, n))?;
        let peak_frequency = match self.mapping {
            FittedMapping::Random(_) => {
                let f = self.grid.frequencies();
                Some(peak_row.iter().map(|&r| f[r]).collect())
            }
            FittedMapping::Pca(_) => None,
        };
        Ok(Detection {
            scores,
            raw_scores,
            peak_row,
            peak_frequency,
            edge_floor: floor,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct StateHeader {
    format: u32,
    frequency_points: usize,
    dims: usize,
    width: usize,
    mapping: MappingMethod,
    normalization: Vec<ChannelNormalization>,
    train_floor: f64,
}

const STATE_FORMAT: u32 = 1;

impl Detector {
    /// Writes the fitted state into `dir`: the resolved configuration, the
    /// mapping, the imaging ranges and the memory bank.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        npy::write_atomic(
            &dir.join("config.json"),
            serde_json::to_string_pretty(&self.config)?.as_bytes(),
        )?;
        let header = StateHeader {
            format: STATE_FORMAT,
            frequency_points: self.grid.len(),
            dims: self.dims,
            width: self.width,
            mapping: self.config.mapping,
            normalization: self.normalization.clone(),
            train_floor: self.train_floor,
        };
        npy::write_atomic(
            &dir.join("detector.json"),
            serde_json::to_string_pretty(&header)?.as_bytes(),
        )?;
        match &self.mapping {
            FittedMapping::Pca(maps) => {
                for (i, m) in maps.iter().enumerate() {
                    m.save(dir, &format!("pca_{i}"))?;
                }
            }
            FittedMapping::Random(matrix) => matrix.save(dir, "random")?,
        }
        self.bank.save(dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<String> {
            let path = dir.join(name);
            std::fs::read_to_string(&path).map_err(|e| Error::io(path, e))
        };
        let config = PipelineConfig::from_json(&read("config.json")?)?;
        config.validate()?;
        let header: StateHeader = serde_json::from_str(&read("detector.json")?)?;
        if header.format != STATE_FORMAT {
            return Err(Error::InvalidParameter(format!(
                "unsupported detector state format {}",
                header.format
            )));
        }
        let mapping = match header.mapping {
            MappingMethod::Pca => FittedMapping::Pca(
                (0..config.wavelets.len())
                    .map(|i| PcaMap::load(dir, &format!("pca_{i}")))
                    .collect::<Result<_>>()?,
            ),
            MappingMethod::Random => FittedMapping::Random(RandomMatrix::load(dir, "random")?),
        };
        Ok(Self {
            grid: FrequencyGrid::new(config.window, header.frequency_points)?,
            dims: header.dims,
            width: header.width,
            mapping,
            normalization: header.normalization,
            bank: MemoryBank::load(dir)?,
            train_floor: header.train_floor,
            extractor: config.extractor.build()?,
            config,
        })
    }
}
