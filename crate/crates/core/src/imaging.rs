//! Turn aggregated scalograms into 8-bit RGB images and cut them into
//! overlapping square tiles.
//!
//! Pixel layout is `[channel, row, column]` with row = frequency index
//! (row 0 = lowest) and column = time. PNG export flips rows so the lowest
//! frequency sits at the bottom of the picture.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use image::{Rgb, RgbImage};
use ndarray::{s, Array2, Array3, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::aggregation::AggregatedScalogram;
use crate::error::{Error, Result};

pub const DEFAULT_HEADROOM: f64 = 1.2;
pub const DEFAULT_WINDOW: usize = 256;

/// Which of the red (first wavelet), green (second wavelet) and blue
/// (frequency ramp) planes carry data. Excluded planes are zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ChannelMask {
    pub red: bool,
    pub green: bool,
    pub blue: bool,
}

impl ChannelMask {
    pub const ALL: ChannelMask = ChannelMask {
        red: true,
        green: true,
        blue: true,
    };

    pub fn is_empty(&self) -> bool {
        !(self.red || self.green || self.blue)
    }

    pub fn enabled(&self, channel: usize) -> bool {
        [self.red, self.green, self.blue][channel]
    }
}

impl Default for ChannelMask {
    fn default() -> Self {
        Self::ALL
    }
}

impl FromStr for ChannelMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut mask = ChannelMask {
            red: false,
            green: false,
            blue: false,
        };
        for c in s.chars() {
            let slot = match c.to_ascii_uppercase() {
                'R' => &mut mask.red,
                'G' => &mut mask.green,
                'B' => &mut mask.blue,
                _ => {
                    return Err(Error::InvalidParameter(format!(
                        "unknown channel {c:?} in mask {s:?} (use letters R, G, B)"
                    )))
                }
            };
            if *slot {
                return Err(Error::InvalidParameter(format!(
                    "channel {c:?} repeated in mask {s:?}"
                )));
            }
            *slot = true;
        }
        if mask.is_empty() {
            return Err(Error::InvalidParameter("channel mask is empty".into()));
        }
        Ok(mask)
    }
}

impl fmt::Display for ChannelMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (on, c) in [(self.red, 'R'), (self.green, 'G'), (self.blue, 'B')] {
            if on {
                write!(f, "{c}")?;
            }
        }
        Ok(())
    }
}

impl Serialize for ChannelMask {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ChannelMask {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImagingParams {
    /// Headroom factor applied to aggregated values before scaling.
    pub headroom: f64,
    pub window: usize,
    pub stride: usize,
    pub channels: ChannelMask,
}

impl Default for ImagingParams {
    fn default() -> Self {
        Self {
            headroom: DEFAULT_HEADROOM,
            window: DEFAULT_WINDOW,
            stride: DEFAULT_WINDOW / 2,
            channels: ChannelMask::ALL,
        }
    }
}

impl ImagingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.headroom.is_finite() && self.headroom >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "headroom r must be >= 1, got {}",
                self.headroom
            )));
        }
        if self.window == 0 || self.stride == 0 || self.stride > self.window {
            return Err(Error::InvalidParameter(format!(
                "stride must satisfy 1 <= s <= n (n = {}, s = {})",
                self.window, self.stride
            )));
        }
        if self.channels.is_empty() {
            return Err(Error::InvalidParameter("channel mask is empty".into()));
        }
        Ok(())
    }
}

/// Per-wavelet extremes of the training aggregate, frozen for test data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelNormalization {
    pub s_min: f64,
    pub s_max: f64,
}

pub fn fit_channel_normalization(train: &AggregatedScalogram) -> Result<ChannelNormalization> {
    let (lo, hi) = train
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if train.data.is_empty() {
        return Err(Error::Degenerate("empty aggregated scalogram".into()));
    }
    let s_min = lo.min(0.0);
    let s_max = hi;
    if s_max <= s_min {
        return Err(Error::Degenerate(format!(
            "aggregated training scalogram has no range (min {s_min}, max {s_max})"
        )));
    }
    Ok(ChannelNormalization { s_min, s_max })
}

impl ChannelNormalization {
    /// `clamp((v / r - S_min) / (S_max - S_min), 0, 1)`.
    pub fn apply(&self, value: f64, headroom: f64) -> f64 {
        ((value / headroom - self.s_min) / (self.s_max - self.s_min)).clamp(0.0, 1.0)
    }
}

pub fn normalize_for_imaging(
    agg: &AggregatedScalogram,
    norm: &ChannelNormalization,
    headroom: f64,
) -> Array2<f64> {
    agg.data.mapv(|v| norm.apply(v, headroom))
}

/// `round(255 v)` with ties away from zero, clamped to `0..=255`.
pub fn quantize(value: f64) -> u8 {
    (255.0 * value).round().clamp(0.0, 255.0) as u8
}

/// Blue-plane value for frequency row `row` of `width` data rows. Rows past
/// the data (padding) continue the ramp and saturate at 255.
pub fn frequency_code(row: usize, width: usize) -> u8 {
    if width <= 1 {
        return 0;
    }
    quantize(row as f64 / (width - 1) as f64)
}

/// A full-length image: `3 × Ω̂ × T` pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FullImage {
    pub pixels: Array3<u8>,
}

impl FullImage {
    pub fn rows(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn len(&self) -> usize {
        self.pixels.dim().2
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Build the RGB image: red = first unit matrix, green = second, blue = the
/// frequency ramp. Inputs are `T × Ω̂` and transposed so rows are frequencies.
pub fn embed_channels<'a>(
    red: Option<ArrayView2<'a, f64>>,
    green: Option<ArrayView2<'a, f64>>,
    len: usize,
    width: usize,
    mask: ChannelMask,
) -> Result<FullImage> {
    let mut pixels = Array3::<u8>::zeros((3, width, len));
    for (channel, source) in [(0usize, red), (1, green)] {
        let Some(src) = source else { continue };
        if src.dim() != (len, width) {
            return Err(Error::DimensionMismatch {
                context: format!("channel {channel} matrix shape {:?}", src.dim()),
                expected: len * width,
                found: src.len(),
            });
        }
        if !mask.enabled(channel) {
            continue;
        }
        let mut plane = pixels.slice_mut(s![channel, .., ..]);
        for ((t, w), &v) in src.indexed_iter() {
            plane[[w, t]] = quantize(v);
        }
    }
    if mask.blue {
        for w in 0..width {
            let code = frequency_code(w, width);
            pixels.slice_mut(s![2, w, ..]).fill(code);
        }
    }
    Ok(FullImage { pixels })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Train => "train",
            Role::Test => "test",
        })
    }
}

/// One `3 × n × n` window of the full image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageTile {
    pub pixels: Array3<u8>,
    pub time_offset: usize,
    pub role: Role,
    /// Number of leading rows that carry frequency data; the rest is padding.
    pub data_rows: usize,
}

impl ImageTile {
    pub fn size(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn file_name(&self) -> String {
        format!("{}_{}.png", self.role, self.time_offset)
    }

    pub fn to_rgb_image(&self) -> RgbImage {
        planes_to_image(&self.pixels)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        write_png(&self.to_rgb_image(), path.as_ref())
    }
}

/// Window starts `0, s, 2s, …` that fit, plus a final `T - n` if missing.
pub fn tile_starts(len: usize, window: usize, stride: usize) -> Result<Vec<usize>> {
    if len < window {
        return Err(Error::SeriesTooShort(format!(
            "series length {len} is shorter than one window of {window} samples"
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidParameter("stride must be positive".into()));
    }
    let mut starts: Vec<usize> = (0..=len - window).step_by(stride).collect();
    if starts.last() != Some(&(len - window)) {
        starts.push(len - window);
    }
    Ok(starts)
}

pub fn tile(
    image: &FullImage,
    window: usize,
    stride: usize,
    role: Role,
    mask: ChannelMask,
) -> Result<Vec<ImageTile>> {
    let data_rows = image.rows();
    if data_rows > window {
        return Err(Error::InvalidParameter(format!(
            "image has {data_rows} frequency rows, more than the tile size {window}"
        )));
    }
    let starts = tile_starts(image.len(), window, stride)?;
    Ok(starts
        .into_iter()
        .map(|t0| {
            let mut pixels = Array3::<u8>::zeros((3, window, window));
            pixels
                .slice_mut(s![.., ..data_rows, ..])
                .assign(&image.pixels.slice(s![.., .., t0..t0 + window]));
            if mask.blue {
                for row in data_rows..window {
                    pixels
                        .slice_mut(s![2, row, ..])
                        .fill(frequency_code(row, data_rows));
                }
            }
            ImageTile {
                pixels,
                time_offset: t0,
                role,
                data_rows,
            }
        })
        .collect())
}

fn write_png(image: &RgbImage, path: &Path) -> Result<()> {
    let mut buf = std::io::Cursor::new(Vec::new());
    image.write_to(&mut buf, image::ImageFormat::Png)?;
    crate::npy::write_atomic(path, buf.get_ref())
}

fn planes_to_image(pixels: &Array3<u8>) -> RgbImage {
    let (_, rows, cols) = pixels.dim();
    RgbImage::from_fn(cols as u32, rows as u32, |x, y| {
        let row = rows - 1 - y as usize;
        let col = x as usize;
        Rgb([
            pixels[[0, row, col]],
            pixels[[1, row, col]],
            pixels[[2, row, col]],
        ])
    })
}

impl FullImage {
    pub fn to_rgb_image(&self) -> RgbImage {
        planes_to_image(&self.pixels)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        write_png(&self.to_rgb_image(), path.as_ref())
    }
}
