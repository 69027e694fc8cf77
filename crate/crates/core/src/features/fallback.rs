use nalgebra::DMatrix;
use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{check_tile, FeatureExtractor, PatchGrid};
use crate::error::Result;
use crate::imaging::ImageTile;

/// Block side in pixels; blocks do not overlap.
pub const FALLBACK_BLOCK: usize = 8;
/// Output feature width.
pub const FALLBACK_DIM: usize = 64;
/// Seed of the fixed projection matrix.
pub const FALLBACK_SEED: u64 = 0x5ca1_ab1e;

const STATS: usize = 12;

/// Handcrafted block statistics projected to 64 dimensions.
///
/// Per 8×8 block and channel (pixels scaled to `[0, 1]`): mean, standard
/// deviation, mean absolute horizontal difference and mean absolute vertical
/// difference. The 12 statistics are mapped through a seeded matrix with
/// orthonormal columns, so distances between patches are preserved.
#[derive(Clone, Debug)]
pub struct FallbackExtractor {
    projection: Array2<f64>,
}

impl Default for FallbackExtractor {
    fn default() -> Self {
        Self::new()
    }
}

impl FallbackExtractor {
    pub fn new() -> Self {
        Self {
            projection: orthonormal_projection(STATS, FALLBACK_DIM, FALLBACK_SEED),
        }
    }

    /// The `12 × 64` projection; rows are orthonormal.
    pub fn projection(&self) -> &Array2<f64> {
        &self.projection
    }

    /// Raw 12 statistics of one block (before projection).
    pub fn block_statistics(tile: &ImageTile, row: usize, col: usize) -> [f64; STATS] {
        let b = FALLBACK_BLOCK;
        let mut out = [0.0; STATS];
        for ch in 0..3 {
            let block = tile
                .pixels
                .slice(s![ch, row * b..(row + 1) * b, col * b..(col + 1) * b])
                .mapv(|p| p as f64 / 255.0);
            let n = (b * b) as f64;
            let mean = block.sum() / n;
            let var = block.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let mut dx = 0.0;
            let mut dy = 0.0;
            for y in 0..b {
                for x in 0..b - 1 {
                    dx += (block[[y, x + 1]] - block[[y, x]]).abs();
                    dy += (block[[x + 1, y]] - block[[x, y]]).abs();
                }
            }
            let pairs = (b * (b - 1)) as f64;
            out[ch] = mean;
            out[3 + ch] = var.sqrt();
            out[6 + ch] = dx / pairs;
            out[9 + ch] = dy / pairs;
        }
        out
    }
}

/// `rows × cols` matrix with orthonormal rows (`rows <= cols`), from the QR
/// factorization of a seeded Gaussian matrix.
fn orthonormal_projection(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = DMatrix::<f64>::from_fn(cols, rows, |_, _| StandardNormal.sample(&mut rng));
    let q = gauss.qr().q();
    Array2::from_shape_fn((rows, cols), |(r, c)| q[(c, r)])
}

impl FeatureExtractor for FallbackExtractor {
    fn tile_size(&self) -> Option<usize> {
        None
    }

    fn extract(&self, tile: &ImageTile) -> Result<PatchGrid> {
        check_tile(tile, None)?;
        let n = tile.size();
        let cells = n / FALLBACK_BLOCK;
        let stats: Vec<[f64; STATS]> = (0..cells * cells)
            .into_par_iter()
            .map(|k| Self::block_statistics(tile, k / cells, k % cells))
            .collect();
        let raw = Array2::from_shape_fn((cells * cells, STATS), |(p, j)| stats[p][j]);
        Ok(PatchGrid {
            features: raw.dot(&self.projection),
            grid_shape: (cells, cells),
            tile_size: cells * FALLBACK_BLOCK,
            tile_offset: tile.time_offset,
        })
    }
}
