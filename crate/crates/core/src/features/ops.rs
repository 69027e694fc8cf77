//! Feature-map helpers used by the backbone adapter: neighbourhood average
//! pooling and bilinear resizing on `C × h × w` maps.

use ndarray::{Array3, ArrayView3};

/// Average pooling with a `k × k` window, stride 1 and zero padding `k / 2`.
/// Padded cells count toward the divisor, so the output keeps the input size.
pub fn avg_pool_same(map: ArrayView3<'_, f64>, k: usize) -> Array3<f64> {
    let (channels, h, w) = map.dim();
    if k <= 1 {
        return map.to_owned();
    }
    let pad = (k / 2) as isize;
    let area = (k * k) as f64;
    let mut out = Array3::zeros((channels, h, w));
    for c in 0..channels {
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut acc = 0.0;
                for dy in -pad..=pad {
                    let yy = y + dy;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    for dx in -pad..=pad {
                        let xx = x + dx;
                        if xx < 0 || xx >= w as isize {
                            continue;
                        }
                        acc += map[[c, yy as usize, xx as usize]];
                    }
                }
                out[[c, y as usize, x as usize]] = acc / area;
            }
        }
    }
    out
}

fn source_coord(dst: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    let scale = in_len as f64 / out_len as f64;
    let src = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(in_len - 1);
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, src - i0 as f64)
}

/// Bilinear resize with half-pixel centres (no corner alignment).
pub fn resize_bilinear(map: ArrayView3<'_, f64>, out_h: usize, out_w: usize) -> Array3<f64> {
    let (channels, h, w) = map.dim();
    if (h, w) == (out_h, out_w) {
        return map.to_owned();
    }
    let rows: Vec<_> = (0..out_h).map(|y| source_coord(y, h, out_h)).collect();
    let cols: Vec<_> = (0..out_w).map(|x| source_coord(x, w, out_w)).collect();
    Array3::from_shape_fn((channels, out_h, out_w), |(c, y, x)| {
        let (y0, y1, fy) = rows[y];
        let (x0, x1, fx) = cols[x];
        let top = map[[c, y0, x0]] * (1.0 - fx) + map[[c, y0, x1]] * fx;
        let bottom = map[[c, y1, x0]] * (1.0 - fx) + map[[c, y1, x1]] * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooling_constant_interior() {
        let map = Array3::from_elem((1, 5, 5), 2.0);
        let out = avg_pool_same(map.view(), 3);
        assert_eq!(out[[0, 2, 2]], 2.0);
        // corner sees 4 of 9 cells
        assert!((out[[0, 0, 0]] - 8.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn bilinear_upsample_matches_half_pixel_rule() {
        let mut map = Array3::zeros((1, 1, 2));
        map[[0, 0, 0]] = 0.0;
        map[[0, 0, 1]] = 1.0;
        let out = resize_bilinear(map.view(), 1, 4);
        let row: Vec<f64> = out.iter().copied().collect();
        assert_eq!(row, vec![0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn bilinear_identity() {
        let map = Array3::from_shape_fn((2, 3, 3), |(c, y, x)| (c * 9 + y * 3 + x) as f64);
        assert_eq!(resize_bilinear(map.view(), 3, 3), map);
    }
}
