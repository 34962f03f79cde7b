use serde::{Deserialize, Serialize};

/// Gray image with values in [0, 1], row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl Grid {
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.pixels[y * self.width + x]
    }
}

/// (rows, cols) of the tiling for `c` channels.
pub fn grid_size(c: usize) -> (usize, usize) {
    let mut cols = (c as f64).sqrt().ceil() as usize;
    // Guard against sqrt rounding for perfect squares.
    while cols * cols < c {
        cols += 1;
    }
    while cols > 1 && (cols - 1) * (cols - 1) >= c {
        cols -= 1;
    }
    (c.div_ceil(cols.max(1)), cols.max(1))
}

/// Tiles the channels of one (c, h, w) activation, each min-max normalized,
/// with 1-pixel zero separators. Constant channels render as 0.5; unused
/// tiles stay 0.
pub fn feature_grid(values: &[f64], shape: [usize; 3]) -> Grid {
    let [c, h, w] = shape;
    assert_eq!(values.len(), c * h * w, "values do not match shape");
    let (rows, cols) = grid_size(c);
    let height = rows * h + rows.saturating_sub(1);
    let width = cols * w + cols.saturating_sub(1);
    let mut pixels = vec![0.0; height * width];
    for ch in 0..c {
        let map = &values[ch * h * w..(ch + 1) * h * w];
        let lo = map.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (ty, tx) = (ch / cols * (h + 1), ch % cols * (w + 1));
        for y in 0..h {
            for x in 0..w {
                let v = map[y * w + x];
                pixels[(ty + y) * width + tx + x] = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
            }
        }
    }
    Grid { rows, cols, height, width, pixels }
}
