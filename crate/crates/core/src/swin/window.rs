//! Window partitioning and the cyclic-shift attention mask.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor, Var};

/// Additive bias applied to masked attention logits.
pub const MASK_NEG: f64 = -1e9;

fn check_window(grid_h: usize, grid_w: usize, window: usize) -> Result<()> {
    if window == 0 || grid_h % window != 0 || grid_w % window != 0 {
        return Err(Error::Config(format!(
            "window {window} does not tile a {grid_h}×{grid_w} grid"
        )));
    }
    Ok(())
}

/// `[Hg·Wg, D]` tokens → `[num_windows, w², D]`, windows in row-major order.
pub fn window_partition<'t, T: Real>(
    x: Var<'t, T>,
    grid_h: usize,
    grid_w: usize,
    window: usize,
) -> Result<Var<'t, T>> {
    check_window(grid_h, grid_w, window)?;
    let d = *x.shape().last().expect("non-empty");
    let (nh, nw) = (grid_h / window, grid_w / window);
    x.reshape(&[nh, window, nw, window, d])?
        .permute(&[0, 2, 1, 3, 4])?
        .reshape(&[nh * nw, window * window, d])
}

/// Inverse of [`window_partition`].
pub fn window_reverse<'t, T: Real>(
    windows: Var<'t, T>,
    grid_h: usize,
    grid_w: usize,
    window: usize,
) -> Result<Var<'t, T>> {
    check_window(grid_h, grid_w, window)?;
    let d = *windows.shape().last().expect("non-empty");
    let (nh, nw) = (grid_h / window, grid_w / window);
    windows
        .reshape(&[nh, nw, window, window, d])?
        .permute(&[0, 2, 1, 3, 4])?
        .reshape(&[grid_h * grid_w, d])
}

/// Per-window additive attention bias: 0 within a region, [`MASK_NEG`] across.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    pub num_windows: usize,
    /// Tokens per window, `w²`.
    pub tokens: usize,
    values: Vec<f64>,
}

impl AttentionMask {
    pub fn get(&self, window: usize, i: usize, j: usize) -> f64 {
        self.values[(window * self.tokens + i) * self.tokens + j]
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Shape `[num_windows, 1, n, n]`, broadcasting over heads.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_f64(&[self.num_windows, 1, self.tokens, self.tokens], &self.values)
            .expect("mask dims consistent")
    }
}

/// Label of each cell of the shifted grid by the pre-shift region it came from.
pub fn shift_region_labels(grid_h: usize, grid_w: usize, window: usize, shift: usize) -> Vec<usize> {
    let band = |i: usize, n: usize| {
        if i < n - window {
            0
        } else if i < n - shift {
            1
        } else {
            2
        }
    };
    let mut labels = Vec::with_capacity(grid_h * grid_w);
    for r in 0..grid_h {
        for c in 0..grid_w {
            labels.push(if shift == 0 { 0 } else { band(r, grid_h) * 3 + band(c, grid_w) });
        }
    }
    labels
}

/// Builds the mask used by shifted-window attention on a grid rolled by `-shift`.
pub fn build_shift_mask(grid_h: usize, grid_w: usize, window: usize, shift: usize) -> Result<AttentionMask> {
    check_window(grid_h, grid_w, window)?;
    if shift >= window {
        return Err(Error::Config(format!("shift {shift} must be below window {window}")));
    }
    let labels = shift_region_labels(grid_h, grid_w, window, shift);
    let n = window * window;
    let (nh, nw) = (grid_h / window, grid_w / window);
    let mut values = Vec::with_capacity(nh * nw * n * n);
    for wr in 0..nh {
        for wc in 0..nw {
            let win: Vec<usize> = (0..n)
                .map(|t| labels[(wr * window + t / window) * grid_w + wc * window + t % window])
                .collect();
            for &a in &win {
                for &b in &win {
                    values.push(if a == b { 0.0 } else { MASK_NEG });
                }
            }
        }
    }
    Ok(AttentionMask { num_windows: nh * nw, tokens: n, values })
}

/// For every (query, key) pair in a `w×w` window, the row of the relative
/// position bias table holding their coordinate offset.
pub fn relative_position_index(window: usize) -> Vec<usize> {
    let n = window * window;
    let side = 2 * window - 1;
    let mut idx = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let dy = (i / window) + window - 1 - (j / window);
            let dx = (i % window) + window - 1 - (j % window);
            idx.push(dy * side + dx);
        }
    }
    idx
}
