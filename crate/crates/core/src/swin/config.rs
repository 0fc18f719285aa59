use crate::error::{Error, Result};

/// Number of hierarchical stages.
pub const NUM_STAGES: usize = 4;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SwinConfig {
    /// Side of the square input image, in pixels.
    pub image_size: usize,
    pub patch_size: usize,
    pub in_channels: usize,
    /// Stage-1 channel width `C`.
    pub embed_dim: usize,
    pub depths: [usize; NUM_STAGES],
    pub num_heads: [usize; NUM_STAGES],
    pub window_size: usize,
    pub mlp_ratio: usize,
    pub num_classes: usize,
    /// Bottleneck divisor of the excitation gate.
    pub se_reduction: usize,
    pub use_se: bool,
    pub drop_rate: f64,
}

impl Default for SwinConfig {
    /// The small CPU-trainable configuration.
    fn default() -> Self {
        SwinConfig {
            image_size: 64,
            patch_size: 4,
            in_channels: 3,
            embed_dim: 24,
            depths: [1, 1, 2, 1],
            num_heads: [2, 4, 6, 8],
            window_size: 4,
            mlp_ratio: 4,
            num_classes: 7,
            se_reduction: 4,
            use_se: true,
            drop_rate: 0.0,
        }
    }
}

/// Resolved geometry of one stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StagePlan {
    pub index: usize,
    /// Side of the (square) token grid.
    pub grid: usize,
    pub dim: usize,
    pub heads: usize,
    pub depth: usize,
    /// Effective window side, `min(window_size, grid)`.
    pub window: usize,
    /// Shift used by odd-numbered blocks; 0 when the window covers the grid.
    pub shift: usize,
}

impl StagePlan {
    pub fn tokens(&self) -> usize {
        self.grid * self.grid
    }

    pub fn block_shift(&self, block: usize) -> usize {
        if block % 2 == 1 {
            self.shift
        } else {
            0
        }
    }
}

impl SwinConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.patch_size == 0 || self.image_size == 0 || self.embed_dim == 0 || self.window_size == 0 {
            return bad("image_size, patch_size, embed_dim and window_size must be positive".into());
        }
        if self.in_channels == 0 {
            return bad("in_channels must be positive".into());
        }
        let reduce = self.patch_size << (NUM_STAGES - 1);
        if self.image_size % reduce != 0 {
            return bad(format!(
                "image_size {} must be divisible by patch_size·8 = {reduce}",
                self.image_size
            ));
        }
        for (i, (&depth, &heads)) in self.depths.iter().zip(&self.num_heads).enumerate() {
            if depth == 0 {
                return bad(format!("stage {} has depth 0", i + 1));
            }
            let dim = self.embed_dim << i;
            if heads == 0 || dim % heads != 0 {
                return bad(format!("stage {} dim {dim} not divisible by {heads} heads", i + 1));
            }
        }
        if self.mlp_ratio == 0 {
            return bad("mlp_ratio must be positive".into());
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.use_se && (self.se_reduction == 0 || self.final_dim() % self.se_reduction != 0) {
            return bad(format!(
                "final dim {} not divisible by se_reduction {}",
                self.final_dim(),
                self.se_reduction
            ));
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            return bad(format!("drop_rate {} outside [0, 1)", self.drop_rate));
        }
        Ok(())
    }

    /// Width of the pooled classification vector, `8·C`.
    pub fn final_dim(&self) -> usize {
        self.embed_dim << (NUM_STAGES - 1)
    }

    /// Raw patch vector length, `patch² · channels`.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.in_channels
    }

    pub fn stages(&self) -> Vec<StagePlan> {
        let mut grid = self.image_size / self.patch_size;
        (0..NUM_STAGES)
            .map(|i| {
                let window = self.window_size.min(grid);
                let plan = StagePlan {
                    index: i,
                    grid,
                    dim: self.embed_dim << i,
                    heads: self.num_heads[i],
                    depth: self.depths[i],
                    window,
                    shift: if window == grid { 0 } else { window / 2 },
                };
                grid /= 2;
                plan
            })
            .collect()
    }
}
