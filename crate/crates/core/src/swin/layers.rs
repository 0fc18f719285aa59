use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::window::{build_shift_mask, relative_position_index, window_partition, window_reverse, AttentionMask};
use crate::error::Result;
use crate::params::{trunc_normal, Bound, ParamId, ParamStore};
use crate::tensor::{Real, Tensor, Var};

/// Standard deviation of the truncated-normal weight initializer.
pub const INIT_STD: f64 = 0.02;
pub const NORM_EPS: f64 = 1e-5;

/// Affine map `x·W + b` with `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), trunc_normal(&[inputs, outputs], INIT_STD, rng))?;
        let bias = if bias { Some(store.add(format!("{name}.bias"), Tensor::zeros(&[outputs]))?) } else { None };
        Ok(Linear { weight, bias })
    }

    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.linear(p[self.weight], self.bias.map(|b| p[b]))
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gain: store.add(format!("{name}.gain"), Tensor::ones(&[dim]))?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[dim]))?,
        })
    }

    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.layer_norm(p[self.gain], p[self.bias], T::lit(NORM_EPS))
    }
}

/// Optional dropout randomness; `None` means evaluation mode.
pub type DropoutRng<'a> = Option<&'a mut ChaCha8Rng>;

fn maybe_dropout<'t, T: Real>(x: Var<'t, T>, rate: f64, rng: &mut DropoutRng<'_>) -> Result<Var<'t, T>> {
    match rng {
        Some(r) if rate > 0.0 => x.dropout(rate, *r),
        _ => Ok(x),
    }
}

/// Multi-head self-attention inside non-overlapping windows, with a learned
/// relative position bias per head.
#[derive(Debug, Clone)]
pub struct WindowAttention {
    pub qkv: Linear,
    pub proj: Linear,
    /// `[(2w−1)², heads]`.
    pub rel_bias: ParamId,
    pub heads: usize,
    pub dim: usize,
    pub window: usize,
    rel_index: Vec<usize>,
}

impl WindowAttention {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        window: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let qkv = Linear::new(store, &format!("{name}.qkv"), dim, 3 * dim, true, rng)?;
        let proj = Linear::new(store, &format!("{name}.proj"), dim, dim, true, rng)?;
        let side = 2 * window - 1;
        let rel_bias = store.add(format!("{name}.rel_pos_bias"), Tensor::zeros(&[side * side, heads]))?;
        Ok(WindowAttention { qkv, proj, rel_bias, heads, dim, window, rel_index: relative_position_index(window) })
    }

    /// Attention over `x: [num_windows, w², D]`; also returns the attention
    /// probabilities `[num_windows, heads, w², w²]`.
    pub fn forward_with_probs<'t, T: Real>(
        &self,
        p: &Bound<'t, T>,
        x: Var<'t, T>,
        mask: Option<&AttentionMask>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let shape = x.shape();
        let (nw, n) = (shape[0], shape[1]);
        let (h, d) = (self.heads, self.dim / self.heads);
        let qkv = self
            .qkv
            .forward(p, x)?
            .reshape(&[nw, n, 3, h, d])?
            .permute(&[2, 0, 3, 1, 4])?;
        let part = |i: usize| qkv.slice(0, i, 1)?.reshape(&[nw, h, n, d]);
        let q = part(0)?.scale(T::lit(1.0 / (d as f64).sqrt()))?;
        let k = part(1)?;
        let v = part(2)?;

        let bias = p[self.rel_bias]
            .index_select(&self.rel_index)?
            .reshape(&[n, n, h])?
            .permute(&[2, 0, 1])?;
        let mut logits = q.matmul(k.transpose_last()?)?.add(bias)?;
        if let Some(m) = mask {
            logits = logits.add(x.tape().constant(m.to_tensor()))?;
        }
        let probs = logits.softmax(3)?;
        let out = probs
            .matmul(v)?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[nw, n, self.dim])?;
        Ok((self.proj.forward(p, out)?, probs))
    }

    pub fn forward<'t, T: Real>(
        &self,
        p: &Bound<'t, T>,
        x: Var<'t, T>,
        mask: Option<&AttentionMask>,
    ) -> Result<Var<'t, T>> {
        Ok(self.forward_with_probs(p, x, mask)?.0)
    }
}

/// Two-layer GELU perceptron.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Mlp {
            fc1: Linear::new(store, &format!("{name}.fc1"), dim, hidden, true, rng)?,
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, dim, true, rng)?,
        })
    }
}

/// Pre-norm transformer block attending within (optionally shifted) windows.
#[derive(Debug, Clone)]
pub struct SwinBlock {
    pub norm1: LayerNorm,
    pub attn: WindowAttention,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
    pub grid: usize,
    pub shift: usize,
    pub drop_rate: f64,
    mask: Option<AttentionMask>,
}

impl SwinBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        grid: usize,
        window: usize,
        shift: usize,
        mlp_ratio: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mask = if shift > 0 { Some(build_shift_mask(grid, grid, window, shift)?) } else { None };
        Ok(SwinBlock {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim)?,
            attn: WindowAttention::new(store, &format!("{name}.attn"), dim, heads, window, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim)?,
            mlp: Mlp::new(store, &format!("{name}.mlp"), dim, dim * mlp_ratio, rng)?,
            grid,
            shift,
            drop_rate: 0.0,
            mask,
        })
    }

    pub fn mask(&self) -> Option<&AttentionMask> {
        self.mask.as_ref()
    }

    /// Window attention branch only (norm, optional cyclic shift, windowed
    /// attention, un-shift), without the residual.
    pub fn attention_branch<'t, T: Real>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let (g, w, s) = (self.grid, self.attn.window, self.shift as isize);
        let d = self.attn.dim;
        let mut h = self.norm1.forward(p, x)?;
        if s > 0 {
            h = h.reshape(&[g, g, d])?.roll(&[-s, -s], &[0, 1])?.reshape(&[g * g, d])?;
        }
        let windows = window_partition(h, g, g, w)?;
        let attended = self.attn.forward(p, windows, self.mask.as_ref())?;
        let mut out = window_reverse(attended, g, g, w)?;
        if s > 0 {
            out = out.reshape(&[g, g, d])?.roll(&[s, s], &[0, 1])?.reshape(&[g * g, d])?;
        }
        Ok(out)
    }

    /// `x₁ = x + attn(LN(x))`, `out = x₁ + MLP(LN(x₁))` on `x: [grid², D]`.
    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, x: Var<'t, T>, mut rng: DropoutRng<'_>) -> Result<Var<'t, T>> {
        let a = self.attention_branch(p, x)?;
        let a = maybe_dropout(a, self.drop_rate, &mut rng)?;
        let x1 = x.add(a)?;
        let h = self.mlp.fc1.forward(p, self.norm2.forward(p, x1)?)?.gelu()?;
        let h = maybe_dropout(h, self.drop_rate, &mut rng)?;
        let h = self.mlp.fc2.forward(p, h)?;
        let h = maybe_dropout(h, self.drop_rate, &mut rng)?;
        x1.add(h)
    }
}

/// Splits an `[H, W, C]` image into non-overlapping patches and projects
/// each flattened patch (row-major, channel fastest) to the embedding width.
#[derive(Debug, Clone)]
pub struct PatchEmbed {
    pub proj: Linear,
    pub patch: usize,
}

impl PatchEmbed {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, patch: usize, channels: usize, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(PatchEmbed { proj: Linear::new(store, &format!("{name}.proj"), patch * patch * channels, dim, true, rng)?, patch })
    }

    /// Raw `[num_patches, patch²·C]` features before projection.
    pub fn patchify<'t, T: Real>(&self, image: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = image.shape();
        let p = self.patch;
        if shape.len() != 3 || shape[0] % p != 0 || shape[1] % p != 0 {
            return Err(crate::Error::Config(format!(
                "image {shape:?} is not an [H, W, C] grid divisible by patch {p}"
            )));
        }
        let (hp, wp, c) = (shape[0] / p, shape[1] / p, shape[2]);
        image
            .reshape(&[hp, p, wp, p, c])?
            .permute(&[0, 2, 1, 3, 4])?
            .reshape(&[hp * wp, p * p * c])
    }

    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, image: Var<'t, T>) -> Result<Var<'t, T>> {
        self.proj.forward(p, self.patchify(image)?)
    }
}

/// Concatenates each 2×2 group of tokens (4D channels), normalizes, and
/// reduces linearly to 2D.
#[derive(Debug, Clone)]
pub struct PatchMerging {
    pub norm: LayerNorm,
    pub reduction: Linear,
}

impl PatchMerging {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(PatchMerging {
            norm: LayerNorm::new(store, &format!("{name}.norm"), 4 * dim)?,
            reduction: Linear::new(store, &format!("{name}.reduction"), 4 * dim, 2 * dim, false, rng)?,
        })
    }

    /// The `[(G/2)², 4D]` concatenation, neighbours ordered (0,0), (1,0), (0,1), (1,1)
    /// as (row, column) offsets.
    pub fn gather<'t, T: Real>(x: Var<'t, T>, grid: usize) -> Result<Var<'t, T>> {
        if grid % 2 != 0 {
            return Err(crate::Error::Config(format!("cannot merge an odd {grid}×{grid} grid")));
        }
        let d = *x.shape().last().expect("non-empty");
        let h = grid / 2;
        x.reshape(&[h, 2, h, 2, d])?
            .permute(&[0, 2, 3, 1, 4])?
            .reshape(&[h * h, 4 * d])
    }

    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, x: Var<'t, T>, grid: usize) -> Result<Var<'t, T>> {
        let cat = Self::gather(x, grid)?;
        self.reduction.forward(p, self.norm.forward(p, cat)?)
    }
}
