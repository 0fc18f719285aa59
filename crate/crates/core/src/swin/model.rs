use rand::Rng;

use super::config::{StagePlan, SwinConfig};
use super::layers::{DropoutRng, LayerNorm, Linear, PatchEmbed, PatchMerging, SwinBlock};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::se::SeGate;
use crate::tensor::{Real, Tensor, Var};

#[derive(Debug, Clone)]
pub struct Stage {
    pub plan: StagePlan,
    pub blocks: Vec<SwinBlock>,
    /// Merge applied after this stage (absent for the last one).
    pub merge: Option<PatchMerging>,
}

/// Grid side and channel width of a stage's output, as observed in a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageTrace {
    pub grid: usize,
    pub tokens: usize,
    pub dim: usize,
}

pub struct ForwardOutput<'t, T: Real> {
    /// `[num_classes]`.
    pub logits: Var<'t, T>,
    /// Mean-pooled final-stage features `[8C]`, before the gate.
    pub pooled: Var<'t, T>,
    pub trace: Vec<StageTrace>,
}

/// Shifted-window hierarchical transformer with an optional excitation
/// gate in front of the classifier.
#[derive(Debug, Clone)]
pub struct SwinModel<T: Real> {
    config: SwinConfig,
    pub params: ParamStore<T>,
    pub embed: PatchEmbed,
    pub stages: Vec<Stage>,
    pub norm: LayerNorm,
    pub se: Option<SeGate>,
    pub head: Linear,
}

impl<T: Real> SwinModel<T> {
    /// Builds the model with freshly initialized parameters.
    pub fn new(config: SwinConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let embed = PatchEmbed::new(&mut store, "patch_embed", config.patch_size, config.in_channels, config.embed_dim, rng)?;
        let plans = config.stages();
        let mut stages = Vec::with_capacity(plans.len());
        for plan in &plans {
            let prefix = format!("stages.{}", plan.index);
            let blocks = (0..plan.depth)
                .map(|b| {
                    let mut block = SwinBlock::new(
                        &mut store,
                        &format!("{prefix}.blocks.{b}"),
                        plan.dim,
                        plan.heads,
                        plan.grid,
                        plan.window,
                        plan.block_shift(b),
                        config.mlp_ratio,
                        rng,
                    )?;
                    block.drop_rate = config.drop_rate;
                    Ok(block)
                })
                .collect::<Result<Vec<_>>>()?;
            let merge = if plan.index + 1 < plans.len() {
                Some(PatchMerging::new(&mut store, &format!("{prefix}.merge"), plan.dim, rng)?)
            } else {
                None
            };
            stages.push(Stage { plan: *plan, blocks, merge });
        }
        let final_dim = config.final_dim();
        let norm = LayerNorm::new(&mut store, "norm", final_dim)?;
        let se = if config.use_se {
            Some(SeGate::new(&mut store, "se", final_dim, config.se_reduction, rng)?)
        } else {
            None
        };
        let head = Linear::new(&mut store, "head", final_dim, config.num_classes, true, rng)?;
        Ok(SwinModel { config, params: store, embed, stages, norm, se, head })
    }

    pub fn config(&self) -> &SwinConfig {
        &self.config
    }

    /// Replaces all parameter values by name. The name set and every shape
    /// must match this architecture exactly.
    pub fn load_named(&mut self, named: Vec<(String, Tensor<T>)>) -> Result<()> {
        if named.len() != self.params.len() {
            return Err(Error::Config(format!(
                "architecture has {} parameters, got {}",
                self.params.len(),
                named.len()
            )));
        }
        let mut values: Vec<Option<Tensor<T>>> = vec![None; self.params.len()];
        for (name, t) in named {
            let id = self
                .params
                .id_of(&name)
                .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))?;
            if self.params.get(id).value.shape() != t.shape() {
                return Err(Error::Config(format!(
                    "parameter {name} has shape {:?}, architecture expects {:?}",
                    t.shape(),
                    self.params.get(id).value.shape()
                )));
            }
            values[id.index()] = Some(t);
        }
        let values = values.into_iter().map(|v| v.expect("count and names checked")).collect();
        self.params.set_values(values)
    }

    /// Image `[H, W, C]` to logits. Pass a dropout generator for training
    /// mode, `None` for evaluation.
    pub fn forward<'t>(
        &self,
        p: &Bound<'t, T>,
        image: Var<'t, T>,
        mut rng: DropoutRng<'_>,
    ) -> Result<ForwardOutput<'t, T>> {
        let c = &self.config;
        let shape = image.shape();
        if shape != [c.image_size, c.image_size, c.in_channels] {
            return Err(Error::Config(format!(
                "image {shape:?} does not match configured [{0}, {0}, {1}]",
                c.image_size, c.in_channels
            )));
        }
        let mut x = self.embed.forward(p, image)?;
        let mut trace = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            for block in &stage.blocks {
                x = block.forward(p, x, rng.as_deref_mut())?;
            }
            trace.push(StageTrace { grid: stage.plan.grid, tokens: x.shape()[0], dim: x.shape()[1] });
            if let Some(merge) = &stage.merge {
                x = merge.forward(p, x, stage.plan.grid)?;
            }
        }
        let pooled = self.norm.forward(p, x)?.mean(0)?;
        let features = match &self.se {
            Some(se) => se.excite(p, pooled)?,
            None => pooled,
        };
        let logits = self
            .head
            .forward(p, features.reshape(&[1, c.final_dim()])?)?
            .reshape(&[c.num_classes])?;
        Ok(ForwardOutput { logits, pooled, trace })
    }
}
