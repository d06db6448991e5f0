//! Patch-partition stem and four stages of VSS blocks.

use scd_autograd::Var;

use super::vss::VssBlock;
use crate::config::{check_input_size, ModelConfig};
use crate::error::{Result, ScdError};
use crate::nn::{Builder, Conv2d, Ctx, LayerNorm};

/// Stage outputs at strides 4, 8, 16 and 32.
#[derive(Clone, Copy, Debug)]
pub struct FeaturePyramid<'g> {
    pub stages: [Var<'g>; 4],
}

impl<'g> FeaturePyramid<'g> {
    pub fn stage(&self, i: usize) -> Var<'g> {
        self.stages[i]
    }
}

/// Stride of stage `i` (0-based) relative to the input.
pub fn stage_stride(i: usize) -> usize {
    4 << i
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub stem: Conv2d,
    pub stem_norm: LayerNorm,
    /// Downsampling into stages 2..4.
    pub downs: Vec<(Conv2d, LayerNorm)>,
    pub stages: Vec<Vec<VssBlock>>,
    pub channels: [usize; 4],
}

impl Encoder {
    pub fn new(b: &mut Builder<'_>, cfg: &ModelConfig) -> Self {
        let mut b = b.sub("encoder");
        let c = cfg.stage_channels;
        let stem = Conv2d::new(&mut b, "stem", 3, c[0], 4, 4, 0, true);
        let stem_norm = LayerNorm::new(&mut b, "stem_norm", c[0]);
        let downs = (1..4)
            .map(|i| {
                let conv = Conv2d::new(&mut b, &format!("down{i}"), c[i - 1], c[i], 2, 2, 0, true);
                let norm = LayerNorm::new(&mut b, &format!("down{i}_norm"), c[i]);
                (conv, norm)
            })
            .collect();
        let stages = (0..4)
            .map(|i| {
                (0..cfg.stage_depths[i])
                    .map(|j| VssBlock::new(&mut b, &format!("stage{}.{j}", i + 1), c[i], cfg.state_dim))
                    .collect()
            })
            .collect();
        Self {
            stem,
            stem_norm,
            downs,
            stages,
            channels: c,
        }
    }

    /// Stride-4 convolutional stem with layer normalisation: `(B,3,H,W)` to `(B,C1,H/4,W/4)`.
    pub fn patch_partition<'g>(&self, ctx: &Ctx<'g, '_>, image: Var<'g>) -> Result<Var<'g>> {
        let s = image.shape();
        if s.len() != 4 {
            return Err(ScdError::Dimension {
                axis: "rank",
                message: format!("image must be (B,3,H,W), got {s:?}"),
            });
        }
        if s[1] != 3 {
            return Err(ScdError::Dimension {
                axis: "channel",
                message: format!("image must have 3 channels, got {}", s[1]),
            });
        }
        check_input_size(s[2], s[3])?;
        Ok(self.stem_norm.forward(ctx, self.stem.forward(ctx, image)))
    }

    pub fn encode<'g>(&self, ctx: &Ctx<'g, '_>, image: Var<'g>) -> Result<FeaturePyramid<'g>> {
        let mut x = self.patch_partition(ctx, image)?;
        let mut outs = Vec::with_capacity(4);
        for (i, blocks) in self.stages.iter().enumerate() {
            if i > 0 {
                let (conv, norm) = &self.downs[i - 1];
                x = norm.forward(ctx, conv.forward(ctx, x));
            }
            for block in blocks {
                x = block.forward(ctx, x)?;
            }
            outs.push(x);
        }
        Ok(FeaturePyramid {
            stages: [outs[0], outs[1], outs[2], outs[3]],
        })
    }
}
