//! Top-down decoders: the binary change decoder and the two change-guided
//! semantic decoders.

use scd_autograd::{concat, Var};

use crate::backbone::{FeaturePyramid, VssBlock};
use crate::config::ModelConfig;
use crate::error::{Result, ScdError};
use crate::fusion::{Cbam, Fusion};
use crate::nn::{BatchNorm2d, Builder, Conv2d, Ctx};

/// Multi-kernel refinement with CBAM followed by projection and bilinear resize.
#[derive(Clone, Debug)]
pub struct CbamUpsample {
    pub branches: Vec<(Conv2d, BatchNorm2d)>,
    pub cbam: Cbam,
    pub proj: Conv2d,
    pub shortcut: Conv2d,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl CbamUpsample {
    pub fn new(b: &mut Builder<'_>, name: &str, cin: usize, cout: usize) -> Result<Self> {
        let mut b = b.sub(name);
        let branches = [1, 3, 5]
            .into_iter()
            .map(|k| {
                let conv = Conv2d::same(&mut b, &format!("conv{k}"), cin, cin, k, false);
                let bn = BatchNorm2d::new(&mut b, &format!("bn{k}"), cin);
                (conv, bn)
            })
            .collect();
        Ok(Self {
            branches,
            cbam: Cbam::new(&mut b, "cbam", 3 * cin)?,
            proj: Conv2d::new(&mut b, "proj", 3 * cin, cout, 1, 1, 0, true),
            shortcut: Conv2d::new(&mut b, "shortcut", cin, cout, 1, 1, 0, true),
            in_channels: cin,
            out_channels: cout,
        })
    }

    /// `(B, C, h, w)` to `(B, C', th, tw)`; the target must not be smaller.
    pub fn forward<'g>(&self, ctx: &Ctx<'g, '_>, x: Var<'g>, th: usize, tw: usize) -> Result<Var<'g>> {
        let s = x.shape();
        if th < s[2] || tw < s[3] {
            return Err(ScdError::Contract(format!(
                "upsample target {th}x{tw} smaller than source {}x{}",
                s[2], s[3]
            )));
        }
        let parts: Vec<Var<'g>> = self
            .branches
            .iter()
            .map(|(conv, bn)| bn.forward(ctx, conv.forward(ctx, x)))
            .collect();
        let refined = self.cbam.forward(ctx, concat(&parts, 1));
        let y = self.proj.forward(ctx, refined).add(self.shortcut.forward(ctx, x));
        Ok(y.resize_bilinear(th, tw))
    }
}

/// Bilinear x4, 3x3 conv, batch norm, ReLU, 1x1 classifier.
#[derive(Clone, Debug)]
pub struct Head {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
    pub classifier: Conv2d,
}

impl Head {
    pub fn new(b: &mut Builder<'_>, name: &str, channels: usize, classes: usize) -> Self {
        let mut b = b.sub(name);
        Self {
            conv: Conv2d::same(&mut b, "conv", channels, channels, 3, false),
            bn: BatchNorm2d::new(&mut b, "bn", channels),
            classifier: Conv2d::new(&mut b, "classifier", channels, classes, 1, 1, 0, true),
        }
    }

    pub fn forward<'g>(&self, ctx: &Ctx<'g, '_>, x: Var<'g>) -> Var<'g> {
        let s = x.shape();
        let up = x.resize_bilinear(4 * s[2], 4 * s[3]);
        let h = self.bn.forward(ctx, self.conv.forward(ctx, up)).relu();
        self.classifier.forward(ctx, h)
    }
}

/// Per-stage VSS block and upsampling unit shared by both decoder kinds.
#[derive(Clone, Debug)]
struct Stages {
    vss: Vec<VssBlock>,
    ups: Vec<CbamUpsample>,
}

impl Stages {
    fn new(b: &mut Builder<'_>, cfg: &ModelConfig) -> Result<Self> {
        let c = cfg.stage_channels;
        let vss = (0..4)
            .map(|i| VssBlock::new(b, &format!("stage{}.vss", i + 1), c[i], cfg.state_dim))
            .collect();
        let ups = (0..4)
            .map(|i| {
                let cout = if i == 0 { c[0] } else { c[i - 1] };
                CbamUpsample::new(b, &format!("stage{}.up", i + 1), c[i], cout)
            })
            .collect::<Result<_>>()?;
        Ok(Self { vss, ups })
    }

    /// Adds the carry, runs the stage's VSS block and upsamples towards the
    /// next (finer) stage. Returns `(vss output, new carry)`.
    fn step<'g>(
        &self,
        ctx: &Ctx<'g, '_>,
        i: usize,
        x: Var<'g>,
        carry: Option<Var<'g>>,
        pyr: &FeaturePyramid<'g>,
    ) -> Result<(Var<'g>, Var<'g>)> {
        let x = match carry {
            Some(c) => {
                if c.shape() != x.shape() {
                    return Err(ScdError::Dimension {
                        axis: "carry",
                        message: format!("stage {} carry {:?} vs feature {:?}", i + 1, c.shape(), x.shape()),
                    });
                }
                x.add(c)
            }
            None => x,
        };
        let y = self.vss[i].forward(ctx, x)?;
        let target = pyr.stage(i.saturating_sub(1)).shape();
        let up = self.ups[i].forward(ctx, y, target[2], target[3])?;
        Ok((y, up))
    }
}

fn check_pyramid(cfg: &ModelConfig, pyr: &FeaturePyramid<'_>) -> Result<()> {
    let base = pyr.stage(0).shape();
    for i in 0..4 {
        let s = pyr.stage(i).shape();
        let ok = s.len() == 4
            && s[1] == cfg.stage_channels[i]
            && s[2] * (1 << i) == base[2]
            && s[3] * (1 << i) == base[3];
        if !ok {
            return Err(ScdError::Dimension {
                axis: "pyramid",
                message: format!("stage {} has shape {s:?}", i + 1),
            });
        }
    }
    Ok(())
}

/// Binary change logits and the per-stage change maps.
#[derive(Clone, Copy, Debug)]
pub struct BcdOutput<'g> {
    pub logits: Var<'g>,
    pub change_maps: [Var<'g>; 4],
}

#[derive(Clone, Debug)]
pub struct BcdDecoder {
    pub fusions: Vec<Fusion>,
    stages: Stages,
    pub head: Head,
    cfg: ModelConfig,
}

impl BcdDecoder {
    pub fn new(b: &mut Builder<'_>, cfg: &ModelConfig) -> Result<Self> {
        let mut b = b.sub("bcd");
        let fusions = (0..4)
            .map(|i| Fusion::new(&mut b, &format!("stage{}.fuse", i + 1), cfg.stage_channels[i], &cfg.ablation))
            .collect::<Result<_>>()?;
        let stages = Stages::new(&mut b, cfg)?;
        let head = Head::new(&mut b, "head", cfg.stage_channels[0], 2);
        Ok(Self {
            fusions,
            stages,
            head,
            cfg: cfg.clone(),
        })
    }

    pub fn decode<'g>(
        &self,
        ctx: &Ctx<'g, '_>,
        pyr1: &FeaturePyramid<'g>,
        pyr2: &FeaturePyramid<'g>,
    ) -> Result<BcdOutput<'g>> {
        check_pyramid(&self.cfg, pyr1)?;
        check_pyramid(&self.cfg, pyr2)?;
        let mut carry = None;
        let mut cms = Vec::with_capacity(4);
        for i in (0..4).rev() {
            let name = format!("bcd.stage{}.fuse", i + 1);
            let fused = self.fusions[i].fuse(ctx, &name, pyr1.stage(i), pyr2.stage(i))?;
            let (cm, up) = self.stages.step(ctx, i, fused, carry, pyr1)?;
            ctx.record(format!("bcd.cm{}", i + 1), cm);
            cms.push(cm);
            carry = Some(up);
        }
        cms.reverse();
        let logits = self.head.forward(ctx, carry.expect("four stages"));
        Ok(BcdOutput {
            logits,
            change_maps: [cms[0], cms[1], cms[2], cms[3]],
        })
    }
}

/// `x * sigmoid(cm)`.
pub fn change_guided_attention<'g>(x: Var<'g>, cm: Var<'g>) -> Result<Var<'g>> {
    if x.shape() != cm.shape() {
        return Err(ScdError::Dimension {
            axis: "shape",
            message: format!("feature {:?} vs change map {:?}", x.shape(), cm.shape()),
        });
    }
    Ok(x.mul(cm.sigmoid()))
}

#[derive(Clone, Debug)]
pub struct ScdDecoder {
    stages: Stages,
    pub head: Head,
    pub name: String,
    use_cga: bool,
    cfg: ModelConfig,
}

impl ScdDecoder {
    /// `name` is the parameter prefix, e.g. `scd_t1`.
    pub fn new(b: &mut Builder<'_>, name: &str, cfg: &ModelConfig) -> Result<Self> {
        let mut b = b.sub(name);
        let stages = Stages::new(&mut b, cfg)?;
        let head = Head::new(&mut b, "head", cfg.stage_channels[0], cfg.num_classes);
        Ok(Self {
            stages,
            head,
            name: name.to_string(),
            use_cga: cfg.ablation.use_cga,
            cfg: cfg.clone(),
        })
    }

    pub fn decode<'g>(
        &self,
        ctx: &Ctx<'g, '_>,
        pyr: &FeaturePyramid<'g>,
        cms: &[Var<'g>; 4],
    ) -> Result<Var<'g>> {
        check_pyramid(&self.cfg, pyr)?;
        let mut carry = None;
        for i in (0..4).rev() {
            let x = if self.use_cga {
                change_guided_attention(pyr.stage(i), cms[i])?
            } else {
                pyr.stage(i)
            };
            ctx.record(format!("{}.stage{}.cga", self.name, i + 1), x);
            let (_, up) = self.stages.step(ctx, i, x, carry, pyr)?;
            carry = Some(up);
        }
        Ok(self.head.forward(ctx, carry.expect("four stages")))
    }
}
