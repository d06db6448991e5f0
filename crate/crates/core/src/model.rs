//! The full network: shared encoder, binary change decoder, two semantic decoders.

use scd_autograd::{ParamStore, Var};

use crate::backbone::{Encoder, FeaturePyramid};
use crate::config::ModelConfig;
use crate::decoder::{BcdDecoder, ScdDecoder};
use crate::error::Result;
use crate::nn::{Builder, Ctx};

#[derive(Clone, Copy, Debug)]
pub struct ModelOutput<'g> {
    /// `(B, 2, H, W)` change logits.
    pub bcd: Var<'g>,
    pub change_maps: [Var<'g>; 4],
    /// `(B, N, H, W)` semantic logits at each timestamp.
    pub sem_t1: Var<'g>,
    pub sem_t2: Var<'g>,
}

#[derive(Clone, Debug)]
pub struct ScdModel {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub bcd: BcdDecoder,
    pub scd_t1: ScdDecoder,
    pub scd_t2: ScdDecoder,
}

impl ScdModel {
    /// Builds the network and registers freshly initialised parameters.
    pub fn new(config: &ModelConfig) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let model = Self::register(config, &mut store)?;
        Ok((model, store))
    }

    /// Registers parameters into an existing store (used when restoring).
    pub fn register(config: &ModelConfig, store: &mut ParamStore) -> Result<Self> {
        let mut b = Builder::new(store, config.seed);
        Ok(Self {
            config: config.clone(),
            encoder: Encoder::new(&mut b, config),
            bcd: BcdDecoder::new(&mut b, config)?,
            scd_t1: ScdDecoder::new(&mut b, "scd_t1", config)?,
            scd_t2: ScdDecoder::new(&mut b, "scd_t2", config)?,
        })
    }

    pub fn encode<'g>(&self, ctx: &Ctx<'g, '_>, image: Var<'g>) -> Result<FeaturePyramid<'g>> {
        self.encoder.encode(ctx, image)
    }

    /// `img1`, `img2`: `(B, 3, H, W)` in `[0, 1]`.
    pub fn forward<'g>(&self, ctx: &Ctx<'g, '_>, img1: Var<'g>, img2: Var<'g>) -> Result<ModelOutput<'g>> {
        let p1 = self.encode(ctx, img1)?;
        let p2 = self.encode(ctx, img2)?;
        let bcd = self.bcd.decode(ctx, &p1, &p2)?;
        let sem_t1 = self.scd_t1.decode(ctx, &p1, &bcd.change_maps)?;
        let sem_t2 = self.scd_t2.decode(ctx, &p2, &bcd.change_maps)?;
        Ok(ModelOutput {
            bcd: bcd.logits,
            change_maps: bcd.change_maps,
            sem_t1,
            sem_t2,
        })
    }
}
