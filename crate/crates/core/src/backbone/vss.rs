//! Visual state-space block: norm, gated 2-D selective scan, residual.

use rand::Rng;
use scd_autograd::{ParamId, Var};

use super::scan::{cross_merge, cross_scan, selective_scan, DIRECTIONS};
use crate::error::Result;
use crate::nn::{fan_in_bound, Builder, Ctx, Init, LayerNorm, Linear};

/// Per-direction SSM parameters.
#[derive(Clone, Debug)]
pub struct Direction {
    pub x_proj: Linear,
    pub dt_proj: Linear,
    pub a_log: ParamId,
    pub d: ParamId,
}

#[derive(Clone, Debug)]
pub struct VssBlock {
    pub norm: LayerNorm,
    pub in_proj: Linear,
    pub conv_weight: ParamId,
    pub conv_bias: ParamId,
    pub directions: Vec<Direction>,
    pub out_norm: LayerNorm,
    pub out_proj: Linear,
    pub channels: usize,
    pub inner: usize,
    pub state_dim: usize,
    pub dt_rank: usize,
}

/// Inverse of softplus, used to place the initial step size inside a range.
fn inv_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl VssBlock {
    pub fn new(b: &mut Builder<'_>, name: &str, channels: usize, state_dim: usize) -> Self {
        let mut b = b.sub(name);
        let inner = channels;
        let dt_rank = channels.div_ceil(16);
        let norm = LayerNorm::new(&mut b, "norm", channels);
        let in_proj = Linear::new(&mut b, "in_proj", channels, 2 * inner, false);
        let conv_weight = b.param("conv.weight", &[inner, 1, 3, 3], Init::Uniform(fan_in_bound(9)));
        let conv_bias = b.param("conv.bias", &[inner], Init::Zeros);
        let directions = (0..DIRECTIONS)
            .map(|k| {
                let mut db = b.sub(&format!("dir{k}"));
                let x_proj = Linear::new(&mut db, "x_proj", inner, dt_rank + 2 * state_dim, false);
                let dt_proj = Linear::with_init(
                    &mut db,
                    "dt_proj",
                    dt_rank,
                    inner,
                    false,
                    Init::Uniform((dt_rank as f64).powf(-0.5)),
                );
                let mut rng = db.rng("dt_bias");
                let (lo, hi) = (1e-3f64.ln(), 1e-1f64.ln());
                let bias: Vec<f64> = (0..inner)
                    .map(|_| inv_softplus(rng.random_range(lo..hi).exp()))
                    .collect();
                let dt_bias = db.param("dt_bias", &[inner], Init::Values(bias));
                let a_log: Vec<f64> = (0..inner)
                    .flat_map(|_| (1..=state_dim).map(|s| (s as f64).ln()))
                    .collect();
                let a_log = db.param("a_log", &[inner, state_dim], Init::Values(a_log));
                let d = db.param("d", &[inner], Init::Const(1.0));
                Direction {
                    x_proj,
                    dt_proj: Linear {
                        bias: Some(dt_bias),
                        ..dt_proj
                    },
                    a_log,
                    d,
                }
            })
            .collect();
        let out_norm = LayerNorm::new(&mut b, "out_norm", inner);
        let out_proj = Linear::new(&mut b, "out_proj", inner, channels, false);
        Self {
            norm,
            in_proj,
            conv_weight,
            conv_bias,
            directions,
            out_norm,
            out_proj,
            channels,
            inner,
            state_dim,
            dt_rank,
        }
    }

    /// Shape-preserving on `(B, C, H, W)`.
    pub fn forward<'g>(&self, ctx: &Ctx<'g, '_>, x: Var<'g>) -> Result<Var<'g>> {
        let shape = x.shape();
        let (h, w) = (shape[2], shape[3]);
        let (e, r, s) = (self.inner, self.dt_rank, self.state_dim);
        let xz = self.in_proj.forward(ctx, self.norm.forward(ctx, x));
        let z = xz.narrow(1, e, e);
        let u = xz
            .narrow(1, 0, e)
            .depthwise_conv2d(ctx.param(self.conv_weight), Some(ctx.param(self.conv_bias)), 1)
            .silu();
        let mut ys = Vec::with_capacity(DIRECTIONS);
        for (seq, dir) in cross_scan(u).into_iter().zip(&self.directions) {
            let proj = dir.x_proj.forward(ctx, seq);
            let delta = dir.dt_proj.forward(ctx, proj.narrow(1, 0, r)).softplus();
            let bm = proj.narrow(1, r, s);
            let cm = proj.narrow(1, r + s, s);
            let a = ctx.param(dir.a_log).exp().neg();
            ys.push(selective_scan(seq, delta, a, bm, cm, ctx.param(dir.d))?);
        }
        let y = self.out_norm.forward(ctx, cross_merge(&ys, h, w)).mul(z.silu());
        Ok(x.add(self.out_proj.forward(ctx, y)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use scd_autograd::{Graph, ParamStore, Tensor};

    fn input(shape: [usize; 4], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_output_projection_is_identity() {
        let mut store = ParamStore::new();
        let block = VssBlock::new(&mut Builder::new(&mut store, 1), "blk", 8, 4);
        let n = store.get(block.out_proj.weight).numel();
        store.set(block.out_proj.weight, Tensor::zeros([8, n / 8]));
        let g = Graph::new();
        let ctx = Ctx::new(&g, &store, Mode::Eval);
        let x = ctx.constant(input([1, 8, 16, 16], 2));
        let y = block.forward(&ctx, x).unwrap();
        assert_eq!(y.value().data(), x.value().data());
    }

    #[test]
    fn shape_preserved_and_stacking_changes_output() {
        let mut store = ParamStore::new();
        let mut b = Builder::new(&mut store, 4);
        let b1 = VssBlock::new(&mut b, "b1", 8, 4);
        let b2 = VssBlock::new(&mut b, "b2", 8, 4);
        let g = Graph::new();
        let ctx = Ctx::new(&g, &store, Mode::Eval);
        let x = ctx.constant(input([1, 8, 16, 16], 3));
        let one = b1.forward(&ctx, x).unwrap();
        let two = b2.forward(&ctx, one).unwrap();
        assert_eq!(one.shape(), vec![1, 8, 16, 16]);
        assert!(one.value().all_finite());
        assert!(one.value().max_abs_diff(&two.value()) > 0.0);
    }

    #[test]
    fn initial_step_sizes_in_range() {
        let mut store = ParamStore::new();
        let block = VssBlock::new(&mut Builder::new(&mut store, 0), "blk", 16, 4);
        for dir in &block.directions {
            let bias = store.get(dir.dt_proj.bias.unwrap());
            for &v in bias.data() {
                let dt = scd_autograd::softplus(v);
                assert!((1e-3..=1e-1 + 1e-12).contains(&dt), "{dt}");
            }
        }
    }
}
