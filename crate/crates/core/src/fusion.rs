//! Spatio-frequency fusion of bi-temporal features: FFT log-amplitude and
//! absolute-difference branches, 1x1 compression and CBAM refinement.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use scd_autograd::{concat, CustomOp, Tensor, Var};

use crate::config::{Ablation, CBAM_REDUCTION};
use crate::error::{Result, ScdError};
use crate::nn::{Builder, Conv2d, Ctx, Linear};

/// In-place 2-D DFT over an `h x w` row-major buffer, scaled by `1/sqrt(h*w)`.
fn fft2_in_place(buf: &mut [Complex64], h: usize, w: usize, inverse: bool, planner: &mut FftPlanner<f64>) {
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    row.process(buf);
    let mut t = vec![Complex64::new(0.0, 0.0); h * w];
    for r in 0..h {
        for c in 0..w {
            t[c * h + r] = buf[r * w + c];
        }
    }
    col.process(&mut t);
    let scale = 1.0 / ((h * w) as f64).sqrt();
    for r in 0..h {
        for c in 0..w {
            buf[r * w + c] = t[c * h + r] * scale;
        }
    }
}

/// Unitary 2-D DFT of every `(b, c)` plane of a `(B, C, H, W)` tensor, unshifted.
pub fn fft2_unitary(x: &Tensor) -> Vec<Complex64> {
    let (b, c, h, w) = x.dims4();
    let mut planner = FftPlanner::new();
    let mut out: Vec<Complex64> = x.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    for plane in 0..b * c {
        fft2_in_place(&mut out[plane * h * w..(plane + 1) * h * w], h, w, false, &mut planner);
    }
    out
}

struct LogAmplitude;

impl CustomOp for LogAmplitude {
    fn forward(&self, inputs: &[&Tensor]) -> Tensor {
        let x = inputs[0];
        let f = fft2_unitary(x);
        Tensor::new(x.shape().to_vec(), f.iter().map(|z| z.norm().ln_1p()).collect())
            .expect("same shape")
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let (b, c, h, w) = x.dims4();
        let f = fft2_unitary(x);
        // d log(1+|F|) / dF* direction, then back through the unitary transform
        let mut buf: Vec<Complex64> = f
            .iter()
            .zip(g.data())
            .map(|(z, &gk)| {
                let m = z.norm();
                if m == 0.0 {
                    Complex64::new(0.0, 0.0)
                } else {
                    z * (gk / ((1.0 + m) * m))
                }
            })
            .collect();
        let mut planner = FftPlanner::new();
        for plane in 0..b * c {
            fft2_in_place(&mut buf[plane * h * w..(plane + 1) * h * w], h, w, true, &mut planner);
        }
        let gx = buf.iter().map(|z| z.re).collect();
        vec![Some(Tensor::new(x.shape().to_vec(), gx).expect("same shape"))]
    }
}

/// `log(1 + |F(u, v)|)` of the per-channel unitary 2-D DFT, DC at `(0, 0)`.
pub fn fft_log_amplitude<'g>(x: Var<'g>) -> Var<'g> {
    x.graph().custom(&[x], LogAmplitude)
}

pub fn abs_difference<'g>(a: Var<'g>, b: Var<'g>) -> Result<Var<'g>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(ScdError::Dimension {
            axis: "shape",
            message: format!("{sa:?} vs {sb:?}"),
        });
    }
    Ok(a.sub(b).abs())
}

/// Channel then spatial attention.
#[derive(Clone, Debug)]
pub struct Cbam {
    pub fc1: Linear,
    pub fc2: Linear,
    pub spatial: Conv2d,
    pub channels: usize,
}

impl Cbam {
    pub fn new(b: &mut Builder<'_>, name: &str, channels: usize) -> Result<Self> {
        if channels < CBAM_REDUCTION {
            return Err(ScdError::Config(format!(
                "CBAM needs at least {CBAM_REDUCTION} channels, got {channels}"
            )));
        }
        let hidden = channels / CBAM_REDUCTION;
        let mut b = b.sub(name);
        Ok(Self {
            fc1: Linear::new(&mut b, "fc1", channels, hidden, true),
            fc2: Linear::new(&mut b, "fc2", hidden, channels, true),
            spatial: Conv2d::same(&mut b, "spatial", 2, 1, 7, true),
            channels,
        })
    }

    /// Returns `(channel-refined, fully refined)` maps.
    pub fn forward_parts<'g>(&self, ctx: &Ctx<'g, '_>, x: Var<'g>) -> (Var<'g>, Var<'g>) {
        let mlp = |v: Var<'g>| self.fc2.forward(ctx, self.fc1.forward(ctx, v).relu());
        let avg = x.mean_axis(3).mean_axis(2);
        let max = x.max_axis(3).max_axis(2);
        let gate = mlp(avg).add(mlp(max)).sigmoid();
        let xc = x.mul(gate);
        let pooled = concat(&[xc.mean_axis(1), xc.max_axis(1)], 1);
        let mask = self.spatial.forward(ctx, pooled).sigmoid();
        (xc, xc.mul(mask))
    }

    pub fn forward<'g>(&self, ctx: &Ctx<'g, '_>, x: Var<'g>) -> Var<'g> {
        self.forward_parts(ctx, x).1
    }
}

/// Fusion block for one pyramid stage.
#[derive(Clone, Debug)]
pub struct Fusion {
    pub reduce: Conv2d,
    pub cbam: Cbam,
    pub channels: usize,
    pub use_fft_branch: bool,
    pub use_diff_branch: bool,
}

impl Fusion {
    pub fn new(b: &mut Builder<'_>, name: &str, channels: usize, ablation: &Ablation) -> Result<Self> {
        let mut b = b.sub(name);
        let width = channels * concat_factor(ablation);
        Ok(Self {
            reduce: Conv2d::new(&mut b, "reduce", width, channels, 1, 1, 0, true),
            cbam: Cbam::new(&mut b, "cbam", channels)?,
            channels,
            use_fft_branch: ablation.use_fft_branch,
            use_diff_branch: ablation.use_diff_branch,
        })
    }

    /// Fuses `x1`, `x2` (both `(B, C, h, w)`) into a `(B, C, h, w)` map.
    /// Intermediates are recorded under `name.*` when the context traces.
    pub fn fuse<'g>(&self, ctx: &Ctx<'g, '_>, name: &str, x1: Var<'g>, x2: Var<'g>) -> Result<Var<'g>> {
        let d = abs_difference(x1, x2)?;
        if x1.shape()[1] != self.channels {
            return Err(ScdError::Dimension {
                axis: "channel",
                message: format!("fusion built for {} channels, got {}", self.channels, x1.shape()[1]),
            });
        }
        let mut parts = vec![x1];
        if self.use_fft_branch {
            let f1 = fft_log_amplitude(x1);
            let f2 = fft_log_amplitude(x2);
            ctx.record(format!("{name}.f_t1"), f1);
            ctx.record(format!("{name}.f_t2"), f2);
            parts.extend([f1, x2, f2]);
        } else {
            parts.push(x2);
        }
        if self.use_diff_branch {
            ctx.record(format!("{name}.d"), d);
            parts.push(d);
        }
        let cat = concat(&parts, 1);
        let reduced = self.reduce.forward(ctx, cat);
        let (reduced_hat, fused) = self.cbam.forward_parts(ctx, reduced);
        ctx.record(format!("{name}.cat"), cat);
        ctx.record(format!("{name}.reduced"), reduced);
        ctx.record(format!("{name}.reduced_hat"), reduced_hat);
        ctx.record(format!("{name}.fused"), fused);
        Ok(fused)
    }
}

/// Concatenation width as a multiple of the stage channel count.
pub fn concat_factor(ablation: &Ablation) -> usize {
    2 + 2 * ablation.use_fft_branch as usize + ablation.use_diff_branch as usize
}
