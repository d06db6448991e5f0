//! Bilinear resampling with half-pixel centres (`align_corners = false`).

use crate::graph::Var;
use crate::tensor::Tensor;

/// Source taps `(i0, i1, frac)` for each output index.
fn taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

impl<'g> Var<'g> {
    /// Resizes the two trailing axes of `(B, C, H, W)` to `(out_h, out_w)`.
    pub fn resize_bilinear(self, out_h: usize, out_w: usize) -> Var<'g> {
        let xv = self.value();
        let (b, c, h, w) = xv.dims4();
        if (h, w) == (out_h, out_w) {
            return self;
        }
        let ty = taps(h, out_h);
        let tx = taps(w, out_w);
        let planes = b * c;
        let xd = xv.data();
        let mut out = vec![0.0; planes * out_h * out_w];
        for pl in 0..planes {
            let src = &xd[pl * h * w..(pl + 1) * h * w];
            let dst = &mut out[pl * out_h * out_w..(pl + 1) * out_h * out_w];
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let top = src[y0 * w + x0] * (1.0 - lx) + src[y0 * w + x1] * lx;
                    let bot = src[y1 * w + x0] * (1.0 - lx) + src[y1 * w + x1] * lx;
                    dst[oy * out_w + ox] = top * (1.0 - ly) + bot * ly;
                }
            }
        }
        let value = Tensor::from_parts(vec![b, c, out_h, out_w], out);
        self.graph.record(value, &[self], move |g, _| {
            let gd = g.data();
            let mut gx = vec![0.0; planes * h * w];
            for pl in 0..planes {
                let src = &gd[pl * out_h * out_w..(pl + 1) * out_h * out_w];
                let dst = &mut gx[pl * h * w..(pl + 1) * h * w];
                for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                    for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                        let go = src[oy * out_w + ox];
                        dst[y0 * w + x0] += go * (1.0 - ly) * (1.0 - lx);
                        dst[y0 * w + x1] += go * (1.0 - ly) * lx;
                        dst[y1 * w + x0] += go * ly * (1.0 - lx);
                        dst[y1 * w + x1] += go * ly * lx;
                    }
                }
            }
            vec![Some(Tensor::from_parts(vec![b, c, h, w], gx))]
        })
    }
}
