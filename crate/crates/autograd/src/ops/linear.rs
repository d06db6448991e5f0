//! Channel mixing, dense 2-D convolution (im2col + GEMM) and depthwise convolution.

use crate::gemm::{gemm, Layout};
use crate::graph::Var;
use crate::tensor::Tensor;

/// Geometry of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dSpec {
    pub const fn new(stride: usize, padding: usize) -> Self {
        Self { stride, padding }
    }

    pub fn output_size(&self, input: usize, kernel: usize) -> usize {
        assert!(
            input + 2 * self.padding >= kernel,
            "kernel {kernel} larger than padded input {input}+2*{}",
            self.padding
        );
        (input + 2 * self.padding - kernel) / self.stride + 1
    }
}

fn parents_with_bias<'g>(x: Var<'g>, w: Var<'g>, bias: Option<Var<'g>>) -> Vec<Var<'g>> {
    let mut p = vec![x, w];
    p.extend(bias);
    p
}

fn add_bias(out: &mut [f64], bias: &[f64], batch: usize, positions: usize) {
    let cout = bias.len();
    for b in 0..batch {
        for (o, &bv) in bias.iter().enumerate() {
            let base = (b * cout + o) * positions;
            for v in &mut out[base..base + positions] {
                *v += bv;
            }
        }
    }
}

fn bias_grad(g: &[f64], batch: usize, cout: usize, positions: usize) -> Tensor {
    let mut gb = vec![0.0; cout];
    for b in 0..batch {
        for (o, acc) in gb.iter_mut().enumerate() {
            let base = (b * cout + o) * positions;
            *acc += g[base..base + positions].iter().sum::<f64>();
        }
    }
    Tensor::from_parts(vec![cout], gb)
}

impl<'g> Var<'g> {
    /// Per-position channel mixing: `x` is `(B, Cin, ...)`, `w` is `(Cout, Cin)`,
    /// optional `bias` is `(Cout,)`. Equivalent to a 1×1 convolution.
    pub fn linear(self, w: Var<'g>, bias: Option<Var<'g>>) -> Var<'g> {
        let xv = self.value();
        let wv = w.value();
        let bv = bias.map(|b| b.value());
        let xs = xv.shape().to_vec();
        assert!(xs.len() >= 2, "linear expects (B, C, ...), got {xs:?}");
        let (batch, cin) = (xs[0], xs[1]);
        let positions: usize = xs[2..].iter().product();
        assert_eq!(wv.rank(), 2, "linear weight must be (Cout, Cin)");
        let cout = wv.shape()[0];
        assert_eq!(wv.shape()[1], cin, "linear weight {:?} vs input channels {cin}", wv.shape());
        if let Some(b) = &bv {
            assert_eq!(b.shape(), &[cout], "linear bias shape");
        }
        let mut out = vec![0.0; batch * cout * positions];
        for b in 0..batch {
            gemm(
                cout,
                cin,
                positions,
                wv.data(),
                Layout::Normal,
                &xv.data()[b * cin * positions..(b + 1) * cin * positions],
                Layout::Normal,
                &mut out[b * cout * positions..(b + 1) * cout * positions],
                false,
            );
        }
        if let Some(b) = &bv {
            add_bias(&mut out, b.data(), batch, positions);
        }
        let mut out_shape = xs.clone();
        out_shape[1] = cout;
        let value = Tensor::from_parts(out_shape, out);
        let parents = parents_with_bias(self, w, bias);
        self.graph.record(value, &parents, move |g, needs| {
            let gd = g.data();
            let gx = needs[0].then(|| {
                let mut gx = vec![0.0; batch * cin * positions];
                for b in 0..batch {
                    gemm(
                        cin,
                        cout,
                        positions,
                        wv.data(),
                        Layout::Transposed,
                        &gd[b * cout * positions..(b + 1) * cout * positions],
                        Layout::Normal,
                        &mut gx[b * cin * positions..(b + 1) * cin * positions],
                        false,
                    );
                }
                Tensor::from_parts(xs.clone(), gx)
            });
            let gw = needs[1].then(|| {
                let mut gw = vec![0.0; cout * cin];
                for b in 0..batch {
                    gemm(
                        cout,
                        positions,
                        cin,
                        &gd[b * cout * positions..(b + 1) * cout * positions],
                        Layout::Normal,
                        &xv.data()[b * cin * positions..(b + 1) * cin * positions],
                        Layout::Transposed,
                        &mut gw,
                        true,
                    );
                }
                Tensor::from_parts(vec![cout, cin], gw)
            });
            let mut grads = vec![gx, gw];
            if needs.len() > 2 {
                grads.push(needs[2].then(|| bias_grad(gd, batch, cout, positions)));
            }
            grads
        })
    }

    /// Dense 2-D convolution. `x` is `(B, I, H, W)`, `w` is `(O, I, kh, kw)`.
    pub fn conv2d(self, w: Var<'g>, bias: Option<Var<'g>>, spec: Conv2dSpec) -> Var<'g> {
        let wshape = w.value().shape().to_vec();
        assert_eq!(wshape.len(), 4, "conv2d weight must be (O, I, kh, kw)");
        if wshape[2] == 1 && wshape[3] == 1 && spec.stride == 1 && spec.padding == 0 {
            let w2 = w.reshape(vec![wshape[0], wshape[1]]);
            return self.linear(w2, bias);
        }
        let xv = self.value();
        let wv = w.value();
        let bv = bias.map(|b| b.value());
        let (batch, cin, h, wd) = xv.dims4();
        let (cout, wcin, kh, kw) = wv.dims4();
        assert_eq!(cin, wcin, "conv2d input channels {cin} vs weight {wcin}");
        let ho = spec.output_size(h, kh);
        let wo = spec.output_size(wd, kw);
        let k = cin * kh * kw;
        let n = ho * wo;
        let geom = Im2Col {
            cin,
            h,
            w: wd,
            kh,
            kw,
            ho,
            wo,
            stride: spec.stride,
            pad: spec.padding,
        };
        let mut cols = vec![0.0; k * n];
        let mut out = vec![0.0; batch * cout * n];
        for b in 0..batch {
            geom.im2col(&xv.data()[b * cin * h * wd..(b + 1) * cin * h * wd], &mut cols);
            gemm(
                cout,
                k,
                n,
                wv.data(),
                Layout::Normal,
                &cols,
                Layout::Normal,
                &mut out[b * cout * n..(b + 1) * cout * n],
                false,
            );
        }
        if let Some(b) = &bv {
            add_bias(&mut out, b.data(), batch, n);
        }
        let value = Tensor::from_parts(vec![batch, cout, ho, wo], out);
        let parents = parents_with_bias(self, w, bias);
        self.graph.record(value, &parents, move |g, needs| {
            let gd = g.data();
            let mut cols = vec![0.0; k * n];
            let mut gcols = vec![0.0; k * n];
            let mut gx = needs[0].then(|| vec![0.0; batch * cin * h * wd]);
            let mut gw = needs[1].then(|| vec![0.0; cout * k]);
            for b in 0..batch {
                let gb = &gd[b * cout * n..(b + 1) * cout * n];
                if let Some(gw) = gw.as_mut() {
                    geom.im2col(&xv.data()[b * cin * h * wd..(b + 1) * cin * h * wd], &mut cols);
                    gemm(cout, n, k, gb, Layout::Normal, &cols, Layout::Transposed, gw, true);
                }
                if let Some(gx) = gx.as_mut() {
                    gemm(
                        k,
                        cout,
                        n,
                        wv.data(),
                        Layout::Transposed,
                        gb,
                        Layout::Normal,
                        &mut gcols,
                        false,
                    );
                    geom.col2im(&gcols, &mut gx[b * cin * h * wd..(b + 1) * cin * h * wd]);
                }
            }
            let mut grads = vec![
                gx.map(|v| Tensor::from_parts(vec![batch, cin, h, wd], v)),
                gw.map(|v| Tensor::from_parts(vec![cout, cin, kh, kw], v)),
            ];
            if needs.len() > 2 {
                grads.push(needs[2].then(|| bias_grad(gd, batch, cout, n)));
            }
            grads
        })
    }

    /// Depthwise 2-D convolution with stride 1: `w` is `(C, 1, k, k)`.
    pub fn depthwise_conv2d(self, w: Var<'g>, bias: Option<Var<'g>>, padding: usize) -> Var<'g> {
        let xv = self.value();
        let wv = w.value();
        let bv = bias.map(|b| b.value());
        let (batch, c, h, wd) = xv.dims4();
        let (wc, one, kh, kw) = wv.dims4();
        assert!(wc == c && one == 1, "depthwise weight {:?} for {c} channels", wv.shape());
        let spec = Conv2dSpec::new(1, padding);
        let ho = spec.output_size(h, kh);
        let wo = spec.output_size(wd, kw);
        let geom = Depthwise {
            h,
            w: wd,
            kh,
            kw,
            ho,
            wo,
            pad: padding as isize,
        };
        let mut out = vec![0.0; batch * c * ho * wo];
        let xd = xv.data();
        for bc in 0..batch * c {
            let ch = bc % c;
            geom.forward(
                &xd[bc * h * wd..(bc + 1) * h * wd],
                &wv.data()[ch * kh * kw..(ch + 1) * kh * kw],
                &mut out[bc * ho * wo..(bc + 1) * ho * wo],
            );
        }
        if let Some(b) = &bv {
            add_bias(&mut out, b.data(), batch, ho * wo);
        }
        let value = Tensor::from_parts(vec![batch, c, ho, wo], out);
        let parents = parents_with_bias(self, w, bias);
        self.graph.record(value, &parents, move |g, needs| {
            let gd = g.data();
            let xd = xv.data();
            let mut gx = needs[0].then(|| vec![0.0; batch * c * h * wd]);
            let mut gw = needs[1].then(|| vec![0.0; c * kh * kw]);
            for bc in 0..batch * c {
                let ch = bc % c;
                let go = &gd[bc * ho * wo..(bc + 1) * ho * wo];
                if let Some(gx) = gx.as_mut() {
                    geom.grad_input(
                        go,
                        &wv.data()[ch * kh * kw..(ch + 1) * kh * kw],
                        &mut gx[bc * h * wd..(bc + 1) * h * wd],
                    );
                }
                if let Some(gw) = gw.as_mut() {
                    geom.grad_weight(
                        go,
                        &xd[bc * h * wd..(bc + 1) * h * wd],
                        &mut gw[ch * kh * kw..(ch + 1) * kh * kw],
                    );
                }
            }
            let mut grads = vec![
                gx.map(|v| Tensor::from_parts(vec![batch, c, h, wd], v)),
                gw.map(|v| Tensor::from_parts(vec![c, 1, kh, kw], v)),
            ];
            if needs.len() > 2 {
                grads.push(needs[2].then(|| bias_grad(gd, batch, c, ho * wo)));
            }
            grads
        })
    }
}

#[derive(Clone, Copy)]
struct Im2Col {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl Im2Col {
    /// Output columns `[lo, hi)` whose input column for kernel offset `j` is in bounds.
    fn valid_range(&self, j: usize) -> (usize, usize) {
        let lo = if self.pad > j { (self.pad - j).div_ceil(self.stride) } else { 0 };
        let hi = if self.w + self.pad > j {
            ((self.w + self.pad - j - 1) / self.stride + 1).min(self.wo)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let n = self.ho * self.wo;
        for c in 0..self.cin {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = ((c * self.kh + i) * self.kw + j) * n;
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + i) as isize - self.pad as isize;
                        let dst = &mut cols[row + oy * self.wo..row + (oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &x[(c * self.h + iy as usize) * self.w..][..self.w];
                        let (lo, hi) = self.valid_range(j);
                        dst[..lo].fill(0.0);
                        dst[hi..].fill(0.0);
                        if lo == hi {
                            continue;
                        }
                        let start = lo * self.stride + j - self.pad;
                        if self.stride == 1 {
                            dst[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                        } else {
                            for (k, d) in dst[lo..hi].iter_mut().enumerate() {
                                *d = src[start + k * self.stride];
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], x: &mut [f64]) {
        let n = self.ho * self.wo;
        for c in 0..self.cin {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = ((c * self.kh + i) * self.kw + j) * n;
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + i) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut x[(c * self.h + iy as usize) * self.w..][..self.w];
                        let src = &cols[row + oy * self.wo..row + (oy + 1) * self.wo];
                        let (lo, hi) = self.valid_range(j);
                        if lo == hi {
                            continue;
                        }
                        let start = lo * self.stride + j - self.pad;
                        for (k, &v) in src[lo..hi].iter().enumerate() {
                            dst[start + k * self.stride] += v;
                        }
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy)]
struct Depthwise {
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    pad: isize,
}

impl Depthwise {
    /// Visits every (output, input, tap) triple that lies inside the image.
    #[inline]
    fn taps(&self, mut f: impl FnMut(usize, usize, usize)) {
        for oy in 0..self.ho {
            for i in 0..self.kh {
                let iy = oy as isize + i as isize - self.pad;
                if iy < 0 || iy >= self.h as isize {
                    continue;
                }
                for j in 0..self.kw {
                    let tap = i * self.kw + j;
                    let lo = (self.pad - j as isize).max(0) as usize;
                    let hi = ((self.w as isize + self.pad - j as isize).min(self.wo as isize)).max(0)
                        as usize;
                    for ox in lo..hi {
                        let ix = (ox as isize + j as isize - self.pad) as usize;
                        f(oy * self.wo + ox, iy as usize * self.w + ix, tap);
                    }
                }
            }
        }
    }

    fn forward(&self, x: &[f64], k: &[f64], out: &mut [f64]) {
        self.taps(|o, i, t| out[o] += x[i] * k[t]);
    }

    fn grad_input(&self, g: &[f64], k: &[f64], gx: &mut [f64]) {
        self.taps(|o, i, t| gx[i] += g[o] * k[t]);
    }

    fn grad_weight(&self, g: &[f64], x: &[f64], gk: &mut [f64]) {
        self.taps(|o, i, t| gk[t] += g[o] * x[i]);
    }
}

/// Reference direct convolution used by tests.
#[cfg(test)]
pub(crate) fn conv2d_naive(x: &Tensor, w: &Tensor, spec: Conv2dSpec) -> Tensor {
    let (batch, cin, h, wd) = x.dims4();
    let (cout, _, kh, kw) = w.dims4();
    let ho = spec.output_size(h, kh);
    let wo = spec.output_size(wd, kw);
    let mut out = vec![0.0; batch * cout * ho * wo];
    for b in 0..batch {
        for o in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for c in 0..cin {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (oy * spec.stride + i) as isize - spec.padding as isize;
                                let ix = (ox * spec.stride + j) as isize - spec.padding as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += x.data()
                                        [((b * cin + c) * h + iy as usize) * wd + ix as usize]
                                        * w.data()[((o * cin + c) * kh + i) * kw + j];
                                }
                            }
                        }
                    }
                    out[((b * cout + o) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    Tensor::from_parts(vec![batch, cout, ho, wo], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::check::{central_difference, rel_error};
    use crate::graph::Graph;

    fn pseudo(shape: &[usize], seed: f64) -> Tensor {
        Tensor::from_fn(shape.to_vec(), |i| ((i as f64 + 1.0) * seed).sin())
    }

    #[test]
    fn conv_matches_naive_for_several_geometries() {
        let cases = [(3, 1, 1, 8), (5, 1, 2, 8), (4, 4, 0, 8), (2, 2, 0, 8), (7, 1, 3, 8), (5, 1, 2, 1), (7, 1, 3, 2), (3, 2, 1, 3)];
        for &(k, stride, pad, size) in &cases {
            let x = pseudo(&[2, 3, size, size], 0.7);
            let w = pseudo(&[4, 3, k, k], 1.3);
            let g = Graph::new();
            let y = g
                .constant(x.clone())
                .conv2d(g.constant(w.clone()), None, Conv2dSpec::new(stride, pad));
            let want = conv2d_naive(&x, &w, Conv2dSpec::new(stride, pad));
            assert!(y.value().max_abs_diff(&want) < 1e-12, "k={k} s={stride} p={pad} n={size}");
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let x = pseudo(&[1, 2, 5, 5], 0.3);
        let w = pseudo(&[3, 2, 3, 3], 0.9);
        let b = pseudo(&[3], 2.1);
        let spec = Conv2dSpec::new(2, 1);
        let weights = pseudo(&[1, 3, 3, 3], 0.5);
        let f = |x: &Tensor, w: &Tensor, b: &Tensor| {
            let g = Graph::new();
            let y = g
                .constant(x.clone())
                .conv2d(g.constant(w.clone()), Some(g.constant(b.clone())), spec);
            y.mul(g.constant(weights.clone())).sum().item()
        };
        let g = Graph::new();
        let (xv, wv, bv) = (g.leaf(x.clone()), g.leaf(w.clone()), g.leaf(b.clone()));
        let loss = xv
            .conv2d(wv, Some(bv), spec)
            .mul(g.constant(weights.clone()))
            .sum();
        let grads = g.backward(loss);
        let nx = central_difference(&x, 1e-5, |t| f(t, &w, &b));
        let nw = central_difference(&w, 1e-5, |t| f(&x, t, &b));
        let nb = central_difference(&b, 1e-5, |t| f(&x, &w, t));
        assert!(rel_error(grads.wrt(xv).unwrap(), &nx) < 1e-7);
        assert!(rel_error(grads.wrt(wv).unwrap(), &nw) < 1e-7);
        assert!(rel_error(grads.wrt(bv).unwrap(), &nb) < 1e-7);
    }

    #[test]
    fn depthwise_matches_grouped_naive_and_gradients() {
        let x = pseudo(&[2, 3, 6, 5], 0.41);
        let w = pseudo(&[3, 1, 3, 3], 1.7);
        let g = Graph::new();
        let y = g.constant(x.clone()).depthwise_conv2d(g.constant(w.clone()), None, 1);
        for c in 0..3 {
            // single-channel slices through the dense reference
            let xc = Tensor::from_fn([2, 1, 6, 5], |i| {
                let (b, p) = (i / 30, i % 30);
                x.data()[(b * 3 + c) * 30 + p]
            });
            let wc = Tensor::from_fn([1, 1, 3, 3], |i| w.data()[c * 9 + i]);
            let want = conv2d_naive(&xc, &wc, Conv2dSpec::new(1, 1));
            for b in 0..2 {
                for p in 0..30 {
                    let got = y.value().data()[(b * 3 + c) * 30 + p];
                    assert!((got - want.data()[b * 30 + p]).abs() < 1e-12);
                }
            }
        }
        let weights = pseudo(&[2, 3, 6, 5], 0.77);
        let f = |x: &Tensor, w: &Tensor| {
            let g = Graph::new();
            g.constant(x.clone())
                .depthwise_conv2d(g.constant(w.clone()), None, 1)
                .mul(g.constant(weights.clone()))
                .sum()
                .item()
        };
        let g = Graph::new();
        let (xv, wv) = (g.leaf(x.clone()), g.leaf(w.clone()));
        let grads = g.backward(xv.depthwise_conv2d(wv, None, 1).mul(g.constant(weights.clone())).sum());
        assert!(rel_error(grads.wrt(xv).unwrap(), &central_difference(&x, 1e-5, |t| f(t, &w))) < 1e-7);
        assert!(rel_error(grads.wrt(wv).unwrap(), &central_difference(&w, 1e-5, |t| f(&x, t))) < 1e-7);
    }
}
