//! Reductions and layout operations.

use std::sync::Arc;

use crate::graph::Var;
use crate::tensor::Tensor;

/// Splits a shape around `axis` into `(outer, n, inner)`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    assert!(axis < shape.len(), "axis {axis} out of range for {shape:?}");
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn keepdim_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s[axis] = 1;
    s
}

impl<'g> Var<'g> {
    pub fn sum(self) -> Var<'g> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let value = Tensor::scalar(x.sum());
        self.graph.record(value, &[self], move |g, _| {
            vec![Some(Tensor::full(shape.clone(), g.item()))]
        })
    }

    pub fn mean(self) -> Var<'g> {
        let n = self.value().numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sum over one axis, keeping it with extent 1.
    pub fn sum_axis(self, axis: usize) -> Var<'g> {
        let x = self.value();
        let (outer, n, inner) = split_axis(x.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        let xd = x.data();
        for o in 0..outer {
            for k in 0..n {
                let src = &xd[(o * n + k) * inner..(o * n + k + 1) * inner];
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let in_shape = x.shape().to_vec();
        let value = Tensor::from_parts(keepdim_shape(&in_shape, axis), out);
        self.graph.record(value, &[self], move |g, _| {
            let gd = g.data();
            let mut gx = vec![0.0; outer * n * inner];
            for o in 0..outer {
                for k in 0..n {
                    gx[(o * n + k) * inner..(o * n + k + 1) * inner]
                        .copy_from_slice(&gd[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(Tensor::from_parts(in_shape.clone(), gx))]
        })
    }

    pub fn mean_axis(self, axis: usize) -> Var<'g> {
        let n = self.value().shape()[axis] as f64;
        self.sum_axis(axis).scale(1.0 / n)
    }

    /// Max over one axis (keepdim); the gradient goes to the first maximiser.
    pub fn max_axis(self, axis: usize) -> Var<'g> {
        let x = self.value();
        let (outer, n, inner) = split_axis(x.shape(), axis);
        let xd = x.data();
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                for i in 0..inner {
                    let v = xd[(o * n + k) * inner + i];
                    let slot = o * inner + i;
                    // a NaN wins and sticks, like the elementwise ops
                    if v > out[slot] || (v.is_nan() && !out[slot].is_nan()) {
                        out[slot] = v;
                        arg[slot] = k;
                    }
                }
            }
        }
        let in_shape = x.shape().to_vec();
        let value = Tensor::from_parts(keepdim_shape(&in_shape, axis), out);
        self.graph.record(value, &[self], move |g, _| {
            let gd = g.data();
            let mut gx = vec![0.0; outer * n * inner];
            for o in 0..outer {
                for i in 0..inner {
                    let slot = o * inner + i;
                    gx[(o * n + arg[slot]) * inner + i] += gd[slot];
                }
            }
            vec![Some(Tensor::from_parts(in_shape.clone(), gx))]
        })
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Var<'g> {
        let shape = shape.into();
        let x = self.value();
        let in_shape = x.shape().to_vec();
        if in_shape == shape {
            return self;
        }
        let value = (*x)
            .clone()
            .reshaped(shape)
            .unwrap_or_else(|e| panic!("reshape: {e}"));
        self.graph.record(value, &[self], move |g, _| {
            vec![Some(g.clone().reshaped(in_shape.clone()).expect("same numel"))]
        })
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Var<'g> {
        let x = self.value();
        let (outer, n, inner) = split_axis(x.shape(), axis);
        assert!(start + len <= n, "narrow {start}+{len} exceeds extent {n}");
        let xd = x.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&xd[(o * n + start) * inner..(o * n + start + len) * inner]);
        }
        let in_shape = x.shape().to_vec();
        let mut out_shape = in_shape.clone();
        out_shape[axis] = len;
        let value = Tensor::from_parts(out_shape, out);
        self.graph.record(value, &[self], move |g, _| {
            let gd = g.data();
            let mut gx = vec![0.0; outer * n * inner];
            for o in 0..outer {
                gx[(o * n + start) * inner..(o * n + start + len) * inner]
                    .copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(Tensor::from_parts(in_shape.clone(), gx))]
        })
    }

    /// Reorders positions along `axis`: `out[.., t, ..] = x[.., index[t], ..]`.
    pub fn gather_axis(self, axis: usize, index: Arc<Vec<usize>>) -> Var<'g> {
        let x = self.value();
        let (outer, n, inner) = split_axis(x.shape(), axis);
        let m = index.len();
        assert!(index.iter().all(|&i| i < n), "gather index out of range");
        let xd = x.data();
        let mut out = vec![0.0; outer * m * inner];
        for o in 0..outer {
            for (t, &src) in index.iter().enumerate() {
                out[(o * m + t) * inner..(o * m + t + 1) * inner]
                    .copy_from_slice(&xd[(o * n + src) * inner..(o * n + src + 1) * inner]);
            }
        }
        let in_shape = x.shape().to_vec();
        let mut out_shape = in_shape.clone();
        out_shape[axis] = m;
        let value = Tensor::from_parts(out_shape, out);
        self.graph.record(value, &[self], move |g, _| {
            let gd = g.data();
            let mut gx = vec![0.0; outer * n * inner];
            for o in 0..outer {
                for (t, &src) in index.iter().enumerate() {
                    let dst = &mut gx[(o * n + src) * inner..(o * n + src + 1) * inner];
                    for (d, s) in dst
                        .iter_mut()
                        .zip(&gd[(o * m + t) * inner..(o * m + t + 1) * inner])
                    {
                        *d += s;
                    }
                }
            }
            vec![Some(Tensor::from_parts(in_shape.clone(), gx))]
        })
    }
}

/// Concatenates vars along `axis`; all other extents must agree.
pub fn concat<'g>(parts: &[Var<'g>], axis: usize) -> Var<'g> {
    assert!(!parts.is_empty(), "concat of nothing");
    let graph = parts[0].graph;
    let values: Vec<Arc<Tensor>> = parts.iter().map(|p| p.value()).collect();
    let first = values[0].shape().to_vec();
    let mut extents = Vec::with_capacity(parts.len());
    for v in &values {
        let s = v.shape();
        assert_eq!(s.len(), first.len(), "concat rank mismatch");
        for d in 0..s.len() {
            if d != axis {
                assert_eq!(s[d], first[d], "concat extent mismatch on axis {d}");
            }
        }
        extents.push(s[axis]);
    }
    let total: usize = extents.iter().sum();
    let (outer, _, inner) = split_axis(&first, axis);
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (v, &n) in values.iter().zip(&extents) {
            out.extend_from_slice(&v.data()[o * n * inner..(o + 1) * n * inner]);
        }
    }
    let mut out_shape = first.clone();
    out_shape[axis] = total;
    let value = Tensor::from_parts(out_shape, out);
    let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
    graph.record(value, parts, move |g, needs| {
        let gd = g.data();
        let mut offset = 0;
        let mut grads = Vec::with_capacity(extents.len());
        for (k, &n) in extents.iter().enumerate() {
            if needs[k] {
                let mut gx = Vec::with_capacity(outer * n * inner);
                for o in 0..outer {
                    let base = (o * total + offset) * inner;
                    gx.extend_from_slice(&gd[base..base + n * inner]);
                }
                grads.push(Some(Tensor::from_parts(shapes[k].clone(), gx)));
            } else {
                grads.push(None);
            }
            offset += n;
        }
        grads
    })
}
