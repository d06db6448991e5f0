//! Softmax, masked cross-entropy and soft confusion accumulation.

use std::sync::Arc;

use crate::graph::Var;
use crate::tensor::Tensor;

fn softmax_in_place(x: &[f64], c: usize, p: usize, out: &mut [f64], base: usize) {
    let mut m = f64::NEG_INFINITY;
    for k in 0..c {
        m = m.max(x[base + k * p]);
    }
    let mut z = 0.0;
    for k in 0..c {
        let e = (x[base + k * p] - m).exp();
        out[base + k * p] = e;
        z += e;
    }
    for k in 0..c {
        out[base + k * p] /= z;
    }
}

/// Softmax over axis 1 of `(B, C, ...)` held in a flat buffer.
pub fn softmax_channels_raw(x: &Tensor) -> Tensor {
    let shape = x.shape();
    let (b, c) = (shape[0], shape[1]);
    let p: usize = shape[2..].iter().product();
    let mut out = vec![0.0; x.numel()];
    for bi in 0..b {
        for pi in 0..p {
            softmax_in_place(x.data(), c, p, &mut out, bi * c * p + pi);
        }
    }
    Tensor::from_parts(shape.to_vec(), out)
}

impl<'g> Var<'g> {
    /// Softmax over the channel axis of `(B, C, ...)`.
    pub fn softmax_channels(self) -> Var<'g> {
        let xv = self.value();
        let y = Arc::new(softmax_channels_raw(&xv));
        let shape = xv.shape().to_vec();
        let (c, p) = (shape[1], shape[2..].iter().product::<usize>());
        let b = shape[0];
        self.graph.record((*y).clone(), &[self], move |g, _| {
            let (gd, yd) = (g.data(), y.data());
            let mut gx = vec![0.0; gd.len()];
            for bi in 0..b {
                for pi in 0..p {
                    let base = bi * c * p + pi;
                    let dot: f64 = (0..c).map(|k| gd[base + k * p] * yd[base + k * p]).sum();
                    for k in 0..c {
                        let i = base + k * p;
                        gx[i] = yd[i] * (gd[i] - dot);
                    }
                }
            }
            vec![Some(Tensor::from_parts(shape.clone(), gx))]
        })
    }

    /// Mean `-log softmax(logits)[label]` over positions with `valid == true`.
    ///
    /// `labels` and `valid` are indexed by `b * P + p`. Panics when no position
    /// is valid; callers check this first.
    pub fn cross_entropy(self, labels: Arc<Vec<usize>>, valid: Arc<Vec<bool>>) -> Var<'g> {
        let xv = self.value();
        let shape = xv.shape().to_vec();
        let (b, c) = (shape[0], shape[1]);
        let p: usize = shape[2..].iter().product();
        assert_eq!(labels.len(), b * p, "labels do not match logits {shape:?}");
        assert_eq!(valid.len(), b * p, "valid mask does not match logits {shape:?}");
        let n_valid = valid.iter().filter(|&&v| v).count();
        assert!(n_valid > 0, "cross_entropy with no valid positions");
        let probs = softmax_channels_raw(&xv);
        let xd = xv.data();
        let mut total = 0.0;
        for bi in 0..b {
            for pi in 0..p {
                let pos = bi * p + pi;
                if !valid[pos] {
                    continue;
                }
                let base = bi * c * p + pi;
                let label = labels[pos];
                assert!(label < c, "label {label} out of range for {c} classes");
                let m = (0..c).map(|k| xd[base + k * p]).fold(f64::NEG_INFINITY, f64::max);
                let lse = m + (0..c).map(|k| (xd[base + k * p] - m).exp()).sum::<f64>().ln();
                total += lse - xd[base + label * p];
            }
        }
        let value = Tensor::scalar(total / n_valid as f64);
        self.graph.record(value, &[self], move |g, _| {
            let scale = g.item() / n_valid as f64;
            let pd = probs.data();
            let mut gx = vec![0.0; pd.len()];
            for bi in 0..b {
                for pi in 0..p {
                    let pos = bi * p + pi;
                    if !valid[pos] {
                        continue;
                    }
                    let base = bi * c * p + pi;
                    for k in 0..c {
                        let i = base + k * p;
                        let target = if k == labels[pos] { 1.0 } else { 0.0 };
                        gx[i] = scale * (pd[i] - target);
                    }
                }
            }
            vec![Some(Tensor::from_parts(shape.clone(), gx))]
        })
    }

    /// Soft confusion counts `q[i][j] = Σ_valid probs[i] · [gt == j]`, shape `(K, n_gt)`.
    pub fn soft_confusion(self, gt: Arc<Vec<usize>>, valid: Arc<Vec<bool>>, n_gt: usize) -> Var<'g> {
        let xv = self.value();
        let shape = xv.shape().to_vec();
        let (b, k) = (shape[0], shape[1]);
        let p: usize = shape[2..].iter().product();
        assert_eq!(gt.len(), b * p);
        assert_eq!(valid.len(), b * p);
        let xd = xv.data();
        let mut q = vec![0.0; k * n_gt];
        for bi in 0..b {
            for pi in 0..p {
                let pos = bi * p + pi;
                if !valid[pos] {
                    continue;
                }
                let j = gt[pos];
                assert!(j < n_gt, "ground-truth label {j} out of range {n_gt}");
                for i in 0..k {
                    q[i * n_gt + j] += xd[bi * k * p + i * p + pi];
                }
            }
        }
        let value = Tensor::from_parts(vec![k, n_gt], q);
        self.graph.record(value, &[self], move |g, _| {
            let gd = g.data();
            let mut gx = vec![0.0; b * k * p];
            for bi in 0..b {
                for pi in 0..p {
                    let pos = bi * p + pi;
                    if !valid[pos] {
                        continue;
                    }
                    for i in 0..k {
                        gx[bi * k * p + i * p + pi] = gd[i * n_gt + gt[pos]];
                    }
                }
            }
            vec![Some(Tensor::from_parts(shape.clone(), gx))]
        })
    }
}
