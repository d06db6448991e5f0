//! Layer normalisation over channels and training-mode batch normalisation.

use crate::graph::Var;
use crate::tensor::Tensor;

/// Batch statistics observed by a training-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance.
    pub var: Vec<f64>,
    /// Elements reduced per channel.
    pub count: usize,
}

/// Normalised values and inverse std for groups addressed by `index(group, k)`.
struct Normalized {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

fn normalize(
    x: &[f64],
    groups: usize,
    n: usize,
    eps: f64,
    index: impl Fn(usize, usize) -> usize,
) -> (Normalized, Vec<f64>, Vec<f64>) {
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; groups];
    let mut means = vec![0.0; groups];
    let mut vars = vec![0.0; groups];
    for gi in 0..groups {
        let mean = (0..n).map(|k| x[index(gi, k)]).sum::<f64>() / n as f64;
        let var = (0..n)
            .map(|k| {
                let d = x[index(gi, k)] - mean;
                d * d
            })
            .sum::<f64>()
            / n as f64;
        let is = 1.0 / (var + eps).sqrt();
        for k in 0..n {
            let i = index(gi, k);
            xhat[i] = (x[i] - mean) * is;
        }
        inv_std[gi] = is;
        means[gi] = mean;
        vars[gi] = var;
    }
    (Normalized { xhat, inv_std }, means, vars)
}

/// `dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))` per group.
fn normalize_backward(
    dxhat: &[f64],
    norm: &Normalized,
    groups: usize,
    n: usize,
    index: impl Fn(usize, usize) -> usize,
) -> Vec<f64> {
    let mut dx = vec![0.0; dxhat.len()];
    for gi in 0..groups {
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for k in 0..n {
            let i = index(gi, k);
            m1 += dxhat[i];
            m2 += dxhat[i] * norm.xhat[i];
        }
        m1 /= n as f64;
        m2 /= n as f64;
        for k in 0..n {
            let i = index(gi, k);
            dx[i] = norm.inv_std[gi] * (dxhat[i] - m1 - norm.xhat[i] * m2);
        }
    }
    dx
}

impl<'g> Var<'g> {
    /// Normalises each position across the channel axis of `(B, C, ...)`,
    /// then applies per-channel `gamma`/`beta`.
    pub fn layer_norm_channels(self, gamma: Var<'g>, beta: Var<'g>, eps: f64) -> Var<'g> {
        let xv = self.value();
        let gv = gamma.value();
        let bv = beta.value();
        let shape = xv.shape().to_vec();
        let (batch, c) = (shape[0], shape[1]);
        let p: usize = shape[2..].iter().product();
        assert_eq!(gv.shape(), &[c]);
        assert_eq!(bv.shape(), &[c]);
        let index = move |gi: usize, k: usize| (gi / p * c + k) * p + gi % p;
        let (norm, _, _) = normalize(xv.data(), batch * p, c, eps, index);
        let mut out = vec![0.0; xv.numel()];
        for (i, o) in out.iter_mut().enumerate() {
            let ch = (i / p) % c;
            *o = norm.xhat[i] * gv.data()[ch] + bv.data()[ch];
        }
        let value = Tensor::from_parts(shape.clone(), out);
        self.graph.record(value, &[self, gamma, beta], move |g, needs| {
            let gd = g.data();
            let mut ggamma = vec![0.0; c];
            let mut gbeta = vec![0.0; c];
            let mut dxhat = vec![0.0; gd.len()];
            for (i, &go) in gd.iter().enumerate() {
                let ch = (i / p) % c;
                ggamma[ch] += go * norm.xhat[i];
                gbeta[ch] += go;
                dxhat[i] = go * gv.data()[ch];
            }
            let gx = needs[0].then(|| {
                Tensor::from_parts(
                    shape.clone(),
                    normalize_backward(&dxhat, &norm, batch * p, c, index),
                )
            });
            vec![
                gx,
                Some(Tensor::from_parts(vec![c], ggamma)),
                Some(Tensor::from_parts(vec![c], gbeta)),
            ]
        })
    }

    /// Training-mode batch norm over `(B, C, ...)`: statistics per channel
    /// over batch and positions. Returns the observed batch statistics.
    pub fn batch_norm_train(self, gamma: Var<'g>, beta: Var<'g>, eps: f64) -> (Var<'g>, BatchStats) {
        let xv = self.value();
        let gv = gamma.value();
        let bv = beta.value();
        let shape = xv.shape().to_vec();
        let (batch, c) = (shape[0], shape[1]);
        let p: usize = shape[2..].iter().product();
        assert_eq!(gv.shape(), &[c]);
        let n = batch * p;
        let index = move |ch: usize, k: usize| ((k / p) * c + ch) * p + k % p;
        let (norm, mean, var) = normalize(xv.data(), c, n, eps, index);
        let mut out = vec![0.0; xv.numel()];
        for (i, o) in out.iter_mut().enumerate() {
            let ch = (i / p) % c;
            *o = norm.xhat[i] * gv.data()[ch] + bv.data()[ch];
        }
        let value = Tensor::from_parts(shape.clone(), out);
        let stats = BatchStats { mean, var, count: n };
        let out = self.graph.record(value, &[self, gamma, beta], move |g, needs| {
            let gd = g.data();
            let mut ggamma = vec![0.0; c];
            let mut gbeta = vec![0.0; c];
            let mut dxhat = vec![0.0; gd.len()];
            for (i, &go) in gd.iter().enumerate() {
                let ch = (i / p) % c;
                ggamma[ch] += go * norm.xhat[i];
                gbeta[ch] += go;
                dxhat[i] = go * gv.data()[ch];
            }
            let gx = needs[0]
                .then(|| Tensor::from_parts(shape.clone(), normalize_backward(&dxhat, &norm, c, n, index)));
            vec![
                gx,
                Some(Tensor::from_parts(vec![c], ggamma)),
                Some(Tensor::from_parts(vec![c], gbeta)),
            ]
        });
        (out, stats)
    }
}
