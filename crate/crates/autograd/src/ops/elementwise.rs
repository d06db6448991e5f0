//! Unary maps and broadcasting binary arithmetic.

use std::sync::Arc;

use crate::graph::Var;
use crate::tensor::Tensor;

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    assert_eq!(
        a.len(),
        b.len(),
        "broadcast requires equal rank: {a:?} vs {b:?}"
    );
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            if x == y || y == 1 {
                x
            } else if x == 1 {
                y
            } else {
                panic!("incompatible broadcast shapes {a:?} and {b:?}")
            }
        })
        .collect()
}

/// Element strides of `shape` when iterated in `out` index space (0 on broadcast axes).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for d in (0..out.len()).rev() {
        if shape[d] == out[d] {
            strides[d] = acc;
        }
        acc *= shape[d];
    }
    strides
}

/// Visits every output element with the matching offsets into `a` and `b`.
fn for_each_pair(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let rank = out.len();
    let total: usize = out.iter().product();
    if total == 0 {
        return;
    }
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let inner = out[rank - 1];
    let (ia_step, ib_step) = (sa[rank - 1], sb[rank - 1]);
    let mut idx = vec![0usize; rank];
    let mut o = 0;
    loop {
        let base_a: usize = (0..rank - 1).map(|d| idx[d] * sa[d]).sum();
        let base_b: usize = (0..rank - 1).map(|d| idx[d] * sb[d]).sum();
        for i in 0..inner {
            f(o, base_a + i * ia_step, base_b + i * ib_step);
            o += 1;
        }
        // advance odometer over all but the last axis
        let mut d = rank - 1;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < out[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

fn binary<'g>(a: Var<'g>, b: Var<'g>, op: BinOp) -> Var<'g> {
    let av = a.value();
    let bv = b.value();
    let out_shape = broadcast_shape(av.shape(), bv.shape());
    let n: usize = out_shape.iter().product();
    let mut out = vec![0.0; n];
    let (ad, bd) = (av.data(), bv.data());
    if av.shape() == bv.shape() {
        for i in 0..n {
            out[i] = apply(op, ad[i], bd[i]);
        }
    } else {
        let sa = broadcast_strides(av.shape(), &out_shape);
        let sb = broadcast_strides(bv.shape(), &out_shape);
        for_each_pair(&out_shape, &sa, &sb, |o, i, j| out[o] = apply(op, ad[i], bd[j]));
    }
    let value = Tensor::from_parts(out_shape.clone(), out);
    a.graph.record(value, &[a, b], move |g, needs| {
        let (ad, bd, gd) = (av.data(), bv.data(), g.data());
        let mut ga = needs[0].then(|| vec![0.0; av.numel()]);
        let mut gb = needs[1].then(|| vec![0.0; bv.numel()]);
        let (sa, sb, walk) = if av.shape() == bv.shape() {
            (vec![1], vec![1], vec![gd.len()])
        } else {
            (
                broadcast_strides(av.shape(), &out_shape),
                broadcast_strides(bv.shape(), &out_shape),
                out_shape.clone(),
            )
        };
        for_each_pair(&walk, &sa, &sb, |o, i, j| {
            let go = gd[o];
            let (da, db) = match op {
                BinOp::Add => (go, go),
                BinOp::Sub => (go, -go),
                BinOp::Mul => (go * bd[j], go * ad[i]),
                BinOp::Div => (go / bd[j], -go * ad[i] / (bd[j] * bd[j])),
            };
            if let Some(ga) = ga.as_mut() {
                ga[i] += da;
            }
            if let Some(gb) = gb.as_mut() {
                gb[j] += db;
            }
        });
        vec![
            ga.map(|v| Tensor::from_parts(av.shape().to_vec(), v)),
            gb.map(|v| Tensor::from_parts(bv.shape().to_vec(), v)),
        ]
    })
}

#[inline]
fn apply(op: BinOp, x: f64, y: f64) -> f64 {
    match op {
        BinOp::Add => x + y,
        BinOp::Sub => x - y,
        BinOp::Mul => x * y,
        BinOp::Div => x / y,
    }
}

impl<'g> Var<'g> {
    /// Elementwise map with derivative `df(x, y)` where `y = f(x)`.
    pub fn map_unary(
        self,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var<'g> {
        let x = self.value();
        let y = Arc::new(x.map(f));
        let out = (*y).clone();
        self.graph.record(out, &[self], move |g, _| {
            let data = g
                .data()
                .iter()
                .zip(x.data())
                .zip(y.data())
                .map(|((&g, &x), &y)| g * df(x, y))
                .collect();
            vec![Some(Tensor::from_parts(g.shape().to_vec(), data))]
        })
    }

    pub fn add(self, other: Var<'g>) -> Var<'g> {
        binary(self, other, BinOp::Add)
    }

    pub fn sub(self, other: Var<'g>) -> Var<'g> {
        binary(self, other, BinOp::Sub)
    }

    pub fn mul(self, other: Var<'g>) -> Var<'g> {
        binary(self, other, BinOp::Mul)
    }

    pub fn div(self, other: Var<'g>) -> Var<'g> {
        binary(self, other, BinOp::Div)
    }

    pub fn scale(self, k: f64) -> Var<'g> {
        self.map_unary(move |x| k * x, move |_, _| k)
    }

    pub fn add_scalar(self, k: f64) -> Var<'g> {
        self.map_unary(move |x| x + k, |_, _| 1.0)
    }

    pub fn neg(self) -> Var<'g> {
        self.scale(-1.0)
    }

    pub fn exp(self) -> Var<'g> {
        self.map_unary(f64::exp, |_, y| y)
    }

    pub fn ln(self) -> Var<'g> {
        self.map_unary(f64::ln, |x, _| 1.0 / x)
    }

    pub fn sigmoid(self) -> Var<'g> {
        self.map_unary(sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn silu(self) -> Var<'g> {
        self.map_unary(
            |x| x * sigmoid(x),
            |x, _| {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            },
        )
    }

    pub fn softplus(self) -> Var<'g> {
        self.map_unary(softplus, |x, _| sigmoid(x))
    }

    pub fn relu(self) -> Var<'g> {
        // NaN passes through so non-finite values reach the loss
        self.map_unary(|x| if x <= 0.0 { 0.0 } else { x }, |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// `|x|` with subgradient 0 at the origin.
    pub fn abs(self) -> Var<'g> {
        self.map_unary(f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn square(self) -> Var<'g> {
        self.map_unary(|x| x * x, |x, _| 2.0 * x)
    }

    /// `max(x, 0)` with zero gradient in the clipped region (including the boundary).
    pub fn clamp_min_zero(self) -> Var<'g> {
        self.relu()
    }
}
