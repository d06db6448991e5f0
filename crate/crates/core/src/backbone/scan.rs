//! Four-direction cross-scan and the selective state-space recurrence.

use std::cell::RefCell;
use std::sync::Arc;

use scd_autograd::{CustomOp, Tensor, Var};

use crate::error::{Result, ScdError};

/// Number of scan directions.
pub const DIRECTIONS: usize = 4;

/// Position visited at step `t` for each direction over an `h x w` grid
/// (positions are row-major, `p = r * w + c`): row-major forward, row-major
/// reversed, column-major forward, column-major reversed.
pub fn scan_orders(h: usize, w: usize) -> [Vec<usize>; DIRECTIONS] {
    let l = h * w;
    let col = |t: usize| (t % h) * w + t / h;
    [
        (0..l).collect(),
        (0..l).rev().collect(),
        (0..l).map(col).collect(),
        (0..l).map(|t| col(l - 1 - t)).collect(),
    ]
}

/// Inverse of a permutation given as `order[t] = p`.
pub fn invert(order: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; order.len()];
    for (t, &p) in order.iter().enumerate() {
        inv[p] = t;
    }
    inv
}

/// `(B, E, H, W)` to four `(B, E, H*W)` sequences in scan order.
pub fn cross_scan<'g>(x: Var<'g>) -> Vec<Var<'g>> {
    let s = x.shape();
    let (b, e, h, w) = (s[0], s[1], s[2], s[3]);
    let flat = x.reshape(vec![b, e, h * w]);
    scan_orders(h, w)
        .into_iter()
        .map(|order| flat.gather_axis(2, Arc::new(order)))
        .collect()
}

/// Inverse of [`cross_scan`]: returns each sequence to grid order and sums them.
pub fn cross_merge<'g>(ys: &[Var<'g>], h: usize, w: usize) -> Var<'g> {
    assert_eq!(ys.len(), DIRECTIONS, "cross_merge expects one sequence per direction");
    let orders = scan_orders(h, w);
    let mut acc: Option<Var<'g>> = None;
    for (y, order) in ys.iter().zip(&orders) {
        let back = y.gather_axis(2, Arc::new(invert(order)));
        acc = Some(match acc {
            Some(a) => a.add(back),
            None => back,
        });
    }
    let merged = acc.expect("four directions");
    let s = merged.shape();
    merged.reshape(vec![s[0], s[1], h, w])
}

struct ScanDims {
    b: usize,
    e: usize,
    l: usize,
    s: usize,
}

fn scan_dims(x: &Tensor, a: &Tensor) -> ScanDims {
    let xs = x.shape();
    ScanDims {
        b: xs[0],
        e: xs[1],
        l: xs[2],
        s: a.shape()[1],
    }
}

/// Runs the recurrence, returning `y` `(B, E, L)`, all hidden states and the
/// per-step decay factors (both `(B, E, L, S)`), or the first step at which a
/// non-finite value appeared.
fn scan_forward(
    x: &Tensor,
    delta: &Tensor,
    a: &Tensor,
    bm: &Tensor,
    cm: &Tensor,
    d: &Tensor,
) -> std::result::Result<(Tensor, Vec<f64>, Vec<f64>), usize> {
    let ScanDims { b, e, l, s } = scan_dims(x, a);
    let (xd, dd, ad, bd, cd, dv) = (x.data(), delta.data(), a.data(), bm.data(), cm.data(), d.data());
    let mut y = vec![0.0; b * e * l];
    let mut states = vec![0.0; b * e * l * s];
    let mut decay = vec![0.0; b * e * l * s];
    let mut bad_step: Option<usize> = None;
    let mut h = vec![0.0; s];
    for bi in 0..b {
        for ei in 0..e {
            h.iter_mut().for_each(|v| *v = 0.0);
            let arow = &ad[ei * s..(ei + 1) * s];
            for t in 0..l {
                let i = (bi * e + ei) * l + t;
                let (xt, dt) = (xd[i], dd[i]);
                let mut acc = dv[ei] * xt;
                for si in 0..s {
                    let bs = bd[(bi * s + si) * l + t];
                    let cs = cd[(bi * s + si) * l + t];
                    let da = (dt * arow[si]).exp();
                    decay[i * s + si] = da;
                    h[si] = da * h[si] + dt * bs * xt;
                    acc += cs * h[si];
                }
                states[i * s..(i + 1) * s].copy_from_slice(&h);
                if !acc.is_finite() && bad_step.is_none_or(|st| t < st) {
                    bad_step = Some(t);
                }
                y[i] = acc;
            }
        }
    }
    if let Some(step) = bad_step {
        return Err(step);
    }
    Ok((
        Tensor::new([b, e, l], y).expect("scan output"),
        states,
        decay,
    ))
}

struct SelectiveScan {
    y: RefCell<Option<Tensor>>,
    states: Vec<f64>,
    decay: Vec<f64>,
}

impl CustomOp for SelectiveScan {
    fn forward(&self, _inputs: &[&Tensor]) -> Tensor {
        self.y.borrow_mut().take().expect("forward runs once")
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        g: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let (x, delta, a, bm, cm, d) = (inputs[0], inputs[1], inputs[2], inputs[3], inputs[4], inputs[5]);
        let ScanDims { b, e, l, s } = scan_dims(x, a);
        let (xd, dd, ad, bd, cd, dv) = (x.data(), delta.data(), a.data(), bm.data(), cm.data(), d.data());
        let hs = &self.states;
        let decay = &self.decay;
        let gd = g.data();
        let mut gx = vec![0.0; x.numel()];
        let mut gdelta = vec![0.0; delta.numel()];
        let mut ga = vec![0.0; a.numel()];
        let mut gb = vec![0.0; bm.numel()];
        let mut gc = vec![0.0; cm.numel()];
        let mut gdv = vec![0.0; d.numel()];
        let mut gh = vec![0.0; s];
        for bi in 0..b {
            for ei in 0..e {
                gh.iter_mut().for_each(|v| *v = 0.0);
                let arow = &ad[ei * s..(ei + 1) * s];
                for t in (0..l).rev() {
                    let i = (bi * e + ei) * l + t;
                    let (xt, dt, gy) = (xd[i], dd[i], gd[i]);
                    gdv[ei] += gy * xt;
                    let mut gxt = gy * dv[ei];
                    let mut gdt = 0.0;
                    let h_t = &hs[i * s..(i + 1) * s];
                    for si in 0..s {
                        let bc = (bi * s + si) * l + t;
                        gc[bc] += gy * h_t[si];
                        let total = gh[si] + gy * cd[bc];
                        let hprev = if t > 0 { hs[(i - 1) * s + si] } else { 0.0 };
                        let da = decay[i * s + si];
                        gxt += total * dt * bd[bc];
                        gb[bc] += total * dt * xt;
                        gdt += total * (arow[si] * da * hprev + bd[bc] * xt);
                        ga[ei * s + si] += total * dt * da * hprev;
                        gh[si] = total * da;
                    }
                    gx[i] += gxt;
                    gdelta[i] += gdt;
                }
            }
        }
        let wrap = |need: bool, like: &Tensor, v: Vec<f64>| {
            need.then(|| Tensor::new(like.shape().to_vec(), v).expect("grad shape"))
        };
        vec![
            wrap(needs[0], x, gx),
            wrap(needs[1], delta, gdelta),
            wrap(needs[2], a, ga),
            wrap(needs[3], bm, gb),
            wrap(needs[4], cm, gc),
            wrap(needs[5], d, gdv),
        ]
    }
}

/// Selective scan over sequences:
/// `h_t = exp(delta_t * A) h_{t-1} + delta_t B_t x_t`, `y_t = C_t . h_t + D x_t`.
///
/// Shapes: `x`, `delta` `(B, E, L)`; `a` `(E, S)`; `bm`, `cm` `(B, S, L)`; `d` `(E)`.
pub fn selective_scan<'g>(
    x: Var<'g>,
    delta: Var<'g>,
    a: Var<'g>,
    bm: Var<'g>,
    cm: Var<'g>,
    d: Var<'g>,
) -> Result<Var<'g>> {
    let (xv, dv, av, bv, cv, dd) = (x.value(), delta.value(), a.value(), bm.value(), cm.value(), d.value());
    check_scan_shapes(&xv, &dv, &av, &bv, &cv, &dd)?;
    let (y, states, decay) =
        scan_forward(&xv, &dv, &av, &bv, &cv, &dd).map_err(|step| ScdError::NonFiniteScan { step })?;
    let op = SelectiveScan {
        y: RefCell::new(Some(y)),
        states,
        decay,
    };
    Ok(x.graph().custom(&[x, delta, a, bm, cm, d], op))
}

fn check_scan_shapes(
    x: &Tensor,
    delta: &Tensor,
    a: &Tensor,
    bm: &Tensor,
    cm: &Tensor,
    d: &Tensor,
) -> Result<()> {
    let dim = |message: String| ScdError::Dimension { axis: "scan", message };
    if x.rank() != 3 || a.rank() != 2 {
        return Err(dim(format!("x {:?}, A {:?}", x.shape(), a.shape())));
    }
    let xs = x.shape();
    let (b, e, l, s) = (xs[0], xs[1], xs[2], a.shape()[1]);
    if delta.shape() != xs {
        return Err(dim(format!("delta {:?} vs x {:?}", delta.shape(), xs)));
    }
    if a.shape()[0] != e || d.shape() != [e] {
        return Err(dim(format!("A {:?}, D {:?} for E={e}", a.shape(), d.shape())));
    }
    for (name, t) in [("B", bm), ("C", cm)] {
        if t.shape() != [b, s, l] {
            return Err(dim(format!("{name} {:?}, expected {:?}", t.shape(), [b, s, l])));
        }
    }
    Ok(())
}
