//! Shared fixtures: fuzzed label maps and a per-pixel scalar metric oracle.
#![allow(dead_code)]

use rand::Rng;
use scd_core::metrics::ConfusionMatrix;

pub struct Maps {
    pub pred_sem: Vec<u8>,
    pub pred_change: Vec<bool>,
    pub gt_sem: Vec<u8>,
    pub gt_change: Vec<bool>,
    pub void: Vec<bool>,
}

pub fn random_maps(n_pix: usize, n: u8, rng: &mut impl Rng) -> Maps {
    let mut m = Maps {
        pred_sem: Vec::new(),
        pred_change: Vec::new(),
        gt_sem: Vec::new(),
        gt_change: Vec::new(),
        void: Vec::new(),
    };
    for _ in 0..n_pix {
        m.pred_sem.push(rng.random_range(0..n));
        m.pred_change.push(rng.random_bool(0.4));
        m.gt_sem.push(rng.random_range(0..n));
        m.gt_change.push(rng.random_bool(0.4));
        m.void.push(rng.random_bool(0.05));
    }
    m
}

pub fn cm_of(m: &Maps, n: usize) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::new(n);
    cm.accumulate(&m.pred_sem, &m.pred_change, &m.gt_sem, &m.gt_change, &m.void)
        .unwrap();
    cm
}

/// Per-pixel scalar oracle: counts computed straight from the maps.
pub struct Oracle {
    pub n: usize,
    pub q: Vec<Vec<f64>>,
}

impl Oracle {
    pub fn new(m: &Maps, n: usize) -> Self {
        let mut q = vec![vec![0.0; n]; n];
        for p in 0..m.gt_sem.len() {
            if m.void[p] {
                continue;
            }
            let pe = if m.pred_change[p] { m.pred_sem[p] as usize } else { 0 };
            let ge = if m.gt_change[p] { m.gt_sem[p] as usize } else { 0 };
            q[pe][ge] += 1.0;
        }
        Self { n, q }
    }

    pub fn total(&self) -> f64 {
        self.q.iter().flatten().sum()
    }

    pub fn oa(&self) -> f64 {
        (0..self.n).map(|i| self.q[i][i]).sum::<f64>() / self.total()
    }

    pub fn miou(&self) -> f64 {
        let (mut tn, mut fp, mut fn_, mut tp) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..self.n {
            for j in 0..self.n {
                match (i > 0, j > 0) {
                    (false, false) => tn += self.q[i][j],
                    (true, false) => fp += self.q[i][j],
                    (false, true) => fn_ += self.q[i][j],
                    (true, true) => tp += self.q[i][j],
                }
            }
        }
        let iou = |a: f64, b: f64| if a + b == 0.0 { 0.0 } else { a / (a + b) };
        0.5 * (iou(tn, fp + fn_) + iou(tp, fp + fn_))
    }

    pub fn fscd(&self) -> f64 {
        let mut hit = 0.0;
        let mut pred = 0.0;
        let mut gt = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                if i >= 1 && i == j {
                    hit += self.q[i][j];
                }
                if i >= 1 {
                    pred += self.q[i][j];
                }
                if j >= 1 {
                    gt += self.q[i][j];
                }
            }
        }
        let p = if pred == 0.0 { 0.0 } else { hit / pred };
        let r = if gt == 0.0 { 0.0 } else { hit / gt };
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn sek(&self) -> f64 {
        // kappa over the matrix with the no-change/no-change cell zeroed,
        // scaled by exp(IoU_change - 1)
        let n = self.n;
        let mut z = self.q.clone();
        z[0][0] = 0.0;
        let total: f64 = z.iter().flatten().sum();
        if total == 0.0 {
            return 0.0;
        }
        let mut diag = 0.0;
        let mut both_changed = 0.0;
        for i in 0..n {
            diag += z[i][i];
            for j in 0..n {
                if i >= 1 && j >= 1 {
                    both_changed += z[i][j];
                }
            }
        }
        let rho = diag / total;
        let mut eta = 0.0;
        for k in 0..n {
            let row: f64 = (0..n).map(|j| z[k][j]).sum();
            let col: f64 = (0..n).map(|i| z[i][k]).sum();
            eta += row * col;
        }
        eta /= total * total;
        let kappa = if (1.0 - eta).abs() < 1e-12 {
            if (1.0 - rho).abs() < 1e-12 { 1.0 } else { 0.0 }
        } else {
            (rho - eta) / (1.0 - eta)
        };
        kappa * (both_changed / total - 1.0).exp()
    }
}


/// Closed-form selective scan over plain slices:
/// `y_t = D x_t + sum_{tau <= t} C_t . exp(A sum_{tau < u <= t} delta_u) delta_tau B_tau x_tau`.
/// Shapes as in `selective_scan`: `x`, `delta` `(b, e, l)`; `a` `(e, s)`; `bm`, `cm` `(b, s, l)`; `d` `(e)`.
#[allow(clippy::too_many_arguments)]
pub fn unrolled_scan(
    dims: (usize, usize, usize, usize),
    x: &[f64],
    delta: &[f64],
    a: &[f64],
    bm: &[f64],
    cm: &[f64],
    d: &[f64],
) -> Vec<f64> {
    let (b, e, l, s) = dims;
    let mut y = vec![0.0; b * e * l];
    for bi in 0..b {
        for ei in 0..e {
            let seq = |v: &[f64], t: usize| v[(bi * e + ei) * l + t];
            for t in 0..l {
                let mut acc = d[ei] * seq(x, t);
                for si in 0..s {
                    let c_t = cm[(bi * s + si) * l + t];
                    for tau in 0..=t {
                        let decay: f64 = ((tau + 1)..=t).map(|u| seq(delta, u)).sum::<f64>() * a[ei * s + si];
                        acc += c_t * decay.exp() * seq(delta, tau) * bm[(bi * s + si) * l + tau] * seq(x, tau);
                    }
                }
                y[(bi * e + ei) * l + t] = acc;
            }
        }
    }
    y
}
