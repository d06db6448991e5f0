//! Training objective: cross-entropy, soft-confusion mIoU and SeK losses.
//!
//! Confusion matrices are `q[pred][gt]`, index 0 = no-change. The score
//! functions here work on any non-negative matrix, so the same code scores
//! soft (probability mass) and hard (integer count) confusions.

use std::sync::Arc;

use scd_autograd::{concat, CustomOp, Tensor, Var};

use crate::config::LossWeights;
use crate::error::{Result, ScdError};
use crate::model::ModelOutput;

/// Tolerance on per-pixel probability sums.
pub const PROB_SUM_TOL: f64 = 1e-4;

/// `(IoU_nochange, IoU_change)` of a 2x2 matrix; a zero denominator gives 0.
pub fn binary_iou(q: &[f64]) -> (f64, f64) {
    assert_eq!(q.len(), 4, "binary IoU needs a 2x2 matrix");
    let (q00, q01, q10, q11) = (q[0], q[1], q[2], q[3]);
    let u1 = q00 + q01 + q10;
    let u2 = q01 + q10 + q11;
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    (ratio(q00, u1), ratio(q11, u2))
}

/// Gradient of `(IoU_1 + IoU_2) / 2` with respect to the four entries.
fn miou_gradient(q: &[f64]) -> [f64; 4] {
    let (q00, q01, q10, q11) = (q[0], q[1], q[2], q[3]);
    let mut g = [0.0; 4];
    let u1 = q00 + q01 + q10;
    if u1 > 0.0 {
        let i1 = q00 / u1;
        // q00 appears in numerator and denominator; q01, q10 only in the denominator
        g[0] += (1.0 - i1) / u1;
        g[1] -= i1 / u1;
        g[2] -= i1 / u1;
    }
    let u2 = q01 + q10 + q11;
    if u2 > 0.0 {
        let i2 = q11 / u2;
        g[3] += (1.0 - i2) / u2;
        g[1] -= i2 / u2;
        g[2] -= i2 / u2;
    }
    g.map(|v| 0.5 * v)
}

/// How the no-change cell enters the SeK marginals.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SekConvention {
    /// `q00` is zeroed before computing `rho` and `eta` (benchmark scoring).
    #[default]
    ZeroNoChange,
    /// `eta` uses marginals of the full matrix; can exceed 1.
    Literal,
}

/// Why a SeK value fell back to a fixed result.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SekFlag {
    /// All mass sits in the no-change cell.
    NoChangedPixels,
    /// `eta` is numerically 1, so kappa is undefined.
    DegenerateChance,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SekValue {
    pub sek: f64,
    pub rho: f64,
    pub eta: f64,
    pub kappa: f64,
    pub iou_change: f64,
    pub flag: Option<SekFlag>,
}

const ETA_EPS: f64 = 1e-12;

/// Row and column sums of `q` with `q00` removed.
fn marginals(q: &[f64], n: usize, zero_nochange: bool) -> (Vec<f64>, Vec<f64>) {
    let mut rows = vec![0.0; n];
    let mut cols = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            if zero_nochange && i == 0 && j == 0 {
                continue;
            }
            rows[i] += q[i * n + j];
            cols[j] += q[i * n + j];
        }
    }
    (rows, cols)
}

/// Separated Kappa of an `n x n` confusion.
pub fn sek_value(q: &[f64], n: usize, convention: SekConvention) -> SekValue {
    assert_eq!(q.len(), n * n, "confusion must be {n}x{n}");
    let total: f64 = q.iter().sum::<f64>() - q[0];
    let changed: f64 = (1..n).flat_map(|i| (1..n).map(move |j| (i, j))).map(|(i, j)| q[i * n + j]).sum();
    if total <= 0.0 {
        return SekValue {
            sek: 0.0,
            rho: 0.0,
            eta: 0.0,
            kappa: 0.0,
            iou_change: 0.0,
            flag: Some(SekFlag::NoChangedPixels),
        };
    }
    let diag: f64 = (1..n).map(|k| q[k * n + k]).sum();
    let rho = diag / total;
    let (rows, cols) = marginals(q, n, convention == SekConvention::ZeroNoChange);
    let eta = rows.iter().zip(&cols).map(|(r, c)| r * c).sum::<f64>() / (total * total);
    let iou_change = changed / total;
    let (kappa, flag) = if (1.0 - eta).abs() < ETA_EPS {
        let k = if (1.0 - rho).abs() < ETA_EPS { 1.0 } else { 0.0 };
        (k, Some(SekFlag::DegenerateChance))
    } else {
        ((rho - eta) / (1.0 - eta), None)
    };
    SekValue {
        sek: (iou_change - 1.0).exp() * kappa,
        rho,
        eta,
        kappa,
        iou_change,
        flag,
    }
}

/// Gradient of [`sek_value`] (zeroed no-change convention) with respect to `q`.
/// Degenerate cases have zero gradient.
pub fn sek_gradient(q: &[f64], n: usize) -> Vec<f64> {
    let v = sek_value(q, n, SekConvention::ZeroNoChange);
    let mut g = vec![0.0; n * n];
    if v.flag.is_some() {
        return g;
    }
    let total: f64 = q.iter().sum::<f64>() - q[0];
    let (rows, cols) = marginals(q, n, true);
    let scale = (v.iou_change - 1.0).exp();
    for a in 0..n {
        for b in 0..n {
            if a == 0 && b == 0 {
                continue;
            }
            let on_diag = if a == b { 1.0 } else { 0.0 };
            let in_change = if a >= 1 && b >= 1 { 1.0 } else { 0.0 };
            let d_rho = (on_diag - v.rho) / total;
            let d_eta = (cols[a] + rows[b]) / (total * total) - 2.0 * v.eta / total;
            let d_kappa = (d_rho - d_eta + v.kappa * d_eta) / (1.0 - v.eta);
            let d_iou = (in_change - v.iou_change) / total;
            g[a * n + b] = scale * (d_iou * v.kappa + d_kappa);
        }
    }
    g
}

struct MiouOp;

impl CustomOp for MiouOp {
    fn forward(&self, inputs: &[&Tensor]) -> Tensor {
        let (i1, i2) = binary_iou(inputs[0].data());
        Tensor::scalar(0.5 * (i1 + i2))
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let grad = miou_gradient(inputs[0].data()).map(|v| v * g.item());
        vec![Some(Tensor::new([2, 2], grad.to_vec()).expect("2x2"))]
    }
}

struct SekOp {
    n: usize,
}

impl CustomOp for SekOp {
    fn forward(&self, inputs: &[&Tensor]) -> Tensor {
        Tensor::scalar(sek_value(inputs[0].data(), self.n, SekConvention::ZeroNoChange).sek)
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let s = g.item();
        let grad = sek_gradient(inputs[0].data(), self.n).into_iter().map(|v| v * s).collect();
        vec![Some(Tensor::new([self.n, self.n], grad).expect("nxn"))]
    }
}

/// Differentiable mean IoU of a soft `(2, 2)` confusion.
pub fn miou_score<'g>(q: Var<'g>) -> Var<'g> {
    assert_eq!(q.shape(), vec![2, 2]);
    q.graph().custom(&[q], MiouOp)
}

/// Differentiable SeK of a soft `(N, N)` confusion (zeroed no-change convention).
pub fn sek_score<'g>(q: Var<'g>) -> Var<'g> {
    let s = q.shape();
    assert!(s.len() == 2 && s[0] == s[1], "square confusion expected, got {s:?}");
    q.graph().custom(&[q], SekOp { n: s[0] })
}

fn any_valid(valid: &[bool]) -> Result<()> {
    if valid.iter().any(|&v| v) {
        Ok(())
    } else {
        Err(ScdError::NoValidPixels)
    }
}

/// Mean cross-entropy over valid pixels; labels indexed `b * H * W + p`.
pub fn cross_entropy<'g>(logits: Var<'g>, labels: &Arc<Vec<usize>>, valid: &Arc<Vec<bool>>) -> Result<Var<'g>> {
    any_valid(valid)?;
    let c = logits.shape()[1];
    if let Some(pos) = labels.iter().zip(valid.iter()).position(|(&l, &v)| v && l >= c) {
        return Err(ScdError::Contract(format!(
            "label {} at position {pos} out of range for {c} classes",
            labels[pos]
        )));
    }
    Ok(logits.cross_entropy(labels.clone(), valid.clone()))
}

fn check_probabilities(probs: &Tensor, valid: &[bool]) -> Result<()> {
    let s = probs.shape();
    let (b, k) = (s[0], s[1]);
    let p: usize = s[2..].iter().product();
    let d = probs.data();
    for bi in 0..b {
        for pi in 0..p {
            if !valid[bi * p + pi] {
                continue;
            }
            let sum: f64 = (0..k).map(|i| d[(bi * k + i) * p + pi]).sum();
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                return Err(ScdError::Contract(format!(
                    "probabilities at batch {bi} pixel {pi} sum to {sum}"
                )));
            }
        }
    }
    Ok(())
}

/// `q[i][j] = sum over valid pixels of p_i * [change == j]`, shape `(2, 2)`.
pub fn soft_binary_confusion<'g>(
    probs: Var<'g>,
    change: &Arc<Vec<usize>>,
    valid: &Arc<Vec<bool>>,
) -> Result<Var<'g>> {
    if probs.shape()[1] != 2 {
        return Err(ScdError::Dimension {
            axis: "channel",
            message: format!("binary probabilities need 2 channels, got {:?}", probs.shape()),
        });
    }
    check_probabilities(&probs.value(), valid)?;
    Ok(probs.soft_confusion(change.clone(), valid.clone(), 2))
}

/// `-log(mIoU + eps)` on the soft binary confusion.
pub fn miou_loss<'g>(
    probs: Var<'g>,
    change: &Arc<Vec<usize>>,
    valid: &Arc<Vec<bool>>,
    eps: f64,
) -> Result<Var<'g>> {
    let q = soft_binary_confusion(probs, change, valid)?;
    Ok(miou_score(q).add_scalar(eps).ln().neg())
}

/// Per-pixel probabilities of the effective label (0 = no change, else the
/// semantic class) from semantic and change probabilities.
pub fn effective_probs<'g>(sem_probs: Var<'g>, change_probs: Var<'g>) -> Var<'g> {
    let n = sem_probs.shape()[1];
    let no_change = change_probs.narrow(1, 0, 1);
    let change = change_probs.narrow(1, 1, 1);
    let p0 = no_change.add(change.mul(sem_probs.narrow(1, 0, 1)));
    let rest = change.mul(sem_probs.narrow(1, 1, n - 1));
    concat(&[p0, rest], 1)
}

/// Soft `(N, N)` confusion of effective labels.
pub fn soft_semantic_confusion<'g>(
    sem_probs: Var<'g>,
    change_probs: Var<'g>,
    gt_effective: &Arc<Vec<usize>>,
    valid: &Arc<Vec<bool>>,
) -> Result<Var<'g>> {
    check_probabilities(&sem_probs.value(), valid)?;
    check_probabilities(&change_probs.value(), valid)?;
    let n = sem_probs.shape()[1];
    Ok(effective_probs(sem_probs, change_probs).soft_confusion(gt_effective.clone(), valid.clone(), n))
}

/// `-log(max((SeK_1 + SeK_2) / 2, 0) + eps)`.
pub fn sek_loss_from_confusions<'g>(q1: Var<'g>, q2: Var<'g>, eps: f64) -> Var<'g> {
    let avg = sek_score(q1).add(sek_score(q2)).scale(0.5);
    avg.clamp_min_zero().add_scalar(eps).ln().neg()
}

#[allow(clippy::too_many_arguments)]
pub fn sek_loss<'g>(
    sem_probs_t1: Var<'g>,
    sem_probs_t2: Var<'g>,
    change_probs: Var<'g>,
    gt_eff_t1: &Arc<Vec<usize>>,
    gt_eff_t2: &Arc<Vec<usize>>,
    valid: &Arc<Vec<bool>>,
    eps: f64,
) -> Result<Var<'g>> {
    let q1 = soft_semantic_confusion(sem_probs_t1, change_probs, gt_eff_t1, valid)?;
    let q2 = soft_semantic_confusion(sem_probs_t2, change_probs, gt_eff_t2, valid)?;
    Ok(sek_loss_from_confusions(q1, q2, eps))
}

/// Flattened labels for one batch.
#[derive(Clone, Debug)]
pub struct LossTargets {
    pub sem_t1: Arc<Vec<usize>>,
    pub sem_t2: Arc<Vec<usize>>,
    pub change: Arc<Vec<usize>>,
    pub valid: Arc<Vec<bool>>,
    pub eff_t1: Arc<Vec<usize>>,
    pub eff_t2: Arc<Vec<usize>>,
}

impl LossTargets {
    /// Builds targets from per-pixel semantic labels, change flags and a void
    /// mask (`true` = excluded). Void pixels get label 0.
    pub fn new(sem_t1: &[u8], sem_t2: &[u8], change: &[bool], void: &[bool]) -> Self {
        let valid: Vec<bool> = void.iter().map(|v| !v).collect();
        let label = |s: &[u8]| -> Vec<usize> {
            s.iter().zip(&valid).map(|(&l, &v)| if v { l as usize } else { 0 }).collect()
        };
        let eff = |s: &[u8]| -> Vec<usize> {
            s.iter()
                .zip(change)
                .zip(&valid)
                .map(|((&l, &c), &v)| if v && c { l as usize } else { 0 })
                .collect()
        };
        Self {
            sem_t1: Arc::new(label(sem_t1)),
            sem_t2: Arc::new(label(sem_t2)),
            change: Arc::new(change.iter().map(|&c| c as usize).collect()),
            eff_t1: Arc::new(eff(sem_t1)),
            eff_t2: Arc::new(eff(sem_t2)),
            valid: Arc::new(valid),
        }
    }
}

/// Values of every term of the objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub ce_bcd: f64,
    pub ce_t1: f64,
    pub ce_t2: f64,
    pub miou_loss: f64,
    /// 0 when the SeK term is disabled.
    pub sek_loss: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str = "iteration,ce_bcd,ce_t1,ce_t2,miou_loss,sek_loss,total";

    pub fn csv_row(&self, iteration: usize) -> String {
        format!(
            "{iteration},{},{},{},{},{},{}",
            self.ce_bcd, self.ce_t1, self.ce_t2, self.miou_loss, self.sek_loss, self.total
        )
    }

    pub fn weighted_sum(&self, w: &LossWeights, use_sek_loss: bool) -> f64 {
        let sek = if use_sek_loss { w.lambda2 * self.sek_loss } else { 0.0 };
        self.ce_bcd + 0.5 * (self.ce_t1 + self.ce_t2) + w.lambda1 * self.miou_loss + sek
    }

    pub fn is_finite(&self) -> bool {
        [self.ce_bcd, self.ce_t1, self.ce_t2, self.miou_loss, self.sek_loss, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// `CE_bcd + (CE_t1 + CE_t2) / 2 + lambda1 L_mIoU + lambda2 L_SeK`.
pub fn total_loss<'g>(
    out: &ModelOutput<'g>,
    targets: &LossTargets,
    weights: &LossWeights,
    use_sek_loss: bool,
) -> Result<(Var<'g>, LossBreakdown)> {
    let t = targets;
    let ce_bcd = cross_entropy(out.bcd, &t.change, &t.valid)?;
    let ce_t1 = cross_entropy(out.sem_t1, &t.sem_t1, &t.valid)?;
    let ce_t2 = cross_entropy(out.sem_t2, &t.sem_t2, &t.valid)?;
    let change_probs = out.bcd.softmax_channels();
    let miou = miou_loss(change_probs, &t.change, &t.valid, weights.epsilon)?;
    let mut total = ce_bcd
        .add(ce_t1.add(ce_t2).scale(0.5))
        .add(miou.scale(weights.lambda1));
    let mut sek_value = 0.0;
    if use_sek_loss {
        let sek = sek_loss(
            out.sem_t1.softmax_channels(),
            out.sem_t2.softmax_channels(),
            change_probs,
            &t.eff_t1,
            &t.eff_t2,
            &t.valid,
            weights.epsilon,
        )?;
        sek_value = sek.item();
        total = total.add(sek.scale(weights.lambda2));
    }
    let breakdown = LossBreakdown {
        ce_bcd: ce_bcd.item(),
        ce_t1: ce_t1.item(),
        ce_t2: ce_t2.item(),
        miou_loss: miou.item(),
        sek_loss: sek_value,
        total: total.item(),
    };
    Ok((total, breakdown))
}
