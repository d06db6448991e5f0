use crate::error::{Result, ScdError};

/// Label scored for a pixel: 0 where there is no change, else the semantic id.
pub fn effective_label(sem: u8, change: bool) -> u8 {
    if change {
        sem
    } else {
        0
    }
}

/// `n x n` integer counts, `q[pred][gt]`, index 0 = no-change.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n: usize,
    q: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n: usize) -> Self {
        Self { n, q: vec![0; n * n] }
    }

    pub fn from_counts(n: usize, q: Vec<u64>) -> Result<Self> {
        if q.len() != n * n {
            return Err(ScdError::Contract(format!("{} counts for a {n}x{n} matrix", q.len())));
        }
        Ok(Self { n, q })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, pred: usize, gt: usize) -> u64 {
        self.q[pred * self.n + gt]
    }

    pub fn counts(&self) -> &[u64] {
        &self.q
    }

    pub fn add(&mut self, pred: usize, gt: usize) {
        self.q[pred * self.n + gt] += 1;
    }

    pub fn total(&self) -> u64 {
        self.q.iter().sum()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.q.iter().map(|&v| v as f64).collect()
    }

    /// Collapse to no-change (0) versus change (any id >= 1), row-major 2x2.
    pub fn binary(&self) -> [u64; 4] {
        let mut b = [0u64; 4];
        for i in 0..self.n {
            for j in 0..self.n {
                b[2 * (i > 0) as usize + (j > 0) as usize] += self.get(i, j);
            }
        }
        b
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.n != self.n {
            return Err(ScdError::Contract(format!(
                "cannot merge {}x{} into {}x{}",
                other.n, other.n, self.n, self.n
            )));
        }
        for (a, b) in self.q.iter_mut().zip(&other.q) {
            *a += b;
        }
        Ok(())
    }

    /// Adds one label-map pair using effective labels; void pixels are skipped.
    pub fn accumulate(
        &mut self,
        pred_sem: &[u8],
        pred_change: &[bool],
        gt_sem: &[u8],
        gt_change: &[bool],
        void: &[bool],
    ) -> Result<()> {
        let len = gt_sem.len();
        for (name, l) in [
            ("pred_sem", pred_sem.len()),
            ("pred_change", pred_change.len()),
            ("gt_change", gt_change.len()),
            ("void", void.len()),
        ] {
            if l != len {
                return Err(ScdError::Dimension {
                    axis: "pixels",
                    message: format!("{name} has {l} pixels, expected {len}"),
                });
            }
        }
        for p in 0..len {
            if void[p] {
                continue;
            }
            let pred = effective_label(pred_sem[p], pred_change[p]) as usize;
            let gt = effective_label(gt_sem[p], gt_change[p]) as usize;
            if pred >= self.n || gt >= self.n {
                return Err(ScdError::data(
                    "label map",
                    format!("pixel {p}: label {} out of range for {} classes", pred.max(gt), self.n),
                ));
            }
            self.add(pred, gt);
        }
        Ok(())
    }
}
