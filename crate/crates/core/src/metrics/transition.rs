use crate::error::{Result, ScdError};

/// From-to counts over changed pixels for semantic ids `1..=k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransitionMatrix {
    k: usize,
    counts: Vec<u64>,
    /// Changed pixels where either timestamp carries the no-change id.
    pub skipped: u64,
}

impl TransitionMatrix {
    /// `k = num_classes - 1` semantic classes.
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
            skipped: 0,
        }
    }

    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != k * k {
            return Err(ScdError::Contract(format!("{} counts for a {k}x{k} matrix", counts.len())));
        }
        Ok(Self { k, counts, skipped: 0 })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Count for `from -> to` with 1-based semantic ids.
    pub fn count(&self, from: usize, to: usize) -> u64 {
        self.counts[(from - 1) * self.k + (to - 1)]
    }

    /// Records one `from -> to` pixel with 1-based ids.
    pub fn add(&mut self, from: usize, to: usize) {
        self.counts[(from - 1) * self.k + (to - 1)] += 1;
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// True when no changed pixel was recorded.
    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    /// Row-major percentages of all recorded changed pixels; zeros when empty.
    pub fn percentages(&self) -> Vec<f64> {
        let total = self.total();
        if total == 0 {
            return vec![0.0; self.counts.len()];
        }
        self.counts.iter().map(|&c| 100.0 * c as f64 / total as f64).collect()
    }

    /// Largest cell as `(from, to, percentage)` with 1-based ids.
    pub fn dominant(&self) -> Option<(usize, usize, f64)> {
        if self.is_empty() {
            return None;
        }
        let pct = self.percentages();
        let (idx, _) = self
            .counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .expect("non-empty");
        Some((idx / self.k + 1, idx % self.k + 1, pct[idx]))
    }

    pub fn accumulate(&mut self, sem_t1: &[u8], sem_t2: &[u8], change: &[bool], void: &[bool]) -> Result<()> {
        if sem_t2.len() != sem_t1.len() || change.len() != sem_t1.len() || void.len() != sem_t1.len() {
            return Err(ScdError::Dimension {
                axis: "pixels",
                message: "transition inputs differ in size".into(),
            });
        }
        for p in 0..sem_t1.len() {
            if !change[p] || void[p] {
                continue;
            }
            let (a, b) = (sem_t1[p] as usize, sem_t2[p] as usize);
            if a == 0 || b == 0 {
                self.skipped += 1;
                continue;
            }
            if a > self.k || b > self.k {
                return Err(ScdError::data(
                    "label map",
                    format!("pixel {p}: label {} out of range for {} classes", a.max(b), self.k + 1),
                ));
            }
            self.add(a, b);
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.k != self.k {
            return Err(ScdError::Contract("transition matrices differ in size".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.skipped += other.skipped;
        Ok(())
    }
}
