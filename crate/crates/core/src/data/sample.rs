use crate::error::{Result, ScdError};

/// One co-registered image pair with its labels. Images are `(3, H, W)`
/// planar in `[0, 1]`; label maps are `(H, W)` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct BiTemporalSample {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub img_t1: Vec<f64>,
    pub img_t2: Vec<f64>,
    /// 0 = no change, `1..N-1` semantic ids.
    pub sem_t1: Vec<u8>,
    pub sem_t2: Vec<u8>,
    pub change: Vec<bool>,
    /// `true` = excluded from losses and metrics.
    pub void: Vec<bool>,
}

impl BiTemporalSample {
    /// Builds a sample whose change mask is derived from the labels
    /// (changed where either timestamp carries a semantic id) and no void pixels.
    pub fn from_labels(
        name: impl Into<String>,
        height: usize,
        width: usize,
        img_t1: Vec<f64>,
        img_t2: Vec<f64>,
        sem_t1: Vec<u8>,
        sem_t2: Vec<u8>,
    ) -> Result<Self> {
        let change = sem_t1.iter().zip(&sem_t2).map(|(&a, &b)| a != 0 || b != 0).collect();
        let void = vec![false; height * width];
        let s = Self {
            name: name.into(),
            height,
            width,
            img_t1,
            img_t2,
            sem_t1,
            sem_t2,
            change,
            void,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.pixels();
        let bad = |what: &str, len: usize, want: usize| {
            Err(ScdError::Dimension {
                axis: "pixels",
                message: format!("{}: {what} has {len} values, expected {want}", self.name),
            })
        };
        for (what, len) in [("img_t1", self.img_t1.len()), ("img_t2", self.img_t2.len())] {
            if len != 3 * n {
                return bad(what, len, 3 * n);
            }
        }
        for (what, len) in [
            ("sem_t1", self.sem_t1.len()),
            ("sem_t2", self.sem_t2.len()),
            ("change", self.change.len()),
            ("void", self.void.len()),
        ] {
            if len != n {
                return bad(what, len, n);
            }
        }
        Ok(())
    }

    /// Pixels where only one timestamp carries a semantic id, or where the
    /// change mask disagrees with the labels. Reported, never repaired.
    pub fn inconsistent_pixels(&self) -> usize {
        (0..self.pixels())
            .filter(|&p| {
                let (a, b) = (self.sem_t1[p] != 0, self.sem_t2[p] != 0);
                a != b || self.change[p] != (a || b)
            })
            .count()
    }

    pub fn max_label(&self) -> u8 {
        self.sem_t1.iter().chain(&self.sem_t2).copied().max().unwrap_or(0)
    }
}
