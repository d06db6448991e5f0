//! Shared geometric transforms plus per-timestamp photometric jitter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::BiTemporalSample;

/// Quarter-turn rotation followed by optional flips, applied identically to
/// every map of a sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Geometric {
    /// Counter-clockwise quarter turns, `0..4`.
    pub quarter_turns: u8,
    pub hflip: bool,
    pub vflip: bool,
}

impl Geometric {
    pub fn identity() -> Self {
        Self::default()
    }

    /// Output `(h, w)` for an input of `(h, w)`.
    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        if self.quarter_turns % 2 == 1 {
            (w, h)
        } else {
            (h, w)
        }
    }

    /// Source pixel `(r, c)` in the input for output pixel `(r, c)`.
    fn source(&self, h: usize, w: usize, mut r: usize, mut c: usize) -> (usize, usize) {
        let (oh, ow) = self.output_size(h, w);
        if self.vflip {
            r = oh - 1 - r;
        }
        if self.hflip {
            c = ow - 1 - c;
        }
        match self.quarter_turns % 4 {
            0 => (r, c),
            1 => (c, w - 1 - r),
            2 => (h - 1 - r, w - 1 - c),
            _ => (h - 1 - c, r),
        }
    }

    /// Applies to a planar `(channels, h, w)` buffer.
    pub fn apply<T: Copy>(&self, h: usize, w: usize, data: &[T]) -> Vec<T> {
        let n = h * w;
        let (oh, ow) = self.output_size(h, w);
        let mut out = Vec::with_capacity(data.len());
        for plane in data.chunks_exact(n) {
            for r in 0..oh {
                for c in 0..ow {
                    let (sr, sc) = self.source(h, w, r, c);
                    out.push(plane[sr * w + sc]);
                }
            }
        }
        out
    }

    pub fn apply_sample(&self, s: &BiTemporalSample) -> BiTemporalSample {
        let (h, w) = (s.height, s.width);
        let (oh, ow) = self.output_size(h, w);
        BiTemporalSample {
            name: s.name.clone(),
            height: oh,
            width: ow,
            img_t1: self.apply(h, w, &s.img_t1),
            img_t2: self.apply(h, w, &s.img_t2),
            sem_t1: self.apply(h, w, &s.sem_t1),
            sem_t2: self.apply(h, w, &s.sem_t2),
            change: self.apply(h, w, &s.change),
            void: self.apply(h, w, &s.void),
        }
    }

    /// Random transform; odd quarter turns only for square inputs so batch
    /// shapes never change.
    pub fn random(rng: &mut impl Rng, square: bool) -> Self {
        let quarter_turns = if square {
            rng.random_range(0..4)
        } else {
            2 * rng.random_range(0..2)
        };
        Self {
            quarter_turns,
            hflip: rng.random(),
            vflip: rng.random(),
        }
    }
}

/// Multiplicative jitter factors for one image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Photometric {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

impl Default for Photometric {
    fn default() -> Self {
        Self {
            brightness: 1.0,
            contrast: 1.0,
            saturation: 1.0,
        }
    }
}

/// Each factor is drawn from `[1 - JITTER, 1 + JITTER]`.
pub const JITTER: f64 = 0.1;

impl Photometric {
    pub fn random(rng: &mut impl Rng) -> Self {
        let mut f = || rng.random_range(1.0 - JITTER..=1.0 + JITTER);
        Self {
            brightness: f(),
            contrast: f(),
            saturation: f(),
        }
    }

    /// Brightness scale, contrast about the mean grey level, saturation about
    /// the per-pixel grey value; result clamped to `[0, 1]`.
    pub fn apply(&self, planar: &[f64]) -> Vec<f64> {
        let n = planar.len() / 3;
        let gray = |p: usize, img: &[f64]| 0.299 * img[p] + 0.587 * img[n + p] + 0.114 * img[2 * n + p];
        let mut img: Vec<f64> = planar.iter().map(|v| v * self.brightness).collect();
        let mean = (0..n).map(|p| gray(p, &img)).sum::<f64>() / n.max(1) as f64;
        for v in img.iter_mut() {
            *v = mean + (*v - mean) * self.contrast;
        }
        for p in 0..n {
            let g = gray(p, &img);
            for c in 0..3 {
                let v = &mut img[c * n + p];
                *v = g + (*v - g) * self.saturation;
            }
        }
        for v in img.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        img
    }
}

/// Random geometric transform for the pair plus independent jitter per image.
pub fn augment(sample: &BiTemporalSample, seed: u64) -> BiTemporalSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Geometric::random(&mut rng, sample.height == sample.width);
    let (p1, p2) = (Photometric::random(&mut rng), Photometric::random(&mut rng));
    let mut out = g.apply_sample(sample);
    out.img_t1 = p1.apply(&out.img_t1);
    out.img_t2 = p2.apply(&out.img_t2);
    out
}
