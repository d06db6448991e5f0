//! Synthetic bi-temporal scenes with exactly known transitions.
//!
//! Each scene is a background region plus random rectangles and ellipses,
//! every region carrying one land-cover class. For T2 each region draws a new
//! class from its row of a [`TransitionTable`]; pixels whose class changed get
//! semantic ids in both label maps, all other pixels are 0.

use std::ops::RangeInclusive;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::palette::{write_image, write_label, Palette};
use super::BiTemporalSample;
use crate::error::{Result, ScdError};
use crate::metrics::report::write_transitions;
use crate::metrics::TransitionMatrix;

/// Row-stochastic `K x K` table over semantic classes `1..=K`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionTable {
    k: usize,
    p: Vec<f64>,
}

impl TransitionTable {
    pub fn new(k: usize, p: Vec<f64>) -> Result<Self> {
        if k == 0 || p.len() != k * k {
            return Err(ScdError::Config(format!("transition table needs {k}x{k} entries, got {}", p.len())));
        }
        for (r, row) in p.chunks_exact(k).enumerate() {
            let s: f64 = row.iter().sum();
            if row.iter().any(|v| !(*v >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                return Err(ScdError::Config(format!(
                    "transition row {} is not a probability distribution (sum {s})",
                    r + 1
                )));
            }
        }
        Ok(Self { k, p })
    }

    /// No region ever changes.
    pub fn identity(k: usize) -> Self {
        let p = (0..k * k).map(|i| if i / k == i % k { 1.0 } else { 0.0 }).collect();
        Self { k, p }
    }

    /// Keep the class with probability `stay`, otherwise move uniformly to
    /// another class.
    pub fn uniform_change(k: usize, stay: f64) -> Result<Self> {
        if k == 1 {
            return Ok(Self::identity(1));
        }
        let off = (1.0 - stay) / (k - 1) as f64;
        Self::new(k, (0..k * k).map(|i| if i / k == i % k { stay } else { off }).collect())
    }

    /// Identity except that class `from` always becomes `to` (1-based ids).
    pub fn single(k: usize, from: usize, to: usize) -> Result<Self> {
        if from == 0 || to == 0 || from > k || to > k {
            return Err(ScdError::Config(format!("transition {from}->{to} outside 1..={k}")));
        }
        let mut t = Self::identity(k);
        t.p[(from - 1) * k + (from - 1)] = 0.0;
        t.p[(from - 1) * k + (to - 1)] = 1.0;
        Ok(t)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.p[(from - 1) * self.k + (to - 1)]
    }

    fn sample(&self, from: usize, rng: &mut impl Rng) -> usize {
        let row = &self.p[(from - 1) * self.k..from * self.k];
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (j, &v) in row.iter().enumerate() {
            acc += v;
            if u < acc {
                return j + 1;
            }
        }
        // rounding left u above the last partial sum
        row.iter().rposition(|&v| v > 0.0).unwrap_or(from - 1) + 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    /// Square side in pixels.
    pub size: usize,
    /// Ids including the no-change id 0.
    pub n_classes: usize,
    pub n_shapes: RangeInclusive<usize>,
    /// Bounding-box side range in pixels.
    pub side: RangeInclusive<usize>,
    pub ellipse_fraction: f64,
    /// Fixed background class; random when `None`.
    pub background_class: Option<usize>,
    /// Fixed class for every shape; random when `None`.
    pub shape_class: Option<usize>,
    pub noise_sigma: f64,
    /// Per-image brightness offset drawn from `[-illumination, illumination]`.
    pub illumination: f64,
    /// Shape corners and sides snap to multiples of this.
    pub grid: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            size: 64,
            n_classes: 4,
            n_shapes: 3..=6,
            side: 12..=32,
            ellipse_fraction: 0.3,
            background_class: None,
            shape_class: None,
            noise_sigma: 0.02,
            illumination: 0.05,
            grid: 1,
        }
    }
}

impl GenConfig {
    pub fn validate(&self, table: &TransitionTable) -> Result<()> {
        let k = self.n_classes.saturating_sub(1);
        let (lo, hi) = (*self.side.start(), *self.side.end());
        if self.size == 0 || lo == 0 || lo > hi || hi > self.size || self.grid == 0 || lo < self.grid {
            return Err(ScdError::Dimension {
                axis: "size",
                message: format!(
                    "degenerate scene: size {}, side {lo}..={hi}, grid {}",
                    self.size, self.grid
                ),
            });
        }
        if self.n_classes < 2 || self.n_classes > 256 {
            return Err(ScdError::Config(format!("n_classes {} outside 2..=256", self.n_classes)));
        }
        if self.n_shapes.start() > self.n_shapes.end() {
            return Err(ScdError::Config("empty n_shapes range".into()));
        }
        if table.k() != k {
            return Err(ScdError::Config(format!(
                "transition table is {}x{} but there are {k} semantic classes",
                table.k(),
                table.k()
            )));
        }
        for c in [self.background_class, self.shape_class].into_iter().flatten() {
            if c == 0 || c > k {
                return Err(ScdError::Config(format!("class {c} outside 1..={k}")));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.illumination >= 0.0) {
            return Err(ScdError::Config("noise_sigma and illumination must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.ellipse_fraction) {
            return Err(ScdError::Config("ellipse_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Mean colour of semantic class `c` (1-based), well separated in RGB.
pub fn class_color(c: usize) -> [f64; 3] {
    const BASE: [[f64; 3]; 8] = [
        [0.2, 0.6, 0.2],
        [0.6, 0.4, 0.2],
        [0.2, 0.3, 0.8],
        [0.85, 0.2, 0.2],
        [0.9, 0.85, 0.3],
        [0.5, 0.2, 0.6],
        [0.2, 0.8, 0.8],
        [0.5, 0.5, 0.5],
    ];
    if c >= 1 && c <= BASE.len() {
        BASE[c - 1]
    } else {
        let f = |m: usize| ((c * m) % 97) as f64 / 96.0 * 0.8 + 0.1;
        [f(31), f(57), f(73)]
    }
}

/// Generated samples and the exact from→to counts over their changed pixels.
#[derive(Clone, Debug)]
pub struct Generated {
    pub samples: Vec<BiTemporalSample>,
    pub transitions: TransitionMatrix,
}

struct Shape {
    r0: usize,
    c0: usize,
    h: usize,
    w: usize,
    ellipse: bool,
}

impl Shape {
    fn contains(&self, r: usize, c: usize) -> bool {
        if r < self.r0 || c < self.c0 || r >= self.r0 + self.h || c >= self.c0 + self.w {
            return false;
        }
        if !self.ellipse {
            return true;
        }
        let dy = (r - self.r0) as f64 + 0.5 - self.h as f64 / 2.0;
        let dx = (c - self.c0) as f64 + 0.5 - self.w as f64 / 2.0;
        let (ry, rx) = (self.h as f64 / 2.0, self.w as f64 / 2.0);
        (dy / ry).powi(2) + (dx / rx).powi(2) <= 1.0
    }
}

fn snapped(rng: &mut impl Rng, range: RangeInclusive<usize>, grid: usize) -> usize {
    let lo = range.start().div_ceil(grid);
    let hi = range.end() / grid;
    rng.random_range(lo..=hi.max(lo)) * grid
}

fn render(size: usize, cover: &[usize], rng: &mut ChaCha8Rng, cfg: &GenConfig) -> Vec<f64> {
    let n = size * size;
    let offset = if cfg.illumination > 0.0 {
        rng.random_range(-cfg.illumination..=cfg.illumination)
    } else {
        0.0
    };
    let noise = Normal::new(0.0, cfg.noise_sigma).expect("sigma validated");
    let mut img = vec![0.0; 3 * n];
    for ch in 0..3 {
        for p in 0..n {
            let e = if cfg.noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
            img[ch * n + p] = (class_color(cover[p])[ch] + offset + e).clamp(0.0, 1.0);
        }
    }
    img
}

fn scene(
    index: usize,
    cfg: &GenConfig,
    table: &TransitionTable,
    rng: &mut ChaCha8Rng,
    transitions: &mut TransitionMatrix,
) -> Result<BiTemporalSample> {
    let k = cfg.n_classes - 1;
    let size = cfg.size;
    let pick = |rng: &mut ChaCha8Rng, fixed: Option<usize>| fixed.unwrap_or_else(|| rng.random_range(1..=k));
    // region 0 is the background
    let mut region_class = vec![pick(rng, cfg.background_class)];
    let mut region = vec![0usize; size * size];
    let count = rng.random_range(cfg.n_shapes.clone());
    for _ in 0..count {
        let h = snapped(rng, cfg.side.clone(), cfg.grid);
        let w = snapped(rng, cfg.side.clone(), cfg.grid);
        let shape = Shape {
            r0: snapped(rng, 0..=size - h, cfg.grid),
            c0: snapped(rng, 0..=size - w, cfg.grid),
            h,
            w,
            ellipse: rng.random_bool(cfg.ellipse_fraction),
        };
        let id = region_class.len();
        region_class.push(pick(rng, cfg.shape_class));
        for r in shape.r0..shape.r0 + h {
            for c in shape.c0..shape.c0 + w {
                if shape.contains(r, c) {
                    region[r * size + c] = id;
                }
            }
        }
    }
    let region_to: Vec<usize> = region_class.iter().map(|&c| table.sample(c, rng)).collect();
    let cover1: Vec<usize> = region.iter().map(|&r| region_class[r]).collect();
    let cover2: Vec<usize> = region.iter().map(|&r| region_to[r]).collect();
    let mut sem_t1 = vec![0u8; size * size];
    let mut sem_t2 = vec![0u8; size * size];
    for p in 0..size * size {
        if cover1[p] != cover2[p] {
            transitions.add(cover1[p], cover2[p]);
            sem_t1[p] = cover1[p] as u8;
            sem_t2[p] = cover2[p] as u8;
        }
    }
    let img_t1 = render(size, &cover1, rng, cfg);
    let img_t2 = render(size, &cover2, rng, cfg);
    BiTemporalSample::from_labels(format!("{index:04}.png"), size, size, img_t1, img_t2, sem_t1, sem_t2)
}

/// Generates `n` scenes from `seed`; identical arguments give identical output.
pub fn generate(n: usize, cfg: &GenConfig, table: &TransitionTable, seed: u64) -> Result<Generated> {
    if n == 0 {
        return Err(ScdError::Config("sample count must be >= 1".into()));
    }
    cfg.validate(table)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transitions = TransitionMatrix::new(cfg.n_classes - 1);
    let samples = (0..n)
        .map(|i| scene(i, cfg, table, &mut rng, &mut transitions))
        .collect::<Result<Vec<_>>>()?;
    Ok(Generated { samples, transitions })
}

/// Writes a dataset directory readable by [`super::DiskDataset`], plus
/// `palette.json` and the realized transition counts.
pub fn write_dataset(dir: &Path, generated: &Generated, palette: &Palette) -> Result<()> {
    for sub in super::loader::SUBDIRS {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| ScdError::io(&d, e))?;
    }
    for s in &generated.samples {
        let (h, w) = (s.height, s.width);
        write_image(&dir.join("im1").join(&s.name), h, w, &s.img_t1)?;
        write_image(&dir.join("im2").join(&s.name), h, w, &s.img_t2)?;
        write_label(&dir.join("label1").join(&s.name), h, w, &s.sem_t1, palette)?;
        write_label(&dir.join("label2").join(&s.name), h, w, &s.sem_t2, palette)?;
    }
    palette.save(&dir.join("palette.json"))?;
    write_transitions(dir, "transitions", &generated.transitions)
}
