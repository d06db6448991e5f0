//! On-disk datasets laid out as `root[/split]/{im1,im2,label1,label2}/<name>`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use super::palette::{read_image, read_label, Palette};
use super::BiTemporalSample;
use crate::error::{Result, ScdError};

pub const SUBDIRS: [&str; 4] = ["im1", "im2", "label1", "label2"];

/// Indexed access to samples, shared by on-disk and in-memory datasets.
pub trait SampleSource: Send + Sync {
    fn len(&self) -> usize;

    fn get(&self, index: usize) -> Result<BiTemporalSample>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Samples already decoded in memory.
#[derive(Clone, Debug, Default)]
pub struct InMemory(pub Vec<BiTemporalSample>);

impl SampleSource for InMemory {
    fn len(&self) -> usize {
        self.0.len()
    }

    fn get(&self, index: usize) -> Result<BiTemporalSample> {
        Ok(self.0[index].clone())
    }
}

/// Lazily decoded dataset directory. File names are matched across the four
/// subdirectories and ordered lexicographically.
#[derive(Clone, Debug)]
pub struct DiskDataset {
    dir: PathBuf,
    names: Vec<String>,
    palette: Palette,
    /// Non-fatal findings from indexing, e.g. an empty directory.
    pub warnings: Vec<String>,
}

fn list(dir: &Path) -> Result<BTreeSet<String>> {
    let mut names = BTreeSet::new();
    let rd = std::fs::read_dir(dir).map_err(|e| ScdError::io(dir, e))?;
    for entry in rd {
        let entry = entry.map_err(|e| ScdError::io(dir, e))?;
        if entry.file_type().map_err(|e| ScdError::io(dir, e))?.is_file() {
            names.insert(entry.file_name().to_string_lossy().into_owned());
        }
    }
    Ok(names)
}

impl DiskDataset {
    /// Indexes `root/split` (or `root` when `split` is empty).
    pub fn open(root: &Path, split: &str, palette: Palette) -> Result<Self> {
        let dir = if split.is_empty() { root.to_path_buf() } else { root.join(split) };
        if !dir.is_dir() {
            return Err(ScdError::data(&dir, "dataset directory does not exist"));
        }
        let mut warnings = Vec::new();
        let present: Vec<bool> = SUBDIRS.iter().map(|s| dir.join(s).is_dir()).collect();
        if present.iter().all(|p| !p) {
            warnings.push(format!("{}: no im1/im2/label1/label2 subdirectories, 0 samples", dir.display()));
            return Ok(Self {
                dir,
                names: Vec::new(),
                palette,
                warnings,
            });
        }
        if let Some(i) = present.iter().position(|p| !p) {
            return Err(ScdError::data(dir.join(SUBDIRS[i]), "missing subdirectory"));
        }
        let lists = SUBDIRS.iter().map(|s| list(&dir.join(s))).collect::<Result<Vec<_>>>()?;
        let all: BTreeSet<String> = lists.iter().flatten().cloned().collect();
        for name in &all {
            if let Some(i) = lists.iter().position(|l| !l.contains(name)) {
                return Err(ScdError::data(
                    dir.join(SUBDIRS[i]).join(name),
                    "missing pair member",
                ));
            }
        }
        if all.is_empty() {
            warnings.push(format!("{}: dataset directory is empty, 0 samples", dir.display()));
        }
        Ok(Self {
            dir,
            names: all.into_iter().collect(),
            palette,
            warnings,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn palette(&self) -> &Palette {
        &self.palette
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl SampleSource for DiskDataset {
    fn len(&self) -> usize {
        self.names.len()
    }

    fn get(&self, index: usize) -> Result<BiTemporalSample> {
        let name = &self.names[index];
        let path = |sub: &str| self.dir.join(sub).join(name);
        let (h, w, img_t1) = read_image(&path("im1"))?;
        let (h2, w2, img_t2) = read_image(&path("im2"))?;
        let (h3, w3, sem_t1) = read_label(&path("label1"), &self.palette)?;
        let (h4, w4, sem_t2) = read_label(&path("label2"), &self.palette)?;
        for (p, hh, ww) in [("im2", h2, w2), ("label1", h3, w3), ("label2", h4, w4)] {
            if (hh, ww) != (h, w) {
                return Err(ScdError::data(
                    path(p),
                    format!("size {hh}x{ww} differs from im1 {h}x{w}"),
                ));
            }
        }
        BiTemporalSample::from_labels(name.clone(), h, w, img_t1, img_t2, sem_t1, sem_t2)
    }
}

/// `(sample name, inconsistent pixel count)` for every sample with at least one
/// pixel labelled as changed in only one timestamp.
pub fn qa_report(source: &dyn SampleSource) -> Result<Vec<(String, usize)>> {
    let mut out = Vec::new();
    for i in 0..source.len() {
        let s = source.get(i)?;
        let bad = s.inconsistent_pixels();
        if bad > 0 {
            out.push((s.name, bad));
        }
    }
    Ok(out)
}

/// Palette for a configured dataset: an explicit file wins, then the
/// built-in table, then `palette.json` inside a synthetic dataset.
pub fn resolve_palette(cfg: &crate::config::DataConfig) -> Result<Palette> {
    use crate::config::DatasetKind;
    if let Some(p) = &cfg.palette {
        return Palette::load(p);
    }
    match cfg.dataset {
        DatasetKind::Second => Ok(Palette::second()),
        DatasetKind::LandsatScd => Ok(Palette::landsat_scd()),
        DatasetKind::Synthetic => Palette::load(&cfg.data_dir.join("palette.json")),
    }
}

/// Opens the dataset described by a data config.
pub fn open_dataset(cfg: &crate::config::DataConfig) -> Result<DiskDataset> {
    DiskDataset::open(&cfg.data_dir, &cfg.split, resolve_palette(cfg)?)
}
