//! Model and run configuration, stored as flat `key = value` TOML files.
//!
//! Keys (all optional, defaults shown by [`RunConfig::default`]):
//!
//! | key | type | meaning |
//! |-----|------|---------|
//! | `stage_channels` | 4 integers | encoder widths C1..C4 |
//! | `stage_depths` | 4 integers | VSS blocks per stage L1..L4 |
//! | `num_classes` | integer ≥ 2 | semantic classes, index 0 = no-change |
//! | `state_dim` | integer | SSM hidden size per channel |
//! | `input_height`, `input_width` | integers, multiples of 32 | image size |
//! | `use_cga`, `use_sek_loss`, `use_diff_branch`, `use_fft_branch` | booleans | ablation switches |
//! | `seed` | integer | initialisation / sampling seed |
//! | `lambda1`, `lambda2`, `epsilon` | reals | loss weights |
//! | `lr`, `weight_decay`, `batch_size`, `iterations`, `grad_clip` | optimiser |
//! | `eval_interval` | integer | checkpoint/eval period in iterations |
//! | `dataset`, `data_dir`, `split`, `palette`, `augment` | data source |
//! | `out_dir` | path | run directory |

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, ScdError};

/// Channel reduction of every CBAM channel-attention MLP.
pub const CBAM_REDUCTION: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub use_cga: bool,
    pub use_sek_loss: bool,
    pub use_diff_branch: bool,
    pub use_fft_branch: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            use_cga: true,
            use_sek_loss: true,
            use_diff_branch: true,
            use_fft_branch: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub stage_channels: [usize; 4],
    pub stage_depths: [usize; 4],
    pub num_classes: usize,
    pub state_dim: usize,
    pub input_height: usize,
    pub input_width: usize,
    #[serde(flatten)]
    pub ablation: Ablation,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl ModelConfig {
    /// Desk-scale configuration that trains on a CPU in minutes.
    pub fn toy() -> Self {
        Self {
            stage_channels: [16, 32, 64, 128],
            stage_depths: [1, 1, 2, 1],
            num_classes: 4,
            state_dim: 8,
            input_height: 64,
            input_width: 64,
            ablation: Ablation::default(),
            seed: 0,
        }
    }

    /// The VMamba-Base geometry (C = 128..1024, L = 2,2,15,2).
    pub fn vmamba_base(num_classes: usize, size: usize) -> Self {
        Self {
            stage_channels: [128, 256, 512, 1024],
            stage_depths: [2, 2, 15, 2],
            num_classes,
            state_dim: 16,
            input_height: size,
            input_width: size,
            ablation: Ablation::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.contains(&0) || self.stage_depths.contains(&0) {
            return Err(ScdError::Config(
                "stage_channels and stage_depths must be positive".into(),
            ));
        }
        if self.num_classes < 2 {
            return Err(ScdError::Config(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        if self.num_classes > 256 {
            return Err(ScdError::Config("num_classes must fit in 8 bits".into()));
        }
        if self.state_dim == 0 {
            return Err(ScdError::Config("state_dim must be positive".into()));
        }
        check_input_size(self.input_height, self.input_width)?;
        if let Some(&c) = self.stage_channels.iter().find(|&&c| c < CBAM_REDUCTION) {
            return Err(ScdError::Config(format!(
                "stage width {c} is below the CBAM reduction ratio {CBAM_REDUCTION}"
            )));
        }
        Ok(())
    }

    /// Spatial size `(h, w)` of stage `i` (0-based), stride `4 * 2^i`.
    pub fn stage_size(&self, stage: usize) -> (usize, usize) {
        let stride = 4 << stage;
        (self.input_height / stride, self.input_width / stride)
    }

    /// Number of input-channel groups concatenated by each fusion block.
    pub fn fusion_width_factor(&self) -> usize {
        let mut k = 2;
        if self.ablation.use_fft_branch {
            k += 2;
        }
        if self.ablation.use_diff_branch {
            k += 1;
        }
        k
    }
}

/// Checks that an image size survives the stride-4 stem plus three halvings.
pub fn check_input_size(h: usize, w: usize) -> Result<()> {
    if h == 0 || h % 32 != 0 {
        return Err(ScdError::Dimension {
            axis: "height",
            message: format!("{h} is not a positive multiple of 32"),
        });
    }
    if w == 0 || w % 32 != 0 {
        return Err(ScdError::Dimension {
            axis: "width",
            message: format!("{w} is not a positive multiple of 32"),
        });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.15,
            lambda2: 0.3,
            epsilon: 1e-6,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(ScdError::Config("lambda1 and lambda2 must be >= 0".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(ScdError::Config("epsilon must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub iterations: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 5e-3,
            batch_size: 4,
            iterations: 1500,
            grad_clip: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    /// Directory produced by the synthetic generator (palette file inside).
    #[default]
    Synthetic,
    Second,
    LandsatScd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub dataset: DatasetKind,
    pub data_dir: PathBuf,
    pub split: String,
    pub palette: Option<PathBuf>,
    pub augment: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Synthetic,
            data_dir: PathBuf::from("data/synthetic"),
            split: String::new(),
            palette: None,
            augment: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub model: ModelConfig,
    #[serde(flatten)]
    pub loss: LossWeights,
    #[serde(flatten)]
    pub optim: OptimizerConfig,
    #[serde(flatten)]
    pub data: DataConfig,
    pub eval_interval: usize,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::toy(),
            loss: LossWeights::default(),
            optim: OptimizerConfig::default(),
            data: DataConfig::default(),
            eval_interval: 500,
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        if self.optim.iterations == 0 {
            return Err(ScdError::Config("iterations must be >= 1".into()));
        }
        if !(self.optim.lr > 0.0) {
            return Err(ScdError::Config("lr must be > 0".into()));
        }
        if self.optim.batch_size == 0 {
            return Err(ScdError::Config("batch_size must be >= 1".into()));
        }
        if let Some(c) = self.optim.grad_clip {
            if !(c > 0.0) {
                return Err(ScdError::Config("grad_clip must be > 0".into()));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| ScdError::Config(e.message().to_string()))?;
        let known = known_keys();
        if let Some(bad) = table.keys().find(|k| !known.contains(k.as_str())) {
            return Err(ScdError::Config(format!("unknown key `{bad}`")));
        }
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| ScdError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ScdError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config always serialises")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()).map_err(|e| ScdError::io(path, e))
    }
}

fn known_keys() -> BTreeSet<String> {
    let text = RunConfig::default().to_toml_string();
    let table: toml::Table = toml::from_str(&text).expect("default config parses");
    let mut keys: BTreeSet<String> = table.keys().cloned().collect();
    // optional keys absent from the default serialisation
    keys.insert("grad_clip".into());
    keys.insert("palette".into());
    keys
}
