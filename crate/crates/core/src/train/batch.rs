use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scd_autograd::Tensor;

use crate::data::BiTemporalSample;
use crate::error::{Result, ScdError};
use crate::loss::LossTargets;

/// Stacked images and flattened targets for one optimisation step.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `(B, 3, H, W)`.
    pub img_t1: Tensor,
    pub img_t2: Tensor,
    pub targets: LossTargets,
}

/// Stacks the images of same-sized samples.
pub fn images(samples: &[BiTemporalSample]) -> Result<(Tensor, Tensor)> {
    let first = samples.first().ok_or_else(|| ScdError::Contract("empty batch".into()))?;
    let (h, w) = (first.height, first.width);
    let mut a = Vec::with_capacity(samples.len() * 3 * h * w);
    let mut b = Vec::with_capacity(a.capacity());
    for s in samples {
        if (s.height, s.width) != (h, w) {
            return Err(ScdError::Dimension {
                axis: "height",
                message: format!("{} is {}x{}, batch is {h}x{w}", s.name, s.height, s.width),
            });
        }
        a.extend_from_slice(&s.img_t1);
        b.extend_from_slice(&s.img_t2);
    }
    let shape = [samples.len(), 3, h, w];
    let t = |v| Tensor::new(shape, v).expect("lengths validated per sample");
    Ok((t(a), t(b)))
}

pub fn check_labels(s: &BiTemporalSample, num_classes: usize) -> Result<()> {
    let max = s.max_label() as usize;
    if max >= num_classes {
        return Err(ScdError::data(
            &s.name,
            format!("label {max} but the model has {num_classes} classes"),
        ));
    }
    Ok(())
}

impl Batch {
    /// Labels must be below `num_classes`.
    pub fn from_samples(samples: &[BiTemporalSample], num_classes: usize) -> Result<Self> {
        let (img_t1, img_t2) = images(samples)?;
        let mut sem1 = Vec::new();
        let mut sem2 = Vec::new();
        let mut change = Vec::new();
        let mut void = Vec::new();
        for s in samples {
            check_labels(s, num_classes)?;
            sem1.extend_from_slice(&s.sem_t1);
            sem2.extend_from_slice(&s.sem_t2);
            change.extend_from_slice(&s.change);
            void.extend_from_slice(&s.void);
        }
        Ok(Self {
            img_t1,
            img_t2,
            targets: LossTargets::new(&sem1, &sem2, &change, &void),
        })
    }
}

/// SplitMix64 finaliser, used to derive independent per-use seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sample indices for `iterations` batches: a fresh shuffle per epoch,
/// batches drawn consecutively and wrapping into the next epoch.
pub fn batch_plan(len: usize, batch_size: usize, iterations: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xba7c));
    let mut order: Vec<usize> = Vec::new();
    let mut pos = 0;
    (0..iterations)
        .map(|_| {
            (0..batch_size)
                .map(|_| {
                    if pos == order.len() {
                        order = (0..len).collect();
                        order.shuffle(&mut rng);
                        pos = 0;
                    }
                    pos += 1;
                    order[pos - 1]
                })
                .collect()
        })
        .collect()
}
