//! Balancing, stratified splitting and minibatching. All three operate on
//! the manifest only; pixels are rendered later from the recorded recipe.

use rand::seq::{index, SliceRandom};
use rand::Rng;

use super::labels::EmotionLabel;
use super::manifest::{DatasetManifest, Provenance, Sample, Split, Transform};
use crate::error::{Error, Result};

pub const MAX_ROTATION_DEG: f64 = 10.0;
pub const ROTATION_PROB: f64 = 0.5;
pub const AUTOCONTRAST_PROB: f64 = 0.5;

/// Rotation with probability 0.5 by an angle uniform in `[−10°, 10°]`
/// (angle 0 otherwise), then autocontrast with probability 0.5.
pub fn random_transform(rng: &mut impl Rng) -> Transform {
    let angle_deg = if rng.random_bool(ROTATION_PROB) {
        rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG)
    } else {
        0.0
    };
    Transform { angle_deg, autocontrast: rng.random_bool(AUTOCONTRAST_PROB) }
}

/// Equalizes per-class train counts by appending augmented copies of train
/// originals. Each round augments every original of a short class once;
/// the last round's surplus is pruned uniformly at random.
///
/// Val and test samples are passed through untouched.
pub fn balance_classes(manifest: &DatasetManifest, rng: &mut impl Rng) -> Result<DatasetManifest> {
    let k = manifest.mode.num_classes();
    let counts = manifest.counts(Some(Split::Train));
    let mut originals: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, s) in manifest.samples.iter().enumerate() {
        if s.split == Split::Train && !s.provenance.is_augmented() {
            originals[s.label.id()].push(i);
        }
    }
    for (c, orig) in originals.iter().enumerate() {
        if orig.is_empty() {
            return Err(Error::Data(format!(
                "class {} has no original training samples to balance from",
                EmotionLabel::ALL[c]
            )));
        }
    }
    let target = *counts.iter().max().expect("at least seven classes");
    let mut out = manifest.clone();
    for c in 0..k {
        let need = target - counts[c];
        if need == 0 {
            continue;
        }
        let orig = &originals[c];
        let rounds = need.div_ceil(orig.len());
        let mut generated = Vec::with_capacity(rounds * orig.len());
        for _ in 0..rounds {
            for &src in orig {
                let s = &manifest.samples[src];
                generated.push(Sample {
                    reference: s.reference.clone(),
                    image: s.image,
                    label: s.label,
                    provenance: Provenance::Augmented { source: src, transform: random_transform(rng) },
                    split: Split::Train,
                });
            }
        }
        let mut keep = index::sample(rng, generated.len(), need).into_vec();
        keep.sort_unstable();
        let mut generated: Vec<Option<Sample>> = generated.into_iter().map(Some).collect();
        out.samples.extend(keep.into_iter().map(|i| generated[i].take().expect("indices are distinct")));
    }
    Ok(out)
}

/// Split fractions `(train, val, test)`, summing to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions { train: 0.8, val: 0.1, test: 0.1 }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions {}, {}, {} must lie in [0, 1] and sum to 1",
                self.train, self.val, self.test
            )));
        }
        Ok(())
    }
}

/// Stratified assignment of originals to train/val/test. Per class, the
/// samples are shuffled, then `round(n·val)` go to val and `round(n·test)`
/// (or exactly `test_per_class`) to test; the rest train. With a fixed test
/// count, val takes its share of what remains.
pub fn split(
    manifest: &DatasetManifest,
    fractions: SplitFractions,
    test_per_class: Option<usize>,
    rng: &mut impl Rng,
) -> Result<DatasetManifest> {
    fractions.validate()?;
    if manifest.augmented_count(None) > 0 {
        return Err(Error::Contract("split expects originals only; balance after splitting".into()));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); manifest.mode.num_classes()];
    for (i, s) in manifest.samples.iter().enumerate() {
        by_class[s.label.id()].push(i);
    }
    let mut out = manifest.clone();
    for (c, idx) in by_class.iter_mut().enumerate() {
        idx.shuffle(rng);
        let n = idx.len();
        let (n_val, n_test) = match test_per_class {
            None => {
                let v = (n as f64 * fractions.val).round() as usize;
                let t = (n as f64 * fractions.test).round() as usize;
                (v.min(n), t.min(n - v.min(n)))
            }
            Some(t) => {
                if t > n {
                    return Err(Error::Data(format!(
                        "class {} has {n} samples, cannot hold {t} test samples",
                        EmotionLabel::ALL[c]
                    )));
                }
                let denom = fractions.train + fractions.val;
                let v = if denom > 0.0 { ((n - t) as f64 * fractions.val / denom).round() as usize } else { 0 };
                (v, t)
            }
        };
        for (j, &i) in idx.iter().enumerate() {
            out.samples[i].split = if j < n_val {
                Split::Val
            } else if j < n_val + n_test {
                Split::Test
            } else {
                Split::Train
            };
        }
    }
    Ok(out)
}

/// Shuffles `indices` and chunks them. With `drop_last`, a trailing partial
/// batch is discarded.
pub fn batch_iter(indices: &[usize], batch_size: usize, rng: &mut impl Rng, drop_last: bool) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut order = indices.to_vec();
    order.shuffle(rng);
    Ok(order
        .chunks(batch_size)
        .filter(|b| !drop_last || b.len() == batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}
