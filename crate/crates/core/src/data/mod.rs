//! Dataset ingest, augmentation, balancing and splitting.
//!
//! A [`Dataset`] owns decoded pixels plus a [`DatasetManifest`] that refers
//! to them by index. Balancing adds manifest entries that reuse the source
//! image and record a [`Transform`]; pixels for those are produced on
//! demand by [`Dataset::render`].

pub mod image;
pub mod labels;
pub mod loaders;
pub mod manifest;
pub mod pipeline;
pub mod synthetic;

use std::path::Path;

pub use self::image::{autocontrast, denormalize, normalize, resize_bilinear, rotate, Image};
pub use labels::{ClassMode, EmotionLabel};
pub use loaders::{load_fer_csv, load_image_dir, parse_fer_csv};
pub use manifest::{DatasetManifest, Provenance, Sample, SourceTag, Split, Transform};
pub use pipeline::{balance_classes, batch_iter, split, SplitFractions};
pub use synthetic::{synthetic, SyntheticKind, SyntheticSpec};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<Image>,
    pub manifest: DatasetManifest,
}

impl Dataset {
    /// Concatenates datasets of the same class mode, in order.
    pub fn merge(parts: Vec<Dataset>) -> Result<Dataset> {
        let mut iter = parts.into_iter();
        let mut out = iter.next().ok_or_else(|| Error::Config("no data sources given".into()))?;
        for part in iter {
            if part.manifest.mode != out.manifest.mode {
                return Err(Error::Config("cannot merge datasets with different class modes".into()));
            }
            let (img_off, sample_off) = (out.images.len(), out.manifest.samples.len());
            out.images.extend(part.images);
            out.manifest.samples.extend(part.manifest.samples.into_iter().map(|mut s| {
                s.image += img_off;
                if let Provenance::Augmented { source, .. } = &mut s.provenance {
                    *source += sample_off;
                }
                s
            }));
            out.manifest.sources.extend(part.manifest.sources);
            out.manifest.skipped += part.manifest.skipped;
        }
        Ok(out)
    }

    /// RGB pixels of sample `index` at `side × side`: augmentation (if any)
    /// at native resolution, then channel replication, then resize.
    pub fn render(&self, index: usize, side: usize) -> Result<Image> {
        let sample = self
            .manifest
            .samples
            .get(index)
            .ok_or_else(|| Error::Contract(format!("sample {index} out of range")))?;
        let src = self
            .images
            .get(sample.image)
            .ok_or_else(|| Error::Contract(format!("sample {index} refers to missing image {}", sample.image)))?;
        let mut img = match sample.provenance {
            Provenance::Original => src.clone(),
            Provenance::Augmented { transform, .. } => {
                let r = rotate(src, transform.angle_deg);
                if transform.autocontrast {
                    autocontrast(&r)
                } else {
                    r
                }
            }
        };
        img = img.to_rgb()?;
        if img.width != side || img.height != side {
            img = resize_bilinear(&img, side, side)?;
        }
        Ok(img)
    }

    /// Normalized `[side, side, 3]` model input for sample `index`.
    pub fn input<T: Real>(&self, index: usize, side: usize) -> Result<Tensor<T>> {
        Ok(normalize(&self.render(index, side)?))
    }
}

/// Loads one `--data` argument: `synthetic:<spec>`, a directory of class
/// folders, or a FER-style CSV file.
pub fn load_source(source: &str, mode: ClassMode, seed: u64) -> Result<Dataset> {
    if let Some(spec) = source.strip_prefix("synthetic:") {
        return Ok(synthetic(spec.parse()?, mode, seed));
    }
    let path = Path::new(source);
    if path.is_dir() {
        load_image_dir(path, mode)
    } else if path.is_file() {
        load_fer_csv(path, mode)
    } else {
        Err(Error::Data(format!("data source {source} does not exist")))
    }
}
