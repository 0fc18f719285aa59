use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::Path;

use log::warn;

use super::image::Image;
use super::labels::{ClassMode, EmotionLabel};
use super::manifest::{DatasetManifest, Provenance, Sample, SourceTag, Split};
use super::Dataset;
use crate::error::{Error, Result};

pub const FER_SIDE: usize = 48;
pub const FER_HEADER: &str = "emotion,pixels,Usage";

/// Loads a FER-2013 style CSV. Rows keep their file order; every sample
/// starts in the train split and is reassigned by [`split`](super::split).
pub fn load_fer_csv(path: &Path, mode: ClassMode) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    parse_fer_csv(BufReader::new(file), &path.display().to_string(), mode)
}

pub fn parse_fer_csv(reader: impl BufRead, origin: &str, mode: ClassMode) -> Result<Dataset> {
    let mut lines = reader.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    let header = header.trim_start_matches('\u{feff}').trim();
    if header != FER_HEADER {
        return Err(Error::Data(format!("{origin}: expected header {FER_HEADER:?}, found {header:?}")));
    }
    let mut ds = Dataset::empty(mode);
    ds.manifest.sources.push(SourceTag::FerCsv(origin.to_string()));
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row_err = |msg: String| Error::Data(format!("{origin} line {line_no}: {msg}"));
        let mut fields = line.split(',');
        let (code, pixels) = match (fields.next(), fields.next()) {
            (Some(c), Some(p)) => (c.trim(), p),
            _ => return Err(row_err("expected emotion,pixels,Usage".into())),
        };
        let code: usize = code.parse().map_err(|_| row_err(format!("emotion {code:?} is not an integer")))?;
        let label = EmotionLabel::from_fer_code(code).map_err(|e| Error::Label(format!("{origin} line {line_no}: {e}")))?;
        let data = pixels
            .split_whitespace()
            .map(|t| t.parse::<u8>().map_err(|_| row_err(format!("pixel {t:?} is not an integer in [0, 255]"))))
            .collect::<Result<Vec<u8>>>()?;
        if data.len() != FER_SIDE * FER_SIDE {
            return Err(row_err(format!("expected {} pixel values, got {}", FER_SIDE * FER_SIDE, data.len())));
        }
        // FER labels are always within the seven shared classes.
        ds.push_original(format!("{origin}#{line_no}"), label, Image::new(FER_SIDE, FER_SIDE, 1, data)?);
    }
    Ok(ds)
}

fn sorted_entries(dir: &Path) -> Result<Vec<fs::DirEntry>> {
    let mut entries = fs::read_dir(dir)?.collect::<std::io::Result<Vec<_>>>()?;
    entries.sort_by_key(|e| e.file_name());
    Ok(entries)
}

/// Loads `<root>/<class-name>/<file>`, decoding every file to RGB. Files
/// that fail to decode are counted in `manifest.skipped`.
pub fn load_image_dir(root: &Path, mode: ClassMode) -> Result<Dataset> {
    if !root.is_dir() {
        return Err(Error::Data(format!("{} is not a directory", root.display())));
    }
    let mut ds = Dataset::empty(mode);
    ds.manifest.sources.push(SourceTag::ImageDir(root.display().to_string()));
    for class_dir in sorted_entries(root)? {
        if !class_dir.file_type()?.is_dir() {
            continue;
        }
        let name = class_dir.file_name();
        let name = name.to_string_lossy();
        let label = EmotionLabel::from_name(&name, mode)
            .map_err(|e| Error::Label(format!("{}: {e}", class_dir.path().display())))?;
        for file in sorted_entries(&class_dir.path())? {
            if !file.file_type()?.is_file() {
                continue;
            }
            let path = file.path();
            match image::open(&path) {
                Ok(img) => {
                    let rgb = img.to_rgb8();
                    let (w, h) = rgb.dimensions();
                    let img = Image::new(w as usize, h as usize, 3, rgb.into_raw())?;
                    ds.push_original(path.display().to_string(), label, img);
                }
                Err(e) => {
                    warn!("skipping {}: {e}", path.display());
                    ds.manifest.skipped += 1;
                }
            }
        }
    }
    if ds.manifest.skipped > 0 {
        warn!("{}: {} undecodable files skipped", root.display(), ds.manifest.skipped);
    }
    Ok(ds)
}

impl Dataset {
    pub fn empty(mode: ClassMode) -> Self {
        Dataset { images: Vec::new(), manifest: DatasetManifest::new(mode) }
    }

    pub(crate) fn push_original(&mut self, reference: String, label: EmotionLabel, image: Image) {
        self.manifest.samples.push(Sample {
            reference,
            image: self.images.len(),
            label,
            provenance: Provenance::Original,
            split: Split::Train,
        });
        self.images.push(image);
    }
}
