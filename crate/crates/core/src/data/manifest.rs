use std::fmt;
use std::str::FromStr;

use super::labels::{ClassMode, EmotionLabel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown split {s:?} (expected train, val or test)")))
    }
}

/// Augmentation recipe: rotation first, then optional autocontrast.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub angle_deg: f64,
    pub autocontrast: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Provenance {
    Original,
    /// `source` is the manifest index of the original sample.
    Augmented { source: usize, transform: Transform },
}

impl Provenance {
    pub fn is_augmented(&self) -> bool {
        matches!(self, Provenance::Augmented { .. })
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Original => f.write_str("original"),
            Provenance::Augmented { source, transform } => write!(
                f,
                "augmented(source={source};rotate={};autocontrast={})",
                transform.angle_deg, transform.autocontrast as u8
            ),
        }
    }
}

impl FromStr for Provenance {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "original" {
            return Ok(Provenance::Original);
        }
        let bad = || Error::Data(format!("malformed provenance {s:?}"));
        let body = s.strip_prefix("augmented(").and_then(|r| r.strip_suffix(')')).ok_or_else(bad)?;
        let mut source = None;
        let mut angle = None;
        let mut ac = None;
        for part in body.split(';') {
            let (k, v) = part.split_once('=').ok_or_else(bad)?;
            match k {
                "source" => source = v.parse().ok(),
                "rotate" => angle = v.parse().ok(),
                "autocontrast" => ac = Some(v == "1"),
                _ => return Err(bad()),
            }
        }
        Ok(Provenance::Augmented {
            source: source.ok_or_else(bad)?,
            transform: Transform { angle_deg: angle.ok_or_else(bad)?, autocontrast: ac.ok_or_else(bad)? },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// File path, or `csv_path#line` for CSV rows.
    pub reference: String,
    /// Index into the owning dataset's image store. Augmented samples share
    /// the image of their source.
    pub image: usize,
    pub label: EmotionLabel,
    pub provenance: Provenance,
    pub split: Split,
}

impl Sample {
    /// One export record: `path_or_row,label_id,split,provenance`.
    pub fn record(&self) -> String {
        format!("{},{},{},{}", self.reference, self.label.id(), self.split, self.provenance)
    }

    /// Parses a record written by [`record`](Self::record). The image index
    /// is not part of the record and is set to `usize::MAX`.
    pub fn parse_record(line: &str, mode: ClassMode) -> Result<Sample> {
        let mut fields = line.rsplitn(4, ',');
        let bad = || Error::Data(format!("malformed manifest record {line:?}"));
        let provenance = fields.next().ok_or_else(bad)?.parse()?;
        let split = fields.next().ok_or_else(bad)?.parse()?;
        let id: usize = fields.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let reference = fields.next().ok_or_else(bad)?.to_string();
        Ok(Sample { reference, image: usize::MAX, label: EmotionLabel::from_id(id, mode)?, provenance, split })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SourceTag {
    FerCsv(String),
    ImageDir(String),
    Synthetic(String),
}

impl fmt::Display for SourceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceTag::FerCsv(p) => write!(f, "fer-csv:{p}"),
            SourceTag::ImageDir(p) => write!(f, "image-dir:{p}"),
            SourceTag::Synthetic(s) => write!(f, "synthetic:{s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub mode: ClassMode,
    pub samples: Vec<Sample>,
    pub sources: Vec<SourceTag>,
    /// Seed of the last stochastic stage applied, if any.
    pub seed: Option<u64>,
    /// Files that failed to decode during ingest.
    pub skipped: usize,
}

impl DatasetManifest {
    pub fn new(mode: ClassMode) -> Self {
        DatasetManifest { mode, samples: Vec::new(), sources: Vec::new(), seed: None, skipped: 0 }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Per-class counts, restricted to one split if given.
    pub fn counts(&self, split: Option<Split>) -> Vec<usize> {
        let mut c = vec![0; self.mode.num_classes()];
        for s in self.samples.iter().filter(|s| split.is_none_or(|sp| s.split == sp)) {
            c[s.label.id()] += 1;
        }
        c
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.samples[i].split == split).collect()
    }

    pub fn augmented_count(&self, split: Option<Split>) -> usize {
        self.samples
            .iter()
            .filter(|s| s.provenance.is_augmented() && split.is_none_or(|sp| s.split == sp))
            .count()
    }

    /// All records, one per line.
    pub fn export(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            out.push_str(&s.record());
            out.push('\n');
        }
        out
    }
}
