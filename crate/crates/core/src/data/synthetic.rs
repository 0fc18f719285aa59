//! Seeded synthetic datasets for smoke runs and sanity checks.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::image::Image;
use super::labels::ClassMode;
use super::manifest::SourceTag;
use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    /// Oriented gratings: orientation and period depend on the class, phase
    /// and pixel noise are random.
    Textures,
    /// Checkerboards of two class-specific colours. The label is readable
    /// from any single patch.
    Tiles,
}

/// `<kind>:<per_class>[:<side>]`, e.g. `textures:16:64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub per_class: usize,
    pub side: usize,
}

impl FromStr for SyntheticSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad synthetic source {s:?}; expected textures|tiles:<per_class>[:<side>]"));
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() < 2 || parts.len() > 3 {
            return Err(bad());
        }
        let kind = match parts[0] {
            "textures" => SyntheticKind::Textures,
            "tiles" => SyntheticKind::Tiles,
            _ => return Err(bad()),
        };
        let per_class = parts[1].parse().map_err(|_| bad())?;
        let side = parts.get(2).map(|v| v.parse()).transpose().map_err(|_| bad())?.unwrap_or(64);
        if per_class == 0 || side < 8 {
            return Err(bad());
        }
        Ok(SyntheticSpec { kind, per_class, side })
    }
}

impl std::fmt::Display for SyntheticSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self.kind {
            SyntheticKind::Textures => "textures",
            SyntheticKind::Tiles => "tiles",
        };
        write!(f, "{kind}:{}:{}", self.per_class, self.side)
    }
}

fn texture(class: usize, k: usize, side: usize, rng: &mut impl Rng) -> Image {
    let theta = class as f64 * PI / k as f64;
    let period = 6.0 + 3.0 * (class % 3) as f64;
    let phase = rng.random_range(0.0..2.0 * PI);
    let noise = Normal::new(0.0, 12.0).expect("valid sigma");
    let (s, c) = theta.sin_cos();
    let mut data = Vec::with_capacity(side * side * 3);
    for y in 0..side {
        for x in 0..side {
            let u = x as f64 * c + y as f64 * s;
            let base = 128.0 + 90.0 * (2.0 * PI * u / period + phase).sin();
            for _ in 0..3 {
                data.push((base + noise.sample(rng)).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Image { width: side, height: side, channels: 3, data }
}

fn class_colour(class: usize, salt: usize) -> [u8; 3] {
    let h = (class * 7 + salt * 3) as u32;
    [40 + (h * 53 % 180) as u8, 40 + (h * 97 % 180) as u8, 40 + (h * 29 % 180) as u8]
}

fn tiles(class: usize, side: usize, rng: &mut impl Rng) -> Image {
    let (a, b) = (class_colour(class, 0), class_colour(class, 1));
    let tile = 8;
    let (ox, oy) = (rng.random_range(0..tile), rng.random_range(0..tile));
    let mut data = Vec::with_capacity(side * side * 3);
    for y in 0..side {
        for x in 0..side {
            let odd = ((x + ox) / tile + (y + oy) / tile) % 2 == 1;
            data.extend_from_slice(if odd { &b } else { &a });
        }
    }
    Image { width: side, height: side, channels: 3, data }
}

/// Generates `per_class` images for every class of `mode`, class-major.
pub fn synthetic(spec: SyntheticSpec, mode: ClassMode, seed: u64) -> Dataset {
    let mut rng = stream_rng(seed, Stream::Synthetic);
    let k = mode.num_classes();
    let mut ds = Dataset::empty(mode);
    ds.manifest.sources.push(SourceTag::Synthetic(spec.to_string()));
    for &label in mode.labels() {
        for i in 0..spec.per_class {
            let img = match spec.kind {
                SyntheticKind::Textures => texture(label.id(), k, spec.side, &mut rng),
                SyntheticKind::Tiles => tiles(label.id(), spec.side, &mut rng),
            };
            ds.push_original(format!("synthetic:{spec}#{}:{i}", label.name()), label, img);
        }
    }
    ds
}
