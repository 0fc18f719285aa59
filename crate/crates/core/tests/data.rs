use std::io::{BufReader, Read};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use swinfer::data::{
    self, balance_classes, batch_iter, load_image_dir, parse_fer_csv, rotate, split, ClassMode, Dataset,
    DatasetManifest, EmotionLabel, Image, Provenance, Sample, Split, SplitFractions, SyntheticSpec,
};
use swinfer::Error;

/// FER-style CSV produced on the fly, so the full-size corpus never sits in
/// memory as text.
struct FerRows {
    rows: Vec<Vec<u8>>,
    order: std::vec::IntoIter<usize>,
    pending: Vec<u8>,
    at: usize,
}

impl FerRows {
    fn new(counts_by_code: &[usize]) -> Self {
        let pixels = vec!["17"; 48 * 48].join(" ");
        let rows = (0..counts_by_code.len())
            .map(|code| format!("{code},{pixels},Training\n").into_bytes())
            .collect();
        let order: Vec<usize> =
            counts_by_code.iter().enumerate().flat_map(|(code, &n)| std::iter::repeat_n(code, n)).collect();
        FerRows { rows, order: order.into_iter(), pending: b"emotion,pixels,Usage\n".to_vec(), at: 0 }
    }
}

impl Read for FerRows {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        if self.at == self.pending.len() {
            match self.order.next() {
                Some(code) => {
                    self.pending = self.rows[code].clone();
                    self.at = 0;
                }
                None => return Ok(0),
            }
        }
        let n = buf.len().min(self.pending.len() - self.at);
        buf[..n].copy_from_slice(&self.pending[self.at..self.at + n]);
        self.at += n;
        Ok(n)
    }
}

#[test]
fn full_fer_corpus_has_disgust_minority() {
    // Per FER code: anger, disgust, fear, happy, sad, surprise, neutral.
    let by_code = [4953, 547, 5121, 8989, 6077, 4002, 6198];
    let ds = parse_fer_csv(BufReader::new(FerRows::new(&by_code)), "fer2013.csv", ClassMode::Seven).unwrap();
    assert_eq!(ds.manifest.len(), 35_887);
    let counts = ds.manifest.counts(None);
    for (code, &n) in by_code.iter().enumerate() {
        assert_eq!(counts[EmotionLabel::from_fer_code(code).unwrap().id()], n);
    }
    let min = (0..7).min_by_key(|&c| counts[c]).unwrap();
    assert_eq!(EmotionLabel::ALL[min], EmotionLabel::Disgust);
    assert_eq!(ds.images[0].width, 48);
    assert_eq!(ds.images[0].channels, 1);
}

fn write_png(path: &std::path::Path, value: u8) {
    image::RgbImage::from_pixel(5, 4, image::Rgb([value, 0, 255])).save(path).unwrap();
}

#[test]
fn image_dir_loads_class_folders() {
    let dir = tempfile::tempdir().unwrap();
    for (class, file, v) in [("happy", "a.png", 10), ("fear", "b.png", 20), ("fear", "c.png", 30)] {
        std::fs::create_dir_all(dir.path().join(class)).unwrap();
        write_png(&dir.path().join(class).join(file), v);
    }
    let ds = load_image_dir(dir.path(), ClassMode::Seven).unwrap();
    let labels: Vec<_> = ds.manifest.samples.iter().map(|s| s.label).collect();
    // Class folders are visited in sorted order.
    assert_eq!(labels, [EmotionLabel::Fear, EmotionLabel::Fear, EmotionLabel::Happy]);
    assert_eq!(ds.images[0].get(0, 0, 0), 20);
    assert_eq!((ds.images[2].width, ds.images[2].height, ds.images[2].channels), (5, 4, 3));
}

#[test]
fn image_dir_empty_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let ds = load_image_dir(dir.path(), ClassMode::Seven).unwrap();
    assert!(ds.manifest.is_empty());
}

#[test]
fn contempt_folder_needs_eight_classes() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("contempt")).unwrap();
    write_png(&dir.path().join("contempt/x.png"), 1);
    assert!(matches!(load_image_dir(dir.path(), ClassMode::Seven), Err(Error::Label(_))));
    let ds = load_image_dir(dir.path(), ClassMode::Eight).unwrap();
    assert_eq!(ds.manifest.samples[0].label, EmotionLabel::Contempt);
}

#[test]
fn unknown_folder_is_label_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("bored")).unwrap();
    assert!(matches!(load_image_dir(dir.path(), ClassMode::Eight), Err(Error::Label(_))));
}

#[test]
fn undecodable_files_are_skipped_and_counted() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("sadness")).unwrap();
    write_png(&dir.path().join("sadness/ok.png"), 1);
    std::fs::write(dir.path().join("sadness/broken.png"), b"not an image").unwrap();
    let ds = load_image_dir(dir.path(), ClassMode::Seven).unwrap();
    assert_eq!(ds.manifest.len(), 1);
    assert_eq!(ds.manifest.skipped, 1);
}

fn textured(side: usize) -> Image {
    let data = (0..side * side)
        .map(|i| {
            let (x, y) = ((i % side) as f64, (i / side) as f64);
            (127.5 + 100.0 * (x * 0.3).sin() * (y * 0.2).cos()) as u8
        })
        .collect();
    Image::new(side, side, 1, data).unwrap()
}

#[test]
fn rotation_round_trip_preserves_centre() {
    let img = textured(48);
    for angle in [-10.0, -3.5, 4.0, 10.0] {
        let back = rotate(&rotate(&img, angle), -angle);
        let (mut sum, mut n) = (0.0, 0);
        for y in 12..36 {
            for x in 12..36 {
                sum += (img.get(x, y, 0) as f64 - back.get(x, y, 0) as f64).abs();
                n += 1;
            }
        }
        let mad = sum / n as f64 / 255.0;
        assert!(mad < 3.0 / 255.0, "angle {angle}: mean abs diff {mad}");
    }
}

/// A manifest with the given per-class counts, all originals in train.
fn manifest_with(counts: &[usize]) -> DatasetManifest {
    let mut m = DatasetManifest::new(ClassMode::from_count(counts.len()).unwrap());
    for (c, &n) in counts.iter().enumerate() {
        for i in 0..n {
            m.samples.push(Sample {
                reference: format!("c{c}/{i}"),
                image: m.samples.len(),
                label: EmotionLabel::ALL[c],
                provenance: Provenance::Original,
                split: Split::Train,
            });
        }
    }
    m
}

fn check_balanced(raw: &DatasetManifest, balanced: &DatasetManifest) {
    let train = balanced.counts(Some(Split::Train));
    assert!(train.iter().all(|&c| c == train[0]), "{train:?}");
    assert_eq!(train[0], *raw.counts(Some(Split::Train)).iter().max().unwrap());
    assert_eq!(balanced.augmented_count(Some(Split::Val)), 0);
    assert_eq!(balanced.augmented_count(Some(Split::Test)), 0);
    assert_eq!(balanced.counts(Some(Split::Val)), raw.counts(Some(Split::Val)));
    assert_eq!(balanced.counts(Some(Split::Test)), raw.counts(Some(Split::Test)));
    for s in &balanced.samples {
        if let Provenance::Augmented { source, transform } = &s.provenance {
            let src = &balanced.samples[*source];
            assert_eq!(src.provenance, Provenance::Original);
            assert_eq!(src.split, Split::Train);
            assert_eq!(src.label, s.label);
            assert!(transform.angle_deg.abs() <= 10.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn split_then_balance_invariants(
        counts in prop::collection::vec(3usize..40, 7),
        seed in any::<u64>(),
    ) {
        let raw = manifest_with(&counts);
        let s = split(&raw, SplitFractions::default(), None, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let again = split(&raw, SplitFractions::default(), None, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(&s, &again);
        prop_assert_eq!(s.counts(None), counts.clone());
        prop_assume!(s.counts(Some(Split::Train)).iter().all(|&c| c > 0));
        let b = balance_classes(&s, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b2 = balance_classes(&s, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(&b, &b2);
        check_balanced(&s, &b);
    }

    #[test]
    fn batches_partition_indices(n in 0usize..200, bs in 1usize..20, seed in any::<u64>(), drop_last in any::<bool>()) {
        let idx: Vec<usize> = (0..n).map(|i| i * 3).collect();
        let batches = batch_iter(&idx, bs, &mut ChaCha8Rng::seed_from_u64(seed), drop_last).unwrap();
        let again = batch_iter(&idx, bs, &mut ChaCha8Rng::seed_from_u64(seed), drop_last).unwrap();
        prop_assert_eq!(&batches, &again);
        let mut flat: Vec<usize> = batches.iter().flatten().copied().collect();
        flat.sort_unstable();
        if drop_last {
            prop_assert_eq!(flat.len(), n / bs * bs);
            prop_assert!(batches.iter().all(|b| b.len() == bs));
        } else {
            prop_assert_eq!(flat, idx);
        }
    }
}

#[test]
fn balancing_the_fer_shape() {
    let raw = manifest_with(&[5000, 5000, 5000, 5000, 600, 5000, 5000]);
    let b = balance_classes(&raw, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(b.counts(Some(Split::Train)), [5000; 7]);
    assert_eq!(b.augmented_count(None), 4400);
    check_balanced(&raw, &b);
}

#[test]
fn fixed_test_count_per_class() {
    let raw = manifest_with(&[700, 620, 900, 550, 505, 800, 1000]);
    let s = split(&raw, SplitFractions::default(), Some(500), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(s.counts(Some(Split::Test)), [500; 7]);
}

#[test]
fn augmented_render_is_reproducible() {
    let ds = data::synthetic("tiles:3:32".parse::<SyntheticSpec>().unwrap(), ClassMode::Seven, 5);
    let b = balance_classes(&split_train_heavy(&ds.manifest), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let ds = Dataset { images: ds.images, manifest: b };
    let aug = (0..ds.manifest.len()).find(|&i| ds.manifest.samples[i].provenance.is_augmented());
    if let Some(i) = aug {
        assert_eq!(ds.render(i, 32).unwrap(), ds.render(i, 32).unwrap());
    }
    for i in 0..ds.manifest.len() {
        let img = ds.render(i, 16).unwrap();
        assert_eq!((img.width, img.height, img.channels), (16, 16, 3));
    }
}

/// Drops one original of class 0 into val so balancing has work to do.
fn split_train_heavy(m: &DatasetManifest) -> DatasetManifest {
    let mut out = m.clone();
    out.samples[0].split = Split::Val;
    out
}

#[test]
fn manifest_records_round_trip() {
    let ds = data::synthetic("textures:2:16".parse::<SyntheticSpec>().unwrap(), ClassMode::Seven, 1);
    let s = split(&ds.manifest, SplitFractions::default(), None, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let b = balance_classes(&split_train_heavy(&s), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    for sample in &b.samples {
        let parsed = Sample::parse_record(&sample.record(), ClassMode::Seven).unwrap();
        assert_eq!(parsed.reference, sample.reference);
        assert_eq!(parsed.label, sample.label);
        assert_eq!(parsed.split, sample.split);
        match (&parsed.provenance, &sample.provenance) {
            (Provenance::Augmented { source: a, transform: ta }, Provenance::Augmented { source: b, transform: tb }) => {
                assert_eq!(a, b);
                assert!((ta.angle_deg - tb.angle_deg).abs() < 1e-9);
                assert_eq!(ta.autocontrast, tb.autocontrast);
            }
            (p, q) => assert_eq!(p, q),
        }
    }
}
