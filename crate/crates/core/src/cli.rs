//! Subcommand implementations behind the `swinfer` binary. Each returns
//! the text to print on stdout.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::checkpoint::Checkpoint;
use crate::config::{Precision, RunConfig};
use crate::data::{self, balance_classes, split, ClassMode, Dataset, EmotionLabel, Split};
use crate::error::{Error, Result};
use crate::metrics::{metrics, report_emit, ReportFormat};
use crate::rng::{stream_rng, Stream};
use crate::tensor::{kernels, Real};
use crate::train::{self, Trainer};

/// Options shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct CommonArgs {
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub data: Vec<String>,
    pub classes: Option<usize>,
    pub seed: Option<u64>,
    pub precision: Option<String>,
}

impl CommonArgs {
    /// Config file (or `base`) with `--set` overrides, then the dedicated flags.
    pub fn resolve(&self, base: RunConfig) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
                RunConfig::parse(&text)?
            }
            None => base,
        };
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        if !self.data.is_empty() {
            cfg.data = self.data.clone();
        }
        if let Some(c) = self.classes {
            cfg.set("classes", &c.to_string())?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(p) = &self.precision {
            cfg.precision = p.parse()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn cmd_train(args: &CommonArgs) -> Result<String> {
    let cfg = args.resolve(RunConfig::default())?;
    // Load and validate data before any training work.
    let dataset = train::prepare_dataset(&cfg)?;
    match cfg.precision {
        Precision::F32 => train_with::<f32>(cfg, &dataset),
        Precision::F64 => train_with::<f64>(cfg, &dataset),
    }
}

fn train_with<T: Real>(cfg: RunConfig, dataset: &Dataset) -> Result<String> {
    let out_dir = PathBuf::from(&cfg.output_dir);
    std::fs::create_dir_all(&out_dir)?;
    std::fs::write(out_dir.join("config.conf"), cfg.to_text())?;
    std::fs::write(out_dir.join("manifest.csv"), dataset.manifest.export())?;
    let mut trainer = Trainer::<T>::new(cfg)?;
    let report = trainer.fit(dataset, Some(&out_dir), |r| {
        eprintln!(
            "epoch {:>3}  lr {:<8}  train loss {:.4} acc {:.4}  val loss {:.4} acc {:.4}",
            r.epoch, r.lr, r.train_loss, r.train_acc, r.val_loss, r.val_acc
        );
        true
    })?;
    Ok(format!(
        "trained {} epochs; best val_acc {:.4} at epoch {}\ncheckpoints: {}, {}\ncurve: {}\n",
        report.curve.rows.len(),
        report.best_val_acc,
        report.best_epoch,
        out_dir.join(train::BEST_CHECKPOINT).display(),
        out_dir.join(train::LAST_CHECKPOINT).display(),
        out_dir.join(train::CURVE_FILE).display(),
    ))
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub common: CommonArgs,
    pub ckpt: PathBuf,
    pub format: ReportFormat,
    pub split: Split,
    /// Score an eight-class checkpoint on seven-class data by taking the
    /// argmax over the first seven logits.
    pub remap: bool,
}

/// Reloads and re-splits the configured sources exactly as training did;
/// no balancing, so every split holds originals only.
pub fn eval_dataset(cfg: &RunConfig) -> Result<Dataset> {
    if cfg.data.is_empty() {
        return Err(Error::Config("no data sources given (use --data)".into()));
    }
    let parts = cfg
        .data
        .iter()
        .map(|s| data::load_source(s, cfg.classes, cfg.seed))
        .collect::<Result<Vec<_>>>()?;
    let mut ds = Dataset::merge(parts)?;
    ds.manifest = split(&ds.manifest, cfg.split, cfg.test_per_class, &mut stream_rng(cfg.seed, Stream::Split))?;
    Ok(ds)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<String> {
    let ckpt = Checkpoint::load(&args.ckpt)?;
    let mut cfg = args.common.resolve(ckpt.config.clone())?;
    let mut model_cfg = cfg.clone();
    let remap_to = if args.remap {
        if ckpt.config.classes != ClassMode::Eight || cfg.classes != ClassMode::Seven {
            return Err(Error::Config("--remap needs an 8-class checkpoint evaluated with --classes 7".into()));
        }
        model_cfg.set("classes", "8")?;
        Some(7)
    } else {
        None
    };
    ckpt.check_compatible(&model_cfg)?;
    if args.common.precision.is_none() {
        cfg.precision = ckpt.precision;
    }
    let dataset = eval_dataset(&cfg)?;
    let indices = dataset.manifest.indices(args.split);
    if indices.is_empty() {
        return Err(Error::Data(format!("the {} split is empty", args.split)));
    }
    let cm = match cfg.precision {
        Precision::F32 => train::evaluate(&ckpt.to_model::<f32>()?, &dataset, &indices, remap_to)?.0,
        Precision::F64 => train::evaluate(&ckpt.to_model::<f64>()?, &dataset, &indices, remap_to)?.0,
    };
    Ok(report_emit(&metrics(&cm)?, args.format))
}

/// Class probabilities for one image file.
pub fn predict_probs<T: Real>(ckpt: &Checkpoint, image: &Path) -> Result<Vec<f64>> {
    let img = image::open(image).map_err(|e| Error::Input(format!("cannot decode {}: {e}", image.display())))?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let img = data::Image::new(w as usize, h as usize, 3, rgb.into_raw())?;
    let side = ckpt.config.model.image_size;
    let img = data::resize_bilinear(&img, side, side)?;
    let model = ckpt.to_model::<T>()?;
    let z = train::logits(&model, data::normalize::<T>(&img))?;
    let k = z.len();
    let probs = kernels::softmax(&z.reshape(&[1, k])?, 1)?;
    Ok(probs.to_f64_vec())
}

pub fn cmd_predict(ckpt_path: &Path, image: &Path, precision: Option<&str>, format: ReportFormat) -> Result<String> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let precision = precision.map(str::parse).transpose()?.unwrap_or(ckpt.precision);
    let probs = match precision {
        Precision::F32 => predict_probs::<f32>(&ckpt, image)?,
        Precision::F64 => predict_probs::<f64>(&ckpt, image)?,
    };
    let best = train::predict_class(&probs, probs.len());
    let name = |i: usize| EmotionLabel::ALL[i].name();
    let mut out = String::new();
    match format {
        ReportFormat::Table => {
            let _ = writeln!(out, "{}", name(best));
            for (i, p) in probs.iter().enumerate() {
                let _ = writeln!(out, "  {:<10}{p:.6}", name(i));
            }
        }
        ReportFormat::Csv => {
            let _ = writeln!(out, "class,probability");
            for (i, p) in probs.iter().enumerate() {
                let _ = writeln!(out, "{},{p}", name(i));
            }
        }
        ReportFormat::Json => {
            let map: serde_json::Map<String, serde_json::Value> =
                probs.iter().enumerate().map(|(i, p)| (name(i).to_string(), (*p).into())).collect();
            let v = serde_json::json!({ "class": name(best), "probabilities": map });
            out = serde_json::to_string_pretty(&v).expect("serializes") + "\n";
        }
    }
    Ok(out)
}

/// Per-class counts before and after balancing, plus the split table.
pub fn cmd_data_stats(args: &CommonArgs, format: ReportFormat) -> Result<String> {
    if args.data.is_empty() && args.config.is_none() {
        return Err(Error::Config("data-stats needs at least one --data source".into()));
    }
    let cfg = args.resolve(RunConfig::default())?;
    let raw = eval_dataset(&cfg)?;
    let balanced = balance_classes(&raw.manifest, &mut stream_rng(cfg.seed, Stream::Balance))?;
    let before = raw.manifest.counts(Some(Split::Train));
    let after = balanced.counts(Some(Split::Train));
    let total = raw.manifest.counts(None);
    let val = raw.manifest.counts(Some(Split::Val));
    let test = raw.manifest.counts(Some(Split::Test));
    let mut out = String::new();
    let cols = ["class", "total", "train", "train_balanced", "augmented", "val", "test"];
    match format {
        ReportFormat::Json => return Err(Error::Config("data-stats supports --format table or csv".into())),
        ReportFormat::Csv => {
            let _ = writeln!(out, "{}", cols.join(","));
            for (c, label) in cfg.classes.labels().iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    label.name(),
                    total[c],
                    before[c],
                    after[c],
                    after[c] - before[c],
                    val[c],
                    test[c]
                );
            }
        }
        ReportFormat::Table => {
            let _ = writeln!(out, "{:<10}{:>8}{:>8}{:>16}{:>11}{:>7}{:>7}", cols[0], cols[1], cols[2], cols[3], cols[4], cols[5], cols[6]);
            for (c, label) in cfg.classes.labels().iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{:<10}{:>8}{:>8}{:>16}{:>11}{:>7}{:>7}",
                    label.name(),
                    total[c],
                    before[c],
                    after[c],
                    after[c] - before[c],
                    val[c],
                    test[c]
                );
            }
            if raw.manifest.skipped > 0 {
                let _ = writeln!(out, "skipped undecodable files: {}", raw.manifest.skipped);
            }
        }
    }
    Ok(out)
}
