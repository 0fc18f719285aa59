//! Run configuration and its flat `key = value` file format.
//!
//! One setting per line, `#` starts a comment, lists are comma separated.
//! Every key has a default (the toy configuration); unknown and repeated
//! keys are errors. [`RunConfig::to_text`] writes every key, and parsing
//! that text gives back an equal config.

use std::fmt;
use std::str::FromStr;

use crate::data::{ClassMode, SplitFractions};
use crate::error::{Error, Result};
use crate::optim::OptimizerConfig;
use crate::swin::{SwinConfig, NUM_STAGES};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn bits(self) -> u32 {
        match self {
            Precision::F32 => 32,
            Precision::F64 => 64,
        }
    }
}

impl FromStr for Precision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "32" => Ok(Precision::F32),
            "64" => Ok(Precision::F64),
            _ => Err(Error::Config(format!("precision must be 32 or 64, got {s:?}"))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.bits())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// `num_classes` always mirrors `classes`.
    pub model: SwinConfig,
    pub optim: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// `--data` style sources: CSV path, class-folder root or `synthetic:<spec>`.
    pub data: Vec<String>,
    pub split: SplitFractions,
    /// Fixed per-class test count; `None` uses the test fraction.
    pub test_per_class: Option<usize>,
    pub classes: ClassMode,
    pub seed: u64,
    pub output_dir: String,
    pub precision: Precision,
    /// Record elapsed seconds in the curve log; when off the column is 0 so
    /// repeated runs produce identical files.
    pub log_wall_time: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: SwinConfig::default(),
            optim: OptimizerConfig::default(),
            epochs: 25,
            batch_size: 16,
            data: Vec::new(),
            split: SplitFractions::default(),
            test_per_class: None,
            classes: ClassMode::Seven,
            seed: 0,
            output_dir: "runs/toy".into(),
            precision: Precision::F32,
            log_wall_time: true,
        }
    }
}

pub const KEYS: [&str; 27] = [
    "image_size",
    "patch_size",
    "in_channels",
    "embed_dim",
    "depths",
    "num_heads",
    "window_size",
    "mlp_ratio",
    "use_se",
    "se_reduction",
    "drop_rate",
    "base_lr",
    "momentum",
    "rho",
    "sam",
    "lr_step",
    "lr_decay",
    "epochs",
    "batch_size",
    "data",
    "split",
    "test_per_class",
    "classes",
    "seed",
    "output_dir",
    "precision",
    "log_wall_time",
];

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|x| parse(key, x.trim())).collect()
}

fn parse_stages(key: &str, v: &str) -> Result<[usize; NUM_STAGES]> {
    let list: Vec<usize> = parse_list(key, v)?;
    list.try_into()
        .map_err(|l: Vec<usize>| Error::Config(format!("{key}: expected {NUM_STAGES} values, got {}", l.len())))
}

fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let m = &mut self.model;
        let o = &mut self.optim;
        match key {
            "image_size" => m.image_size = parse(key, v)?,
            "patch_size" => m.patch_size = parse(key, v)?,
            "in_channels" => m.in_channels = parse(key, v)?,
            "embed_dim" => m.embed_dim = parse(key, v)?,
            "depths" => m.depths = parse_stages(key, v)?,
            "num_heads" => m.num_heads = parse_stages(key, v)?,
            "window_size" => m.window_size = parse(key, v)?,
            "mlp_ratio" => m.mlp_ratio = parse(key, v)?,
            "use_se" => m.use_se = parse_bool(key, v)?,
            "se_reduction" => m.se_reduction = parse(key, v)?,
            "drop_rate" => m.drop_rate = parse(key, v)?,
            "base_lr" => o.base_lr = parse(key, v)?,
            "momentum" => o.momentum = parse(key, v)?,
            "rho" => o.rho = parse(key, v)?,
            "sam" => o.sam = parse_bool(key, v)?,
            "lr_step" => o.lr_step = parse(key, v)?,
            "lr_decay" => o.lr_decay = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "data" => {
                self.data = if v.is_empty() { Vec::new() } else { v.split(',').map(|s| s.trim().to_string()).collect() }
            }
            "split" => {
                let f: Vec<f64> = parse_list(key, v)?;
                let [train, val, test] = f[..] else {
                    return Err(Error::Config(format!("split: expected train,val,test fractions, got {v:?}")));
                };
                self.split = SplitFractions { train, val, test };
            }
            "test_per_class" => self.test_per_class = if v == "none" { None } else { Some(parse(key, v)?) },
            "classes" => self.classes = ClassMode::from_count(parse(key, v)?)?,
            "seed" => self.seed = parse(key, v)?,
            "output_dir" => self.output_dir = v.to_string(),
            "precision" => self.precision = v.parse()?,
            "log_wall_time" => self.log_wall_time = parse_bool(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        self.model.num_classes = self.classes.num_classes();
        Ok(())
    }

    /// Textual value of one key, in the form [`set`](Self::set) accepts.
    pub fn get(&self, key: &str) -> Result<String> {
        let m = &self.model;
        let o = &self.optim;
        Ok(match key {
            "image_size" => m.image_size.to_string(),
            "patch_size" => m.patch_size.to_string(),
            "in_channels" => m.in_channels.to_string(),
            "embed_dim" => m.embed_dim.to_string(),
            "depths" => join(&m.depths),
            "num_heads" => join(&m.num_heads),
            "window_size" => m.window_size.to_string(),
            "mlp_ratio" => m.mlp_ratio.to_string(),
            "use_se" => m.use_se.to_string(),
            "se_reduction" => m.se_reduction.to_string(),
            "drop_rate" => m.drop_rate.to_string(),
            "base_lr" => o.base_lr.to_string(),
            "momentum" => o.momentum.to_string(),
            "rho" => o.rho.to_string(),
            "sam" => o.sam.to_string(),
            "lr_step" => o.lr_step.to_string(),
            "lr_decay" => o.lr_decay.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "data" => self.data.join(","),
            "split" => join(&[self.split.train, self.split.val, self.split.test]),
            "test_per_class" => self.test_per_class.map_or("none".into(), |t| t.to_string()),
            "classes" => self.classes.num_classes().to_string(),
            "seed" => self.seed.to_string(),
            "output_dir" => self.output_dir.clone(),
            "precision" => self.precision.to_string(),
            "log_wall_time" => self.log_wall_time.to_string(),
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        })
    }

    /// Parses a config file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", i + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: key {key:?} given twice", i + 1)));
            }
            cfg.set(key, value).map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(cfg)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        self.set(k.trim(), v)
    }

    /// Every key, one per line, in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        KEYS.iter().map(|k| format!("{k} = {}\n", self.get(k).expect("known key"))).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optim.validate()?;
        self.split.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if self.model.num_classes != self.classes.num_classes() {
            return Err(Error::Config("model num_classes disagrees with classes".into()));
        }
        if self.data.iter().any(|d| d.is_empty() || d.contains([',', '#'])) {
            return Err(Error::Config("data sources must be non-empty and free of ',' and '#'".into()));
        }
        if self.output_dir.is_empty() || self.output_dir.contains('#') {
            return Err(Error::Config("output_dir must be non-empty and free of '#'".into()));
        }
        Ok(())
    }
}
