//! Plain-text `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored; unknown keys are rejected so
//! typos surface immediately. [`ExperimentConfig::to_config_string`] emits
//! every key and parses back to the same configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::losses::{GroundTruthMode, PairingMode};
use crate::model::{Architecture, FreezePolicy};
use crate::simhist::Kernel;
use crate::seeds::{derive_seed, stream};
use crate::synth::ManifoldConfig;
use crate::train::{OptimizerKind, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub arch: Architecture,
    pub per_date_count: usize,
    pub test_per_date_count: usize,
    /// Proportion-table file overriding the default 5-class schedule.
    pub schedule: Option<PathBuf>,
    pub manifold_radius: f64,
    pub manifold_arc: f64,
    pub manifold_offset: f64,
    pub noise: f64,
    pub hard_mode: bool,
    pub train: TrainConfig,
    /// Skip stage 1 (frozen randomly initialized backbone).
    pub baseline: bool,
    pub deterministic: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let m = ManifoldConfig::default();
        ExperimentConfig {
            seed: 42,
            arch: Architecture::default(),
            per_date_count: 2000,
            test_per_date_count: 500,
            schedule: None,
            manifold_radius: m.radius,
            manifold_arc: m.arc,
            manifold_offset: m.offset,
            noise: m.noise,
            hard_mode: m.hard_mode,
            train: TrainConfig::default(),
            baseline: false,
            deterministic: false,
        }
    }
}

fn sizes(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn manifold(&self) -> ManifoldConfig {
        ManifoldConfig {
            input_dim: self.arch.input_dim,
            classes: self.arch.classes,
            radius: self.manifold_radius,
            arc: self.manifold_arc,
            offset: self.manifold_offset,
            noise: self.noise,
            hard_mode: self.hard_mode,
            seed: derive_seed(self.seed, stream::MANIFOLD),
        }
    }

    /// Training settings with the root seed and thread policy applied.
    pub fn train_config(&self) -> TrainConfig {
        let mut t = self.train.clone();
        t.seed = self.seed;
        if self.deterministic {
            t.threads = 1;
        }
        t
    }

    pub fn model_seed(&self) -> u64 {
        derive_seed(self.seed, stream::MODEL_INIT)
    }

    pub fn bag_seed(&self) -> u64 {
        derive_seed(self.seed, stream::BAGS)
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.train.validate()?;
        if self.per_date_count == 0 {
            return Err(Error::InvalidParameter("per_date_count must be >= 1".into()));
        }
        Ok(())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut c = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, lineno, format!("expected key = value, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            c.set(key, value)
                .map_err(|msg| Error::parse(origin, lineno, msg))?;
        }
        c.validate()
            .map_err(|e| Error::parse(origin, 0, e.to_string()))?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        fn num<N: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<N, String> {
            v.parse().map_err(|_| format!("bad value `{v}` for `{key}`"))
        }
        fn flag(key: &str, v: &str) -> std::result::Result<bool, String> {
            match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(format!("bad boolean `{v}` for `{key}`")),
            }
        }
        fn list(key: &str, v: &str) -> std::result::Result<Vec<usize>, String> {
            if v.is_empty() {
                return Ok(Vec::new());
            }
            v.split(',').map(|t| num(key, t.trim())).collect()
        }
        let t = &mut self.train;
        match key {
            "seed" => self.seed = num(key, v)?,
            "classes" => self.arch.classes = num(key, v)?,
            "input_dim" => self.arch.input_dim = num(key, v)?,
            "feature_dim" => self.arch.feature_dim = num(key, v)?,
            "backbone_hidden" => self.arch.backbone_hidden = list(key, v)?,
            "head_hidden" => self.arch.head_hidden = list(key, v)?,
            "per_date_count" => self.per_date_count = num(key, v)?,
            "test_per_date_count" => self.test_per_date_count = num(key, v)?,
            "schedule" => self.schedule = (!v.is_empty()).then(|| PathBuf::from(v)),
            "manifold_radius" => self.manifold_radius = num(key, v)?,
            "manifold_arc" => self.manifold_arc = num(key, v)?,
            "manifold_offset" => self.manifold_offset = num(key, v)?,
            "noise" => self.noise = num(key, v)?,
            "hard_mode" => self.hard_mode = flag(key, v)?,
            "bag_size" => t.bag_size = num(key, v)?,
            "bins" => t.bins = num(key, v)?,
            "sigma" => t.sigma = num(key, v)?,
            "stage1_epochs" => t.stage1_epochs = num(key, v)?,
            "stage1_steps_per_epoch" => t.stage1_steps_per_epoch = num(key, v)?,
            "stage2_epochs" => t.stage2_epochs = num(key, v)?,
            "optimizer" => {
                let kind = match v {
                    "adam" => OptimizerKind::Adam,
                    "sgd" => OptimizerKind::Sgd,
                    _ => return Err(format!("optimizer must be adam or sgd, got `{v}`")),
                };
                t.backbone_optimizer.kind = kind;
                t.head_optimizer.kind = kind;
            }
            "lr" => t.backbone_optimizer.lr = num(key, v)?,
            "head_lr" => t.head_optimizer.lr = num(key, v)?,
            "beta1" => {
                t.backbone_optimizer.beta1 = num(key, v)?;
                t.head_optimizer.beta1 = t.backbone_optimizer.beta1;
            }
            "beta2" => {
                t.backbone_optimizer.beta2 = num(key, v)?;
                t.head_optimizer.beta2 = t.backbone_optimizer.beta2;
            }
            "adam_eps" => {
                t.backbone_optimizer.eps = num(key, v)?;
                t.head_optimizer.eps = t.backbone_optimizer.eps;
            }
            "freeze" => {
                t.freeze = match v {
                    "none" => FreezePolicy::TrainAll,
                    "all_but_last" => FreezePolicy::LastLayerOnly,
                    _ => return Err(format!("freeze must be none or all_but_last, got `{v}`")),
                }
            }
            "pairing" => {
                t.pairing = match v {
                    "aligned" => PairingMode::Aligned,
                    "full_cross" => PairingMode::FullCross,
                    _ => return Err(format!("pairing must be aligned or full_cross, got `{v}`")),
                }
            }
            "ground_truth" => {
                t.ground_truth = match v {
                    "smoothed" => GroundTruthMode::Smoothed,
                    "hard" => GroundTruthMode::Hard,
                    _ => return Err(format!("ground_truth must be smoothed or hard, got `{v}`")),
                }
            }
            "kernel" => t.kernel = Kernel::parse(v).map_err(|e| e.to_string())?,
            "checkpoint_every" => t.checkpoint_every = num(key, v)?,
            "joint" => t.joint = flag(key, v)?,
            "threads" => t.threads = num(key, v)?,
            "baseline" => self.baseline = flag(key, v)?,
            "deterministic" => self.deterministic = flag(key, v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Every key in a fixed order.
    pub fn to_config_string(&self) -> String {
        let t = &self.train;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("classes", self.arch.classes.to_string());
        kv("input_dim", self.arch.input_dim.to_string());
        kv("feature_dim", self.arch.feature_dim.to_string());
        kv("backbone_hidden", sizes(&self.arch.backbone_hidden));
        kv("head_hidden", sizes(&self.arch.head_hidden));
        kv("per_date_count", self.per_date_count.to_string());
        kv("test_per_date_count", self.test_per_date_count.to_string());
        kv(
            "schedule",
            self.schedule
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        kv("manifold_radius", self.manifold_radius.to_string());
        kv("manifold_arc", self.manifold_arc.to_string());
        kv("manifold_offset", self.manifold_offset.to_string());
        kv("noise", self.noise.to_string());
        kv("hard_mode", self.hard_mode.to_string());
        kv("bag_size", t.bag_size.to_string());
        kv("bins", t.bins.to_string());
        kv("sigma", t.sigma.to_string());
        kv("stage1_epochs", t.stage1_epochs.to_string());
        kv("stage1_steps_per_epoch", t.stage1_steps_per_epoch.to_string());
        kv("stage2_epochs", t.stage2_epochs.to_string());
        kv(
            "optimizer",
            match t.backbone_optimizer.kind {
                OptimizerKind::Adam => "adam".into(),
                OptimizerKind::Sgd => "sgd".into(),
            },
        );
        kv("lr", t.backbone_optimizer.lr.to_string());
        kv("head_lr", t.head_optimizer.lr.to_string());
        kv("beta1", t.backbone_optimizer.beta1.to_string());
        kv("beta2", t.backbone_optimizer.beta2.to_string());
        kv("adam_eps", t.backbone_optimizer.eps.to_string());
        kv(
            "freeze",
            match t.freeze {
                FreezePolicy::TrainAll => "none".into(),
                FreezePolicy::LastLayerOnly => "all_but_last".into(),
            },
        );
        kv(
            "pairing",
            match t.pairing {
                PairingMode::Aligned => "aligned".into(),
                PairingMode::FullCross => "full_cross".into(),
            },
        );
        kv(
            "ground_truth",
            match t.ground_truth {
                GroundTruthMode::Smoothed => "smoothed".into(),
                GroundTruthMode::Hard => "hard".into(),
            },
        );
        kv("kernel", t.kernel.name().into());
        kv("checkpoint_every", t.checkpoint_every.to_string());
        kv("joint", t.joint.to_string());
        kv("threads", t.threads.to_string());
        kv("baseline", self.baseline.to_string());
        kv("deterministic", self.deterministic.to_string());
        s
    }
}
