//! The `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{FreezePolicy, GateMode, ModelConfig};
use crate::train::DataSpec;

/// Table-3 ablation switches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Switches {
    /// Interaction queries present.
    pub iq: bool,
    /// Alignment loss active.
    pub ic: bool,
    /// Gate network active (else fixed 0.5/0.5).
    pub gc: bool,
}

impl Default for Switches {
    fn default() -> Self {
        Self::FULL
    }
}

impl Switches {
    pub const FULL: Switches = Switches {
        iq: true,
        ic: true,
        gc: true,
    };
    pub const OFF: Switches = Switches {
        iq: false,
        ic: false,
        gc: false,
    };

    /// All eight combinations, `000` first.
    pub fn grid() -> Vec<Switches> {
        (0..8)
            .map(|m| Switches {
                iq: m & 4 != 0,
                ic: m & 2 != 0,
                gc: m & 1 != 0,
            })
            .collect()
    }

    /// `"iq ic gc"` as three 0/1 digits, e.g. `"101"`.
    pub fn tag(self) -> String {
        [self.iq, self.ic, self.gc].iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    pub fn any(self) -> bool {
        self.iq || self.ic || self.gc
    }
}

/// Which training stages a run performs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// Standard ViT training only.
    Pretrain,
    /// Interaction finetuning only, from a checkpoint or fresh weights.
    Finetune,
    /// Pretrain, then finetune.
    TwoStage,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
            Stage::TwoStage => "two-stage",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Stage::Pretrain),
            "finetune" => Ok(Stage::Finetune),
            "two-stage" => Ok(Stage::TwoStage),
            other => Err(Error::invalid(format!("unknown stage `{other}`"))),
        }
    }
}

/// Freezing during the finetune stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Freeze {
    /// Interaction finetuning, except that with every switch off the whole
    /// backbone keeps training (the plain ViT baseline).
    Auto,
    Policy(FreezePolicy),
}

impl Freeze {
    pub fn as_str(self) -> &'static str {
        match self {
            Freeze::Auto => "auto",
            Freeze::Policy(p) => p.as_str(),
        }
    }

    pub fn resolve(self, switches: Switches) -> FreezePolicy {
        match self {
            Freeze::Policy(p) => p,
            Freeze::Auto if switches.any() => FreezePolicy::InteractionFinetune,
            Freeze::Auto => FreezePolicy::Pretrain,
        }
    }
}

impl FromStr for Freeze {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Freeze::Auto),
            other => other.parse().map(Freeze::Policy),
        }
    }
}

/// Optimization settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    /// Finetune-stage epochs.
    pub epochs: usize,
    pub batch: usize,
    /// Finetune-stage peak learning rate.
    pub lr: f64,
    pub seed: u64,
    /// Teacher smoothing toward uniform.
    pub lambda: f64,
    pub freeze: Freeze,
    pub stage: Stage,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch: 32,
            lr: 0.01,
            seed: 0,
            lambda: 1e-3,
            freeze: Freeze::Auto,
            stage: Stage::TwoStage,
            pretrain_epochs: 20,
            pretrain_lr: 0.05,
        }
    }
}

/// A fully resolved run configuration.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainSettings,
    pub data: DataSpec,
    pub switches: Switches,
}

/// Every accepted key, in output order.
pub const CONFIG_KEYS: [&str; 26] = [
    "model.image_size",
    "model.patch_size",
    "model.channels",
    "model.embed_dim",
    "model.heads",
    "model.layers",
    "model.classes",
    "model.gate_mode",
    "model.gcn_hidden",
    "train.epochs",
    "train.batch",
    "train.lr",
    "train.seed",
    "train.lambda",
    "train.freeze",
    "train.stage",
    "train.pretrain_epochs",
    "train.pretrain_lr",
    "data.kind",
    "data.classes",
    "data.samples",
    "data.noise_sigma",
    "data.split",
    "switches.iq",
    "switches.ic",
    "switches.gc",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "1" | "true" | "on" => Ok(true),
        "0" | "false" | "off" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected 0 or 1, got `{value}`"))),
    }
}

impl RunConfig {
    /// Parses `text`, applying defaults for absent keys, then validates.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |e: Error| Error::Config(format!("line {}: {}", no + 1, e.to_string().trim_start_matches("config error: ")));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(Error::Config(format!("expected `key = value`, got `{line}`"))))?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(prev) = seen.insert(key.to_owned(), no + 1) {
                return Err(at(Error::Config(format!("`{key}` already set on line {prev}"))));
            }
            cfg.set(key, value).map_err(at)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (m, t, d, s) = (&mut self.model, &mut self.train, &mut self.data, &mut self.switches);
        match key {
            "model.image_size" => m.image_size = parse(key, value)?,
            "model.patch_size" => m.patch_size = parse(key, value)?,
            "model.channels" => m.channels = parse(key, value)?,
            "model.embed_dim" => m.embed_dim = parse(key, value)?,
            "model.heads" => m.heads = parse(key, value)?,
            "model.layers" => m.layers = parse(key, value)?,
            "model.classes" => m.classes = parse(key, value)?,
            "model.gate_mode" => m.gate_mode = parse::<GateMode>(key, value)?,
            "model.gcn_hidden" => m.gcn_hidden = parse(key, value)?,
            "train.epochs" => t.epochs = parse(key, value)?,
            "train.batch" => t.batch = parse(key, value)?,
            "train.lr" => t.lr = parse(key, value)?,
            "train.seed" => t.seed = parse(key, value)?,
            "train.lambda" => t.lambda = parse(key, value)?,
            "train.freeze" => t.freeze = parse(key, value)?,
            "train.stage" => t.stage = parse(key, value)?,
            "train.pretrain_epochs" => t.pretrain_epochs = parse(key, value)?,
            "train.pretrain_lr" => t.pretrain_lr = parse(key, value)?,
            "data.kind" => {
                if value != "synthetic" {
                    return Err(Error::Config(format!("`data.kind`: unsupported kind `{value}`")));
                }
            }
            "data.classes" => d.classes = parse(key, value)?,
            "data.samples" => d.samples = parse(key, value)?,
            "data.noise_sigma" => d.noise_sigma = parse(key, value)?,
            "data.split" => d.split = parse(key, value)?,
            "switches.iq" => s.iq = parse_flag(key, value)?,
            "switches.ic" => s.ic = parse_flag(key, value)?,
            "switches.gc" => s.gc = parse_flag(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.data_spec().validate()?;
        let fail = |m: String| Err(Error::Config(m));
        if self.data.classes != self.model.classes {
            return fail(format!(
                "data.classes {} differs from model.classes {}",
                self.data.classes, self.model.classes
            ));
        }
        if self.model.channels != 1 {
            return fail("synthetic data is single-channel; model.channels must be 1".into());
        }
        let t = &self.train;
        if t.batch == 0 {
            return fail("train.batch must be positive".into());
        }
        for (name, v) in [("train.lr", t.lr), ("train.pretrain_lr", t.pretrain_lr)] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} {v} must be finite and >= 0"));
            }
        }
        if !(0.0..1.0).contains(&t.lambda) {
            return fail(format!("train.lambda {} outside [0, 1)", t.lambda));
        }
        Ok(())
    }

    fn value_of(&self, key: &str) -> String {
        let (m, t, d, s) = (&self.model, &self.train, &self.data, &self.switches);
        let flag = |b: bool| if b { "1" } else { "0" }.to_string();
        match key {
            "model.image_size" => m.image_size.to_string(),
            "model.patch_size" => m.patch_size.to_string(),
            "model.channels" => m.channels.to_string(),
            "model.embed_dim" => m.embed_dim.to_string(),
            "model.heads" => m.heads.to_string(),
            "model.layers" => m.layers.to_string(),
            "model.classes" => m.classes.to_string(),
            "model.gate_mode" => m.gate_mode.as_str().to_string(),
            "model.gcn_hidden" => m.gcn_hidden.to_string(),
            "train.epochs" => t.epochs.to_string(),
            "train.batch" => t.batch.to_string(),
            "train.lr" => t.lr.to_string(),
            "train.seed" => t.seed.to_string(),
            "train.lambda" => t.lambda.to_string(),
            "train.freeze" => t.freeze.as_str().to_string(),
            "train.stage" => t.stage.as_str().to_string(),
            "train.pretrain_epochs" => t.pretrain_epochs.to_string(),
            "train.pretrain_lr" => t.pretrain_lr.to_string(),
            "data.kind" => "synthetic".to_string(),
            "data.classes" => d.classes.to_string(),
            "data.samples" => d.samples.to_string(),
            "data.noise_sigma" => d.noise_sigma.to_string(),
            "data.split" => d.split.to_string(),
            "switches.iq" => flag(s.iq),
            "switches.ic" => flag(s.ic),
            "switches.gc" => flag(s.gc),
            _ => unreachable!("key list is closed"),
        }
    }

    /// Every key with its resolved value, in [`CONFIG_KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        CONFIG_KEYS.iter().map(|&k| (k, self.value_of(k))).collect()
    }

    /// The effective configuration as parseable text.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Dataset recipe with the model's geometry.
    pub fn data_spec(&self) -> DataSpec {
        DataSpec {
            image_size: self.model.image_size,
            patch_size: self.model.patch_size,
            ..self.data.clone()
        }
    }
}

/// Parses and validates configuration text.
pub fn validate_config(text: &str) -> Result<RunConfig> {
    RunConfig::parse(text)
}
