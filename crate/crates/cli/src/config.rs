//! Run configuration: network, training, data and noise settings read from
//! a `key = value` file, then overridden from the command line.
//!
//! Network keys are the unprefixed ones of [`NetworkConfig::to_text`];
//! `preset` selects the base network and is applied before them wherever
//! it appears. `preset = custom` starts from the default network and is
//! what configs resolved from a checkpoint carry. The rest are
//! `seed`, `train.*`, `data.*`, `noise.*` and `eval.*`.

use std::fmt::Write as _;
use std::path::PathBuf;

use spikefd::data::SNR_GRID_DB;
use spikefd::network::{build_preset, parse_lines, parse_list, parse_num, NetworkConfig};
use spikefd::training::{EvalOptions, TrainConfig};
use spikefd::{Error, Result};

fn base_network(preset: &str) -> Result<NetworkConfig> {
    if preset == "custom" {
        Ok(NetworkConfig::default())
    } else {
        build_preset(preset)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    /// VIBR or CSV dataset; synthetic data is generated when absent.
    pub path: Option<PathBuf>,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub synth_per_class: usize,
    pub synth_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: None,
            train_fraction: 0.7,
            split_seed: 42,
            synth_per_class: 200,
            synth_seed: 42,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseConfig {
    pub snrs_db: Vec<f64>,
    /// Noise realizations per SNR and model.
    pub seeds: usize,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            snrs_db: SNR_GRID_DB.to_vec(),
            seeds: 5,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: String,
    pub seed: u64,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub noise: NoiseConfig,
    pub eval_batch_size: usize,
}

impl RunConfig {
    pub fn new(preset: &str) -> Result<Self> {
        Ok(Self {
            preset: preset.to_string(),
            seed: 0,
            network: base_network(preset)?,
            train: TrainConfig::default(),
            data: DataConfig::default(),
            noise: NoiseConfig::default(),
            eval_batch_size: 64,
        })
    }

    /// Parses a config file body on top of the `synthetic` preset, or the
    /// preset named in the text.
    pub fn from_text(text: &str) -> Result<Self> {
        let pairs = parse_lines(text)?;
        let preset = pairs
            .iter()
            .find(|(k, _)| k == "preset")
            .map_or("synthetic", |(_, v)| v.as_str());
        let mut cfg = Self::new(preset)?;
        for (k, v) in &pairs {
            if k != "preset" {
                cfg.set(k, v)?;
            }
        }
        Ok(cfg)
    }

    /// Settings for work on an existing model: its network, defaults
    /// elsewhere.
    pub fn for_model(network: NetworkConfig) -> Self {
        let mut cfg = Self::new("custom").expect("custom preset");
        cfg.network = network;
        cfg
    }

    /// Switches to another preset, keeping the non-network settings.
    pub fn set_preset(&mut self, preset: &str) -> Result<()> {
        self.network = base_network(preset)?;
        self.preset = preset.to_string();
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "preset" => self.set_preset(value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "train.epochs" => t.epochs = parse_num(key, value)?,
            "train.batch_size" => t.batch_size = parse_num(key, value)?,
            "train.lr" => t.lr0 = parse_num(key, value)?,
            "train.lr_decay" => t.lr_decay = parse_num(key, value)?,
            "train.lr_step" => t.lr_step = parse_num(key, value)?,
            "train.beta1" => t.betas.0 = parse_num(key, value)?,
            "train.beta2" => t.betas.1 = parse_num(key, value)?,
            "train.eps" => t.adam_eps = parse_num(key, value)?,
            "train.weight_decay" => t.weight_decay = parse_num(key, value)?,
            "train.clip_norm" => {
                t.clip_norm = match value {
                    "none" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            "train.workers" => t.eval_workers = parse_num(key, value)?,
            "data.path" => {
                self.data.path = match value {
                    "" | "none" => None,
                    v => Some(PathBuf::from(v)),
                }
            }
            "data.standardize" => t.standardize = parse_num(key, value)?,
            "data.train_fraction" => self.data.train_fraction = parse_num(key, value)?,
            "data.split_seed" => self.data.split_seed = parse_num(key, value)?,
            "data.synth_per_class" => self.data.synth_per_class = parse_num(key, value)?,
            "data.synth_seed" => self.data.synth_seed = parse_num(key, value)?,
            "noise.snrs" => self.noise.snrs_db = parse_list(key, value)?,
            "noise.seeds" => self.noise.seeds = parse_num(key, value)?,
            "noise.seed" => self.noise.seed = parse_num(key, value)?,
            "eval.batch_size" => self.eval_batch_size = parse_num(key, value)?,
            _ => {
                if !self.network.set(key, value)? {
                    return Err(Error::Config(format!("unknown key `{key}`")));
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.train.validate()?;
        let f = self.data.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!("data.train_fraction must lie in (0,1), got {f}")));
        }
        if self.eval_batch_size == 0 || self.noise.seeds == 0 {
            return Err(Error::Config("eval.batch_size and noise.seeds must be >= 1".into()));
        }
        Ok(())
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            batch_size: self.eval_batch_size,
            standardize: self.train.standardize,
            dump_timesteps: false,
            workers: self.train.eval_workers,
        }
    }

    /// Every setting, in a form [`RunConfig::from_text`] reads back to an
    /// equal value.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("preset", self.preset.clone());
        kv("seed", self.seed.to_string());
        kv("train.epochs", t.epochs.to_string());
        kv("train.batch_size", t.batch_size.to_string());
        kv("train.lr", t.lr0.to_string());
        kv("train.lr_decay", t.lr_decay.to_string());
        kv("train.lr_step", t.lr_step.to_string());
        kv("train.beta1", t.betas.0.to_string());
        kv("train.beta2", t.betas.1.to_string());
        kv("train.eps", t.adam_eps.to_string());
        kv("train.weight_decay", t.weight_decay.to_string());
        kv("train.clip_norm", t.clip_norm.map_or("none".into(), |c| c.to_string()));
        kv("train.workers", t.eval_workers.to_string());
        kv(
            "data.path",
            self.data.path.as_ref().map_or("none".into(), |p| p.display().to_string()),
        );
        kv("data.standardize", t.standardize.to_string());
        kv("data.train_fraction", self.data.train_fraction.to_string());
        kv("data.split_seed", self.data.split_seed.to_string());
        kv("data.synth_per_class", self.data.synth_per_class.to_string());
        kv("data.synth_seed", self.data.synth_seed.to_string());
        kv(
            "noise.snrs",
            self.noise.snrs_db.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
        );
        kv("noise.seeds", self.noise.seeds.to_string());
        kv("noise.seed", self.noise.seed.to_string());
        kv("eval.batch_size", self.eval_batch_size.to_string());
        s.push_str(&self.network.to_text());
        s
    }
}
