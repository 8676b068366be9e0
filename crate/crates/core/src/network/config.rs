//! Declarative network description, its `key = value` text form, and the
//! named presets.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::neurons::{NeuronConfig, ResetMode};

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    /// One pathway per kernel size.
    pub kernel_sizes: Vec<usize>,
    /// Output channels of the first and second conv on every pathway.
    pub stage_channels: (usize, usize),
    pub pool_kernel: usize,
    pub pool_stride: usize,
    /// Stride of the second conv on every pathway.
    pub second_stride: usize,
    /// Channel attention over the concatenated pathway currents before
    /// they are summed.
    pub fusion_attention: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kernel_sizes: vec![3, 5, 7],
            stage_channels: (32, 64),
            pool_kernel: 2,
            pool_stride: 2,
            second_stride: 2,
            fusion_attention: true,
        }
    }
}

impl EncoderConfig {
    pub fn out_channels(&self) -> usize {
        self.stage_channels.1
    }

    /// Total length reduction from input to encoder output.
    pub fn reduction(&self) -> usize {
        self.pool_stride * self.second_stride
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlockConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub downsample_stride: usize,
    pub use_attention: bool,
}

impl ResidualBlockConfig {
    pub fn new(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            downsample_stride: 2,
            use_attention: true,
        }
    }
}

/// How channel (CA) and spatial (SA) attention refine the residual current.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AttentionOrder {
    #[default]
    CaSa,
    SaCa,
    Parallel,
}

impl AttentionOrder {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::CaSa => "ca-sa",
            Self::SaCa => "sa-ca",
            Self::Parallel => "parallel",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ca-sa" => Ok(Self::CaSa),
            "sa-ca" => Ok(Self::SaCa),
            "parallel" => Ok(Self::Parallel),
            _ => Err(Error::Config(format!(
                "attention_order: expected ca-sa, sa-ca or parallel, got `{s}`"
            ))),
        }
    }
}

/// Which spiking layers use attention neurons instead of plain LIF.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AsnSites {
    /// The neuron after multi-scale fusion.
    pub encoder_fusion: bool,
    /// The output neuron of every residual block.
    pub block_outputs: bool,
}

impl Default for AsnSites {
    fn default() -> Self {
        Self {
            encoder_fusion: true,
            block_outputs: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub input_channels: usize,
    pub input_length: usize,
    pub num_classes: usize,
    pub timesteps: usize,
    pub encoder: EncoderConfig,
    pub blocks: Vec<ResidualBlockConfig>,
    pub neuron: NeuronConfig,
    pub attention_order: AttentionOrder,
    pub asn: AsnSites,
    pub conv_bias: bool,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_channels: 1,
            input_length: 1024,
            num_classes: 15,
            timesteps: 4,
            encoder: EncoderConfig::default(),
            blocks: vec![
                ResidualBlockConfig::new(64, 256),
                ResidualBlockConfig::new(256, 512),
            ],
            neuron: NeuronConfig::default(),
            attention_order: AttentionOrder::CaSa,
            asn: AsnSites::default(),
            conv_bias: true,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

pub const PRESET_NAMES: &[&str] = &["mfpt", "jnu", "seu", "synthetic", "mfpt-4block"];

/// Named architecture presets.
///
/// * `mfpt` / `jnu` / `seu`: encoder (3,5,7)/(32,64), blocks 64→256→512,
///   15 / 12 / 10 classes, 1 / 1 / 3 input channels.
/// * `synthetic`: the same topology at a quarter width (max 64 channels),
///   3 classes, for desk-scale runs on generated data.
/// * `mfpt-4block`: four residual blocks (256, 256, 512, 512), downsampling
///   on the first of each pair.
pub fn build_preset(name: &str) -> Result<NetworkConfig> {
    let base = NetworkConfig::default();
    let cfg = match name {
        "mfpt" => base,
        "jnu" => NetworkConfig {
            num_classes: 12,
            ..base
        },
        "seu" => NetworkConfig {
            num_classes: 10,
            input_channels: 3,
            ..base
        },
        "synthetic" => NetworkConfig {
            num_classes: 3,
            encoder: EncoderConfig {
                stage_channels: (8, 16),
                ..EncoderConfig::default()
            },
            blocks: vec![
                ResidualBlockConfig::new(16, 32),
                ResidualBlockConfig::new(32, 64),
            ],
            ..base
        },
        "mfpt-4block" => {
            let pair = |c_in, c_out| {
                [
                    ResidualBlockConfig::new(c_in, c_out),
                    ResidualBlockConfig {
                        downsample_stride: 1,
                        ..ResidualBlockConfig::new(c_out, c_out)
                    },
                ]
            };
            NetworkConfig {
                blocks: pair(64, 256).into_iter().chain(pair(256, 512)).collect(),
                ..base
            }
        }
        other => return Err(Error::UnknownPreset(other.to_string())),
    };
    Ok(cfg)
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        self.neuron
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.input_channels == 0 || self.num_classes < 2 || self.timesteps == 0 {
            return err("input_channels, timesteps must be >= 1 and num_classes >= 2".into());
        }
        let enc = &self.encoder;
        if enc.kernel_sizes.is_empty() || enc.kernel_sizes.iter().any(|k| k % 2 == 0) {
            return err(format!("encoder kernel sizes must be odd, got {:?}", enc.kernel_sizes));
        }
        if enc.stage_channels.0 == 0 || enc.stage_channels.1 == 0 {
            return err("encoder channels must be positive".into());
        }
        if enc.pool_kernel == 0 || enc.pool_stride == 0 || enc.second_stride == 0 {
            return err("encoder pool and strides must be positive".into());
        }
        if !self.input_length.is_multiple_of(enc.reduction()) {
            return err(format!(
                "input length {} is not divisible by the encoder reduction {}",
                self.input_length,
                enc.reduction()
            ));
        }
        let mut channels = enc.out_channels();
        let mut length = self.input_length / enc.reduction();
        for (i, b) in self.blocks.iter().enumerate() {
            if b.in_channels != channels {
                return err(format!(
                    "block {} expects {} input channels but receives {channels}",
                    i + 1,
                    b.in_channels
                ));
            }
            if b.downsample_stride == 0 || !length.is_multiple_of(b.downsample_stride) {
                return err(format!(
                    "block {} stride {} does not divide length {length}",
                    i + 1,
                    b.downsample_stride
                ));
            }
            channels = b.out_channels;
            length /= b.downsample_stride;
        }
        if length == 0 {
            return err("network reduces the signal to zero length".into());
        }
        if !(self.bn_eps >= 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return err("bn_eps must be >= 0 and bn_momentum in [0,1]".into());
        }
        Ok(())
    }

    /// Channels entering the classifier.
    pub fn feature_channels(&self) -> usize {
        self.blocks
            .last()
            .map_or(self.encoder.out_channels(), |b| b.out_channels)
    }

    /// Line-oriented `key = value` form; [`NetworkConfig::from_text`]
    /// inverts it exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("input_channels", self.input_channels.to_string());
        kv("input_length", self.input_length.to_string());
        kv("num_classes", self.num_classes.to_string());
        kv("timesteps", self.timesteps.to_string());
        kv("encoder.kernel_sizes", join(&self.encoder.kernel_sizes));
        kv(
            "encoder.stage_channels",
            format!("{},{}", self.encoder.stage_channels.0, self.encoder.stage_channels.1),
        );
        kv("encoder.pool_kernel", self.encoder.pool_kernel.to_string());
        kv("encoder.pool_stride", self.encoder.pool_stride.to_string());
        kv("encoder.second_stride", self.encoder.second_stride.to_string());
        kv("encoder.fusion_attention", self.encoder.fusion_attention.to_string());
        kv(
            "blocks",
            self.blocks
                .iter()
                .map(|b| {
                    format!(
                        "{}:{}:{}:{}",
                        b.in_channels, b.out_channels, b.downsample_stride, b.use_attention
                    )
                })
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("neuron.tau", self.neuron.tau.to_string());
        kv("neuron.theta", self.neuron.theta.to_string());
        kv("neuron.a", self.neuron.a.to_string());
        kv("neuron.reset", "soft".into());
        kv("attention_order", self.attention_order.as_str().into());
        kv("asn.encoder_fusion", self.asn.encoder_fusion.to_string());
        kv("asn.block_outputs", self.asn.block_outputs.to_string());
        kv("conv_bias", self.conv_bias.to_string());
        kv("bn_eps", self.bn_eps.to_string());
        kv("bn_momentum", self.bn_momentum.to_string());
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = NetworkConfig::default();
        for (key, value) in parse_lines(text)? {
            if !cfg.set(&key, &value)? {
                return Err(Error::Config(format!("unknown key `{key}`")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `key = value` pair. Returns `false` for keys this type
    /// does not own, so callers can layer other settings on the same file.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "input_channels" => self.input_channels = parse_num(key, value)?,
            "input_length" => self.input_length = parse_num(key, value)?,
            "num_classes" => self.num_classes = parse_num(key, value)?,
            "timesteps" => self.timesteps = parse_num(key, value)?,
            "encoder.kernel_sizes" => self.encoder.kernel_sizes = parse_list(key, value)?,
            "encoder.stage_channels" => {
                let v: Vec<usize> = parse_list(key, value)?;
                if v.len() != 2 {
                    return Err(Error::Config(format!("{key}: expected two values")));
                }
                self.encoder.stage_channels = (v[0], v[1]);
            }
            "encoder.pool_kernel" => self.encoder.pool_kernel = parse_num(key, value)?,
            "encoder.pool_stride" => self.encoder.pool_stride = parse_num(key, value)?,
            "encoder.second_stride" => self.encoder.second_stride = parse_num(key, value)?,
            "encoder.fusion_attention" => self.encoder.fusion_attention = parse_num(key, value)?,
            "blocks" => {
                self.blocks = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|b| {
                        let f: Vec<&str> = b.split(':').collect();
                        if f.len() != 4 {
                            return Err(Error::Config(format!(
                                "blocks: expected in:out:stride:attention, got `{b}`"
                            )));
                        }
                        Ok(ResidualBlockConfig {
                            in_channels: parse_num(key, f[0])?,
                            out_channels: parse_num(key, f[1])?,
                            downsample_stride: parse_num(key, f[2])?,
                            use_attention: parse_num(key, f[3])?,
                        })
                    })
                    .collect::<Result<_>>()?;
            }
            "neuron.tau" => self.neuron.tau = parse_num(key, value)?,
            "neuron.theta" => self.neuron.theta = parse_num(key, value)?,
            "neuron.a" => self.neuron.a = parse_num(key, value)?,
            "neuron.reset" => {
                if value != "soft" {
                    return Err(Error::Config(format!("neuron.reset: only `soft` is supported, got `{value}`")));
                }
                self.neuron.reset = ResetMode::Soft;
            }
            "attention_order" => self.attention_order = AttentionOrder::parse(value)?,
            "asn.encoder_fusion" => self.asn.encoder_fusion = parse_num(key, value)?,
            "asn.block_outputs" => self.asn.block_outputs = parse_num(key, value)?,
            "conv_bias" => self.conv_bias = parse_num(key, value)?,
            "bn_eps" => self.bn_eps = parse_num(key, value)?,
            "bn_momentum" => self.bn_momentum = parse_num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Splits `key = value` lines, skipping blanks and `#` comments.
pub fn parse_lines(text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let (k, v) = l
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

pub fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
}

pub fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}
