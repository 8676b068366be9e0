//! Static layer inventory of a configured network, attention and fusion
//! overheads, and the combined energy report.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::network::NetworkConfig;
use crate::neurons::{attention_kernel_size, SPATIAL_KERNEL};

use super::count::{flops_conv, flops_fc, snn_layer_count, EnergyModel, OpCount};
use super::stats::SpikeStats;

/// What drives a weighted layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Source {
    /// Real-valued network input: MAC, activity 1.
    Analog,
    /// Output of the named spiking layer: AC, scaled by its LASAR. Pooled
    /// spike maps (encoder second conv, classifier) count as spikes of the
    /// layer they were pooled from.
    Spikes(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightedLayer {
    pub name: String,
    pub kind: &'static str,
    /// Per-sample, per-timestep FLOPs.
    pub static_flops: u64,
    pub source: Source,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpikingSite {
    pub name: String,
    pub channels: usize,
    pub length: usize,
}

impl SpikingSite {
    pub fn neurons(&self) -> usize {
        self.channels * self.length
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OverheadKind {
    /// Element-wise current additions: pathway sum, block add.
    Add,
    /// Membrane charging of a spiking layer.
    Charge,
    /// Means, kernels, sigmoid and weighting of an attention module.
    Attention,
}

impl OverheadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OverheadKind::Add => "add",
            OverheadKind::Charge => "charge",
            OverheadKind::Attention => "attention",
        }
    }
}

/// One overhead site. `terms` are per-sample, per-timestep operation
/// counts; `ops` is their total over all timesteps.
#[derive(Clone, Debug, PartialEq)]
pub struct Overhead {
    pub site: String,
    pub kind: OverheadKind,
    pub terms: Vec<(&'static str, f64)>,
    pub ops: OpCount,
}

impl Overhead {
    fn new(site: String, kind: OverheadKind, terms: Vec<(&'static str, usize)>, timesteps: usize) -> Self {
        let terms: Vec<(&'static str, f64)> = terms.into_iter().map(|(n, v)| (n, v as f64)).collect();
        let n = timesteps as f64 * terms.iter().map(|(_, v)| v).sum::<f64>();
        let ops = match kind {
            OverheadKind::Attention => OpCount::mac(n),
            OverheadKind::Add | OverheadKind::Charge => OpCount::ac(n),
        };
        Self { site, kind, terms, ops }
    }

    pub fn per_timestep(&self) -> f64 {
        self.terms.iter().map(|(_, v)| v).sum()
    }
}

/// Sigmoid-gated channel attention on a `[c, s]` map.
pub fn channel_attention_terms(c: usize, s: usize, k: usize) -> Vec<(&'static str, usize)> {
    vec![("mean", c * s), ("conv", k * c), ("sigmoid", c), ("weighting", c * s)]
}

/// Sigmoid-gated spatial attention on a `[c, s]` map.
pub fn spatial_attention_terms(c: usize, s: usize, k: usize) -> Vec<(&'static str, usize)> {
    vec![("mean", c * s), ("conv", k * s), ("sigmoid", s), ("weighting", c * s)]
}

/// Joint channel-spatial gate of an attention spiking neuron on `[c, s]`.
pub fn neuron_attention_terms(c: usize, s: usize) -> Vec<(&'static str, usize)> {
    let k_c = attention_kernel_size(c);
    vec![
        ("channel_mean", c * s),
        ("channel_conv", k_c * c),
        ("spatial_mean", c * s),
        ("spatial_conv", SPATIAL_KERNEL * s),
        ("joint", c * s),
        ("sigmoid", c * s),
        ("weighting", c * s),
    ]
}

/// Everything the profiler needs to know about a configuration, for a
/// single input sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Inventory {
    pub layers: Vec<WeightedLayer>,
    pub spiking: Vec<SpikingSite>,
    pub timesteps: usize,
    overheads: Vec<Overhead>,
}

impl Inventory {
    pub fn new(cfg: &NetworkConfig) -> Self {
        let t = cfg.timesteps;
        let enc = &cfg.encoder;
        let (c1, c2) = enc.stage_channels;
        let conv_len = |len: usize, k: usize, stride: usize| (len + 2 * (k / 2) - k) / stride + 1;

        let mut layers = Vec::new();
        let mut spiking = Vec::new();
        let mut overheads = Vec::new();

        let mut enc_len = 0;
        for &k in &enc.kernel_sizes {
            let p = format!("encoder.p{k}");
            let l1 = conv_len(cfg.input_length, k, 1);
            layers.push(WeightedLayer {
                name: format!("{p}.conv1"),
                kind: "conv",
                static_flops: flops_conv(k, l1, cfg.input_channels, c1),
                source: Source::Analog,
            });
            spiking.push(SpikingSite {
                name: format!("{p}.sn"),
                channels: c1,
                length: l1,
            });
            let lp = (l1 - enc.pool_kernel) / enc.pool_stride + 1;
            enc_len = conv_len(lp, k, enc.second_stride);
            layers.push(WeightedLayer {
                name: format!("{p}.conv2"),
                kind: "conv",
                static_flops: flops_conv(k, enc_len, c1, c2),
                source: Source::Spikes(format!("{p}.sn")),
            });
        }
        let paths = enc.kernel_sizes.len();
        if enc.fusion_attention {
            let c = c2 * paths;
            overheads.push(Overhead::new(
                "encoder.fusion_ca".into(),
                OverheadKind::Attention,
                channel_attention_terms(c, enc_len, attention_kernel_size(c)),
                t,
            ));
        }
        overheads.push(Overhead::new(
            "encoder.sum".into(),
            OverheadKind::Add,
            vec![("add", (paths - 1) * c2 * enc_len)],
            t,
        ));
        spiking.push(SpikingSite {
            name: "encoder.fusion.sn".into(),
            channels: c2,
            length: enc_len,
        });
        if cfg.asn.encoder_fusion {
            overheads.push(Overhead::new(
                "encoder.fusion.sn".into(),
                OverheadKind::Attention,
                neuron_attention_terms(c2, enc_len),
                t,
            ));
        }

        let mut prev = "encoder.fusion.sn".to_string();
        let mut len = enc_len;
        for (i, b) in cfg.blocks.iter().enumerate() {
            let name = format!("block{}", i + 1);
            let (ci, co) = (b.in_channels, b.out_channels);
            let l1 = conv_len(len, 3, b.downsample_stride);
            layers.push(WeightedLayer {
                name: format!("{name}.conv1"),
                kind: "conv",
                static_flops: flops_conv(3, l1, ci, co),
                source: Source::Spikes(prev.clone()),
            });
            spiking.push(SpikingSite {
                name: format!("{name}.sn1"),
                channels: co,
                length: l1,
            });
            layers.push(WeightedLayer {
                name: format!("{name}.conv2"),
                kind: "conv",
                static_flops: flops_conv(3, l1, co, co),
                source: Source::Spikes(format!("{name}.sn1")),
            });
            layers.push(WeightedLayer {
                name: format!("{name}.shortcut.conv"),
                kind: "conv",
                static_flops: flops_conv(1, l1, ci, co),
                source: Source::Spikes(prev.clone()),
            });
            if b.use_attention {
                overheads.push(Overhead::new(
                    format!("{name}.ca"),
                    OverheadKind::Attention,
                    channel_attention_terms(co, l1, attention_kernel_size(co)),
                    t,
                ));
                overheads.push(Overhead::new(
                    format!("{name}.sa"),
                    OverheadKind::Attention,
                    spatial_attention_terms(co, l1, SPATIAL_KERNEL),
                    t,
                ));
            }
            overheads.push(Overhead::new(
                format!("{name}.add"),
                OverheadKind::Add,
                vec![("add", co * l1)],
                t,
            ));
            let out = format!("{name}.sn_out");
            spiking.push(SpikingSite {
                name: out.clone(),
                channels: co,
                length: l1,
            });
            if cfg.asn.block_outputs {
                overheads.push(Overhead::new(
                    out.clone(),
                    OverheadKind::Attention,
                    neuron_attention_terms(co, l1),
                    t,
                ));
            }
            prev = out;
            len = l1;
        }
        layers.push(WeightedLayer {
            name: "fc".into(),
            kind: "fc",
            static_flops: flops_fc(cfg.feature_channels(), cfg.num_classes),
            source: Source::Spikes(prev),
        });
        for site in &spiking {
            overheads.push(Overhead::new(
                format!("{}.charge", site.name),
                OverheadKind::Charge,
                vec![("charge", site.neurons())],
                t,
            ));
        }
        Self {
            layers,
            spiking,
            timesteps: t,
            overheads,
        }
    }

    /// Itemized overheads over all timesteps.
    pub fn overheads(&self) -> &[Overhead] {
        &self.overheads
    }
}

/// Summed attention and fusion overheads of `cfg`.
pub fn overhead_counts(cfg: &NetworkConfig) -> OpCount {
    Inventory::new(cfg).overheads.iter().map(|o| o.ops).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportLine {
    pub layer: String,
    pub kind: &'static str,
    /// Per-sample, per-timestep operation count before activity scaling.
    pub static_flops: f64,
    /// Input activity rate; `None` for overhead lines.
    pub phi: Option<f64>,
    pub ops: OpCount,
    pub pj: f64,
}

/// Per-sample inference cost of a network.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyReport {
    pub timesteps: usize,
    pub model: EnergyModel,
    pub lines: Vec<ReportLine>,
    pub total: OpCount,
    pub total_pj: f64,
}

/// Combines static FLOPs, recorded activity rates and overheads into a
/// per-layer report. `stats` must hold every spiking layer that drives a
/// weighted layer.
pub fn energy_report(cfg: &NetworkConfig, stats: &SpikeStats, model: &EnergyModel) -> Result<EnergyReport> {
    if stats.is_empty() {
        return Err(Error::NoStats);
    }
    let inv = Inventory::new(cfg);
    let t = inv.timesteps;
    let mut lines = Vec::new();
    for layer in &inv.layers {
        let (phi, first) = match &layer.source {
            Source::Analog => (1.0, true),
            Source::Spikes(src) => (stats.lasar(src).ok_or(Error::NoStats)?, false),
        };
        let ops = snn_layer_count(layer.static_flops, t, phi, first)?;
        lines.push(ReportLine {
            layer: layer.name.clone(),
            kind: layer.kind,
            static_flops: layer.static_flops as f64,
            phi: Some(phi),
            ops,
            pj: model.energy(ops),
        });
    }
    for o in &inv.overheads {
        lines.push(ReportLine {
            layer: o.site.clone(),
            kind: o.kind.as_str(),
            static_flops: o.per_timestep(),
            phi: None,
            ops: o.ops,
            pj: model.energy(o.ops),
        });
    }
    let total: OpCount = lines.iter().map(|l| l.ops).sum();
    Ok(EnergyReport {
        timesteps: t,
        model: *model,
        total_pj: model.energy(total),
        total,
        lines,
    })
}

impl EnergyReport {
    /// Aligned text table with a closing total row.
    pub fn to_table(&self) -> String {
        let rows: Vec<[String; 7]> = self
            .lines
            .iter()
            .map(|l| {
                [
                    l.layer.clone(),
                    l.kind.to_string(),
                    format!("{:.0}", l.static_flops),
                    l.phi.map_or("-".into(), |p| format!("{p:.4}")),
                    format!("{:.1}", l.ops.mac),
                    format!("{:.1}", l.ops.ac),
                    format!("{:.1}", l.pj),
                ]
            })
            .chain(std::iter::once([
                "total".into(),
                String::new(),
                String::new(),
                String::new(),
                format!("{:.1}", self.total.mac),
                format!("{:.1}", self.total.ac),
                format!("{:.1}", self.total_pj),
            ]))
            .collect();
        let header = ["layer", "type", "static_flops", "phi", "MAC", "AC", "energy_pJ"];
        let mut width = header.map(str::len);
        for r in &rows {
            for (w, c) in width.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let mut s = String::new();
        let mut line = |cells: &[String]| {
            for (i, c) in cells.iter().enumerate() {
                if i < 2 {
                    let _ = write!(s, "{c:<w$}  ", w = width[i]);
                } else {
                    let _ = write!(s, "{c:>w$}  ", w = width[i]);
                }
            }
            s.truncate(s.trim_end().len());
            s.push('\n');
        };
        line(&header.map(String::from));
        for r in &rows {
            line(r);
        }
        s
    }

    /// `layer,type,static_flops,phi,mac,ac,pj`, one row per line plus a
    /// `total` row. Values are unrounded.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,type,static_flops,phi,mac,ac,pj\n");
        for l in &self.lines {
            let phi = l.phi.map_or(String::new(), |p| p.to_string());
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                l.layer, l.kind, l.static_flops, phi, l.ops.mac, l.ops.ac, l.pj
            );
        }
        let _ = writeln!(
            s,
            "total,total,,,{},{},{}",
            self.total.mac, self.total.ac, self.total_pj
        );
        s
    }
}
