//! Operation counting and energy estimation: static FLOPs per layer,
//! spike activity recorded during evaluation, and attention/fusion
//! overheads, priced with a per-operation energy model.

mod count;
mod profile;
pub mod reference;
mod stats;

pub use count::{energy_total, flops_conv, flops_fc, snn_layer_count, EnergyModel, OpCount};
pub use profile::{
    channel_attention_terms, energy_report, neuron_attention_terms, overhead_counts, spatial_attention_terms,
    EnergyReport, Inventory, Overhead, OverheadKind, ReportLine, Source, SpikingSite, WeightedLayer,
};
pub use stats::{LayerStats, SpikeStats};
