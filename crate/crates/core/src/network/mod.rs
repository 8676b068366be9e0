//! Network assembly: configuration, parameter storage, the encoder and
//! residual blocks, the temporal forward loop and checkpoints.

mod blocks;
pub mod checkpoint;
mod config;
mod layers;
mod model;
mod params;
mod session;
mod shapes;

pub use blocks::{BlockState, Encoder, EncoderState, Pathway, ResidualBlock};
pub use config::{
    build_preset, parse_lines, parse_list, parse_num, AsnSites, AttentionOrder, EncoderConfig,
    NetworkConfig, ResidualBlockConfig, PRESET_NAMES,
};
pub use layers::{BatchNorm, ChannelAttention, Conv, Linear, SpatialAttention, Spiking};
pub use model::{ForwardOutput, Network, ParamCount};
pub use params::{ParamEntry, ParamId, ParamStore};
pub use session::{Mode, Session};
pub use shapes::shape_trace;
