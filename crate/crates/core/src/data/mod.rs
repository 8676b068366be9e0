//! Vibration samples: windowing of raw records, stratified splits, noise
//! injection at a target SNR, a synthetic fault-signal generator, and the
//! `VIBR` container.

mod io;
mod noise;
mod set;
mod synth;
mod window;

pub use io::{from_bytes, import_csv, load_dataset, save_dataset, to_bytes, MAGIC, VERSION};
pub use noise::{add_noise, empirical_snr_db, noisy_copy, signal_power, standardize, SNR_GRID_DB};
pub use set::{split, SampleSet, SplitTag};
pub use synth::{synth_dataset, synth_with, SynthSpec};
pub use window::window_signal;
