use crate::data::{noisy_copy, SampleSet};
use crate::error::Result;
use crate::network::Network;
use crate::scalar::Scalar;

use super::eval::{aggregate, evaluate, EvalOptions};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub snr_db: f64,
    pub accuracy: f64,
    /// Population std over every (model, noise seed) run.
    pub std: f64,
    pub runs: usize,
}

/// Accuracy of every model on `noise_seeds` noisy copies of `set` per SNR.
/// Noise seed `j` at grid position `i` is `base_seed + 1000 i + j`.
pub fn noise_sweep<F: Scalar>(
    nets: &[&Network<F>],
    set: &SampleSet,
    snrs_db: &[f64],
    noise_seeds: usize,
    base_seed: u64,
    opts: &EvalOptions,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(snrs_db.len());
    for (i, &snr) in snrs_db.iter().enumerate() {
        let mut accs = Vec::with_capacity(nets.len() * noise_seeds);
        for j in 0..noise_seeds.max(1) {
            let noisy = noisy_copy(set, snr, base_seed + 1000 * i as u64 + j as u64)?;
            for net in nets {
                accs.push(evaluate(*net, &noisy, opts)?.accuracy);
            }
        }
        let s = aggregate(&accs).expect("at least one run");
        rows.push(SweepRow {
            snr_db: snr,
            accuracy: s.mean,
            std: s.std,
            runs: s.runs,
        });
    }
    Ok(rows)
}

/// `snr_db,accuracy,std` with a header row.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("snr_db,accuracy,std\n");
    for r in rows {
        s.push_str(&format!("{},{:.6},{:.6}\n", r.snr_db, r.accuracy, r.std));
    }
    s
}
