//! Synthetic bearing-like vibration windows.
//!
//! Every window, sampled at `fs`, holds a shaft component
//! `a1 sin(2 pi f t + p) + a2 sin(4 pi f t + 2p + 0.7)` with a uniform
//! random phase `p`, plus white Gaussian noise of standard deviation
//! `noise_std`. Class 0 is the healthy condition and has nothing else.
//! Fault class `k >= 1` (with `r = k - 1`, `K` classes) adds a train of
//! impacts at `impact_hz + r * impact_step_hz`; each impact rings a damped
//! resonance at `res_lo_hz + (res_hi_hz - res_lo_hz) * r / (K - 1)` with
//! time constant `decay_s`. The impact train is locked to the shaft: the
//! first impact sits `p / 2 pi` of an impact period into the window. Each
//! impact is then jittered by a Gaussian of `timing_jitter` periods and its
//! amplitude scaled by `1 + U(-amp_jitter, amp_jitter)`.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

use super::set::SampleSet;

const HARMONIC_PHASE: f64 = 0.7;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub fs: f64,
    pub shaft_hz: f64,
    pub shaft_amps: (f64, f64),
    pub impact_hz: f64,
    pub impact_step_hz: f64,
    pub res_lo_hz: f64,
    pub res_hi_hz: f64,
    pub decay_s: f64,
    pub impact_amp: f64,
    pub amp_jitter: f64,
    pub timing_jitter: f64,
    pub noise_std: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            fs: 12_000.0,
            shaft_hz: 29.95,
            shaft_amps: (0.6, 0.25),
            impact_hz: 55.0,
            impact_step_hz: 40.0,
            res_lo_hz: 1500.0,
            res_hi_hz: 4500.0,
            decay_s: 0.0015,
            impact_amp: 1.0,
            amp_jitter: 0.2,
            timing_jitter: 0.005,
            noise_std: 0.3,
        }
    }
}

impl SynthSpec {
    /// `(impact rate, resonance)` in Hz for a fault class, `None` for class 0.
    pub fn fault(&self, class: usize, num_classes: usize) -> Option<(f64, f64)> {
        let r = class.checked_sub(1)? as f64;
        let span = (num_classes - 1) as f64;
        Some((
            self.impact_hz + r * self.impact_step_hz,
            self.res_lo_hz + (self.res_hi_hz - self.res_lo_hz) * r / span,
        ))
    }

    pub fn window(&self, class: usize, num_classes: usize, length: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
        let (a1, a2) = self.shaft_amps;
        let p1 = rng.random_range(0.0..TAU);
        let p2 = 2.0 * p1 + HARMONIC_PHASE;
        let w = TAU * self.shaft_hz / self.fs;
        let mut x: Vec<f64> = (0..length)
            .map(|n| a1 * (w * n as f64 + p1).sin() + a2 * (2.0 * w * n as f64 + p2).sin())
            .collect();

        if let Some((rate, res)) = self.fault(class, num_classes) {
            let period = self.fs / rate;
            let jitter = Normal::new(0.0, self.timing_jitter * period).expect("finite jitter");
            let tau = self.decay_s * self.fs;
            let ring = (8.0 * tau).ceil() as usize;
            let wr = TAU * res / self.fs;
            // phase-locked to the shaft; one period early so a ring
            // entering the window is kept
            let mut t = p1 / TAU * period - period;
            while t < length as f64 {
                let at = t + jitter.sample(rng);
                let amp = self.impact_amp * (1.0 + rng.random_range(-self.amp_jitter..=self.amp_jitter));
                let first = at.ceil().max(0.0) as usize;
                let last = ((at + ring as f64) as usize).min(length);
                for (n, v) in x.iter_mut().enumerate().take(last).skip(first) {
                    let dt = n as f64 - at;
                    *v += amp * (-dt / tau).exp() * (wr * dt).sin();
                }
                t += period;
            }
        }

        let noise = Normal::new(0.0, self.noise_std).expect("finite noise");
        x.iter().map(|&v| (v + noise.sample(rng)) as f32).collect()
    }
}

/// `per_class` single-channel windows of every class, class-major order.
pub fn synth_dataset(num_classes: usize, per_class: usize, length: usize, seed: u64) -> Result<SampleSet> {
    synth_with(&SynthSpec::default(), num_classes, per_class, length, seed)
}

pub fn synth_with(
    spec: &SynthSpec,
    num_classes: usize,
    per_class: usize,
    length: usize,
    seed: u64,
) -> Result<SampleSet> {
    if num_classes < 2 {
        return Err(Error::Param("num_classes", format!("need at least 2, got {num_classes}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut windows = Vec::with_capacity(num_classes * per_class * length);
    let mut labels = Vec::with_capacity(num_classes * per_class);
    for class in 0..num_classes {
        for _ in 0..per_class {
            windows.extend(spec.window(class, num_classes, length, &mut rng));
            labels.push(class as u16);
        }
    }
    let mut set = SampleSet::new(1, length, num_classes, windows, labels)?;
    set.class_names = (0..num_classes)
        .map(|k| if k == 0 { "normal".to_string() } else { format!("fault{k}") })
        .collect();
    Ok(set)
}
