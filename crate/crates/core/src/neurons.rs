//! Leaky integrate-and-fire dynamics and the attention spiking neuron.
//!
//! One step charges the membrane, `H = (1 - 1/tau) * U + I`, fires
//! `S = [H >= theta]` through the surrogate-gradient Heaviside node, and
//! soft-resets `U' = H - S * theta`. The attention neuron gates `I` with a
//! channel x spatial attention map before charging.

use crate::autograd::{Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Kernel size of the spatial-attention convolution.
pub const SPATIAL_KERNEL: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ResetMode {
    /// Subtract the threshold after a spike.
    #[default]
    Soft,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeuronConfig {
    /// Membrane time constant; the leak factor is `1 - 1/tau`.
    pub tau: f64,
    /// Firing threshold.
    pub theta: f64,
    /// Width of the rectangular surrogate (height is `1/a`).
    pub a: f64,
    pub reset: ResetMode,
}

impl Default for NeuronConfig {
    fn default() -> Self {
        Self {
            tau: 2.0,
            theta: 1.0,
            a: 1.0,
            reset: ResetMode::Soft,
        }
    }
}

impl NeuronConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 1.0) {
            return Err(Error::Param("neuron", format!("tau must be > 1, got {}", self.tau)));
        }
        if !(self.theta > 0.0) {
            return Err(Error::Param("neuron", format!("theta must be > 0, got {}", self.theta)));
        }
        if !(self.a > 0.0) {
            return Err(Error::Param("neuron", format!("a must be > 0, got {}", self.a)));
        }
        Ok(())
    }

    pub fn leak(&self) -> f64 {
        1.0 - 1.0 / self.tau
    }
}

/// Post-reset membrane potential carried between timesteps.
///
/// A fresh state is the all-zero potential; it is materialized lazily at the
/// first step, where the leak term vanishes.
#[derive(Clone, Copy, Debug, Default)]
pub struct MembraneState {
    potential: Option<Var>,
}

impl MembraneState {
    pub fn new() -> Self {
        Self::default()
    }

    /// `None` until the first step.
    pub fn potential(&self) -> Option<Var> {
        self.potential
    }
}

/// Result of one neuron step.
#[derive(Clone, Copy, Debug)]
pub struct Step {
    pub spikes: Var,
    /// Membrane potential after charging, before reset.
    pub charge: Var,
    pub state: MembraneState,
}

/// One LIF step with soft reset.
pub fn lif_step<F: Scalar>(
    tape: &mut Tape<F>,
    state: &MembraneState,
    current: Var,
    cfg: &NeuronConfig,
) -> Result<Step> {
    let charge = match state.potential {
        None => current,
        Some(u) => {
            if tape.shape(u) != tape.shape(current) {
                return Err(shape_err(
                    "lif_step",
                    "current",
                    format!("state {:?} vs current {:?}", tape.shape(u), tape.shape(current)),
                ));
            }
            let leaked = tape.scale(u, F::of(cfg.leak()));
            tape.add(leaked, current)?
        }
    };
    let theta = F::of(cfg.theta);
    let spikes = tape.heaviside(charge, theta, F::of(cfg.a))?;
    let drop = tape.scale(spikes, -theta);
    let potential = tape.add(charge, drop)?;
    Ok(Step {
        spikes,
        charge,
        state: MembraneState {
            potential: Some(potential),
        },
    })
}

/// Channel-attention kernel size: `log2(c)/2 + 1/2`, truncated, then bumped
/// to the next odd integer when even.
pub fn attention_kernel_size(channels: usize) -> usize {
    let t = ((channels.max(1) as f64).log2() / 2.0 + 0.5).floor() as usize;
    if t.is_multiple_of(2) {
        t + 1
    } else {
        t
    }
}

/// Kernels of one attention neuron (no biases).
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<F> {
    /// `[1,1,k_c]`, sliding across channels.
    pub w_c: Tensor<F>,
    /// `[1,1,k_s]`, sliding along the signal.
    pub w_s: Tensor<F>,
}

impl<F: Scalar> AttentionParams<F> {
    /// Zero kernels: the gate starts at `sigmoid(0) = 0.5` everywhere.
    pub fn zeros(channels: usize) -> Self {
        Self {
            w_c: Tensor::zeros([1, 1, attention_kernel_size(channels)]),
            w_s: Tensor::zeros([1, 1, SPATIAL_KERNEL]),
        }
    }

    pub fn param_count(&self) -> usize {
        self.w_c.numel() + self.w_s.numel()
    }

    pub fn bind(&self, tape: &mut Tape<F>) -> AttentionVars {
        AttentionVars {
            w_c: tape.param(self.w_c.clone()),
            w_s: tape.param(self.w_s.clone()),
        }
    }
}

/// Attention kernels recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub w_c: Var,
    pub w_s: Var,
}

fn odd_kernel<F: Scalar>(tape: &Tape<F>, w: Var, what: &'static str) -> Result<usize> {
    match *tape.shape(w) {
        [1, 1, k] if k % 2 == 1 => Ok(k),
        ref other => Err(shape_err(
            "attention",
            what,
            format!("expected odd [1,1,k] kernel, got {other:?}"),
        )),
    }
}

/// Pre-sigmoid channel scores `[b,c,1]`: spatial mean, then a 1-D
/// convolution across the channel axis.
pub fn channel_scores<F: Scalar>(tape: &mut Tape<F>, current: Var, w_c: Var) -> Result<Var> {
    let k = odd_kernel(tape, w_c, "w_c")?;
    let avg = tape.mean_axis(current, 2)?;
    let avg = tape.transpose(avg)?;
    let scores = tape.conv1d(avg, w_c, None, 1, k / 2)?;
    tape.transpose(scores)
}

/// Pre-sigmoid spatial scores `[b,1,s]`: channel mean, then a 1-D
/// convolution along the signal.
pub fn spatial_scores<F: Scalar>(tape: &mut Tape<F>, current: Var, w_s: Var) -> Result<Var> {
    let k = odd_kernel(tape, w_s, "w_s")?;
    let avg = tape.mean_axis(current, 1)?;
    tape.conv1d(avg, w_s, None, 1, k / 2)
}

/// Gates `current` by `sigmoid(channel_scores * spatial_scores)`.
pub fn attention_filter<F: Scalar>(
    tape: &mut Tape<F>,
    current: Var,
    params: &AttentionVars,
) -> Result<Var> {
    let ca = channel_scores(tape, current, params.w_c)?;
    let sa = spatial_scores(tape, current, params.w_s)?;
    let joint = tape.mul(ca, sa)?;
    let gate = tape.sigmoid(joint);
    tape.mul(gate, current)
}

/// LIF step on the attention-filtered current.
pub fn asn_step<F: Scalar>(
    tape: &mut Tape<F>,
    state: &MembraneState,
    current: Var,
    cfg: &NeuronConfig,
    params: &AttentionVars,
) -> Result<Step> {
    let filtered = attention_filter(tape, current, params)?;
    lif_step(tape, state, filtered, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar_step(u_prev: Option<f64>, i: f64, cfg: &NeuronConfig) -> (f64, f64, f64) {
        let mut tape = Tape::<f64>::new();
        let mut state = MembraneState::new();
        if let Some(u) = u_prev {
            // reach U = u via one silent step with I = u from rest
            let c = tape.constant(Tensor::scalar(u));
            state = lif_step(&mut tape, &state, c, cfg).unwrap().state;
        }
        let c = tape.constant(Tensor::scalar(i));
        let step = lif_step(&mut tape, &state, c, cfg).unwrap();
        let val = |v: Var| tape.value(v).data()[0];
        (
            val(step.charge),
            val(step.spikes),
            val(step.state.potential().unwrap()),
        )
    }

    #[test]
    fn lif_fires_and_soft_resets() {
        let cfg = NeuronConfig::default();
        let (h, s, u) = scalar_step(Some(0.5), 0.9, &cfg);
        assert!((h - 1.15).abs() < 1e-12);
        assert_eq!(s, 1.0);
        assert!((u - 0.15).abs() < 1e-12);
    }

    #[test]
    fn lif_subthreshold() {
        let (h, s, u) = scalar_step(Some(0.0), 0.4, &NeuronConfig::default());
        assert_eq!((h, s, u), (0.4, 0.0, 0.4));
    }

    #[test]
    fn lif_threshold_boundary_fires() {
        let (_, s, u) = scalar_step(None, 1.0, &NeuronConfig::default());
        assert_eq!((s, u), (1.0, 0.0));
    }

    #[test]
    fn lif_leaks_geometrically() {
        let cfg = NeuronConfig::default();
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(Tensor::scalar(0.8));
        let mut state = lif_step(&mut tape, &MembraneState::new(), c, &cfg).unwrap().state;
        let zero = tape.constant(Tensor::scalar(0.0));
        for expect in [0.4, 0.2, 0.1, 0.05, 0.025] {
            let step = lif_step(&mut tape, &state, zero, &cfg).unwrap();
            assert_eq!(tape.value(step.spikes).data()[0], 0.0);
            state = step.state;
            assert!((tape.value(state.potential().unwrap()).data()[0] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn lif_rejects_shape_change() {
        let cfg = NeuronConfig::default();
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros([1, 2, 3]));
        let b = tape.constant(Tensor::zeros([1, 2, 4]));
        let st = lif_step(&mut tape, &MembraneState::new(), a, &cfg).unwrap().state;
        assert!(lif_step(&mut tape, &st, b, &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(NeuronConfig::default().validate().is_ok());
        for bad in [
            NeuronConfig { tau: 1.0, ..Default::default() },
            NeuronConfig { theta: 0.0, ..Default::default() },
            NeuronConfig { a: -1.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    /// Integer route: `floor(log2(c)/2 + 1/2) = m` with `4^m <= 2c < 4^(m+1)`.
    fn kernel_oracle(c: usize) -> usize {
        let mut m = 0;
        while 4usize.pow(m + 1) <= 2 * c {
            m += 1;
        }
        let m = m as usize;
        if m.is_multiple_of(2) {
            m + 1
        } else {
            m
        }
    }

    #[test]
    fn kernel_size_matches_enumeration() {
        for c in 1..=512 {
            assert_eq!(attention_kernel_size(c), kernel_oracle(c), "c = {c}");
        }
        assert_eq!(attention_kernel_size(64), 3);
        assert_eq!(attention_kernel_size(256), 5);
        assert_eq!(attention_kernel_size(2), 1);
        assert_eq!(attention_kernel_size(192), 5);
        assert_eq!(attention_kernel_size(512), 5);
    }

    #[test]
    fn zero_kernels_halve_current() {
        let mut tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..2 * 4 * 6).map(|i| (i as f64 * 0.37).cos()).collect();
        let x = tape.constant(Tensor::from_f64([2, 4, 6], &data).unwrap());
        let p = AttentionParams::<f64>::zeros(4).bind(&mut tape);
        let y = attention_filter(&mut tape, x, &p).unwrap();
        for (a, b) in tape.value(y).data().iter().zip(&data) {
            assert!((a - b / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn one_by_one_graph_by_hand() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64([1, 1, 1], &[1.0]).unwrap());
        let w_c = tape.param(Tensor::from_f64([1, 1, 1], &[1.0]).unwrap());
        let mut ws = vec![0.0; 7];
        ws[3] = 1.0;
        let w_s = tape.param(Tensor::from_f64([1, 1, 7], &ws).unwrap());
        let y = attention_filter(&mut tape, x, &AttentionVars { w_c, w_s }).unwrap();
        let expect = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((tape.value(y).data()[0] - expect).abs() < 1e-12);
        assert!((expect - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn filter_preserves_shape() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::full([2, 64, 128], 0.3));
        let p = AttentionParams::<f32>::zeros(64);
        assert_eq!(p.param_count(), 10);
        let p = p.bind(&mut tape);
        let y = attention_filter(&mut tape, x, &p).unwrap();
        assert_eq!(tape.shape(y), &[2, 64, 128]);
    }

    #[test]
    fn asn_with_zero_kernels_is_lif_on_half_current() {
        let cfg = NeuronConfig::default();
        let data: Vec<f64> = (0..3 * 5).map(|i| 2.5 * ((i * 7 % 11) as f64) / 11.0).collect();
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64([1, 3, 5], &data).unwrap());
        let half = tape.constant(Tensor::from_f64([1, 3, 5], &data.iter().map(|v| v / 2.0).collect::<Vec<_>>()).unwrap());
        let p = AttentionParams::<f64>::zeros(3).bind(&mut tape);
        let (mut sa, mut sb) = (MembraneState::new(), MembraneState::new());
        for _ in 0..4 {
            let a = asn_step(&mut tape, &sa, x, &cfg, &p).unwrap();
            let b = lif_step(&mut tape, &sb, half, &cfg).unwrap();
            assert_eq!(tape.value(a.spikes), tape.value(b.spikes));
            sa = a.state;
            sb = b.state;
        }
    }

    #[test]
    fn saturated_gate_matches_plain_lif() {
        // Large positive kernels on positive currents push the gate to 1.
        let cfg = NeuronConfig::default();
        let data: Vec<f64> = (0..4 * 9).map(|i| 0.2 + 0.9 * ((i * 5 % 13) as f64) / 13.0).collect();
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64([1, 4, 9], &data).unwrap());
        let k_c = attention_kernel_size(4);
        let w_c = tape.param(Tensor::full([1, 1, k_c], 40.0));
        let w_s = tape.param(Tensor::full([1, 1, SPATIAL_KERNEL], 40.0));
        let p = AttentionVars { w_c, w_s };
        let (mut sa, mut sb) = (MembraneState::new(), MembraneState::new());
        for _ in 0..6 {
            let a = asn_step(&mut tape, &sa, x, &cfg, &p).unwrap();
            let b = lif_step(&mut tape, &sb, x, &cfg).unwrap();
            assert_eq!(tape.value(a.spikes), tape.value(b.spikes));
            sa = a.state;
            sb = b.state;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn step_invariants(
            currents in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 12), 1..6),
            tau in 1.1f64..8.0,
            theta in 0.2f64..2.0,
        ) {
            let cfg = NeuronConfig { tau, theta, ..Default::default() };
            let mut tape = Tape::<f64>::new();
            let mut state = MembraneState::new();
            for c in &currents {
                let i = tape.constant(Tensor::from_f64([1, 3, 4], c).unwrap());
                let step = lif_step(&mut tape, &state, i, &cfg).unwrap();
                prop_assert!(tape.value(step.spikes).is_binary());
                let h = tape.value(step.charge).data();
                let s = tape.value(step.spikes).data();
                let u = tape.value(step.state.potential().unwrap()).data();
                for j in 0..12 {
                    prop_assert!((u[j] + s[j] * theta - h[j]).abs() < 1e-12);
                }
                state = step.state;
            }
        }

        #[test]
        fn monotone_in_current(
            prev in -2.0f64..2.0, i in -2.0f64..3.0, bump in 0.0f64..2.0,
        ) {
            let cfg = NeuronConfig::default();
            let (_, s0, _) = scalar_step(Some(prev), i, &cfg);
            let (_, s1, _) = scalar_step(Some(prev), i + bump, &cfg);
            prop_assert!(s1 >= s0);
        }

        #[test]
        fn gate_strictly_shrinks_current(
            data in prop::collection::vec(-2.0f64..2.0, 2 * 4 * 8),
            wc in prop::collection::vec(-1.0f64..1.0, 3),
            ws in prop::collection::vec(-1.0f64..1.0, 7),
        ) {
            let mut tape = Tape::<f64>::new();
            let x = tape.constant(Tensor::from_f64([2, 4, 8], &data).unwrap());
            let w_c = tape.param(Tensor::from_f64([1, 1, 3], &wc).unwrap());
            let w_s = tape.param(Tensor::from_f64([1, 1, 7], &ws).unwrap());
            let y = attention_filter(&mut tape, x, &AttentionVars { w_c, w_s }).unwrap();
            for (a, b) in tape.value(y).data().iter().zip(&data) {
                if *b != 0.0 {
                    prop_assert!(a.abs() < b.abs());
                    prop_assert!(a.signum() == b.signum());
                }
            }
        }
    }

    #[test]
    fn silent_without_input() {
        let cfg = NeuronConfig::default();
        let mut tape = Tape::<f32>::new();
        let zero = tape.constant(Tensor::zeros([2, 3, 5]));
        let mut state = MembraneState::new();
        for _ in 0..8 {
            let step = lif_step(&mut tape, &state, zero, &cfg).unwrap();
            assert!(tape.value(step.spikes).data().iter().all(|&v| v == 0.0));
            assert!(tape.value(step.state.potential().unwrap()).data().iter().all(|&v| v == 0.0));
            state = step.state;
        }
    }
}
