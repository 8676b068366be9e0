use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Var;
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::blocks::{BlockState, Encoder, EncoderState, ResidualBlock};
use super::config::NetworkConfig;
use super::layers::{Builder, Linear};
use super::params::ParamStore;
use super::session::Session;

/// Multi-scale residual attention spiking network.
#[derive(Clone, Debug)]
pub struct Network<F> {
    config: NetworkConfig,
    store: ParamStore<F>,
    pub encoder: Encoder,
    pub blocks: Vec<ResidualBlock>,
    pub fc: Linear,
}

/// Everything a forward pass exposes.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `[b, num_classes]` logits, one per timestep.
    pub logits: Vec<Var>,
    /// Logits averaged over timesteps; the decoded output.
    pub mean_logits: Var,
    /// Named per-timestep activations: spike maps of `encoder` and each
    /// `blockN`, and the `[b,C]` globally pooled `features`.
    pub taps: Vec<(String, Vec<Var>)>,
}

/// Per-parameter-group counts in construction order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub total: usize,
    pub by_layer: Vec<(String, usize)>,
}

impl<F: Scalar> Network<F> {
    /// Builds a freshly initialized network; `seed` fixes every weight.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut b = Builder {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(seed),
            conv_bias: config.conv_bias,
            bn_eps: config.bn_eps,
            bn_momentum: config.bn_momentum,
        };
        let encoder = Encoder::build(&mut b, &config);
        let blocks = config
            .blocks
            .iter()
            .enumerate()
            .map(|(i, bc)| ResidualBlock::build(&mut b, &format!("block{}", i + 1), bc, &config))
            .collect();
        let fc = b.linear("fc", config.feature_channels(), config.num_classes);
        Ok(Self {
            config,
            store,
            encoder,
            blocks,
            fc,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<F> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.store
    }

    /// Changes the number of timesteps; weights are unaffected.
    pub fn set_timesteps(&mut self, timesteps: usize) {
        self.config.timesteps = timesteps.max(1);
    }

    /// Records a `[b, c_in, L]` input batch on the session.
    pub fn input(&self, sess: &mut Session<F>, batch: Tensor<F>) -> Result<Var> {
        match *batch.shape() {
            [_, c, l] if c == self.config.input_channels && l == self.config.input_length => {}
            ref other => {
                return Err(shape_err(
                    "network",
                    "input",
                    format!(
                        "expected [b,{},{}], got {other:?}",
                        self.config.input_channels, self.config.input_length
                    ),
                ))
            }
        }
        Ok(sess.tape.constant(batch))
    }

    /// Runs all timesteps from zeroed membrane states.
    pub fn forward(&self, sess: &mut Session<F>, x: Var) -> Result<ForwardOutput> {
        let store = &self.store;
        let steps = self.config.timesteps;
        let mut enc_state = EncoderState::<F>::default();
        let mut block_states = vec![BlockState::default(); self.blocks.len()];
        let mut taps: Vec<(String, Vec<Var>)> = std::iter::once("encoder".to_string())
            .chain((1..=self.blocks.len()).map(|i| format!("block{i}")))
            .chain(std::iter::once("features".to_string()))
            .map(|n| (n, Vec::with_capacity(steps)))
            .collect();
        let mut logits = Vec::with_capacity(steps);
        for _ in 0..steps {
            let mut s = self.encoder.forward(sess, store, x, &mut enc_state)?;
            taps[0].1.push(s);
            for (i, (block, state)) in self.blocks.iter().zip(&mut block_states).enumerate() {
                s = block.forward(sess, store, s, state)?;
                taps[i + 1].1.push(s);
            }
            let pooled = sess.tape.mean_axis(s, 2)?;
            let shape = sess.tape.shape(pooled);
            let flat = [shape[0], shape[1]];
            let features = sess.tape.reshape(pooled, &flat)?;
            sess.trace("head.pool", features);
            taps.last_mut().expect("features tap").1.push(features);
            let z = self.fc.forward(sess, store, features)?;
            sess.trace("logits", z);
            logits.push(z);
        }
        let mut sum = logits[0];
        for &z in &logits[1..] {
            sum = sess.tape.add(sum, z)?;
        }
        let mean_logits = sess.tape.scale(sum, F::one() / F::of_usize(steps));
        Ok(ForwardOutput {
            logits,
            mean_logits,
            taps,
        })
    }

    /// Trainable parameter totals, grouped by layer path.
    pub fn count_parameters(&self) -> ParamCount {
        let mut by_layer: Vec<(String, usize)> = Vec::new();
        for e in self.store.entries().iter().filter(|e| e.trainable) {
            let layer = e.name.rsplit_once('.').map_or(e.name.as_str(), |(l, _)| l);
            match by_layer.last_mut() {
                Some((name, n)) if name == layer => *n += e.value.numel(),
                _ => by_layer.push((layer.to_string(), e.value.numel())),
            }
        }
        ParamCount {
            total: by_layer.iter().map(|(_, n)| n).sum(),
            by_layer,
        }
    }

    /// Names accepted by feature export.
    pub fn tap_names(&self) -> Vec<String> {
        std::iter::once("encoder".to_string())
            .chain((1..=self.blocks.len()).map(|i| format!("block{i}")))
            .chain(std::iter::once("features".to_string()))
            .collect()
    }
}
