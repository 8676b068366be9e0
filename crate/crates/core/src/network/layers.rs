//! Parameterized building blocks. Each layer holds ids into the network's
//! [`ParamStore`] and evaluates on a [`Session`].

use rand_chacha::ChaCha8Rng;

use crate::autograd::{BatchStats, Var};
use crate::error::Result;
use crate::neurons::{self, attention_kernel_size, MembraneState, NeuronConfig, SPATIAL_KERNEL};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::params::{fan_in_uniform, ParamId, ParamStore};
use super::session::{BnUpdate, Mode, Session};

pub(crate) struct Builder<'a, F> {
    pub store: &'a mut ParamStore<F>,
    pub rng: ChaCha8Rng,
    pub conv_bias: bool,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl<F: Scalar> Builder<'_, F> {
    /// Conv with `k // 2` padding.
    pub fn conv(&mut self, name: &str, c_in: usize, c_out: usize, kernel: usize, stride: usize) -> Conv {
        let fan_in = c_in * kernel;
        let weight = fan_in_uniform(&[c_out, c_in, kernel], fan_in, &mut self.rng);
        let weight = self.store.add(format!("{name}.weight"), weight, true);
        let bias = self.conv_bias.then(|| {
            let b = fan_in_uniform(&[c_out], fan_in, &mut self.rng);
            self.store.add(format!("{name}.bias"), b, true)
        });
        Conv {
            name: name.to_string(),
            weight,
            bias,
            c_in,
            c_out,
            kernel,
            stride,
            padding: kernel / 2,
        }
    }

    pub fn batchnorm(&mut self, name: &str, channels: usize) -> BatchNorm {
        BatchNorm {
            name: name.to_string(),
            gamma: self.store.add(format!("{name}.gamma"), Tensor::full([channels], F::one()), true),
            beta: self.store.add(format!("{name}.beta"), Tensor::zeros([channels]), true),
            running_mean: self
                .store
                .add(format!("{name}.running_mean"), Tensor::zeros([channels]), false),
            running_var: self
                .store
                .add(format!("{name}.running_var"), Tensor::full([channels], F::one()), false),
            eps: self.bn_eps,
            momentum: self.bn_momentum,
        }
    }

    pub fn spiking(&mut self, name: &str, channels: usize, cfg: NeuronConfig, attention: bool) -> Spiking {
        // Small random kernels: the gate sigmoid(ca * sa) stays near 0.5, but
        // unlike all-zero kernels this is not a stationary point of the product.
        let attention = attention.then(|| {
            let k_c = attention_kernel_size(channels);
            let w_c = fan_in_uniform(&[1, 1, k_c], k_c, &mut self.rng);
            let w_s = fan_in_uniform(&[1, 1, SPATIAL_KERNEL], SPATIAL_KERNEL, &mut self.rng);
            (
                self.store.add(format!("{name}.w_c"), w_c, true),
                self.store.add(format!("{name}.w_s"), w_s, true),
            )
        });
        Spiking {
            name: name.to_string(),
            cfg,
            channels,
            attention,
        }
    }

    pub fn channel_attention(&mut self, name: &str, channels: usize) -> ChannelAttention {
        let kernel = attention_kernel_size(channels);
        ChannelAttention {
            weight: self
                .store
                .add(format!("{name}.weight"), Tensor::zeros([1, 1, kernel]), true),
            channels,
            kernel,
        }
    }

    pub fn spatial_attention(&mut self, name: &str) -> SpatialAttention {
        SpatialAttention {
            weight: self.store.add(
                format!("{name}.weight"),
                Tensor::zeros([1, 1, SPATIAL_KERNEL]),
                true,
            ),
            kernel: SPATIAL_KERNEL,
        }
    }

    pub fn linear(&mut self, name: &str, inputs: usize, outputs: usize) -> Linear {
        let w = fan_in_uniform(&[outputs, inputs], inputs, &mut self.rng);
        let b = fan_in_uniform(&[outputs], inputs, &mut self.rng);
        Linear {
            weight: self.store.add(format!("{name}.weight"), w, true),
            bias: self.store.add(format!("{name}.bias"), b, true),
            inputs,
            outputs,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub name: String,
    pub(crate) weight: ParamId,
    pub(crate) bias: Option<ParamId>,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv {
    pub fn forward<F: Scalar>(&self, sess: &mut Session<F>, store: &ParamStore<F>, x: Var) -> Result<Var> {
        let w = sess.bind(store, self.weight);
        let b = self.bias.map(|b| sess.bind(store, b));
        sess.tape.conv1d(x, w, b, self.stride, self.padding)
    }

    pub fn out_len(&self, len: usize) -> usize {
        (len + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn weight_id(&self) -> ParamId {
        self.weight
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub name: String,
    pub(crate) gamma: ParamId,
    pub(crate) beta: ParamId,
    pub(crate) running_mean: ParamId,
    pub(crate) running_var: ParamId,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    /// Normalizes `x`; in train mode also queues a running-stat update and
    /// returns the batch statistics used.
    pub fn forward<F: Scalar>(
        &self,
        sess: &mut Session<F>,
        store: &ParamStore<F>,
        x: Var,
    ) -> Result<(Var, Option<BatchStats<F>>)> {
        let g = sess.bind(store, self.gamma);
        let b = sess.bind(store, self.beta);
        match sess.mode {
            Mode::Train => {
                let (y, stats) = sess.tape.batchnorm_train(x, g, b, F::of(self.eps))?;
                self.queue_update(sess, stats.clone());
                Ok((y, Some(stats)))
            }
            Mode::Eval => {
                let y = sess.tape.batchnorm_eval(
                    x,
                    g,
                    b,
                    store.value(self.running_mean).data(),
                    store.value(self.running_var).data(),
                    F::of(self.eps),
                )?;
                Ok((y, None))
            }
        }
    }

    pub(crate) fn queue_update<F: Scalar>(&self, sess: &mut Session<F>, stats: BatchStats<F>) {
        sess.bn_updates.push(BnUpdate {
            mean: self.running_mean,
            var: self.running_var,
            momentum: self.momentum,
            stats,
        });
    }
}

/// A layer of LIF neurons, optionally with attention-filtered charging.
#[derive(Clone, Debug)]
pub struct Spiking {
    pub name: String,
    pub cfg: NeuronConfig,
    pub channels: usize,
    pub(crate) attention: Option<(ParamId, ParamId)>,
}

impl Spiking {
    pub fn has_attention(&self) -> bool {
        self.attention.is_some()
    }

    /// Advances `state` by one timestep and returns the spikes.
    pub fn step<F: Scalar>(
        &self,
        sess: &mut Session<F>,
        store: &ParamStore<F>,
        state: &mut MembraneState,
        current: Var,
    ) -> Result<Var> {
        let step = match self.attention {
            Some((w_c, w_s)) => {
                let vars = neurons::AttentionVars {
                    w_c: sess.bind(store, w_c),
                    w_s: sess.bind(store, w_s),
                };
                neurons::asn_step(&mut sess.tape, state, current, &self.cfg, &vars)?
            }
            None => neurons::lif_step(&mut sess.tape, state, current, &self.cfg)?,
        };
        *state = step.state;
        let spikes = sess.tape.value(step.spikes);
        debug_assert!(spikes.is_binary(), "{}: non-binary spike output", self.name);
        let fired = spikes.data().iter().filter(|&&s| s != F::zero()).count();
        let sites = spikes.numel();
        sess.spikes.record(&self.name, fired as u64, sites as u64);
        Ok(step.spikes)
    }
}

#[derive(Clone, Debug)]
pub struct ChannelAttention {
    pub(crate) weight: ParamId,
    pub channels: usize,
    pub kernel: usize,
}

impl ChannelAttention {
    /// Per-channel gates `[b,c,1]` in (0,1).
    pub fn weights<F: Scalar>(&self, sess: &mut Session<F>, store: &ParamStore<F>, x: Var) -> Result<Var> {
        let w = sess.bind(store, self.weight);
        let scores = neurons::channel_scores(&mut sess.tape, x, w)?;
        Ok(sess.tape.sigmoid(scores))
    }

    pub fn apply<F: Scalar>(&self, sess: &mut Session<F>, store: &ParamStore<F>, x: Var) -> Result<Var> {
        let w = self.weights(sess, store, x)?;
        sess.tape.mul(w, x)
    }
}

#[derive(Clone, Debug)]
pub struct SpatialAttention {
    pub(crate) weight: ParamId,
    pub kernel: usize,
}

impl SpatialAttention {
    /// Per-position gates `[b,1,s]` in (0,1).
    pub fn weights<F: Scalar>(&self, sess: &mut Session<F>, store: &ParamStore<F>, x: Var) -> Result<Var> {
        let w = sess.bind(store, self.weight);
        let scores = neurons::spatial_scores(&mut sess.tape, x, w)?;
        Ok(sess.tape.sigmoid(scores))
    }

    pub fn apply<F: Scalar>(&self, sess: &mut Session<F>, store: &ParamStore<F>, x: Var) -> Result<Var> {
        let w = self.weights(sess, store, x)?;
        sess.tape.mul(w, x)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub(crate) weight: ParamId,
    pub(crate) bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn forward<F: Scalar>(&self, sess: &mut Session<F>, store: &ParamStore<F>, x: Var) -> Result<Var> {
        let w = sess.bind(store, self.weight);
        let b = sess.bind(store, self.bias);
        sess.tape.linear(x, w, Some(b))
    }
}
