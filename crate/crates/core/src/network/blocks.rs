//! The multi-scale attention encoder and the spike residual attention block.

use crate::autograd::{BatchStats, Var};
use crate::error::{shape_err, Result};
use crate::neurons::MembraneState;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::config::{AttentionOrder, NetworkConfig, ResidualBlockConfig};
use super::layers::{BatchNorm, Builder, ChannelAttention, Conv, SpatialAttention, Spiking};
use super::params::ParamStore;
use super::session::Session;

/// One encoder pathway: `bn(conv(pool(sn(bn(conv(x))))))`.
#[derive(Clone, Debug)]
pub struct Pathway {
    pub kernel: usize,
    pub conv1: Conv,
    pub bn1: BatchNorm,
    pub sn: Spiking,
    pub conv2: Conv,
    pub bn2: BatchNorm,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub pathways: Vec<Pathway>,
    /// Channel attention over the concatenated pathway currents.
    pub fusion_ca: Option<ChannelAttention>,
    pub fusion: Spiking,
    pub pool_kernel: usize,
    pub pool_stride: usize,
}

/// Membrane states of the encoder plus the cached first-stage currents,
/// which are identical at every timestep because the input repeats.
#[derive(Clone, Debug, Default)]
pub struct EncoderState<F> {
    pathways: Vec<MembraneState>,
    fusion: MembraneState,
    first_stage: Vec<Option<(Var, Option<BatchStats<F>>)>>,
}

impl Encoder {
    pub(crate) fn build<F: Scalar>(b: &mut Builder<'_, F>, cfg: &NetworkConfig) -> Self {
        let enc = &cfg.encoder;
        let (c1, c2) = enc.stage_channels;
        let pathways = enc
            .kernel_sizes
            .iter()
            .map(|&k| {
                let p = format!("encoder.p{k}");
                Pathway {
                    kernel: k,
                    conv1: b.conv(&format!("{p}.conv1"), cfg.input_channels, c1, k, 1),
                    bn1: b.batchnorm(&format!("{p}.bn1"), c1),
                    sn: b.spiking(&format!("{p}.sn"), c1, cfg.neuron, false),
                    conv2: b.conv(&format!("{p}.conv2"), c1, c2, k, enc.second_stride),
                    bn2: b.batchnorm(&format!("{p}.bn2"), c2),
                }
            })
            .collect::<Vec<_>>();
        let fusion_ca = enc
            .fusion_attention
            .then(|| b.channel_attention("encoder.fusion_ca", c2 * pathways.len()));
        let fusion = b.spiking("encoder.fusion.sn", c2, cfg.neuron, cfg.asn.encoder_fusion);
        Self {
            pathways,
            fusion_ca,
            fusion,
            pool_kernel: enc.pool_kernel,
            pool_stride: enc.pool_stride,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.fusion.channels
    }

    /// Per-pathway currents (output of each second batchnorm).
    pub fn currents<F: Scalar>(
        &self,
        sess: &mut Session<F>,
        store: &ParamStore<F>,
        x: Var,
        state: &mut EncoderState<F>,
    ) -> Result<Vec<Var>> {
        let len = sess.tape.shape(x)[2];
        let reduction = self.pool_stride * self.pathways.first().map_or(1, |p| p.conv2.stride);
        if !len.is_multiple_of(reduction) {
            return Err(shape_err(
                "encoder",
                "length",
                format!("input length {len} is not divisible by {reduction}"),
            ));
        }
        state.pathways.resize(self.pathways.len(), MembraneState::new());
        state.first_stage.resize(self.pathways.len(), None);
        let mut out = Vec::with_capacity(self.pathways.len());
        for (i, p) in self.pathways.iter().enumerate() {
            let current = match &state.first_stage[i] {
                Some((v, stats)) => {
                    if let Some(stats) = stats {
                        p.bn1.queue_update(sess, stats.clone());
                    }
                    *v
                }
                None => {
                    let c = p.conv1.forward(sess, store, x)?;
                    sess.trace(p.conv1.name.to_string(), c);
                    let (v, stats) = p.bn1.forward(sess, store, c)?;
                    state.first_stage[i] = Some((v, stats));
                    v
                }
            };
            let s = p.sn.step(sess, store, &mut state.pathways[i], current)?;
            let pooled = sess.tape.avgpool1d(s, self.pool_kernel, self.pool_stride)?;
            sess.trace(format!("encoder.p{}.pool", p.kernel), pooled);
            let c = p.conv2.forward(sess, store, pooled)?;
            sess.trace(p.conv2.name.clone(), c);
            out.push(p.bn2.forward(sess, store, c)?.0);
        }
        Ok(out)
    }

    /// Channel-attention gates over the concatenated currents, `[b,3C,1]`.
    /// Without fusion attention every gate is 1.
    pub fn channel_attention_fused<F: Scalar>(
        &self,
        sess: &mut Session<F>,
        store: &ParamStore<F>,
        concatenated: Var,
    ) -> Result<Var> {
        match &self.fusion_ca {
            Some(ca) => ca.weights(sess, store, concatenated),
            None => {
                let shape = sess.tape.shape(concatenated);
                let ones = Tensor::full([shape[0], shape[1], 1], F::one());
                Ok(sess.tape.constant(ones))
            }
        }
    }

    /// Gates the concatenated currents, splits them back per pathway and
    /// sums them into one `C`-channel current.
    pub fn fuse<F: Scalar>(&self, sess: &mut Session<F>, store: &ParamStore<F>, currents: &[Var]) -> Result<Var> {
        let parts = match &self.fusion_ca {
            Some(ca) => {
                let cat = sess.tape.concat_channels(currents)?;
                let gated = ca.apply(sess, store, cat)?;
                sess.tape.split_channels(gated, currents.len())?
            }
            None => currents.to_vec(),
        };
        let mut sum = parts[0];
        for &p in &parts[1..] {
            sum = sess.tape.add(sum, p)?;
        }
        Ok(sum)
    }

    pub fn forward<F: Scalar>(
        &self,
        sess: &mut Session<F>,
        store: &ParamStore<F>,
        x: Var,
        state: &mut EncoderState<F>,
    ) -> Result<Var> {
        let currents = self.currents(sess, store, x, state)?;
        let fused = self.fuse(sess, store, &currents)?;
        let s = self.fusion.step(sess, store, &mut state.fusion, fused)?;
        sess.trace("encoder.out", s);
        Ok(s)
    }
}

/// `y = sn(attn(bn(conv(sn(bn(conv_s(x)))))) + bn(conv1x1_s(x)))`.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub name: String,
    pub conv1: Conv,
    pub bn1: BatchNorm,
    pub sn1: Spiking,
    pub conv2: Conv,
    pub bn2: BatchNorm,
    pub ca: Option<ChannelAttention>,
    pub sa: Option<SpatialAttention>,
    pub order: AttentionOrder,
    pub shortcut_conv: Conv,
    pub shortcut_bn: BatchNorm,
    pub out: Spiking,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct BlockState {
    inner: MembraneState,
    out: MembraneState,
}

impl ResidualBlock {
    pub(crate) fn build<F: Scalar>(
        b: &mut Builder<'_, F>,
        name: &str,
        bc: &ResidualBlockConfig,
        cfg: &NetworkConfig,
    ) -> Self {
        let (ci, co, s) = (bc.in_channels, bc.out_channels, bc.downsample_stride);
        let conv1 = b.conv(&format!("{name}.conv1"), ci, co, 3, s);
        let bn1 = b.batchnorm(&format!("{name}.bn1"), co);
        let sn1 = b.spiking(&format!("{name}.sn1"), co, cfg.neuron, false);
        let conv2 = b.conv(&format!("{name}.conv2"), co, co, 3, 1);
        let bn2 = b.batchnorm(&format!("{name}.bn2"), co);
        let (ca, sa) = if bc.use_attention {
            (
                Some(b.channel_attention(&format!("{name}.ca"), co)),
                Some(b.spatial_attention(&format!("{name}.sa"))),
            )
        } else {
            (None, None)
        };
        let shortcut_conv = b.conv(&format!("{name}.shortcut.conv"), ci, co, 1, s);
        let shortcut_bn = b.batchnorm(&format!("{name}.shortcut.bn"), co);
        let out = b.spiking(&format!("{name}.sn_out"), co, cfg.neuron, cfg.asn.block_outputs);
        Self {
            name: name.to_string(),
            conv1,
            bn1,
            sn1,
            conv2,
            bn2,
            ca,
            sa,
            order: cfg.attention_order,
            shortcut_conv,
            shortcut_bn,
            out,
        }
    }

    pub fn refine<F: Scalar>(&self, sess: &mut Session<F>, store: &ParamStore<F>, current: Var) -> Result<Var> {
        let (Some(ca), Some(sa)) = (&self.ca, &self.sa) else {
            return Ok(current);
        };
        match self.order {
            AttentionOrder::CaSa => {
                let c = ca.apply(sess, store, current)?;
                sa.apply(sess, store, c)
            }
            AttentionOrder::SaCa => {
                let s = sa.apply(sess, store, current)?;
                ca.apply(sess, store, s)
            }
            AttentionOrder::Parallel => {
                let wc = ca.weights(sess, store, current)?;
                let ws = sa.weights(sess, store, current)?;
                let c = sess.tape.mul(wc, current)?;
                sess.tape.mul(ws, c)
            }
        }
    }

    /// Attention-refined residual current plus the shortcut current: the
    /// input to the block's output neuron.
    pub fn current<F: Scalar>(
        &self,
        sess: &mut Session<F>,
        store: &ParamStore<F>,
        x: Var,
        state: &mut BlockState,
    ) -> Result<Var> {
        debug_assert!(
            sess.tape.value(x).is_binary(),
            "{}: residual block input must be spikes",
            self.name
        );
        let c = self.conv1.forward(sess, store, x)?;
        sess.trace(self.conv1.name.clone(), c);
        let (h, _) = self.bn1.forward(sess, store, c)?;
        let s = self.sn1.step(sess, store, &mut state.inner, h)?;
        let c = self.conv2.forward(sess, store, s)?;
        sess.trace(self.conv2.name.clone(), c);
        let (res, _) = self.bn2.forward(sess, store, c)?;
        let res = self.refine(sess, store, res)?;

        let c = self.shortcut_conv.forward(sess, store, x)?;
        sess.trace(self.shortcut_conv.name.clone(), c);
        let (short, _) = self.shortcut_bn.forward(sess, store, c)?;
        sess.tape.add(res, short)
    }

    pub fn forward<F: Scalar>(
        &self,
        sess: &mut Session<F>,
        store: &ParamStore<F>,
        x: Var,
        state: &mut BlockState,
    ) -> Result<Var> {
        let current = self.current(sess, store, x, state)?;
        let y = self.out.step(sess, store, &mut state.out, current)?;
        sess.trace(format!("{}.out", self.name), y);
        Ok(y)
    }
}
