use crate::autograd::{BatchStats, Tape, Var};
use crate::energy::SpikeStats;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::params::{ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batchnorm, gradients recorded.
    Train,
    /// Running statistics in batchnorm, no gradient recording.
    Eval,
}

pub(crate) struct BnUpdate<F> {
    pub mean: ParamId,
    pub var: ParamId,
    pub momentum: f64,
    pub stats: BatchStats<F>,
}

/// State of one forward (and backward) pass: the tape, the binding of
/// stored parameters to tape leaves, pending running-stat updates and the
/// spike counts recorded along the way.
pub struct Session<F> {
    pub tape: Tape<F>,
    pub mode: Mode,
    bindings: Vec<Option<Var>>,
    pub(crate) bn_updates: Vec<BnUpdate<F>>,
    pub spikes: SpikeStats,
    /// When set, forward passes append `(stage, shape)` records.
    pub trace: Option<Vec<(String, Vec<usize>)>>,
}

impl<F: Scalar> Session<F> {
    pub fn new(mode: Mode) -> Self {
        let tape = match mode {
            Mode::Train => Tape::new(),
            Mode::Eval => Tape::inference(),
        };
        Self {
            tape,
            mode,
            bindings: Vec::new(),
            bn_updates: Vec::new(),
            spikes: SpikeStats::new(),
            trace: None,
        }
    }

    pub fn train() -> Self {
        Self::new(Mode::Train)
    }

    pub fn eval() -> Self {
        Self::new(Mode::Eval)
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    /// Tape leaf for a stored tensor; one leaf per tensor per session, so
    /// gradients from every timestep accumulate on it.
    pub fn bind(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        if self.bindings.len() <= id.0 {
            self.bindings.resize(id.0 + 1, None);
        }
        if let Some(v) = self.bindings[id.0] {
            return v;
        }
        let entry = store.get(id);
        let v = if entry.trainable {
            self.tape.param(entry.value.clone())
        } else {
            self.tape.constant(entry.value.clone())
        };
        self.bindings[id.0] = Some(v);
        v
    }

    pub fn bound(&self, id: ParamId) -> Option<Var> {
        self.bindings.get(id.0).copied().flatten()
    }

    /// Gradient of every stored tensor after `backward`, indexed by id.
    pub fn param_grads(&self, store: &ParamStore<F>) -> Vec<Option<Tensor<F>>> {
        store
            .ids()
            .map(|id| self.bound(id).and_then(|v| self.tape.grad(v)))
            .collect()
    }

    pub(crate) fn trace(&mut self, stage: impl Into<String>, v: Var) {
        if let Some(t) = self.trace.as_mut() {
            let stage = stage.into();
            if !t.iter().any(|(s, _)| *s == stage) {
                t.push((stage, self.tape.shape(v).to_vec()));
            }
        }
    }

    /// Folds recorded batch statistics into the running averages, in the
    /// order the batchnorm layers were evaluated.
    pub fn commit_running_stats(&mut self, store: &mut ParamStore<F>) {
        for u in self.bn_updates.drain(..) {
            let m = F::of(u.momentum);
            let keep = F::one() - m;
            let unbias = if u.stats.count > 1 {
                F::of_usize(u.stats.count) / F::of_usize(u.stats.count - 1)
            } else {
                F::one()
            };
            for (r, &b) in store.value_mut(u.mean).data_mut().iter_mut().zip(&u.stats.mean) {
                *r = keep * *r + m * b;
            }
            for (r, &b) in store.value_mut(u.var).data_mut().iter_mut().zip(&u.stats.var) {
                *r = keep * *r + m * b * unbias;
            }
        }
    }
}
