//! Surrogate-gradient training through time, step learning-rate schedule
//! and evaluation.

mod eval;
mod optim;
mod sweep;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::SampleSet;
use crate::error::{Error, Result};
use crate::network::{Network, ParamStore, Session};
use crate::scalar::Scalar;

pub use eval::{aggregate, evaluate, extract_features, EvalOptions, EvalReport, SeedSummary};
pub use optim::{clip_grad_norm, Adam};
pub use sweep::{noise_sweep, sweep_csv, SweepRow};

use eval::argmax;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    /// Epochs between decays.
    pub lr_step: usize,
    pub seed: u64,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm bound; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub standardize: bool,
    /// Threads used for the per-epoch evaluation pass.
    pub eval_workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            lr0: 0.01,
            lr_decay: 0.1,
            lr_step: 30,
            seed: 0,
            betas: (0.9, 0.999),
            adam_eps: 1e-8,
            weight_decay: 0.0,
            clip_norm: None,
            standardize: true,
            eval_workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) || self.lr_step == 0 {
            return bad("lr_decay must lie in (0,1] and lr_step be >= 1");
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) || self.adam_eps <= 0.0 {
            return bad("adam betas must lie in [0,1) and eps be positive");
        }
        if self.weight_decay < 0.0 || self.clip_norm.is_some_and(|c| c <= 0.0) {
            return bad("weight_decay must be >= 0 and clip_norm positive");
        }
        Ok(())
    }
}

/// Learning rate for a zero-based epoch.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * cfg.lr_decay.powi((epoch / cfg.lr_step) as i32)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// Zero-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub eval_acc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    /// `epoch,lr,train_loss,train_acc,eval_acc`, one line per epoch; the
    /// last field is empty without an evaluation set.
    pub fn to_log(&self) -> String {
        let mut s = String::from("epoch,lr,train_loss,train_acc,eval_acc\n");
        for r in &self.epochs {
            let eval = r.eval_acc.map_or(String::new(), |a| format!("{a:.6}"));
            let _ = writeln!(
                s,
                "{},{},{:.6},{:.6},{}",
                r.epoch, r.lr, r.train_loss, r.train_acc, eval
            );
        }
        s
    }
}

/// Result of a finished run. The network passed to [`train`] holds the
/// final weights.
#[derive(Clone, Debug)]
pub struct TrainOutcome<F> {
    pub history: History,
    /// Weights of the best epoch: highest eval accuracy, or lowest training
    /// loss without an evaluation set. Ties keep the earlier epoch.
    pub best: ParamStore<F>,
    pub best_epoch: usize,
}

/// Loss and accuracy of one optimization step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub correct: usize,
}

/// Forward, backward and Adam update on one batch, then the batchnorm
/// running statistics. Membrane states start from zero.
pub fn train_step<F: Scalar>(
    net: &mut Network<F>,
    adam: &mut Adam<F>,
    set: &SampleSet,
    indices: &[usize],
    lr: f64,
    cfg: &TrainConfig,
) -> Result<StepStats> {
    let (x, labels) = set.batch::<F>(indices, cfg.standardize);
    let mut sess = Session::train();
    let xv = net.input(&mut sess, x)?;
    let out = net.forward(&mut sess, xv)?;
    let loss = sess.tape.cross_entropy(out.mean_logits, &labels)?;
    let loss_value = sess.tape.value(loss).data()[0].as_f64();
    if !loss_value.is_finite() {
        return Err(Error::Numeric {
            layer: "loss".into(),
            detail: format!("loss is {loss_value}"),
        });
    }
    let mean = sess.tape.value(out.mean_logits);
    let k = mean.shape()[1];
    let correct = mean
        .data()
        .chunks(k)
        .zip(&labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count();
    sess.tape.backward(loss)?;
    let mut grads = sess.param_grads(net.store());
    if let Some(max) = cfg.clip_norm {
        clip_grad_norm(&mut grads, max);
    }
    adam.step(net.store_mut(), &grads, lr)?;
    sess.commit_running_stats(net.store_mut());
    Ok(StepStats {
        loss: loss_value,
        correct,
    })
}

fn new_adam<F: Scalar>(cfg: &TrainConfig) -> Adam<F> {
    let mut adam = Adam::new(cfg.betas.0, cfg.betas.1, cfg.adam_eps);
    adam.weight_decay = cfg.weight_decay;
    adam
}

/// Trains `net` in place. `on_epoch` sees every finished epoch.
///
/// On a non-finite loss or gradient the network is rolled back to the
/// weights at the end of the last completed epoch and the numeric error
/// is returned.
pub fn train<F: Scalar>(
    net: &mut Network<F>,
    train_set: &SampleSet,
    eval_set: Option<&SampleSet>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<F>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let mut adam = new_adam::<F>(cfg);
    let mut history = History::default();
    let mut last_good = net.store().clone();
    let mut best = (net.store().clone(), 0usize, f64::NEG_INFINITY);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let eval_opts = EvalOptions {
        batch_size: cfg.batch_size,
        standardize: cfg.standardize,
        dump_timesteps: false,
        workers: cfg.eval_workers,
    };

    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        order.sort_unstable();
        order.shuffle(&mut rng);

        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            match train_step(net, &mut adam, train_set, batch, lr, cfg) {
                Ok(s) => {
                    loss_sum += s.loss * batch.len() as f64;
                    correct += s.correct;
                }
                Err(e @ Error::Numeric { .. }) => {
                    *net.store_mut() = last_good;
                    return Err(e);
                }
                Err(e) => return Err(e),
            }
        }
        let eval_acc = match eval_set {
            Some(set) => Some(evaluate(net, set, &eval_opts)?.accuracy),
            None => None,
        };
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / train_set.len() as f64,
            train_acc: correct as f64 / train_set.len() as f64,
            eval_acc,
        };
        let score = eval_acc.unwrap_or(-record.train_loss);
        if score > best.2 {
            best = (net.store().clone(), epoch, score);
        }
        last_good = net.store().clone();
        history.epochs.push(record);
        on_epoch(&record);
    }
    Ok(TrainOutcome {
        history,
        best: best.0,
        best_epoch: best.1,
    })
}

/// Cross-entropy of the time-averaged logits on one batch, without
/// updating anything.
pub fn batch_loss<F: Scalar>(net: &Network<F>, set: &SampleSet, indices: &[usize], standardize: bool) -> Result<f64> {
    let (x, labels) = set.batch::<F>(indices, standardize);
    let mut sess = Session::train();
    let xv = net.input(&mut sess, x)?;
    let out = net.forward(&mut sess, xv)?;
    let loss = sess.tape.cross_entropy(out.mean_logits, &labels)?;
    Ok(sess.tape.value(loss).data()[0].as_f64())
}
