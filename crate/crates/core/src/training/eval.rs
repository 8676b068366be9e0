use crate::data::SampleSet;
use crate::energy::SpikeStats;
use crate::error::{Error, Result};
use crate::network::{Network, Session};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalOptions {
    pub batch_size: usize,
    /// Per-window, per-channel z-scoring before the network.
    pub standardize: bool,
    /// Keep every sample's per-timestep logits in the report.
    pub dump_timesteps: bool,
    /// Threads sharing the batches; results do not depend on it.
    pub workers: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            batch_size: 64,
            standardize: true,
            dump_timesteps: false,
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub per_class: Vec<f64>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub predictions: Vec<usize>,
    pub spikes: SpikeStats,
    /// `[sample][timestep][class]` when requested.
    pub timestep_logits: Option<Vec<Vec<Vec<f64>>>>,
}

impl EvalReport {
    pub fn from_predictions(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::Data(format!(
                "{} predictions for {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        if predictions.is_empty() {
            return Err(Error::Data("evaluation set is empty".into()));
        }
        let mut confusion = vec![vec![0u64; num_classes]; num_classes];
        for (&p, &l) in predictions.iter().zip(labels) {
            if l >= num_classes || p >= num_classes {
                return Err(Error::Label {
                    label: l.max(p),
                    classes: num_classes,
                });
            }
            confusion[l][p] += 1;
        }
        let correct: u64 = (0..num_classes).map(|k| confusion[k][k]).sum();
        let per_class = confusion
            .iter()
            .enumerate()
            .map(|(k, row)| {
                let n: u64 = row.iter().sum();
                if n == 0 {
                    0.0
                } else {
                    row[k] as f64 / n as f64
                }
            })
            .collect();
        Ok(Self {
            accuracy: correct as f64 / predictions.len() as f64,
            per_class,
            confusion,
            predictions: predictions.to_vec(),
            spikes: SpikeStats::new(),
            timestep_logits: None,
        })
    }

    /// `true\pred` matrix as CSV.
    pub fn confusion_csv(&self) -> String {
        let k = self.confusion.len();
        let mut s = String::from("true\\pred");
        for j in 0..k {
            s.push_str(&format!(",{j}"));
        }
        s.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            s.push_str(&i.to_string());
            for c in row {
                s.push_str(&format!(",{c}"));
            }
            s.push('\n');
        }
        s
    }
}

pub(crate) fn argmax<F: Scalar>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

struct Shard {
    start: usize,
    predictions: Vec<usize>,
    spikes: SpikeStats,
    logits: Vec<Vec<Vec<f64>>>,
}

fn run_shard<F: Scalar>(net: &Network<F>, set: &SampleSet, idx: &[usize], opts: &EvalOptions) -> Result<Shard> {
    let mut out = Shard {
        start: idx[0],
        predictions: Vec::with_capacity(idx.len()),
        spikes: SpikeStats::new(),
        logits: Vec::new(),
    };
    for chunk in idx.chunks(opts.batch_size.max(1)) {
        let (x, _) = set.batch::<F>(chunk, opts.standardize);
        let mut sess = Session::eval();
        let xv = net.input(&mut sess, x)?;
        let fwd = net.forward(&mut sess, xv)?;
        let mean = sess.tape.value(fwd.mean_logits);
        if !mean.is_finite() {
            return Err(Error::Numeric {
                layer: "logits".into(),
                detail: "non-finite output during evaluation".into(),
            });
        }
        let k = mean.shape()[1];
        out.predictions.extend(mean.data().chunks(k).map(argmax));
        if opts.dump_timesteps {
            let per_t: Vec<Vec<f64>> = fwd.logits.iter().map(|&z| sess.tape.value(z).to_f64_vec()).collect();
            for b in 0..chunk.len() {
                out.logits.push(per_t.iter().map(|z| z[b * k..(b + 1) * k].to_vec()).collect());
            }
        }
        out.spikes.merge(&sess.spikes);
    }
    Ok(out)
}

/// Eval-mode accuracy, confusion matrix and spike statistics. Batches
/// are spread over `opts.workers` threads; counts merge additively so the
/// report is identical for any worker count.
pub fn evaluate<F: Scalar>(net: &Network<F>, set: &SampleSet, opts: &EvalOptions) -> Result<EvalReport> {
    if set.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let all: Vec<usize> = (0..set.len()).collect();
    let bs = opts.batch_size.max(1);
    let batches = set.len().div_ceil(bs);
    let workers = opts.workers.clamp(1, batches);
    // contiguous runs of whole batches per worker
    let per = batches.div_ceil(workers) * bs;
    let mut shards: Vec<Shard> = if workers == 1 {
        vec![run_shard(net, set, &all, opts)?]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = all
                .chunks(per)
                .map(|idx| s.spawn(move || run_shard(net, set, idx, opts)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("evaluation worker panicked"))
                .collect::<Result<Vec<_>>>()
        })?
    };
    shards.sort_by_key(|s| s.start);

    let mut predictions = Vec::with_capacity(set.len());
    let mut spikes = SpikeStats::new();
    let mut logits = Vec::new();
    for s in shards {
        predictions.extend(s.predictions);
        spikes.merge(&s.spikes);
        logits.extend(s.logits);
    }
    let labels: Vec<usize> = (0..set.len()).map(|i| set.label(i)).collect();
    let mut report = EvalReport::from_predictions(&predictions, &labels, set.num_classes())?;
    report.spikes = spikes;
    report.timestep_logits = opts.dump_timesteps.then_some(logits);
    Ok(report)
}

/// Per-sample activations of a named tap, averaged over timesteps and,
/// for spike maps, over length: one `channels`-long row per window.
pub fn extract_features<F: Scalar>(
    net: &Network<F>,
    set: &SampleSet,
    layer: &str,
    opts: &EvalOptions,
) -> Result<Vec<Vec<f64>>> {
    let names = net.tap_names();
    if !names.iter().any(|n| n == layer) {
        return Err(Error::Config(format!(
            "unknown layer `{layer}`; valid layers: {}",
            names.join(", ")
        )));
    }
    let all: Vec<usize> = (0..set.len()).collect();
    let mut rows = Vec::with_capacity(set.len());
    for chunk in all.chunks(opts.batch_size.max(1)) {
        let (x, _) = set.batch::<F>(chunk, opts.standardize);
        let mut sess = Session::eval();
        let xv = net.input(&mut sess, x)?;
        let fwd = net.forward(&mut sess, xv)?;
        let (_, vars) = fwd.taps.iter().find(|(n, _)| n == layer).expect("tap listed");
        let shape = sess.tape.shape(vars[0]).to_vec();
        let (b, c) = (shape[0], shape[1]);
        let per_row: usize = shape[2..].iter().product();
        let mut acc = vec![vec![0.0f64; c]; b];
        for &v in vars {
            for (i, &val) in sess.tape.value(v).data().iter().enumerate() {
                acc[i / (c * per_row)][(i / per_row) % c] += val.as_f64();
            }
        }
        let norm = (vars.len() * per_row) as f64;
        rows.extend(acc.into_iter().map(|r| r.into_iter().map(|v| v / norm).collect::<Vec<_>>()));
    }
    Ok(rows)
}

/// Mean and standard deviation of repeated runs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeedSummary {
    pub mean: f64,
    /// Population standard deviation (divides by n).
    pub std: f64,
    pub runs: usize,
}

pub fn aggregate(values: &[f64]) -> Option<SeedSummary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some(SeedSummary {
        mean,
        std: var.sqrt(),
        runs: values.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let l = [0, 1, 2, 2, 1];
        let r = EvalReport::from_predictions(&l, &l, 3).unwrap();
        assert_eq!(r.accuracy, 1.0);
        for (i, row) in r.confusion.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                assert!(i == j || c == 0);
            }
        }
    }

    #[test]
    fn constant_predictor_scores_one_over_k() {
        let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let r = EvalReport::from_predictions(&[2; 40], &labels, 4).unwrap();
        assert_eq!(r.accuracy, 0.25);
        let rows: Vec<u64> = r.confusion.iter().map(|row| row.iter().sum()).collect();
        assert_eq!(rows, vec![10; 4]);
        assert_eq!(r.per_class, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        assert!(EvalReport::from_predictions(&[], &[], 2).is_err());
        assert!(EvalReport::from_predictions(&[0], &[0, 1], 2).is_err());
        assert!(EvalReport::from_predictions(&[3], &[0], 2).is_err());
    }

    #[test]
    fn seed_summary() {
        let s = aggregate(&[0.9, 0.92, 0.94, 0.96, 0.98]).unwrap();
        assert!((s.mean - 0.94).abs() < 1e-12);
        let manual = ((0.04f64.powi(2) + 0.02f64.powi(2)) * 2.0 / 5.0).sqrt();
        assert!((s.std - manual).abs() < 1e-12);
        assert!(aggregate(&[]).is_none());
    }
}
