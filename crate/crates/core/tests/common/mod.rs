#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spikefd::{Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn binary(shape: &[usize], p: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| f64::from(rng.random_bool(p) as u8)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Reduces `y` to a scalar through fixed pseudo-random weights, so the
/// gradient check is not blind to permutation or uniform-scaling errors.
pub fn weighted_sum(tape: &mut Tape<f64>, y: Var, seed: u64) -> Var {
    let shape = tape.shape(y).to_vec();
    let w = uniform(&shape, -1.0, 1.0, &mut rng(seed));
    let w = tape.constant(w);
    let p = tape.mul(y, w).unwrap();
    tape.sum(p)
}

/// Central finite differences against the tape's reverse pass.
///
/// Returns, per input, the norm-wise relative error
/// `|analytic - numeric| / max(|analytic|, |numeric|)`.
pub fn gradient_errors(
    inputs: &[Tensor<f64>],
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Var,
) -> Vec<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars);
    tape.backward(out).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .map(|g| g.to_f64_vec())
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    let eval = |perturbed: &[Tensor<f64>]| {
        let mut tape = Tape::inference();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).data()[0]
    };

    let mut errors = Vec::new();
    for (i, input) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; input.numel()];
        for j in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            numeric[j] = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
        }
        let diff: f64 = analytic[i]
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let na = analytic[i].iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let denom = na.max(nn);
        errors.push(if denom == 0.0 { 0.0 } else { diff / denom });
    }
    errors
}
