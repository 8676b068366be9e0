mod common;

use common::*;
use spikefd::Tensor;

fn assert_close(errors: &[f64], what: &str) {
    for (i, e) in errors.iter().enumerate() {
        assert!(*e < FD_TOL, "{what}: input {i} relative error {e:e}");
    }
}

#[test]
fn conv1d_matches_finite_differences() {
    let mut r = rng(1);
    let x = uniform(&[2, 3, 16], -1.0, 1.0, &mut r);
    let w = uniform(&[4, 3, 5], -0.5, 0.5, &mut r);
    let b = uniform(&[4], -0.5, 0.5, &mut r);
    let errs = gradient_errors(&[x, w, b], |tape, v| {
        let y = tape.conv1d(v[0], v[1], Some(v[2]), 2, 2).unwrap();
        tape.sum(y)
    });
    assert_close(&errs, "conv1d sum");

    let mut r = rng(2);
    let x = uniform(&[2, 3, 11], -1.0, 1.0, &mut r);
    let w = uniform(&[2, 3, 3], -0.5, 0.5, &mut r);
    let errs = gradient_errors(&[x, w], |tape, v| {
        let y = tape.conv1d(v[0], v[1], None, 1, 1).unwrap();
        weighted_sum(tape, y, 3)
    });
    assert_close(&errs, "conv1d weighted");
}

#[test]
fn batchnorm_matches_finite_differences() {
    let mut r = rng(4);
    let x = uniform(&[4, 3, 8], -2.0, 2.0, &mut r);
    let g = uniform(&[3], 0.5, 1.5, &mut r);
    let b = uniform(&[3], -0.5, 0.5, &mut r);
    let errs = gradient_errors(&[x.clone(), g.clone(), b.clone()], |tape, v| {
        let (y, _) = tape.batchnorm_train(v[0], v[1], v[2], 1e-5).unwrap();
        weighted_sum(tape, y, 5)
    });
    assert_close(&errs, "batchnorm train");

    let mean = [0.1, -0.2, 0.3];
    let var = [1.5, 0.7, 2.0];
    let errs = gradient_errors(&[x, g, b], |tape, v| {
        let y = tape.batchnorm_eval(v[0], v[1], v[2], &mean, &var, 1e-5).unwrap();
        weighted_sum(tape, y, 6)
    });
    assert_close(&errs, "batchnorm eval");
}

#[test]
fn batchnorm_train_statistics() {
    let mut r = rng(7);
    let x = uniform(&[4, 8, 32], -3.0, 5.0, &mut r);
    let mut tape = spikefd::Tape::<f64>::new();
    let xv = tape.constant(x);
    let g = tape.param(Tensor::full([8], 1.0));
    let b = tape.param(Tensor::zeros([8]));
    let (y, _) = tape.batchnorm_train(xv, g, b, 1e-5).unwrap();
    let y = tape.value(y);
    for c in 0..8 {
        let vals: Vec<f64> = (0..4)
            .flat_map(|n| (0..32).map(move |j| (n, j)))
            .map(|(n, j)| y.get(&[n, c, j]))
            .collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(m.abs() < 1e-6, "channel {c} mean {m}");
        assert!((v - 1.0).abs() < 1e-5, "channel {c} var {v}");
    }
}

#[test]
fn avgpool_matches_finite_differences() {
    let x = uniform(&[2, 4, 64], -1.0, 1.0, &mut rng(8));
    let errs = gradient_errors(&[x], |tape, v| {
        let y = tape.avgpool1d(v[0], 2, 2).unwrap();
        weighted_sum(tape, y, 9)
    });
    assert_close(&errs, "avgpool");
}

#[test]
fn linear_matches_finite_differences() {
    let mut r = rng(10);
    let x = uniform(&[3, 16], -1.0, 1.0, &mut r);
    let w = uniform(&[5, 16], -1.0, 1.0, &mut r);
    let b = uniform(&[5], -1.0, 1.0, &mut r);
    let errs = gradient_errors(&[x, w, b], |tape, v| {
        let y = tape.linear(v[0], v[1], Some(v[2])).unwrap();
        weighted_sum(tape, y, 11)
    });
    assert_close(&errs, "linear");
}

#[test]
fn elementwise_and_structural_ops_match_finite_differences() {
    let mut r = rng(12);
    let a = uniform(&[2, 3, 1], -1.0, 1.0, &mut r);
    let b = uniform(&[2, 1, 5], -1.0, 1.0, &mut r);
    let c = uniform(&[2, 3, 5], -1.0, 1.0, &mut r);
    let errs = gradient_errors(&[a, b, c], |tape, v| {
        let p = tape.mul(v[0], v[1]).unwrap();
        let s = tape.sigmoid(p);
        let q = tape.add(s, v[2]).unwrap();
        let q = tape.mul(q, v[2]).unwrap();
        let mc = tape.mean_axis(q, 1).unwrap();
        let ms = tape.mean_axis(q, 2).unwrap();
        let t = tape.transpose(ms).unwrap();
        let t = tape.transpose(t).unwrap();
        let bc = tape.add(t, mc).unwrap();
        let k = tape.scale(bc, -0.7);
        let cat = tape.concat_channels(&[k, q, k]).unwrap();
        let parts = tape.split_channels(cat, 3).unwrap();
        let m = tape.mul(parts[0], parts[2]).unwrap();
        let r = tape.reshape(m, &[2, 15]).unwrap();
        weighted_sum(tape, r, 13)
    });
    assert_close(&errs, "composite elementwise");
}

#[test]
fn cross_entropy_matches_finite_differences() {
    let z = uniform(&[8, 15], -3.0, 3.0, &mut rng(14));
    let labels: Vec<usize> = (0..8).map(|i| (i * 7) % 15).collect();
    let errs = gradient_errors(&[z], |tape, v| tape.cross_entropy(v[0], &labels).unwrap());
    assert_close(&errs, "cross entropy");
}
