use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spikefd::data::{
    add_noise, empirical_snr_db, load_dataset, noisy_copy, save_dataset, split, synth_dataset, SynthSpec,
    SNR_GRID_DB,
};

/// Euclidean 1-nearest-neighbour accuracy on raw windows.
fn one_nn_accuracy(train: &spikefd::data::SampleSet, eval: &spikefd::data::SampleSet) -> f64 {
    let mut correct = 0;
    for i in 0..eval.len() {
        let q = eval.window(i);
        let best = (0..train.len())
            .map(|j| {
                let d: f32 = train.window(j).iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
                (d, j)
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .unwrap()
            .1;
        correct += usize::from(train.label(best) == eval.label(i));
    }
    correct as f64 / eval.len() as f64
}

#[test]
fn synthetic_classes_are_separable_but_not_trivially() {
    let set = synth_dataset(3, 200, 1024, 42).unwrap();
    let (train, eval) = split(&set, 0.7, 42).unwrap();
    let acc = one_nn_accuracy(&train, &eval);
    println!("1-NN raw-window accuracy: {acc:.3}");
    assert!(acc > 1.0 / 3.0 + 0.05, "{acc}");
    assert!(acc < 1.0, "{acc}");
}

#[test]
fn healthy_class_has_no_impact_band_energy() {
    // a pure shaft signal: the spectrum above 1 kHz is noise only, so
    // lowering the noise leaves almost no energy there
    let spec = SynthSpec {
        noise_std: 0.0,
        ..SynthSpec::default()
    };
    let set = spikefd::data::synth_with(&spec, 3, 3, 1024, 1).unwrap();
    let band_energy = |w: &[f32]| {
        // first difference acts as a high-pass filter
        w.windows(2).map(|p| f64::from(p[1] - p[0]).powi(2)).sum::<f64>()
    };
    for i in 0..set.len() {
        let e = band_energy(set.window(i));
        if set.label(i) == 0 {
            assert!(e < 0.5, "{e}");
        } else {
            assert!(e > 1.0, "{e}");
        }
    }
}

#[test]
fn injected_noise_hits_every_target_snr() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let clean: Vec<f64> = (0..1_000_000).map(|i| (i as f64 * 0.013).sin() + 0.3).collect();
    for &snr in &SNR_GRID_DB {
        let noisy = add_noise(&clean, snr, &mut rng).unwrap();
        let measured = empirical_snr_db(&clean, &noisy);
        assert!((measured - snr).abs() < 0.1, "target {snr} dB, measured {measured}");
    }
}

#[test]
fn noisy_copies_leave_the_source_untouched() {
    let set = synth_dataset(2, 5, 256, 3).unwrap();
    let before = set.clone();
    let a = noisy_copy(&set, 10.0, 5).unwrap();
    assert_eq!(set, before);
    assert_eq!(a, noisy_copy(&set, 10.0, 5).unwrap());
    assert_ne!(a, set);
    assert_eq!(a.labels(), set.labels());
}

#[test]
fn dataset_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("set.vibr");
    let set = synth_dataset(3, 4, 128, 2).unwrap();
    save_dataset(&set, &path).unwrap();
    let back = load_dataset(&path).unwrap();
    assert_eq!(back.windows(), set.windows());
    assert_eq!(back.labels(), set.labels());
    assert!(load_dataset(dir.path().join("missing.vibr")).is_err());
}
