use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::set::SampleSet;

/// Robustness sweep grid, strongest signal first.
pub const SNR_GRID_DB: [f64; 7] = [30.0, 25.0, 20.0, 15.0, 10.0, 5.0, 0.0];

/// Mean squared value.
pub fn signal_power<F: Scalar>(x: &[F]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>() / x.len() as f64
}

/// Adds i.i.d. zero-mean Gaussian noise with variance
/// `P_signal / 10^(snr_db / 10)`, where `P_signal` is the power of this
/// window over all its channels. `snr_db = +inf` returns the input.
pub fn add_noise<F: Scalar, R: Rng + ?Sized>(window: &[F], snr_db: f64, rng: &mut R) -> Result<Vec<F>> {
    if snr_db.is_nan() {
        return Err(Error::Param("snr_db", "must be a number".into()));
    }
    let p = signal_power(window);
    if p == 0.0 {
        return Err(Error::Data("cannot add noise at a given SNR to an all-zero window".into()));
    }
    let sigma = (p / 10f64.powf(snr_db / 10.0)).sqrt();
    if sigma == 0.0 {
        return Ok(window.to_vec());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Param("snr_db", e.to_string()))?;
    Ok(window
        .iter()
        .map(|&v| F::of(v.as_f64() + normal.sample(rng)))
        .collect())
}

/// Noisy copy of a whole set; one seeded stream, consumed window by window.
pub fn noisy_copy(set: &SampleSet, snr_db: f64, seed: u64) -> Result<SampleSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = set.clone();
    for i in 0..set.len() {
        let noisy = add_noise(set.window(i), snr_db, &mut rng)?;
        out.window_mut(i).copy_from_slice(&noisy);
    }
    Ok(out)
}

/// `10 log10(P_clean / P_noise)` with `noise = noisy - clean`.
pub fn empirical_snr_db<F: Scalar>(clean: &[F], noisy: &[F]) -> f64 {
    let noise: Vec<f64> = noisy.iter().zip(clean).map(|(n, c)| n.as_f64() - c.as_f64()).collect();
    10.0 * (signal_power(clean) / signal_power(&noise)).log10()
}

/// In-place z-score. A constant input is only centred.
pub fn standardize<F: Scalar>(x: &mut [F]) {
    if x.is_empty() {
        return;
    }
    let n = x.len() as f64;
    let mean = x.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let var = x.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n;
    let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
    for v in x.iter_mut() {
        *v = F::of((v.as_f64() - mean) * scale);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise_variance(window: &[f64], snr: f64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noisy = add_noise(window, snr, &mut rng).unwrap();
        let d: Vec<f64> = noisy.iter().zip(window).map(|(a, b)| a - b).collect();
        signal_power(&d)
    }

    #[test]
    fn variance_follows_snr() {
        let ones = vec![1.0; 200_000];
        assert!((noise_variance(&ones, 0.0) - 1.0).abs() < 0.01);
        assert!((noise_variance(&ones, 30.0) - 0.001).abs() < 1e-5);
    }

    #[test]
    fn infinite_snr_is_identity() {
        let w = vec![0.5f32, -1.0, 2.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(add_noise(&w, f64::INFINITY, &mut rng).unwrap(), w);
        // far above the f32 resolution of the signal
        let near = add_noise(&w, 300.0, &mut rng).unwrap();
        assert_eq!(near, w);
    }

    #[test]
    fn zero_window_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(add_noise(&[0.0f64; 8], 10.0, &mut rng).is_err());
    }

    #[test]
    fn standardize_moments() {
        let mut x = vec![1.0, 2.0, 3.0, 4.0];
        standardize(&mut x);
        let m: f64 = x.iter().sum::<f64>() / 4.0;
        let v: f64 = x.iter().map(|a| a * a).sum::<f64>() / 4.0;
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        let mut c = vec![2.0f32; 3];
        standardize(&mut c);
        assert_eq!(c, vec![0.0; 3]);
    }
}
