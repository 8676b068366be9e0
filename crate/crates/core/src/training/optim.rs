use crate::error::{Error, Result};
use crate::network::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Adam with bias correction, optional L2 weight decay.
#[derive(Clone, Debug)]
pub struct Adam<F> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    moments: Vec<Option<(Vec<F>, Vec<F>)>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            weight_decay: 0.0,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable tensor that has a gradient.
    /// `grads` is indexed like the store. A non-finite gradient aborts
    /// before anything is modified.
    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &[Option<Tensor<F>>], lr: f64) -> Result<()> {
        for (id, g) in store.ids().zip(grads) {
            if let Some(g) = g {
                if !g.is_finite() {
                    return Err(Error::Numeric {
                        layer: store.get(id).name.clone(),
                        detail: "non-finite gradient".into(),
                    });
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (F::of(self.beta1), F::of(self.beta2));
        let step_size = F::of(lr / bc1);
        let bc2_sqrt = F::of(bc2.sqrt());
        let eps = F::of(self.eps);
        let wd = F::of(self.weight_decay);
        self.moments.resize_with(store.len(), || None);
        let ids: Vec<_> = store.ids().collect();
        for (id, g) in ids.into_iter().zip(grads) {
            let Some(g) = g else { continue };
            if !store.get(id).trainable {
                continue;
            }
            let p = store.value_mut(id).data_mut();
            let (m, v) = self.moments[id.index()].get_or_insert_with(|| (vec![F::zero(); p.len()], vec![F::zero(); p.len()]));
            for (((p, &g), m), v) in p.iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g + wd * *p;
                *m = b1 * *m + (F::one() - b1) * g;
                *v = b2 * *v + (F::one() - b2) * g * g;
                *p -= step_size * *m / (v.sqrt() / bc2_sqrt + eps);
            }
        }
        Ok(())
    }
}

/// Rescales gradients in place so their global L2 norm is at most
/// `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm<F: Scalar>(grads: &mut [Option<Tensor<F>>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .flat_map(|g| g.data())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = F::of(max_norm / norm);
        for g in grads.iter_mut().flatten() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::from_f64(vec![1], &[v]).unwrap(), true);
        s.add("buf", Tensor::from_f64(vec![1], &[v]).unwrap(), false);
        s
    }

    fn grad(v: f64) -> Vec<Option<Tensor<f64>>> {
        vec![Some(Tensor::from_f64(vec![1], &[v]).unwrap()), Some(Tensor::from_f64(vec![1], &[v]).unwrap())]
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = store(0.5);
        let mut adam = Adam::new(0.9, 0.999, 1e-8);
        adam.step(&mut s, &grad(1.0), 0.01).unwrap();
        let w = s.entries()[0].value.data()[0];
        assert!((0.5 - w - 0.01).abs() < 1e-9);
        assert_eq!(s.entries()[1].value.data()[0], 0.5, "buffers are not optimized");
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = store(0.5);
        let mut adam = Adam::new(0.9, 0.999, 1e-8);
        adam.step(&mut s, &grad(0.0), 0.01).unwrap();
        assert_eq!(s.entries()[0].value.data()[0], 0.5);
    }

    #[test]
    fn constant_gradient_moves_monotonically() {
        // hand-iterated: m1 = 0.1g, v1 = 0.001g^2 -> step lr;
        // m2 = 0.19g, v2 = 0.001999g^2 -> step lr exactly again
        let mut s = store(0.0);
        let mut adam = Adam::new(0.9, 0.999, 0.0);
        adam.step(&mut s, &grad(-3.0), 0.1).unwrap();
        let w1 = s.entries()[0].value.data()[0];
        adam.step(&mut s, &grad(-3.0), 0.1).unwrap();
        let w2 = s.entries()[0].value.data()[0];
        assert!((w1 - 0.1).abs() < 1e-12);
        assert!((w2 - 0.2).abs() < 1e-12);
    }

    #[test]
    fn nan_gradient_names_the_tensor() {
        let mut s = store(0.5);
        let mut adam = Adam::new(0.9, 0.999, 1e-8);
        let err = adam.step(&mut s, &grad(f64::NAN), 0.01).unwrap_err();
        assert!(matches!(err, Error::Numeric { ref layer, .. } if layer == "w"));
        assert_eq!(adam.steps_taken(), 0);
    }

    #[test]
    fn clipping() {
        let mut g: Vec<Option<Tensor<f64>>> = vec![Some(Tensor::from_f64(vec![2], &[3.0, 4.0]).unwrap()), None];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        let d = g[0].as_ref().unwrap().data();
        assert!((d[0] - 0.6).abs() < 1e-12 && (d[1] - 0.8).abs() < 1e-12);
    }
}
