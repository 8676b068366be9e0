use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::noise::standardize;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SplitTag {
    #[default]
    All,
    Train,
    Eval,
}

/// `N` labelled windows of shape `[channels, length]`, stored as `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    channels: usize,
    length: usize,
    num_classes: usize,
    windows: Vec<f32>,
    labels: Vec<u16>,
    pub class_names: Vec<String>,
    pub split: SplitTag,
}

impl SampleSet {
    pub fn new(
        channels: usize,
        length: usize,
        num_classes: usize,
        windows: Vec<f32>,
        labels: Vec<u16>,
    ) -> Result<Self> {
        if channels == 0 || length == 0 {
            return Err(Error::Data("windows need at least one channel and one sample".into()));
        }
        if num_classes == 0 || num_classes > usize::from(u16::MAX) + 1 {
            return Err(Error::Data(format!("unsupported class count {num_classes}")));
        }
        if windows.len() != labels.len() * channels * length {
            return Err(Error::Data(format!(
                "{} values do not form {} windows of [{channels}, {length}]",
                windows.len(),
                labels.len()
            )));
        }
        if let Some(i) = windows.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "window {} holds a non-finite value",
                i / (channels * length)
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| usize::from(l) >= num_classes) {
            return Err(Error::Label {
                label: l.into(),
                classes: num_classes,
            });
        }
        Ok(Self {
            channels,
            length,
            num_classes,
            windows,
            labels,
            class_names: (0..num_classes).map(|k| format!("class{k}")).collect(),
            split: SplitTag::All,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn window_len(&self) -> usize {
        self.channels * self.length
    }

    pub fn window(&self, i: usize) -> &[f32] {
        let n = self.window_len();
        &self.windows[i * n..(i + 1) * n]
    }

    pub fn window_mut(&mut self, i: usize) -> &mut [f32] {
        let n = self.window_len();
        &mut self.windows[i * n..(i + 1) * n]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i].into()
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn windows(&self) -> &[f32] {
        &self.windows
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        for &l in &self.labels {
            c[usize::from(l)] += 1;
        }
        c
    }

    /// Copy of the listed samples, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut windows = Vec::with_capacity(indices.len() * self.window_len());
        for &i in indices {
            windows.extend_from_slice(self.window(i));
        }
        Self {
            windows,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            ..*self
        }
    }

    /// `[b, channels, length]` batch of the listed samples with their labels,
    /// optionally z-scored per window and channel.
    pub fn batch<F: Scalar>(&self, indices: &[usize], standardized: bool) -> (Tensor<F>, Vec<usize>) {
        let mut data = Vec::with_capacity(indices.len() * self.window_len());
        for &i in indices {
            let start = data.len();
            data.extend(self.window(i).iter().map(|&v| F::of(f64::from(v))));
            if standardized {
                for ch in data[start..].chunks_mut(self.length) {
                    standardize(ch);
                }
            }
        }
        let t = Tensor::new(vec![indices.len(), self.channels, self.length], data).expect("batch shape");
        (t, indices.iter().map(|&i| self.label(i)).collect())
    }
}

/// Seeded stratified split: within each class a shuffled
/// `round(fraction * n)` samples go to training, the rest to evaluation.
/// Both sides keep at least one sample of every present class.
pub fn split(set: &SampleSet, train_fraction: f64, seed: u64) -> Result<(SampleSet, SampleSet)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Param("train_fraction", format!("must lie in (0,1), got {train_fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut eval) = (Vec::new(), Vec::new());
    for class in 0..set.num_classes() {
        let mut idx: Vec<usize> = (0..set.len()).filter(|&i| set.label(i) == class).collect();
        match idx.len() {
            0 => continue,
            1 => {
                return Err(Error::Data(format!(
                    "class {class} has a single sample; a split needs at least 2"
                )))
            }
            _ => {}
        }
        idx.shuffle(&mut rng);
        let n_train = ((train_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        train.extend_from_slice(&idx[..n_train]);
        eval.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    eval.sort_unstable();
    let mut a = set.subset(&train);
    let mut b = set.subset(&eval);
    a.split = SplitTag::Train;
    b.split = SplitTag::Eval;
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(per_class: usize, classes: usize) -> SampleSet {
        let n = per_class * classes;
        let windows = (0..n * 4).map(|i| i as f32).collect();
        let labels = (0..n).map(|i| (i % classes) as u16).collect();
        SampleSet::new(1, 4, classes, windows, labels).unwrap()
    }

    #[test]
    fn stratified_fractions() {
        let set = toy(140, 15);
        let (tr, ev) = split(&set, 0.7, 1).unwrap();
        assert!(tr.class_counts().iter().all(|&c| c == 98));
        assert!(ev.class_counts().iter().all(|&c| c == 42));
        assert_eq!((tr.split, ev.split), (SplitTag::Train, SplitTag::Eval));
    }

    #[test]
    fn split_is_a_seeded_partition() {
        let set = toy(10, 3);
        let (a, b) = split(&set, 0.5, 7).unwrap();
        let (c, _) = split(&set, 0.5, 7).unwrap();
        assert_eq!(a, c);
        let mut all: Vec<f32> = a
            .windows()
            .chunks(4)
            .chain(b.windows().chunks(4))
            .map(|w| w[0])
            .collect();
        all.sort_by(f32::total_cmp);
        let orig: Vec<f32> = set.windows().chunks(4).map(|w| w[0]).collect();
        assert_eq!(all, orig);
        let (d, _) = split(&set, 0.5, 8).unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn non_finite_samples_are_refused() {
        let mut w = vec![0.5f32; 8];
        w[5] = f32::INFINITY;
        let err = SampleSet::new(1, 4, 2, w, vec![0, 1]).unwrap_err();
        assert!(err.to_string().contains("window 1"), "{err}");
    }

    #[test]
    fn rejects_singleton_class_and_bad_fraction() {
        let set = SampleSet::new(1, 2, 2, vec![0.0; 6], vec![0, 0, 1]).unwrap();
        assert!(split(&set, 0.5, 0).is_err());
        assert!(split(&toy(4, 2), 1.0, 0).is_err());
        assert!(split(&toy(4, 2), 0.0, 0).is_err());
    }

    #[test]
    fn validates_construction() {
        assert!(SampleSet::new(1, 4, 2, vec![0.0; 7], vec![0, 1]).is_err());
        assert!(matches!(
            SampleSet::new(1, 4, 2, vec![0.0; 8], vec![0, 2]),
            Err(Error::Label { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn batch_layout() {
        let set = SampleSet::new(2, 3, 2, (0..12).map(|i| i as f32).collect(), vec![1, 0]).unwrap();
        let (x, y) = set.batch::<f64>(&[1, 0], false);
        assert_eq!(x.shape(), &[2, 2, 3]);
        assert_eq!(x.data()[0], 6.0);
        assert_eq!(y, vec![0, 1]);
        let (z, _) = set.batch::<f64>(&[0], true);
        let ch0 = &z.data()[..3];
        assert!(ch0.iter().sum::<f64>().abs() < 1e-12);
    }
}
