//! Per-layer spike accounting gathered during forward passes.

/// Spike totals of one spiking layer, summed over batch and timesteps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LayerStats {
    pub spikes_fired: u64,
    /// Neurons x timesteps x batch.
    pub neuron_sites: u64,
}

impl LayerStats {
    /// Average spike activity rate over all recorded timesteps.
    pub fn lasar(&self) -> f64 {
        if self.neuron_sites == 0 {
            0.0
        } else {
            self.spikes_fired as f64 / self.neuron_sites as f64
        }
    }

    pub fn merge(&mut self, other: &LayerStats) {
        self.spikes_fired += other.spikes_fired;
        self.neuron_sites += other.neuron_sites;
    }
}

/// Spike statistics for every spiking layer, in first-recorded order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SpikeStats {
    layers: Vec<(String, LayerStats)>,
}

impl SpikeStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, layer: &str, spikes_fired: u64, neuron_sites: u64) {
        let add = LayerStats {
            spikes_fired,
            neuron_sites,
        };
        match self.layers.iter_mut().find(|(n, _)| n == layer) {
            Some((_, s)) => s.merge(&add),
            None => self.layers.push((layer.to_string(), add)),
        }
    }

    /// Additive merge; totals do not depend on merge order.
    pub fn merge(&mut self, other: &SpikeStats) {
        for (name, s) in &other.layers {
            self.record(name, s.spikes_fired, s.neuron_sites);
        }
    }

    pub fn get(&self, layer: &str) -> Option<&LayerStats> {
        self.layers.iter().find(|(n, _)| n == layer).map(|(_, s)| s)
    }

    pub fn lasar(&self, layer: &str) -> Option<f64> {
        self.get(layer).map(LayerStats::lasar)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &LayerStats)> {
        self.layers.iter().map(|(n, s)| (n.as_str(), s))
    }

    pub fn is_empty(&self) -> bool {
        self.layers.iter().all(|(_, s)| s.neuron_sites == 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lasar_extremes_and_mean() {
        let mut s = SpikeStats::new();
        s.record("silent", 0, 40);
        s.record("saturated", 40, 40);
        let pattern = [1u8, 0, 0, 1, 1, 0, 1, 1, 0, 0];
        let fired = pattern.iter().map(|&b| u64::from(b)).sum();
        s.record("random", fired, pattern.len() as u64);
        assert_eq!(s.lasar("silent"), Some(0.0));
        assert_eq!(s.lasar("saturated"), Some(1.0));
        assert_eq!(s.lasar("random"), Some(0.5));
    }

    #[test]
    fn merge_is_order_independent() {
        let mut a = SpikeStats::new();
        a.record("x", 3, 10);
        a.record("y", 1, 5);
        let mut b = SpikeStats::new();
        b.record("y", 2, 5);
        b.record("x", 4, 10);
        let mut ab = a.clone();
        ab.merge(&b);
        let mut ba = b.clone();
        ba.merge(&a);
        for layer in ["x", "y"] {
            assert_eq!(ab.get(layer), ba.get(layer));
        }
        assert_eq!(ab.get("x").unwrap().spikes_fired, 7);
    }
}
