use std::iter::Sum;
use std::ops::{Add, AddAssign};

use crate::error::{Error, Result};

/// Multiply-accumulate and accumulate operation counts.
///
/// Spike-driven counts are expectations (`T * FL * phi`), so both fields
/// are reals; they are rounded only for display.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OpCount {
    pub mac: f64,
    pub ac: f64,
}

impl OpCount {
    pub const ZERO: Self = Self { mac: 0.0, ac: 0.0 };

    pub fn mac(n: f64) -> Self {
        Self { mac: n, ac: 0.0 }
    }

    pub fn ac(n: f64) -> Self {
        Self { mac: 0.0, ac: n }
    }
}

impl Add for OpCount {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            mac: self.mac + o.mac,
            ac: self.ac + o.ac,
        }
    }
}

impl AddAssign for OpCount {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl Sum for OpCount {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::ZERO, Add::add)
    }
}

/// Energy per operation in picojoules (32-bit float, 45 nm).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyModel {
    pub e_ac: f64,
    pub e_mac: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self {
            e_ac: 0.9,
            e_mac: 4.6,
        }
    }
}

impl EnergyModel {
    pub fn new(e_ac: f64, e_mac: f64) -> Result<Self> {
        if !(e_ac > 0.0 && e_mac > 0.0 && e_ac.is_finite() && e_mac.is_finite()) {
            return Err(Error::Param(
                "energy model",
                format!("costs must be positive, got ac={e_ac} mac={e_mac}"),
            ));
        }
        Ok(Self { e_ac, e_mac })
    }

    pub fn energy(&self, ops: OpCount) -> f64 {
        self.e_mac * ops.mac + self.e_ac * ops.ac
    }
}

pub fn energy_total(counts: OpCount, model: &EnergyModel) -> f64 {
    model.energy(counts)
}

/// `k * h_out * c_in * c_out`.
pub fn flops_conv(kernel: usize, h_out: usize, c_in: usize, c_out: usize) -> u64 {
    (kernel * h_out * c_in * c_out) as u64
}

pub fn flops_fc(inputs: usize, outputs: usize) -> u64 {
    (inputs * outputs) as u64
}

/// Operations of one layer over `timesteps`: MAC on the analog first
/// layer, AC on spike-driven layers, scaled by the input activity rate.
pub fn snn_layer_count(static_fl: u64, timesteps: usize, phi_prev: f64, first_layer: bool) -> Result<OpCount> {
    if !(0.0..=1.0).contains(&phi_prev) {
        return Err(Error::Param("phi", format!("activity rate must lie in [0,1], got {phi_prev}")));
    }
    let n = timesteps as f64 * static_fl as f64 * phi_prev;
    Ok(if first_layer { OpCount::mac(n) } else { OpCount::ac(n) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formulas() {
        assert_eq!(flops_conv(3, 1024, 1, 32), 98_304);
        assert_eq!(flops_conv(1, 100, 4, 5), 2000);
        assert_eq!(flops_fc(512, 15), 7680);
        assert_eq!(flops_fc(1, 1), 1);
        assert_eq!(flops_fc(0, 9), 0);
    }

    #[test]
    fn layer_counts() {
        assert_eq!(snn_layer_count(98_304, 4, 1.0, true).unwrap(), OpCount::mac(393_216.0));
        assert_eq!(snn_layer_count(1_000_000, 4, 0.0, false).unwrap(), OpCount::ZERO);
        let c = snn_layer_count(1_000_000, 4, 0.05, false).unwrap();
        assert_eq!(c.mac, 0.0);
        assert!((c.ac - 200_000.0).abs() < 1e-6);
        assert!(snn_layer_count(1, 1, 1.5, false).is_err());
        assert!(snn_layer_count(1, 1, -0.1, false).is_err());
    }

    #[test]
    fn energy_vectors() {
        let m = EnergyModel::default();
        let e = energy_total(
            OpCount {
                mac: 696_458_752.0,
                ac: 524_288.0,
            },
            &m,
        );
        assert!((e - 3_204_182_118.4).abs() < 0.05, "{e}");
        let e = energy_total(
            OpCount {
                mac: 5_031_040.0,
                ac: 25_072_983.0,
            },
            &m,
        );
        assert!((e - 45_708_468.7).abs() < 0.05, "{e}");
        assert_eq!(energy_total(OpCount::ZERO, &m), 0.0);
        assert!(EnergyModel::new(0.0, 1.0).is_err());
    }
}
