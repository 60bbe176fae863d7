use serde::{Deserialize, Serialize};

use super::{Beams, DibfCase, MultipleAccess};
use crate::error::{Error, Result};

/// Time, energy and CPU-frequency allocation of one frame.
///
/// `tau1` holds one slot per device for TDMA, a single shared slot for NOMA
/// in Cases 1-2, and one slot per offloading beam for NOMA in Case 3.
/// `power[k]` is derived from `energy[k]` and the device's transmit time and is
/// defined as 0 when that time is 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceAllocation {
    pub tau0: f64,
    pub tau1: Vec<f64>,
    pub energy: Vec<f64>,
    pub power: Vec<f64>,
    pub freq: Vec<f64>,
}

impl ResourceAllocation {
    /// TDMA allocation: device `k` transmits `energy[k]` during `tau1[k]`.
    pub fn tdma(tau0: f64, tau1: Vec<f64>, energy: Vec<f64>, freq: Vec<f64>) -> Result<Self> {
        let k = energy.len();
        if tau1.len() != k || freq.len() != k {
            return Err(Error::AllocationShape(format!(
                "tau1 {} / energy {} / freq {}",
                tau1.len(),
                k,
                freq.len()
            )));
        }
        let power = tau1.iter().zip(&energy).map(|(&t, &e)| ratio(e, t)).collect();
        Ok(ResourceAllocation {
            tau0,
            tau1,
            energy,
            power,
            freq,
        })
    }

    /// NOMA allocation: all devices transmit simultaneously over the slots in
    /// `slots` (one entry for Cases 1-2).
    pub fn noma(tau0: f64, slots: Vec<f64>, energy: Vec<f64>, freq: Vec<f64>) -> Result<Self> {
        if freq.len() != energy.len() || slots.is_empty() {
            return Err(Error::AllocationShape(format!(
                "slots {} / energy {} / freq {}",
                slots.len(),
                energy.len(),
                freq.len()
            )));
        }
        let total: f64 = slots.iter().sum();
        let power = energy.iter().map(|&e| ratio(e, total)).collect();
        Ok(ResourceAllocation {
            tau0,
            tau1: slots,
            energy,
            power,
            freq,
        })
    }

    /// Everything zero: always feasible.
    pub fn zero(k: usize, ma: MultipleAccess) -> Self {
        let slots = match ma {
            MultipleAccess::Tdma => k,
            MultipleAccess::Noma => 1,
        };
        ResourceAllocation {
            tau0: 0.0,
            tau1: vec![0.0; slots],
            energy: vec![0.0; k],
            power: vec![0.0; k],
            freq: vec![0.0; k],
        }
    }

    pub fn num_devices(&self) -> usize {
        self.energy.len()
    }

    /// Total offloading time.
    pub fn tau1_total(&self) -> f64 {
        self.tau1.iter().sum()
    }

    /// Transmit time of device `k` under `ma`.
    pub fn transmit_time(&self, ma: MultipleAccess, k: usize) -> f64 {
        match ma {
            MultipleAccess::Tdma => self.tau1[k],
            MultipleAccess::Noma => self.tau1_total(),
        }
    }

    /// Devices that transmit a positive amount of energy.
    pub fn offload_active(&self) -> Vec<usize> {
        (0..self.num_devices())
            .filter(|&k| self.energy[k] > 0.0 && self.power[k] > 0.0)
            .collect()
    }
}

fn ratio(e: f64, t: f64) -> f64 {
    if t > 0.0 {
        e / t
    } else {
        0.0
    }
}

/// Lagrange multipliers and stationarity residual of a resource allocation.
///
/// `dual_energy` is in bits/J (one per device), `dual_time` in bits/s and the
/// residual is a dimensionless relative measure.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KktCertificate {
    pub dual_energy: Vec<f64>,
    pub dual_time: f64,
    pub residual: f64,
}

/// A solved instance for one case / multiple-access combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub objective_bits: f64,
    pub allocation: ResourceAllocation,
    pub beams: Beams,
    pub case: DibfCase,
    pub scheme: MultipleAccess,
    pub kkt: KktCertificate,
    pub offload_active: Vec<usize>,
    /// Number of alternating-optimization iterations (`L_iter`), 0 when the
    /// solution came from a closed form.
    pub iterations: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_is_zero_without_time() {
        let a = ResourceAllocation::tdma(0.5, vec![0.0, 0.25], vec![0.0, 1e-6], vec![1e6, 0.0])
            .unwrap();
        assert_eq!(a.power, vec![0.0, 4e-6]);
        assert_eq!(a.offload_active(), vec![1]);
        let n = ResourceAllocation::noma(0.5, vec![0.25, 0.25], vec![1e-6, 2e-6], vec![0.0; 2])
            .unwrap();
        assert_eq!(n.power, vec![2e-6, 4e-6]);
        assert_eq!(n.transmit_time(MultipleAccess::Noma, 0), 0.5);
    }

    #[test]
    fn shape_checked() {
        assert!(ResourceAllocation::tdma(0.0, vec![0.0], vec![0.0; 2], vec![0.0; 2]).is_err());
        assert!(ResourceAllocation::noma(0.0, vec![], vec![0.0; 2], vec![0.0; 2]).is_err());
    }
}
