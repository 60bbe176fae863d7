use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{dbm_to_watt, ref_loss_db_to_gain};

pub type Point3 = [f64; 3];

/// Scalar constants and geometry of one IRS-aided WP-MEC deployment, in SI
/// units throughout.
///
/// `rician_factor` may be `f64::INFINITY` for pure line-of-sight links.
/// `num_elements == 0` means no IRS. The device count is the length of
/// `device_positions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Bandwidth `B` in Hz.
    pub bandwidth: f64,
    /// Receiver noise power `sigma^2` in W.
    pub noise_power: f64,
    /// Energy-harvesting efficiency `eta`.
    pub eh_efficiency: f64,
    /// Effective switched capacitance `gamma_c` (J s^2 / cycle^3).
    pub cpu_energy_coeff: f64,
    /// CPU cycles needed per bit, `C`.
    pub cycles_per_bit: f64,
    /// Frame length `T` in s.
    pub frame: f64,
    /// HAP transmit power `P_E` in W.
    pub hap_tx_power: f64,
    pub hap_pos: Point3,
    pub irs_pos: Point3,
    pub device_positions: Vec<Point3>,
    /// Path-loss exponent of the HAP-device link.
    pub pathloss_exp_ad: f64,
    /// Path-loss exponent of the HAP-IRS link.
    pub pathloss_exp_ai: f64,
    /// Path-loss exponent of the IRS-device link.
    pub pathloss_exp_id: f64,
    /// Linear power gain at the 1 m reference distance, `beta`.
    pub ref_gain: f64,
    #[serde(with = "rician_serde")]
    pub rician_factor: f64,
    pub num_elements: usize,
}

impl SystemParams {
    /// Default deployment used in the numerical study: HAP at the origin, IRS
    /// at (10, 0, 3) m, 500 kHz, -75 dBm noise, eta = 0.8,
    /// gamma_c = 1e-28, C = 2000 cycles/bit, T = 1 s, P_E = 40 dBm, 30 dB
    /// loss at 1 m, exponents 3 / 2.2 / 2.2 and Rician factor 2.
    pub fn reference(num_elements: usize, device_positions: Vec<Point3>) -> Self {
        SystemParams {
            bandwidth: 500e3,
            noise_power: dbm_to_watt(-75.0),
            eh_efficiency: 0.8,
            cpu_energy_coeff: 1e-28,
            cycles_per_bit: 2000.0,
            frame: 1.0,
            hap_tx_power: dbm_to_watt(40.0),
            hap_pos: [0.0, 0.0, 0.0],
            irs_pos: [10.0, 0.0, 3.0],
            device_positions,
            pathloss_exp_ad: 3.0,
            pathloss_exp_ai: 2.2,
            pathloss_exp_id: 2.2,
            ref_gain: ref_loss_db_to_gain(30.0),
            rician_factor: 2.0,
            num_elements,
        }
    }

    pub fn num_devices(&self) -> usize {
        self.device_positions.len()
    }

    /// Checks every scalar invariant. Solvers call this on entry.
    pub fn validate(&self) -> Result<()> {
        fn positive(field: &'static str, v: f64) -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::params(field, format!("must be finite and > 0, got {v}")))
            }
        }
        positive("bandwidth", self.bandwidth)?;
        positive("noise_power", self.noise_power)?;
        positive("cpu_energy_coeff", self.cpu_energy_coeff)?;
        positive("frame", self.frame)?;
        positive("hap_tx_power", self.hap_tx_power)?;
        positive("ref_gain", self.ref_gain)?;
        if !(self.eh_efficiency > 0.0 && self.eh_efficiency <= 1.0) {
            return Err(Error::params(
                "eh_efficiency",
                format!("must lie in (0, 1], got {}", self.eh_efficiency),
            ));
        }
        if !(self.cycles_per_bit >= 1.0) {
            return Err(Error::params(
                "cycles_per_bit",
                format!("must be >= 1, got {}", self.cycles_per_bit),
            ));
        }
        if !(self.rician_factor >= 0.0) {
            return Err(Error::params(
                "rician_factor",
                format!("must be >= 0 (or infinite), got {}", self.rician_factor),
            ));
        }
        for (field, v) in [
            ("pathloss_exp_ad", self.pathloss_exp_ad),
            ("pathloss_exp_ai", self.pathloss_exp_ai),
            ("pathloss_exp_id", self.pathloss_exp_id),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::params(field, format!("must be finite and >= 0, got {v}")));
            }
        }
        if self.device_positions.is_empty() {
            return Err(Error::params("device_positions", "need at least one device"));
        }
        let all_points = self
            .device_positions
            .iter()
            .chain([&self.hap_pos, &self.irs_pos]);
        for p in all_points {
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::params("positions", "coordinates must be finite"));
            }
        }
        Ok(())
    }

    pub fn dist_hap_device(&self, k: usize) -> f64 {
        distance(&self.hap_pos, &self.device_positions[k])
    }

    pub fn dist_hap_irs(&self) -> f64 {
        distance(&self.hap_pos, &self.irs_pos)
    }

    pub fn dist_irs_device(&self, k: usize) -> f64 {
        distance(&self.irs_pos, &self.device_positions[k])
    }

    /// Large-scale power gain `beta * d^-alpha`.
    pub fn path_gain(&self, d: f64, exponent: f64) -> f64 {
        self.ref_gain * d.powf(-exponent)
    }

    /// Copy with a different number of IRS elements.
    pub fn with_elements(&self, n: usize) -> Self {
        SystemParams {
            num_elements: n,
            ..self.clone()
        }
    }
}

pub(crate) fn distance(a: &Point3, b: &Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// JSON cannot carry infinity, so the pure-LoS limit is written as `"inf"`.
pub(crate) mod rician_serde {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(s) if s.eq_ignore_ascii_case("inf") => Ok(f64::INFINITY),
            Repr::Text(s) => Err(de::Error::custom(format!(
                "rician_factor must be a number or \"inf\", got {s:?}"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_device() -> SystemParams {
        SystemParams::reference(4, vec![[12.0, 0.0, 0.0]])
    }

    #[test]
    fn reference_is_valid() {
        let p = one_device();
        p.validate().unwrap();
        assert_eq!(p.num_devices(), 1);
        assert!((p.ref_gain - 1e-3).abs() < 1e-18);
        assert!((p.dist_hap_device(0) - 12.0).abs() < 1e-12);
        assert!((p.dist_hap_irs() - 109f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_values() {
        let mut p = one_device();
        p.eh_efficiency = 1.5;
        assert!(p.validate().is_err());
        let mut p = one_device();
        p.cycles_per_bit = 0.5;
        assert!(p.validate().is_err());
        let mut p = one_device();
        p.device_positions.clear();
        assert!(p.validate().is_err());
        let mut p = one_device();
        p.noise_power = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn infinite_rician_factor_round_trips_through_json() {
        let mut p = one_device();
        p.rician_factor = f64::INFINITY;
        let text = serde_json::to_string(&p).unwrap();
        assert!(text.contains("\"inf\""));
        let back: SystemParams = serde_json::from_str(&text).unwrap();
        assert!(back.rician_factor.is_infinite());
        assert_eq!(back, p);
    }
}
