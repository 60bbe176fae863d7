//! Exact evaluators for harvested energy, offloading rates and constraint
//! slacks. These are the reference every solver result is re-checked against.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;

use super::beam::MODULUS_TOL;
use super::{BeamVector, Beams, ChannelRealization, DibfCase, ModulusMode, MultipleAccess};
use super::{ResourceAllocation, SystemParams};
use crate::error::{Error, Result};

/// Relative tolerance on energy and QoS constraints in [`check_feasibility`].
pub const FEASIBILITY_REL_TOL: f64 = 1e-9;
/// Absolute tolerance, in units of the frame length, on the time budget.
pub const TIME_TOL: f64 = 1e-9;

/// `conj(h_d,k) + q_k^H v`.
pub(crate) fn effective_channel(
    chan: &ChannelRealization,
    v: &BeamVector,
    k: usize,
) -> Result<Complex64> {
    if k >= chan.num_devices() {
        return Err(Error::DeviceIndex {
            index: k,
            count: chan.num_devices(),
        });
    }
    if v.len() != chan.num_elements() {
        return Err(Error::BeamLength {
            got: v.len(),
            expected: chan.num_elements(),
        });
    }
    let cascaded: Complex64 = chan.q_cascaded()[k]
        .iter()
        .zip(v.entries())
        .map(|(q, v)| q.conj() * v)
        .sum();
    Ok(chan.h_direct()[k].conj() + cascaded)
}

/// Equivalent channel power gain `|h_d,k^H + q_k^H v|^2`.
pub fn equivalent_gain(chan: &ChannelRealization, v: &BeamVector, k: usize) -> Result<f64> {
    Ok(effective_channel(chan, v, k)?.norm_sqr())
}

/// Energy harvested by device `k`: `eta tau0 P_E |h_d,k^H + q_k^H v0|^2`.
pub fn harvested_energy(
    params: &SystemParams,
    chan: &ChannelRealization,
    v0: &BeamVector,
    tau0: f64,
    k: usize,
) -> Result<f64> {
    if !(tau0 >= 0.0) {
        return Err(Error::params("tau0", format!("must be >= 0, got {tau0}")));
    }
    Ok(params.eh_efficiency * tau0 * params.hap_tx_power * equivalent_gain(chan, v0, k)?)
}

/// Offloading gain of device `k` in slot `slot` under `case`.
pub fn offload_gain(
    chan: &ChannelRealization,
    beams: &Beams,
    case: DibfCase,
    k: usize,
    slot: usize,
) -> Result<f64> {
    equivalent_gain(chan, beams.offload_beam(case, slot)?, k)
}

/// `B tau log2(1 + snr)`, defined as 0 at `tau = 0`.
pub(crate) fn rate_term(bandwidth: f64, tau: f64, snr: f64) -> f64 {
    if tau <= 0.0 {
        0.0
    } else {
        bandwidth * tau * snr.ln_1p() / LN_2
    }
}

/// TDMA offloading sum-rate in bits: `B sum_k tau_1k log2(1 + p_k g_k / sigma^2)`
/// with the per-case offloading gain `g_k`.
pub fn offload_rate_tdma(
    params: &SystemParams,
    chan: &ChannelRealization,
    beams: &Beams,
    alloc: &ResourceAllocation,
    case: DibfCase,
) -> Result<f64> {
    let k_count = params.num_devices();
    chan.check_consistent(params)?;
    beams.check_case(case, k_count)?;
    if alloc.tau1.len() != k_count || alloc.power.len() != k_count {
        return Err(Error::AllocationShape(format!(
            "TDMA needs {k_count} slots, got {}",
            alloc.tau1.len()
        )));
    }
    let mut total = 0.0;
    for k in 0..k_count {
        let g = offload_gain(chan, beams, case, k, k)?;
        total += rate_term(
            params.bandwidth,
            alloc.tau1[k],
            alloc.power[k] * g / params.noise_power,
        );
    }
    Ok(total)
}

/// NOMA offloading sum-rate in bits. Cases 1-2 use a single slot; Case 3
/// sums `B tau_1i log2(1 + sum_k p_k g_k^(i) / sigma^2)` over slots `i`.
pub fn offload_rate_noma(
    params: &SystemParams,
    chan: &ChannelRealization,
    beams: &Beams,
    alloc: &ResourceAllocation,
    case: DibfCase,
) -> Result<f64> {
    let k_count = params.num_devices();
    chan.check_consistent(params)?;
    if alloc.power.len() != k_count {
        return Err(Error::AllocationShape(format!(
            "{} powers for {k_count} devices",
            alloc.power.len()
        )));
    }
    let slots = alloc.tau1.len();
    beams.check_case(case, slots)?;
    let mut total = 0.0;
    for (i, &tau) in alloc.tau1.iter().enumerate() {
        let mut received = 0.0;
        for k in 0..k_count {
            received += alloc.power[k] * offload_gain(chan, beams, case, k, i)?;
        }
        total += rate_term(params.bandwidth, tau, received / params.noise_power);
    }
    Ok(total)
}

pub fn offload_rate(
    params: &SystemParams,
    chan: &ChannelRealization,
    beams: &Beams,
    alloc: &ResourceAllocation,
    case: DibfCase,
    ma: MultipleAccess,
) -> Result<f64> {
    match ma {
        MultipleAccess::Tdma => offload_rate_tdma(params, chan, beams, alloc, case),
        MultipleAccess::Noma => offload_rate_noma(params, chan, beams, alloc, case),
    }
}

/// Offloaded bits plus locally computed bits `sum_k T f_k / C`.
pub fn total_bits(params: &SystemParams, alloc: &ResourceAllocation, offload_bits: f64) -> f64 {
    let local: f64 = alloc.freq.iter().sum::<f64>() * params.frame / params.cycles_per_bit;
    offload_bits + local
}

/// Full computation-rate objective of a case / multiple-access combination.
pub fn objective_bits(
    params: &SystemParams,
    chan: &ChannelRealization,
    beams: &Beams,
    alloc: &ResourceAllocation,
    case: DibfCase,
    ma: MultipleAccess,
) -> Result<f64> {
    let off = offload_rate(params, chan, beams, alloc, case, ma)?;
    Ok(total_bits(params, alloc, off))
}

/// Per-constraint slacks of an allocation. Positive slack means the
/// constraint holds with room to spare.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// Harvested minus consumed energy, per device (J).
    pub energy_slack: Vec<f64>,
    /// `T - tau0 - sum tau1` (s).
    pub time_slack: f64,
    /// Smallest allocation entry (negative means a nonnegativity violation).
    pub min_entry: f64,
    /// Largest `| |v_n| - 1 |` over all vectors in use.
    pub modulus_violation: f64,
    /// Largest relative mismatch between `p_k * t_k` and `e_k`.
    pub power_mismatch: f64,
    /// Achieved minus required bits per device, when requirements were given.
    pub qos_slack: Option<Vec<f64>>,
    pub violations: Vec<String>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Evaluates every constraint of the computation-rate problem for
/// `case` / `ma`. Optional per-device QoS requirements (bits per frame) are
/// only defined for TDMA; for NOMA `qos_slack` is `None` and they are not
/// checked.
pub fn check_feasibility(
    params: &SystemParams,
    chan: &ChannelRealization,
    beams: &Beams,
    alloc: &ResourceAllocation,
    case: DibfCase,
    ma: MultipleAccess,
    qos_min_bits: Option<&[f64]>,
) -> Result<FeasibilityReport> {
    params.validate()?;
    chan.check_consistent(params)?;
    let k_count = params.num_devices();
    let slots = match ma {
        MultipleAccess::Tdma => k_count,
        MultipleAccess::Noma => alloc.tau1.len(),
    };
    beams.check_case(case, slots)?;
    let mut violations = Vec::new();

    let mut energy_slack = Vec::with_capacity(k_count);
    let mut power_mismatch: f64 = 0.0;
    for k in 0..k_count {
        let harvested = harvested_energy(params, chan, &beams.wpt, alloc.tau0.max(0.0), k)?;
        let local = params.frame * params.cpu_energy_coeff * alloc.freq[k].max(0.0).powi(3);
        let consumed = alloc.energy[k] + local;
        let slack = harvested - consumed;
        if slack < -FEASIBILITY_REL_TOL * harvested.max(consumed) {
            violations.push(format!(
                "energy causality of device {k}: consumed {consumed:e} J > harvested {harvested:e} J"
            ));
        }
        energy_slack.push(slack);
        let t = alloc.transmit_time(ma, k);
        if t > 0.0 {
            let pe = alloc.power[k] * t;
            let scale = alloc.energy[k].abs().max(f64::MIN_POSITIVE);
            power_mismatch = power_mismatch.max((pe - alloc.energy[k]).abs() / scale);
        } else if alloc.energy[k] > 0.0 {
            violations.push(format!("device {k} spends transmit energy without airtime"));
        }
    }
    if power_mismatch > 1e-9 {
        violations.push(format!("p * tau differs from e by {power_mismatch:e} (relative)"));
    }

    let time_slack = params.frame - alloc.tau0 - alloc.tau1_total();
    if time_slack < -TIME_TOL * params.frame {
        violations.push(format!("time budget exceeded by {:e} s", -time_slack));
    }

    let min_entry = std::iter::once(alloc.tau0)
        .chain(alloc.tau1.iter().copied())
        .chain(alloc.energy.iter().copied())
        .chain(alloc.power.iter().copied())
        .chain(alloc.freq.iter().copied())
        .fold(0.0f64, f64::min);
    if min_entry < 0.0 {
        violations.push(format!("negative allocation entry {min_entry:e}"));
    }

    let in_use: Vec<&BeamVector> = match case {
        DibfCase::Case1 => vec![&beams.wpt],
        DibfCase::Case2 => vec![&beams.wpt, &beams.offload[0]],
        DibfCase::Case3 => std::iter::once(&beams.wpt)
            .chain(beams.offload.iter().take(slots))
            .collect(),
    };
    let modulus_violation = in_use
        .iter()
        .flat_map(|b| {
            let relaxed = b.mode() == ModulusMode::RelaxedDisk;
            b.entries().iter().map(move |e| {
                let excess = e.norm() - 1.0;
                if relaxed {
                    excess.max(0.0)
                } else {
                    excess.abs()
                }
            })
        })
        .fold(0.0, f64::max);
    if modulus_violation > MODULUS_TOL {
        violations.push(format!("modulus constraint violated by {modulus_violation:e}"));
    }

    let qos_slack = match (qos_min_bits, ma) {
        (Some(req), MultipleAccess::Tdma) => {
            if req.len() != k_count {
                return Err(Error::AllocationShape(format!(
                    "{} QoS entries for {k_count} devices",
                    req.len()
                )));
            }
            let mut out = Vec::with_capacity(k_count);
            for k in 0..k_count {
                let g = offload_gain(chan, beams, case, k, k)?;
                let bits = rate_term(
                    params.bandwidth,
                    alloc.tau1[k],
                    alloc.power[k] * g / params.noise_power,
                ) + params.frame * alloc.freq[k] / params.cycles_per_bit;
                let slack = bits - req[k];
                if slack < -FEASIBILITY_REL_TOL * req[k].abs().max(1.0) {
                    violations.push(format!(
                        "device {k} computes {bits:.3} bits < required {:.3}",
                        req[k]
                    ));
                }
                out.push(slack);
            }
            Some(out)
        }
        _ => None,
    };

    Ok(FeasibilityReport {
        energy_slack,
        time_slack,
        min_entry,
        modulus_violation,
        power_mismatch,
        qos_slack,
        violations,
    })
}
