//! Moving solutions between TDMA and NOMA.
//!
//! Forward: the TDMA slots merge into one NOMA slot of length
//! `sum_k tau_1k`; every device keeps its offloading energy `e_k` (its power
//! becomes `e_k / tau_1`), its CPU frequency and the reflection vectors.
//! Reverse: the NOMA slot is split as `tau_1k = tau_1 e_k a_k / sum_j e_j a_j`,
//! which gives every device the same TDMA SNR as the NOMA sum SNR.

use crate::error::{Error, Result};
use crate::model::{
    objective_bits, ChannelRealization, DibfCase, MultipleAccess, ResourceAllocation, Solution,
    SystemParams,
};

fn check_case(sol: &Solution, from: MultipleAccess) -> Result<()> {
    if sol.scheme != from {
        return Err(Error::Unsupported(format!("expected a {from} solution, got {}", sol.scheme)));
    }
    if sol.case == DibfCase::Case3 {
        return Err(Error::Unsupported(
            "Case 3 solutions are mapped through their Case 2 counterpart".into(),
        ));
    }
    Ok(())
}

/// NOMA solution with the same objective as an equal-SNR TDMA solution.
pub fn noma_from_tdma(
    params: &SystemParams,
    chan: &ChannelRealization,
    sol: &Solution,
) -> Result<Solution> {
    check_case(sol, MultipleAccess::Tdma)?;
    let a = &sol.allocation;
    let alloc = ResourceAllocation::noma(a.tau0, vec![a.tau1_total()], a.energy.clone(), a.freq.clone())?;
    finish(params, chan, sol, alloc, MultipleAccess::Noma)
}

/// TDMA solution with the same objective as a NOMA solution.
pub fn tdma_from_noma(
    params: &SystemParams,
    chan: &ChannelRealization,
    sol: &Solution,
) -> Result<Solution> {
    check_case(sol, MultipleAccess::Noma)?;
    let a = &sol.allocation;
    let k = a.num_devices();
    let beam = sol.beams.offload_beam(sol.case, 0)?;
    let load: Vec<f64> = (0..k)
        .map(|d| Ok(a.energy[d] * crate::model::equivalent_gain(chan, beam, d)?))
        .collect::<Result<_>>()?;
    let total: f64 = load.iter().sum();
    let tau1 = a.tau1_total();
    let tau: Vec<f64> = if total > 0.0 {
        load.iter().map(|l| tau1 * l / total).collect()
    } else {
        vec![0.0; k]
    };
    // Energy of devices whose share rounds to zero time cannot be spent.
    let energy = (0..k)
        .map(|d| if tau[d] > 0.0 { a.energy[d] } else { 0.0 })
        .collect();
    let tau0 = if total > 0.0 { a.tau0 } else { a.tau0 + tau1 };
    let alloc = ResourceAllocation::tdma(tau0, tau, energy, a.freq.clone())?;
    finish(params, chan, sol, alloc, MultipleAccess::Tdma)
}

fn finish(
    params: &SystemParams,
    chan: &ChannelRealization,
    sol: &Solution,
    alloc: ResourceAllocation,
    scheme: MultipleAccess,
) -> Result<Solution> {
    let objective = objective_bits(params, chan, &sol.beams, &alloc, sol.case, scheme)?;
    Ok(Solution {
        objective_bits: objective,
        offload_active: alloc.offload_active(),
        allocation: alloc,
        beams: sol.beams.clone(),
        case: sol.case,
        scheme,
        kkt: sol.kkt.clone(),
        iterations: sol.iterations,
    })
}
