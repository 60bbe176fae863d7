//! Structured TDMA solver for pinned CPU frequencies.
//!
//! Every offloading device ends at the same SNR `Gamma`, the root of
//! `(1 + Gamma) ln(1 + Gamma) - Gamma = sum_{k active} eta P_E h_k g_k / sigma^2`.
//! With `a_k = g_k / sigma^2` and `c_k = T gamma_c f_k^3` the times follow as
//!
//! ```text
//! tau0   = (T + sum_k c_k a_k / Gamma) / (1 + sum_k eta P_E h_k a_k / Gamma)
//! tau_1k = (tau0 eta P_E h_k - c_k) a_k / Gamma
//! ```
//!
//! A device is active iff its residual energy `tau0 eta P_E h_k - c_k` is
//! positive; ties at zero count as inactive. When the pinned frequencies force
//! `tau0` above the value above, `tau0` sits at that bound and the remaining
//! time is split at a common SNR.

use super::RaProblem;
use crate::error::{Error, Result};
use crate::model::{MultipleAccess, ResourceAllocation};
use crate::single_user::equal_snr_root;

pub fn solve_ra_equal_snr(problem: &RaProblem<'_>) -> Result<ResourceAllocation> {
    problem.validate()?;
    if problem.scheme != MultipleAccess::Tdma {
        return Err(Error::Unsupported("equal-SNR solver is TDMA only".into()));
    }
    if problem.qos_min_bits.is_some() || problem.fixed_tau0.is_some() {
        return Err(Error::Unsupported(
            "equal-SNR solver takes neither rate requirements nor a pinned tau0".into(),
        ));
    }
    let f = problem
        .fixed_f
        .clone()
        .ok_or_else(|| Error::params("fixed_f", "required by the equal-SNR solver"))?;
    let p = problem.params;
    let k = problem.num_devices();
    let t = p.frame;
    let eta_p = p.eh_efficiency * p.hap_tx_power;
    let a: Vec<f64> = problem.gains_off.iter().map(|g| g / p.noise_power).collect();
    let c: Vec<f64> = f.iter().map(|&fk| problem.local_energy(fk)).collect();
    let rate: Vec<f64> = problem.gains_wpt.iter().map(|h| eta_p * h).collect();

    let mut tau0_min: f64 = 0.0;
    for d in 0..k {
        if c[d] > 0.0 {
            if rate[d] <= 0.0 {
                return Err(Error::QosInfeasible(format!("device {d} cannot power its CPU")));
            }
            tau0_min = tau0_min.max(c[d] / rate[d]);
        }
    }
    if tau0_min > t * (1.0 + 1e-12) {
        return Err(Error::QosInfeasible(format!(
            "pinned frequencies need {tau0_min:e} s of energy transfer"
        )));
    }

    let idle = || ResourceAllocation::tdma(t, vec![0.0; k], vec![0.0; k], f.clone());
    let residual = |tau0: f64, d: usize| tau0 * rate[d] - c[d];

    // Start from every device that could ever offload and prune until the
    // active set is consistent with the resulting tau0.
    let mut active: Vec<bool> = (0..k).map(|d| a[d] > 0.0 && residual(t, d) > 0.0).collect();
    for _ in 0..=2 * k + 2 {
        if !active.iter().any(|x| *x) {
            return idle();
        }
        let load: f64 = (0..k).filter(|&d| active[d]).map(|d| rate[d] * a[d]).sum();
        let gamma = equal_snr_root(load)?;
        if gamma <= 0.0 {
            return idle();
        }
        let num = t + (0..k).filter(|&d| active[d]).map(|d| c[d] * a[d]).sum::<f64>() / gamma;
        let den = 1.0 + load / gamma;
        let mut tau0 = num / den;
        let pinned = tau0 < tau0_min;
        if pinned {
            tau0 = tau0_min;
            if t - tau0 <= 1e-12 * t {
                return idle();
            }
        }
        let next: Vec<bool> = (0..k).map(|d| a[d] > 0.0 && residual(tau0, d) > 0.0).collect();
        if next == active {
            let gamma = if pinned {
                let spare: f64 = (0..k)
                    .filter(|&d| active[d])
                    .map(|d| residual(tau0, d) * a[d])
                    .sum();
                spare / (t - tau0)
            } else {
                gamma
            };
            let mut tau = vec![0.0; k];
            let mut e = vec![0.0; k];
            for d in 0..k {
                if active[d] {
                    e[d] = residual(tau0, d);
                    tau[d] = e[d] * a[d] / gamma;
                }
            }
            // Close the time budget exactly.
            let tau0 = t - tau.iter().sum::<f64>();
            for d in 0..k {
                if active[d] {
                    e[d] = residual(tau0, d).max(0.0);
                }
            }
            return ResourceAllocation::tdma(tau0, tau, e, f);
        }
        active = next;
    }
    Err(Error::Numerical("equal-SNR active set did not settle".into()))
}
