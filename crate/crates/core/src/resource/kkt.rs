//! Optimality certificate of a resource allocation, rebuilt from the
//! allocation alone (no solver state).
//!
//! Energy prices `lambda_k` (bits/J) follow from the marginal value of
//! offloading energy, `B a_k / ((1 + snr) ln 2)` with `a_k = g_k / sigma^2`,
//! or of local computing, `1 / (3 C gamma_c f_k^2)`. The time price `mu`
//! (bits/s) is the marginal value of offloading time,
//! `B (ln(1 + snr) - snr / (1 + snr)) / ln 2`. The residual is the largest
//! relative violation of:
//!
//! * equal offloading and local energy prices on each device,
//! * equal time prices across offloading slots,
//! * `sum_k lambda_k eta P_E h_k = mu` when the energy-transfer time is free,
//! * no profitable deviation for idle devices.

use std::f64::consts::LN_2;

use super::RaProblem;
use crate::model::{KktCertificate, MultipleAccess, ResourceAllocation};
use crate::single_user::offload_dual_excess;

fn time_price(b: f64, snr: f64) -> f64 {
    b * (snr.ln_1p() - snr / (1.0 + snr)) / LN_2
}

fn rel_gap(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

pub fn certify(problem: &RaProblem<'_>, alloc: &ResourceAllocation) -> KktCertificate {
    let p = problem.params;
    let k = problem.num_devices();
    let b = p.bandwidth;
    let t = p.frame;
    let eta_p = p.eh_efficiency * p.hap_tx_power;
    let a: Vec<f64> = problem.gains_off.iter().map(|g| g / p.noise_power).collect();
    let f_free = problem.fixed_f.is_none();
    let ma = problem.scheme;

    let offloads: Vec<bool> = (0..k)
        .map(|d| alloc.transmit_time(ma, d) > 0.0 && alloc.energy[d] > 0.0 && a[d] > 0.0)
        .collect();
    let qos_active: Vec<bool> = (0..k)
        .map(|d| {
            problem.qos_min_bits.as_ref().is_some_and(|q| {
                q[d] > 0.0 && problem.device_bits(alloc, d) <= q[d] * (1.0 + 1e-7)
            })
        })
        .collect();
    let snr: Vec<f64> = match ma {
        MultipleAccess::Tdma => (0..k)
            .map(|d| {
                if offloads[d] {
                    alloc.energy[d] * a[d] / alloc.tau1[d]
                } else {
                    0.0
                }
            })
            .collect(),
        MultipleAccess::Noma => {
            let tau1 = alloc.tau1_total();
            let common = if tau1 > 0.0 {
                (0..k).map(|d| alloc.energy[d] * a[d]).sum::<f64>() / tau1
            } else {
                0.0
            };
            vec![common; k]
        }
    };

    let mut resid: f64 = 0.0;
    let mut lambda: Vec<Option<f64>> = vec![None; k];
    for d in 0..k {
        let budget = eta_p * alloc.tau0 * problem.gains_wpt[d];
        if budget <= 0.0 {
            lambda[d] = Some(0.0);
            continue;
        }
        let lam_off = offloads[d].then(|| b * a[d] / ((1.0 + snr[d]) * LN_2));
        let lam_loc = if f_free {
            let f = alloc.freq[d];
            if f > 0.0 {
                Some(1.0 / (3.0 * p.cycles_per_bit * p.cpu_energy_coeff * f * f))
            } else {
                // Unused energy with an infinite local marginal value.
                resid = resid.max(1.0);
                None
            }
        } else {
            None
        };
        lambda[d] = match (lam_off, lam_loc) {
            (Some(x), Some(y)) => {
                resid = resid.max(rel_gap(x, y));
                Some(x)
            }
            (Some(x), None) => Some(x),
            (None, Some(y)) => Some(y),
            (None, None) => {
                let used = alloc.energy[d] + t * p.cpu_energy_coeff * alloc.freq[d].powi(3);
                if budget - used > 1e-9 * budget {
                    Some(0.0)
                } else {
                    None
                }
            }
        };
    }

    // Time price.
    let slot_prices: Vec<(usize, f64)> = (0..k)
        .filter(|&d| offloads[d])
        .map(|d| (d, time_price(b, snr[d])))
        .collect();
    let free_prices: Vec<f64> = slot_prices
        .iter()
        .filter(|(d, _)| !qos_active[*d])
        .map(|(_, v)| *v)
        .collect();
    let harvest_value: f64 = (0..k)
        .filter_map(|d| lambda[d].map(|l| l * eta_p * problem.gains_wpt[d]))
        .sum();
    let undetermined = lambda.iter().any(|l| l.is_none()) || qos_active.iter().any(|q| *q);
    let mu = if !free_prices.is_empty() {
        free_prices.iter().sum::<f64>() / free_prices.len() as f64
    } else if let Some((_, v)) = slot_prices.first() {
        *v
    } else if problem.fixed_tau0.is_none() {
        harvest_value
    } else {
        0.0
    };
    for &(d, v) in &slot_prices {
        if qos_active[d] {
            // The rate requirement scales this slot's value by a weight >= 1.
            resid = resid.max(((v - mu) / mu.max(f64::MIN_POSITIVE)).max(0.0));
        } else {
            resid = resid.max(rel_gap(v, mu));
        }
    }
    if problem.fixed_tau0.is_none() && alloc.tau0 > 0.0 {
        if undetermined {
            resid = resid.max(((harvest_value - mu) / mu.max(f64::MIN_POSITIVE)).max(0.0));
        } else {
            resid = resid.max(rel_gap(harvest_value, mu));
        }
    }

    // Idle devices must not profit from starting to offload.
    let tau1 = alloc.tau1_total();
    for d in 0..k {
        if offloads[d] || a[d] <= 0.0 || qos_active[d] {
            continue;
        }
        let Some(l) = lambda[d] else { continue };
        let excess = if ma == MultipleAccess::Noma && tau1 > 0.0 {
            let marginal = b * a[d] / ((1.0 + snr[d]) * LN_2);
            if l > 0.0 {
                ((marginal - l) / l).max(0.0)
            } else {
                1.0
            }
        } else if l > 0.0 {
            offload_dual_excess(p, problem.gains_off[d], l, mu) * b / mu.max(1e-3 * b)
        } else if alloc.tau0 < t {
            // Spare energy and spare time: offloading would pay.
            1.0
        } else {
            0.0
        };
        resid = resid.max(excess);
    }

    KktCertificate {
        dual_energy: lambda.iter().map(|l| l.unwrap_or(0.0)).collect(),
        dual_time: mu,
        residual: resid,
    }
}
