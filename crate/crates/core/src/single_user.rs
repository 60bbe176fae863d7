//! Single-device analysis: aligned reflection vector, the optimal transmit
//! power `p*`, the offloading-activation threshold and the closed-form optimum
//! of the single-device computation-rate problem.

use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;

use crate::error::{Error, Result};
use crate::model::{
    equivalent_gain, total_bits, BeamVector, Beams, ChannelRealization, DibfCase,
    KktCertificate, MultipleAccess, ResourceAllocation, Solution, SystemParams,
};
use crate::units::watt_to_dbm;

/// Absolute tolerance on the residual of `G(p, h) = 0`.
pub const ROOT_TOL: f64 = 1e-10;
/// Bisection depth cap.
pub const MAX_BISECTIONS: usize = 200;
/// Cap on geometric bracket growth.
pub const MAX_DOUBLINGS: usize = 1024;

/// Outcome of the activation analysis for one equivalent gain `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivationAnalysis {
    pub gain_h: f64,
    /// Optimal offloading power `p*` in W.
    pub p_star: f64,
    /// Local CPU frequency when offloading is active, cycles/s.
    pub f_star: f64,
    /// HAP power above which offloading is activated, W.
    pub threshold_w: f64,
    pub activated: bool,
    /// Optimal offloading time, s.
    pub tau1_opt: f64,
}

/// Per-element phases `arg(conj h_d,k) + arg(q_k[n])`: every reflected path
/// adds coherently with the direct link of device `k`.
pub fn aligned_beam(chan: &ChannelRealization, k: usize) -> Result<BeamVector> {
    if k >= chan.num_devices() {
        return Err(Error::DeviceIndex {
            index: k,
            count: chan.num_devices(),
        });
    }
    let base = chan.h_direct()[k].conj().arg();
    let phases: Vec<f64> = chan.q_cascaded()[k].iter().map(|q| base + q.arg()).collect();
    Ok(BeamVector::from_phases(&phases))
}

/// Optimal reflection vector of a single-device system.
pub fn optimal_single_user_beam(chan: &ChannelRealization) -> Result<BeamVector> {
    if chan.num_devices() != 1 {
        return Err(Error::Unsupported(format!(
            "single-device beam needs K = 1, got {}",
            chan.num_devices()
        )));
    }
    aligned_beam(chan, 0)
}

/// `(1 + x) ln(1 + x) - x`, accurate for small `x`.
pub(crate) fn phi(x: f64) -> f64 {
    if x < 0.05 {
        // sum_{n >= 2} (-1)^n x^n / (n (n - 1))
        let mut term = x * x;
        let mut sum = 0.0;
        for n in 2..40 {
            let nf = n as f64;
            let t = term / (nf * (nf - 1.0));
            sum += if n % 2 == 0 { t } else { -t };
            if t < 1e-18 * sum.abs() {
                break;
            }
            term *= x;
        }
        sum
    } else {
        (1.0 + x) * x.ln_1p() - x
    }
}

/// Unique root `x >= 0` of `(1 + x) ln(1 + x) - x = c`.
///
/// This is the common SNR of every offloading device at the optimum; with a
/// single device `c = eta P_E h_wpt g_off / sigma^2`.
pub(crate) fn equal_snr_root(c: f64) -> Result<f64> {
    if !(c >= 0.0) || !c.is_finite() {
        return Err(Error::Numerical(format!("equal-SNR constant {c}")));
    }
    if c == 0.0 {
        return Ok(0.0);
    }
    // phi'' <= 1 gives phi(x) <= x^2 / 2, so sqrt(2c) is a lower bracket.
    let mut lo = (2.0 * c).sqrt();
    let mut hi = 2.0 * lo;
    let mut doublings = 0;
    while phi(hi) < c {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > MAX_DOUBLINGS || !hi.is_finite() {
            return Err(Error::BracketGrowth { doublings });
        }
    }
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if phi(mid) < c {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = 0.5 * (lo + hi);
    let resid = (phi(x) - c) / ((1.0 + x) * LN_2);
    if resid.abs() > ROOT_TOL {
        return Err(Error::Numerical(format!(
            "equal-SNR root residual {resid:e} above tolerance"
        )));
    }
    Ok(x)
}

/// `G(p, h) = log2(1 + ph/s2) - ph/((s2 + ph) ln 2) - eta P_E h^2/((s2 + ph) ln 2)`.
pub fn g_function(params: &SystemParams, p: f64, h: f64) -> f64 {
    let x = p * h / params.noise_power;
    let c = params.eh_efficiency * params.hap_tx_power * h * h / params.noise_power;
    (phi(x) - c) / ((1.0 + x) * LN_2)
}

/// Unique `p >= 0` with `G(p, h) = 0`.
pub fn solve_p_star(params: &SystemParams, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::params("h", format!("must be > 0, got {h}")));
    }
    p_star_two_gain(params, h, h)
}

/// Optimal power with distinct energy-transfer and offloading gains.
fn p_star_two_gain(params: &SystemParams, h_wpt: f64, g_off: f64) -> Result<f64> {
    let c = params.eh_efficiency * params.hap_tx_power * h_wpt * g_off / params.noise_power;
    Ok(equal_snr_root(c)? * params.noise_power / g_off)
}

/// Local frequency at which the marginal value of energy matches offloading
/// at power `p`.
fn f_star(params: &SystemParams, p: f64, g_off: f64) -> f64 {
    ((params.noise_power + p * g_off) * LN_2
        / (3.0 * params.cycles_per_bit * g_off * params.cpu_energy_coeff * params.bandwidth))
        .sqrt()
}

/// `thre(h) = gamma_c / (eta h) * ((s2 + p* h) ln 2 / (3 C h gamma_c B))^{3/2}`.
pub fn activation_threshold(params: &SystemParams, h: f64) -> Result<f64> {
    let p = solve_p_star(params, h)?;
    let f = f_star(params, p, h);
    Ok(params.cpu_energy_coeff * f.powi(3) / (params.eh_efficiency * h))
}

/// Full activation analysis at gain `h` and the HAP power in `params`.
pub fn analyze(params: &SystemParams, h: f64) -> Result<ActivationAnalysis> {
    let p = solve_p_star(params, h)?;
    let f = f_star(params, p, h);
    let threshold = params.cpu_energy_coeff * f.powi(3) / (params.eh_efficiency * h);
    let eph = params.eh_efficiency * params.hap_tx_power * h;
    let activated = params.hap_tx_power > threshold;
    let tau1 = if activated {
        params.frame * (eph - params.cpu_energy_coeff * f.powi(3)) / (p + eph)
    } else {
        0.0
    };
    Ok(ActivationAnalysis {
        gain_h: h,
        p_star: p,
        f_star: f,
        threshold_w: threshold,
        activated,
        tau1_opt: tau1,
    })
}

/// Equivalent gain of an aligned IRS with `n` elements under pure
/// line-of-sight propagation, for device 0 of `params`:
/// `beta d_AD^-a_AD (1 + N sqrt(d_AD^a_AD d_AI^-a_AI) sqrt(beta d_ID^-a_ID))^2`.
pub fn los_gain(params: &SystemParams, n: usize) -> Result<f64> {
    if params.num_devices() == 0 {
        return Err(Error::params("device_positions", "empty"));
    }
    let d_ad = params.dist_hap_device(0);
    let d_ai = params.dist_hap_irs();
    let d_id = params.dist_irs_device(0);
    let boost = n as f64
        * (d_ad.powf(params.pathloss_exp_ad) * d_ai.powf(-params.pathloss_exp_ai)).sqrt()
        * (params.ref_gain * d_id.powf(-params.pathloss_exp_id)).sqrt();
    Ok(params.ref_gain * d_ad.powf(-params.pathloss_exp_ad) * (1.0 + boost).powi(2))
}

/// Optimal allocation for one device with energy-transfer gain `h_wpt` and
/// offloading gain `g_off`, plus its multipliers.
pub(crate) fn solve_two_gain(
    params: &SystemParams,
    h_wpt: f64,
    g_off: f64,
) -> Result<(ResourceAllocation, KktCertificate)> {
    let t = params.frame;
    let gamma = params.cpu_energy_coeff;
    let eph = params.eh_efficiency * params.hap_tx_power * h_wpt;
    if eph <= 0.0 {
        let alloc = ResourceAllocation::tdma(t, vec![0.0], vec![0.0], vec![0.0])?;
        return Ok((alloc, KktCertificate { dual_energy: vec![0.0], dual_time: 0.0, residual: 0.0 }));
    }
    let local_only = |params: &SystemParams| -> Result<(ResourceAllocation, KktCertificate)> {
        let f = (eph / gamma).cbrt();
        let lambda = 1.0 / (3.0 * params.cycles_per_bit * gamma * f * f);
        let mu = lambda * eph;
        let excess = offload_dual_excess(params, g_off, lambda, mu);
        let alloc = ResourceAllocation::tdma(t, vec![0.0], vec![0.0], vec![f])?;
        Ok((alloc, KktCertificate { dual_energy: vec![lambda], dual_time: mu, residual: excess }))
    };
    if g_off <= 0.0 {
        return local_only(params);
    }
    let p = p_star_two_gain(params, h_wpt, g_off)?;
    let f = f_star(params, p, g_off);
    if eph <= gamma * f.powi(3) {
        return local_only(params);
    }
    let tau1 = t * (eph - gamma * f.powi(3)) / (p + eph);
    let tau0 = t - tau1;
    let e = tau0 * eph - t * gamma * f.powi(3);
    let alloc = ResourceAllocation::tdma(tau0, vec![tau1], vec![e.max(0.0)], vec![f])?;

    let x = p * g_off / params.noise_power;
    let b = params.bandwidth;
    let lambda = b * g_off / (params.noise_power * (1.0 + x) * LN_2);
    let mu = lambda * eph;
    let d_tau = b * (x.ln_1p() - x / (1.0 + x)) / LN_2 - mu;
    let d_f = t / params.cycles_per_bit - lambda * 3.0 * t * gamma * f * f;
    let residual = (d_tau.abs() / b).max(d_f.abs() * params.cycles_per_bit / t);
    Ok((alloc, KktCertificate { dual_energy: vec![lambda], dual_time: mu, residual }))
}

/// How much an idle device would gain from starting to offload, normalised by
/// `B`: `max(0, sup_p [B log2(1 + p g / s2) - lambda p] - mu) / B`.
///
/// Zero means the idle state satisfies the optimality conditions with energy
/// price `lambda` and time price `mu`.
pub(crate) fn offload_dual_excess(params: &SystemParams, g_off: f64, lambda: f64, mu: f64) -> f64 {
    let b = params.bandwidth;
    let a = g_off / params.noise_power;
    if a <= 0.0 {
        return 0.0;
    }
    let ratio = b * a / (lambda * LN_2);
    let best = if ratio <= 1.0 {
        0.0
    } else {
        b * ratio.log2() - lambda * (ratio - 1.0) / a
    };
    (best - mu).max(0.0) / b
}

/// Closed-form optimum of a single-device system with the aligned
/// reflection vector.
pub fn solve_single_user(params: &SystemParams, chan: &ChannelRealization) -> Result<Solution> {
    params.validate()?;
    chan.check_consistent(params)?;
    let v = optimal_single_user_beam(chan)?;
    let h = equivalent_gain(chan, &v, 0)?;
    solve_single_user_gain(params, h, v)
}

/// Single-device optimum for a given equivalent gain `h` and the vector that
/// realises it.
pub fn solve_single_user_gain(params: &SystemParams, h: f64, v: BeamVector) -> Result<Solution> {
    if params.num_devices() != 1 {
        return Err(Error::Unsupported(format!(
            "single-device solver needs K = 1, got {}",
            params.num_devices()
        )));
    }
    let (alloc, kkt) = solve_two_gain(params, h, h)?;
    let x = alloc.power[0] * h / params.noise_power;
    let offload = crate::model::rate_term(params.bandwidth, alloc.tau1[0], x);
    Ok(Solution {
        objective_bits: total_bits(params, &alloc, offload),
        offload_active: alloc.offload_active(),
        allocation: alloc,
        beams: Beams::shared(v),
        case: DibfCase::Case1,
        scheme: MultipleAccess::Tdma,
        kkt,
        iterations: 0,
    })
}

/// HAP power `P` at which `P = thre(h)` evaluated at `P`, searched over
/// `[p_lo, p_hi]` W. Offloading is active just above it and idle just below.
pub fn activation_power(params: &SystemParams, h: f64, p_lo: f64, p_hi: f64) -> Result<f64> {
    let gap = |p: f64| -> Result<f64> {
        let mut q = params.clone();
        q.hap_tx_power = p;
        Ok(p.ln() - activation_threshold(&q, h)?.ln())
    };
    let steps = 400;
    let ratio = (p_hi / p_lo).powf(1.0 / steps as f64);
    let mut a = p_lo;
    let mut ga = gap(a)?;
    for _ in 0..steps {
        let b = a * ratio;
        let gb = gap(b)?;
        if ga <= 0.0 && gb > 0.0 {
            let (mut lo, mut hi) = (a, b);
            for _ in 0..MAX_BISECTIONS {
                let mid = (lo * hi).sqrt();
                if mid <= lo || mid >= hi {
                    break;
                }
                if gap(mid)? > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(hi);
        }
        a = b;
        ga = gb;
    }
    Err(Error::Numerical(format!(
        "no activation crossing in [{p_lo:e}, {p_hi:e}] W"
    )))
}

/// One row of an activation map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivationRow {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "P_E_dBm")]
    pub pe_dbm: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub h: f64,
    #[serde(rename = "threshold_dBm")]
    pub threshold_dbm: f64,
    pub tau1_s: f64,
}

/// Line-of-sight activation map over element counts, HAP powers (dBm) and
/// cycles-per-bit values. Rows are ordered by `N`, then `C`, then power.
pub fn activation_map(
    params: &SystemParams,
    elements: &[usize],
    pe_dbm: &[f64],
    cycles: &[f64],
) -> Result<Vec<ActivationRow>> {
    let mut rows = Vec::with_capacity(elements.len() * pe_dbm.len() * cycles.len());
    for &n in elements {
        let h = los_gain(params, n)?;
        for &c in cycles {
            for &dbm in pe_dbm {
                let mut q = params.clone();
                q.cycles_per_bit = c;
                q.hap_tx_power = crate::units::dbm_to_watt(dbm);
                let a = analyze(&q, h)?;
                rows.push(ActivationRow {
                    n,
                    pe_dbm: dbm,
                    c,
                    h,
                    threshold_dbm: watt_to_dbm(a.threshold_w),
                    tau1_s: a.tau1_opt,
                });
            }
        }
    }
    Ok(rows)
}
