//! Resource allocation for fixed reflection vectors.
//!
//! With `e_k = tau_1k p_k` the problem
//!
//! ```text
//! max  B sum_k tau_1k log2(1 + e_k g_k / (tau_1k sigma^2)) + sum_k T f_k / C
//! s.t. e_k + T gamma_c f_k^3 <= tau0 eta P_E h_k,   tau0 + sum_k tau_1k <= T
//! ```
//!
//! is jointly concave. [`solve_ra`] handles it (and its NOMA, fixed-frequency,
//! fixed-WPT-time and per-device QoS variants) with a log-barrier Newton
//! method; [`solve_ra_equal_snr`] is the structured solver for fixed CPU
//! frequencies, and [`noma_from_tdma`] / [`tdma_from_noma`] move solutions
//! between the two multiple-access schemes.

mod equal_snr;
mod kkt;
mod maps;
mod program;
mod refine;

pub use equal_snr::solve_ra_equal_snr;
pub use kkt::certify;
pub use maps::{noma_from_tdma, tdma_from_noma};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::barrier::{find_interior, maximize, BarrierOptions, ConcaveProgram};
use crate::error::{Error, Result};
use crate::model::{
    equivalent_gain, rate_term, Beams, ChannelRealization, DibfCase, KktCertificate,
    MultipleAccess, ResourceAllocation, SystemParams,
};
use program::{Role, Scaled, Slot};
use refine::{refine, Point};

/// Offloading slots shorter than this fraction of the frame are dropped.
pub const ACTIVE_TIME_TOL: f64 = 1e-9;

/// Resource-allocation instance for fixed equivalent gains.
#[derive(Debug, Clone)]
pub struct RaProblem<'a> {
    pub params: &'a SystemParams,
    /// Energy-transfer gains `h_k^wpt`.
    pub gains_wpt: Vec<f64>,
    /// Offloading gains `g_k^off` (device `k` uses its own slot in Case 3).
    pub gains_off: Vec<f64>,
    pub scheme: MultipleAccess,
    /// Pins every CPU frequency (cycles/s).
    pub fixed_f: Option<Vec<f64>>,
    /// Pins the energy-transfer time (s).
    pub fixed_tau0: Option<f64>,
    /// Minimum bits per device and frame (TDMA only).
    pub qos_min_bits: Option<Vec<f64>>,
}

/// Output of [`solve_ra`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaSolution {
    pub allocation: ResourceAllocation,
    pub kkt: KktCertificate,
    pub objective_bits: f64,
    pub newton_steps: usize,
}

impl<'a> RaProblem<'a> {
    pub fn new(
        params: &'a SystemParams,
        gains_wpt: Vec<f64>,
        gains_off: Vec<f64>,
        scheme: MultipleAccess,
    ) -> Self {
        RaProblem {
            params,
            gains_wpt,
            gains_off,
            scheme,
            fixed_f: None,
            fixed_tau0: None,
            qos_min_bits: None,
        }
    }

    /// Gains induced by `beams` under `case`.
    pub fn from_beams(
        params: &'a SystemParams,
        chan: &ChannelRealization,
        beams: &Beams,
        case: DibfCase,
        scheme: MultipleAccess,
    ) -> Result<Self> {
        let (w, o) = gains(chan, beams, case)?;
        Ok(RaProblem::new(params, w, o, scheme))
    }

    pub fn num_devices(&self) -> usize {
        self.gains_wpt.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let k = self.params.num_devices();
        let check_len = |name: &str, len: usize| {
            if len != k {
                Err(Error::AllocationShape(format!("{name} has {len} entries for {k} devices")))
            } else {
                Ok(())
            }
        };
        check_len("gains_wpt", self.gains_wpt.len())?;
        check_len("gains_off", self.gains_off.len())?;
        if self
            .gains_wpt
            .iter()
            .chain(&self.gains_off)
            .any(|g| !(*g >= 0.0) || !g.is_finite())
        {
            return Err(Error::params("gains", "must be finite and >= 0"));
        }
        if let Some(f) = &self.fixed_f {
            check_len("fixed_f", f.len())?;
            if f.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::params("fixed_f", "must be finite and >= 0"));
            }
        }
        if let Some(t0) = self.fixed_tau0 {
            if !(0.0..=self.params.frame).contains(&t0) {
                return Err(Error::params("fixed_tau0", format!("{t0} outside [0, T]")));
            }
        }
        if let Some(q) = &self.qos_min_bits {
            check_len("qos_min_bits", q.len())?;
            if self.scheme == MultipleAccess::Noma {
                return Err(Error::Unsupported("per-device QoS is defined for TDMA only".into()));
            }
            if q.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::params("qos_min_bits", "must be finite and >= 0"));
            }
        }
        Ok(())
    }

    /// Objective of `alloc` computed from the stored gains.
    pub fn objective(&self, alloc: &ResourceAllocation) -> f64 {
        let p = self.params;
        let s2 = p.noise_power;
        let offload = match self.scheme {
            MultipleAccess::Tdma => (0..self.num_devices())
                .map(|k| rate_term(p.bandwidth, alloc.tau1[k], alloc.power[k] * self.gains_off[k] / s2))
                .sum(),
            MultipleAccess::Noma => {
                let rx: f64 = (0..self.num_devices())
                    .map(|k| alloc.power[k] * self.gains_off[k])
                    .sum();
                rate_term(p.bandwidth, alloc.tau1_total(), rx / s2)
            }
        };
        offload + alloc.freq.iter().sum::<f64>() * p.frame / p.cycles_per_bit
    }

    /// Bits computed by device `k` (TDMA).
    pub fn device_bits(&self, alloc: &ResourceAllocation, k: usize) -> f64 {
        let p = self.params;
        rate_term(
            p.bandwidth,
            alloc.tau1[k],
            alloc.power[k] * self.gains_off[k] / p.noise_power,
        ) + p.frame * alloc.freq[k] / p.cycles_per_bit
    }

    fn energy_budget(&self, tau0: f64, k: usize) -> f64 {
        self.params.eh_efficiency * self.params.hap_tx_power * tau0 * self.gains_wpt[k]
    }

    fn local_energy(&self, f: f64) -> f64 {
        self.params.frame * self.params.cpu_energy_coeff * f.powi(3)
    }
}

/// Energy-transfer and offloading gains of every device.
pub fn gains(
    chan: &ChannelRealization,
    beams: &Beams,
    case: DibfCase,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = chan.num_devices();
    let mut w = Vec::with_capacity(k);
    let mut o = Vec::with_capacity(k);
    for d in 0..k {
        w.push(equivalent_gain(chan, &beams.wpt, d)?);
        o.push(equivalent_gain(chan, beams.offload_beam(case, d)?, d)?);
    }
    Ok((w, o))
}

fn infeasible(msg: String) -> Error {
    Error::QosInfeasible(msg)
}

/// Maximizes the computation rate over time, energy and CPU frequency for the
/// gains in `problem`.
pub fn solve_ra(problem: &RaProblem<'_>) -> Result<RaSolution> {
    problem.validate()?;
    let p = problem.params;
    let k = problem.num_devices();
    let t = p.frame;
    let rel = 1e-12;

    // Minimum energy-transfer time imposed by pinned frequencies.
    let mut tau0_min: f64 = 0.0;
    for d in 0..k {
        let need = problem.fixed_f.as_ref().map_or(0.0, |f| problem.local_energy(f[d]));
        if need > 0.0 {
            let rate = problem.energy_budget(1.0, d);
            if rate <= 0.0 {
                return Err(infeasible(format!("device {d} has a pinned frequency but no energy")));
            }
            tau0_min = tau0_min.max(need / rate);
        }
    }
    if tau0_min > t * (1.0 + rel) {
        return Err(infeasible(format!(
            "pinned frequencies need {tau0_min:e} s of energy transfer"
        )));
    }
    if let Some(t0) = problem.fixed_tau0 {
        if t0 < tau0_min * (1.0 - rel) {
            return Err(infeasible(format!(
                "pinned frequencies need tau0 >= {tau0_min:e} s, got {t0:e} s"
            )));
        }
    }

    let tau0_ref = problem.fixed_tau0.unwrap_or(t);
    let no_time = tau0_ref >= t * (1.0 - rel) && problem.fixed_tau0.is_some();
    let forced_full = problem.fixed_tau0.is_none() && tau0_min >= t * (1.0 - rel);
    let roles: Vec<Role> = (0..k)
        .map(|d| {
            let budget = problem.energy_budget(tau0_ref, d);
            if problem.gains_wpt[d] <= 0.0 || (problem.fixed_tau0 == Some(0.0)) {
                Role::Dead
            } else if problem.gains_off[d] > 0.0
                && !no_time
                && !forced_full
                && budget > problem.fixed_f.as_ref().map_or(0.0, |f| problem.local_energy(f[d]))
            {
                Role::Offloader
            } else {
                Role::LocalOnly
            }
        })
        .collect();
    if let Some(f) = &problem.fixed_f {
        if (0..k).any(|d| roles[d] == Role::Dead && f[d] > 0.0) {
            return Err(infeasible("a device without energy has a pinned frequency".into()));
        }
    }
    if let Some(q) = &problem.qos_min_bits {
        if (0..k).any(|d| roles[d] == Role::Dead && q[d] > 0.0) {
            return Err(infeasible("a device without energy has a rate requirement".into()));
        }
    }

    let all_dead = roles.iter().all(|r| *r == Role::Dead);
    let nothing_to_optimize = all_dead
        || (forced_full && problem.fixed_f.is_some())
        || (problem.fixed_tau0.is_some()
            && problem.fixed_f.is_some()
            && !roles.contains(&Role::Offloader));
    let (alloc, steps) = if nothing_to_optimize {
        let tau0 = problem.fixed_tau0.unwrap_or(t);
        let f = problem.fixed_f.clone().unwrap_or_else(|| {
            (0..k)
                .map(|d| (problem.energy_budget(tau0, d) / (t * p.cpu_energy_coeff)).cbrt())
                .collect()
        });
        (build_alloc(problem, tau0, vec![0.0; k], vec![0.0; k], f)?, 0)
    } else {
        let prog = Scaled::build(problem, &roles);
        let x0 = start_point(&prog, tau0_min / t);
        let qos = prog.qos_constraints();
        let x0 = if qos.is_empty() {
            x0
        } else {
            find_interior(&prog, qos.clone(), &x0)?.ok_or_else(|| {
                infeasible("no allocation meets every rate requirement".into())
            })?
        };
        let r = maximize(&prog, x0, &BarrierOptions::default())?;
        let point = active_point(&prog, &r.x);
        let mut alloc = polish(problem, &prog, &point)?;
        if qos.is_empty() {
            let noma = problem.scheme == MultipleAccess::Noma;
            if let Some(better) = refine(&prog, &point, noma) {
                let cand = polish(problem, &prog, &better)?;
                if problem.objective(&cand) >= problem.objective(&alloc) * (1.0 - 1e-14) {
                    alloc = cand;
                }
            }
        }
        (alloc, r.newton_steps)
    };
    if let Some(q) = &problem.qos_min_bits {
        for d in 0..k {
            let got = problem.device_bits(&alloc, d);
            if got < q[d] * (1.0 - 1e-9) {
                return Err(infeasible(format!(
                    "device {d} reaches {got:.3} of {:.3} required bits",
                    q[d]
                )));
            }
        }
    }
    let kkt = certify(problem, &alloc);
    Ok(RaSolution {
        objective_bits: problem.objective(&alloc),
        allocation: alloc,
        kkt,
        newton_steps: steps,
    })
}

fn start_point(prog: &Scaled, tau0_lo: f64) -> DVector<f64> {
    let mut x = DVector::zeros(prog.dim());
    let tau0 = match prog.tau0 {
        Slot::Var(i) => {
            let v = 0.5 * (tau0_lo.max(0.0) + 1.0);
            x[i] = v;
            v
        }
        Slot::Fixed(v) => v,
    };
    let nb = prog.blocks.len().max(1) as f64;
    for b in &prog.blocks {
        x[b.tau] = (1.0 - tau0) / (2.0 * nb);
    }
    for d in 0..prog.k {
        let avail = tau0 * prog.h_hat[d];
        let fixed_cube = match prog.f[d] {
            Slot::Fixed(f) => f * f * f,
            Slot::Var(i) => {
                x[i] = (0.25 * avail).cbrt();
                0.0
            }
        };
        if let Some(i) = prog.e[d] {
            let spare = avail - fixed_cube;
            x[i] = 0.25 * spare;
        }
    }
    x
}

fn build_alloc(
    problem: &RaProblem<'_>,
    tau0: f64,
    tau: Vec<f64>,
    e: Vec<f64>,
    f: Vec<f64>,
) -> Result<ResourceAllocation> {
    match problem.scheme {
        MultipleAccess::Tdma => ResourceAllocation::tdma(tau0, tau, e, f),
        MultipleAccess::Noma => {
            let slot = tau.iter().cloned().fold(0.0, f64::max);
            ResourceAllocation::noma(tau0, vec![slot], e, f)
        }
    }
}

/// Scaled barrier point with negligible offloading dropped.
fn active_point(prog: &Scaled, x: &DVector<f64>) -> Point {
    let k = prog.k;
    let mut tau = vec![0.0; k];
    let mut e = vec![0.0; k];
    for d in 0..k {
        if let (Some(ti), Some(ei)) = (prog.tau[d], prog.e[d]) {
            if x[ti] >= ACTIVE_TIME_TOL && x[ei] >= ACTIVE_TIME_TOL {
                tau[d] = x[ti];
                e[d] = x[ei];
            }
        }
    }
    Point {
        tau,
        e,
    }
}

/// Maps a scaled point back to SI units, closes the time budget and makes
/// every energy constraint tight.
fn polish(problem: &RaProblem<'_>, prog: &Scaled, pt: &Point) -> Result<ResourceAllocation> {
    let p = problem.params;
    let k = problem.num_devices();
    let t = p.frame;
    let mut tau: Vec<f64> = pt.tau.iter().map(|v| v * t).collect();
    let mut e: Vec<f64> = pt.e.iter().map(|v| v * prog.e_scale).collect();
    let mut f = vec![0.0; k];
    let shared = problem.scheme == MultipleAccess::Noma;
    let used: f64 = if shared {
        tau.iter().cloned().fold(0.0, f64::max)
    } else {
        tau.iter().sum()
    };
    let tau0 = match problem.fixed_tau0 {
        Some(t0) => {
            if used > 0.0 {
                let scale = (t - t0) / used;
                for v in tau.iter_mut() {
                    *v *= scale;
                }
            }
            t0
        }
        None => t - used,
    };
    if shared {
        let slot = tau.iter().cloned().fold(0.0, f64::max);
        for d in 0..k {
            if e[d] > 0.0 {
                tau[d] = slot;
            }
        }
    }
    for d in 0..k {
        let budget = problem.energy_budget(tau0, d);
        match &problem.fixed_f {
            None => {
                if e[d] > budget {
                    e[d] = budget;
                }
                f[d] = ((budget - e[d]).max(0.0) / (t * p.cpu_energy_coeff)).cbrt();
            }
            Some(ff) => {
                f[d] = ff[d];
                if tau[d] > 0.0 {
                    e[d] = (budget - problem.local_energy(ff[d])).max(0.0);
                }
            }
        }
    }
    build_alloc(problem, tau0, tau, e, f)
}

#[cfg(test)]
mod tests;
