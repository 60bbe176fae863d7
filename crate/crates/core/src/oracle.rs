//! Brute-force reference values for tiny instances.
//!
//! [`grid_refine_ra`] searches the allocation by nested grids: the
//! energy-transfer time, the split of the remaining time between TDMA slots
//! (stick-breaking over the simplex) and the fraction of each device's spare
//! energy sent uplink. CPU frequencies take the rest of the energy, which can
//! only help. Each round regrids a box of four cells around the incumbent.
//!
//! [`brute_force_rate`] enumerates every quantized phase vector. The
//! allocation value is nondecreasing in every gain, so only the Pareto front
//! of the gain vectors `(h_1, .., h_K)` can hold the optimum; the front of
//! energy-transfer gains is paired with the front of offloading gains (or
//! with itself in Case 1). In TDMA Case 3 each slot vector only affects its
//! own device and takes that device's best quantized gain; in NOMA Case 3 the
//! best single vector for a given allocation serves every slot, so one slot
//! suffices. All candidates are screened with a single coarse grid and the
//! best few are refined.
//!
//! Returned values are objectives of explicit feasible points, hence lower
//! bounds on the continuous optimum. The slack is the sum over axes of the
//! largest objective change within half a final cell of the incumbent.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::{LN_2, PI};

use crate::ao::{solve_noma, solve_tdma, AoConfig, Restrictions};
use crate::error::{Error, Result};
use crate::model::{
    equivalent_gain, io::channel_to_json, BeamVector, ChannelRealization, DibfCase,
    MultipleAccess, ResourceAllocation, SystemParams,
};
use crate::resource::RaProblem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub phase_levels: usize,
    /// Grid points per allocation axis.
    pub grid_points: usize,
    pub refine_rounds: usize,
    /// Beam candidates kept after the coarse screening.
    pub screen_keep: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            phase_levels: 64,
            grid_points: 9,
            refine_rounds: 8,
            screen_keep: 16,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.phase_levels < 2 {
            return Err(Error::params("phase_levels", "must be >= 2"));
        }
        if self.grid_points < 3 {
            return Err(Error::params("grid_points", "must be >= 3"));
        }
        if self.refine_rounds == 0 || self.screen_keep == 0 {
            return Err(Error::params("refine_rounds", "rounds and kept candidates must be >= 1"));
        }
        Ok(())
    }
}

/// Oracle value with its grid slack and the maximizing allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleValue {
    pub bits: f64,
    pub slack: f64,
    pub allocation: ResourceAllocation,
}

pub const MAX_ORACLE_ELEMENTS: usize = 3;
pub const MAX_ORACLE_DEVICES: usize = 2;
/// Device limit of [`grid_refine_ra`] on its own.
pub const MAX_GRID_DEVICES: usize = 3;

/// Allocation search space for fixed gains.
struct GridRa<'a> {
    p: &'a SystemParams,
    hw: &'a [f64],
    go: &'a [f64],
    noma: bool,
    fixed_tau0: Option<f64>,
    fixed_f: Option<&'a [f64]>,
}

struct Decoded {
    tau0: f64,
    tau: Vec<f64>,
    e: Vec<f64>,
    f: Vec<f64>,
}

impl GridRa<'_> {
    fn k(&self) -> usize {
        self.hw.len()
    }

    fn axes(&self) -> usize {
        let split = if self.noma { 0 } else { self.k() - 1 };
        usize::from(self.fixed_tau0.is_none()) + split + self.k()
    }

    fn decode(&self, y: &[f64]) -> Option<Decoded> {
        let p = self.p;
        let k = self.k();
        let t = p.frame;
        let mut i = 0;
        let tau0 = match self.fixed_tau0 {
            Some(v) => v,
            None => {
                i += 1;
                y[0] * t
            }
        };
        let rem = t - tau0;
        let mut tau = vec![0.0; k];
        if self.noma {
            tau.iter_mut().for_each(|v| *v = rem);
        } else {
            let mut left = 1.0;
            for d in 0..k - 1 {
                let w = left * y[i];
                tau[d] = rem * w;
                left -= w;
                i += 1;
            }
            tau[k - 1] = rem * left.max(0.0);
        }
        let eta_p = p.eh_efficiency * p.hap_tx_power;
        let mut e = vec![0.0; k];
        let mut f = vec![0.0; k];
        for d in 0..k {
            let budget = eta_p * tau0 * self.hw[d];
            let local = self
                .fixed_f
                .map_or(0.0, |ff| p.frame * p.cpu_energy_coeff * ff[d].powi(3));
            let spare = budget - local;
            if spare < 0.0 {
                return None;
            }
            e[d] = if tau[d] > 0.0 && self.go[d] > 0.0 { y[i + d] * spare } else { 0.0 };
            f[d] = match self.fixed_f {
                Some(ff) => ff[d],
                None => ((spare - e[d]) / (p.frame * p.cpu_energy_coeff)).cbrt(),
            };
        }
        Some(Decoded { tau0, tau, e, f })
    }

    fn value(&self, y: &[f64]) -> f64 {
        let Some(x) = self.decode(y) else { return f64::NEG_INFINITY };
        let p = self.p;
        let s2 = p.noise_power;
        let rate = |tau: f64, rx: f64| {
            if tau > 0.0 {
                p.bandwidth * tau * (rx / (tau * s2)).ln_1p() / LN_2
            } else {
                0.0
            }
        };
        let offload = if self.noma {
            let rx: f64 = (0..self.k()).map(|d| x.e[d] * self.go[d]).sum();
            rate(x.tau[0], rx)
        } else {
            (0..self.k()).map(|d| rate(x.tau[d], x.e[d] * self.go[d])).sum()
        };
        offload + x.f.iter().sum::<f64>() * p.frame / p.cycles_per_bit
    }

    fn allocation(&self, y: &[f64]) -> Result<ResourceAllocation> {
        let x = self
            .decode(y)
            .ok_or_else(|| Error::Numerical("oracle incumbent is infeasible".into()))?;
        if self.noma {
            ResourceAllocation::noma(x.tau0, vec![x.tau[0]], x.e, x.f)
        } else {
            ResourceAllocation::tdma(x.tau0, x.tau, x.e, x.f)
        }
    }

    /// One grid over `boxes`; returns the best point (first on ties).
    fn grid(&self, boxes: &[(f64, f64)], g: usize) -> (Vec<f64>, f64) {
        let m = boxes.len();
        let at = |idx: &[usize]| -> Vec<f64> {
            (0..m)
                .map(|a| {
                    let (lo, hi) = boxes[a];
                    lo + (hi - lo) * idx[a] as f64 / (g - 1) as f64
                })
                .collect()
        };
        let mut idx = vec![0usize; m];
        let mut best = (at(&idx), f64::NEG_INFINITY);
        loop {
            let y = at(&idx);
            let v = self.value(&y);
            if v > best.1 {
                best = (y, v);
            }
            // Odometer, last axis fastest.
            let mut a = m;
            loop {
                if a == 0 {
                    return best;
                }
                a -= 1;
                idx[a] += 1;
                if idx[a] < g {
                    break;
                }
                idx[a] = 0;
            }
        }
    }

    fn search(&self, g: usize, rounds: usize) -> (Vec<f64>, f64, Vec<f64>) {
        let m = self.axes();
        let mut boxes = vec![(0.0, 1.0); m];
        let (mut y, mut v) = self.grid(&boxes, g);
        for _ in 1..rounds {
            boxes = (0..m)
                .map(|a| {
                    let w = 2.0 * (boxes[a].1 - boxes[a].0) / (g - 1) as f64;
                    ((y[a] - w).max(0.0), (y[a] + w).min(1.0))
                })
                .collect();
            let (y2, v2) = self.grid(&boxes, g);
            if v2 > v {
                y = y2;
                v = v2;
            }
        }
        let half: Vec<f64> = boxes.iter().map(|(lo, hi)| 0.5 * (hi - lo) / (g - 1) as f64).collect();
        (y, v, half)
    }

    fn slack(&self, y: &[f64], v: f64, half: &[f64]) -> f64 {
        let mut total = 0.0;
        for a in 0..y.len() {
            let mut worst: f64 = 0.0;
            for s in [-1.0, 1.0] {
                let mut z = y.to_vec();
                z[a] = (z[a] + s * half[a]).clamp(0.0, 1.0);
                let w = self.value(&z);
                if w.is_finite() {
                    worst = worst.max((w - v).abs());
                }
            }
            total += worst;
        }
        total
    }
}

fn grid_problem<'a>(problem: &'a RaProblem<'a>) -> Result<GridRa<'a>> {
    problem.validate()?;
    let k = problem.num_devices();
    if k > MAX_GRID_DEVICES {
        return Err(Error::OracleSize(format!("K = {k} > {MAX_GRID_DEVICES}")));
    }
    if problem.qos_min_bits.is_some() {
        return Err(Error::Unsupported("the grid oracle takes no rate requirements".into()));
    }
    Ok(GridRa {
        p: problem.params,
        hw: &problem.gains_wpt,
        go: &problem.gains_off,
        noma: problem.scheme == MultipleAccess::Noma,
        fixed_tau0: problem.fixed_tau0,
        fixed_f: problem.fixed_f.as_deref(),
    })
}

/// Nested grid refinement of the resource-allocation problem.
pub fn grid_refine_ra(problem: &RaProblem<'_>, cfg: &OracleConfig) -> Result<OracleValue> {
    cfg.validate()?;
    let g = grid_problem(problem)?;
    let (y, v, half) = g.search(cfg.grid_points, cfg.refine_rounds);
    if !v.is_finite() {
        return Err(Error::QosInfeasible("no grid point is feasible".into()));
    }
    Ok(OracleValue {
        bits: v,
        slack: g.slack(&y, v, &half),
        allocation: g.allocation(&y)?,
    })
}

/// Every quantized unit-modulus vector, in lexicographic order of the phase
/// indices (first element slowest).
fn phase_vectors(n: usize, levels: usize) -> Vec<BeamVector> {
    let total = levels.pow(n as u32);
    (0..total)
        .map(|mut code| {
            let mut phases = vec![0.0; n];
            for i in (0..n).rev() {
                phases[i] = 2.0 * PI * (code % levels) as f64 / levels as f64;
                code /= levels;
            }
            BeamVector::from_phases(&phases)
        })
        .collect()
}

/// Indices of non-dominated gain vectors (first occurrence kept on ties).
fn pareto(gains: &[Vec<f64>]) -> Vec<usize> {
    let mut front: Vec<usize> = Vec::new();
    for (i, g) in gains.iter().enumerate() {
        let dominated = front.iter().any(|&j| gains[j].iter().zip(g).all(|(a, b)| a >= b));
        if dominated {
            continue;
        }
        front.retain(|&j| !g.iter().zip(&gains[j]).all(|(a, b)| a >= b));
        front.push(i);
    }
    front.sort_unstable();
    front
}

/// Best computation rate over quantized phases and a refined allocation grid.
pub fn brute_force_rate(
    params: &SystemParams,
    chan: &ChannelRealization,
    case: DibfCase,
    ma: MultipleAccess,
    cfg: &OracleConfig,
) -> Result<OracleValue> {
    cfg.validate()?;
    params.validate()?;
    let n = chan.num_elements();
    let k = chan.num_devices();
    if n > MAX_ORACLE_ELEMENTS || k > MAX_ORACLE_DEVICES {
        return Err(Error::OracleSize(format!(
            "N = {n}, K = {k}; limits are N <= {MAX_ORACLE_ELEMENTS}, K <= {MAX_ORACLE_DEVICES}"
        )));
    }
    let vectors = phase_vectors(n, cfg.phase_levels);
    let gains: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| (0..k).map(|d| equivalent_gain(chan, v, d)).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    let front: Vec<Vec<f64>> = pareto(&gains).into_iter().map(|i| gains[i].clone()).collect();

    let pairs: Vec<(Vec<f64>, Vec<f64>)> = match (case, ma) {
        (DibfCase::Case1, _) => front.iter().map(|g| (g.clone(), g.clone())).collect(),
        (DibfCase::Case2, _) | (DibfCase::Case3, MultipleAccess::Noma) => front
            .iter()
            .flat_map(|h| front.iter().map(move |g| (h.clone(), g.clone())))
            .collect(),
        (DibfCase::Case3, MultipleAccess::Tdma) => {
            let best: Vec<f64> = (0..k)
                .map(|d| gains.iter().map(|g| g[d]).fold(0.0, f64::max))
                .collect();
            front.iter().map(|h| (h.clone(), best.clone())).collect()
        }
    };

    let make = |h: &[f64], g: &[f64]| RaProblem::new(params, h.to_vec(), g.to_vec(), ma);
    let coarse = cfg.grid_points.min(7);
    let screened: Vec<f64> = pairs
        .par_iter()
        .map(|(h, g)| {
            let prob = make(h, g);
            grid_problem(&prob).map(|gr| gr.search(coarse, 1).1)
        })
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| screened[b].total_cmp(&screened[a]).then(a.cmp(&b)));
    order.truncate(cfg.screen_keep);
    order.sort_unstable();

    let refined: Vec<OracleValue> = order
        .par_iter()
        .map(|&i| grid_refine_ra(&make(&pairs[i].0, &pairs[i].1), cfg))
        .collect::<Result<_>>()?;
    let mut best = refined[0].clone();
    for v in refined.into_iter().skip(1) {
        if v.bits > best.bits {
            best = v;
        }
    }
    Ok(best)
}

/// Hex SHA-256 of the parameters and the channel file.
pub fn instance_hash(params: &SystemParams, chan: &ChannelRealization) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(params)?);
    h.update(channel_to_json(chan)?.as_bytes());
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Oracle against the alternating-optimization solver on one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub instance_hash: String,
    pub case: DibfCase,
    pub scheme: MultipleAccess,
    pub oracle_bits: f64,
    pub grid_slack: f64,
    pub solver_bits: f64,
    /// `(solver - oracle) / oracle`.
    pub gap: f64,
    /// Solver within the grid slack of the oracle or above it.
    pub passed: bool,
}

pub fn oracle_check(
    params: &SystemParams,
    chan: &ChannelRealization,
    case: DibfCase,
    ma: MultipleAccess,
    ocfg: &OracleConfig,
    ao: &AoConfig,
) -> Result<OracleReport> {
    let oracle = brute_force_rate(params, chan, case, ma, ocfg)?;
    let solver = match ma {
        MultipleAccess::Tdma => solve_tdma(params, chan, case, ao, &Restrictions::default(), &[])?.solution,
        MultipleAccess::Noma => solve_noma(params, chan, ao, case)?,
    };
    let scale = oracle.bits.abs().max(f64::MIN_POSITIVE);
    Ok(OracleReport {
        instance_hash: instance_hash(params, chan)?,
        case,
        scheme: ma,
        oracle_bits: oracle.bits,
        grid_slack: oracle.slack,
        solver_bits: solver.objective_bits,
        gap: (solver.objective_bits - oracle.bits) / scale,
        passed: solver.objective_bits >= oracle.bits - oracle.slack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::generate_channels;
    use crate::resource::solve_ra;
    use crate::single_user::solve_single_user;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn instance(n: usize, k: usize, seed: u64) -> (SystemParams, ChannelRealization) {
        let pos = (0..k).map(|i| [10.0 + 0.5 * i as f64, 0.6 - 1.2 * i as f64, 0.0]).collect();
        let p = SystemParams::reference(n, pos);
        let chan = generate_channels(&p, seed).unwrap();
        (p, chan)
    }

    #[test]
    fn grid_oracle_agrees_with_solver() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cfg = OracleConfig::default();
        for _ in 0..6 {
            let p = SystemParams::reference(0, vec![[10.0, 0.0, 0.0]; 2]);
            let hw: Vec<f64> = (0..2).map(|_| rng.random_range(2e-7..2e-6)).collect();
            let go: Vec<f64> = (0..2).map(|_| rng.random_range(2e-7..2e-6)).collect();
            for ma in [MultipleAccess::Tdma, MultipleAccess::Noma] {
                let prob = RaProblem::new(&p, hw.clone(), go.clone(), ma);
                let o = grid_refine_ra(&prob, &cfg).unwrap();
                let s = solve_ra(&prob).unwrap().objective_bits;
                assert!(o.bits <= s * (1.0 + 1e-9), "{ma}: oracle {} above solver {s}", o.bits);
                assert!((s - o.bits) / s <= 1e-3, "{ma}: oracle {} solver {s}", o.bits);
            }
        }
    }

    #[test]
    fn refinement_rounds_are_monotone() {
        let p = SystemParams::reference(0, vec![[10.0, 0.0, 0.0]; 2]);
        let prob = RaProblem::new(&p, vec![1e-6, 4e-7], vec![8e-7, 1.5e-6], MultipleAccess::Tdma);
        let mut last = f64::NEG_INFINITY;
        for rounds in 1..=4 {
            let cfg = OracleConfig { refine_rounds: rounds, ..OracleConfig::default() };
            let v = grid_refine_ra(&prob, &cfg).unwrap().bits;
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn symmetric_instance_has_symmetric_argmax() {
        let p = SystemParams::reference(0, vec![[10.0, 0.0, 0.0]; 2]);
        let prob = RaProblem::new(&p, vec![1e-6; 2], vec![1e-6; 2], MultipleAccess::Tdma);
        let o = grid_refine_ra(&prob, &OracleConfig::default()).unwrap();
        let a = &o.allocation;
        assert_eq!(a.tau1[0], a.tau1[1]);
        assert_eq!(a.energy[0], a.energy[1]);
    }

    #[test]
    fn zero_offloading_gains_give_local_computing() {
        let p = SystemParams::reference(0, vec![[10.0, 0.0, 0.0]; 2]);
        let prob = RaProblem::new(&p, vec![1e-6, 5e-7], vec![0.0; 2], MultipleAccess::Tdma);
        let o = grid_refine_ra(&prob, &OracleConfig::default()).unwrap();
        let eta_p = p.eh_efficiency * p.hap_tx_power;
        let local: f64 = [1e-6, 5e-7]
            .iter()
            .map(|h| (eta_p * p.frame * h / (p.frame * p.cpu_energy_coeff)).cbrt() * p.frame / p.cycles_per_bit)
            .sum();
        assert!((o.bits - local).abs() <= 1e-12 * local);
        assert!(o.allocation.energy.iter().all(|e| *e == 0.0));
    }

    #[test]
    fn single_user_oracle_tightens_with_resolution() {
        let (p, chan) = instance(1, 1, 2);
        let exact = solve_single_user(&p, &chan).unwrap().objective_bits;
        let mut last = 0.0;
        for levels in [8, 16, 32, 64] {
            let cfg = OracleConfig { phase_levels: levels, ..OracleConfig::default() };
            let v = brute_force_rate(&p, &chan, DibfCase::Case2, MultipleAccess::Tdma, &cfg).unwrap();
            assert!(v.bits <= exact * (1.0 + 1e-9));
            assert!(v.bits >= last);
            last = v.bits;
        }
        assert!((exact - last) / exact < 1e-3);
    }

    #[test]
    fn tdma_and_noma_oracles_agree_in_case2() {
        let (p, chan) = instance(1, 2, 6);
        let cfg = OracleConfig { phase_levels: 16, ..OracleConfig::default() };
        let t = brute_force_rate(&p, &chan, DibfCase::Case2, MultipleAccess::Tdma, &cfg).unwrap();
        let n = brute_force_rate(&p, &chan, DibfCase::Case2, MultipleAccess::Noma, &cfg).unwrap();
        assert!((t.bits - n.bits).abs() <= t.slack + n.slack + 1e-3 * t.bits);
    }

    #[test]
    fn vanishing_power_gives_no_bits() {
        let (mut p, _) = instance(1, 1, 0);
        p.hap_tx_power = 1e-30;
        let chan = generate_channels(&p, 0).unwrap();
        let cfg = OracleConfig { phase_levels: 4, ..OracleConfig::default() };
        let v = brute_force_rate(&p, &chan, DibfCase::Case1, MultipleAccess::Tdma, &cfg).unwrap();
        assert!(v.bits < 1e-3, "{}", v.bits);
    }

    #[test]
    fn size_guard() {
        let (p, chan) = instance(4, 1, 0);
        let r = brute_force_rate(&p, &chan, DibfCase::Case1, MultipleAccess::Tdma, &OracleConfig::default());
        assert!(matches!(r, Err(Error::OracleSize(_))));
    }

    #[test]
    fn pareto_front_drops_dominated_points() {
        let g = vec![vec![1.0, 1.0], vec![2.0, 0.5], vec![0.5, 0.5], vec![1.0, 1.0], vec![0.2, 3.0]];
        assert_eq!(pareto(&g), vec![0, 1, 4]);
    }
}
