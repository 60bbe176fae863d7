//! IRS beamforming subproblem by successive convex approximation (SCA).
//!
//! With `vbar = [v; 1]` and `qbar_k = [q_k; h_d,k]`, every equivalent gain is
//! the rank-one quadratic form `vbar^H Q_k vbar` with `Q_k = qbar_k qbar_k^H`.
//! For a fixed resource allocation each gain is replaced by its tangent
//! minorant at the current anchor, which leaves a concave program over the
//! unit disks `|v_n| <= 1`. It is solved in real coordinates `[Re v; Im v]`
//! with the barrier method.
//!
//! What moves depends on the case:
//!
//! * Case 1: the shared vector maximizes the offloading rate under the
//!   linearized energy constraints;
//! * Case 2: the offloading vector maximizes the offloading rate, and the
//!   energy-transfer vector maximizes the price-weighted harvested energy
//!   while keeping every device's current energy budget;
//! * Case 3: the offloading vectors stay at the aligned closed form and only
//!   the energy-transfer vector moves, as in Case 2.
//!
//! Case 1 with nobody offloading falls back to the price-weighted energy
//! objective so that pure local computing still benefits from the IRS.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use std::f64::consts::{LN_2, PI};

use crate::barrier::{find_interior, maximize, BarrierOptions, ConcaveProgram, Local};
use crate::error::{Error, Result};
use crate::model::{
    BeamVector, Beams, ChannelRealization, DibfCase, ModulusMode, MultipleAccess,
    ResourceAllocation, SystemParams,
};
use crate::single_user::aligned_beam;

/// Tangent minorant `2 Re(vbar_l^H Q vbar) - vbar_l^H Q vbar_l` of a rank-one
/// form, stored as `2 Re(sum_n coeff_n vbar_n) - offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct Minorant {
    pub coeff: Vec<Complex64>,
    pub offset: f64,
}

impl Minorant {
    pub fn eval(&self, vbar: &[Complex64]) -> f64 {
        let s: Complex64 = self.coeff.iter().zip(vbar).map(|(c, v)| c * v).sum();
        2.0 * s.re - self.offset
    }

    /// Affine form in `[Re v; Im v]` with the last entry of `vbar` fixed to 1.
    fn real_affine(&self) -> Affine {
        let n = self.coeff.len() - 1;
        let mut g = DVector::zeros(2 * n);
        for i in 0..n {
            g[i] = 2.0 * self.coeff[i].re;
            g[n + i] = -2.0 * self.coeff[i].im;
        }
        Affine {
            c: 2.0 * self.coeff[n].re - self.offset,
            g,
        }
    }
}

/// `vbar^H qbar qbar^H vbar = |qbar^H vbar|^2`.
pub fn quadratic_form(qbar: &[Complex64], vbar: &[Complex64]) -> f64 {
    inner(qbar, vbar).norm_sqr()
}

fn inner(qbar: &[Complex64], vbar: &[Complex64]) -> Complex64 {
    qbar.iter().zip(vbar).map(|(q, v)| q.conj() * v).sum()
}

/// Affine minorant of `vbar^H Q vbar`, `Q = qbar qbar^H`, tight at `anchor`.
pub fn sca_lower_bound(qbar: &[Complex64], anchor: &[Complex64]) -> Minorant {
    let z = inner(qbar, anchor);
    Minorant {
        coeff: qbar.iter().map(|q| z.conj() * q.conj()).collect(),
        offset: z.norm_sqr(),
    }
}

/// `[v; 1]`.
pub fn extend(v: &BeamVector) -> Vec<Complex64> {
    let mut out = v.entries().to_vec();
    out.push(Complex64::new(1.0, 0.0));
    out
}

/// `[q_k; h_d,k]`.
pub fn extended_channel(chan: &ChannelRealization, k: usize) -> Vec<Complex64> {
    let mut out = chan.q_cascaded()[k].clone();
    out.push(chan.h_direct()[k]);
    out
}

/// Normalizes every entry to unit modulus; entries below `1e-12` in modulus
/// become `1 + 0j`.
pub fn project_unit_modulus(v: &BeamVector) -> BeamVector {
    v.project_unit_modulus()
}

/// Per-device offloading vector of Case 3: every reflected path aligned with
/// the direct link of device `k`.
pub fn case3_optimal_phases(chan: &ChannelRealization, k: usize) -> Result<BeamVector> {
    aligned_beam(chan, k)
}

/// Aligned vector of the device with the strongest cascaded channel
/// (largest `sum_n |q_k[n]|`, lowest index on ties).
pub fn initial_beam(chan: &ChannelRealization) -> Result<BeamVector> {
    let mut best = 0;
    let mut best_sum = f64::NEG_INFINITY;
    for (k, q) in chan.q_cascaded().iter().enumerate() {
        let s: f64 = q.iter().map(|c| c.norm()).sum();
        if s > best_sum {
            best_sum = s;
            best = k;
        }
    }
    aligned_beam(chan, best)
}

/// Unit-modulus vector with independent uniform phases.
pub fn random_beam<R: Rng + ?Sized>(n: usize, rng: &mut R) -> BeamVector {
    let phases: Vec<f64> = (0..n).map(|_| rng.random_range(-PI..PI)).collect();
    BeamVector::from_phases(&phases)
}

/// SCA iterate: extended anchors, the rank-one forms and the gain slacks.
///
/// `vbar1` is empty in Case 1 (the energy-transfer vector is shared), holds
/// the offloading vector in Case 2 and the fixed per-slot vectors in Case 3.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaState {
    pub vbar0: Vec<Complex64>,
    pub vbar1: Vec<Vec<Complex64>>,
    /// `qbar_k`, so that `Q_k = qbar_k qbar_k^H`.
    pub qbar: Vec<Vec<Complex64>>,
    /// Offloading-gain slacks `S_k`.
    pub slack: Vec<f64>,
    pub iteration: usize,
}

impl ScaState {
    /// `(1 - alpha) self + alpha other` on every vector; stays in the disks.
    pub fn blend(&self, other: &ScaState, alpha: f64) -> ScaState {
        let mix = |a: &[Complex64], b: &[Complex64]| -> Vec<Complex64> {
            a.iter().zip(b).map(|(x, y)| x * (1.0 - alpha) + y * alpha).collect()
        };
        ScaState {
            vbar0: mix(&self.vbar0, &other.vbar0),
            vbar1: self.vbar1.iter().zip(&other.vbar1).map(|(a, b)| mix(a, b)).collect(),
            qbar: self.qbar.clone(),
            slack: other.slack.clone(),
            iteration: other.iteration,
        }
    }

    pub fn new(chan: &ChannelRealization, beams: &Beams, case: DibfCase) -> Result<Self> {
        let k = chan.num_devices();
        beams.check_case(case, k)?;
        for b in beams.all() {
            if b.len() != chan.num_elements() {
                return Err(Error::BeamLength {
                    got: b.len(),
                    expected: chan.num_elements(),
                });
            }
        }
        let vbar1: Vec<Vec<Complex64>> = match case {
            DibfCase::Case1 => Vec::new(),
            DibfCase::Case2 => vec![extend(&beams.offload[0])],
            DibfCase::Case3 => beams.offload.iter().take(k).map(extend).collect(),
        };
        let qbar: Vec<Vec<Complex64>> = (0..k).map(|d| extended_channel(chan, d)).collect();
        let mut state = ScaState {
            vbar0: extend(&beams.wpt),
            vbar1,
            qbar,
            slack: Vec::new(),
            iteration: 0,
        };
        state.slack = (0..k).map(|d| quadratic_form(&state.qbar[d], state.offload_anchor(d))).collect();
        Ok(state)
    }

    fn offload_anchor(&self, k: usize) -> &[Complex64] {
        match self.vbar1.len() {
            0 => &self.vbar0,
            1 => &self.vbar1[0],
            _ => &self.vbar1[k],
        }
    }

    pub fn num_elements(&self) -> usize {
        self.vbar0.len() - 1
    }

    /// `Q_k = qbar_k qbar_k^H`.
    pub fn q_matrix(&self, k: usize) -> DMatrix<Complex64> {
        let q = &self.qbar[k];
        DMatrix::from_fn(q.len(), q.len(), |i, j| q[i] * q[j].conj())
    }

    /// Beams in relaxed-disk mode.
    pub fn beams(&self) -> Result<Beams> {
        let strip = |v: &[Complex64]| BeamVector::new(v[..v.len() - 1].to_vec(), ModulusMode::RelaxedDisk);
        Ok(Beams {
            wpt: strip(&self.vbar0)?,
            offload: self.vbar1.iter().map(|v| strip(v)).collect::<Result<_>>()?,
        })
    }
}

/// Result of one SCA subproblem.
#[derive(Debug, Clone)]
pub struct BfOutcome {
    pub state: ScaState,
    /// Offloading bits of the subproblem objective at the new anchors.
    pub objective_bits: f64,
    /// Relative duality-gap bound of the inner solves.
    pub kkt_residual: f64,
    /// Whether any vector moved.
    pub improved: bool,
}

#[derive(Debug, Clone)]
struct Affine {
    c: f64,
    g: DVector<f64>,
}

impl Affine {
    fn eval(&self, x: &DVector<f64>) -> f64 {
        self.c + self.g.dot(x)
    }

    fn scaled(mut self, shift: f64, scale: f64) -> Affine {
        self.c = (self.c - shift) / scale;
        self.g /= scale;
        self
    }
}

enum Rate {
    /// `sum_k w_k ln(1 + b_k m_k(x))`.
    Tdma(Vec<(f64, f64, Affine)>),
    /// `w ln(1 + sum_k b_k m_k(x))`.
    Noma(f64, Vec<(f64, Affine)>),
}

/// One concave block in `[Re v; Im v]`: rate or weighted-gain objective,
/// unit-disk constraints (indices `0..n`) and affine constraints.
struct BfProgram {
    n: usize,
    rate: Option<Rate>,
    linear: Vec<(f64, Affine)>,
    scale: f64,
    affine: Vec<Affine>,
}

impl BfProgram {
    fn raw_value(&self, x: &DVector<f64>) -> f64 {
        let mut v: f64 = self.linear.iter().map(|(w, a)| w * a.eval(x)).sum();
        match &self.rate {
            Some(Rate::Tdma(terms)) => {
                for (w, b, a) in terms {
                    v += w * (b * a.eval(x)).ln_1p();
                }
            }
            Some(Rate::Noma(w, terms)) => {
                let load: f64 = terms.iter().map(|(b, a)| b * a.eval(x)).sum();
                v += w * load.ln_1p();
            }
            None => {}
        }
        v
    }
}

impl ConcaveProgram for BfProgram {
    fn dim(&self) -> usize {
        2 * self.n
    }

    fn num_constraints(&self) -> usize {
        self.n + self.affine.len()
    }

    fn objective(&self, x: &DVector<f64>) -> f64 {
        self.raw_value(x) / self.scale
    }

    fn objective_local(&self, x: &DVector<f64>) -> Local {
        let mut l = Local::zeros(self.dim());
        let s = self.scale;
        for (w, a) in &self.linear {
            l.grad.axpy(w / s, &a.g, 1.0);
        }
        match &self.rate {
            Some(Rate::Tdma(terms)) => {
                for (w, b, a) in terms {
                    let u = 1.0 + b * a.eval(x);
                    l.grad.axpy(w * b / (u * s), &a.g, 1.0);
                    l.hess.ger(-w * b * b / (u * u * s), &a.g, &a.g, 1.0);
                }
            }
            Some(Rate::Noma(w, terms)) => {
                let mut dir = DVector::zeros(self.dim());
                let mut load = 0.0;
                for (b, a) in terms {
                    dir.axpy(*b, &a.g, 1.0);
                    load += b * a.eval(x);
                }
                let u = 1.0 + load;
                l.grad.axpy(w / (u * s), &dir, 1.0);
                l.hess.ger(-w / (u * u * s), &dir, &dir, 1.0);
            }
            None => {}
        }
        l.value = self.objective(x);
        l
    }

    fn constraint(&self, i: usize, x: &DVector<f64>) -> f64 {
        if i < self.n {
            1.0 - x[i] * x[i] - x[self.n + i] * x[self.n + i]
        } else {
            self.affine[i - self.n].eval(x)
        }
    }

    fn constraint_local(&self, i: usize, x: &DVector<f64>) -> Local {
        let mut l = Local::zeros(self.dim());
        l.value = self.constraint(i, x);
        if i < self.n {
            let j = self.n + i;
            l.grad[i] = -2.0 * x[i];
            l.grad[j] = -2.0 * x[j];
            l.hess[(i, i)] = -2.0;
            l.hess[(j, j)] = -2.0;
        } else {
            l.grad.copy_from(&self.affine[i - self.n].g);
        }
        l
    }
}

fn to_real(vbar: &[Complex64]) -> DVector<f64> {
    let n = vbar.len() - 1;
    DVector::from_fn(2 * n, |i, _| if i < n { vbar[i].re } else { vbar[i - n].im })
}

fn from_real(x: &DVector<f64>) -> Vec<Complex64> {
    let n = x.len() / 2;
    let mut out: Vec<Complex64> = (0..n).map(|i| Complex64::new(x[i], x[n + i])).collect();
    out.push(Complex64::new(1.0, 0.0));
    out
}

/// Inner stopping rule of the subproblem (relative duality gap).
const BF_GAP_TOL: f64 = 1e-10;
/// Shrink factor that moves a unit-modulus anchor inside the disks.
const ANCHOR_SHRINK: f64 = 1.0 - 1e-6;

/// Solves one block from `anchor`. Returns the new point when it beats the
/// anchor, together with the gap bound.
fn solve_block(prog: &BfProgram, anchor: &DVector<f64>) -> Result<(Option<DVector<f64>>, f64)> {
    let base = prog.objective(anchor);
    let start = anchor * ANCHOR_SHRINK;
    let hard: Vec<usize> = (prog.n..prog.num_constraints())
        .filter(|&i| prog.constraint(i, &start) <= 0.0)
        .collect();
    let Some(x0) = find_interior(prog, hard, &start)? else {
        // The anchor is the only point meeting every constraint.
        return Ok((None, 0.0));
    };
    let opts = BarrierOptions {
        gap_tol: BF_GAP_TOL,
        ..BarrierOptions::default()
    };
    let r = maximize(prog, x0, &opts)?;
    let residual = prog.num_constraints() as f64 / (r.t * r.objective.abs().max(1e-300));
    if r.objective > base {
        Ok((Some(r.x), residual))
    } else {
        Ok((None, residual))
    }
}

/// Solves the SCA subproblem for the allocation `alloc` around the anchors in
/// `state`. `prices` are the per-device energy multipliers of the resource
/// allocation (bits/J); they weight the harvested energy in the blocks that
/// move the energy-transfer vector alone.
pub fn solve_bf_subproblem(
    state: &ScaState,
    alloc: &ResourceAllocation,
    prices: &[f64],
    params: &SystemParams,
    case: DibfCase,
    ma: MultipleAccess,
) -> Result<BfOutcome> {
    subproblem(state, alloc, prices, params, case, ma, false)
}

/// Priced variant: drops the per-device energy rows and instead values
/// harvested energy at `prices`, so one device's energy can be traded for
/// another's gain. The allocation may become infeasible at the new vectors;
/// the caller re-solves it.
pub fn solve_bf_priced(
    state: &ScaState,
    alloc: &ResourceAllocation,
    prices: &[f64],
    params: &SystemParams,
    case: DibfCase,
    ma: MultipleAccess,
) -> Result<BfOutcome> {
    subproblem(state, alloc, prices, params, case, ma, true)
}

fn subproblem(
    state: &ScaState,
    alloc: &ResourceAllocation,
    prices: &[f64],
    params: &SystemParams,
    case: DibfCase,
    ma: MultipleAccess,
    priced: bool,
) -> Result<BfOutcome> {
    let k = state.qbar.len();
    let n = state.num_elements();
    if alloc.num_devices() != k || prices.len() != k {
        return Err(Error::AllocationShape(format!(
            "{} devices in the allocation, {} prices, {k} channels",
            alloc.num_devices(),
            prices.len()
        )));
    }
    if ma == MultipleAccess::Noma && case == DibfCase::Case3 {
        return Err(Error::Unsupported(
            "NOMA Case 3 is solved through Case 2".into(),
        ));
    }
    let harvest_rate = params.eh_efficiency * params.hap_tx_power * alloc.tau0;
    let mut worst_modulus: f64 = 0.0;
    for v in std::iter::once(&state.vbar0).chain(&state.vbar1) {
        for c in &v[..n] {
            worst_modulus = worst_modulus.max(c.norm());
        }
    }
    if worst_modulus > 1.0 + 1e-9 {
        return Err(Error::InfeasibleAnchor(format!("entry modulus {worst_modulus}")));
    }

    // Energy needs at the anchor, in units of equivalent gain.
    let gain0: Vec<f64> = (0..k).map(|d| quadratic_form(&state.qbar[d], &state.vbar0)).collect();
    let mut need = vec![0.0; k];
    for d in 0..k {
        let used = alloc.energy[d]
            + params.frame * params.cpu_energy_coeff * alloc.freq[d].powi(3);
        if used <= 0.0 {
            continue;
        }
        let budget = harvest_rate * gain0[d];
        if used > budget * (1.0 + 1e-9) {
            return Err(Error::InfeasibleAnchor(format!(
                "device {d} spends {used:e} J of {budget:e} J harvested"
            )));
        }
        need[d] = (used / harvest_rate).min(gain0[d]);
    }
    let energy_rows = |anchor: &[Complex64]| -> Vec<Affine> {
        if priced {
            return Vec::new();
        }
        (0..k)
            .filter(|&d| need[d] > 0.0)
            .map(|d| {
                sca_lower_bound(&state.qbar[d], anchor)
                    .real_affine()
                    .scaled(need[d], gain0[d])
            })
            .collect()
    };

    // Offloading terms of devices that transmit.
    let active: Vec<usize> = (0..k)
        .filter(|&d| alloc.transmit_time(ma, d) > 0.0 && alloc.power[d] > 0.0)
        .collect();
    let s2 = params.noise_power;
    let price_terms = |anchor: &[Complex64]| -> Vec<(f64, Affine)> {
        (0..k)
            .filter(|&d| prices[d] > 0.0)
            .map(|d| {
                let m = sca_lower_bound(&state.qbar[d], anchor).real_affine();
                (prices[d] * harvest_rate, m)
            })
            .collect()
    };
    let rate_block = |anchor: &[Complex64], energy: Vec<Affine>| -> Option<BfProgram> {
        if active.is_empty() {
            return None;
        }
        let mut affine = energy;
        let mut terms = Vec::new();
        for &d in &active {
            let m = sca_lower_bound(&state.qbar[d], anchor).real_affine();
            let g = quadratic_form(&state.qbar[d], anchor);
            if g > 0.0 {
                affine.push(m.clone().scaled(0.0, g));
            }
            terms.push((d, m));
        }
        let rate = match ma {
            MultipleAccess::Tdma => Rate::Tdma(
                terms
                    .into_iter()
                    .map(|(d, m)| {
                        (params.bandwidth * alloc.tau1[d] / LN_2, alloc.power[d] / s2, m)
                    })
                    .collect(),
            ),
            MultipleAccess::Noma => Rate::Noma(
                params.bandwidth * alloc.tau1_total() / LN_2,
                terms.into_iter().map(|(d, m)| (alloc.power[d] / s2, m)).collect(),
            ),
        };
        let linear = if priced && case == DibfCase::Case1 {
            price_terms(anchor)
        } else {
            Vec::new()
        };
        let mut prog = BfProgram {
            n,
            rate: Some(rate),
            linear,
            scale: 1.0,
            affine,
        };
        let base = prog.raw_value(&to_real(anchor));
        prog.scale = if base > 0.0 { base } else { 1.0 };
        Some(prog)
    };
    let energy_block = || -> Option<BfProgram> {
        let mut weights: Vec<f64> = (0..k)
            .map(|d| prices[d].max(0.0) * harvest_rate)
            .collect();
        if weights.iter().all(|w| *w == 0.0) {
            weights = gain0.iter().map(|g| if *g > 0.0 { 1.0 / g } else { 0.0 }).collect();
        }
        let linear: Vec<(f64, Affine)> = (0..k)
            .filter(|&d| weights[d] > 0.0)
            .map(|d| (weights[d], sca_lower_bound(&state.qbar[d], &state.vbar0).real_affine()))
            .collect();
        if linear.is_empty() {
            return None;
        }
        let base: f64 = (0..k).map(|d| weights[d] * gain0[d]).sum();
        Some(BfProgram {
            n,
            rate: None,
            linear,
            scale: if base > 0.0 { base } else { 1.0 },
            affine: energy_rows(&state.vbar0),
        })
    };

    let mut next = state.clone();
    next.iteration += 1;
    let mut residual: f64 = 0.0;
    let mut improved = false;
    if n > 0 {
        let mut run = |prog: Option<BfProgram>, anchor: &[Complex64]| -> Result<Option<Vec<Complex64>>> {
            let Some(prog) = prog else { return Ok(None) };
            let (x, r) = solve_block(&prog, &to_real(anchor))?;
            residual = residual.max(r);
            Ok(x.map(|x| from_real(&x)))
        };
        match case {
            DibfCase::Case1 => {
                let prog = match rate_block(&state.vbar0, energy_rows(&state.vbar0)) {
                    Some(p) => Some(p),
                    None => energy_block(),
                };
                if let Some(v) = run(prog, &state.vbar0)? {
                    next.vbar0 = v;
                    improved = true;
                }
            }
            DibfCase::Case2 => {
                if let Some(v) = run(rate_block(&state.vbar1[0], Vec::new()), &state.vbar1[0])? {
                    next.vbar1[0] = v;
                    improved = true;
                }
                if let Some(v) = run(energy_block(), &state.vbar0)? {
                    next.vbar0 = v;
                    improved = true;
                }
            }
            DibfCase::Case3 => {
                if let Some(v) = run(energy_block(), &state.vbar0)? {
                    next.vbar0 = v;
                    improved = true;
                }
            }
        }
    }

    // Slacks sit on their linearized bounds.
    next.slack = (0..k)
        .map(|d| match case {
            DibfCase::Case3 => quadratic_form(&next.qbar[d], next.offload_anchor(d)),
            _ => sca_lower_bound(&state.qbar[d], state.offload_anchor(d)).eval(next.offload_anchor(d)),
        })
        .collect();
    let objective_bits = match ma {
        MultipleAccess::Tdma => (0..k)
            .filter(|&d| alloc.tau1[d] > 0.0)
            .map(|d| {
                params.bandwidth * alloc.tau1[d] * (alloc.power[d] * next.slack[d] / s2).ln_1p() / LN_2
            })
            .sum(),
        MultipleAccess::Noma => {
            let load: f64 = (0..k).map(|d| alloc.power[d] * next.slack[d]).sum();
            params.bandwidth * alloc.tau1_total() * (load / s2).ln_1p() / LN_2
        }
    };
    Ok(BfOutcome {
        state: next,
        objective_bits,
        kkt_residual: residual,
        improved,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{equivalent_gain, generate_channels};
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_complex(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
        (0..n)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    fn with_one(mut v: Vec<Complex64>) -> Vec<Complex64> {
        v.push(Complex64::new(1.0, 0.0));
        v
    }

    #[test]
    fn minorant_is_tangent_and_below() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let qbar = random_complex(&mut rng, 5);
            let anchor = with_one(random_complex(&mut rng, 4));
            let m = sca_lower_bound(&qbar, &anchor);
            let exact = quadratic_form(&qbar, &anchor);
            assert!((m.eval(&anchor) - exact).abs() <= 1e-12 * exact.max(1.0));
            for _ in 0..1000 {
                let v = with_one(random_complex(&mut rng, 4));
                assert!(m.eval(&v) <= quadratic_form(&qbar, &v) + 1e-12);
            }
        }
    }

    #[test]
    fn zero_form_has_zero_minorant() {
        let anchor = with_one(vec![Complex64::new(0.3, -0.2); 3]);
        let m = sca_lower_bound(&[Complex64::new(0.0, 0.0); 4], &anchor);
        assert_eq!(m.eval(&anchor), 0.0);
        assert_eq!(m.eval(&with_one(vec![Complex64::new(1.0, 1.0); 3])), 0.0);
    }

    #[test]
    fn quadratic_form_matches_equivalent_gain() {
        let p = SystemParams::reference(4, vec![[10.0, 1.0, 0.0], [9.0, -1.0, 0.0]]);
        let chan = generate_channels(&p, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random_beam(4, &mut rng);
        for k in 0..2 {
            let g = equivalent_gain(&chan, &v, k).unwrap();
            let q = quadratic_form(&extended_channel(&chan, k), &extend(&v));
            assert!((g - q).abs() <= 1e-12 * g);
            let qm = ScaState::new(&chan, &Beams::shared(v.clone()), DibfCase::Case1)
                .unwrap()
                .q_matrix(k);
            let vb = DVector::from_vec(extend(&v));
            let viaq = (vb.adjoint() * qm * &vb)[(0, 0)];
            assert!((viaq.re - g).abs() <= 1e-12 * g && viaq.im.abs() <= 1e-12 * g);
        }
    }

    #[test]
    fn real_affine_matches_complex_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let qbar = random_complex(&mut rng, 4);
        let anchor = with_one(random_complex(&mut rng, 3));
        let m = sca_lower_bound(&qbar, &anchor);
        let a = m.real_affine();
        let v = with_one(random_complex(&mut rng, 3));
        assert!((a.eval(&to_real(&v)) - m.eval(&v)).abs() < 1e-12);
        assert_eq!(from_real(&to_real(&v)), v);
    }

    #[test]
    fn projection_conventions() {
        let e = Complex64::from_polar(0.5, PI / 3.0);
        let v = BeamVector::new(vec![e, Complex64::new(0.0, 0.0)], ModulusMode::RelaxedDisk).unwrap();
        let p = project_unit_modulus(&v);
        assert!((p.entries()[0] - Complex64::from_polar(1.0, PI / 3.0)).norm() < 1e-15);
        assert_eq!(p.entries()[1], Complex64::new(1.0, 0.0));
        let u = BeamVector::from_phases(&[0.1, -2.0]);
        assert_eq!(project_unit_modulus(&u).entries(), u.entries());
    }

    #[test]
    fn case3_phases_beat_random_vectors() {
        let p = SystemParams::reference(4, vec![[10.0, 1.0, 0.0], [11.0, 0.5, 0.0]]);
        let chan = generate_channels(&p, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for k in 0..2 {
            let v = case3_optimal_phases(&chan, k).unwrap();
            let g = equivalent_gain(&chan, &v, k).unwrap();
            let coherent = chan.h_direct()[k].norm()
                + chan.q_cascaded()[k].iter().map(|q| q.norm()).sum::<f64>();
            assert!((g - coherent * coherent).abs() <= 1e-12 * g);
            for _ in 0..10_000 {
                let r = random_beam(4, &mut rng);
                assert!(equivalent_gain(&chan, &r, k).unwrap() <= g * (1.0 + 1e-12));
            }
        }
    }

    fn single_device() -> (SystemParams, ChannelRealization) {
        let p = SystemParams::reference(1, vec![[10.0, 0.5, 0.0]]);
        let chan = generate_channels(&p, 4).unwrap();
        (p, chan)
    }

    fn offloading_alloc(p: &SystemParams, chan: &ChannelRealization, v: &BeamVector) -> ResourceAllocation {
        // A feasible allocation spending half the harvested energy on offloading.
        let g = equivalent_gain(chan, v, 0).unwrap();
        let tau0 = 0.6 * p.frame;
        let budget = p.eh_efficiency * p.hap_tx_power * tau0 * g;
        ResourceAllocation::tdma(tau0, vec![0.4 * p.frame], vec![0.5 * budget], vec![0.0]).unwrap()
    }

    #[test]
    fn single_element_converges_to_aligned_phase() {
        let (p, chan) = single_device();
        let v0 = BeamVector::from_phases(&[2.5]);
        let alloc = offloading_alloc(&p, &chan, &v0);
        let mut state = ScaState::new(&chan, &Beams::split(v0.clone(), v0), DibfCase::Case2).unwrap();
        let mut last: f64 = 0.0;
        for _ in 0..60 {
            let out = solve_bf_subproblem(&state, &alloc, &[0.0], &p, DibfCase::Case2, MultipleAccess::Tdma)
                .unwrap();
            assert!(out.objective_bits >= last - 1e-9 * last.abs());
            assert!(out.kkt_residual <= 1e-7);
            last = out.objective_bits;
            state = out.state;
        }
        let target = aligned_beam(&chan, 0).unwrap().phases()[0];
        let got = state.vbar1[0][0].arg();
        let diff = (got - target + PI).rem_euclid(2.0 * PI) - PI;
        assert!(diff.abs() < 1e-4, "phase {got} vs {target}");
        assert!(state.vbar1[0][0].norm() <= 1.0 + 1e-9);
    }

    #[test]
    fn optimal_anchor_is_a_fixed_point() {
        let (p, chan) = single_device();
        let v = aligned_beam(&chan, 0).unwrap();
        let alloc = offloading_alloc(&p, &chan, &v);
        let state = ScaState::new(&chan, &Beams::split(v.clone(), v), DibfCase::Case2).unwrap();
        let before = state.slack[0];
        let out = solve_bf_subproblem(&state, &alloc, &[1.0], &p, DibfCase::Case2, MultipleAccess::Tdma)
            .unwrap();
        assert!((out.state.slack[0] - before).abs() <= 1e-9 * before);
    }

    #[test]
    fn infeasible_anchor_is_rejected() {
        let (p, chan) = single_device();
        let v = BeamVector::from_phases(&[0.0]);
        let mut alloc = offloading_alloc(&p, &chan, &v);
        alloc.energy[0] *= 3.0;
        let state = ScaState::new(&chan, &Beams::shared(v), DibfCase::Case1).unwrap();
        let err = solve_bf_subproblem(&state, &alloc, &[0.0], &p, DibfCase::Case1, MultipleAccess::Tdma);
        assert!(matches!(err, Err(Error::InfeasibleAnchor(_))));
    }

    fn two_device_case1(seed: u64) -> (SystemParams, ChannelRealization, BeamVector, ResourceAllocation) {
        let p = SystemParams::reference(4, vec![[10.0, 1.0, 0.0], [9.5, -1.0, 0.0]]);
        let chan = generate_channels(&p, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = random_beam(4, &mut rng);
        let eta_p = p.eh_efficiency * p.hap_tx_power;
        let tau0 = 0.5;
        let mut e = Vec::new();
        let mut f = Vec::new();
        for k in 0..2 {
            let budget = eta_p * tau0 * equivalent_gain(&chan, &v, k).unwrap();
            e.push(0.5 * budget);
            f.push((0.5 * budget / (p.frame * p.cpu_energy_coeff)).cbrt());
        }
        let alloc = ResourceAllocation::tdma(tau0, vec![0.25, 0.25], e, f).unwrap();
        (p, chan, v, alloc)
    }

    #[test]
    fn case1_step_keeps_allocation_feasible_and_ascends() {
        for seed in 0..5 {
            let (p, chan, v, alloc) = two_device_case1(seed);
            let state = ScaState::new(&chan, &Beams::shared(v.clone()), DibfCase::Case1).unwrap();
            let before = crate::model::offload_rate_tdma(&p, &chan, &Beams::shared(v), &alloc, DibfCase::Case1)
                .unwrap();
            let out = solve_bf_subproblem(&state, &alloc, &[0.0; 2], &p, DibfCase::Case1, MultipleAccess::Tdma)
                .unwrap();
            let beams = out.state.beams().unwrap();
            let report = crate::model::check_feasibility(
                &p,
                &chan,
                &beams,
                &alloc,
                DibfCase::Case1,
                MultipleAccess::Tdma,
                None,
            )
            .unwrap();
            assert!(report.is_feasible(), "{:?}", report.violations);
            let after = crate::model::offload_rate_tdma(&p, &chan, &beams, &alloc, DibfCase::Case1).unwrap();
            assert!(after >= out.objective_bits * (1.0 - 1e-12));
            assert!(out.objective_bits >= before * (1.0 - 1e-9));
            assert!(out.kkt_residual <= 1e-7);
        }
    }

    #[test]
    fn energy_block_raises_weighted_harvest() {
        let (p, chan, v, alloc) = two_device_case1(11);
        let beams = Beams::per_slot(
            v.clone(),
            vec![case3_optimal_phases(&chan, 0).unwrap(), case3_optimal_phases(&chan, 1).unwrap()],
        );
        let state = ScaState::new(&chan, &beams, DibfCase::Case3).unwrap();
        let prices = [1.0, 2.0];
        let out = solve_bf_subproblem(&state, &alloc, &prices, &p, DibfCase::Case3, MultipleAccess::Tdma)
            .unwrap();
        assert!(out.improved);
        let w = |b: &Beams| -> f64 {
            (0..2).map(|k| prices[k] * equivalent_gain(&chan, &b.wpt, k).unwrap()).sum()
        };
        let new = out.state.beams().unwrap();
        assert!(w(&new) > w(&beams));
        for k in 0..2 {
            assert!(
                equivalent_gain(&chan, &new.wpt, k).unwrap()
                    >= equivalent_gain(&chan, &v, k).unwrap() * (1.0 - 1e-9)
            );
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn minorant_never_exceeds_form(
            q in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 3),
            a in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2),
            v in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2),
        ) {
            let c = |t: &Vec<(f64, f64)>| t.iter().map(|&(r, i)| Complex64::new(r, i)).collect::<Vec<_>>();
            let qbar = c(&q);
            let m = sca_lower_bound(&qbar, &with_one(c(&a)));
            let vb = with_one(c(&v));
            prop_assert!(m.eval(&vb) <= quadratic_form(&qbar, &vb) + 1e-12);
        }
    }
}
