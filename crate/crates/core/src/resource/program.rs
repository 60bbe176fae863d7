//! Scaled barrier formulation of the resource-allocation problem.
//!
//! Variables are `tau / T`, `e / E_s` and `f / F_s` with
//! `E_s = T eta P_E max_k h_k` and `T gamma_c F_s^3 = E_s`, so every energy
//! constraint reads `tau0 h_k - e_k - f_k^3 >= 0` with `h_k <= 1`. The
//! objective is divided by `B T + T F_s / C`.

use nalgebra::DVector;
use std::f64::consts::LN_2;

use super::RaProblem;
use crate::barrier::{ConcaveProgram, Local};
use crate::model::MultipleAccess;

#[derive(Debug, Clone, Copy)]
pub(super) enum Slot {
    Var(usize),
    Fixed(f64),
}

impl Slot {
    pub fn get(&self, x: &DVector<f64>) -> f64 {
        match *self {
            Slot::Var(i) => x[i],
            Slot::Fixed(v) => v,
        }
    }
}

/// One perspective term `tau ln(1 + sum_j a_j e_j / tau)`.
#[derive(Debug, Clone)]
pub(super) struct Block {
    pub tau: usize,
    pub terms: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Copy)]
enum Con {
    Energy(usize),
    Time,
    NonNeg(usize),
    Qos(usize),
}

/// Device-level scales and the variable layout.
#[derive(Debug, Clone)]
pub(super) struct Scaled {
    pub k: usize,
    pub e_scale: f64,
    /// `T eta P_E h_k / E_s`.
    pub h_hat: Vec<f64>,
    /// `g_k E_s / (sigma^2 T)`.
    pub a_hat: Vec<f64>,
    pub c_rate: f64,
    pub c_loc: f64,
    pub tau0: Slot,
    /// Time variable used by each device (shared for NOMA).
    pub tau: Vec<Option<usize>>,
    pub e: Vec<Option<usize>>,
    pub f: Vec<Slot>,
    pub blocks: Vec<Block>,
    pub qos_hat: Option<Vec<f64>>,
    pub dim: usize,
    cons: Vec<Con>,
}

/// Per-device role after eliminating trivial devices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum Role {
    /// No harvested energy at all.
    Dead,
    /// Computes locally only.
    LocalOnly,
    /// May offload.
    Offloader,
}

impl Scaled {
    pub fn build(p: &RaProblem<'_>, roles: &[Role]) -> Scaled {
        let sp = p.params;
        let k = roles.len();
        let t = sp.frame;
        let eta_p = sp.eh_efficiency * sp.hap_tx_power;
        let h_max = p
            .gains_wpt
            .iter()
            .cloned()
            .fold(0.0, f64::max);
        let e_scale = t * eta_p * h_max;
        let f_scale = (e_scale / (t * sp.cpu_energy_coeff)).cbrt();
        let obj_scale = sp.bandwidth * t + t * f_scale / sp.cycles_per_bit;
        let h_hat = p.gains_wpt.iter().map(|h| t * eta_p * h / e_scale).collect();
        let a_hat = p
            .gains_off
            .iter()
            .map(|g| g * e_scale / (sp.noise_power * t))
            .collect();
        let c_rate = sp.bandwidth * t / (obj_scale * LN_2);
        let c_loc = t * f_scale / (sp.cycles_per_bit * obj_scale);

        let mut dim = 0;
        let mut next = || {
            dim += 1;
            dim - 1
        };
        let tau0 = match p.fixed_tau0 {
            Some(v) => Slot::Fixed(v / t),
            None => Slot::Var(next()),
        };
        let any_off = roles.iter().any(|r| *r == Role::Offloader);
        let shared = if p.scheme == MultipleAccess::Noma && any_off {
            Some(next())
        } else {
            None
        };
        let mut tau = vec![None; k];
        let mut e = vec![None; k];
        let mut f = vec![Slot::Fixed(0.0); k];
        for d in 0..k {
            if roles[d] == Role::Offloader {
                tau[d] = Some(match shared {
                    Some(s) => s,
                    None => next(),
                });
                e[d] = Some(next());
            }
            f[d] = match (&p.fixed_f, roles[d]) {
                (Some(ff), _) => Slot::Fixed(ff[d] / f_scale),
                (None, Role::Dead) => Slot::Fixed(0.0),
                (None, _) => Slot::Var(next()),
            };
        }
        let blocks = match shared {
            Some(s) => vec![Block {
                tau: s,
                terms: (0..k)
                    .filter_map(|d| e[d].map(|i| (i, p.gains_off[d] * e_scale / (sp.noise_power * t))))
                    .collect(),
            }],
            None => (0..k)
                .filter_map(|d| {
                    Some(Block {
                        tau: tau[d]?,
                        terms: vec![(e[d]?, p.gains_off[d] * e_scale / (sp.noise_power * t))],
                    })
                })
                .collect(),
        };
        let qos_hat = p
            .qos_min_bits
            .as_ref()
            .map(|q| q.iter().map(|r| r / obj_scale).collect());

        let mut s = Scaled {
            k,
            e_scale,
            h_hat,
            a_hat,
            c_rate,
            c_loc,
            tau0,
            tau,
            e,
            f,
            blocks,
            qos_hat,
            dim,
            cons: Vec::new(),
        };
        let mut cons = Vec::new();
        for d in 0..k {
            let has_var = matches!(s.tau0, Slot::Var(_))
                || s.e[d].is_some()
                || matches!(s.f[d], Slot::Var(_));
            if roles[d] != Role::Dead && has_var {
                cons.push(Con::Energy(d));
            }
        }
        if !s.blocks.is_empty() || matches!(s.tau0, Slot::Var(_)) {
            cons.push(Con::Time);
        }
        for i in 0..dim {
            cons.push(Con::NonNeg(i));
        }
        if let Some(q) = &s.qos_hat {
            for (d, &r) in q.iter().enumerate() {
                if r > 0.0 {
                    cons.push(Con::Qos(d));
                }
            }
        }
        s.cons = cons;
        s
    }

    /// Indices of the QoS constraints (for the feasibility phase).
    pub fn qos_constraints(&self) -> Vec<usize> {
        self.cons
            .iter()
            .enumerate()
            .filter(|(_, c)| matches!(c, Con::Qos(_)))
            .map(|(i, _)| i)
            .collect()
    }

    /// Sum of time variables (each shared slot counted once).
    fn time_used(&self, x: &DVector<f64>) -> f64 {
        self.tau0.get(x) + self.blocks.iter().map(|b| x[b.tau]).sum::<f64>()
    }

    fn block_value(&self, b: &Block, x: &DVector<f64>) -> f64 {
        let tau = x[b.tau];
        let load: f64 = b.terms.iter().map(|&(i, a)| a * x[i]).sum();
        tau * (load / tau).ln_1p()
    }

    /// Adds `w * phi_b` derivatives into `l`.
    fn block_local(&self, b: &Block, x: &DVector<f64>, w: f64, l: &mut Local) {
        let tau = x[b.tau];
        let load: f64 = b.terms.iter().map(|&(i, a)| a * x[i]).sum();
        let s = load / tau;
        let u = 1.0 + s;
        l.value += w * tau * s.ln_1p();
        for &(i, a) in &b.terms {
            l.grad[i] += w * a / u;
        }
        l.grad[b.tau] += w * (s.ln_1p() - s / u);
        let c = -w / (tau * u * u);
        let mut dir: Vec<(usize, f64)> = b.terms.clone();
        dir.push((b.tau, -s));
        for &(i, wi) in &dir {
            for &(j, wj) in &dir {
                l.hess[(i, j)] += c * wi * wj;
            }
        }
    }

    fn local_bits(&self, d: usize, x: &DVector<f64>) -> f64 {
        self.c_loc * self.f[d].get(x)
    }

    fn qos_value(&self, d: usize, x: &DVector<f64>) -> f64 {
        let mut v = self.local_bits(d, x) - self.qos_hat.as_ref().map_or(0.0, |q| q[d]);
        if let Some(b) = self.device_block(d) {
            v += self.c_rate * self.block_value(b, x);
        }
        v
    }

    fn device_block(&self, d: usize) -> Option<&Block> {
        let e = self.e[d]?;
        self.blocks.iter().find(|b| b.terms.iter().any(|&(i, _)| i == e))
    }

    fn energy_value(&self, d: usize, x: &DVector<f64>) -> f64 {
        let f = self.f[d].get(x);
        let e = self.e[d].map_or(0.0, |i| x[i]);
        self.tau0.get(x) * self.h_hat[d] - e - f * f * f
    }
}

impl ConcaveProgram for Scaled {
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_constraints(&self) -> usize {
        self.cons.len()
    }

    fn objective(&self, x: &DVector<f64>) -> f64 {
        let rate: f64 = self.blocks.iter().map(|b| self.block_value(b, x)).sum();
        let local: f64 = (0..self.k).map(|d| self.local_bits(d, x)).sum();
        self.c_rate * rate + local
    }

    fn objective_local(&self, x: &DVector<f64>) -> Local {
        let mut l = Local::zeros(self.dim);
        for b in &self.blocks {
            self.block_local(b, x, self.c_rate, &mut l);
        }
        for d in 0..self.k {
            if let Slot::Var(i) = self.f[d] {
                l.grad[i] += self.c_loc;
                l.value += self.c_loc * x[i];
            } else {
                l.value += self.local_bits(d, x);
            }
        }
        l
    }

    fn constraint(&self, i: usize, x: &DVector<f64>) -> f64 {
        match self.cons[i] {
            Con::Energy(d) => self.energy_value(d, x),
            Con::Time => 1.0 - self.time_used(x),
            Con::NonNeg(j) => x[j],
            Con::Qos(d) => self.qos_value(d, x),
        }
    }

    fn constraint_local(&self, i: usize, x: &DVector<f64>) -> Local {
        let mut l = Local::zeros(self.dim);
        match self.cons[i] {
            Con::Energy(d) => {
                l.value = self.energy_value(d, x);
                if let Slot::Var(j) = self.tau0 {
                    l.grad[j] = self.h_hat[d];
                }
                if let Some(j) = self.e[d] {
                    l.grad[j] = -1.0;
                }
                if let Slot::Var(j) = self.f[d] {
                    l.grad[j] = -3.0 * x[j] * x[j];
                    l.hess[(j, j)] = -6.0 * x[j];
                }
            }
            Con::Time => {
                l.value = 1.0 - self.time_used(x);
                if let Slot::Var(j) = self.tau0 {
                    l.grad[j] = -1.0;
                }
                for b in &self.blocks {
                    l.grad[b.tau] = -1.0;
                }
            }
            Con::NonNeg(j) => {
                l.value = x[j];
                l.grad[j] = 1.0;
            }
            Con::Qos(d) => {
                if let Some(b) = self.device_block(d) {
                    self.block_local(b, x, self.c_rate, &mut l);
                }
                if let Slot::Var(j) = self.f[d] {
                    l.grad[j] += self.c_loc;
                }
                l.value = self.qos_value(d, x);
            }
        }
        l
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SystemParams;

    /// Central finite differences of value and gradient.
    fn check_derivatives(s: &Scaled, x: &DVector<f64>) {
        let h = 1e-6;
        let check = |val: &dyn Fn(&DVector<f64>) -> f64, loc: Local| {
            assert!((loc.value - val(x)).abs() < 1e-12);
            for i in 0..s.dim {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (val(&xp) - val(&xm)) / (2.0 * h);
                assert!((fd - loc.grad[i]).abs() < 1e-6, "grad {i}: {fd} vs {}", loc.grad[i]);
            }
        };
        check(&|y| s.objective(y), s.objective_local(x));
        for c in 0..s.num_constraints() {
            check(&|y| s.constraint(c, y), s.constraint_local(c, x));
        }
        // Hessian via differences of analytic gradients.
        let l0 = s.objective_local(x);
        for j in 0..s.dim {
            let mut xp = x.clone();
            xp[j] += h;
            let lp = s.objective_local(&xp);
            for i in 0..s.dim {
                let fd = (lp.grad[i] - l0.grad[i]) / h;
                assert!((fd - l0.hess[(i, j)]).abs() < 1e-4 * (1.0 + fd.abs()), "hess {i},{j}");
            }
        }
    }

    fn problem() -> (SystemParams, Vec<f64>, Vec<f64>) {
        let p = SystemParams::reference(0, vec![[10.0, 0.0, 0.0]; 3]);
        (p, vec![1e-6, 2e-6, 5e-7], vec![1e-6, 3e-7, 2e-6])
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for ma in [MultipleAccess::Tdma, MultipleAccess::Noma] {
            let (p, hw, go) = problem();
            let mut prob = RaProblem::new(&p, hw, go, ma);
            prob.qos_min_bits = Some(vec![1e3, 0.0, 2e3]);
            let s = Scaled::build(&prob, &[Role::Offloader; 3]);
            let x = DVector::from_fn(s.dim, |i, _| 0.05 + 0.01 * i as f64);
            check_derivatives(&s, &x);
        }
    }
}
