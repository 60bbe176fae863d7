//! Newton refinement on the active set identified by the barrier method.
//!
//! With the offloading set fixed, every energy constraint tight and the time
//! budget closed, the CPU frequencies (or, when they are pinned, the
//! offloading energies) and `tau0` are affine functions of the remaining
//! variables. The reduced objective is smooth and concave, so a few Newton
//! steps reach machine precision where the barrier path stalls on roundoff.

use nalgebra::{DMatrix, DVector};

use super::program::{Scaled, Slot};

/// A scaled allocation: per-device slot time and energy.
#[derive(Debug, Clone)]
pub(super) struct Point {
    pub tau: Vec<f64>,
    pub e: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Affine {
    c: f64,
    g: DVector<f64>,
}

impl Affine {
    fn constant(c: f64, m: usize) -> Self {
        Affine {
            c,
            g: DVector::zeros(m),
        }
    }
    fn var(i: usize, m: usize) -> Self {
        let mut g = DVector::zeros(m);
        g[i] = 1.0;
        Affine { c: 0.0, g }
    }
    fn eval(&self, z: &DVector<f64>) -> f64 {
        self.c + self.g.dot(z)
    }
    fn add_scaled(&mut self, other: &Affine, s: f64) {
        self.c += s * other.c;
        self.g.axpy(s, &other.g, 1.0);
    }
}

struct Reduced {
    m: usize,
    c_rate: f64,
    c_loc: f64,
    /// Per perspective block: slot time and load.
    blocks: Vec<(Affine, Affine)>,
    /// Cube-root arguments of devices with free frequency.
    cubes: Vec<Affine>,
    tau0: Affine,
    tau_dev: Vec<Option<Affine>>,
    e_dev: Vec<Affine>,
    /// Row of the time equality when `tau0` is pinned.
    equality: Option<DVector<f64>>,
}

impl Reduced {
    fn value(&self, z: &DVector<f64>) -> Option<f64> {
        let mut v = 0.0;
        for (t, l) in &self.blocks {
            let t = t.eval(z);
            let l = l.eval(z);
            if !(t > 0.0) || l < 0.0 {
                return None;
            }
            v += self.c_rate * t * (l / t).ln_1p();
        }
        for u in &self.cubes {
            let u = u.eval(z);
            if !(u > 0.0) {
                return None;
            }
            v += self.c_loc * u.cbrt();
        }
        if self.tau0.eval(z) < 0.0 || self.e_dev.iter().any(|e| e.eval(z) < 0.0) {
            return None;
        }
        Some(v)
    }

    fn derivatives(&self, z: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let mut g = DVector::zeros(self.m);
        let mut h = DMatrix::zeros(self.m, self.m);
        for (ta, la) in &self.blocks {
            let t = ta.eval(z);
            let s = la.eval(z) / t;
            let u = 1.0 + s;
            g.axpy(self.c_rate / u, &la.g, 1.0);
            g.axpy(self.c_rate * (s.ln_1p() - s / u), &ta.g, 1.0);
            let w = &la.g - &ta.g * s;
            h.ger(-self.c_rate / (t * u * u), &w, &w, 1.0);
        }
        for ua in &self.cubes {
            let u = ua.eval(z);
            g.axpy(self.c_loc / 3.0 * u.powf(-2.0 / 3.0), &ua.g, 1.0);
            h.ger(-2.0 * self.c_loc / 9.0 * u.powf(-5.0 / 3.0), &ua.g, &ua.g, 1.0);
        }
        (g, h)
    }
}

/// Refines `start` keeping the devices with `start.tau[d] > 0` as the
/// offloading set. Returns `None` when Newton leaves the region where that
/// set is consistent.
pub(super) fn refine(prog: &Scaled, start: &Point, noma: bool) -> Option<Point> {
    let k = prog.k;
    let active: Vec<bool> = (0..k).map(|d| start.tau[d] > 0.0 && start.e[d] > 0.0).collect();
    if !active.iter().any(|a| *a) {
        return None;
    }
    let f_free: Vec<bool> = prog.f.iter().map(|s| matches!(s, Slot::Var(_))).collect();
    let pinned_tau0 = match prog.tau0 {
        Slot::Fixed(v) => Some(v),
        Slot::Var(_) => None,
    };

    // Variable layout: slot times, then free energies.
    let mut idx = 0;
    let mut tau_var: Vec<Option<usize>> = vec![None; k];
    let shared = if noma {
        idx += 1;
        Some(0)
    } else {
        None
    };
    for d in 0..k {
        if active[d] {
            tau_var[d] = Some(match shared {
                Some(s) => s,
                None => {
                    idx += 1;
                    idx - 1
                }
            });
        }
    }
    let n_tau = idx;
    let mut e_var: Vec<Option<usize>> = vec![None; k];
    for d in 0..k {
        if active[d] && f_free[d] {
            e_var[d] = Some(idx);
            idx += 1;
        }
    }
    let m = idx;

    let tau0 = match pinned_tau0 {
        Some(v) => Affine::constant(v, m),
        None => {
            let mut a = Affine::constant(1.0, m);
            for i in 0..n_tau {
                a.g[i] = -1.0;
            }
            a
        }
    };
    let equality = pinned_tau0.map(|_| DVector::from_fn(m, |i, _| if i < n_tau { 1.0 } else { 0.0 }));
    let mut e_dev = Vec::with_capacity(k);
    let mut cubes = Vec::new();
    for d in 0..k {
        let e = match (active[d], e_var[d]) {
            (false, _) => Affine::constant(0.0, m),
            (true, Some(i)) => Affine::var(i, m),
            (true, None) => {
                let f = prog.f[d].get(&DVector::zeros(0));
                let mut a = Affine::constant(-f * f * f, m);
                a.add_scaled(&tau0, prog.h_hat[d]);
                a
            }
        };
        if f_free[d] && prog.h_hat[d] > 0.0 {
            let mut u = Affine::constant(0.0, m);
            u.add_scaled(&tau0, prog.h_hat[d]);
            u.add_scaled(&e, -1.0);
            cubes.push(u);
        }
        e_dev.push(e);
    }
    let tau_dev: Vec<Option<Affine>> = tau_var.iter().map(|v| v.map(|i| Affine::var(i, m))).collect();
    let mut blocks = Vec::new();
    if let Some(s) = shared {
        let mut load = Affine::constant(0.0, m);
        for d in 0..k {
            if active[d] {
                load.add_scaled(&e_dev[d], prog.a_hat[d]);
            }
        }
        blocks.push((Affine::var(s, m), load));
    } else {
        for d in 0..k {
            if let Some(i) = tau_var[d] {
                let mut load = Affine::constant(0.0, m);
                load.add_scaled(&e_dev[d], prog.a_hat[d]);
                blocks.push((Affine::var(i, m), load));
            }
        }
    }
    let red = Reduced {
        m,
        c_rate: prog.c_rate,
        c_loc: prog.c_loc,
        blocks,
        cubes,
        tau0,
        tau_dev,
        e_dev,
        equality,
    };

    let mut z = DVector::zeros(m);
    for d in 0..k {
        if let Some(i) = tau_var[d] {
            z[i] = start.tau[d];
        }
        if let Some(i) = e_var[d] {
            z[i] = start.e[d];
        }
    }
    if let Some(t0) = pinned_tau0 {
        let used: f64 = (0..n_tau).map(|i| z[i]).sum();
        for i in 0..n_tau {
            z[i] *= (1.0 - t0) / used;
        }
    }
    let mut f0 = red.value(&z)?;
    for _ in 0..60 {
        let (g, h) = red.derivatives(&z);
        let dz = newton_direction(&g, &h, red.equality.as_ref())?;
        let dec = g.dot(&dz);
        if !(dec > 1e-30) {
            break;
        }
        let mut alpha = 1.0;
        let mut moved = false;
        while alpha > 1e-12 {
            let trial = &z + &dz * alpha;
            if let Some(f1) = red.value(&trial) {
                if f1 >= f0 + 1e-4 * alpha * dec || (dec < 1e-20 && f1 >= f0) {
                    z = trial;
                    f0 = f1;
                    moved = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let tau: Vec<f64> = red
        .tau_dev
        .iter()
        .map(|t| t.as_ref().map_or(0.0, |a| a.eval(&z)))
        .collect();
    let e: Vec<f64> = red.e_dev.iter().map(|a| a.eval(&z)).collect();
    Some(Point {
        tau,
        e,
    })
}

fn newton_direction(
    g: &DVector<f64>,
    h: &DMatrix<f64>,
    eq: Option<&DVector<f64>>,
) -> Option<DVector<f64>> {
    let m = g.len();
    match eq {
        None => {
            let neg = -h;
            if let Some(ch) = neg.clone().cholesky() {
                return Some(ch.solve(g));
            }
            neg.lu().solve(g)
        }
        Some(a) => {
            let mut kkt = DMatrix::zeros(m + 1, m + 1);
            kkt.view_mut((0, 0), (m, m)).copy_from(&(-h));
            for i in 0..m {
                kkt[(i, m)] = a[i];
                kkt[(m, i)] = a[i];
            }
            let mut rhs = DVector::zeros(m + 1);
            rhs.rows_mut(0, m).copy_from(g);
            let sol = kkt.lu().solve(&rhs)?;
            Some(sol.rows(0, m).into_owned())
        }
    }
}
