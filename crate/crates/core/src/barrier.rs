//! Log-barrier Newton method for small smooth concave programs
//! `max f(x) s.t. g_i(x) >= 0` with concave `f` and `g_i`.
//!
//! Dense Hessians, Cholesky with a growing diagonal shift when the barrier
//! Hessian is numerically singular, and a backtracking line search that keeps
//! every iterate strictly inside the feasible set.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Value, gradient and Hessian of one smooth function at a point.
pub(crate) struct Local {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

impl Local {
    pub fn zeros(n: usize) -> Self {
        Local {
            value: 0.0,
            grad: DVector::zeros(n),
            hess: DMatrix::zeros(n, n),
        }
    }
}

pub(crate) trait ConcaveProgram {
    fn dim(&self) -> usize;
    fn num_constraints(&self) -> usize;
    /// Objective value only.
    fn objective(&self, x: &DVector<f64>) -> f64;
    fn objective_local(&self, x: &DVector<f64>) -> Local;
    /// Value of constraint `i`; must be > 0 strictly inside the feasible set.
    fn constraint(&self, i: usize, x: &DVector<f64>) -> f64;
    fn constraint_local(&self, i: usize, x: &DVector<f64>) -> Local;
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BarrierOptions {
    /// Stop once the duality-gap bound `m / t` falls below this.
    pub gap_tol: f64,
    /// Barrier parameter growth factor.
    pub growth: f64,
    /// Centering stops when half the squared Newton decrement is below this.
    pub newton_tol: f64,
    pub max_newton: usize,
    /// Optional early exit once the objective exceeds this value.
    pub stop_above: Option<f64>,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        BarrierOptions {
            gap_tol: 1e-11,
            growth: 10.0,
            newton_tol: 1e-12,
            max_newton: 200,
            stop_above: None,
        }
    }
}

pub(crate) struct BarrierResult {
    pub x: DVector<f64>,
    pub objective: f64,
    /// Final barrier parameter.
    pub t: f64,
    pub newton_steps: usize,
}

fn strictly_feasible<P: ConcaveProgram>(p: &P, x: &DVector<f64>) -> bool {
    x.iter().all(|v| v.is_finite()) && (0..p.num_constraints()).all(|i| p.constraint(i, x) > 0.0)
}

fn barrier_value<P: ConcaveProgram>(p: &P, x: &DVector<f64>, t: f64) -> f64 {
    let mut v = t * p.objective(x);
    for i in 0..p.num_constraints() {
        let g = p.constraint(i, x);
        if g <= 0.0 {
            return f64::NEG_INFINITY;
        }
        v += g.ln();
    }
    v
}

/// Newton step on `t f + sum ln g_i`; returns `(step, decrement^2)`.
fn newton_step<P: ConcaveProgram>(p: &P, x: &DVector<f64>, t: f64) -> Result<(DVector<f64>, f64)> {
    let n = p.dim();
    let obj = p.objective_local(x);
    let mut grad = obj.grad * t;
    // Negated Hessian, positive (semi)definite.
    let mut m = obj.hess * (-t);
    for i in 0..p.num_constraints() {
        let c = p.constraint_local(i, x);
        let inv = 1.0 / c.value;
        grad.axpy(inv, &c.grad, 1.0);
        m -= c.hess * inv;
        m.ger(inv * inv, &c.grad, &c.grad, 1.0);
    }
    let scale = (0..n).map(|i| m[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut shift = 0.0;
    for _ in 0..30 {
        let mut shifted = m.clone();
        for i in 0..n {
            shifted[(i, i)] += shift;
        }
        if let Some(ch) = shifted.cholesky() {
            let dx = ch.solve(&grad);
            let dec = grad.dot(&dx);
            if dec.is_finite() {
                return Ok((dx, dec.max(0.0)));
            }
        }
        shift = if shift == 0.0 { 1e-14 * scale } else { shift * 100.0 };
    }
    Err(Error::Numerical("barrier Hessian could not be factored".into()))
}

/// Maximizes `p` from the strictly feasible point `x0`.
pub(crate) fn maximize<P: ConcaveProgram>(
    p: &P,
    x0: DVector<f64>,
    opts: &BarrierOptions,
) -> Result<BarrierResult> {
    if !strictly_feasible(p, &x0) {
        return Err(Error::Numerical("barrier start point is not strictly feasible".into()));
    }
    let m = p.num_constraints().max(1) as f64;
    let mut x = x0;
    let mut t = 1.0;
    let mut steps = 0;
    loop {
        // Centering.
        for _ in 0..opts.max_newton {
            let (dx, dec) = newton_step(p, &x, t)?;
            if dec / 2.0 <= opts.newton_tol {
                break;
            }
            let f0 = barrier_value(p, &x, t);
            let mut alpha = 1.0;
            let mut accepted = false;
            while alpha > 1e-16 {
                let trial = &x + &dx * alpha;
                if strictly_feasible(p, &trial) {
                    let f1 = barrier_value(p, &trial, t);
                    // Near convergence the barrier value is dominated by
                    // roundoff; full Newton steps are taken on trust.
                    let roundoff = 8.0 * f64::EPSILON * f0.abs().max(1.0);
                    if f1 >= f0 + 0.01 * alpha * dec || (dec < 1e-6 && f1 >= f0 - roundoff) {
                        x = trial;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            steps += 1;
            if !accepted {
                break;
            }
        }
        if let Some(stop) = opts.stop_above {
            if p.objective(&x) > stop {
                break;
            }
        }
        if m / t < opts.gap_tol {
            break;
        }
        t *= opts.growth;
    }
    Ok(BarrierResult {
        objective: p.objective(&x),
        x,
        t,
        newton_steps: steps,
    })
}

/// Feasibility problem for a subset `hard` of the constraints of `inner`:
/// maximize `s` subject to the remaining constraints of `inner`,
/// `g_j(x) - s >= 0` for `j` in `hard`, and `s <= cap`. The last coordinate is
/// `s`.
pub(crate) struct Phase1<'a, P> {
    pub inner: &'a P,
    pub hard: Vec<usize>,
    pub cap: f64,
}

impl<P: ConcaveProgram> Phase1<'_, P> {
    /// Start point `(x0, min_j g_j(x0) - 1)`.
    pub fn start(&self, x0: &DVector<f64>) -> DVector<f64> {
        let worst = self
            .hard
            .iter()
            .map(|&j| self.inner.constraint(j, x0))
            .fold(f64::INFINITY, f64::min);
        let s0 = worst.min(self.cap) - 1.0;
        let mut z = x0.clone().resize_vertically(x0.len() + 1, 0.0);
        z[x0.len()] = s0;
        z
    }

    fn split(&self, z: &DVector<f64>) -> (DVector<f64>, f64) {
        let n = self.inner.dim();
        (z.rows(0, n).into_owned(), z[n])
    }

    fn embed(&self, l: Local, with_s: f64) -> Local {
        let n = self.inner.dim();
        let mut out = Local::zeros(n + 1);
        out.value = l.value;
        out.grad.rows_mut(0, n).copy_from(&l.grad);
        out.grad[n] = with_s;
        out.hess.view_mut((0, 0), (n, n)).copy_from(&l.hess);
        out
    }
}

impl<P: ConcaveProgram> ConcaveProgram for Phase1<'_, P> {
    fn dim(&self) -> usize {
        self.inner.dim() + 1
    }
    fn num_constraints(&self) -> usize {
        self.inner.num_constraints() + 1
    }
    fn objective(&self, z: &DVector<f64>) -> f64 {
        z[self.inner.dim()]
    }
    fn objective_local(&self, z: &DVector<f64>) -> Local {
        let mut l = Local::zeros(self.dim());
        l.value = self.objective(z);
        l.grad[self.inner.dim()] = 1.0;
        l
    }
    fn constraint(&self, i: usize, z: &DVector<f64>) -> f64 {
        let (x, s) = self.split(z);
        if i == self.inner.num_constraints() {
            return self.cap - s;
        }
        let g = self.inner.constraint(i, &x);
        if self.hard.contains(&i) {
            g - s
        } else {
            g
        }
    }
    fn constraint_local(&self, i: usize, z: &DVector<f64>) -> Local {
        let (x, s) = self.split(z);
        if i == self.inner.num_constraints() {
            let mut l = Local::zeros(self.dim());
            l.value = self.cap - s;
            l.grad[self.inner.dim()] = -1.0;
            return l;
        }
        let l = self.inner.constraint_local(i, &x);
        if self.hard.contains(&i) {
            let mut out = self.embed(l, -1.0);
            out.value -= s;
            out
        } else {
            self.embed(l, 0.0)
        }
    }
}

/// Runs [`Phase1`] and returns a point strictly satisfying every constraint
/// of `inner`, or `None` when the best margin found is not positive.
pub(crate) fn find_interior<P: ConcaveProgram>(
    inner: &P,
    hard: Vec<usize>,
    x0: &DVector<f64>,
) -> Result<Option<DVector<f64>>> {
    if hard.iter().all(|&j| inner.constraint(j, x0) > 0.0) {
        return Ok(Some(x0.clone()));
    }
    let p1 = Phase1 { inner, hard, cap: 1.0 };
    let z0 = p1.start(x0);
    let opts = BarrierOptions {
        gap_tol: 1e-10,
        stop_above: Some(0.0),
        ..BarrierOptions::default()
    };
    let r = maximize(&p1, z0, &opts)?;
    let (x, s) = p1.split(&r.x);
    if s > 0.0 && strictly_feasible(inner, &x) {
        Ok(Some(x))
    } else {
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// max sum_i w_i ln(x_i) s.t. 1 - sum x_i >= 0, x_i >= 0: optimum
    /// `x_i = w_i / sum w`.
    struct LogUtility {
        w: Vec<f64>,
    }

    impl ConcaveProgram for LogUtility {
        fn dim(&self) -> usize {
            self.w.len()
        }
        fn num_constraints(&self) -> usize {
            self.w.len() + 1
        }
        fn objective(&self, x: &DVector<f64>) -> f64 {
            self.w.iter().zip(x.iter()).map(|(w, x)| w * x.ln()).sum()
        }
        fn objective_local(&self, x: &DVector<f64>) -> Local {
            let mut l = Local::zeros(self.dim());
            l.value = self.objective(x);
            for i in 0..self.dim() {
                l.grad[i] = self.w[i] / x[i];
                l.hess[(i, i)] = -self.w[i] / (x[i] * x[i]);
            }
            l
        }
        fn constraint(&self, i: usize, x: &DVector<f64>) -> f64 {
            if i < self.dim() {
                x[i]
            } else {
                1.0 - x.sum()
            }
        }
        fn constraint_local(&self, i: usize, x: &DVector<f64>) -> Local {
            let mut l = Local::zeros(self.dim());
            l.value = self.constraint(i, x);
            if i < self.dim() {
                l.grad[i] = 1.0;
            } else {
                l.grad.fill(-1.0);
            }
            l
        }
    }

    #[test]
    fn solves_weighted_log_utility() {
        let p = LogUtility { w: vec![1.0, 2.0, 5.0] };
        let r = maximize(&p, DVector::from_element(3, 0.1), &BarrierOptions::default()).unwrap();
        for (i, w) in [1.0, 2.0, 5.0].iter().enumerate() {
            assert!((r.x[i] - w / 8.0).abs() < 1e-9, "{}", r.x[i]);
        }
        // The budget multiplier equals sum w; the slack is ~1e-13, so its
        // reciprocal only carries a few digits.
        let dual = 1.0 / (r.t * p.constraint(3, &r.x));
        assert!((dual - 8.0).abs() < 1e-2, "{dual}");
    }

    #[test]
    fn phase1_finds_interior_or_reports_empty() {
        // Add x_0 >= 0.9 as a hard constraint through a wrapper.
        struct WithFloor(LogUtility, f64);
        impl ConcaveProgram for WithFloor {
            fn dim(&self) -> usize {
                self.0.dim()
            }
            fn num_constraints(&self) -> usize {
                self.0.num_constraints() + 1
            }
            fn objective(&self, x: &DVector<f64>) -> f64 {
                self.0.objective(x)
            }
            fn objective_local(&self, x: &DVector<f64>) -> Local {
                self.0.objective_local(x)
            }
            fn constraint(&self, i: usize, x: &DVector<f64>) -> f64 {
                if i < self.0.num_constraints() {
                    self.0.constraint(i, x)
                } else {
                    x[0] - self.1
                }
            }
            fn constraint_local(&self, i: usize, x: &DVector<f64>) -> Local {
                if i < self.0.num_constraints() {
                    return self.0.constraint_local(i, x);
                }
                let mut l = Local::zeros(self.dim());
                l.value = x[0] - self.1;
                l.grad[0] = 1.0;
                l
            }
        }
        let p = WithFloor(LogUtility { w: vec![1.0, 1.0] }, 0.9);
        let x0 = DVector::from_element(2, 0.1);
        let x = find_interior(&p, vec![3], &x0).unwrap().unwrap();
        assert!(x[0] > 0.9 && x[0] + x[1] < 1.0);
        let r = maximize(&p, x, &BarrierOptions::default()).unwrap();
        assert!((r.x[0] - 0.9).abs() < 1e-9);
        let empty = WithFloor(LogUtility { w: vec![1.0, 1.0] }, 1.2);
        assert!(find_interior(&empty, vec![3], &x0).unwrap().is_none());
    }

    #[test]
    fn rejects_infeasible_start() {
        let p = LogUtility { w: vec![1.0] };
        assert!(maximize(&p, DVector::from_element(1, 2.0), &BarrierOptions::default()).is_err());
    }
}
