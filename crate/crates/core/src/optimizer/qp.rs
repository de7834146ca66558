//! Dense strictly convex QP via the Goldfarb–Idnani dual active-set method.
//!
//! ```text
//!     minimize    cᵀx + ½ xᵀHx
//!     subject to  a_iᵀx ≥ b_i,   i = 1..m
//! ```
//!
//! `H` must be symmetric positive definite. The method starts from the
//! unconstrained minimizer and adds the most violated constraint at each
//! step, keeping the factorization `Jᵀ N = [R; 0]` of the active normals
//! `N` with `J = L^{-T} Q` and `H = L Lᵀ`.

use crate::error::{Error, Result};

pub struct QpSolution {
    pub x: Vec<f64>,
    /// One multiplier per constraint, zero for inactive ones.
    pub multipliers: Vec<f64>,
    /// Active constraints in the order they entered the factorization.
    pub active: Vec<usize>,
    pub iterations: usize,
    factors: Factors,
}

impl QpSolution {
    /// Smallest step in the `H`-norm with `a_iᵀδ = shift_i` on every active
    /// constraint `i`; `shift` is indexed by constraint.
    pub fn active_correction(&self, shift: &[f64]) -> Vec<f64> {
        let fac = &self.factors;
        let (n, q) = (fac.n, fac.q);
        // Rᵀ w = shift_W by forward substitution, then δ = J_1 w
        let mut w = vec![0.0; q];
        for row in 0..q {
            let mut sum = shift[self.active[row]];
            for k in 0..row {
                sum -= fac.r[row * n + k] * w[k];
            }
            w[row] = sum / fac.r[row * n + row];
        }
        let mut delta = vec![0.0; n];
        for (c, &wc) in w.iter().enumerate() {
            for (di, ji) in delta.iter_mut().zip(fac.col(c)) {
                *di += wc * ji;
            }
        }
        delta
    }
}

impl std::fmt::Debug for QpSolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("QpSolution")
            .field("x", &self.x)
            .field("multipliers", &self.multipliers)
            .field("active", &self.active)
            .field("iterations", &self.iterations)
            .finish()
    }
}

/// Row-major dense problem data.
#[derive(Debug, Clone, Copy)]
pub struct QpProblem<'a> {
    pub n: usize,
    pub h: &'a [f64],
    pub c: &'a [f64],
    /// `m × n`, one constraint normal per row.
    pub a: &'a [f64],
    pub b: &'a [f64],
}

impl QpProblem<'_> {
    pub fn constraints(&self) -> usize {
        self.b.len()
    }

    fn normal(&self, i: usize) -> &[f64] {
        &self.a[i * self.n..(i + 1) * self.n]
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Lower Cholesky factor of the row-major `n × n` matrix `h`.
fn cholesky(n: usize, h: &[f64]) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = h[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(sum > 0.0) {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Column-major `n × n` working matrix `J` and triangular `R`.
struct Factors {
    n: usize,
    /// `j[col * n + row]`
    j: Vec<f64>,
    /// `r[col * n + row]`, upper triangular in the leading `q × q` block.
    r: Vec<f64>,
    q: usize,
}

impl Factors {
    fn new(n: usize, l: &[f64]) -> Self {
        // J = L^{-T}: upper triangular; solve Lᵀ J = I column by column
        let mut j = vec![0.0; n * n];
        for col in 0..n {
            for row in (0..=col).rev() {
                let mut sum = if row == col { 1.0 } else { 0.0 };
                for k in row + 1..=col {
                    sum -= l[k * n + row] * j[col * n + k];
                }
                j[col * n + row] = sum / l[row * n + row];
            }
        }
        Self {
            n,
            j,
            r: vec![0.0; n * n],
            q: 0,
        }
    }

    fn col(&self, c: usize) -> &[f64] {
        &self.j[c * self.n..(c + 1) * self.n]
    }

    /// `Jᵀ v`.
    fn jt_times(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n).map(|c| dot(self.col(c), v)).collect()
    }

    /// `Jᵀ v` for a sparse `v`.
    fn jt_times_sparse(&self, v: &[(usize, f64)]) -> Vec<f64> {
        (0..self.n)
            .map(|c| {
                let col = self.col(c);
                v.iter().map(|&(i, a)| col[i] * a).sum()
            })
            .collect()
    }

    /// Rotates columns `c1 < c2` of `J` by the Givens pair `(cos, sin)`.
    fn rotate_j(&mut self, c1: usize, c2: usize, cos: f64, sin: f64) {
        let n = self.n;
        for row in 0..n {
            let (a, b) = (self.j[c1 * n + row], self.j[c2 * n + row]);
            self.j[c1 * n + row] = cos * a + sin * b;
            self.j[c2 * n + row] = -sin * a + cos * b;
        }
    }

    /// Appends a normal whose transformed image is `d = Jᵀ a`.
    fn add(&mut self, mut d: Vec<f64>) -> bool {
        let n = self.n;
        let q = self.q;
        for k in (q + 1..n).rev() {
            let (a, b) = (d[k - 1], d[k]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (cos, sin) = (a / h, b / h);
            d[k - 1] = h;
            d[k] = 0.0;
            self.rotate_j(k - 1, k, cos, sin);
        }
        if d[q].abs() <= f64::EPSILON * d.iter().fold(0.0f64, |m, v| m.max(v.abs())) {
            // linearly dependent on the active set
            return false;
        }
        for row in 0..=q {
            self.r[q * n + row] = d[row];
        }
        self.q += 1;
        true
    }

    /// Removes the active constraint at position `pos` and re-triangularizes.
    fn drop(&mut self, pos: usize) {
        let n = self.n;
        let q = self.q;
        for col in pos..q - 1 {
            for row in 0..n {
                self.r[col * n + row] = self.r[(col + 1) * n + row];
            }
        }
        for row in 0..n {
            self.r[(q - 1) * n + row] = 0.0;
        }
        for k in pos..q - 1 {
            let (a, b) = (self.r[k * n + k], self.r[k * n + k + 1]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (cos, sin) = (a / h, b / h);
            for col in k..q - 1 {
                let (x, y) = (self.r[col * n + k], self.r[col * n + k + 1]);
                self.r[col * n + k] = cos * x + sin * y;
                self.r[col * n + k + 1] = -sin * x + cos * y;
            }
            self.rotate_j(k, k + 1, cos, sin);
        }
        self.q -= 1;
    }

    /// Solves `R r = d[..q]` by back substitution.
    fn back_solve(&self, d: &[f64]) -> Vec<f64> {
        let n = self.n;
        let q = self.q;
        let mut out = vec![0.0; q];
        for row in (0..q).rev() {
            let mut sum = d[row];
            for col in row + 1..q {
                sum -= self.r[col * n + row] * out[col];
            }
            out[row] = sum / self.r[row * n + row];
        }
        out
    }

    /// Primal direction `Σ_{c ≥ q} d_c J_c`.
    fn primal_direction(&self, d: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.n];
        for c in self.q..self.n {
            let coef = d[c];
            if coef != 0.0 {
                for (zi, ji) in z.iter_mut().zip(self.col(c)) {
                    *zi += coef * ji;
                }
            }
        }
        z
    }
}

pub fn solve_qp(problem: &QpProblem<'_>) -> Result<QpSolution> {
    let n = problem.n;
    let m = problem.constraints();
    assert_eq!(problem.h.len(), n * n);
    assert_eq!(problem.c.len(), n);
    assert_eq!(problem.a.len(), m * n);

    let l = cholesky(n, problem.h)
        .ok_or_else(|| Error::InvalidScenario("QP Hessian is not positive definite".into()))?;
    let mut fac = Factors::new(n, &l);

    // unconstrained minimizer x = −J Jᵀ c
    let jtc = fac.jt_times(problem.c);
    let mut x = vec![0.0; n];
    for c in 0..n {
        for (xi, ji) in x.iter_mut().zip(fac.col(c)) {
            *xi -= jtc[c] * ji;
        }
    }

    // constraint normals are typically very sparse
    let rows: Vec<Vec<(usize, f64)>> = (0..m)
        .map(|i| {
            problem
                .normal(i)
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(j, &v)| (j, v))
                .collect()
        })
        .collect();
    let sparse_dot =
        |row: &[(usize, f64)], v: &[f64]| row.iter().map(|&(j, a)| a * v[j]).sum::<f64>();
    let norms: Vec<f64> = rows
        .iter()
        .map(|row| row.iter().map(|(_, v)| v * v).sum::<f64>().sqrt())
        .collect();
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut is_active = vec![false; m];
    let mut iterations = 0;
    let max_iterations = 50 * (n + m) + 100;

    loop {
        // most violated constraint, measured in distance units
        let x_scale = x.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
        let mut pick = None;
        let mut worst = 0.0;
        for i in 0..m {
            if is_active[i] || norms[i] == 0.0 {
                continue;
            }
            let slack = sparse_dot(&rows[i], &x) - problem.b[i];
            let tol = 1e-13 * (1.0 + problem.b[i].abs() + norms[i] * x_scale);
            if slack < -tol {
                let scaled = slack / norms[i];
                if scaled < worst {
                    worst = scaled;
                    pick = Some(i);
                }
            }
        }
        let Some(p) = pick else {
            let mut multipliers = vec![0.0; m];
            for (&i, &ui) in active.iter().zip(&u) {
                multipliers[i] = ui;
            }
            return Ok(QpSolution {
                x,
                multipliers,
                active,
                iterations,
                factors: fac,
            });
        };

        let normal = &rows[p];
        let mut u_plus = 0.0;
        loop {
            iterations += 1;
            if iterations > max_iterations {
                return Err(Error::QpInfeasible);
            }
            let d = fac.jt_times_sparse(normal);
            let z = fac.primal_direction(&d);
            let r = fac.back_solve(&d);

            // partial (dual) step: first active multiplier to hit zero
            let mut t1 = f64::INFINITY;
            let mut drop_pos = None;
            for (pos, (&rj, &uj)) in r.iter().zip(&u).enumerate() {
                if rj > 0.0 {
                    let ratio = uj / rj;
                    if ratio < t1 {
                        t1 = ratio;
                        drop_pos = Some(pos);
                    }
                }
            }
            // full (primal) step: constraint p becomes satisfied
            let zn = sparse_dot(normal, &z);
            let slack = sparse_dot(normal, &x) - problem.b[p];
            // the normal is dependent on the active set when Jᵀn has no
            // weight outside the first q coordinates
            let free: f64 = d[fac.q..].iter().map(|v| v * v).sum();
            let total: f64 = d.iter().map(|v| v * v).sum();
            let t2 = if zn > 0.0 && free > 1e-24 * total {
                -slack / zn
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(Error::QpInfeasible);
            }

            if t2.is_finite() {
                for (xi, zi) in x.iter_mut().zip(&z) {
                    *xi += t * zi;
                }
            }
            for (uj, rj) in u.iter_mut().zip(&r) {
                *uj -= t * rj;
            }
            u_plus += t;

            if t2 <= t1 {
                if fac.add(d) {
                    active.push(p);
                    u.push(u_plus);
                    is_active[p] = true;
                }
                break;
            }
            let pos = drop_pos.expect("finite partial step has a blocking constraint");
            fac.drop(pos);
            is_active[active[pos]] = false;
            active.remove(pos);
            u.remove(pos);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn identity(n: usize) -> Vec<f64> {
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            h[i * n + i] = 1.0;
        }
        h
    }

    #[test]
    fn unconstrained_step_is_negative_gradient() {
        let h = identity(3);
        let c = [1.0, -2.0, 0.5];
        let sol = solve_qp(&QpProblem {
            n: 3,
            h: &h,
            c: &c,
            a: &[],
            b: &[],
        })
        .unwrap();
        for (xi, ci) in sol.x.iter().zip(&c) {
            assert_relative_eq!(*xi, -ci, epsilon = 1e-15);
        }
    }

    #[test]
    fn projection_onto_halfspace() {
        // −∇f = (1, 1) violates −d1 − d2 + 1 ≥ 0; hand KKT solve gives
        // d = (0.5, 0.5) with multiplier 0.5
        let h = identity(2);
        let sol = solve_qp(&QpProblem {
            n: 2,
            h: &h,
            c: &[-1.0, -1.0],
            a: &[-1.0, -1.0],
            b: &[-1.0],
        })
        .unwrap();
        assert_relative_eq!(sol.x[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(sol.x[1], 0.5, epsilon = 1e-15);
        assert_relative_eq!(sol.multipliers[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn textbook_problem() {
        // quadprog reference: min ½xᵀx − (0,5,0)ᵀx, Aᵀx ≥ b
        let h = identity(3);
        let c = [0.0, -5.0, 0.0];
        let a = [-4.0, -3.0, 0.0, 2.0, 1.0, 0.0, 0.0, -2.0, 1.0];
        let b = [-8.0, 2.0, 0.0];
        let sol = solve_qp(&QpProblem {
            n: 3,
            h: &h,
            c: &c,
            a: &a,
            b: &b,
        })
        .unwrap();
        let expected = [0.4761904761904762, 1.0476190476190477, 2.0952380952380953];
        for (x, e) in sol.x.iter().zip(expected) {
            assert_relative_eq!(*x, e, epsilon = 1e-12);
        }
        assert_relative_eq!(sol.multipliers[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(sol.multipliers[1], 0.2380952380952381, epsilon = 1e-12);
        assert_relative_eq!(sol.multipliers[2], 2.0952380952380953, epsilon = 1e-12);
    }

    #[test]
    fn active_correction_moves_only_along_active_rows() {
        let h = identity(2);
        let sol = solve_qp(&QpProblem {
            n: 2,
            h: &h,
            c: &[-1.0, -1.0],
            a: &[-1.0, -1.0],
            b: &[-1.0],
        })
        .unwrap();
        // shift the active row by 0.2: minimum-norm step is −0.1·(1, 1)
        let delta = sol.active_correction(&[0.2]);
        assert_relative_eq!(delta[0], -0.1, epsilon = 1e-15);
        assert_relative_eq!(delta[1], -0.1, epsilon = 1e-15);
    }

    #[test]
    fn infeasible_system() {
        let h = identity(1);
        // x ≥ 1 and −x ≥ 0
        let r = solve_qp(&QpProblem {
            n: 1,
            h: &h,
            c: &[0.0],
            a: &[1.0, -1.0],
            b: &[1.0, 0.0],
        });
        assert!(matches!(r, Err(Error::QpInfeasible)));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn random_qp() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
            (2usize..6, 1usize..8).prop_flat_map(|(n, m)| {
                (
                    Just(n),
                    proptest::collection::vec(-1.0f64..1.0, n * n),
                    proptest::collection::vec(-1.0f64..1.0, n),
                    proptest::collection::vec(-1.0f64..1.0, m * n),
                    proptest::collection::vec(-1.0f64..0.0, m),
                )
            })
        }

        proptest! {
            // b ≤ 0 keeps x = 0 feasible
            #[test]
            fn kkt_holds((n, g, c, a, b) in random_qp()) {
                let mut h = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        h[i * n + j] = (0..n).map(|k| g[i * n + k] * g[j * n + k]).sum::<f64>();
                    }
                    h[i * n + i] += 0.5;
                }
                let qp = QpProblem { n, h: &h, c: &c, a: &a, b: &b };
                let sol = solve_qp(&qp).unwrap();
                let m = b.len();
                for i in 0..m {
                    let slack = dot(&a[i * n..(i + 1) * n], &sol.x) - b[i];
                    prop_assert!(slack >= -1e-9);
                    prop_assert!(sol.multipliers[i] >= -1e-12);
                    prop_assert!((sol.multipliers[i] * slack).abs() < 1e-9);
                }
                for row in 0..n {
                    let mut grad = c[row] + (0..n).map(|k| h[row * n + k] * sol.x[k]).sum::<f64>();
                    for i in 0..m {
                        grad -= sol.multipliers[i] * a[i * n + row];
                    }
                    prop_assert!(grad.abs() < 1e-9, "stationarity {}", grad);
                }
            }
        }
    }
}
