//! Sequential quadratic programming on the epigraph problem.
//!
//! The solver works in scaled variables `p̂ = p/P_T`, `r`, `ẑ = z/τ` where
//! `τ` is the mean latency of the starting point, and with each constraint
//! family divided by its natural magnitude. The Lagrangian separates over
//! streams, so the Hessian is approximated by one damped BFGS block per
//! `(p_s, r_s)` pair plus a fixed diagonal on the linear `z` block.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::problem::{Problem, POWER_FLOOR};
use super::qp::{solve_qp, QpProblem, QpSolution};
use super::{canonicalize, Allocation, Init, Multipliers, SolveOptions, SolveReport};
use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::scenario::Scenario;

const ARMIJO: f64 = 1e-4;
const Z_CURVATURE: f64 = 1.0;
const MIN_STEP: f64 = 1e-12;
const MIN_CURVATURE: f64 = 1e-8;
const MAX_CURVATURE: f64 = 1e10;

/// Scaled nonlinear program handed to the SQP loop.
struct Scaled<'a> {
    pr: &'a Problem<'a>,
    tau: f64,
    budget: f64,
    /// Wanted `(user, stream)` pairs; unwanted pairs only say `z_k ≥ 0`,
    /// which the map constraint already implies.
    pairs: Vec<(usize, usize)>,
    n: usize,
    m: usize,
}

/// Row offsets of each constraint family.
struct Rows {
    h: usize,
    i: usize,
    j: usize,
    q: usize,
    p_bound: usize,
    r_bound: usize,
}

impl<'a> Scaled<'a> {
    fn new(pr: &'a Problem<'a>, tau: f64) -> Self {
        let pairs: Vec<(usize, usize)> = pr
            .class_pairs()
            .filter(|c| c.wanted)
            .map(|c| (c.user, c.stream))
            .collect();
        let n_s = pr.streams();
        let n = pr.dim();
        let m = pr.users() + pairs.len() + 1 + (n_s - 1) + 1 + 2 * n_s;
        Self {
            pr,
            tau,
            budget: pr.power_budget(),
            pairs,
            n,
            m,
        }
    }

    fn rows(&self) -> Rows {
        let h = self.pr.users();
        let i = h + self.pairs.len();
        let j = i + 1;
        let q = j + self.pr.streams() - 1;
        let p_bound = q + 1;
        Rows {
            h,
            i,
            j,
            q,
            p_bound,
            r_bound: p_bound + self.pr.streams(),
        }
    }

    fn to_natural(&self, xs: &[f64]) -> Vec<f64> {
        let n_s = self.pr.streams();
        let mut x = xs.to_vec();
        x[..n_s].iter_mut().for_each(|p| *p *= self.budget);
        x[2 * n_s..].iter_mut().for_each(|z| *z *= self.tau);
        x
    }

    fn to_scaled(&self, x: &[f64]) -> Vec<f64> {
        let n_s = self.pr.streams();
        let mut xs = x.to_vec();
        xs[..n_s].iter_mut().for_each(|p| *p /= self.budget);
        xs[2 * n_s..].iter_mut().for_each(|z| *z /= self.tau);
        xs
    }

    /// Objective and constraint values.
    fn eval(&self, xs: &[f64], c: &mut [f64]) -> f64 {
        let pr = self.pr;
        let n_s = pr.streams();
        let rows = self.rows();
        let p = |s: usize| xs[s] * self.budget;
        let r = |s: usize| xs[n_s + s];
        let z = &xs[2 * n_s..];
        for k in 0..pr.users() {
            c[k] =
                z[k] - (pr.generation_latency(k) + pr.stream_latency(k, 0, p(0), r(0))) / self.tau;
        }
        for (idx, &(k, s)) in self.pairs.iter().enumerate() {
            c[rows.h + idx] = z[k] - pr.stream_latency(k, s, p(s), r(s)) / self.tau;
        }
        c[rows.i] = 1.0 - xs[..n_s].iter().sum::<f64>();
        for s in 1..n_s {
            c[rows.j + s - 1] = 1.0 - pr.curve(s).value(r(s)) / pr.target(s);
        }
        c[rows.q] = 1.0 - pr.curve(0).value(r(0)) / pr.target(0);
        let floor = POWER_FLOOR / self.budget;
        for s in 0..n_s {
            c[rows.p_bound + s] = xs[s] - floor;
            c[rows.r_bound + s] = xs[n_s + s];
        }
        z.iter().sum()
    }

    /// Objective gradient and row-major constraint Jacobian.
    fn jacobian(&self, xs: &[f64], grad: &mut [f64], jac: &mut [f64]) {
        let pr = self.pr;
        let n = self.n;
        let n_s = pr.streams();
        let rows = self.rows();
        let p = |s: usize| xs[s] * self.budget;
        let r = |s: usize| xs[n_s + s];
        jac.iter_mut().for_each(|v| *v = 0.0);
        grad.iter_mut().for_each(|v| *v = 0.0);
        grad[2 * n_s..].iter_mut().for_each(|v| *v = 1.0);
        let mut latency_row = |row: usize, k: usize, s: usize| {
            let (dp, dr) = pr.stream_latency_grad(k, s, p(s), r(s));
            let base = row * n;
            jac[base + s] = -dp * self.budget / self.tau;
            jac[base + n_s + s] = -dr / self.tau;
            jac[base + 2 * n_s + k] = 1.0;
        };
        for k in 0..pr.users() {
            latency_row(k, k, 0);
        }
        for (idx, &(k, s)) in self.pairs.iter().enumerate() {
            latency_row(rows.h + idx, k, s);
        }
        jac[rows.i * n..rows.i * n + n_s]
            .iter_mut()
            .for_each(|v| *v = -1.0);
        for s in 1..n_s {
            jac[(rows.j + s - 1) * n + n_s + s] = -pr.curve(s).slope(r(s)) / pr.target(s);
        }
        jac[rows.q * n + n_s] = -pr.curve(0).slope(r(0)) / pr.target(0);
        for s in 0..n_s {
            jac[(rows.p_bound + s) * n + s] = 1.0;
            jac[(rows.r_bound + s) * n + n_s + s] = 1.0;
        }
    }

    /// Converts scaled multipliers to natural units.
    fn multipliers(&self, lambda: &[f64]) -> Multipliers {
        let pr = self.pr;
        let rows = self.rows();
        Multipliers {
            map: lambda[..pr.users()].to_vec(),
            class: self
                .pairs
                .iter()
                .enumerate()
                .map(|(idx, &(k, s))| (k, pr.stream_class(s), lambda[rows.h + idx]))
                .collect(),
            power: lambda[rows.i] * self.tau / self.budget,
            recon: (1..pr.streams())
                .map(|s| {
                    (
                        pr.stream_class(s),
                        lambda[rows.j + s - 1] * self.tau / pr.target(s),
                    )
                })
                .collect(),
            synth: lambda[rows.q] * self.tau / pr.target(0),
        }
    }
}

/// Damped BFGS approximation with 2×2 blocks on `(p_s, r_s)`.
struct BlockBfgs {
    n_s: usize,
    blocks: Vec<[f64; 4]>,
    scaled: bool,
}

impl BlockBfgs {
    fn new(n_s: usize) -> Self {
        Self {
            n_s,
            blocks: vec![[1.0, 0.0, 0.0, 1.0]; n_s],
            scaled: false,
        }
    }

    fn dense(&self, n: usize) -> Vec<f64> {
        let n_s = self.n_s;
        let mut h = vec![0.0; n * n];
        for (s, b) in self.blocks.iter().enumerate() {
            let (i, j) = (s, n_s + s);
            h[i * n + i] = b[0];
            h[i * n + j] = b[1];
            h[j * n + i] = b[2];
            h[j * n + j] = b[3];
        }
        for z in 2 * n_s..n {
            h[z * n + z] = Z_CURVATURE;
        }
        h
    }

    fn update(&mut self, step: &[f64], dgrad: &[f64]) {
        let n_s = self.n_s;
        if !self.scaled {
            // Shanno–Phua scaling of the initial matrix, per block
            for s in 0..n_s {
                let sv = [step[s], step[n_s + s]];
                let yv = [dgrad[s], dgrad[n_s + s]];
                let sy = sv[0] * yv[0] + sv[1] * yv[1];
                let yy = yv[0] * yv[0] + yv[1] * yv[1];
                if sy > 0.0 && yy > 0.0 {
                    let gamma = (yy / sy).clamp(1e-6, 1e6);
                    self.blocks[s] = [gamma, 0.0, 0.0, gamma];
                }
            }
            self.scaled = true;
        }
        for s in 0..n_s {
            let sv = [step[s], step[n_s + s]];
            let mut yv = [dgrad[s], dgrad[n_s + s]];
            let b = &mut self.blocks[s];
            let bs = [b[0] * sv[0] + b[1] * sv[1], b[2] * sv[0] + b[3] * sv[1]];
            let sbs = sv[0] * bs[0] + sv[1] * bs[1];
            if !(sbs > 1e-300) {
                continue;
            }
            let mut sy = sv[0] * yv[0] + sv[1] * yv[1];
            if sy < 0.2 * sbs {
                let theta = 0.8 * sbs / (sbs - sy);
                yv = [
                    theta * yv[0] + (1.0 - theta) * bs[0],
                    theta * yv[1] + (1.0 - theta) * bs[1],
                ];
                sy = sv[0] * yv[0] + sv[1] * yv[1];
            }
            let next = [
                b[0] - bs[0] * bs[0] / sbs + yv[0] * yv[0] / sy,
                b[1] - bs[0] * bs[1] / sbs + yv[0] * yv[1] / sy,
                b[2] - bs[1] * bs[0] / sbs + yv[1] * yv[0] / sy,
                b[3] - bs[1] * bs[1] / sbs + yv[1] * yv[1] / sy,
            ];
            if next.iter().all(|v| v.is_finite()) {
                *b = clip_eigenvalues(next);
            }
        }
    }
}

/// Symmetric 2×2 matrix with eigenvalues clamped to `[MIN_CURVATURE, MAX_CURVATURE]`.
fn clip_eigenvalues(b: [f64; 4]) -> [f64; 4] {
    let (a, c, d) = (b[0], 0.5 * (b[1] + b[2]), b[3]);
    let mean = 0.5 * (a + d);
    let radius = (0.25 * (a - d) * (a - d) + c * c).sqrt();
    let (hi, lo) = (mean + radius, mean - radius);
    if lo >= MIN_CURVATURE && hi <= MAX_CURVATURE {
        return [a, c, c, d];
    }
    // unit eigenvector of the larger eigenvalue
    let (vx, vy) = if radius == 0.0 {
        (1.0, 0.0)
    } else if a >= d {
        let (x, y) = (hi - d, c);
        let len = x.hypot(y);
        (x / len, y / len)
    } else {
        let (x, y) = (c, hi - a);
        let len = x.hypot(y);
        (x / len, y / len)
    };
    let hi = hi.clamp(MIN_CURVATURE, MAX_CURVATURE);
    let lo = lo.clamp(MIN_CURVATURE, MAX_CURVATURE);
    let off = (hi - lo) * vx * vy;
    [lo + (hi - lo) * vx * vx, off, off, lo + (hi - lo) * vy * vy]
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn infeasibility(c: &[f64]) -> f64 {
    c.iter().map(|v| (-v).max(0.0)).sum()
}

/// `∇f − Jᵀλ`.
fn lagrangian_gradient(grad: &[f64], jac: &[f64], lambda: &[f64], n: usize) -> Vec<f64> {
    let mut out = grad.to_vec();
    for (row, &l) in lambda.iter().enumerate() {
        if l != 0.0 {
            for (o, a) in out.iter_mut().zip(&jac[row * n..(row + 1) * n]) {
                *o -= l * a;
            }
        }
    }
    out
}

/// Solves the QP subproblem, relaxing violated rows once if it is infeasible.
fn qp_step(n: usize, h: &[f64], grad: &[f64], jac: &[f64], rhs: &[f64]) -> Result<QpSolution> {
    let qp = QpProblem {
        n,
        h,
        c: grad,
        a: jac,
        b: rhs,
    };
    match solve_qp(&qp) {
        Err(Error::QpInfeasible) => {
            let relaxed: Vec<f64> = rhs.iter().map(|&b| b.min(0.0)).collect();
            solve_qp(&QpProblem { b: &relaxed, ..qp })
        }
        other => other,
    }
}

fn initial_point(pr: &Problem<'_>, init: Init) -> Vec<f64> {
    let n_s = pr.streams();
    let budget = pr.power_budget();
    let mut x = vec![0.0; pr.dim()];
    let mut margin = vec![1.01; pr.users()];
    match init {
        Init::WarmStart => {
            for s in 0..n_s {
                x[pr.power_index(s)] = budget / n_s as f64;
                x[pr.rate_index(s)] = pr.rate_floor(s);
            }
        }
        Init::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let weights: Vec<f64> = (0..n_s).map(|_| rng.random_range(0.05..1.0)).collect();
            let total: f64 = weights.iter().sum();
            for s in 0..n_s {
                x[pr.power_index(s)] = budget * weights[s] / total;
                x[pr.rate_index(s)] = pr.rate_floor(s) + rng.random_range(0.0..0.5);
            }
            margin
                .iter_mut()
                .for_each(|m| *m = rng.random_range(1.01..1.5));
        }
    }
    let (powers, rest) = x.split_at(n_s);
    let rates = &rest[..n_s];
    let z: Vec<f64> = (0..pr.users())
        .map(|k| margin[k] * pr.user_latency(k, powers, rates))
        .collect();
    for (k, zk) in z.into_iter().enumerate() {
        x[pr.latency_index(k)] = zk;
    }
    x
}

/// Minimizes the sum of user latencies.
///
/// A run that hits the iteration limit is returned with `converged = false`.
pub fn sqp_solve(
    scenario: &Scenario,
    channel: &ChannelRealization,
    options: &SolveOptions,
) -> Result<SolveReport> {
    let pr = Problem::new(scenario, channel)?;
    let x0 = initial_point(&pr, options.init);
    let tau = {
        let mean = (0..pr.users())
            .map(|k| x0[pr.latency_index(k)])
            .sum::<f64>()
            / pr.users().max(1) as f64;
        if mean > 0.0 {
            mean
        } else {
            1e-3
        }
    };
    let nlp = Scaled::new(&pr, tau);
    let (n, m) = (nlp.n, nlp.m);
    let n_s = pr.streams();
    let p_floor = POWER_FLOOR / nlp.budget;

    let mut x = nlp.to_scaled(&x0);
    let mut c = vec![0.0; m];
    let mut f = nlp.eval(&x, &mut c);
    let mut grad = vec![0.0; n];
    let mut jac = vec![0.0; m * n];
    nlp.jacobian(&x, &mut grad, &mut jac);

    let mut hess = BlockBfgs::new(n_s);
    let mut penalty = 0.0f64;
    let mut lambda = vec![0.0; m];
    let mut kkt = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    let mut resets = 0;

    let mut c_trial = vec![0.0; m];
    while iterations < options.max_iterations {
        iterations += 1;
        let h = hess.dense(n);
        let rhs: Vec<f64> = c.iter().map(|v| -v).collect();
        let sol = qp_step(n, &h, &grad, &jac, &rhs)?;
        let d = sol.x.clone();
        lambda = sol.multipliers.clone();
        kkt = norm(&lagrangian_gradient(&grad, &jac, &lambda, n));
        let violation = c.iter().fold(0.0f64, |acc, v| acc.max(-v));
        if norm(&d) < options.tolerance && kkt < options.tolerance && violation < 1e-9 {
            converged = true;
            break;
        }

        let max_lambda = lambda.iter().fold(0.0f64, |acc, &l| acc.max(l));
        penalty = penalty.max(1.1 * max_lambda + 1e-4);
        let lin: Vec<f64> = (0..m)
            .map(|row| c[row] + dot(&jac[row * n..(row + 1) * n], &d))
            .collect();
        let merit = f + penalty * infeasibility(&c);
        let descent =
            (dot(&grad, &d) - penalty * (infeasibility(&c) - infeasibility(&lin))).min(0.0);
        let slack = 16.0 * f64::EPSILON * merit.abs().max(1.0);

        let clamp = |v: &mut Vec<f64>| {
            v[..n_s].iter_mut().for_each(|p| *p = p.max(p_floor));
            v[n_s..2 * n_s].iter_mut().for_each(|r| *r = r.max(0.0));
        };
        let try_point = |x_new: &[f64], c_new: &mut [f64]| {
            let f_new = nlp.eval(x_new, c_new);
            (f_new, f_new + penalty * infeasibility(c_new))
        };

        let mut accepted: Option<(Vec<f64>, f64)> = None;
        let mut x_new: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + b).collect();
        clamp(&mut x_new);
        let (f_new, merit_new) = try_point(&x_new, &mut c_trial);
        if merit_new <= merit + ARMIJO * descent + slack {
            accepted = Some((x_new, f_new));
        } else {
            // second-order correction when only the constraint curvature
            // spoiled the step (Maratos effect)
            let maratos = f_new <= f && infeasibility(&c_trial) > infeasibility(&c);
            if maratos {
                let shift: Vec<f64> = c_trial.iter().map(|v| -v).collect();
                let mut x_soc: Vec<f64> = x_new
                    .iter()
                    .zip(sol.active_correction(&shift))
                    .map(|(a, b)| a + b)
                    .collect();
                clamp(&mut x_soc);
                let (f_soc, merit_soc) = try_point(&x_soc, &mut c_trial);
                if merit_soc <= merit + ARMIJO * descent + slack {
                    accepted = Some((x_soc, f_soc));
                }
            }
            let mut eta = 1.0;
            while accepted.is_none() && eta > MIN_STEP {
                eta *= 0.5;
                let mut x_bt: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + eta * b).collect();
                clamp(&mut x_bt);
                let (f_bt, merit_bt) = try_point(&x_bt, &mut c_trial);
                if merit_bt <= merit + ARMIJO * eta * descent + slack {
                    accepted = Some((x_bt, f_bt));
                }
            }
        }

        let Some((x_next, f_next)) = accepted else {
            if resets < 2 {
                resets += 1;
                hess = BlockBfgs::new(n_s);
                continue;
            }
            break;
        };
        f = nlp.eval(&x_next, &mut c);
        debug_assert_eq!(f, f_next);
        let grad_lag_old = lagrangian_gradient(&grad, &jac, &lambda, n);
        nlp.jacobian(&x_next, &mut grad, &mut jac);
        let grad_lag_new = lagrangian_gradient(&grad, &jac, &lambda, n);
        let step: Vec<f64> = x_next.iter().zip(&x).map(|(a, b)| a - b).collect();
        let dgrad: Vec<f64> = grad_lag_new
            .iter()
            .zip(&grad_lag_old)
            .map(|(a, b)| a - b)
            .collect();
        hess.update(&step, &dgrad);
        x = x_next;
    }

    log::debug!("sqp finished after {iterations} iterations, converged {converged}, kkt {kkt:e}");
    let multipliers = nlp.multipliers(&lambda);
    let mut x_nat = nlp.to_natural(&x);
    let (rate_snap, max_violation) = canonicalize(&pr, &mut x_nat);
    let allocation = Allocation::from_decision_vector(&pr, &x_nat);
    Ok(SolveReport {
        objective: allocation.latencies.iter().sum(),
        allocation,
        iterations,
        converged: converged && max_violation < 1e-6,
        max_violation,
        kkt_residual: kkt,
        rate_snap,
        multipliers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::IntentMatrix;
    use approx::assert_relative_eq;

    fn scenario(k: usize) -> Scenario {
        let intent = IntentMatrix::from_class_lists(
            k,
            k.max(1),
            &(0..k).map(|i| vec![i]).collect::<Vec<_>>(),
        )
        .unwrap();
        let distances = (0..k)
            .map(|i| 150.0 + 400.0 * i as f64 / k.max(2) as f64)
            .collect();
        Scenario::standard(intent, distances, 0.1, 0.0285, 0.58705).unwrap()
    }

    #[test]
    fn converges_on_distinct_intents() {
        for k in [1, 2, 5, 10, 20] {
            let sc = scenario(k);
            let ch = ChannelRealization::mean(&sc.radio);
            let rep = sqp_solve(&sc, &ch, &SolveOptions::default()).unwrap();
            assert!(rep.converged, "K={k}: {rep:?}");
            assert!(rep.kkt_residual < 1e-8);
            assert!(rep.rate_snap < 1e-5, "snap {}", rep.rate_snap);
            assert_relative_eq!(rep.allocation.total_power(), 0.1, max_relative = 1e-6);
        }
    }

    #[test]
    fn random_start_reaches_the_same_optimum() {
        let sc = scenario(4);
        let ch = ChannelRealization::mean(&sc.radio);
        let warm = sqp_solve(&sc, &ch, &SolveOptions::default()).unwrap();
        for seed in 0..5 {
            let opts = SolveOptions {
                init: Init::Random { seed },
                ..Default::default()
            };
            let rep = sqp_solve(&sc, &ch, &opts).unwrap();
            assert!(rep.converged);
            assert_relative_eq!(rep.objective, warm.objective, max_relative = 1e-7);
        }
    }

    #[test]
    fn bfgs_blocks_stay_positive_definite() {
        let mut h = BlockBfgs::new(1);
        // negative curvature pair gets damped
        h.update(&[1.0, 0.0, 0.0], &[-1.0, 0.0, 0.0]);
        h.update(&[0.3, -0.2, 0.0], &[-0.5, 0.4, 0.0]);
        let b = h.blocks[0];
        assert!(b[0] > 0.0 && b[0] * b[3] - b[1] * b[2] > 0.0);
        assert_eq!(b[1], b[2]);
    }

    #[test]
    fn eigenvalue_clipping() {
        let spd = [2.0, 0.5, 0.5, 1.0];
        assert_eq!(clip_eigenvalues(spd), spd);
        // eigenvalues 3 and −1 along (1, 1)/√2 and (1, −1)/√2
        let b = clip_eigenvalues([1.0, 2.0, 2.0, 1.0]);
        assert_relative_eq!(b[0], 0.5 * (3.0 + MIN_CURVATURE), max_relative = 1e-12);
        assert_relative_eq!(b[1], 0.5 * (3.0 - MIN_CURVATURE), max_relative = 1e-12);
        assert_relative_eq!(b[3], b[0], max_relative = 1e-12);
        let d = clip_eigenvalues([4e-24, -2e-12, -2e-12, 0.9]);
        assert!(d[0] * d[3] - d[1] * d[2] >= 0.9 * MIN_CURVATURE * 0.9);
    }
}
