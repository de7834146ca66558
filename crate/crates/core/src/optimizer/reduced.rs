//! Power allocation with every rate pinned at its lower bound.
//!
//! Latency grows with every rate, so some optimum sits on the rate floors.
//! What remains is convex: minimize `Σ z_k` over powers and latencies, with
//! each latency bounding a convex decreasing function of one stream power.
//! It is solved by a primal log-barrier method with exact Newton steps.

use nalgebra::{DMatrix, DVector};

use super::problem::Problem;
use super::{canonicalize, Allocation, Multipliers, SolveReport};
use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::scenario::Scenario;

/// `z_user ≥ offset + T(p_stream)/τ`, with no power term when `stream` is `None`.
#[derive(Debug, Clone, Copy)]
struct Term {
    user: usize,
    stream: usize,
    var: Option<usize>,
    offset: f64,
}

struct Barrier<'a> {
    pr: &'a Problem<'a>,
    tau: f64,
    /// Streams that carry bits; these are the power variables.
    carrying: Vec<usize>,
    terms: Vec<Term>,
}

impl Barrier<'_> {
    fn vars(&self) -> usize {
        self.carrying.len() + self.pr.users()
    }

    fn z_var(&self, user: usize) -> usize {
        self.carrying.len() + user
    }

    fn constraints(&self) -> usize {
        self.terms.len() + 1 + self.carrying.len()
    }

    /// Latency of `term` in units of `τ` and its first two derivatives in `p̂`.
    fn latency(&self, term: &Term, y: &[f64]) -> (f64, f64, f64) {
        let Some(v) = term.var else {
            return (term.offset, 0.0, 0.0);
        };
        let pr = self.pr;
        let s = term.stream;
        let budget = pr.power_budget();
        let bits = pr.rate_floor(s) * pr.pixels[s];
        let a = pr.gains[term.user] / (pr.bandwidth[s] * pr.scenario.radio.noise_density);
        let p = y[v] * budget;
        let ln2 = std::f64::consts::LN_2;
        let rate = pr.bandwidth[s] * (a * p).ln_1p() / ln2;
        let d1 = pr.bandwidth[s] * a / ((1.0 + a * p) * ln2);
        let d2 = -pr.bandwidth[s] * a * a / ((1.0 + a * p).powi(2) * ln2);
        let t = bits / rate;
        let t1 = -bits * d1 / (rate * rate);
        let t2 = bits * (2.0 * d1 * d1 / rate.powi(3) - d2 / (rate * rate));
        (
            term.offset + t / self.tau,
            t1 * budget / self.tau,
            t2 * budget * budget / self.tau,
        )
    }

    /// Constraint slacks, or `None` outside the strict interior.
    fn slacks(&self, y: &[f64]) -> Option<Vec<f64>> {
        let mut u = Vec::with_capacity(self.constraints());
        for term in &self.terms {
            u.push(y[self.z_var(term.user)] - self.latency(term, y).0);
        }
        u.push(1.0 - y[..self.carrying.len()].iter().sum::<f64>());
        u.extend_from_slice(&y[..self.carrying.len()]);
        u.iter().all(|&v| v > 0.0 && v.is_finite()).then_some(u)
    }

    fn value(&self, t: f64, y: &[f64]) -> Option<f64> {
        let u = self.slacks(y)?;
        let z: f64 = y[self.carrying.len()..].iter().sum();
        Some(t * z - u.iter().map(|v| v.ln()).sum::<f64>())
    }

    fn gradient_hessian(&self, t: f64, y: &[f64], u: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let nv = self.vars();
        let np = self.carrying.len();
        let mut g = DVector::zeros(nv);
        let mut h = DMatrix::zeros(nv, nv);
        for k in 0..self.pr.users() {
            g[self.z_var(k)] = t;
        }
        for (term, &slack) in self.terms.iter().zip(u) {
            let zi = self.z_var(term.user);
            let (_, d1, d2) = self.latency(term, y);
            // u = z − φ(p): ∇u = (−φ', 1), ∇²u = −φ''
            g[zi] -= 1.0 / slack;
            h[(zi, zi)] += 1.0 / (slack * slack);
            if let Some(v) = term.var {
                g[v] += d1 / slack;
                h[(v, v)] += d1 * d1 / (slack * slack) + d2 / slack;
                h[(v, zi)] -= d1 / (slack * slack);
                h[(zi, v)] -= d1 / (slack * slack);
            }
        }
        let budget_slack = u[self.terms.len()];
        for a in 0..np {
            g[a] += 1.0 / budget_slack;
            for b in 0..np {
                h[(a, b)] += 1.0 / (budget_slack * budget_slack);
            }
            let s = u[self.terms.len() + 1 + a];
            g[a] -= 1.0 / s;
            h[(a, a)] += 1.0 / (s * s);
        }
        (g, h)
    }
}

/// Solves the power allocation with rates fixed at their lower bounds.
pub fn reduced_solve(scenario: &Scenario, channel: &ChannelRealization) -> Result<SolveReport> {
    let pr = Problem::new(scenario, channel)?;
    let n_s = pr.streams();
    let carrying: Vec<usize> = (0..n_s).filter(|&s| pr.rate_floor(s) > 0.0).collect();
    let var_of = |s: usize| carrying.iter().position(|&c| c == s);

    let mut terms = Vec::new();
    for k in 0..pr.users() {
        terms.push(Term {
            user: k,
            stream: 0,
            var: var_of(0),
            offset: pr.generation_latency(k),
        });
        for s in 1..n_s {
            if pr.wants(k, s) && var_of(s).is_some() {
                terms.push(Term {
                    user: k,
                    stream: s,
                    var: var_of(s),
                    offset: 0.0,
                });
            }
        }
    }

    // uniform split of 90% of the budget, latencies comfortably above the bounds
    let np = carrying.len();
    let mut y = vec![0.0; np + pr.users()];
    y[..np].iter_mut().for_each(|p| *p = 0.9 / np as f64);
    let mut powers = vec![0.0; n_s];
    for (&s, p) in carrying.iter().zip(&y) {
        powers[s] = p * pr.power_budget();
    }
    let rates: Vec<f64> = (0..n_s).map(|s| pr.rate_floor(s)).collect();
    let start: Vec<f64> = (0..pr.users())
        .map(|k| pr.user_latency(k, &powers, &rates))
        .collect();
    let tau = {
        let mean = start.iter().sum::<f64>() / start.len().max(1) as f64;
        if mean > 0.0 {
            mean
        } else {
            1e-3
        }
    };
    // tau is only known after the raw latencies, so offsets are rescaled here
    for term in &mut terms {
        term.offset /= tau;
    }
    for (k, t) in start.iter().enumerate() {
        y[np + k] = 1.5 * t / tau + 0.1;
    }

    let barrier = Barrier {
        pr: &pr,
        tau,
        carrying,
        terms,
    };
    let m = barrier.constraints() as f64;
    let mut t = m / y[np..].iter().sum::<f64>();
    let mut iterations = 0;
    let mut converged = false;
    const GAP: f64 = 1e-12;
    for _outer in 0..60 {
        for _inner in 0..200 {
            let u = barrier
                .slacks(&y)
                .ok_or(Error::NotConverged { iterations })?;
            let (g, h) = barrier.gradient_hessian(t, &y, &u);
            let Some(chol) = h.cholesky() else {
                return Err(Error::NotConverged { iterations });
            };
            let step = -chol.solve(&g);
            let decrement = -g.dot(&step);
            iterations += 1;
            if decrement < 1e-14 * (1.0 + t) {
                break;
            }
            let f0 = barrier.value(t, &y).expect("iterate is interior");
            let mut eta = 1.0;
            loop {
                let trial: Vec<f64> = y
                    .iter()
                    .zip(step.iter())
                    .map(|(a, b)| a + eta * b)
                    .collect();
                if let Some(f1) = barrier.value(t, &trial) {
                    if f1 <= f0 - 0.01 * eta * decrement {
                        y = trial;
                        break;
                    }
                }
                eta *= 0.5;
                if eta < 1e-16 {
                    break;
                }
            }
            if eta < 1e-16 {
                break;
            }
        }
        let objective: f64 = y[np..].iter().sum();
        if m / t < GAP * objective.max(1.0) {
            converged = true;
            break;
        }
        t *= 10.0;
    }

    let u = barrier
        .slacks(&y)
        .ok_or(Error::NotConverged { iterations })?;
    let lambda: Vec<f64> = u.iter().map(|s| 1.0 / (t * s)).collect();
    let mut x = vec![0.0; pr.dim()];
    for (a, &s) in barrier.carrying.iter().enumerate() {
        x[pr.power_index(s)] = y[a] * pr.power_budget();
    }
    let (_, max_violation) = canonicalize(&pr, &mut x);

    // stationarity residual of (p̂, ẑ) with the barrier's dual estimates
    let mut residual = vec![0.0; barrier.vars()];
    for k in 0..pr.users() {
        residual[barrier.z_var(k)] = 1.0;
    }
    for (term, &l) in barrier.terms.iter().zip(&lambda) {
        residual[barrier.z_var(term.user)] -= l;
        if let Some(v) = term.var {
            residual[v] += l * barrier.latency(term, &y).1;
        }
    }
    let power_lambda = lambda[barrier.terms.len()];
    for a in 0..np {
        residual[a] += power_lambda - lambda[barrier.terms.len() + 1 + a];
    }
    let kkt_residual = residual.iter().map(|r| r * r).sum::<f64>().sqrt();

    let multipliers = reduced_multipliers(&pr, &barrier, &lambda, &x);
    let allocation = Allocation::from_decision_vector(&pr, &x);
    Ok(SolveReport {
        objective: allocation.latencies.iter().sum(),
        allocation,
        iterations,
        converged: converged && max_violation < 1e-6,
        max_violation,
        kkt_residual,
        rate_snap: 0.0,
        multipliers,
    })
}

/// Natural-unit multipliers; rate multipliers follow from stationarity in `r`.
fn reduced_multipliers(
    pr: &Problem<'_>,
    barrier: &Barrier<'_>,
    lambda: &[f64],
    x: &[f64],
) -> Multipliers {
    let n_s = pr.streams();
    let mut map = vec![0.0; pr.users()];
    let mut class = Vec::new();
    let mut rate_pull = vec![0.0; n_s];
    for (term, &l) in barrier.terms.iter().zip(lambda) {
        let s = term.stream;
        let (_, dr) =
            pr.stream_latency_grad(term.user, s, x[pr.power_index(s)], x[pr.rate_index(s)]);
        rate_pull[s] += l * dr;
        if s == 0 {
            map[term.user] = l;
        } else {
            class.push((term.user, pr.stream_class(s), l));
        }
    }
    let rate_multiplier = |s: usize| {
        if pr.rate_floor(s) > 0.0 {
            rate_pull[s] / -pr.curve(s).slope(pr.rate_floor(s))
        } else {
            0.0
        }
    };
    Multipliers {
        map,
        class,
        power: lambda[barrier.terms.len()] * barrier.tau / pr.power_budget(),
        recon: (1..n_s)
            .map(|s| (pr.stream_class(s), rate_multiplier(s)))
            .collect(),
        synth: rate_multiplier(0),
    }
}
