//! Sum-latency power and rate allocation.
//!
//! [`sqp_solve`] is the production solver. [`reduced_solve`] pins every rate
//! at its lower bound and solves the remaining convex power split with an
//! interior-point method; it serves as an independent cross-check.

mod problem;
mod qp;
mod reduced;
mod sqp;

use std::io::{self, Write};

pub use problem::{
    constraint_functions, constraint_gradients, ClassPair, ConstraintGradients, ConstraintValues,
    Problem, POWER_FLOOR,
};
pub use qp::{solve_qp, QpProblem, QpSolution};
pub use reduced::reduced_solve;
pub use sqp::sqp_solve;

/// Powers and rates indexed by stream (0 = semantic map, `l + 1` = class `l`).
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    /// Transmit power per stream (W); zero for inactive classes.
    pub powers: Vec<f64>,
    /// Compression rate per stream (bpp); zero for inactive classes.
    pub rates: Vec<f64>,
    /// Epigraph variable `z_k` (s), the latency of each user.
    pub latencies: Vec<f64>,
}

impl Allocation {
    pub fn total_power(&self) -> f64 {
        self.powers.iter().sum()
    }

    pub fn map_power(&self) -> f64 {
        self.powers[0]
    }

    /// Solver decision vector in the layout of [`Problem`].
    pub fn to_decision_vector(&self, problem: &Problem<'_>) -> Vec<f64> {
        let n_s = problem.streams();
        let mut x = vec![0.0; problem.dim()];
        for s in 0..n_s {
            let idx = if s == 0 {
                0
            } else {
                problem.stream_class(s) + 1
            };
            x[problem.power_index(s)] = self.powers[idx];
            x[problem.rate_index(s)] = self.rates[idx];
        }
        for (k, &z) in self.latencies.iter().enumerate() {
            x[problem.latency_index(k)] = z;
        }
        x
    }

    pub(crate) fn from_decision_vector(problem: &Problem<'_>, x: &[f64]) -> Self {
        let classes = problem.scenario().classes();
        let mut powers = vec![0.0; classes + 1];
        let mut rates = vec![0.0; classes + 1];
        for s in 0..problem.streams() {
            let idx = if s == 0 {
                0
            } else {
                problem.stream_class(s) + 1
            };
            powers[idx] = x[problem.power_index(s)];
            rates[idx] = x[problem.rate_index(s)];
        }
        let latencies = (0..problem.users())
            .map(|k| x[problem.latency_index(k)])
            .collect();
        Self {
            powers,
            rates,
            latencies,
        }
    }
}

/// Lagrange multipliers in natural units (seconds of objective per unit of
/// constraint).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Multipliers {
    /// ζ_k of the map-latency constraints.
    pub map: Vec<f64>,
    /// ξ_kl of the class-latency constraints, for wanted `(user, class)` pairs.
    pub class: Vec<(usize, usize, f64)>,
    /// δ of the power budget.
    pub power: f64,
    /// ψ_l of the reconstruction requirements, by class.
    pub recon: Vec<(usize, f64)>,
    /// μ of the synthesis requirement.
    pub synth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub allocation: Allocation,
    /// Σ z_k (s).
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Largest constraint violation at the returned allocation, natural units.
    pub max_violation: f64,
    /// Norm of the Lagrangian gradient in the solver's scaled units.
    pub kkt_residual: f64,
    /// Largest rate change made when snapping rates to their lower bounds.
    pub rate_snap: f64,
    pub multipliers: Multipliers,
}

impl SolveReport {
    pub fn mean_latency(&self) -> f64 {
        self.objective / self.allocation.latencies.len() as f64
    }

    pub fn csv_header(classes: usize) -> String {
        let mut cols = vec![
            "objective_ms".to_string(),
            "mean_latency_ms".into(),
            "iterations".into(),
            "converged".into(),
            "max_violation".into(),
            "kkt_residual".into(),
        ];
        for s in 0..=classes {
            cols.push(format!("p{s}_mw"));
        }
        for s in 0..=classes {
            cols.push(format!("r{s}_bpp"));
        }
        cols.join(",")
    }

    /// One CSV row matching [`Self::csv_header`].
    pub fn csv_row(&self) -> String {
        let mut cols = vec![
            (self.objective * 1e3).to_string(),
            (self.mean_latency() * 1e3).to_string(),
            self.iterations.to_string(),
            self.converged.to_string(),
            self.max_violation.to_string(),
            self.kkt_residual.to_string(),
        ];
        cols.extend(self.allocation.powers.iter().map(|p| (p * 1e3).to_string()));
        cols.extend(self.allocation.rates.iter().map(|r| r.to_string()));
        cols.join(",")
    }

    /// Human-readable report; only streams with power are listed.
    pub fn write_text(&self, out: &mut impl Write) -> io::Result<()> {
        writeln!(out, "converged        {}", self.converged)?;
        writeln!(out, "iterations       {}", self.iterations)?;
        writeln!(out, "sum latency      {:.6} ms", self.objective * 1e3)?;
        writeln!(out, "mean latency     {:.6} ms", self.mean_latency() * 1e3)?;
        writeln!(out, "max violation    {:.3e}", self.max_violation)?;
        writeln!(out, "kkt residual     {:.3e}", self.kkt_residual)?;
        writeln!(
            out,
            "total power      {:.6} mW",
            self.allocation.total_power() * 1e3
        )?;
        writeln!(out, "stream           power (mW)      rate (bpp)")?;
        for (s, (p, r)) in self
            .allocation
            .powers
            .iter()
            .zip(&self.allocation.rates)
            .enumerate()
        {
            if *p == 0.0 && *r == 0.0 {
                continue;
            }
            let name = if s == 0 {
                "map".to_string()
            } else {
                format!("class {}", s - 1)
            };
            writeln!(out, "{name:<16} {:<15.6} {:.6}", p * 1e3, r)?;
        }
        writeln!(out, "user             latency (ms)")?;
        for (k, z) in self.allocation.latencies.iter().enumerate() {
            writeln!(out, "{k:<16} {:.6}", z * 1e3)?;
        }
        Ok(())
    }
}

/// Starting point of [`sqp_solve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Init {
    /// Rates at their lower bounds, uniform powers, latencies 1% above the
    /// implied values.
    #[default]
    WarmStart,
    /// Random feasible point drawn from `seed`.
    Random { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub init: Init,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-8,
            init: Init::WarmStart,
        }
    }
}

/// Snaps rates to their floors, recomputes exact latencies and measures the
/// remaining violation.
pub(crate) fn canonicalize(problem: &Problem<'_>, x: &mut [f64]) -> (f64, f64) {
    let n_s = problem.streams();
    let mut snap = 0.0f64;
    for s in 0..n_s {
        let idx = problem.rate_index(s);
        snap = snap.max((x[idx] - problem.rate_floor(s)).abs());
        x[idx] = problem.rate_floor(s);
    }
    let (powers, rest) = x.split_at_mut(n_s);
    let (rates, z) = rest.split_at_mut(n_s);
    for (k, zk) in z.iter_mut().enumerate() {
        *zk = problem.user_latency(k, powers, rates);
    }
    let violation = problem.constraint_functions(x).max_violation();
    (snap, violation)
}
