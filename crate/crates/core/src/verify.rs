//! Independent checks of the solver: brute-force optimum, finite-difference
//! gradients and random small instances.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{draw_channel, ChannelRealization};
use crate::error::Result;
use crate::optimizer::{Problem, POWER_FLOOR};
use crate::rdp::RdpCurve;
use crate::scenario::{
    ComputeSpec, IntentMatrix, RadioParams, Requirements, Scenario, SignalGeometry,
};

/// Random instance with up to `max_users` users and `max_classes` classes,
/// every user wanting at least one class and Rayleigh gains drawn from `seed`.
pub fn random_instance(
    seed: u64,
    max_users: usize,
    max_classes: usize,
) -> Result<(Scenario, ChannelRealization)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users = rng.random_range(1..=max_users);
    let classes = rng.random_range(1..=max_classes);
    let mut intent = IntentMatrix::zeros(users, classes);
    for k in 0..users {
        intent.set(k, rng.random_range(0..classes), true);
        for l in 0..classes {
            if rng.random_bool(0.3) {
                intent.set(k, l, true);
            }
        }
    }
    let recon = (0..users)
        .map(|_| (0..classes).map(|_| rng.random_range(0.01..0.15)).collect())
        .collect();
    let synth = (0..users).map(|_| rng.random_range(0.575..0.7)).collect();
    let radio = RadioParams {
        map_bandwidth: 1e6,
        class_bandwidths: (0..classes).map(|_| rng.random_range(0.5e6..2e6)).collect(),
        noise_density: crate::config::dbm_to_watts(-174.0),
        power_budget: rng.random_range(0.02..0.3),
        pathloss_ref: crate::config::db_to_linear(-30.0),
        pathloss_exp: 3.4,
        distances: (0..users).map(|_| rng.random_range(150.0..550.0)).collect(),
    };
    let compute = ComputeSpec::Direct((0..users).map(|_| rng.random_range(0.0..5e-3)).collect());
    let scenario = Scenario::new(
        SignalGeometry::default().with_num_classes(classes)?,
        intent,
        Requirements::new(recon, synth)?,
        radio,
        compute,
        Arc::new(RdpCurve::RECON_MS_SSIM),
        Arc::new(RdpCurve::SYNTH_LPIPS),
    )?;
    let channel = draw_channel(&scenario.radio, rng.random());
    Ok((scenario, channel))
}

/// Sum latency at the given stream powers with rates on their floors.
fn sum_latency(problem: &Problem<'_>, powers: &[f64]) -> f64 {
    let rates: Vec<f64> = (0..problem.streams())
        .map(|s| problem.rate_floor(s))
        .collect();
    (0..problem.users())
        .map(|k| problem.user_latency(k, powers, &rates))
        .sum()
}

/// Minimum sum latency by exhaustive search over the power simplex.
///
/// Rates sit on their floors and the whole budget is spent, since latency
/// grows with every rate and falls with every power. A grid of `steps`
/// divisions per axis is refined four times around the best point. Only
/// meant for up to three streams.
pub fn grid_oracle(scenario: &Scenario, channel: &ChannelRealization, steps: usize) -> Result<f64> {
    let problem = Problem::new(scenario, channel)?;
    let n = problem.streams();
    let budget = problem.power_budget();
    let mut best = (f64::INFINITY, vec![1.0 / n as f64; n]);
    // the first pass spans [0, 1] on every axis
    let mut center = vec![0.5; n];
    let mut width = 1.0;
    for _ in 0..5 {
        let h = width / steps as f64;
        let mut fractions = vec![0.0; n];
        let mut visit = |fractions: &[f64]| {
            if fractions.iter().any(|&f| f < 0.0) {
                return;
            }
            let powers: Vec<f64> = fractions.iter().map(|f| f * budget).collect();
            let t = sum_latency(&problem, &powers);
            if t < best.0 {
                best = (t, fractions.to_vec());
            }
        };
        grid(&center, width, h, 0, &mut fractions, &mut visit);
        center = best.1.clone();
        width = 4.0 * h;
    }
    Ok(best.0)
}

/// Enumerates points of `center + [−width/2, width/2]^(n−1)` on the simplex;
/// the last coordinate takes the remainder.
fn grid(
    center: &[f64],
    width: f64,
    h: f64,
    axis: usize,
    point: &mut Vec<f64>,
    visit: &mut impl FnMut(&[f64]),
) {
    let n = center.len();
    if axis + 1 == n {
        point[axis] = 1.0 - point[..axis].iter().sum::<f64>();
        visit(point);
        return;
    }
    let lo = (center[axis] - width / 2.0).max(0.0);
    let hi = (center[axis] + width / 2.0).min(1.0);
    let mut v = lo;
    while v <= hi + 1e-15 {
        point[axis] = v;
        grid(center, width, h, axis + 1, point, visit);
        v += h;
    }
}

/// Random strictly feasible point of the epigraph problem.
pub fn random_feasible_point(problem: &Problem<'_>, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_s = problem.streams();
    let mut x = vec![0.0; problem.dim()];
    let weights: Vec<f64> = (0..n_s).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let used = problem.power_budget() * rng.random_range(0.5..0.95);
    for s in 0..n_s {
        x[problem.power_index(s)] = (used * weights[s] / total).max(10.0 * POWER_FLOOR);
        x[problem.rate_index(s)] = problem.rate_floor(s) * rng.random_range(1.01..1.5) + 1e-3;
    }
    let (powers, rest) = x.split_at(n_s);
    let rates = &rest[..n_s];
    let z: Vec<f64> = (0..problem.users())
        .map(|k| problem.user_latency(k, powers, rates) * rng.random_range(1.01..1.3))
        .collect();
    for (k, zk) in z.into_iter().enumerate() {
        x[problem.latency_index(k)] = zk;
    }
    x
}

/// Largest relative gap between the analytic gradients of every constraint
/// and central finite differences at `x`.
pub fn gradient_error(problem: &Problem<'_>, x: &[f64]) -> Result<f64> {
    let analytic = flatten_gradients(problem, x)?;
    let mut worst = 0.0f64;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-6 * x[i].abs().max(1e-12);
        probe[i] = x[i] + h;
        let up = flatten_values(problem, &probe);
        probe[i] = x[i] - h;
        let down = flatten_values(problem, &probe);
        probe[i] = x[i];
        for (row, (u, d)) in analytic.iter().zip(up.iter().zip(&down)) {
            let fd = (u - d) / (2.0 * h);
            let a = row[i];
            let scale = a.abs().max(fd.abs());
            if scale > 0.0 {
                worst = worst.max((a - fd).abs() / scale);
            }
        }
    }
    Ok(worst)
}

fn flatten_values(problem: &Problem<'_>, x: &[f64]) -> Vec<f64> {
    let c = problem.constraint_functions(x);
    let mut out = vec![c.f];
    out.extend(&c.g);
    out.extend(c.h.iter().map(|e| e.1));
    out.push(c.i);
    out.extend(c.j.iter().map(|e| e.1));
    out.push(c.q);
    out
}

fn flatten_gradients(problem: &Problem<'_>, x: &[f64]) -> Result<Vec<Vec<f64>>> {
    let g = problem.constraint_gradients(x)?;
    let mut out = vec![g.f];
    out.extend(g.g);
    out.extend(g.h.into_iter().map(|e| e.1));
    out.push(g.i);
    out.extend(g.j.into_iter().map(|e| e.1));
    out.push(g.q);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::{sqp_solve, SolveOptions};

    #[test]
    fn oracle_matches_solver_on_one_instance() {
        let (sc, ch) = random_instance(5, 3, 2).unwrap();
        let oracle = grid_oracle(&sc, &ch, 200).unwrap();
        let report = sqp_solve(&sc, &ch, &SolveOptions::default()).unwrap();
        assert!(report.objective <= oracle * (1.0 + 1e-9));
        assert!(
            (report.objective - oracle) / oracle < 1e-4,
            "{} vs {oracle}",
            report.objective
        );
    }

    #[test]
    fn random_points_are_feasible() {
        for seed in 0..20 {
            let (sc, ch) = random_instance(seed, 3, 2).unwrap();
            let problem = Problem::new(&sc, &ch).unwrap();
            let x = random_feasible_point(&problem, seed);
            assert_eq!(problem.constraint_functions(&x).max_violation(), 0.0);
        }
    }

    #[test]
    fn every_user_wants_a_class() {
        for seed in 0..20 {
            let (sc, _) = random_instance(seed, 3, 2).unwrap();
            assert!((0..sc.users()).all(|k| sc.intent.classes_of(k).count() > 0));
        }
    }
}
