//! Epigraph form of the sum-latency problem.
//!
//! Decision vector layout, with `S` active classes (inactive classes are
//! eliminated, their power is fixed at zero):
//!
//! ```text
//! [ p_0, p_1 .. p_S,  r_0, r_1 .. r_S,  z_1 .. z_K ]
//! ```
//!
//! Stream 0 is the multicast semantic map; stream `s ≥ 1` carries the
//! `s`-th active class. Constraints are written as `c(x) ≥ 0`:
//!
//! ```text
//! f    = Σ z_k
//! g_k  = z_k − T_k^g − T_k0(p_0, r_0)
//! h_kl = z_k − I_kl · T_kl(p_l, r_l)
//! i    = P_T − Σ p
//! j_l  = E_l^(r) − Φ_r(r_l)
//! q    = E^(s) − Φ_s(r_0)
//! ```

use crate::channel::{shannon_rate, shannon_rate_slope, ChannelRealization};
use crate::error::{Error, Result};
use crate::rdp::QualityCurve;
use crate::scenario::Scenario;

/// Active streams may not drop below this power (W) inside the solver.
pub const POWER_FLOOR: f64 = 1e-9;

/// Problem data with inactive classes removed.
#[derive(Debug)]
pub struct Problem<'a> {
    pub(crate) scenario: &'a Scenario,
    pub(crate) gains: &'a [f64],
    /// Class index of stream `s`, for `s ≥ 1` (entry 0 unused).
    pub(crate) stream_class: Vec<usize>,
    /// Users that want stream `s` (all users for the map).
    pub(crate) stream_users: Vec<Vec<usize>>,
    /// Metric target of each stream (E^(s) for the map, E_l^(r) otherwise).
    pub(crate) targets: Vec<f64>,
    /// Smallest rate meeting each target.
    pub(crate) rate_floor: Vec<f64>,
    pub(crate) bandwidth: Vec<f64>,
    /// Pixels carried per bpp of rate on each stream.
    pub(crate) pixels: Vec<f64>,
    pub(crate) gen_latency: Vec<f64>,
}

/// Location of an `h_kl` entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassPair {
    pub user: usize,
    pub class: usize,
    pub stream: usize,
    /// `I_kl = 1`; otherwise the constraint reduces to `z_k ≥ 0`.
    pub wanted: bool,
}

/// Values of the objective and every constraint family at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintValues {
    pub f: f64,
    pub g: Vec<f64>,
    /// One entry per (user, active class), ordered by user then stream.
    pub h: Vec<(ClassPair, f64)>,
    pub i: f64,
    /// One entry per active class, in stream order.
    pub j: Vec<(usize, f64)>,
    pub q: f64,
}

impl ConstraintValues {
    /// Most negative constraint value, or 0 when feasible.
    pub fn max_violation(&self) -> f64 {
        self.g
            .iter()
            .copied()
            .chain(self.h.iter().map(|e| e.1))
            .chain(std::iter::once(self.i))
            .chain(self.j.iter().map(|e| e.1))
            .chain(std::iter::once(self.q))
            .fold(0.0, |acc: f64, c| acc.max(-c))
    }
}

/// Dense gradients, same shapes as [`ConstraintValues`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintGradients {
    pub f: Vec<f64>,
    pub g: Vec<Vec<f64>>,
    pub h: Vec<(ClassPair, Vec<f64>)>,
    pub i: Vec<f64>,
    pub j: Vec<(usize, Vec<f64>)>,
    pub q: Vec<f64>,
}

impl<'a> Problem<'a> {
    pub fn new(scenario: &'a Scenario, channel: &'a ChannelRealization) -> Result<Self> {
        if channel.users() != scenario.users() {
            return Err(Error::InvalidScenario(format!(
                "channel has {} users, scenario {}",
                channel.users(),
                scenario.users()
            )));
        }
        if channel.gains.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
            return Err(Error::InvalidScenario(
                "channel gains must be positive".into(),
            ));
        }
        let eff = scenario.effective_requirements()?;
        let users = scenario.users();
        let geometry = &scenario.geometry;
        let radio = &scenario.radio;

        let mut stream_class = vec![usize::MAX];
        let mut stream_users = vec![(0..users).collect::<Vec<_>>()];
        let mut targets = vec![eff.synth];
        let mut rate_floor = vec![scenario.synth_curve.invert(eff.synth)?.rate];
        let mut bandwidth = vec![radio.map_bandwidth];
        let mut pixels = vec![geometry.total_pixels() as f64];
        for (&class, &target) in &eff.recon {
            stream_class.push(class);
            stream_users.push(scenario.intent.users_of(class).collect());
            targets.push(target);
            rate_floor.push(scenario.recon_curve.invert(target)?.rate);
            bandwidth.push(radio.class_bandwidths[class]);
            pixels.push(geometry.avg_class_pixels());
        }
        Ok(Self {
            scenario,
            gains: &channel.gains,
            stream_class,
            stream_users,
            targets,
            rate_floor,
            bandwidth,
            pixels,
            gen_latency: (0..users).map(|k| scenario.generation_latency(k)).collect(),
        })
    }

    pub fn scenario(&self) -> &Scenario {
        self.scenario
    }

    pub fn users(&self) -> usize {
        self.gen_latency.len()
    }

    /// Number of streams including the map.
    pub fn streams(&self) -> usize {
        self.stream_class.len()
    }

    pub fn dim(&self) -> usize {
        2 * self.streams() + self.users()
    }

    pub fn power_index(&self, stream: usize) -> usize {
        stream
    }

    pub fn rate_index(&self, stream: usize) -> usize {
        self.streams() + stream
    }

    pub fn latency_index(&self, user: usize) -> usize {
        2 * self.streams() + user
    }

    /// Class carried by stream `s ≥ 1`.
    pub fn stream_class(&self, stream: usize) -> usize {
        self.stream_class[stream]
    }

    pub fn stream_users(&self, stream: usize) -> &[usize] {
        &self.stream_users[stream]
    }

    pub fn rate_floor(&self, stream: usize) -> f64 {
        self.rate_floor[stream]
    }

    pub fn target(&self, stream: usize) -> f64 {
        self.targets[stream]
    }

    pub fn generation_latency(&self, user: usize) -> f64 {
        self.gen_latency[user]
    }

    pub fn power_budget(&self) -> f64 {
        self.scenario.radio.power_budget
    }

    pub(crate) fn curve(&self, stream: usize) -> &dyn QualityCurve {
        if stream == 0 {
            self.scenario.synth_curve.as_ref()
        } else {
            self.scenario.recon_curve.as_ref()
        }
    }

    /// Shannon rate of stream `s` at user `k`.
    pub fn rate(&self, user: usize, stream: usize, power: f64) -> f64 {
        shannon_rate(
            power,
            self.gains[user],
            self.bandwidth[stream],
            self.scenario.radio.noise_density,
        )
    }

    /// Communication latency of stream `s` at user `k`, without generation time.
    pub fn stream_latency(&self, user: usize, stream: usize, power: f64, rate_bpp: f64) -> f64 {
        let bits = rate_bpp * self.pixels[stream];
        if bits == 0.0 {
            return 0.0;
        }
        bits / self.rate(user, stream, power)
    }

    /// `(∂T/∂p, ∂T/∂r)` of [`Self::stream_latency`].
    pub(crate) fn stream_latency_grad(
        &self,
        user: usize,
        stream: usize,
        power: f64,
        rate_bpp: f64,
    ) -> (f64, f64) {
        let rate = self.rate(user, stream, power);
        let slope = shannon_rate_slope(
            power,
            self.gains[user],
            self.bandwidth[stream],
            self.scenario.radio.noise_density,
        );
        let per_bpp = self.pixels[stream] / rate;
        (-rate_bpp * per_bpp * slope / rate, per_bpp)
    }

    /// Total latency of user `k`: the slower of the synthesized part
    /// (generation plus map) and the wanted reconstructed classes.
    pub fn user_latency(&self, user: usize, powers: &[f64], rates: &[f64]) -> f64 {
        let mut t = self.gen_latency[user] + self.stream_latency(user, 0, powers[0], rates[0]);
        for s in 1..self.streams() {
            if self.stream_users[s].contains(&user) {
                t = t.max(self.stream_latency(user, s, powers[s], rates[s]));
            }
        }
        t
    }

    pub(crate) fn wants(&self, user: usize, stream: usize) -> bool {
        self.scenario.intent.get(user, self.stream_class[stream])
    }

    pub fn class_pairs(&self) -> impl Iterator<Item = ClassPair> + '_ {
        (0..self.users()).flat_map(move |k| {
            (1..self.streams()).map(move |s| ClassPair {
                user: k,
                class: self.stream_class[s],
                stream: s,
                wanted: self.wants(k, s),
            })
        })
    }

    pub fn constraint_functions(&self, x: &[f64]) -> ConstraintValues {
        let n_s = self.streams();
        let (p, rest) = x.split_at(n_s);
        let (r, z) = rest.split_at(n_s);
        let g = (0..self.users())
            .map(|k| z[k] - self.gen_latency[k] - self.stream_latency(k, 0, p[0], r[0]))
            .collect();
        let h = self
            .class_pairs()
            .map(|pair| {
                let t = if pair.wanted {
                    self.stream_latency(pair.user, pair.stream, p[pair.stream], r[pair.stream])
                } else {
                    0.0
                };
                (pair, z[pair.user] - t)
            })
            .collect();
        let j = (1..n_s)
            .map(|s| {
                (
                    self.stream_class[s],
                    self.targets[s] - self.curve(s).value(r[s]),
                )
            })
            .collect();
        ConstraintValues {
            f: z.iter().sum(),
            g,
            h,
            i: self.power_budget() - p.iter().sum::<f64>(),
            j,
            q: self.targets[0] - self.curve(0).value(r[0]),
        }
    }

    /// Analytic gradients. Fails if an active stream sits below [`POWER_FLOOR`].
    pub fn constraint_gradients(&self, x: &[f64]) -> Result<ConstraintGradients> {
        let n = self.dim();
        let n_s = self.streams();
        for s in 0..n_s {
            if !(x[s] >= POWER_FLOOR) {
                return Err(Error::DegenerateStream {
                    stream: s,
                    power: x[s],
                });
            }
        }
        let (p, r) = (&x[..n_s], &x[n_s..2 * n_s]);

        let mut f = vec![0.0; n];
        for k in 0..self.users() {
            f[self.latency_index(k)] = 1.0;
        }
        let g = (0..self.users())
            .map(|k| {
                let mut row = vec![0.0; n];
                let (dp, dr) = self.stream_latency_grad(k, 0, p[0], r[0]);
                row[self.power_index(0)] = -dp;
                row[self.rate_index(0)] = -dr;
                row[self.latency_index(k)] = 1.0;
                row
            })
            .collect();
        let h = self
            .class_pairs()
            .map(|pair| {
                let mut row = vec![0.0; n];
                if pair.wanted {
                    let s = pair.stream;
                    let (dp, dr) = self.stream_latency_grad(pair.user, s, p[s], r[s]);
                    row[self.power_index(s)] = -dp;
                    row[self.rate_index(s)] = -dr;
                }
                row[self.latency_index(pair.user)] = 1.0;
                (pair, row)
            })
            .collect();
        let mut i = vec![0.0; n];
        i[..n_s].iter_mut().for_each(|v| *v = -1.0);
        let j = (1..n_s)
            .map(|s| {
                let mut row = vec![0.0; n];
                row[self.rate_index(s)] = -self.curve(s).slope(r[s]);
                (self.stream_class[s], row)
            })
            .collect();
        let mut q = vec![0.0; n];
        q[self.rate_index(0)] = -self.curve(0).slope(r[0]);
        Ok(ConstraintGradients { f, g, h, i, j, q })
    }
}

/// Constraint values of the epigraph problem at `x` (layout in module docs).
pub fn constraint_functions(
    x: &[f64],
    scenario: &Scenario,
    channel: &ChannelRealization,
) -> Result<ConstraintValues> {
    let problem = Problem::new(scenario, channel)?;
    check_dim(&problem, x)?;
    Ok(problem.constraint_functions(x))
}

/// Analytic gradients of the epigraph problem at `x`.
pub fn constraint_gradients(
    x: &[f64],
    scenario: &Scenario,
    channel: &ChannelRealization,
) -> Result<ConstraintGradients> {
    let problem = Problem::new(scenario, channel)?;
    check_dim(&problem, x)?;
    problem.constraint_gradients(x)
}

fn check_dim(problem: &Problem<'_>, x: &[f64]) -> Result<()> {
    if x.len() != problem.dim() {
        return Err(Error::InvalidScenario(format!(
            "decision vector has {} entries, expected {}",
            x.len(),
            problem.dim()
        )));
    }
    Ok(())
}
