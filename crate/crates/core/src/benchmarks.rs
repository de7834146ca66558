//! Intent-unaware baselines that multicast a single stream at full power.
//!
//! * NGM compresses the whole signal to the strictest reconstruction
//!   requirement; users decode it directly.
//! * FGM sends only the semantic map; every user synthesizes the full signal.

use serde::{Deserialize, Serialize};

use crate::channel::{shannon_rate, ChannelRealization};
use crate::error::{Error, Result};
use crate::metrics::RunMetrics;
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Proposed,
    Ngm,
    Fgm,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Proposed, Scheme::Ngm, Scheme::Fgm];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::Ngm => "ngm",
            Scheme::Fgm => "fgm",
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown scheme {s:?}, expected proposed, ngm or fgm"
                ))
            })
    }
}

/// Rate of the NGM stream: the strictest reconstruction requirement over
/// every user-class pair.
pub fn ngm_rate(scenario: &Scenario) -> Result<f64> {
    let req = &scenario.requirements;
    let strictest = (0..scenario.users())
        .flat_map(|k| (0..scenario.classes()).map(move |l| req.recon(k, l)))
        .filter(|v| v.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !strictest.is_finite() {
        return Err(Error::InvalidScenario(
            "no finite reconstruction requirement".into(),
        ));
    }
    Ok(scenario.recon_curve.invert(strictest)?.rate)
}

/// Rate of the FGM stream: the strictest synthesis requirement.
pub fn fgm_rate(scenario: &Scenario) -> Result<f64> {
    let strictest = (0..scenario.users())
        .map(|k| scenario.requirements.synth(k))
        .fold(f64::INFINITY, f64::min);
    Ok(scenario.synth_curve.invert(strictest)?.rate)
}

fn full_power_rate(scenario: &Scenario, channel: &ChannelRealization, user: usize) -> f64 {
    let radio = &scenario.radio;
    shannon_rate(
        radio.power_budget,
        channel.gains[user],
        radio.map_bandwidth,
        radio.noise_density,
    )
}

fn multicast_latencies(
    scenario: &Scenario,
    channel: &ChannelRealization,
    rate_bpp: f64,
    with_generation: bool,
) -> Vec<f64> {
    let bits = rate_bpp * scenario.geometry.total_pixels() as f64;
    (0..scenario.users())
        .map(|k| {
            let gen = if with_generation {
                scenario.generation_latency(k)
            } else {
                0.0
            };
            gen + bits / full_power_rate(scenario, channel, k)
        })
        .collect()
}

/// Per-user NGM latency `r_NGM·|X| / R_k0(P_T)`.
pub fn ngm_latency(scenario: &Scenario, channel: &ChannelRealization) -> Result<Vec<f64>> {
    Ok(multicast_latencies(
        scenario,
        channel,
        ngm_rate(scenario)?,
        false,
    ))
}

/// Per-user FGM latency `T_k^g + r_FGM·|X| / R_k0(P_T)`.
pub fn fgm_latency(scenario: &Scenario, channel: &ChannelRealization) -> Result<Vec<f64>> {
    Ok(multicast_latencies(
        scenario,
        channel,
        fgm_rate(scenario)?,
        true,
    ))
}

/// Metrics of a baseline.
///
/// The spectral efficiency is the mean per-user rate over `B_0`; the power
/// ratio is 1 since the single stream uses the whole budget.
pub fn benchmark_metrics(
    scheme: Scheme,
    scenario: &Scenario,
    channel: &ChannelRealization,
) -> Result<RunMetrics> {
    let (rate_bpp, latencies) = match scheme {
        Scheme::Ngm => {
            let r = ngm_rate(scenario)?;
            (r, multicast_latencies(scenario, channel, r, false))
        }
        Scheme::Fgm => {
            let r = fgm_rate(scenario)?;
            (r, multicast_latencies(scenario, channel, r, true))
        }
        Scheme::Proposed => {
            return Err(Error::Config(
                "the proposed scheme is not a baseline".into(),
            ))
        }
    };
    let users = scenario.users() as f64;
    let mean_rate = (0..scenario.users())
        .map(|k| full_power_rate(scenario, channel, k))
        .sum::<f64>()
        / users;
    Ok(RunMetrics {
        per_user_latency: latencies.iter().sum::<f64>() / users,
        spectral_efficiency: mean_rate / scenario.radio.map_bandwidth,
        power_ratio: 1.0,
        compression_rate: rate_bpp,
        total_bits: (rate_bpp * scenario.geometry.total_pixels() as f64).round(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{ComputeSpec, IntentMatrix};
    use approx::assert_relative_eq;

    fn scenario(gen: f64) -> Scenario {
        let intent = IntentMatrix::from_class_lists(2, 3, &[vec![0], vec![2]]).unwrap();
        let mut sc = Scenario::standard(intent, vec![150.0, 400.0], 0.1, 0.0285, 0.58705).unwrap();
        sc.compute = ComputeSpec::uniform(2, gen);
        sc
    }

    /// Gain at which the full budget yields exactly `rate` bits/s.
    fn gain_for_rate(sc: &Scenario, rate: f64) -> f64 {
        let r = &sc.radio;
        (2f64.powf(rate / r.map_bandwidth) - 1.0) * r.map_bandwidth * r.noise_density
            / r.power_budget
    }

    #[test]
    fn reference_benchmark_rates() {
        let sc = scenario(2e-3);
        assert!((ngm_rate(&sc).unwrap() - 0.65804).abs() < 1e-4);
        assert!((fgm_rate(&sc).unwrap() - 0.45118).abs() < 1e-4);
    }

    #[test]
    fn direct_formula_examples() {
        let sc = scenario(2e-3);
        let g = gain_for_rate(&sc, 1e7);
        let ch = ChannelRealization {
            gains: vec![g, g],
            scattering: None,
        };
        let ngm = ngm_latency(&sc, &ch).unwrap();
        let fgm = fgm_latency(&sc, &ch).unwrap();
        // 0.6580428·131072/1e7 and 2 ms + 0.4511820·131072/1e7
        assert_relative_eq!(ngm[0], 8.625099e-3, max_relative = 1e-6);
        assert_relative_eq!(fgm[0], 7.913733e-3, max_relative = 1e-6);
    }

    #[test]
    fn more_power_is_faster_and_fgm_beats_ngm_without_generation() {
        let sc = scenario(0.0);
        let ch = ChannelRealization::mean(&sc.radio);
        let mut rich = sc.clone();
        rich.radio.power_budget *= 2.0;
        let (a, b) = (
            ngm_latency(&sc, &ch).unwrap(),
            ngm_latency(&rich, &ch).unwrap(),
        );
        assert!(a.iter().zip(&b).all(|(x, y)| y < x));
        let fgm = fgm_latency(&sc, &ch).unwrap();
        assert!(fgm.iter().zip(&a).all(|(f, n)| f < n));
    }

    #[test]
    fn baseline_metrics() {
        let sc = scenario(2e-3);
        let ch = ChannelRealization::mean(&sc.radio);
        let m = benchmark_metrics(Scheme::Ngm, &sc, &ch).unwrap();
        assert_eq!(m.power_ratio, 1.0);
        assert_eq!(m.total_bits, (ngm_rate(&sc).unwrap() * 131072.0).round());
        let fgm = benchmark_metrics(Scheme::Fgm, &sc, &ch).unwrap();
        assert_eq!(fgm.spectral_efficiency, m.spectral_efficiency);
        assert!(benchmark_metrics(Scheme::Proposed, &sc, &ch).is_err());
        assert_eq!("ngm".parse::<Scheme>().unwrap(), Scheme::Ngm);
    }
}
