//! Summary metrics of one solved instance.

use serde::Serialize;

use crate::channel::{shannon_rate, ChannelRealization};
use crate::error::{Error, Result};
use crate::optimizer::SolveReport;
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunMetrics {
    /// Mean user latency T* (s).
    pub per_user_latency: f64,
    /// λ* (bits/s/Hz).
    pub spectral_efficiency: f64,
    /// γ*: share of the power budget spent on the semantic map.
    pub power_ratio: f64,
    /// r* (bpp).
    pub compression_rate: f64,
    /// |b| (bits), rounded to an integer.
    pub total_bits: f64,
}

impl RunMetrics {
    pub const FIELDS: [&'static str; 5] = [
        "latency_ms",
        "spectral_efficiency",
        "power_ratio",
        "compression_rate_bpp",
        "total_bits",
    ];

    /// Values in the order of [`Self::FIELDS`], latency in ms.
    pub fn values(&self) -> [f64; 5] {
        [
            self.per_user_latency * 1e3,
            self.spectral_efficiency,
            self.power_ratio,
            self.compression_rate,
            self.total_bits,
        ]
    }
}

/// `r* = r_0 + (|X̄|/|X|)·Σ_active r_l`; `rates` is indexed by stream.
pub fn compression_rate(scenario: &Scenario, rates: &[f64]) -> f64 {
    let fraction = scenario.geometry.class_pixel_fraction();
    rates[0]
        + fraction
            * scenario
                .intent
                .active_classes()
                .iter()
                .map(|&l| rates[l + 1])
                .sum::<f64>()
}

/// Occupied bandwidth: the map band plus the band of every active class.
pub fn occupied_bandwidth(scenario: &Scenario) -> f64 {
    let radio = &scenario.radio;
    radio.map_bandwidth
        + scenario
            .intent
            .active_classes()
            .iter()
            .map(|&l| radio.class_bandwidths[l])
            .sum::<f64>()
}

pub fn metrics_from_solution(
    report: &SolveReport,
    scenario: &Scenario,
    channel: &ChannelRealization,
) -> Result<RunMetrics> {
    let alloc = &report.allocation;
    let users = scenario.users();
    if alloc.latencies.len() != users || alloc.powers.len() != scenario.classes() + 1 {
        return Err(Error::InvalidScenario(
            "report does not match the scenario".into(),
        ));
    }
    let radio = &scenario.radio;
    let rate = |k: usize, stream: usize| {
        shannon_rate(
            alloc.powers[stream],
            channel.gains[k],
            radio.bandwidth(stream),
            radio.noise_density,
        )
    };
    let mut delivered = 0.0;
    for k in 0..users {
        delivered += rate(k, 0);
        for l in scenario.intent.classes_of(k) {
            delivered += rate(k, l + 1);
        }
    }
    let compression = compression_rate(scenario, &alloc.rates);
    Ok(RunMetrics {
        per_user_latency: report.objective / users as f64,
        spectral_efficiency: delivered / occupied_bandwidth(scenario),
        power_ratio: alloc.powers[0] / radio.power_budget,
        compression_rate: compression,
        total_bits: (compression * scenario.geometry.total_pixels() as f64).round(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::{Allocation, Multipliers};
    use crate::scenario::IntentMatrix;
    use approx::assert_relative_eq;

    const R_L: f64 = 0.6580428310886305;
    const R_0: f64 = 0.4511819951154593;

    fn distinct(k: usize, classes: usize) -> Scenario {
        let lists: Vec<Vec<usize>> = (0..k).map(|i| vec![i]).collect();
        let intent = IntentMatrix::from_class_lists(k, classes, &lists).unwrap();
        Scenario::standard(intent, vec![300.0; k], 0.1, 0.0285, 0.58705).unwrap()
    }

    fn rates_for(scenario: &Scenario) -> Vec<f64> {
        let mut rates = vec![0.0; scenario.classes() + 1];
        rates[0] = R_0;
        for l in scenario.intent.active_classes() {
            rates[l + 1] = R_L;
        }
        rates
    }

    #[test]
    fn compression_rate_grows_by_one_class_share_per_user() {
        let sc = distinct(10, 35);
        // 0.45118 + 10 · 0.1 · 0.65804
        let r = compression_rate(&sc, &rates_for(&sc));
        assert_relative_eq!(r, 1.10922482620409, max_relative = 1e-12);
        assert!(((r * 131072.0).round() - 145387.0).abs() <= 3.0);
    }

    #[test]
    fn adding_a_class_adds_its_share() {
        let sc = distinct(3, 35);
        let mut more = sc.clone();
        more.intent.set(0, 7, true);
        let mut rates = rates_for(&more);
        rates[8] = 0.3;
        let delta = compression_rate(&more, &rates) - compression_rate(&sc, &rates);
        assert_relative_eq!(delta, 0.1 * 0.3, max_relative = 1e-12);
    }

    #[test]
    fn bandwidth_ignores_inactive_classes() {
        let sc = distinct(3, 35);
        assert_eq!(occupied_bandwidth(&sc), 4e6);
    }

    #[test]
    fn hand_spectral_efficiency() {
        // one user, one class, both rates 1 Mbit/s over 1 MHz each
        let intent = IntentMatrix::from_rows(&[[1u8]]).unwrap();
        let mut sc = Scenario::standard(intent, vec![1.0], 1.0, 0.0285, 0.58705).unwrap();
        sc.radio.noise_density = 1e-6;
        sc.radio.pathloss_ref = 1.0;
        let ch = ChannelRealization {
            gains: vec![1.0],
            scattering: None,
        };
        // snr = p/(B·N0) = 1 gives 1 bit/s/Hz
        let report = SolveReport {
            allocation: Allocation {
                powers: vec![1.0, 1.0],
                rates: vec![R_0, R_L],
                latencies: vec![0.01],
            },
            objective: 0.01,
            iterations: 0,
            converged: true,
            max_violation: 0.0,
            kkt_residual: 0.0,
            rate_snap: 0.0,
            multipliers: Multipliers::default(),
        };
        let m = metrics_from_solution(&report, &sc, &ch).unwrap();
        assert_relative_eq!(m.spectral_efficiency, 1.0, max_relative = 1e-14);
        assert_eq!(m.power_ratio, 1.0);
        assert_relative_eq!(m.per_user_latency, 0.01);
        assert_eq!(m.total_bits, (m.compression_rate * 131072.0).round());
    }
}
