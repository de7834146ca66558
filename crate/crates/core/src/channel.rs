//! Rayleigh block fading and Shannon-rate stream latencies.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::RadioParams;

/// Per-user channel power gains for one fading block.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub gains: Vec<f64>,
    /// Unit-mean small-scale power draws behind `gains`, when fading was drawn.
    pub scattering: Option<Vec<f64>>,
}

impl ChannelRealization {
    /// `gain_k = ε_o · d_k^(−φ) · scattering_k`.
    pub fn from_scattering(radio: &RadioParams, scattering: Vec<f64>) -> Self {
        let gains = scattering
            .iter()
            .enumerate()
            .map(|(k, &s)| radio.path_gain(k) * s)
            .collect();
        Self {
            gains,
            scattering: Some(scattering),
        }
    }

    /// Gains equal to their mean ε_o·d^(−φ).
    pub fn mean(radio: &RadioParams) -> Self {
        Self {
            gains: (0..radio.distances.len())
                .map(|k| radio.path_gain(k))
                .collect(),
            scattering: None,
        }
    }

    pub fn users(&self) -> usize {
        self.gains.len()
    }

    /// Writes `trial,user,gain` rows (no header).
    pub fn write_csv(&self, trial: u64, out: &mut impl Write) -> std::io::Result<()> {
        for (k, g) in self.gains.iter().enumerate() {
            writeln!(out, "{trial},{k},{g:e}")?;
        }
        Ok(())
    }
}

/// Which channel gains the planner sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelState {
    /// Instantaneous gains of one Rayleigh fading block.
    #[default]
    Rayleigh,
    /// Average gains E|h_k|² = ε_o·d_k^(−φ) (statistical channel knowledge).
    Mean,
}

/// Draws one block of Rayleigh fading for the users in `radio`.
///
/// User `k` draws from its own ChaCha stream, so its gain does not depend on
/// how many other users the scenario has.
pub fn draw_channel(radio: &RadioParams, seed: u64) -> ChannelRealization {
    let scattering = (0..radio.distances.len())
        .map(|k| scattering_draw(seed, k as u64))
        .collect();
    ChannelRealization::from_scattering(radio, scattering)
}

/// Realization according to `state`; `seed` is ignored for [`ChannelState::Mean`].
pub fn realize(radio: &RadioParams, state: ChannelState, seed: u64) -> ChannelRealization {
    match state {
        ChannelState::Rayleigh => draw_channel(radio, seed),
        ChannelState::Mean => ChannelRealization::mean(radio),
    }
}

/// |h̃|² of a unit-variance circularly-symmetric complex Gaussian, i.e. Exp(1).
fn scattering_draw(seed: u64, user: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(user);
    let x: f64 = rng.sample(Exp1);
    // Exp1 can return exactly 0 with negligible probability; gains must be positive
    x.max(f64::MIN_POSITIVE)
}

/// Received SNR `p·gain / (B·N_0)`.
pub fn snr(power: f64, gain: f64, bandwidth: f64, noise_density: f64) -> f64 {
    power * gain / (bandwidth * noise_density)
}

/// Shannon rate `B·log2(1 + snr)` in bits/s.
pub fn shannon_rate(power: f64, gain: f64, bandwidth: f64, noise_density: f64) -> f64 {
    bandwidth * snr(power, gain, bandwidth, noise_density).ln_1p() / std::f64::consts::LN_2
}

/// `∂R/∂p = B·gain / ((B·N_0 + p·gain)·ln 2)`.
pub fn shannon_rate_slope(power: f64, gain: f64, bandwidth: f64, noise_density: f64) -> f64 {
    bandwidth * gain / ((bandwidth * noise_density + power * gain) * std::f64::consts::LN_2)
}

/// Time to deliver `bits` at `rate`.
pub fn stream_latency(bits: f64, rate: f64) -> Result<f64> {
    if !(rate > 0.0) {
        return Err(Error::NonPositiveRate(rate));
    }
    Ok(bits / rate)
}
