//! TOML scenario files.
//!
//! Files use engineering units (mW, MHz, ms, dB, dBm) and are converted to SI
//! when building a [`Scenario`]. Every section except `[[users]]` is optional.
//!
//! ```toml
//! [geometry]
//! total_pixels = 131072
//! class_pixel_fraction = 0.1
//! num_classes = 35
//!
//! [radio]
//! map_bandwidth_mhz = 1.0
//! class_bandwidth_mhz = 1.0        # or class_bandwidths_mhz = [...]
//! noise_density_dbm_hz = -174.0
//! power_budget_mw = 100.0
//! pathloss_ref_db = -30.0
//! pathloss_exp = 3.4
//!
//! [curves]
//! recon = { a = 0.199, b = 3.454, c = 0.008 }
//! synth = { a = 0.214, b = 5.14, c = 0.566 }
//!
//! [compute]
//! model_gflops = 2000.0            # needed by processor_tflops users
//!
//! [channel]
//! fading = "rayleigh"              # or "mean"
//! seed = 7
//!
//! [[users]]
//! distance_m = 210.0
//! intent = [3]
//! recon_requirement = 0.0285       # or recon_requirements, one per intent entry
//! synth_requirement = 0.58705
//! generation_latency_ms = 2.0      # or processor_tflops = 1.0
//! ```

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelState;
use crate::error::{Error, Result};
use crate::rdp::RdpCurve;
use crate::scenario::{
    ComputeSpec, IntentMatrix, RadioParams, Requirements, Scenario, SignalGeometry,
};

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    linear_to_db(watts) + 30.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySection {
    pub total_pixels: u64,
    pub class_pixel_fraction: f64,
    pub num_classes: usize,
}

impl Default for GeometrySection {
    fn default() -> Self {
        Self {
            total_pixels: SignalGeometry::DEFAULT_TOTAL_PIXELS,
            class_pixel_fraction: SignalGeometry::DEFAULT_CLASS_PIXEL_FRACTION,
            num_classes: SignalGeometry::DEFAULT_NUM_CLASSES,
        }
    }
}

impl GeometrySection {
    pub fn build(&self) -> Result<SignalGeometry> {
        SignalGeometry::new(
            self.total_pixels,
            self.class_pixel_fraction,
            self.num_classes,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioSection {
    pub map_bandwidth_mhz: f64,
    pub class_bandwidth_mhz: f64,
    /// Overrides `class_bandwidth_mhz` when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_bandwidths_mhz: Option<Vec<f64>>,
    pub noise_density_dbm_hz: f64,
    pub power_budget_mw: f64,
    pub pathloss_ref_db: f64,
    pub pathloss_exp: f64,
}

impl Default for RadioSection {
    fn default() -> Self {
        Self {
            map_bandwidth_mhz: 1.0,
            class_bandwidth_mhz: 1.0,
            class_bandwidths_mhz: None,
            noise_density_dbm_hz: -174.0,
            power_budget_mw: 100.0,
            pathloss_ref_db: -30.0,
            pathloss_exp: 3.4,
        }
    }
}

impl RadioSection {
    pub fn build(&self, classes: usize, distances: Vec<f64>) -> Result<RadioParams> {
        let class_bandwidths = match &self.class_bandwidths_mhz {
            Some(list) if list.len() != classes => {
                return Err(Error::Config(format!(
                    "{} class bandwidths for {classes} classes",
                    list.len()
                )))
            }
            Some(list) => list.iter().map(|b| b * 1e6).collect(),
            None => vec![self.class_bandwidth_mhz * 1e6; classes],
        };
        let radio = RadioParams {
            map_bandwidth: self.map_bandwidth_mhz * 1e6,
            class_bandwidths,
            noise_density: dbm_to_watts(self.noise_density_dbm_hz),
            power_budget: self.power_budget_mw * 1e-3,
            pathloss_ref: db_to_linear(self.pathloss_ref_db),
            pathloss_exp: self.pathloss_exp,
            distances,
        };
        radio.validate()?;
        Ok(radio)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurvesSection {
    pub recon: RdpCurve,
    pub synth: RdpCurve,
}

impl Default for CurvesSection {
    fn default() -> Self {
        Self {
            recon: RdpCurve::RECON_MS_SSIM,
            synth: RdpCurve::SYNTH_LPIPS,
        }
    }
}

impl CurvesSection {
    fn validated(&self) -> Result<(RdpCurve, RdpCurve)> {
        let check = |c: &RdpCurve| RdpCurve::new(c.a, c.b, c.c);
        Ok((check(&self.recon)?, check(&self.synth)?))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComputeSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_gflops: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub fading: ChannelState,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSection {
    pub distance_m: f64,
    #[serde(default)]
    pub intent: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recon_requirement: Option<f64>,
    /// One value per `intent` entry; overrides `recon_requirement`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recon_requirements: Option<Vec<f64>>,
    pub synth_requirement: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation_latency_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub processor_tflops: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub geometry: GeometrySection,
    #[serde(default)]
    pub radio: RadioSection,
    #[serde(default)]
    pub curves: CurvesSection,
    #[serde(default)]
    pub compute: ComputeSection,
    #[serde(default)]
    pub channel: ChannelSection,
    pub users: Vec<UserSection>,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn build(&self) -> Result<Scenario> {
        if self.users.is_empty() {
            return Err(Error::Config(
                "at least one [[users]] entry is required".into(),
            ));
        }
        let geometry = self.geometry.build()?;
        let classes = geometry.num_classes();
        let users = self.users.len();

        let lists: Vec<Vec<usize>> = self.users.iter().map(|u| u.intent.clone()).collect();
        let intent = IntentMatrix::from_class_lists(users, classes, &lists)?;

        let mut recon = vec![vec![f64::INFINITY; classes]; users];
        let mut synth = Vec::with_capacity(users);
        for (k, user) in self.users.iter().enumerate() {
            let values = match (&user.recon_requirements, user.recon_requirement) {
                (Some(list), _) if list.len() != user.intent.len() => {
                    return Err(Error::Config(format!(
                        "user {k}: {} reconstruction requirements for {} intended classes",
                        list.len(),
                        user.intent.len()
                    )))
                }
                (Some(list), _) => list.clone(),
                (None, Some(v)) => vec![v; user.intent.len()],
                (None, None) if user.intent.is_empty() => Vec::new(),
                (None, None) => {
                    return Err(Error::Config(format!(
                        "user {k} has intended classes but no recon_requirement"
                    )))
                }
            };
            for (&l, v) in user.intent.iter().zip(values) {
                recon[k][l] = v;
            }
            synth.push(user.synth_requirement);
        }
        let requirements = Requirements::new(recon, synth)?;

        let distances = self.users.iter().map(|u| u.distance_m).collect();
        let radio = self.radio.build(classes, distances)?;
        let compute = self.compute_spec()?;
        let (recon_curve, synth_curve) = self.curves.validated()?;
        Scenario::new(
            geometry,
            intent,
            requirements,
            radio,
            compute,
            Arc::new(recon_curve),
            Arc::new(synth_curve),
        )
    }

    fn compute_spec(&self) -> Result<ComputeSpec> {
        let direct: Option<Vec<f64>> = self
            .users
            .iter()
            .map(|u| u.generation_latency_ms.map(|t| t * 1e-3))
            .collect();
        if let Some(latencies) = direct {
            return Ok(ComputeSpec::Direct(latencies));
        }
        let flops: Option<Vec<f64>> = self
            .users
            .iter()
            .map(|u| u.processor_tflops.map(|t| t * 1e12))
            .collect();
        match (flops, self.compute.model_gflops) {
            (Some(processor_flops_per_sec), Some(g)) => Ok(ComputeSpec::Flops {
                model_flops: g * 1e9,
                processor_flops_per_sec,
            }),
            (Some(_), None) => Err(Error::Config(
                "processor_tflops needs [compute] model_gflops".into(),
            )),
            (None, _)
                if self
                    .users
                    .iter()
                    .all(|u| u.generation_latency_ms.is_none() && u.processor_tflops.is_none()) =>
            {
                Ok(ComputeSpec::uniform(self.users.len(), 2e-3))
            }
            (None, _) => Err(Error::Config(
                "every user needs generation_latency_ms, or every user needs processor_tflops"
                    .into(),
            )),
        }
    }

    /// Describes `scenario` in file form. Curves are not recoverable from
    /// the trait objects, so the caller supplies them.
    pub fn from_scenario(
        scenario: &Scenario,
        curves: CurvesSection,
        channel: ChannelSection,
    ) -> Self {
        let geometry = &scenario.geometry;
        let radio = &scenario.radio;
        let users = (0..scenario.users())
            .map(|k| {
                let intent: Vec<usize> = scenario.intent.classes_of(k).collect();
                let recon: Vec<f64> = intent
                    .iter()
                    .map(|&l| scenario.requirements.recon(k, l))
                    .collect();
                UserSection {
                    distance_m: radio.distances[k],
                    intent,
                    recon_requirement: None,
                    recon_requirements: Some(recon),
                    synth_requirement: scenario.requirements.synth(k),
                    generation_latency_ms: Some(scenario.generation_latency(k) * 1e3),
                    processor_tflops: None,
                }
            })
            .collect();
        Self {
            geometry: GeometrySection {
                total_pixels: geometry.total_pixels(),
                class_pixel_fraction: geometry.class_pixel_fraction(),
                num_classes: geometry.num_classes(),
            },
            radio: RadioSection {
                map_bandwidth_mhz: radio.map_bandwidth * 1e-6,
                class_bandwidth_mhz: radio.class_bandwidths.first().map_or(1.0, |b| b * 1e-6),
                class_bandwidths_mhz: Some(
                    radio.class_bandwidths.iter().map(|b| b * 1e-6).collect(),
                ),
                noise_density_dbm_hz: watts_to_dbm(radio.noise_density),
                power_budget_mw: radio.power_budget * 1e3,
                pathloss_ref_db: linear_to_db(radio.pathloss_ref),
                pathloss_exp: radio.pathloss_exp,
            },
            curves,
            compute: ComputeSection::default(),
            channel,
            users,
        }
    }
}
