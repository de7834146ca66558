//! Scenario description: geometry of the source signal, user intents,
//! quality requirements, radio parameters and on-device compute.
//!
//! All quantities are SI (W, Hz, s, bits). Unit conversion happens in
//! [`crate::config`].

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rdp::{QualityCurve, RdpCurve};

/// Pixel counts of the source signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalGeometry {
    total_pixels: u64,
    class_pixel_fraction: f64,
    num_classes: usize,
}

impl SignalGeometry {
    pub const DEFAULT_TOTAL_PIXELS: u64 = 131_072;
    pub const DEFAULT_CLASS_PIXEL_FRACTION: f64 = 0.1;
    pub const DEFAULT_NUM_CLASSES: usize = 35;

    pub fn new(total_pixels: u64, class_pixel_fraction: f64, num_classes: usize) -> Result<Self> {
        if total_pixels == 0 {
            return Err(Error::InvalidScenario(
                "total_pixels must be positive".into(),
            ));
        }
        if !(class_pixel_fraction > 0.0 && class_pixel_fraction <= 1.0) {
            return Err(Error::InvalidScenario(format!(
                "class_pixel_fraction must lie in (0, 1], got {class_pixel_fraction}"
            )));
        }
        if num_classes == 0 {
            return Err(Error::InvalidScenario("need at least one class".into()));
        }
        Ok(Self {
            total_pixels,
            class_pixel_fraction,
            num_classes,
        })
    }

    pub fn total_pixels(&self) -> u64 {
        self.total_pixels
    }

    pub fn class_pixel_fraction(&self) -> f64 {
        self.class_pixel_fraction
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Average number of pixels per class.
    pub fn avg_class_pixels(&self) -> f64 {
        self.class_pixel_fraction * self.total_pixels as f64
    }

    pub fn with_num_classes(self, num_classes: usize) -> Result<Self> {
        Self::new(self.total_pixels, self.class_pixel_fraction, num_classes)
    }
}

impl Default for SignalGeometry {
    fn default() -> Self {
        Self {
            total_pixels: Self::DEFAULT_TOTAL_PIXELS,
            class_pixel_fraction: Self::DEFAULT_CLASS_PIXEL_FRACTION,
            num_classes: Self::DEFAULT_NUM_CLASSES,
        }
    }
}

/// K×L binary matrix; entry (k, l) set when user k wants class l reconstructed.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct IntentMatrix {
    users: usize,
    classes: usize,
    entries: Vec<bool>,
}

impl IntentMatrix {
    pub fn zeros(users: usize, classes: usize) -> Self {
        Self {
            users,
            classes,
            entries: vec![false; users * classes],
        }
    }

    /// Builds the matrix from 0/1 rows. Any other value is rejected.
    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self> {
        let users = rows.len();
        let classes = rows.first().map_or(0, |r| r.as_ref().len());
        let mut m = Self::zeros(users, classes);
        for (k, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != classes {
                return Err(Error::InvalidScenario(format!(
                    "intent row {k} has {} entries, expected {classes}",
                    row.len()
                )));
            }
            for (l, &v) in row.iter().enumerate() {
                match v {
                    0 => {}
                    1 => m.set(k, l, true),
                    other => {
                        return Err(Error::InvalidScenario(format!(
                            "intent entry ({k}, {l}) is {other}, expected 0 or 1"
                        )))
                    }
                }
            }
        }
        Ok(m)
    }

    /// Builds a `users × classes` matrix from per-user class lists.
    pub fn from_class_lists(users: usize, classes: usize, lists: &[Vec<usize>]) -> Result<Self> {
        if lists.len() != users {
            return Err(Error::InvalidScenario(format!(
                "{} intent lists for {users} users",
                lists.len()
            )));
        }
        let mut m = Self::zeros(users, classes);
        for (k, list) in lists.iter().enumerate() {
            for &l in list {
                if l >= classes {
                    return Err(Error::InvalidScenario(format!(
                        "user {k} wants class {l}, but only {classes} classes exist"
                    )));
                }
                m.set(k, l, true);
            }
        }
        Ok(m)
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, user: usize, class: usize) -> bool {
        self.entries[user * self.classes + class]
    }

    pub fn set(&mut self, user: usize, class: usize, wanted: bool) {
        self.entries[user * self.classes + class] = wanted;
    }

    /// Classes wanted by at least one user, ascending.
    pub fn active_classes(&self) -> Vec<usize> {
        (0..self.classes).filter(|&l| self.is_active(l)).collect()
    }

    pub fn is_active(&self, class: usize) -> bool {
        (0..self.users).any(|k| self.get(k, class))
    }

    pub fn classes_of(&self, user: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.classes).filter(move |&l| self.get(user, l))
    }

    pub fn users_of(&self, class: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.users).filter(move |&k| self.get(k, class))
    }

    pub fn rows(&self) -> Vec<Vec<u8>> {
        (0..self.users)
            .map(|k| {
                (0..self.classes)
                    .map(|l| u8::from(self.get(k, l)))
                    .collect()
            })
            .collect()
    }
}

impl fmt::Debug for IntentMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lists: Vec<Vec<usize>> = (0..self.users)
            .map(|k| self.classes_of(k).collect())
            .collect();
        f.debug_struct("IntentMatrix")
            .field("users", &self.users)
            .field("classes", &self.classes)
            .field("wanted", &lists)
            .finish()
    }
}

/// Degree statistics of the user/class intent graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntentStats {
    pub active_class_count: usize,
    pub per_user_class_counts: Vec<usize>,
}

pub fn intent_graph_stats(intent: &IntentMatrix) -> IntentStats {
    IntentStats {
        active_class_count: intent.active_classes().len(),
        per_user_class_counts: (0..intent.users())
            .map(|k| intent.classes_of(k).count())
            .collect(),
    }
}

/// Per-user quality requirements. Smaller metric values mean better quality.
///
/// `recon` is K×L; entries for pairs the user does not want may be
/// `f64::INFINITY` (no requirement).
#[derive(Debug, Clone, PartialEq)]
pub struct Requirements {
    classes: usize,
    recon: Vec<f64>,
    synth: Vec<f64>,
}

impl Requirements {
    pub fn new(recon: Vec<Vec<f64>>, synth: Vec<f64>) -> Result<Self> {
        let classes = recon.first().map_or(0, Vec::len);
        if recon.len() != synth.len() {
            return Err(Error::InvalidScenario(format!(
                "{} reconstruction rows for {} users",
                recon.len(),
                synth.len()
            )));
        }
        if recon.iter().any(|row| row.len() != classes) {
            return Err(Error::InvalidScenario(
                "ragged reconstruction requirements".into(),
            ));
        }
        let recon: Vec<f64> = recon.into_iter().flatten().collect();
        if recon.iter().any(|&e| e.is_nan() || e <= 0.0) {
            return Err(Error::InvalidScenario(
                "reconstruction requirements must be positive".into(),
            ));
        }
        if synth.iter().any(|&e| !e.is_finite() || e <= 0.0) {
            return Err(Error::InvalidScenario(
                "synthesis requirements must be finite and positive".into(),
            ));
        }
        Ok(Self {
            classes,
            recon,
            synth,
        })
    }

    /// Same pair of requirements for every user and class.
    pub fn uniform(users: usize, classes: usize, recon: f64, synth: f64) -> Result<Self> {
        Self::new(vec![vec![recon; classes]; users], vec![synth; users])
    }

    pub fn users(&self) -> usize {
        self.synth.len()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn recon(&self, user: usize, class: usize) -> f64 {
        self.recon[user * self.classes + class]
    }

    pub fn set_recon(&mut self, user: usize, class: usize, value: f64) {
        self.recon[user * self.classes + class] = value;
    }

    pub fn synth(&self, user: usize) -> f64 {
        self.synth[user]
    }

    pub fn set_synth(&mut self, user: usize, value: f64) {
        self.synth[user] = value;
    }
}

/// Tightest requirement per active class, and over all users for the map.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveRequirements {
    pub synth: f64,
    pub recon: BTreeMap<usize, f64>,
}

pub fn effective_requirements(
    intent: &IntentMatrix,
    req: &Requirements,
) -> Result<EffectiveRequirements> {
    if intent.users() == 0 {
        return Err(Error::InvalidScenario("no users".into()));
    }
    if req.users() != intent.users() || req.classes() != intent.classes() {
        return Err(Error::InvalidScenario(format!(
            "requirements are {}x{}, intent matrix is {}x{}",
            req.users(),
            req.classes(),
            intent.users(),
            intent.classes()
        )));
    }
    let synth = (0..req.users())
        .map(|k| req.synth(k))
        .fold(f64::INFINITY, f64::min);
    let mut recon = BTreeMap::new();
    for l in intent.active_classes() {
        let e = intent
            .users_of(l)
            .map(|k| req.recon(k, l))
            .fold(f64::INFINITY, f64::min);
        if !e.is_finite() {
            return Err(Error::MissingRequirement { class: l });
        }
        recon.insert(l, e);
    }
    Ok(EffectiveRequirements { synth, recon })
}

/// Radio parameters in SI units.
#[derive(Debug, Clone, PartialEq)]
pub struct RadioParams {
    /// Multicast bandwidth B_0 (Hz).
    pub map_bandwidth: f64,
    /// Per-class bandwidths B_1..B_L (Hz).
    pub class_bandwidths: Vec<f64>,
    /// Noise power spectral density N_0 (W/Hz).
    pub noise_density: f64,
    /// Transmit power budget P_T (W).
    pub power_budget: f64,
    /// Linear path gain at the 1 m reference distance.
    pub pathloss_ref: f64,
    pub pathloss_exp: f64,
    /// User distances (m).
    pub distances: Vec<f64>,
}

impl RadioParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidScenario(format!(
                    "{name} must be positive, got {v}"
                )))
            }
        };
        positive("map bandwidth", self.map_bandwidth)?;
        for &b in &self.class_bandwidths {
            positive("class bandwidth", b)?;
        }
        positive("noise density", self.noise_density)?;
        positive("power budget", self.power_budget)?;
        positive("reference path gain", self.pathloss_ref)?;
        positive("path loss exponent", self.pathloss_exp)?;
        for &d in &self.distances {
            positive("distance", d)?;
        }
        Ok(())
    }

    /// Bandwidth of stream `l` in the 0 = map, 1..=L = class numbering.
    pub fn bandwidth(&self, stream: usize) -> f64 {
        if stream == 0 {
            self.map_bandwidth
        } else {
            self.class_bandwidths[stream - 1]
        }
    }

    /// Mean path gain ε_o·d^(−φ) of user `k`.
    pub fn path_gain(&self, user: usize) -> f64 {
        self.pathloss_ref * self.distances[user].powf(-self.pathloss_exp)
    }
}

/// On-device generation latency.
#[derive(Debug, Clone, PartialEq)]
pub enum ComputeSpec {
    /// Latency per user (s).
    Direct(Vec<f64>),
    /// Latency derived as model FLOPs over per-user processor FLOP/s.
    Flops {
        model_flops: f64,
        processor_flops_per_sec: Vec<f64>,
    },
}

impl ComputeSpec {
    pub fn uniform(users: usize, latency: f64) -> Self {
        ComputeSpec::Direct(vec![latency; users])
    }

    pub fn users(&self) -> usize {
        match self {
            ComputeSpec::Direct(v) => v.len(),
            ComputeSpec::Flops {
                processor_flops_per_sec,
                ..
            } => processor_flops_per_sec.len(),
        }
    }

    pub fn generation_latency(&self, user: usize) -> f64 {
        match self {
            ComputeSpec::Direct(v) => v[user],
            ComputeSpec::Flops {
                model_flops,
                processor_flops_per_sec,
            } => model_flops / processor_flops_per_sec[user],
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            ComputeSpec::Direct(v) => {
                if v.iter().any(|&t| !(t >= 0.0 && t.is_finite())) {
                    return Err(Error::InvalidScenario(
                        "generation latency must be non-negative".into(),
                    ));
                }
            }
            ComputeSpec::Flops {
                model_flops,
                processor_flops_per_sec,
            } => {
                if !(*model_flops >= 0.0) || processor_flops_per_sec.iter().any(|&p| !(p > 0.0)) {
                    return Err(Error::InvalidScenario(
                        "FLOP counts must be non-negative, rates positive".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Everything needed to plan one multicast transmission.
#[derive(Clone)]
pub struct Scenario {
    pub geometry: SignalGeometry,
    pub intent: IntentMatrix,
    pub requirements: Requirements,
    pub radio: RadioParams,
    pub compute: ComputeSpec,
    pub recon_curve: Arc<dyn QualityCurve>,
    pub synth_curve: Arc<dyn QualityCurve>,
}

impl fmt::Debug for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Scenario")
            .field("geometry", &self.geometry)
            .field("intent", &self.intent)
            .field("requirements", &self.requirements)
            .field("radio", &self.radio)
            .field("compute", &self.compute)
            .field("recon_curve", &self.recon_curve)
            .field("synth_curve", &self.synth_curve)
            .finish()
    }
}

impl Scenario {
    /// Checks dimensional consistency and parameter ranges.
    pub fn new(
        geometry: SignalGeometry,
        intent: IntentMatrix,
        requirements: Requirements,
        radio: RadioParams,
        compute: ComputeSpec,
        recon_curve: Arc<dyn QualityCurve>,
        synth_curve: Arc<dyn QualityCurve>,
    ) -> Result<Self> {
        let users = intent.users();
        let classes = geometry.num_classes();
        if intent.classes() != classes {
            return Err(Error::InvalidScenario(format!(
                "intent matrix has {} classes, geometry declares {classes}",
                intent.classes()
            )));
        }
        if requirements.users() != users || requirements.classes() != classes {
            return Err(Error::InvalidScenario(
                "requirements do not match the intent matrix".into(),
            ));
        }
        if radio.distances.len() != users {
            return Err(Error::InvalidScenario(format!(
                "{} distances for {users} users",
                radio.distances.len()
            )));
        }
        if radio.class_bandwidths.len() != classes {
            return Err(Error::InvalidScenario(format!(
                "{} class bandwidths for {classes} classes",
                radio.class_bandwidths.len()
            )));
        }
        if compute.users() != users {
            return Err(Error::InvalidScenario(
                "compute spec does not match the user count".into(),
            ));
        }
        radio.validate()?;
        compute.validate()?;
        Ok(Self {
            geometry,
            intent,
            requirements,
            radio,
            compute,
            recon_curve,
            synth_curve,
        })
    }

    pub fn users(&self) -> usize {
        self.intent.users()
    }

    pub fn classes(&self) -> usize {
        self.intent.classes()
    }

    pub fn effective_requirements(&self) -> Result<EffectiveRequirements> {
        effective_requirements(&self.intent, &self.requirements)
    }

    pub fn generation_latency(&self, user: usize) -> f64 {
        self.compute.generation_latency(user)
    }

    /// Default radio and curves: 1 MHz everywhere, −174 dBm/Hz, −30 dB at 1 m,
    /// exponent 3.4, the nominal fitted curves and 2 ms generation latency.
    pub fn standard(
        intent: IntentMatrix,
        distances: Vec<f64>,
        power_budget: f64,
        recon_req: f64,
        synth_req: f64,
    ) -> Result<Self> {
        let users = intent.users();
        let classes = intent.classes();
        let geometry = SignalGeometry::default().with_num_classes(classes)?;
        Self::new(
            geometry,
            intent,
            Requirements::uniform(users, classes, recon_req, synth_req)?,
            RadioParams {
                map_bandwidth: 1e6,
                class_bandwidths: vec![1e6; classes],
                noise_density: crate::config::dbm_to_watts(-174.0),
                power_budget,
                pathloss_ref: crate::config::db_to_linear(-30.0),
                pathloss_exp: 3.4,
                distances,
            },
            ComputeSpec::uniform(users, 2e-3),
            Arc::new(RdpCurve::RECON_MS_SSIM),
            Arc::new(RdpCurve::SYNTH_LPIPS),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn effective_requirements_take_the_minimum() {
        let intent = IntentMatrix::from_rows(&[[1u8], [1]]).unwrap();
        let req = Requirements::new(vec![vec![0.03], vec![0.05]], vec![0.60, 0.59]).unwrap();
        let eff = effective_requirements(&intent, &req).unwrap();
        assert_eq!(eff.recon[&0], 0.03);
        assert_eq!(eff.synth, 0.59);
    }

    #[test]
    fn inactive_classes_are_absent() {
        let intent = IntentMatrix::from_rows(&[[1u8, 0], [1, 0]]).unwrap();
        let req = Requirements::uniform(2, 2, 0.03, 0.6).unwrap();
        let eff = effective_requirements(&intent, &req).unwrap();
        assert_eq!(eff.recon.keys().copied().collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn uniform_table_two_requirements() {
        let lists: Vec<Vec<usize>> = (0..10).map(|k| vec![k]).collect();
        let intent = IntentMatrix::from_class_lists(10, 35, &lists).unwrap();
        let req = Requirements::uniform(10, 35, 0.02850, 0.58705).unwrap();
        let eff = effective_requirements(&intent, &req).unwrap();
        assert_eq!(eff.recon.len(), 10);
        assert!(eff.recon.values().all(|&e| e == 0.02850));
        assert_eq!(eff.synth, 0.58705);
    }

    #[test]
    fn missing_requirement_on_active_class() {
        let intent = IntentMatrix::from_rows(&[[1u8, 0]]).unwrap();
        let req = Requirements::new(vec![vec![f64::INFINITY, 0.1]], vec![0.6]).unwrap();
        assert!(matches!(
            effective_requirements(&intent, &req),
            Err(Error::MissingRequirement { class: 0 })
        ));
    }

    #[test]
    fn intent_rejects_non_binary_entries() {
        assert!(IntentMatrix::from_rows(&[[1u8, 2]]).is_err());
    }

    #[test]
    fn overlap_stats() {
        // 10 users x 2 disjoint classes
        let disjoint: Vec<Vec<usize>> = (0..10).map(|k| vec![2 * k, 2 * k + 1]).collect();
        let m = IntentMatrix::from_class_lists(10, 35, &disjoint).unwrap();
        assert_eq!(intent_graph_stats(&m).active_class_count, 20);
        // ring overlap onto 10 classes
        let ring: Vec<Vec<usize>> = (0..10).map(|k| vec![k, (k + 1) % 10]).collect();
        let m = IntentMatrix::from_class_lists(10, 35, &ring).unwrap();
        let stats = intent_graph_stats(&m);
        assert_eq!(stats.active_class_count, 10);
        assert!(stats.per_user_class_counts.iter().all(|&c| c == 2));
        assert_eq!(
            intent_graph_stats(&IntentMatrix::zeros(3, 4)).active_class_count,
            0
        );
    }

    #[test]
    fn partition_geometry() {
        let g = SignalGeometry::new(131_072, 0.1, 10).unwrap();
        assert_eq!(g.avg_class_pixels() * 10.0, 131_072.0);
        assert!(SignalGeometry::new(0, 0.1, 10).is_err());
        assert!(SignalGeometry::new(10, 0.0, 10).is_err());
        assert!(SignalGeometry::new(10, 1.5, 10).is_err());
    }

    #[test]
    fn derived_generation_latency() {
        let c = ComputeSpec::Flops {
            model_flops: 2.87e12,
            processor_flops_per_sec: vec![312e12],
        };
        assert_eq!(c.generation_latency(0), 2.87e12 / 312e12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn intent_strategy() -> impl Strategy<Value = IntentMatrix> {
            (1usize..6, 1usize..6).prop_flat_map(|(k, l)| {
                proptest::collection::vec(proptest::collection::vec(0u8..2, l), k)
                    .prop_map(|rows| IntentMatrix::from_rows(&rows).unwrap())
            })
        }

        proptest! {
            #[test]
            fn active_count_is_nonzero_columns(m in intent_strategy()) {
                let nonzero = (0..m.classes()).filter(|&l| (0..m.users()).any(|k| m.get(k, l))).count();
                prop_assert_eq!(intent_graph_stats(&m).active_class_count, nonzero);
            }

            #[test]
            fn user_permutation_leaves_stats_unchanged(m in intent_strategy(), shift in 0usize..6) {
                let rows = m.rows();
                let n = rows.len();
                let permuted: Vec<Vec<u8>> = (0..n).map(|k| rows[(k + shift) % n].clone()).collect();
                let p = IntentMatrix::from_rows(&permuted).unwrap();
                let (a, b) = (intent_graph_stats(&m), intent_graph_stats(&p));
                prop_assert_eq!(a.active_class_count, b.active_class_count);
                let mut ca = a.per_user_class_counts.clone();
                let mut cb = b.per_user_class_counts.clone();
                ca.sort_unstable();
                cb.sort_unstable();
                prop_assert_eq!(ca, cb);
            }

            #[test]
            fn tightening_never_loosens(
                m in intent_strategy(),
                base in 0.01f64..0.5,
                factor in 0.1f64..1.0,
                pick in 0usize..36,
            ) {
                let req = Requirements::uniform(m.users(), m.classes(), base, base + 0.5).unwrap();
                let before = effective_requirements(&m, &req).unwrap();
                let (k, l) = (pick % m.users(), pick % m.classes());
                let mut tighter = req.clone();
                tighter.set_recon(k, l, base * factor);
                tighter.set_synth(k, (base + 0.5) * factor);
                let after = effective_requirements(&m, &tighter).unwrap();
                prop_assert!(after.synth <= before.synth);
                for (class, e) in &after.recon {
                    prop_assert!(*e <= before.recon[class]);
                }
            }
        }
    }
}
