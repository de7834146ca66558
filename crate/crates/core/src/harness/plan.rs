//! Monte Carlo sweeps over users, power budgets, requirements and
//! generation latencies.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::intents::{assign_intents, IntentPolicy};
use crate::benchmarks::{benchmark_metrics, Scheme};
use crate::channel::{realize, ChannelRealization, ChannelState};
use crate::config::{ChannelSection, CurvesSection, GeometrySection, RadioSection, ScenarioConfig};
use crate::error::{Error, Result};
use crate::metrics::{metrics_from_solution, RunMetrics};
use crate::optimizer::{sqp_solve, SolveOptions};
use crate::rdp::RdpCurve;
use crate::scenario::{ComputeSpec, Requirements, Scenario};

/// Largest tolerated share of failed trials.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DistanceModel {
    /// Independent `U[min_m, max_m]` draw per user and trial.
    Uniform { min_m: f64, max_m: f64 },
    /// User `k` always sits at `distances_m[k]`.
    Fixed { distances_m: Vec<f64> },
}

impl Default for DistanceModel {
    fn default() -> Self {
        DistanceModel::Uniform {
            min_m: 150.0,
            max_m: 550.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub trials: usize,
    pub seed: u64,
    /// User counts K.
    pub users: Vec<usize>,
    /// Power budgets P_T (mW); overrides `radio.power_budget_mw`.
    pub power_budgets_mw: Vec<f64>,
    /// `[recon, synth]` requirement pairs applied to every user and class.
    pub requirements: Vec<(f64, f64)>,
    /// Generation latencies T^g (ms), the same for every user.
    pub generation_latencies_ms: Vec<f64>,
    pub schemes: Vec<Scheme>,
    pub fading: ChannelState,
    pub intents: IntentPolicy,
    pub distances: DistanceModel,
    pub geometry: GeometrySection,
    pub radio: RadioSection,
    pub curves: CurvesSection,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            trials: 6000,
            seed: 0,
            users: vec![10],
            power_budgets_mw: vec![100.0],
            requirements: vec![(0.0285, 0.58705)],
            generation_latencies_ms: vec![2.0],
            schemes: Scheme::ALL.to_vec(),
            fading: ChannelState::Rayleigh,
            intents: IntentPolicy::DistinctSingle,
            distances: DistanceModel::default(),
            geometry: GeometrySection::default(),
            radio: RadioSection::default(),
            curves: CurvesSection::default(),
        }
    }
}

/// One combination of the sweep axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub index: usize,
    pub users: usize,
    pub power_budget_mw: f64,
    pub recon_requirement: f64,
    pub synth_requirement: f64,
    pub generation_latency_ms: f64,
}

impl ExperimentPlan {
    pub fn from_toml(text: &str) -> Result<Self> {
        let plan: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Compression rate and bit budget of the proposed scheme for
    /// K ∈ {1, 2, 3, 5, 10, 15}; both are independent of the channel.
    pub fn table3() -> Self {
        Self {
            trials: 1,
            users: vec![1, 2, 3, 5, 10, 15],
            schemes: vec![Scheme::Proposed],
            fading: ChannelState::Mean,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |why: &str| Err(Error::Config(why.into()));
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if self.schemes.is_empty() {
            return bad("at least one scheme is required");
        }
        if self.users.contains(&0) {
            return bad("user counts must be positive");
        }
        if self
            .power_budgets_mw
            .iter()
            .any(|p| !(*p > 0.0 && p.is_finite()))
        {
            return bad("power budgets must be positive");
        }
        if self
            .generation_latencies_ms
            .iter()
            .any(|t| !(*t >= 0.0 && t.is_finite()))
        {
            return bad("generation latencies must be non-negative");
        }
        match &self.distances {
            DistanceModel::Uniform { min_m, max_m }
                if !(*min_m > 0.0 && min_m < max_m && max_m.is_finite()) =>
            {
                bad("uniform distances need 0 < min_m < max_m")
            }
            DistanceModel::Fixed { distances_m }
                if self.users.iter().any(|&k| k > distances_m.len()) =>
            {
                bad("fixed distances must cover the largest user count")
            }
            _ => Ok(()),
        }
    }

    /// Cartesian product of the axes; users vary slowest, generation
    /// latency fastest.
    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out = Vec::new();
        for &users in &self.users {
            for &power_budget_mw in &self.power_budgets_mw {
                for &(recon_requirement, synth_requirement) in &self.requirements {
                    for &generation_latency_ms in &self.generation_latencies_ms {
                        out.push(SweepPoint {
                            index: out.len(),
                            users,
                            power_budget_mw,
                            recon_requirement,
                            synth_requirement,
                            generation_latency_ms,
                        });
                    }
                }
            }
        }
        out
    }

    /// Scenario and channel of `trial` at `point`, with the fading seed.
    ///
    /// Draws depend on the master seed and the trial index only, so every
    /// sweep point sees the same users and fading (common random numbers).
    pub fn trial_instance(
        &self,
        point: &SweepPoint,
        trial: usize,
    ) -> Result<(Scenario, ChannelRealization, u64)> {
        let base = sub_seed(self.seed, trial as u64);
        let k = point.users;
        let distances = match &self.distances {
            DistanceModel::Uniform { min_m, max_m } => {
                let seed = sub_seed(base, DISTANCE_STREAM);
                (0..k)
                    .map(|user| uniform_draw(seed, user as u64, *min_m, *max_m))
                    .collect()
            }
            DistanceModel::Fixed { distances_m } => distances_m[..k].to_vec(),
        };
        let geometry = self.geometry.build()?;
        let classes = geometry.num_classes();
        let intent = assign_intents(k, classes, &self.intents, sub_seed(base, INTENT_STREAM))?;
        let radio = RadioSection {
            power_budget_mw: point.power_budget_mw,
            ..self.radio.clone()
        }
        .build(classes, distances)?;
        let curve = |c: &RdpCurve| RdpCurve::new(c.a, c.b, c.c);
        let scenario = Scenario::new(
            geometry,
            intent,
            Requirements::uniform(k, classes, point.recon_requirement, point.synth_requirement)?,
            radio,
            ComputeSpec::uniform(k, point.generation_latency_ms * 1e-3),
            Arc::new(curve(&self.curves.recon)?),
            Arc::new(curve(&self.curves.synth)?),
        )?;
        let fading_seed = sub_seed(base, FADING_STREAM);
        let channel = realize(&scenario.radio, self.fading, fading_seed);
        Ok((scenario, channel, fading_seed))
    }

    fn run_trial(
        &self,
        point: &SweepPoint,
        trial: usize,
    ) -> std::result::Result<Vec<RunMetrics>, TrialFailure> {
        let (scenario, channel, fading_seed) =
            self.trial_instance(point, trial)
                .map_err(|e| TrialFailure {
                    point: point.index,
                    trial,
                    error: e.to_string(),
                    scenario: None,
                })?;
        let evaluate = |scheme: Scheme| -> Result<RunMetrics> {
            match scheme {
                Scheme::Proposed => {
                    let report = sqp_solve(&scenario, &channel, &SolveOptions::default())?;
                    if !report.converged {
                        return Err(Error::NotConverged {
                            iterations: report.iterations,
                        });
                    }
                    metrics_from_solution(&report, &scenario, &channel)
                }
                other => benchmark_metrics(other, &scenario, &channel),
            }
        };
        self.schemes
            .iter()
            .map(|&s| evaluate(s))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| {
                let dump = ScenarioConfig::from_scenario(
                    &scenario,
                    self.curves.clone(),
                    ChannelSection {
                        fading: self.fading,
                        seed: fading_seed,
                    },
                );
                TrialFailure {
                    point: point.index,
                    trial,
                    error: e.to_string(),
                    scenario: dump.to_toml().ok(),
                }
            })
    }
}

const DISTANCE_STREAM: u64 = 1;
const INTENT_STREAM: u64 = 2;
const FADING_STREAM: u64 = 3;

/// SplitMix64 finalizer over the pair.
fn sub_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// User `user` draws from its own stream, so adding users leaves the
/// others in place.
fn uniform_draw(seed: u64, user: u64, min: f64, max: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(user);
    rng.random_range(min..max)
}

/// A trial excluded from the aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialFailure {
    pub point: usize,
    pub trial: usize,
    pub error: String,
    /// Scenario in config form, replayable with `solve`.
    pub scenario: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: RunMetrics,
    pub std_error: RunMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointResult {
    pub point: SweepPoint,
    /// Trials that entered the aggregate.
    pub trials: usize,
    pub failed: usize,
    pub schemes: Vec<(Scheme, Summary)>,
}

impl PointResult {
    pub fn summary(&self, scheme: Scheme) -> Option<&Summary> {
        self.schemes
            .iter()
            .find(|(s, _)| *s == scheme)
            .map(|(_, m)| m)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AggregateResult {
    pub points: Vec<PointResult>,
    pub failures: Vec<TrialFailure>,
}

impl AggregateResult {
    pub fn point(&self, users: usize, power_budget_mw: f64) -> impl Iterator<Item = &PointResult> {
        self.points
            .iter()
            .filter(move |p| p.point.users == users && p.point.power_budget_mw == power_budget_mw)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses every core.
    pub threads: Option<usize>,
    /// Directory receiving one TOML file per failed trial.
    pub dump_dir: Option<PathBuf>,
}

/// Runs every trial of every sweep point.
///
/// Trials run in parallel; aggregation follows trial order, so results do
/// not depend on the thread count.
pub fn run_experiment(plan: &ExperimentPlan, options: &RunOptions) -> Result<AggregateResult> {
    plan.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut result = AggregateResult::default();
    for point in plan.points() {
        let outcomes: Vec<_> = pool.install(|| {
            (0..plan.trials)
                .into_par_iter()
                .map(|t| plan.run_trial(&point, t))
                .collect()
        });
        let mut per_scheme: Vec<Vec<RunMetrics>> =
            vec![Vec::with_capacity(plan.trials); plan.schemes.len()];
        let mut failed = 0;
        for outcome in outcomes {
            match outcome {
                Ok(metrics) => per_scheme
                    .iter_mut()
                    .zip(metrics)
                    .for_each(|(v, m)| v.push(m)),
                Err(failure) => {
                    log::warn!(
                        "point {} trial {} failed: {}",
                        failure.point,
                        failure.trial,
                        failure.error
                    );
                    failed += 1;
                    result.failures.push(failure);
                }
            }
        }
        let schemes = plan
            .schemes
            .iter()
            .zip(&per_scheme)
            .filter_map(|(&s, v)| Some((s, summarize(v)?)))
            .collect();
        result.points.push(PointResult {
            point,
            trials: plan.trials - failed,
            failed,
            schemes,
        });
    }
    if let Some(dir) = &options.dump_dir {
        write_failure_dumps(&result.failures, dir)?;
    }
    let total = plan.trials * result.points.len();
    if result.failures.len() as f64 > MAX_FAILURE_FRACTION * total as f64 {
        return Err(Error::TooManyFailures {
            failed: result.failures.len(),
            total,
        });
    }
    Ok(result)
}

fn write_failure_dumps(failures: &[TrialFailure], dir: &Path) -> Result<()> {
    if failures.is_empty() {
        return Ok(());
    }
    std::fs::create_dir_all(dir)?;
    for f in failures {
        let mut file =
            std::fs::File::create(dir.join(format!("failure_p{}_t{}.toml", f.point, f.trial)))?;
        writeln!(
            file,
            "# point {} trial {}: {}",
            f.point,
            f.trial,
            f.error.replace('\n', " ")
        )?;
        if let Some(text) = &f.scenario {
            file.write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

fn summarize(values: &[RunMetrics]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let columns: Vec<[f64; 5]> = values.iter().map(field_values).collect();
    let mut mean = [0.0; 5];
    let mut se = [0.0; 5];
    for i in 0..5 {
        mean[i] = columns.iter().map(|c| c[i]).sum::<f64>() / n;
        if values.len() > 1 {
            let ss: f64 = columns.iter().map(|c| (c[i] - mean[i]).powi(2)).sum();
            se[i] = (ss / (n - 1.0) / n).sqrt();
        }
    }
    Some(Summary {
        mean: from_fields(mean),
        std_error: from_fields(se),
    })
}

fn field_values(m: &RunMetrics) -> [f64; 5] {
    [
        m.per_user_latency,
        m.spectral_efficiency,
        m.power_ratio,
        m.compression_rate,
        m.total_bits,
    ]
}

fn from_fields(v: [f64; 5]) -> RunMetrics {
    RunMetrics {
        per_user_latency: v[0],
        spectral_efficiency: v[1],
        power_ratio: v[2],
        compression_rate: v[3],
        total_bits: v[4],
    }
}

pub const CSV_HEADER: [&str; 9] = [
    "point",
    "users",
    "power_budget_mw",
    "recon_requirement",
    "synth_requirement",
    "generation_latency_ms",
    "scheme",
    "trials",
    "failed",
];

/// One row per sweep point and scheme; each metric has a `_mean` and a
/// `_se` column, latency in ms.
pub fn write_csv(result: &AggregateResult, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = CSV_HEADER.iter().map(|s| s.to_string()).collect();
    for f in RunMetrics::FIELDS {
        header.push(format!("{f}_mean"));
        header.push(format!("{f}_se"));
    }
    w.write_record(&header).map_err(csv_error)?;
    for p in &result.points {
        for (scheme, summary) in &p.schemes {
            let pt = &p.point;
            let mut row = vec![
                pt.index.to_string(),
                pt.users.to_string(),
                pt.power_budget_mw.to_string(),
                pt.recon_requirement.to_string(),
                pt.synth_requirement.to_string(),
                pt.generation_latency_ms.to_string(),
                scheme.to_string(),
                p.trials.to_string(),
                p.failed.to_string(),
            ];
            for (m, s) in summary.mean.values().iter().zip(summary.std_error.values()) {
                row.push(m.to_string());
                row.push(s.to_string());
            }
            w.write_record(&row).map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(result: &AggregateResult, path: impl AsRef<Path>) -> Result<()> {
    write_csv(
        result,
        std::io::BufWriter::new(std::fs::File::create(path)?),
    )
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("csv: {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_plan() -> ExperimentPlan {
        ExperimentPlan {
            trials: 4,
            users: vec![2, 3],
            power_budgets_mw: vec![50.0, 100.0],
            ..Default::default()
        }
    }

    #[test]
    fn points_cover_the_product() {
        let plan = ExperimentPlan {
            requirements: vec![(0.03, 0.6), (0.05, 0.6)],
            ..small_plan()
        };
        let pts = plan.points();
        assert_eq!(pts.len(), 8);
        assert_eq!(
            (
                pts[1].users,
                pts[1].power_budget_mw,
                pts[1].recon_requirement
            ),
            (2, 50.0, 0.05)
        );
        assert!(pts.iter().enumerate().all(|(i, p)| p.index == i));
    }

    #[test]
    fn users_are_shared_across_points() {
        let plan = small_plan();
        let pts = plan.points();
        let (a, ..) = plan.trial_instance(&pts[0], 3).unwrap();
        let (b, ..) = plan.trial_instance(&pts[3], 3).unwrap();
        assert_eq!(a.radio.distances[..], b.radio.distances[..2]);
        assert!(a.radio.distances.iter().all(|d| (150.0..550.0).contains(d)));
        let (c, ..) = plan.trial_instance(&pts[0], 2).unwrap();
        assert_ne!(a.radio.distances, c.radio.distances);
    }

    #[test]
    fn summary_statistics() {
        let m = |t| RunMetrics {
            per_user_latency: t,
            spectral_efficiency: 1.0,
            power_ratio: 0.5,
            compression_rate: 1.0,
            total_bits: 2.0,
        };
        let s = summarize(&[m(1.0), m(2.0), m(3.0)]).unwrap();
        assert_eq!(s.mean.per_user_latency, 2.0);
        assert!((s.std_error.per_user_latency - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(s.std_error.power_ratio, 0.0);
        assert!(summarize(&[]).is_none());
    }

    #[test]
    fn empty_sweep_writes_the_header_only() {
        let mut out = Vec::new();
        write_csv(&AggregateResult::default(), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("point,users,power_budget_mw,"));
        assert!(text.trim_end().ends_with("total_bits_se"));
    }

    #[test]
    fn plan_validation() {
        assert!(ExperimentPlan {
            trials: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        let fixed = DistanceModel::Fixed {
            distances_m: vec![200.0],
        };
        assert!(ExperimentPlan {
            distances: fixed,
            ..small_plan()
        }
        .validate()
        .is_err());
        assert!(ExperimentPlan::from_toml("trials = 3\nbogus = 1\n").is_err());
        let plan = ExperimentPlan::from_toml(
            "trials = 3\nusers = [5]\nrequirements = [[0.03, 0.6]]\nschemes = [\"proposed\", \"ngm\"]\n\
             fading = \"mean\"\n[distances]\nkind = \"fixed\"\ndistances_m = [200, 250, 300, 350, 400]\n",
        )
        .unwrap();
        assert_eq!(plan.requirements, vec![(0.03, 0.6)]);
        assert_eq!(
            ExperimentPlan::from_toml(&plan.to_toml().unwrap()).unwrap(),
            plan
        );
    }
}
