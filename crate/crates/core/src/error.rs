use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("requirement {target} is unreachable: the curve floor is {floor}")]
    InfeasibleRequirement { target: f64, floor: f64 },

    #[error(
        "class {class} is requested by some user but has no finite reconstruction requirement"
    )]
    MissingRequirement { class: usize },

    #[error("negative compression rate {0}")]
    NegativeRate(f64),

    #[error("stream rate must be positive, got {0}")]
    NonPositiveRate(f64),

    #[error("stream {stream} has power {power} W, below the solver floor")]
    DegenerateStream { stream: usize, power: f64 },

    #[error("curve fit needs at least 4 samples with distinct rates and positive metrics: {0}")]
    FitPrecondition(String),

    #[error("curve fit did not improve on the initial guess (rms {rms} vs {initial_rms})")]
    FitDiverged { rms: f64, initial_rms: f64 },

    #[error("quadratic subproblem is infeasible")]
    QpInfeasible,

    #[error("solver stopped after {iterations} iterations without converging")]
    NotConverged { iterations: usize },

    #[error("intent policy cannot be satisfied: {0}")]
    PolicyUnsatisfiable(String),

    #[error("malformed label map: {0}")]
    MalformedFile(String),

    #[error("label {label} at pixel {index} is outside [0, {num_classes})")]
    LabelOutOfRange {
        label: i64,
        index: usize,
        num_classes: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{failed} of {total} trials failed, above the 1% limit")]
    TooManyFailures { failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
