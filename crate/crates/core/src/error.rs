use crate::model::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("stage {stage} out of range 1..={max}")]
    StageOutOfRange { stage: usize, max: usize },

    #[error("stage {stage} is unreachable (zero survival probability)")]
    UnreachableStage { stage: usize },

    #[error("invalid network spec: {}", format_violations(.0))]
    InvalidSpec(Vec<Violation>),

    #[error("route {route} has no closed-form moments; discretize its session law first")]
    NeedsDiscreteLaw { route: usize },

    #[error("stage identity check failed on route {route}, stage {stage}: {lhs} != {rhs}")]
    IdentityViolated { route: usize, stage: usize, lhs: f64, rhs: f64 },

    #[error("partition index {0} appears in more than one set")]
    OverlappingPartition(usize),

    #[error("index {index} out of range for dimension {dimension}")]
    IndexOutOfRange { index: usize, dimension: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("simulation exceeded the event cap of {cap} events")]
    EventCapExceeded { cap: u64 },

    #[error("no {n}-cell subset satisfies the pairwise distance limit of {max_distance} m")]
    NoFeasibleSubset { n: usize, max_distance: f64 },

    #[error("unknown {kind} `{value}`")]
    Unknown { kind: &'static str, value: String },

    #[error("access point `{0}` has zero observed time")]
    ZeroObservedTime(String),

    #[error("access point `{0}` has no stage entries")]
    NoEntries(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}
