use std::path::PathBuf;

/// Errors produced by mesh handling, correspondence search, the deformation
/// solvers and the pipeline driver.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("triangle {triangle} references vertex {index} but mesh has {n_vertices} vertices")]
    IndexOutOfRange {
        triangle: usize,
        index: usize,
        n_vertices: usize,
    },

    #[error("triangle {0} repeats a vertex index")]
    DegenerateIndices(usize),

    #[error("triangle {0} has zero area")]
    ZeroAreaTriangle(usize),

    #[error("vertex count mismatch: expected {expected}, got {got}")]
    VertexCountMismatch { expected: usize, got: usize },

    #[error("empty point set")]
    EmptyPointSet,

    #[error("normal weight {0} > 0 requires normals")]
    MissingNormals(f64),

    #[error("correspondence set '{name}': {reason}")]
    InvalidSet { name: String, reason: String },

    #[error("fixed set '{name}': {template} template members vs {data} data members")]
    FixedLengthMismatch {
        name: String,
        template: usize,
        data: usize,
    },

    #[error("affine stack is rank deficient ({0})")]
    RankDeficient(String),

    #[error("Laplace operator is stale: built from different vertex positions")]
    StaleOperator,

    #[error("no correspondences available{}", stage.as_ref().map(|s| format!(" in stage '{s}'")).unwrap_or_default())]
    NoCorrespondences { stage: Option<String> },

    #[error("solver did not converge: relative residual {achieved:.3e} after {iterations} iterations (target {target:.1e})")]
    SolverDidNotConverge {
        achieved: f64,
        target: f64,
        iterations: usize,
    },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("schedule index {index} out of range (steps = {steps})")]
    ScheduleIndexOutOfRange { index: usize, steps: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("singular camera matrix")]
    SingularCamera,

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("unknown annotation label '{label}' (declared: {declared:?})")]
    UnknownLabel {
        label: String,
        declared: Vec<String>,
    },

    #[error("tally has {tally} vertices but template has {template}")]
    TallySizeMismatch { tally: usize, template: usize },

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("failed to parse {path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
