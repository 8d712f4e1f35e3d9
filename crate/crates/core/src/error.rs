use thiserror::Error;

pub type Result<T> = std::result::Result<T, DiffNetError>;

#[derive(Debug, Error)]
pub enum DiffNetError {
    #[error("malformed file: {0}")]
    MalformedFile(String),
    #[error("empty data: {0}")]
    EmptyData(String),
    #[error("non-finite value at row {row}, column '{column}'")]
    NonFinite { row: usize, column: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("basis Gram matrix is singular beyond ridge tolerance")]
    RankDeficientBasis,
    #[error("zero-variance design column {column} of node {node}")]
    ZeroVarianceColumn { node: usize, column: usize },
    #[error("singular design for node {node}")]
    SingularDesign { node: usize },
    #[error("insufficient samples: n = {n} but {params} parameters")]
    InsufficientSamples { n: usize, params: usize },
    #[error("lambda must be non-negative, got {0}")]
    NegativeLambda(f64),
    #[error("fold {fold} has {size} rows; at least 2 required")]
    FoldTooSmall { fold: usize, size: usize },
    #[error("ill-conditioned C for edge ({j},{k}): condition number {cond:e}")]
    IllConditionedC { j: usize, k: usize, cond: f64 },
    #[error("ill-conditioned D for node {j}: condition number {cond:e}")]
    IllConditionedD { j: usize, cond: f64 },
    #[error("nodewise inverse and fit disagree: {0}")]
    ScaleMismatch(String),
    #[error("observation violates model support at row {row}, node {node}")]
    SupportViolation { row: usize, node: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("singular score-matching Gram matrix for node {node}")]
    SingularGram { node: usize },
    #[error("combined covariance is singular")]
    SingularCovariance,
    #[error("variance sum must be positive")]
    DegenerateVariance,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degree sequence infeasible after {0} retries")]
    InfeasibleDegreeSequence(usize),
    #[error("node sets differ between groups: {0}")]
    NodeSetMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{module}: node {node}: {source}")]
    Node {
        module: &'static str,
        node: usize,
        #[source]
        source: Box<DiffNetError>,
    },
    #[error("{module}: edge ({j},{k}): {source}")]
    Edge {
        module: &'static str,
        j: usize,
        k: usize,
        #[source]
        source: Box<DiffNetError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl DiffNetError {
    pub fn at_node(self, module: &'static str, node: usize) -> Self {
        match self {
            e @ (DiffNetError::Node { .. } | DiffNetError::Edge { .. }) => e,
            e => DiffNetError::Node {
                module,
                node,
                source: Box::new(e),
            },
        }
    }

    pub fn at_edge(self, module: &'static str, j: usize, k: usize) -> Self {
        match self {
            e @ (DiffNetError::Node { .. } | DiffNetError::Edge { .. }) => e,
            e => DiffNetError::Edge {
                module,
                j,
                k,
                source: Box::new(e),
            },
        }
    }
}
