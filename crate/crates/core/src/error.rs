use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite {what} at {point:?}")]
    NonFinite { what: &'static str, point: Vec<f64> },
    #[error("field has no analytic Jacobian")]
    NoAnalyticJacobian,
    #[error("finite-difference step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("invalid parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("point {point:?} lies outside the domain ball of radius {radius}")]
    OutsideDomain { point: Vec<f64>, radius: f64 },
    #[error("quadrature rule needs at least one node")]
    EmptyRule,
    #[error("loop is not closed: |gamma(0) - gamma(1)| = {gap}")]
    OpenCurve { gap: f64 },
    #[error("adaptive quadrature did not settle below {rel_tol} within {max_nodes} nodes")]
    NotConverged { rel_tol: f64, max_nodes: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegrabilityError {
    #[error("closedness test needs at least one sample point")]
    EmptySamples,
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GradientizeError {
    #[error("matrix is singular (|det| = {det:e})")]
    Singular { det: f64 },
    #[error("matrix must be square and finite")]
    BadMatrix,
    #[error("transformed form is not closed (asymmetry {asymmetry:e} > {tol:e}); refusing to build a potential")]
    NotClosed { asymmetry: f64, tol: f64 },
    #[error("barrier violation: D(y) is singular at collocation sample {sample}")]
    Barrier { sample: usize },
    #[error("could not invert the change of variables at {point:?}")]
    InverseMap { point: Vec<f64> },
    #[error("no collocation samples supplied")]
    EmptySamples,
    #[error("parameter vector has length {got}, family expects {expected}")]
    ParameterLength { expected: usize, got: usize },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Form(#[from] FormError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("time step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("step count must be at least 1")]
    NoSteps,
    #[error("noise strength must be nonnegative, got {0}")]
    InvalidNoise(f64),
    #[error("no samples remain after burn-in")]
    EmptyAfterBurnIn,
    #[error("density grid has no occupied cells")]
    EmptyGrid,
    #[error("grid specification does not match state dimension {dim}")]
    GridMismatch { dim: usize },
    #[error("invalid grid axis [{lo}, {hi}] with {bins} bins")]
    BadAxis { lo: f64, hi: f64, bins: usize },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("csv export failed: {0}")]
    Export(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ZooError {
    #[error("unknown system `{0}`")]
    UnknownSystem(String),
    #[error("system `{system}` has no parameter `{param}`")]
    UnknownParameter { system: String, param: String },
    #[error("parameter {name} must be positive, got {value}")]
    NonPositive { name: String, value: f64 },
    #[error("invalid parameter {name} = {value}")]
    Invalid { name: String, value: f64 },
    #[error("external reference data required: {0}")]
    ExternalDataRequired(String),
}
