use thiserror::Error;

/// Everything that can go wrong inside the library.
///
/// Variants map one-to-one onto the failure modes of the public operations;
/// the CLI classifies all of them as domain errors (exit code 1).
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension below 3 unsupported (got {0})")]
    DimensionTooSmall(usize),

    #[error("grid too coarse: {0} cells, at least 8 required")]
    GridTooCoarse(usize),

    #[error("perturbation too large: |eps| = {0} must be below 1/2")]
    PerturbationTooLarge(f64),

    #[error("f must be positive (minimum sample {0})")]
    NonPositiveF(f64),

    #[error("conformal factor must be positive (minimum sample {0})")]
    NonPositiveConformalFactor(f64),

    #[error("grid mismatch: field has {found} samples on a {expected}-cell grid")]
    GridMismatch { expected: usize, found: usize },

    #[error("invalid metric: {0}")]
    InvalidMetric(String),

    #[error(
        "second variation requires normalized critical metric \
         (|int f dV - 1| = {f_volume_error:.3e}, |R - alpha f|_inf = {curvature_residual:.3e})"
    )]
    NotNormalized {
        f_volume_error: f64,
        curvature_residual: f64,
    },

    #[error("spectral failure: {0}")]
    SpectralFailure(String),

    #[error("positivity lost: reduce dt ({0})")]
    PositivityLost(String),

    #[error("implicit solve failed: {0}")]
    ImplicitSolveFailed(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown convention `{0}` (expected `geometric` or `paper`)")]
    UnknownConvention(String),

    #[error("AS_p violated: F_p(v_hat) = {0} must be positive")]
    AsViolated(f64),

    #[error("resonant exponent: gamma = {gamma} is within 1e-8 of (n-2) mu / 8 = {resonance}")]
    ResonantExponent { gamma: f64, resonance: f64 },

    #[error("forcing not integrable: {0}")]
    ForcingNotIntegrable(String),

    #[error("near-kernel mode: route through kernel_ode_solve (delta = {0})")]
    NearKernelMode(f64),

    #[error("insufficient samples: {found} (need at least {needed})")]
    InsufficientSamples { found: usize, needed: usize },

    #[error("no approximate kernel mode: nearest eigenvalue {eigenvalue} exceeds {limit}")]
    NoApproximateKernelMode { eigenvalue: f64, limit: f64 },

    #[error("series must be positive")]
    SeriesNotPositive,

    #[error("no decay detected (fitted slope {0})")]
    NoDecay(f64),

    #[error("energy not monotone: check flow run (increase {increase:.3e} at sample {index})")]
    EnergyNotMonotone { index: usize, increase: f64 },

    #[error("both fits failed: {exponential}; {polynomial}")]
    BothFitsFailed {
        exponential: String,
        polynomial: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
