use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AqrError {
    #[error("value {value} outside the domain {domain}")]
    Domain { value: f64, domain: &'static str },
    #[error("the quantile-regression weight is a Dirac mass and has no density")]
    SingularDensity,
    #[error("alpha schedule is undefined at tau = {tau}")]
    ScheduleDomain { tau: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("quadrature did not converge (estimate {estimate}, error bound {error})")]
    QuadratureFail { estimate: f64, error: f64 },
    #[error("empty input")]
    EmptyInput,
    #[error("plotting-position weights sum to zero for n = {n}")]
    ZeroWeightMass { n: usize },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("kernel weights underflowed at evaluation point {at}")]
    KernelUnderflow { at: f64 },
    #[error("bandwidth grid is empty")]
    EmptyGrid,
    #[error("true value is zero; relative deviation undefined")]
    ZeroTruth,
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("first coefficient is zero; sign identification fails")]
    IdentificationFail,
    #[error("Hessian is singular or ill-conditioned after ridge repair")]
    IllConditioned,
    #[error("line search failed to decrease the objective")]
    LineSearchFail,
    #[error("shard plan does not match the data: {0}")]
    PlanMismatch(String),
    #[error("series has zero variance")]
    DegenerateSeries,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = std::result::Result<T, AqrError>;
