use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("metric form not positive: worst eigenvalue {worst:.3e} at grid point {index}")]
    NotPositive { worst: f64, index: usize },

    #[error("grid mismatch: expected {expected} points, got {found}")]
    GridMismatch { expected: usize, found: usize },

    #[error("bidegree mismatch: expected ({0},{1}), got ({2},{3})")]
    Bidegree(usize, usize, usize, usize),

    #[error("flux {flux} exceeds the resolution guard {limit}")]
    Nyquist { flux: i64, limit: i64 },

    #[error("holomorphic structure not integrable: residual {residual:.3e}")]
    Integrability { residual: f64 },

    #[error("incompatible bundles: {0}")]
    Incompatible(String),

    #[error("endomorphism not positive definite (min eigenvalue {min:.3e}, max {max:.3e}) at grid point {index}")]
    NonPositiveEndo { min: f64, max: f64, index: usize },

    #[error("trace normalization obstructed: integral mismatch {mismatch:.6e} (lambda = {lambda:.6e}, 2*pi*deg/Vol = {expected:.6e})")]
    Obstruction { mismatch: f64, lambda: f64, expected: f64 },

    #[error("Gauduchon residual {residual:.3e} exceeds {limit:.1e}")]
    NotGauduchon { residual: f64, limit: f64 },

    #[error("{what} did not converge after {iterations} iterations (last residual {last:.3e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },

    #[error("flow step unstable: energy kept increasing down to dt = {dt:.3e}")]
    StepInstability { dt: f64 },

    #[error("fiber quadrature under-resolved: volume defect {defect:.3e} at resolution {resolution}")]
    FiberResolution { defect: f64, resolution: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
