use thiserror::Error;

/// Errors raised by the numerical and I/O routines of this crate.
#[derive(Debug, Error)]
pub enum NiotError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("negative value {value} at cell {index} in a field that must be nonnegative")]
    NegativeValue { index: usize, value: f64 },
    #[error("forcing is unbalanced: net mass {net:e} against source mass {source_mass:e}")]
    UnbalancedForcing { net: f64, source_mass: f64 },
    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("Newton did not converge in porous-media substep {step} (residual {residual:e})")]
    NewtonNoConvergence { step: usize, residual: f64 },
    #[error("adjoint linear solve failed in porous-media substep {step}: {source}")]
    AdjointSolve {
        step: usize,
        #[source]
        source: Box<NiotError>,
    },
    #[error("mirror step is inadmissible: {negative} cells would become negative")]
    StepInadmissible { negative: usize },
    #[error("graph contains a cycle")]
    CyclicGraph,
    #[error("forcing does not sum to zero on connected component containing node {node} (sum {sum:e})")]
    UnbalancedComponent { node: usize, sum: f64 },
    #[error("unknown {kind} '{name}' (known: {known})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        known: String,
    },
    #[error("malformed file: {0}")]
    Format(String),
    #[error("png decoding failed: {0}")]
    PngDecode(#[from] png::DecodingError),
    #[error("png encoding failed: {0}")]
    PngEncode(#[from] png::EncodingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NiotError>;
